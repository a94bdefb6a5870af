#pragma once

#include <string>

#include "neuropgm/linalg.hpp"

namespace neuropgm {

/// F64MAT: "PGMF", u32 version (1), u32 ndim, ndim x u64 dims, row-major
/// little-endian f64 payload. A 1-D file reads as a column.
void write_f64mat(const std::string& path, const Matrix& M);
Matrix read_f64mat(const std::string& path);

/// Headered CSV: one header line, then rows of ',' separated numbers with '.'
/// as the decimal mark.
void write_csv(const std::string& path, const Matrix& M);
Matrix read_csv(const std::string& path);
Matrix parse_csv(const std::string& text);

/// Dispatches on the extension: ".csv" is CSV, anything else F64MAT.
void write_matrix(const std::string& path, const Matrix& M);
Matrix read_matrix(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace neuropgm
