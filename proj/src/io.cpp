#include "neuropgm/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "neuropgm/error.hpp"

namespace neuropgm {

namespace {

static_assert(std::endian::native == std::endian::little, "F64MAT I/O assumes a little-endian host");

constexpr char kMagic[4] = {'P', 'G', 'M', 'F'};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <class T>
void put(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

template <class T>
T get(const std::string& buf, std::size_t& off, const std::string& path, const char* field) {
  if (off + sizeof(T) > buf.size()) {
    fail(ErrorCode::TruncatedFile, path + ": file ends at byte " + std::to_string(buf.size()) + " while reading " +
                                       field + " at byte offset " + std::to_string(off));
  }
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << text;
  if (!out) fail(ErrorCode::IoError, "write failed for " + path);
}

void write_f64mat(const std::string& path, const Matrix& M) {
  std::string buf(kMagic, 4);
  put<std::uint32_t>(buf, 1);
  put<std::uint32_t>(buf, 2);
  put<std::uint64_t>(buf, static_cast<std::uint64_t>(M.rows()));
  put<std::uint64_t>(buf, static_cast<std::uint64_t>(M.cols()));
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) put<double>(buf, M(i, j));
  write_text_file(path, buf);
}

Matrix read_f64mat(const std::string& path) {
  const std::string buf = read_text_file(path);
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
    fail(ErrorCode::BadMagic, path + ": expected magic \"PGMF\" at byte offset 0");
  std::size_t off = 4;
  const auto version = get<std::uint32_t>(buf, off, path, "version");
  if (version != 1) fail(ErrorCode::BadMagic, path + ": unsupported version " + std::to_string(version) + " at byte offset 4");
  const auto ndim = get<std::uint32_t>(buf, off, path, "ndim");
  if (ndim < 1 || ndim > 2) fail(ErrorCode::BadShape, path + ": ndim " + std::to_string(ndim) + " at byte offset 8 (expected 1 or 2)");
  std::uint64_t dims[2] = {1, 1};
  for (std::uint32_t d = 0; d < ndim; ++d) dims[d] = get<std::uint64_t>(buf, off, path, "dims");
  const std::uint64_t count = dims[0] * dims[1];
  const std::uint64_t expected = off + count * 8;
  if (buf.size() < expected) {
    fail(ErrorCode::TruncatedFile, path + ": payload starting at byte " + std::to_string(off) + " needs " +
                                       std::to_string(count * 8) + " bytes, file has " +
                                       std::to_string(buf.size() - off));
  }
  if (buf.size() > expected)
    fail(ErrorCode::BadShape, path + ": " + std::to_string(buf.size() - expected) + " trailing bytes after byte " +
                                  std::to_string(expected));
  Matrix M(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) M(i, j) = get<double>(buf, off, path, "payload");
  return M;
}

void write_csv(const std::string& path, const Matrix& M) {
  std::ostringstream ss;
  ss.precision(17);
  for (Eigen::Index j = 0; j < M.cols(); ++j) ss << (j ? "," : "") << "c" << j;
  ss << "\n";
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) ss << (j ? "," : "") << M(i, j);
    ss << "\n";
  }
  write_text_file(path, ss.str());
}

Matrix parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::BadShape, "csv: missing header row");
  std::vector<std::vector<double>> rows;
  std::size_t width = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    int col = 0;
    while (std::getline(ls, cell, ',')) {
      ++col;
      const std::string t = trim(cell);
      std::istringstream cs(t);
      cs.imbue(std::locale::classic());
      double v;
      if (t.empty() || !(cs >> v) || !cs.eof())
        fail(ErrorCode::NonNumericCell, "csv: non-numeric cell '" + t + "' at row " + std::to_string(lineno) +
                                            ", column " + std::to_string(col));
      row.push_back(v);
    }
    if (!line.empty() && line.back() == ',')
      fail(ErrorCode::NonNumericCell, "csv: empty cell at row " + std::to_string(lineno));
    if (width == 0) width = row.size();
    if (row.size() != width)
      fail(ErrorCode::BadShape, "csv: row " + std::to_string(lineno) + " has " + std::to_string(row.size()) +
                                    " cells, expected " + std::to_string(width));
    rows.push_back(std::move(row));
  }
  Matrix M(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j) M(i, j) = rows[i][j];
  return M;
}

Matrix read_csv(const std::string& path) { return parse_csv(read_text_file(path)); }

void write_matrix(const std::string& path, const Matrix& M) {
  if (ends_with(path, ".csv")) write_csv(path, M);
  else write_f64mat(path, M);
}

Matrix read_matrix(const std::string& path) {
  if (ends_with(path, ".csv")) return read_csv(path);
  return read_f64mat(path);
}

}  // namespace neuropgm
