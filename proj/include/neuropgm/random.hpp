#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "neuropgm/linalg.hpp"

namespace neuropgm {

/// Counter-based generator: Philox4x32-10 (Salmon et al., SC'11) keyed by the
/// 64-bit seed, with the 128-bit counter split into a 64-bit block index and a
/// 64-bit stream id. Outputs depend only on (seed, stream, position), so
/// sequences are identical on every platform with IEEE doubles.
///
/// Uniforms take the top 53 bits of each 64-bit word and are offset by half
/// an ulp, so they lie strictly inside (0, 1). Normals use Box-Muller on
/// consecutive uniform pairs.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream);
  /// Stream chosen by a purpose label (FNV-1a hash of the label).
  Rng(std::uint64_t seed, std::string_view purpose);

  std::uint64_t next_u64();
  double uniform();
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);
  Vector normal_vector(Eigen::Index n);

  static std::uint64_t stream_id(std::string_view purpose);

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int available_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

}  // namespace neuropgm
