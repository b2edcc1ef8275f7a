#pragma once

#include "jacreg/matrix.hpp"

#include <array>
#include <cstdint>
#include <optional>

namespace jacreg {

/// Counter-based random stream (Philox4x32-10) keyed by (seed, stream_id).
///
/// The 64-bit seed is the Philox key; the stream id occupies the upper half
/// of the 128-bit counter and the block index the lower half, so distinct
/// stream ids never overlap. Draw sequences depend only on integer arithmetic
/// plus `std::log`/`std::sqrt` (Gaussian path), hence are stable across runs.
///
/// Gaussian draws use the Marsaglia polar method on uniforms built from the
/// top 53 bits of each 64-bit word; the second variate of each accepted pair
/// is cached and returned by the next call.
///
/// A stream is a single-owner value: copy it to replay a sequence.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Stream with the same seed and another id; the child starts fresh.
  RngStream substream(std::uint64_t stream_id) const { return RngStream(seed_, stream_id); }

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in (-1, 1) with 53-bit resolution.
  double symmetric_uniform();
  /// Unbiased integer in [0, bound).
  std::uint64_t uniform_index(std::uint64_t bound);
  /// Standard normal N(0, 1).
  double gaussian();

  /// Raw Philox4x32-10 block function, exposed for known-answer tests.
  static std::array<std::uint32_t, 4> philox_block(std::array<std::uint32_t, 4> counter,
                                                   std::array<std::uint32_t, 2> key);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int buffered_ = 0;
  std::optional<double> spare_gaussian_;
};

/// i.i.d. N(0, sigma^2) components. Always consumes `dim` normal draws, so
/// streams stay aligned across sigma values (sigma = 0 yields zeros).
/// Throws ParameterError for sigma < 0 or dim == 0.
Vector gaussian_vector(RngStream& rng, std::size_t dim, double sigma);

/// i.i.d. zero-mean uniform components with variance sigma^2, i.e. on
/// [-sigma*sqrt(3), sigma*sqrt(3)].
Vector uniform_noise_vector(RngStream& rng, std::size_t dim, double sigma);

}  // namespace jacreg
