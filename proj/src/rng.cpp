#include "jacreg/rng.hpp"

#include "jacreg/error.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace jacreg {
namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline double top53_to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace

std::array<std::uint32_t, 4> RngStream::philox_block(std::array<std::uint32_t, 4> ctr,
                                                     std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

std::uint64_t RngStream::next_u64() {
  if (buffered_ == 0) {
    const std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
        static_cast<std::uint32_t>(stream_id_), static_cast<std::uint32_t>(stream_id_ >> 32)};
    const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                              static_cast<std::uint32_t>(seed_ >> 32)};
    const auto out = philox_block(ctr, key);
    ++block_;
    buffer_[0] = (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
    buffer_[1] = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
    buffered_ = 2;
  }
  return buffer_[2 - buffered_--];
}

double RngStream::uniform() { return top53_to_unit(next_u64()); }

double RngStream::symmetric_uniform() {
  // (k + 0.5) / 2^52 - 1 for k in [0, 2^53): symmetric, never hits +-1.
  const auto k = static_cast<double>(next_u64() >> 11);
  return (k + 0.5) * 0x1.0p-52 - 1.0;
}

std::uint64_t RngStream::uniform_index(std::uint64_t bound) {
  if (bound == 0) throw ParameterError("uniform_index: bound must be positive");
  // Rejection on the largest multiple of bound below 2^64.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % bound;
}

double RngStream::gaussian() {
  if (spare_gaussian_) {
    const double v = *spare_gaussian_;
    spare_gaussian_.reset();
    return v;
  }
  double u, v, s;
  do {
    u = symmetric_uniform();
    v = symmetric_uniform();
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_gaussian_ = v * f;
  return u * f;
}

Vector gaussian_vector(RngStream& rng, std::size_t dim, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("gaussian_vector: sigma must be finite and >= 0, got " +
                         std::to_string(sigma));
  }
  if (dim == 0) throw ParameterError("gaussian_vector: dim must be >= 1");
  Vector out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = sigma * rng.gaussian();
  return out;
}

Vector uniform_noise_vector(RngStream& rng, std::size_t dim, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("uniform_noise_vector: sigma must be finite and >= 0");
  }
  if (dim == 0) throw ParameterError("uniform_noise_vector: dim must be >= 1");
  const double half_width = sigma * std::sqrt(3.0);
  Vector out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = half_width * rng.symmetric_uniform();
  return out;
}

}  // namespace jacreg
