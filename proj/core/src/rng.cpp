#include "hl/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace hl::rng {

namespace {

constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;  // golden-ratio increment

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

Stream::Stream(std::uint64_t master_seed, Purpose purpose, std::uint64_t instance) {
  // Three mixing rounds decorrelate (seed, purpose, instance) triples that
  // differ in a single field.
  std::uint64_t s = mix(master_seed + kGamma);
  s = mix(s ^ (static_cast<std::uint64_t>(purpose) * 0xd1342543de82ef95ull));
  s = mix(s ^ (instance * 0x2545f4914f6cdd1dull));
  state_ = s;
}

std::uint64_t Stream::next_u64() {
  state_ += kGamma;
  return mix(state_);
}

double Stream::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Stream::uniform01_open() {
  // (w >> 11) + 0.5 spans {0.5, 1.5, ...} so the result is strictly inside (0,1).
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t Stream::uniform_below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_below: n must be positive");
  // Rejection against the largest multiple of n to keep the draw unbiased.
  const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
  std::uint64_t w = next_u64();
  while (w >= limit) w = next_u64();
  return w % n;
}

double Stream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  const double u1 = uniform01_open();
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_normal_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Stream::gamma(double shape) {
  if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be positive");
  // Marsaglia-Tsang squeeze for shape >= 1; boost below 1 via the U^(1/shape)
  // power identity Gamma(a) = Gamma(a+1) * U^(1/a).
  if (shape < 1.0) {
    const double u = uniform01_open();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01_open();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double Stream::beta(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("beta: shapes must be positive");
  if (b == 1.0) {
    return std::pow(uniform01_open(), 1.0 / a);
  }
  if (a == 1.0) {
    return 1.0 - std::pow(uniform01_open(), 1.0 / b);
  }
  const double x = gamma(a);
  const double y = gamma(b);
  return x / (x + y);
}

void shuffle_indices(std::vector<std::size_t>& idx, Stream& s) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(s.uniform_below(i));
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace hl::rng
