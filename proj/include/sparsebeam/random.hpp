#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "sparsebeam/field.hpp"

namespace sparsebeam {

/// Which field a stochastic draw belongs to. Part of every stream key.
enum class Domain : std::uint64_t {
  projection = 1,
  image = 2,
  generic = 3,
};

[[nodiscard]] inline const char* domain_name(Domain d) noexcept {
  switch (d) {
    case Domain::projection: return "projection";
    case Domain::image: return "image";
    case Domain::generic: return "generic";
  }
  return "unknown";
}

/// Role of a draw within a stream, so that e.g. the initial y_T and the
/// per-step xi never share a key.
enum class DrawPurpose : std::uint64_t {
  initial_noise = 1,
  step_noise = 2,
  train_noise = 3,
  train_timestep = 4,
  train_pair = 5,
  block_seed = 6,
  test = 7,
};

/// SplitMix64 finalizer.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Folds an ordered tuple of key parts into one 64-bit stream key.
[[nodiscard]] constexpr std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x51ed270b27c3a1f5ULL;
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p));
  return h;
}

/// Seed of one sub-volume's sampling stream.
[[nodiscard]] constexpr std::uint64_t block_seed(std::uint64_t run_seed, Domain domain, std::uint64_t block_index) noexcept {
  return derive_key({run_seed, static_cast<std::uint64_t>(domain), static_cast<std::uint64_t>(DrawPurpose::block_seed),
                     block_index});
}

/// Counter-addressed Gaussian source: every draw is a pure function of
/// (seed, purpose, counter), independent of how many draws happened before.
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed) noexcept : seed_(seed) {}

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

  [[nodiscard]] std::mt19937_64 engine(DrawPurpose purpose, std::uint64_t counter, std::uint64_t sub = 0) const {
    return std::mt19937_64(derive_key({seed_, static_cast<std::uint64_t>(purpose), counter, sub}));
  }

  template <typename Real>
  [[nodiscard]] Field3<Real> normal(Shape3 shape, DrawPurpose purpose, std::uint64_t counter,
                                    std::uint64_t sub = 0) const {
    Field3<Real> out(shape);
    auto eng = engine(purpose, counter, sub);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (Real& v : out.values()) v = static_cast<Real>(dist(eng));
    return out;
  }

 private:
  std::uint64_t seed_;
};

}  // namespace sparsebeam
