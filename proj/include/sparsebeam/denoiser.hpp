#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "sparsebeam/checksum.hpp"
#include "sparsebeam/field.hpp"
#include "sparsebeam/schedule.hpp"

namespace sparsebeam {

/// Noise predictor eps_theta(noisy, condition, t). Implementations must be
/// deterministic and safe to call concurrently.
template <typename Real>
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  [[nodiscard]] virtual Field3<Real> predict(const Field3<Real>& noisy, const Field3<Real>& condition,
                                             std::size_t t) const = 0;
};

/// Contract-checked evaluation: input shapes must agree, and so must the output.
template <typename Real>
[[nodiscard]] Field3<Real> evaluate(const Denoiser<Real>& denoiser, const Field3<Real>& noisy,
                                    const Field3<Real>& condition, std::size_t t) {
  if (noisy.shape() != condition.shape()) {
    throw ContractError("denoiser input shape " + noisy.shape().str() + " vs condition " + condition.shape().str());
  }
  if (t < 1) throw StepError("denoiser evaluated at step 0");
  Field3<Real> out = denoiser.predict(noisy, condition, t);
  if (out.shape() != noisy.shape()) {
    throw ContractError("denoiser output shape " + out.shape().str() + " does not match input " +
                        noisy.shape().str());
  }
  return out;
}

template <typename Real>
class ZeroDenoiser final : public Denoiser<Real> {
 public:
  Field3<Real> predict(const Field3<Real>& noisy, const Field3<Real>&, std::size_t) const override {
    return Field3<Real>(noisy.shape());
  }
};

/// Posterior-mean noise for data drawn i.i.d. N(mean, stddev^2) per voxel:
///   eps*(y_t, t) = (y_t - sqrt(abar) m) sqrt(1 - abar) / (s^2 abar + 1 - abar).
/// The condition is ignored.
template <typename Real>
class GaussianOracleDenoiser final : public Denoiser<Real> {
 public:
  GaussianOracleDenoiser(NoiseSchedule schedule, double mean, double stddev)
      : schedule_(std::move(schedule)), mean_(mean), var_(stddev * stddev) {}

  Field3<Real> predict(const Field3<Real>& noisy, const Field3<Real>&, std::size_t t) const override {
    const double abar = schedule_.alpha_bar(schedule_.checked(t));
    const double shift = std::sqrt(abar) * mean_;
    const double gain = std::sqrt(1.0 - abar) / (var_ * abar + 1.0 - abar);
    Field3<Real> out(noisy.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<Real>((static_cast<double>(noisy[i]) - shift) * gain);
    }
    return out;
  }

 private:
  NoiseSchedule schedule_;
  double mean_;
  double var_;
};

/// Ideal predictor for a point-mass data distribution at `target`: returns the
/// noise that maps target to the given noisy field under forward diffusion.
template <typename Real>
class PointMassDenoiser final : public Denoiser<Real> {
 public:
  PointMassDenoiser(NoiseSchedule schedule, Field3<Real> target)
      : schedule_(std::move(schedule)), target_(std::move(target)) {}

  Field3<Real> predict(const Field3<Real>& noisy, const Field3<Real>&, std::size_t t) const override {
    return noise_towards(schedule_, target_, noisy, t);
  }

  static Field3<Real> noise_towards(const NoiseSchedule& schedule, const Field3<Real>& target,
                                    const Field3<Real>& noisy, std::size_t t) {
    require_same_shape(target, noisy, "point-mass denoiser");
    const double abar = schedule.alpha_bar(schedule.checked(t));
    const double sa = std::sqrt(abar);
    const double inv = 1.0 / std::sqrt(1.0 - abar);
    Field3<Real> out(noisy.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<Real>((static_cast<double>(noisy[i]) - sa * static_cast<double>(target[i])) * inv);
    }
    return out;
  }

 private:
  NoiseSchedule schedule_;
  Field3<Real> target_;
};

/// Replays recorded ground truth: looks up the clean sub-volume registered for
/// the incoming condition (by content checksum) and returns the exact noise
/// that leads the reverse trajectory back to it.
template <typename Real>
class ReplayDenoiser final : public Denoiser<Real> {
 public:
  explicit ReplayDenoiser(NoiseSchedule schedule) : schedule_(std::move(schedule)) {}

  /// Registers a (condition, clean) pair. Identical conditions must map to
  /// identical targets.
  void record(const Field3<Real>& condition, Field3<Real> clean) {
    const auto key = crc64_of(condition.values());
    auto [it, inserted] = table_.try_emplace(key, std::move(clean));
    if (!inserted && it->second != clean) {
      throw ContractError("replay denoiser: conflicting targets for one condition");
    }
  }

  [[nodiscard]] std::size_t recorded() const noexcept { return table_.size(); }

  Field3<Real> predict(const Field3<Real>& noisy, const Field3<Real>& condition, std::size_t t) const override {
    auto it = table_.find(crc64_of(condition.values()));
    if (it == table_.end()) throw ContractError("replay denoiser: condition was never recorded");
    return PointMassDenoiser<Real>::noise_towards(schedule_, it->second, noisy, t);
  }

 private:
  NoiseSchedule schedule_;
  std::map<std::uint64_t, Field3<Real>> table_;
};

}  // namespace sparsebeam
