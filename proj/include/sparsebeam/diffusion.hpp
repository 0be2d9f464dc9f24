#pragma once

#include <cmath>
#include <cstdint>

#include "sparsebeam/denoiser.hpp"
#include "sparsebeam/random.hpp"
#include "sparsebeam/schedule.hpp"

namespace sparsebeam {

namespace detail {

// out[i] = a * x[i] + b * y[i], computed in double.
template <typename Real>
Field3<Real> axpby(double a, const Field3<Real>& x, double b, const Field3<Real>& y) {
  Field3<Real> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<Real>(a * static_cast<double>(x[i]) + b * static_cast<double>(y[i]));
  }
  return out;
}

}  // namespace detail

/// Closed-form noising: sqrt(abar_t) y0 + sqrt(1 - abar_t) eps.
template <typename Real>
[[nodiscard]] Field3<Real> forward_diffuse(const Field3<Real>& y0, std::size_t t, const Field3<Real>& eps,
                                           const NoiseSchedule& schedule) {
  require_same_shape(y0, eps, "forward_diffuse");
  const double abar = schedule.alpha_bar(schedule.checked(t));
  return detail::axpby(std::sqrt(abar), y0, std::sqrt(1.0 - abar), eps);
}

/// One Markov transition: sqrt(1 - beta_t) y_{t-1} + sqrt(beta_t) eps.
template <typename Real>
[[nodiscard]] Field3<Real> forward_step(const Field3<Real>& y_prev, std::size_t t, const Field3<Real>& eps,
                                        const NoiseSchedule& schedule) {
  require_same_shape(y_prev, eps, "forward_step");
  const double beta = schedule.beta(schedule.checked(t));
  return detail::axpby(std::sqrt(1.0 - beta), y_prev, std::sqrt(beta), eps);
}

/// Conditional reverse step
///   y_{t-1} = c_t (y_t - (1 - alpha_t) / sqrt(1 - abar_t) eps_theta(y_t, z, t)) + sigma_t xi
/// with c_t = 1/sqrt(alpha_t), or 1/sqrt(abar_t) under ReverseCoeff::alpha_bar.
/// xi is not read at t = 1.
template <typename Real>
[[nodiscard]] Field3<Real> reverse_step(const Field3<Real>& y_t, const Field3<Real>& condition, std::size_t t,
                                        const Denoiser<Real>& denoiser, const NoiseSchedule& schedule,
                                        const Field3<Real>& xi) {
  schedule.checked(t);
  const Field3<Real> eps = evaluate(denoiser, y_t, condition, t);
  const double alpha = schedule.alpha(t);
  const double abar = schedule.alpha_bar(t);
  const double lead = 1.0 / std::sqrt(schedule.reverse_coeff() == ReverseCoeff::alpha ? alpha : abar);
  const double eps_coeff = (1.0 - alpha) / std::sqrt(1.0 - abar);
  const double sigma = schedule.sigma(t);
  Field3<Real> out(y_t.shape());
  if (t > 1 && sigma != 0.0) {
    require_same_shape(y_t, xi, "reverse_step noise");
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<Real>(lead * (static_cast<double>(y_t[i]) - eps_coeff * static_cast<double>(eps[i])) +
                                 sigma * static_cast<double>(xi[i]));
    }
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<Real>(lead * (static_cast<double>(y_t[i]) - eps_coeff * static_cast<double>(eps[i])));
    }
  }
  return out;
}

/// Full ancestral sampling from y_T ~ N(0, I) down to y_0. Every draw is keyed
/// by (seed, purpose, step), so the result is a pure function of the inputs.
template <typename Real>
[[nodiscard]] Field3<Real> sample(const Field3<Real>& condition, const Denoiser<Real>& denoiser,
                                  const NoiseSchedule& schedule, std::uint64_t seed) {
  const NoiseStream stream(seed);
  const Shape3 shape = condition.shape();
  Field3<Real> y = stream.normal<Real>(shape, DrawPurpose::initial_noise, 0);
  const Field3<Real> no_noise;
  for (std::size_t t = schedule.steps(); t >= 1; --t) {
    if (t > 1) {
      y = reverse_step(y, condition, t, denoiser, schedule, stream.normal<Real>(shape, DrawPurpose::step_noise, t));
    } else {
      y = reverse_step(y, condition, t, denoiser, schedule, no_noise);
    }
  }
  return y;
}

/// One Monte-Carlo term of the noise-prediction objective:
/// mean over voxels of (eps - eps_theta(forward_diffuse(y0, t, eps), z, t))^2.
template <typename Real>
[[nodiscard]] double ddpm_loss(const Denoiser<Real>& denoiser, const Field3<Real>& y0, const Field3<Real>& condition,
                               std::size_t t, const Field3<Real>& eps, const NoiseSchedule& schedule) {
  const Field3<Real> noisy = forward_diffuse(y0, t, eps, schedule);
  const Field3<Real> pred = evaluate(denoiser, noisy, condition, t);
  double acc = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double d = static_cast<double>(eps[i]) - static_cast<double>(pred[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(eps.size());
}

}  // namespace sparsebeam
