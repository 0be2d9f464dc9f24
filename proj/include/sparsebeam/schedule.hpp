#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsebeam/errors.hpp"

namespace sparsebeam {

/// Leading coefficient of the reverse step: the standard 1/sqrt(alpha_t), or
/// the 1/sqrt(alpha_bar_t) variant kept for comparison.
enum class ReverseCoeff { alpha, alpha_bar };

/// Precomputed linear variance schedule. All per-step accessors take the
/// 1-based step t in [1, T]; alpha_bar(0) is 1.
class NoiseSchedule {
 public:
  NoiseSchedule(std::size_t steps, double beta_start, double beta_end, ReverseCoeff coeff = ReverseCoeff::alpha)
      : beta_start_(beta_start), beta_end_(beta_end), coeff_(coeff) {
    if (steps < 1) throw ConfigError("schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
      throw ConfigError("schedule: require 0 < beta_start <= beta_end < 1, got " + std::to_string(beta_start) +
                        ", " + std::to_string(beta_end));
    }
    betas_.resize(steps);
    alphas_.resize(steps);
    alpha_bars_.resize(steps + 1);
    sigmas_.resize(steps);
    alpha_bars_[0] = 1.0;
    for (std::size_t k = 0; k < steps; ++k) {
      betas_[k] = steps == 1 ? beta_start
                             : beta_start + static_cast<double>(k) * (beta_end - beta_start) /
                                                static_cast<double>(steps - 1);
      alphas_[k] = 1.0 - betas_[k];
      alpha_bars_[k + 1] = alpha_bars_[k] * alphas_[k];
      // sigma_t^2 = beta_t, with the final step deterministic.
      sigmas_[k] = k == 0 ? 0.0 : std::sqrt(betas_[k]);
    }
  }

  [[nodiscard]] std::size_t steps() const noexcept { return betas_.size(); }
  [[nodiscard]] double beta_start() const noexcept { return beta_start_; }
  [[nodiscard]] double beta_end() const noexcept { return beta_end_; }
  [[nodiscard]] ReverseCoeff reverse_coeff() const noexcept { return coeff_; }

  [[nodiscard]] double beta(std::size_t t) const { return betas_.at(checked(t) - 1); }
  [[nodiscard]] double alpha(std::size_t t) const { return alphas_.at(checked(t) - 1); }
  [[nodiscard]] double alpha_bar(std::size_t t) const {
    if (t > steps()) throw StepError("step " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
    return alpha_bars_[t];
  }
  [[nodiscard]] double sigma(std::size_t t) const { return sigmas_.at(checked(t) - 1); }

  [[nodiscard]] const std::vector<double>& betas() const noexcept { return betas_; }
  [[nodiscard]] const std::vector<double>& alphas() const noexcept { return alphas_; }

  /// Validates 1 <= t <= T and returns t.
  std::size_t checked(std::size_t t) const {
    if (t < 1 || t > steps()) {
      throw StepError("step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    }
    return t;
  }

 private:
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> sigmas_;
  double beta_start_;
  double beta_end_;
  ReverseCoeff coeff_;
};

[[nodiscard]] inline NoiseSchedule make_linear_schedule(std::size_t steps, double beta_start, double beta_end,
                                                        ReverseCoeff coeff = ReverseCoeff::alpha) {
  return NoiseSchedule(steps, beta_start, beta_end, coeff);
}

inline nlohmann::json to_json(const NoiseSchedule& s) {
  return {{"T", s.steps()},
          {"beta_start", s.beta_start()},
          {"beta_end", s.beta_end()},
          {"variant", "linear"},
          {"sigma_rule", "beta"},
          {"reverse_coeff", s.reverse_coeff() == ReverseCoeff::alpha ? "alpha" : "alpha_bar"}};
}

inline NoiseSchedule schedule_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("schedule: expected an object");
  for (const auto& [key, _] : j.items()) {
    if (key != "T" && key != "beta_start" && key != "beta_end" && key != "variant" && key != "sigma_rule" &&
        key != "reverse_coeff") {
      throw ConfigError("schedule: unknown key '" + key + "'");
    }
  }
  try {
    if (j.value("variant", std::string("linear")) != "linear") throw ConfigError("schedule: only variant 'linear'");
    if (j.value("sigma_rule", std::string("beta")) != "beta") throw ConfigError("schedule: only sigma_rule 'beta'");
    const std::string coeff = j.value("reverse_coeff", std::string("alpha"));
    if (coeff != "alpha" && coeff != "alpha_bar") throw ConfigError("schedule: reverse_coeff must be alpha|alpha_bar");
    const auto steps = j.at("T").get<long long>();
    if (steps < 1) throw ConfigError("schedule: T must be >= 1");
    return NoiseSchedule(static_cast<std::size_t>(steps), j.value("beta_start", 1e-4), j.value("beta_end", 2e-2),
                         coeff == "alpha" ? ReverseCoeff::alpha : ReverseCoeff::alpha_bar);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
}

}  // namespace sparsebeam
