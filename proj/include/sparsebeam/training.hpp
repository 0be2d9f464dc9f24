#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsebeam/conv_net.hpp"
#include "sparsebeam/diffusion.hpp"
#include "sparsebeam/random.hpp"
#include "sparsebeam/worker_pool.hpp"

namespace sparsebeam {

/// One term of the training objective: clean target, condition, step, noise.
template <typename Real>
struct TrainingExample {
  Field3<Real> clean;
  Field3<Real> condition;
  std::size_t t = 1;
  Field3<Real> eps;
};

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Batch-mean noise-prediction loss and its exact gradient over all network
/// parameters. Per-example gradients are combined by a fixed pairwise tree, so
/// the result does not depend on `workers`.
template <typename Real>
[[nodiscard]] LossAndGradient backprop_loss(const ConvDenoiser<Real>& net, std::span<const TrainingExample<Real>> batch,
                                            const NoiseSchedule& schedule, std::size_t workers = 1) {
  if (batch.empty()) throw ContractError("backprop_loss: empty batch");
  const std::size_t n = batch.size();
  std::vector<double> losses(n);
  std::vector<std::vector<double>> grads(n);
  parallel_for(n, workers, [&](std::size_t b) {
    const auto& ex = batch[b];
    require_same_shape(ex.clean, ex.eps, "backprop_loss noise");
    require_same_shape(ex.clean, ex.condition, "backprop_loss condition");
    const Field3<Real> noisy = forward_diffuse(ex.clean, ex.t, ex.eps, schedule);
    typename ConvDenoiser<Real>::Cache cache;
    net.forward(noisy, ex.condition, ex.t, cache);
    const double scale = 2.0 / (static_cast<double>(ex.eps.size()) * static_cast<double>(n));
    Field3<Real> d_out(noisy.shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < d_out.size(); ++i) {
      const double diff = static_cast<double>(cache.output[i]) - static_cast<double>(ex.eps[i]);
      acc += diff * diff;
      d_out[i] = static_cast<Real>(scale * diff);
    }
    losses[b] = acc / static_cast<double>(ex.eps.size());
    std::vector<Real> g(net.parameter_count(), Real(0));
    net.backward(cache, d_out, g);
    grads[b].assign(g.begin(), g.end());
  });
  LossAndGradient out;
  std::vector<std::vector<double>> loss_parts;
  loss_parts.reserve(n);
  for (double l : losses) loss_parts.push_back({l});
  out.loss = tree_reduce(std::move(loss_parts)).front() / static_cast<double>(n);
  out.gradient = tree_reduce(std::move(grads));
  return out;
}

struct TrainConfig {
  std::size_t iterations = 2000;
  std::size_t batch = 8;
  double lr_start = 1e-4;
  double lr_end = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  /// Linear decay from lr_start (first iteration) to lr_end (last iteration).
  [[nodiscard]] double learning_rate(std::size_t k) const noexcept {
    if (iterations <= 1) return lr_start;
    const double f = static_cast<double>(k) / static_cast<double>(iterations - 1);
    return lr_start + (lr_end - lr_start) * f;
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations}, {"batch", c.batch},   {"lr_start", c.lr_start},
          {"lr_end", c.lr_end},         {"beta1", c.beta1},   {"beta2", c.beta2},
          {"weight_decay", c.weight_decay}, {"seed", c.seed}, {"workers", c.workers}};
}

/// Adam with decoupled weight decay: theta -= lr * (wd * theta + mhat / (sqrt(vhat) + eps)).
class AdamW {
 public:
  AdamW(std::size_t n, double beta1, double beta2, double weight_decay, double eps)
      : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), wd_(weight_decay), eps_(eps) {}

  template <typename Real>
  void step(std::span<Real> params, std::span<const double> grad, double lr) {
    ++k_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(k_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(k_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i];
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
      double p = static_cast<double>(params[i]);
      p -= lr * wd_ * p;
      p -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
      params[i] = static_cast<Real>(p);
    }
  }

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, wd_, eps_;
  std::size_t k_ = 0;
};

/// Draws one aligned (clean, condition) sub-volume pair.
template <typename Real>
using PairSampler = std::function<std::pair<Field3<Real>, Field3<Real>>(std::mt19937_64&)>;

struct TrainResult {
  std::vector<double> losses;  // one per iteration
};

/// Stochastic training of the noise predictor. Timesteps are uniform over
/// {1..T}; every draw is keyed by (seed, iteration, batch slot).
template <typename Real>
TrainResult train(ConvDenoiser<Real>& net, const PairSampler<Real>& sampler, const TrainConfig& config,
                  const NoiseSchedule& schedule, const std::function<void(std::size_t, double)>& progress = {}) {
  if (config.batch == 0) throw ConfigError("train: batch must be >= 1");
  TrainResult result;
  result.losses.reserve(config.iterations);
  AdamW opt(net.parameter_count(), config.beta1, config.beta2, config.weight_decay, config.adam_eps);
  const NoiseStream stream(config.seed);
  std::vector<TrainingExample<Real>> batch(config.batch);
  for (std::size_t k = 0; k < config.iterations; ++k) {
    for (std::size_t b = 0; b < config.batch; ++b) {
      auto pair_eng = stream.engine(DrawPurpose::train_pair, k, b);
      auto [clean, condition] = sampler(pair_eng);
      auto t_eng = stream.engine(DrawPurpose::train_timestep, k, b);
      std::uniform_int_distribution<std::size_t> pick(1, schedule.steps());
      auto& ex = batch[b];
      ex.t = pick(t_eng);
      ex.eps = stream.normal<Real>(clean.shape(), DrawPurpose::train_noise, k, b);
      ex.clean = std::move(clean);
      ex.condition = std::move(condition);
    }
    const auto lg = backprop_loss<Real>(net, batch, schedule, config.workers);
    if (!std::isfinite(lg.loss)) throw DivergenceError("training loss is not finite", k);
    opt.step(net.parameters(), lg.gradient, config.learning_rate(k));
    result.losses.push_back(lg.loss);
    if (progress) progress(k, lg.loss);
  }
  return result;
}

}  // namespace sparsebeam
