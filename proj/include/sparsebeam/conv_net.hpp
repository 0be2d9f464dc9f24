#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sparsebeam/denoiser.hpp"
#include "sparsebeam/field.hpp"
#include "sparsebeam/schedule.hpp"

namespace sparsebeam {

/// Layer widths of the two-level conditional denoiser. Kernels are 3x3x3 with
/// zero padding; the second level runs at half resolution.
struct ConvNetArch {
  int in_channels = 2;  // noisy + condition, concatenated
  int width1 = 16;
  int width2 = 32;
  int embed_width = 64;
  int kernel = 3;
  /// Data scale for output preconditioning; 0 leaves the network output as
  /// the raw noise prediction.
  double sigma_data = 0.0;
  /// Model the residual around the condition channel (needs sigma_data > 0).
  bool anchor = false;

  friend bool operator==(const ConvNetArch&, const ConvNetArch&) = default;
};

/// Sinusoidal timestep embedding of even width w:
///   f_i = exp(-i ln(10000) / (w/2 - 1)),  e = [sin(t f_0..), cos(t f_0..)].
[[nodiscard]] inline std::vector<double> timestep_embedding(std::size_t t, int width) {
  const int half = width / 2;
  const double scale = half > 1 ? std::log(10000.0) / static_cast<double>(half - 1) : 0.0;
  std::vector<double> e(static_cast<std::size_t>(width));
  for (int i = 0; i < half; ++i) {
    const double arg = static_cast<double>(t) * std::exp(-scale * i);
    e[static_cast<std::size_t>(i)] = std::sin(arg);
    e[static_cast<std::size_t>(i + half)] = std::cos(arg);
  }
  return e;
}

namespace detail {

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
template <typename Real>
using MatMap = Eigen::Map<const Mat<Real>>;
template <typename Real>
using MatMapMut = Eigen::Map<Mat<Real>>;

inline constexpr int kTaps = 27;

// Rows of `cols` are (channel, tap) pairs, columns are voxels; tap offsets
// run over (dz, dy, dx) in {-1, 0, 1}^3 with zero padding.
template <typename Real>
void im2col(const Mat<Real>& in, Shape3 s, Mat<Real>& cols) {
  const auto channels = in.rows();
  const auto n = static_cast<Eigen::Index>(s.size());
  cols.resize(channels * kTaps, n);
  const long D = static_cast<long>(s.d0), H = static_cast<long>(s.d1), W = static_cast<long>(s.d2);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const Real* src = in.row(c).data();
    for (int k = 0; k < kTaps; ++k) {
      const long dz = k / 9 - 1, dy = (k / 3) % 3 - 1, dx = k % 3 - 1;
      Real* dst = cols.row(c * kTaps + k).data();
      const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
      for (long z = 0; z < D; ++z) {
        const long zz = z + dz;
        for (long y = 0; y < H; ++y) {
          Real* row = dst + (z * H + y) * W;
          const long yy = y + dy;
          if (zz < 0 || zz >= D || yy < 0 || yy >= H) {
            std::fill(row, row + W, Real(0));
            continue;
          }
          const Real* srow = src + (zz * H + yy) * W + dx;
          for (long x = 0; x < x0; ++x) row[x] = Real(0);
          for (long x = x0; x < x1; ++x) row[x] = srow[x];
          for (long x = x1; x < W; ++x) row[x] = Real(0);
        }
      }
    }
  }
}

// Adjoint of im2col.
template <typename Real>
void col2im(const Mat<Real>& cols, Shape3 s, Eigen::Index channels, Mat<Real>& out) {
  out.setZero(channels, static_cast<Eigen::Index>(s.size()));
  const long D = static_cast<long>(s.d0), H = static_cast<long>(s.d1), W = static_cast<long>(s.d2);
  for (Eigen::Index c = 0; c < channels; ++c) {
    Real* dst = out.row(c).data();
    for (int k = 0; k < kTaps; ++k) {
      const long dz = k / 9 - 1, dy = (k / 3) % 3 - 1, dx = k % 3 - 1;
      const Real* src = cols.row(c * kTaps + k).data();
      const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
      for (long z = 0; z < D; ++z) {
        const long zz = z + dz;
        if (zz < 0 || zz >= D) continue;
        for (long y = 0; y < H; ++y) {
          const long yy = y + dy;
          if (yy < 0 || yy >= H) continue;
          const Real* srow = src + (z * H + y) * W;
          Real* drow = dst + (zz * H + yy) * W + dx;
          for (long x = x0; x < x1; ++x) drow[x] += srow[x];
        }
      }
    }
  }
}

// 2x2x2 average pooling.
template <typename Real>
void avg_pool(const Mat<Real>& in, Shape3 s, Mat<Real>& out) {
  const std::size_t D = s.d0 / 2, H = s.d1 / 2, W = s.d2 / 2;
  out.resize(in.rows(), static_cast<Eigen::Index>(D * H * W));
  for (Eigen::Index c = 0; c < in.rows(); ++c) {
    const Real* src = in.row(c).data();
    Real* dst = out.row(c).data();
    for (std::size_t z = 0; z < D; ++z)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          Real acc = 0;
          for (std::size_t k = 0; k < 8; ++k) {
            acc += src[((2 * z + (k >> 2)) * s.d1 + 2 * y + ((k >> 1) & 1)) * s.d2 + 2 * x + (k & 1)];
          }
          dst[(z * H + y) * W + x] = acc / Real(8);
        }
  }
}

// Nearest-neighbour 2x upsampling from half-resolution s/2 to s, added into `out`.
// With `adjoint`, instead sums each 2x2x2 child group of `out` into `in`.
template <typename Real>
void upsample_add(const Mat<Real>& half, Shape3 s, Mat<Real>& out) {
  const std::size_t H = s.d1 / 2, W = s.d2 / 2;
  for (Eigen::Index c = 0; c < half.rows(); ++c) {
    const Real* src = half.row(c).data();
    Real* dst = out.row(c).data();
    for (std::size_t z = 0; z < s.d0; ++z)
      for (std::size_t y = 0; y < s.d1; ++y)
        for (std::size_t x = 0; x < s.d2; ++x) dst[(z * s.d1 + y) * s.d2 + x] += src[((z / 2) * H + y / 2) * W + x / 2];
  }
}

template <typename Real>
void upsample_adjoint(const Mat<Real>& full, Shape3 s, Mat<Real>& half) {
  const std::size_t H = s.d1 / 2, W = s.d2 / 2;
  half.setZero(full.rows(), static_cast<Eigen::Index>((s.d0 / 2) * H * W));
  for (Eigen::Index c = 0; c < full.rows(); ++c) {
    const Real* src = full.row(c).data();
    Real* dst = half.row(c).data();
    for (std::size_t z = 0; z < s.d0; ++z)
      for (std::size_t y = 0; y < s.d1; ++y)
        for (std::size_t x = 0; x < s.d2; ++x) dst[((z / 2) * H + y / 2) * W + x / 2] += src[(z * s.d1 + y) * s.d2 + x];
  }
}

template <typename Real>
Real sigmoid(Real x) {
  return Real(1) / (Real(1) + std::exp(-x));
}

template <typename Real>
void silu(const Mat<Real>& pre, Mat<Real>& out) {
  out = pre.unaryExpr([](Real x) { return x * sigmoid(x); });
}

// grad *= silu'(pre)
template <typename Real>
void silu_backward(const Mat<Real>& pre, Mat<Real>& grad) {
  grad = grad.binaryExpr(pre, [](Real g, Real x) {
    const Real s = sigmoid(x);
    return g * s * (Real(1) + x * (Real(1) - s));
  });
}

}  // namespace detail

/// A named slice of the flat parameter vector.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;  // 1 for bias vectors
  std::size_t fan_in = 0;
  [[nodiscard]] std::size_t size() const noexcept { return rows * cols; }
};

/// Two-level conditional 3D convolutional noise predictor with manual
/// backpropagation. Fully convolutional: any input with even extents works.
template <typename Real>
class ConvDenoiser final : public Denoiser<Real> {
 public:
  explicit ConvDenoiser(ConvNetArch arch = {}) : arch_(arch) {
    if (arch.kernel != 3) throw ConfigError("conv denoiser: only kernel size 3 is supported");
    if (arch.in_channels != 2) throw ConfigError("conv denoiser: in_channels must be 2 (noisy + condition)");
    if (arch.width1 < 1 || arch.width2 < 1) throw ConfigError("conv denoiser: widths must be positive");
    if (!(arch.sigma_data >= 0.0)) throw ConfigError("conv denoiser: sigma_data must be >= 0");
    if (arch.anchor && !(arch.sigma_data > 0.0)) throw ConfigError("conv denoiser: anchor needs sigma_data > 0");
    if (arch.embed_width < 4 || arch.embed_width % 2 != 0) {
      throw ConfigError("conv denoiser: embed_width must be even and >= 4");
    }
    const std::size_t E = arch.embed_width, C1 = arch.width1, C2 = arch.width2, Cin = arch.in_channels;
    const std::size_t taps = detail::kTaps;
    add("temb0.w", E, E, E);
    add("temb0.b", E, 1, E);
    add("temb1.w", C1, E, E);
    add("temb1.b", C1, 1, E);
    add("temb2.w", C2, E, E);
    add("temb2.b", C2, 1, E);
    add("conv_a.w", C1, Cin * taps, Cin * taps);
    add("conv_a.b", C1, 1, Cin * taps);
    add("conv_b.w", C2, C1 * taps, C1 * taps);
    add("conv_b.b", C2, 1, C1 * taps);
    add("conv_c.w", C2, C2 * taps, C2 * taps);
    add("conv_c.b", C2, 1, C2 * taps);
    add("conv_d.w", C1, C2 * taps, C2 * taps);
    add("conv_d.b", C1, 1, C2 * taps);
    add("conv_e.w", C1, C1 * taps, C1 * taps);
    add("conv_e.b", C1, 1, C1 * taps);
    add("conv_out.w", 1, C1 * taps, C1 * taps);
    add("conv_out.b", 1, 1, C1 * taps);
    params_.assign(count_, Real(0));
  }

  [[nodiscard]] const ConvNetArch& arch() const noexcept { return arch_; }
  [[nodiscard]] std::size_t parameter_count() const noexcept { return count_; }
  [[nodiscard]] const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }
  [[nodiscard]] std::span<Real> parameters() noexcept { return params_; }
  [[nodiscard]] std::span<const Real> parameters() const noexcept { return params_; }

  [[nodiscard]] const ParamBlock& block(const std::string& name) const {
    for (const auto& b : blocks_)
      if (b.name == name) return b;
    throw ContractError("conv denoiser: no parameter block " + name);
  }

  /// Fan-in scaled uniform weights, zero biases, zero output layer: the
  /// initial network predicts zero noise everywhere.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    for (const auto& b : blocks_) {
      const bool bias = b.cols == 1;
      const bool output = b.name.rfind("conv_out", 0) == 0;
      const double bound = std::sqrt(6.0 / static_cast<double>(b.fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (std::size_t i = 0; i < b.size(); ++i) {
        params_[b.offset + i] = (bias || output) ? Real(0) : static_cast<Real>(dist(eng));
      }
    }
  }

  /// Same as initialize() but the output layer is randomized too; used for
  /// gradient probing where a zero head would hide upstream gradients.
  void randomize_all(std::uint64_t seed, double bias_scale = 0.1) {
    std::mt19937_64 eng(seed);
    for (const auto& b : blocks_) {
      const double bound = b.cols == 1 ? bias_scale : std::sqrt(6.0 / static_cast<double>(b.fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (std::size_t i = 0; i < b.size(); ++i) params_[b.offset + i] = static_cast<Real>(dist(eng));
    }
  }

  /// Noise levels for preconditioning; required when arch().sigma_data > 0.
  void set_noise_levels(const NoiseSchedule& schedule) {
    std::vector<double> ab(schedule.steps() + 1);
    for (std::size_t t = 0; t <= schedule.steps(); ++t) ab[t] = schedule.alpha_bar(t);
    set_noise_levels(std::move(ab));
  }
  /// alpha_bar indexed by step, alpha_bar[0] = 1.
  void set_noise_levels(std::vector<double> alpha_bars) {
    for (std::size_t t = 1; t < alpha_bars.size(); ++t) {
      if (!(alpha_bars[t] > 0.0 && alpha_bars[t] < 1.0)) throw ConfigError("conv denoiser: noise levels outside (0, 1)");
    }
    alpha_bars_ = std::move(alpha_bars);
  }
  [[nodiscard]] const std::vector<double>& noise_levels() const noexcept { return alpha_bars_; }
  [[nodiscard]] bool preconditioned() const noexcept { return arch_.sigma_data > 0.0; }

  /// With preconditioning, for x = y / sqrt(abar) and s^2 = (1 - abar) / abar the
  /// network F sees y / sqrt(abar sd^2 + 1 - abar) and the prediction is
  ///   eps = x s / (s^2 + sd^2) - sd / sqrt(s^2 + sd^2) F,
  /// i.e. x0 = c_skip x + c_out F with the usual c_skip, c_out.
  /// An anchored net applies the same to y - sqrt(abar) c, so it models the
  /// residual x0 - c around the condition c and a zero head predicts x0 = c.
  struct Scaling {
    double in = 1.0;
    double skip = 0.0;
    double out = 1.0;
  };
  [[nodiscard]] Scaling scaling(std::size_t t) const {
    if (!preconditioned()) return {};
    if (t >= alpha_bars_.size()) {
      throw ContractError("conv denoiser: no noise level for step " + std::to_string(t) + " (call set_noise_levels)");
    }
    const double ab = alpha_bars_[t], sd = arch_.sigma_data;
    const double s2 = (1.0 - ab) / ab;
    return {1.0 / std::sqrt(ab * sd * sd + 1.0 - ab), std::sqrt(s2) / (s2 + sd * sd) / std::sqrt(ab),
            -sd / std::sqrt(s2 + sd * sd)};
  }

  Field3<Real> predict(const Field3<Real>& noisy, const Field3<Real>& condition, std::size_t t) const override {
    Cache cache;
    forward(noisy, condition, t, cache);
    return cache.output;
  }

  /// Per-sample activations kept for the backward pass.
  struct Cache {
    Shape3 s1, s2;
    detail::Vec<Real> emb, g0, h0;
    detail::Mat<Real> cols_a, a1, h1, p, cols_b, a2, h2, cols_c, a3, h3, cols_d, a4, h4, u, cols_e, a5, h5, cols_o;
    Real out_scale = Real(1);
    Field3<Real> output;
  };

  void forward(const Field3<Real>& noisy, const Field3<Real>& condition, std::size_t t, Cache& c) const {
    using namespace detail;
    require_same_shape(noisy, condition, "conv denoiser");
    const Shape3 s = noisy.shape();
    if (s.d0 % 2 || s.d1 % 2 || s.d2 % 2 || s.size() == 0) {
      throw ContractError("conv denoiser: extents must be even and positive, got " + s.str());
    }
    c.s1 = s;
    c.s2 = Shape3{s.d0 / 2, s.d1 / 2, s.d2 / 2};
    const auto n1 = static_cast<Eigen::Index>(s.size());

    const auto e = timestep_embedding(t, arch_.embed_width);
    c.emb.resize(arch_.embed_width);
    for (int i = 0; i < arch_.embed_width; ++i) c.emb[i] = static_cast<Real>(e[static_cast<std::size_t>(i)]);
    c.g0 = weights("temb0.w") * c.emb + bias("temb0.b");
    c.h0 = c.g0.unaryExpr([](Real x) { return x * sigmoid(x); });
    const Vec<Real> tb1 = weights("temb1.w") * c.h0 + bias("temb1.b");
    const Vec<Real> tb2 = weights("temb2.w") * c.h0 + bias("temb2.b");

    const Scaling sc = scaling(t);
    c.out_scale = static_cast<Real>(sc.out);
    Mat<Real> x(2, n1);
    std::copy(noisy.values().begin(), noisy.values().end(), x.row(0).data());
    std::copy(condition.values().begin(), condition.values().end(), x.row(1).data());
    if (arch_.anchor) x.row(0) -= static_cast<Real>(std::sqrt(alpha_bars_[t])) * x.row(1);
    const Mat<Real> y = x.row(0);
    if (preconditioned()) x.row(0) *= static_cast<Real>(sc.in);

    im2col(x, c.s1, c.cols_a);
    c.a1.noalias() = weights("conv_a.w") * c.cols_a;
    c.a1.colwise() += bias("conv_a.b") + tb1;
    silu(c.a1, c.h1);

    avg_pool(c.h1, c.s1, c.p);
    im2col(c.p, c.s2, c.cols_b);
    c.a2.noalias() = weights("conv_b.w") * c.cols_b;
    c.a2.colwise() += bias("conv_b.b") + tb2;
    silu(c.a2, c.h2);

    im2col(c.h2, c.s2, c.cols_c);
    c.a3.noalias() = weights("conv_c.w") * c.cols_c;
    c.a3.colwise() += bias("conv_c.b");
    silu(c.a3, c.h3);

    im2col(c.h3, c.s2, c.cols_d);
    c.a4.noalias() = weights("conv_d.w") * c.cols_d;
    c.a4.colwise() += bias("conv_d.b");
    silu(c.a4, c.h4);

    c.u = c.h1;
    upsample_add(c.h4, c.s1, c.u);
    im2col(c.u, c.s1, c.cols_e);
    c.a5.noalias() = weights("conv_e.w") * c.cols_e;
    c.a5.colwise() += bias("conv_e.b");
    silu(c.a5, c.h5);

    im2col(c.h5, c.s1, c.cols_o);
    Mat<Real> out = weights("conv_out.w") * c.cols_o;
    out.array() += bias("conv_out.b")[0];
    if (preconditioned()) {
      out *= c.out_scale;
      out += static_cast<Real>(sc.skip) * y;
    }
    c.output = Field3<Real>(s, std::vector<Real>(out.data(), out.data() + n1));
  }

  /// Accumulates d(loss)/d(theta) into `grad` given d(loss)/d(output).
  void backward(const Cache& c, const Field3<Real>& d_out, std::span<Real> grad) const {
    using namespace detail;
    const auto n1 = static_cast<Eigen::Index>(c.s1.size());
    Mat<Real> dy = MatMap<Real>(d_out.values().data(), 1, n1);
    if (preconditioned()) dy *= c.out_scale;

    accumulate(grad, "conv_out.w", dy * c.cols_o.transpose());
    accumulate(grad, "conv_out.b", dy.rowwise().sum());
    Mat<Real> dcols = weights("conv_out.w").transpose() * dy;
    Mat<Real> dh5;
    col2im(dcols, c.s1, arch_.width1, dh5);

    silu_backward(c.a5, dh5);
    accumulate(grad, "conv_e.w", dh5 * c.cols_e.transpose());
    accumulate(grad, "conv_e.b", dh5.rowwise().sum());
    dcols.noalias() = weights("conv_e.w").transpose() * dh5;
    Mat<Real> du;
    col2im(dcols, c.s1, arch_.width1, du);

    Mat<Real> dh4;
    upsample_adjoint(du, c.s1, dh4);
    Mat<Real>& dh1 = du;  // skip connection carries du straight through

    silu_backward(c.a4, dh4);
    accumulate(grad, "conv_d.w", dh4 * c.cols_d.transpose());
    accumulate(grad, "conv_d.b", dh4.rowwise().sum());
    dcols.noalias() = weights("conv_d.w").transpose() * dh4;
    Mat<Real> dh3;
    col2im(dcols, c.s2, arch_.width2, dh3);

    silu_backward(c.a3, dh3);
    accumulate(grad, "conv_c.w", dh3 * c.cols_c.transpose());
    accumulate(grad, "conv_c.b", dh3.rowwise().sum());
    dcols.noalias() = weights("conv_c.w").transpose() * dh3;
    Mat<Real> dh2;
    col2im(dcols, c.s2, arch_.width2, dh2);

    silu_backward(c.a2, dh2);
    accumulate(grad, "conv_b.w", dh2 * c.cols_b.transpose());
    const Vec<Real> dtb2 = dh2.rowwise().sum();
    accumulate(grad, "conv_b.b", dtb2);
    dcols.noalias() = weights("conv_b.w").transpose() * dh2;
    Mat<Real> dp;
    col2im(dcols, c.s2, arch_.width1, dp);

    // Average-pool adjoint: each child receives 1/8 of its parent's gradient.
    Mat<Real> spread = Mat<Real>::Zero(dp.rows(), n1);
    upsample_add(dp, c.s1, spread);
    dh1 += spread / Real(8);

    silu_backward(c.a1, dh1);
    accumulate(grad, "conv_a.w", dh1 * c.cols_a.transpose());
    const Vec<Real> dtb1 = dh1.rowwise().sum();
    accumulate(grad, "conv_a.b", dtb1);

    accumulate(grad, "temb1.w", dtb1 * c.h0.transpose());
    accumulate(grad, "temb1.b", dtb1);
    accumulate(grad, "temb2.w", dtb2 * c.h0.transpose());
    accumulate(grad, "temb2.b", dtb2);
    Vec<Real> dh0 = weights("temb1.w").transpose() * dtb1 + weights("temb2.w").transpose() * dtb2;
    for (Eigen::Index i = 0; i < dh0.size(); ++i) {
      const Real x = c.g0[i];
      const Real sg = sigmoid(x);
      dh0[i] *= sg * (Real(1) + x * (Real(1) - sg));
    }
    accumulate(grad, "temb0.w", dh0 * c.emb.transpose());
    accumulate(grad, "temb0.b", dh0);
  }

 private:
  void add(std::string name, std::size_t rows, std::size_t cols, std::size_t fan_in) {
    blocks_.push_back(ParamBlock{std::move(name), count_, rows, cols, fan_in});
    count_ += rows * cols;
  }

  [[nodiscard]] detail::MatMap<Real> weights(const std::string& name) const {
    const auto& b = block(name);
    return detail::MatMap<Real>(params_.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                                static_cast<Eigen::Index>(b.cols));
  }
  [[nodiscard]] Eigen::Map<const detail::Vec<Real>> bias(const std::string& name) const {
    const auto& b = block(name);
    return Eigen::Map<const detail::Vec<Real>>(params_.data() + b.offset, static_cast<Eigen::Index>(b.rows));
  }

  template <typename Expr>
  void accumulate(std::span<Real> grad, const std::string& name, const Expr& value) const {
    const auto& b = block(name);
    detail::MatMapMut<Real> dst(grad.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                                static_cast<Eigen::Index>(b.cols));
    dst += value;
  }

  ConvNetArch arch_;
  std::vector<double> alpha_bars_;
  std::vector<ParamBlock> blocks_;
  std::size_t count_ = 0;
  std::vector<Real> params_;
};

}  // namespace sparsebeam
