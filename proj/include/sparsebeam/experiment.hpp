#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsebeam/conv_net.hpp"
#include "sparsebeam/fdk.hpp"
#include "sparsebeam/metrics.hpp"
#include "sparsebeam/phantom.hpp"
#include "sparsebeam/pipeline.hpp"
#include "sparsebeam/projector.hpp"
#include "sparsebeam/training.hpp"

namespace sparsebeam {

/// Copies the `size` box starting at `origin`; voxels past the field's end read as zero.
template <typename Real>
[[nodiscard]] Field3<Real> crop_block(const Field3<Real>& f, std::array<std::size_t, 3> origin, Shape3 size) {
  Field3<Real> out(size);
  const Shape3& s = f.shape();
  for (std::size_t z = 0; z < size.d0 && origin[0] + z < s.d0; ++z)
    for (std::size_t y = 0; y < size.d1 && origin[1] + y < s.d1; ++y)
      for (std::size_t x = 0; x < size.d2 && origin[2] + x < s.d2; ++x) {
        out(z, y, x) = f(origin[0] + z, origin[1] + y, origin[2] + x);
      }
  return out;
}

/// Draws aligned blocks from (clean, condition) field pairs. Block origins are
/// uniform over the zero-padded grid extent, so edge blocks look the way the
/// pipeline presents them. Both members are multiplied by `gain`.
template <typename Real>
[[nodiscard]] PairSampler<Real> block_pair_sampler(std::shared_ptr<const std::vector<Field3<Real>>> clean,
                                                   std::shared_ptr<const std::vector<Field3<Real>>> condition,
                                                   Shape3 sub, double gain) {
  if (clean->empty() || clean->size() != condition->size()) throw ConfigError("pair sampler: empty or unaligned data");
  for (std::size_t i = 0; i < clean->size(); ++i) require_same_shape((*clean)[i], (*condition)[i], "pair sampler");
  return [clean, condition, sub, gain](std::mt19937_64& eng) {
    const std::size_t item = std::uniform_int_distribution<std::size_t>(0, clean->size() - 1)(eng);
    const Shape3 padded = SubVolumeGrid((*clean)[item].shape(), sub).padded_dims();
    std::array<std::size_t, 3> origin{};
    for (std::size_t a = 0; a < 3; ++a) origin[a] = std::uniform_int_distribution<std::size_t>(0, padded[a] - sub[a])(eng);
    auto c = crop_block((*clean)[item], origin, sub);
    auto z = crop_block((*condition)[item], origin, sub);
    if (gain != 1.0) {
      for (auto& v : c.values()) v = static_cast<Real>(static_cast<double>(v) * gain);
      for (auto& v : z.values()) v = static_cast<Real>(static_cast<double>(v) * gain);
    }
    return std::pair{std::move(c), std::move(z)};
  };
}

/// One synthetic subject: phantom, its full-view scan and the full-view FDK
/// reference volume.
struct Subject {
  std::uint64_t seed = 0;
  EllipsoidPhantom phantom;
  ProjectionSet full;
  ImageVolume reference;
};

[[nodiscard]] inline Subject make_subject(std::uint64_t seed, const ScanPreset& preset, FilterWindow filter,
                                          std::size_t workers) {
  Subject s;
  s.seed = seed;
  s.phantom = random_phantom(seed);
  s.full = project_analytic(s.phantom, preset.geometry, workers);
  s.reference = fdk_reconstruct(s.full, preset.volume_dims, preset.voxel_size, filter, ViewSelection::all, workers);
  return s;
}

struct ExperimentOptions {
  ScanPreset preset = desk_preset();
  std::size_t n_train = 20;
  std::size_t n_test = 5;
  std::uint64_t train_seed_base = 1000;
  std::uint64_t test_seed_base = 9000;
  std::size_t keep_every = 3;
  std::size_t compare_keep_every = 2;
  /// Training subjects whose DDPM-P output feeds DDPM-I training (all when 0).
  std::size_t image_train_subjects = 0;
  ConvNetArch arch_p;
  ConvNetArch arch_i;
  std::uint64_t init_seed = 1;
  TrainConfig train_p;
  TrainConfig train_i;
  PipelineConfig pipeline;
};

struct SubjectScores {
  std::uint64_t seed = 0;
  Metrics pipeline;
  Metrics inpaint_fdk;
  Metrics sparse_fdk;
  Metrics compare_fdk;
};

struct ExperimentResult {
  std::vector<double> losses_p;
  std::vector<double> losses_i;
  std::vector<SubjectScores> scores;
  ConvDenoiser<float> model_p;
  ConvDenoiser<float> model_i;
};

inline nlohmann::json to_json(const SubjectScores& s) {
  return {{"seed", s.seed},
          {"pipeline", to_json(s.pipeline)},
          {"inpaint_fdk", to_json(s.inpaint_fdk)},
          {"sparse_fdk", to_json(s.sparse_fdk)},
          {"compare_fdk", to_json(s.compare_fdk)}};
}

/// Sampling seed for the DDPM-P pass that turns a training subject into a DDPM-I pair.
[[nodiscard]] inline std::uint64_t image_training_seed(std::uint64_t run_seed, std::uint64_t subject_seed) {
  return derive_key({run_seed, subject_seed, 0x5eedULL});
}

using Logger = std::function<void(const std::string&)>;

/// Trains DDPM-P on (full, sparse) projection blocks, runs it over the
/// training scans to build DDPM-I pairs (FDK of inpainted data vs full-view
/// FDK), trains DDPM-I, then scores the dual-domain pipeline and sparse-view
/// FDK baselines on held-out subjects against their full-view FDK.
[[nodiscard]] inline ExperimentResult run_experiment(const ExperimentOptions& o, const Logger& log = {}) {
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  const auto& preset = o.preset;
  const std::size_t workers = o.pipeline.workers;
  PipelineConfig pc = o.pipeline;
  pc.keep_every = o.keep_every;

  std::vector<Subject> subjects;
  for (std::size_t i = 0; i < o.n_train; ++i) {
    subjects.push_back(make_subject(o.train_seed_base + i, preset, pc.filter, workers));
  }
  say("prepared " + std::to_string(subjects.size()) + " training subjects");

  auto full_p = std::make_shared<std::vector<Field3<float>>>();
  auto sparse_p = std::make_shared<std::vector<Field3<float>>>();
  for (const auto& s : subjects) {
    full_p->push_back(s.full.data);
    sparse_p->push_back(fill_views(downsample_views(s.full, o.keep_every), pc.view_fill).data);
  }

  ExperimentResult r{{}, {}, {}, ConvDenoiser<float>(o.arch_p), ConvDenoiser<float>(o.arch_i)};
  r.model_p.initialize(o.init_seed);
  r.model_p.set_noise_levels(pc.schedule);
  auto progress = [&](const char* tag) {
    return [&, tag](std::size_t k, double loss) {
      if ((k + 1) % 250 == 0) say(std::string(tag) + " iteration " + std::to_string(k + 1) + " loss " + std::to_string(loss));
    };
  };
  r.losses_p = train(r.model_p, block_pair_sampler<float>(full_p, sparse_p, pc.sub_size, pc.projection_gain), o.train_p,
                     pc.schedule, progress("ddpm-p"))
                   .losses;

  const std::size_t n_img = o.image_train_subjects == 0 ? subjects.size() : std::min(o.image_train_subjects, subjects.size());
  auto ref_i = std::make_shared<std::vector<Field3<float>>>();
  auto degraded_i = std::make_shared<std::vector<Field3<float>>>();
  for (std::size_t i = 0; i < n_img; ++i) {
    PipelineConfig stage = pc;
    stage.refine = false;
    stage.run_seed = image_training_seed(pc.run_seed, subjects[i].seed);
    const auto out = run(stage, downsample_views(subjects[i].full, o.keep_every), preset.volume_dims, preset.voxel_size,
                         r.model_p, nullptr);
    ref_i->push_back(subjects[i].reference.data);
    degraded_i->push_back(out.volume.data);
    say("inpainted training subject " + std::to_string(i + 1) + "/" + std::to_string(n_img));
  }
  r.model_i.initialize(o.init_seed + 1);
  r.model_i.set_noise_levels(pc.schedule);
  r.losses_i = train(r.model_i, block_pair_sampler<float>(ref_i, degraded_i, pc.sub_size, pc.image_gain), o.train_i,
                     pc.schedule, progress("ddpm-i"))
                   .losses;

  for (std::size_t i = 0; i < o.n_test; ++i) {
    const auto s = make_subject(o.test_seed_base + i, preset, pc.filter, workers);
    const auto sparse = downsample_views(s.full, o.keep_every);
    SubjectScores sc;
    sc.seed = s.seed;
    PipelineConfig run_cfg = pc;
    run_cfg.run_seed = pc.run_seed + s.seed;
    const auto out = run(run_cfg, sparse, preset.volume_dims, preset.voxel_size, r.model_p, &r.model_i);
    sc.pipeline = evaluate_metrics(out.volume.data, s.reference.data);
    sc.inpaint_fdk = evaluate_metrics(out.fdk.data, s.reference.data);
    sc.sparse_fdk = evaluate_metrics(
        fdk_reconstruct(sparse, preset.volume_dims, preset.voxel_size, pc.filter, ViewSelection::present, workers).data,
        s.reference.data);
    sc.compare_fdk = evaluate_metrics(fdk_reconstruct(downsample_views(s.full, o.compare_keep_every), preset.volume_dims,
                                                      preset.voxel_size, pc.filter, ViewSelection::present, workers)
                                          .data,
                                      s.reference.data);
    r.scores.push_back(sc);
    say("test subject " + std::to_string(s.seed) + ": " + to_json(sc).dump());
  }
  return r;
}

}  // namespace sparsebeam
