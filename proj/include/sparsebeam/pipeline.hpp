#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsebeam/checksum.hpp"
#include "sparsebeam/diffusion.hpp"
#include "sparsebeam/fdk.hpp"
#include "sparsebeam/projector.hpp"
#include "sparsebeam/subvolume_grid.hpp"
#include "sparsebeam/volumes.hpp"
#include "sparsebeam/worker_pool.hpp"

namespace sparsebeam {

/// Per-block sampling seeds for one domain, index-aligned with a grid.
[[nodiscard]] inline std::vector<std::uint64_t> derive_block_seeds(std::uint64_t run_seed, Domain domain,
                                                                   std::size_t count) {
  std::vector<std::uint64_t> seeds(count);
  for (std::size_t b = 0; b < count; ++b) seeds[b] = block_seed(run_seed, domain, b);
  return seeds;
}

struct BlockOptions {
  std::size_t workers = 1;
  /// Denoisers see field values multiplied by this factor.
  double gain = 1.0;
  /// Overwrite present-view voxels with measurements after sampling.
  bool data_consistency = true;
};

namespace detail {

// Samples every block of `field` conditioned on itself, then reassembles.
// Each block writes only its own slot; the bitmap check in assemble() asserts
// every block arrives exactly once.
inline Field3<float> sample_blocks(const Field3<float>& field, const Denoiser<float>& denoiser,
                                   const NoiseSchedule& schedule, const SubVolumeGrid& grid,
                                   const std::vector<std::uint64_t>& seeds, const BlockOptions& opt,
                                   const char* domain) {
  if (seeds.size() != grid.count()) {
    throw ContractError(std::string(domain) + ": " + std::to_string(seeds.size()) + " seeds for " +
                        std::to_string(grid.count()) + " blocks");
  }
  std::vector<SubVolume<float>> out(grid.count());
  parallel_for(grid.count(), opt.workers, [&](std::size_t b) {
    try {
      Field3<float> cond = extract_block(field, grid, b);
      if (opt.gain != 1.0) {
        for (float& v : cond.values()) v = static_cast<float>(static_cast<double>(v) * opt.gain);
      }
      Field3<float> y = sample(cond, denoiser, schedule, seeds[b]);
      if (opt.gain != 1.0) {
        for (float& v : y.values()) v = static_cast<float>(static_cast<double>(v) / opt.gain);
      }
      out[b] = SubVolume<float>{b, std::move(y)};
    } catch (const Error& e) {
      throw BlockTaskError(std::string(domain) + " block " + std::to_string(b) + ": " + e.what(), b, e.exit_code());
    }
  });
  return assemble(out, grid);
}

}  // namespace detail

/// Projection-domain inpainting: every block of the sparse data, absent views
/// filled per `fill`, conditions one reverse-diffusion run; present views are
/// then restored from the measurements when data consistency is on.
[[nodiscard]] inline ProjectionSet inpaint_projections(const ProjectionSet& sparse, const Denoiser<float>& denoiser,
                                                       const NoiseSchedule& schedule, const SubVolumeGrid& grid,
                                                       const std::vector<std::uint64_t>& seeds,
                                                       const BlockOptions& opt = {},
                                                       ViewFill fill = ViewFill::zero) {
  sparse.check();
  if (grid.source_dims() != sparse.data.shape()) {
    throw ShapeError("inpaint: grid " + grid.source_dims().str() + " vs projections " + sparse.data.shape().str());
  }
  ProjectionSet out(sparse.geometry);
  out.data = detail::sample_blocks(fill_views(sparse, fill).data, denoiser, schedule, grid, seeds, opt, "projection");
  if (opt.data_consistency) {
    const std::size_t per_view = sparse.geometry.det_rows * sparse.geometry.det_cols;
    for (std::size_t k = 0; k < sparse.geometry.n_views; ++k) {
      if (!sparse.view_mask[k]) continue;
      std::copy_n(sparse.data.values().begin() + static_cast<std::ptrdiff_t>(k * per_view), per_view,
                  out.data.values().begin() + static_cast<std::ptrdiff_t>(k * per_view));
    }
  }
  return out;
}

/// Image-domain refinement: each block of the degraded volume conditions one
/// reverse-diffusion run.
[[nodiscard]] inline ImageVolume refine_image(const ImageVolume& degraded, const Denoiser<float>& denoiser,
                                              const NoiseSchedule& schedule, const SubVolumeGrid& grid,
                                              const std::vector<std::uint64_t>& seeds, const BlockOptions& opt = {}) {
  if (grid.source_dims() != degraded.dims()) {
    throw ShapeError("refine: grid " + grid.source_dims().str() + " vs volume " + degraded.dims().str());
  }
  return ImageVolume{detail::sample_blocks(degraded.data, denoiser, schedule, grid, seeds, opt, "image"),
                     degraded.voxel_size};
}

struct PipelineConfig {
  std::uint64_t run_seed = 0;
  std::size_t workers = 1;
  NoiseSchedule schedule = make_linear_schedule(1000, 1e-4, 2e-2);
  std::string denoiser_p;
  std::string denoiser_i;
  std::string geometry_preset = "desk";
  std::size_t keep_every = 3;
  Shape3 sub_size{16, 16, 16};
  bool data_consistency = true;
  bool refine = true;
  double projection_gain = 1.0;
  double image_gain = 50.0;
  FilterWindow filter = FilterWindow::ram_lak;
  ViewFill view_fill = ViewFill::linear;
};

/// Everything that determines a run's results. Worker count is deliberately
/// absent: it never changes outputs.
inline nlohmann::json to_json(const PipelineConfig& c) {
  return {{"run_seed", c.run_seed},
          {"schedule", to_json(c.schedule)},
          {"denoiser_p", c.denoiser_p},
          {"denoiser_i", c.denoiser_i},
          {"geometry_preset", c.geometry_preset},
          {"keep_every", c.keep_every},
          {"sub_size", {c.sub_size.d0, c.sub_size.d1, c.sub_size.d2}},
          {"data_consistency", c.data_consistency},
          {"refine", c.refine},
          {"projection_gain", c.projection_gain},
          {"image_gain", c.image_gain},
          {"filter", c.filter == FilterWindow::ram_lak ? "ramlak" : "hann"},
          {"view_fill", to_string(c.view_fill)}};
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("pipeline: expected an object");
  PipelineConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "run_seed") c.run_seed = v.get<std::uint64_t>();
      else if (key == "workers") c.workers = v.get<std::size_t>();
      else if (key == "schedule") c.schedule = schedule_from_json(v);
      else if (key == "denoiser_p") c.denoiser_p = v.get<std::string>();
      else if (key == "denoiser_i") c.denoiser_i = v.get<std::string>();
      else if (key == "geometry_preset") c.geometry_preset = v.get<std::string>();
      else if (key == "keep_every") c.keep_every = v.get<std::size_t>();
      else if (key == "sub_size") {
        const auto s = v.get<std::vector<std::size_t>>();
        if (s.size() != 3) throw ConfigError("pipeline: sub_size needs 3 entries");
        c.sub_size = {s[0], s[1], s[2]};
      } else if (key == "data_consistency") c.data_consistency = v.get<bool>();
      else if (key == "refine") c.refine = v.get<bool>();
      else if (key == "projection_gain") c.projection_gain = v.get<double>();
      else if (key == "image_gain") c.image_gain = v.get<double>();
      else if (key == "filter") c.filter = window_from_string(v.get<std::string>());
      else if (key == "view_fill") c.view_fill = view_fill_from_string(v.get<std::string>());
      else throw ConfigError("pipeline: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pipeline: ") + e.what());
  }
  if (c.workers < 1) throw ConfigError("pipeline: workers must be >= 1");
  if (c.keep_every < 1) throw ConfigError("pipeline: keep_every must be >= 1");
  if (!(c.projection_gain > 0) || !(c.image_gain > 0)) throw ConfigError("pipeline: gains must be positive");
  return c;
}

/// Audit record of one run. `execution` (worker count, timings) is the only
/// part allowed to differ between reruns.
struct RunManifest {
  nlohmann::json config;
  nlohmann::json projection_grid;
  nlohmann::json image_grid;
  std::vector<std::uint64_t> projection_seeds;
  std::vector<std::uint64_t> image_seeds;
  std::map<std::string, std::string> checksums;
  std::vector<std::string> completed_stages;
  std::vector<std::pair<std::string, double>> timings;
  std::size_t workers = 1;

  [[nodiscard]] nlohmann::json reproducible() const {
    nlohmann::json j = {{"config", config},
                        {"grids", {{"projection", projection_grid}, {"image", image_grid}}},
                        {"seeds", {{"projection", projection_seeds}, {"image", image_seeds}}},
                        {"checksums", checksums},
                        {"completed_stages", completed_stages}};
    return j;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j = reproducible();
    nlohmann::json t = nlohmann::json::object();
    for (const auto& [stage, secs] : timings) t[stage] = secs;
    j["execution"] = {{"workers", workers}, {"timings_s", t}};
    return j;
  }
};

/// A pipeline stage failed; carries the stage name and the manifest of the
/// stages that completed before it.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const Error& cause, nlohmann::json manifest)
      : Error("stage '" + stage + "' failed: " + cause.what()),
        stage_(stage),
        code_(cause.exit_code()),
        manifest_(std::move(manifest)) {}
  [[nodiscard]] const std::string& stage() const noexcept { return stage_; }
  [[nodiscard]] const nlohmann::json& manifest() const noexcept { return manifest_; }
  [[nodiscard]] ExitCode exit_code() const noexcept override { return code_; }

 private:
  std::string stage_;
  ExitCode code_;
  nlohmann::json manifest_;
};

struct RunResult {
  ImageVolume volume;
  ProjectionSet inpainted;
  ImageVolume fdk;
  RunManifest manifest;
};

/// Dual-domain reconstruction: inpaint projections block-wise, assemble (the
/// single barrier between domains), reconstruct with FDK over all views, then
/// refine the image block-wise. `denoiser_i` may be null when refinement is off.
[[nodiscard]] inline RunResult run(const PipelineConfig& config, const ProjectionSet& sparse, Shape3 out_dims,
                                   double voxel_size, const Denoiser<float>& denoiser_p,
                                   const Denoiser<float>* denoiser_i) {
  RunResult result;
  RunManifest& m = result.manifest;
  m.config = to_json(config);
  m.workers = config.workers;
  using clock = std::chrono::steady_clock;

  auto stage = [&](const std::string& name, auto&& body) {
    const auto start = clock::now();
    try {
      body();
    } catch (const Error& e) {
      throw StageError(name, e, m.to_json());
    }
    m.timings.emplace_back(name, std::chrono::duration<double>(clock::now() - start).count());
    m.completed_stages.push_back(name);
  };

  stage("inpaint", [&] {
    sparse.check();
    m.checksums["input_sparse"] = checksum_string<float>(sparse.data.values());
    const SubVolumeGrid grid(sparse.data.shape(), config.sub_size);
    m.projection_grid = to_json(grid);
    m.projection_seeds = derive_block_seeds(config.run_seed, Domain::projection, grid.count());
    result.inpainted = inpaint_projections(
        sparse, denoiser_p, config.schedule, grid, m.projection_seeds,
        BlockOptions{config.workers, config.projection_gain, config.data_consistency}, config.view_fill);
    m.checksums["inpainted_projections"] = checksum_string<float>(result.inpainted.data.values());
  });

  stage("fdk", [&] {
    result.fdk = fdk_reconstruct(result.inpainted, out_dims, voxel_size, config.filter, ViewSelection::all,
                                 config.workers);
    m.checksums["fdk_volume"] = checksum_string<float>(result.fdk.data.values());
  });

  if (config.refine) {
    stage("refine", [&] {
      if (denoiser_i == nullptr) throw ConfigError("refinement enabled but no image-domain denoiser given");
      const SubVolumeGrid grid(out_dims, config.sub_size);
      m.image_grid = to_json(grid);
      m.image_seeds = derive_block_seeds(config.run_seed, Domain::image, grid.count());
      result.volume = refine_image(result.fdk, *denoiser_i, config.schedule, grid, m.image_seeds,
                                   BlockOptions{config.workers, config.image_gain, false});
    });
  } else {
    result.volume = result.fdk;
  }
  m.checksums["output_volume"] = checksum_string<float>(result.volume.data.values());
  return result;
}

}  // namespace sparsebeam
