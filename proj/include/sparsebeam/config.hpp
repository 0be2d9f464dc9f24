#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsebeam/binary_io.hpp"
#include "sparsebeam/experiment.hpp"
#include "sparsebeam/model_io.hpp"
#include "sparsebeam/pipeline.hpp"
#include "sparsebeam/training.hpp"

namespace sparsebeam {

namespace detail {

// Throws ConfigError naming `where/key` for any key outside `allowed`.
inline void reject_unknown(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + where + "/" + key + "'");
  }
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "/" + key + " has the wrong type");
  }
}

}  // namespace detail

inline TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& where = "train") {
  detail::reject_unknown(j, where,
                         {"iterations", "batch", "lr_start", "lr_end", "beta1", "beta2", "weight_decay", "seed", "workers"});
  TrainConfig c;
  detail::read_if(j, "iterations", c.iterations, where);
  detail::read_if(j, "batch", c.batch, where);
  detail::read_if(j, "lr_start", c.lr_start, where);
  detail::read_if(j, "lr_end", c.lr_end, where);
  detail::read_if(j, "beta1", c.beta1, where);
  detail::read_if(j, "beta2", c.beta2, where);
  detail::read_if(j, "weight_decay", c.weight_decay, where);
  detail::read_if(j, "seed", c.seed, where);
  detail::read_if(j, "workers", c.workers, where);
  if (c.batch < 1) throw ConfigError(where + "/batch must be >= 1");
  if (c.workers < 1) throw ConfigError(where + "/workers must be >= 1");
  if (!(c.lr_start > 0) || !(c.lr_end > 0) || c.lr_end > c.lr_start) {
    throw ConfigError(where + ": require 0 < lr_end <= lr_start");
  }
  return c;
}

/// Everything a command needs, from one JSON document. Unknown keys anywhere
/// are rejected before any stage runs.
struct ExperimentConfig {
  ScanPreset preset = desk_preset();
  NoiseSchedule schedule = make_linear_schedule(1000, 1e-4, 2e-2);
  Shape3 sub_size{16, 16, 16};
  ConvNetArch arch_p;
  ConvNetArch arch_i;
  TrainConfig train_p;
  TrainConfig train_i;
  PipelineConfig pipeline;
  std::uint64_t train_seed_base = 1000;
  std::size_t train_count = 20;
  std::uint64_t test_seed_base = 9000;
  std::size_t test_count = 5;
  std::size_t image_train_subjects = 0;
  std::uint64_t init_seed = 1;
  std::string output_dir = ".";

  /// Pipeline settings with the shared schedule, grid and preset applied.
  [[nodiscard]] PipelineConfig pipeline_config() const {
    PipelineConfig c = pipeline;
    c.schedule = schedule;
    c.sub_size = sub_size;
    c.geometry_preset = preset.name;
    return c;
  }

  [[nodiscard]] ExperimentOptions experiment_options() const {
    ExperimentOptions o;
    o.preset = preset;
    o.n_train = train_count;
    o.n_test = test_count;
    o.train_seed_base = train_seed_base;
    o.test_seed_base = test_seed_base;
    o.keep_every = pipeline.keep_every;
    o.image_train_subjects = image_train_subjects;
    o.arch_p = arch_p;
    o.arch_i = arch_i;
    o.init_seed = init_seed;
    o.train_p = train_p;
    o.train_i = train_i;
    o.pipeline = pipeline_config();
    return o;
  }
};

[[nodiscard]] inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, "", {"geometry_preset", "geometry", "schedule", "grid", "model_p", "model_i", "train_p",
                                 "train_i", "pipeline", "dataset", "output_dir"});
  ExperimentConfig c;
  std::string preset = "desk";
  detail::read_if(j, "geometry_preset", preset, "");
  c.preset = preset_by_name(preset);
  if (j.contains("geometry")) c.preset.geometry = geometry_from_json(j.at("geometry"), c.preset.geometry);
  if (j.contains("schedule")) c.schedule = schedule_from_json(j.at("schedule"));
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    detail::reject_unknown(g, "/grid", {"sub_size"});
    std::vector<std::size_t> s{16, 16, 16};
    detail::read_if(g, "sub_size", s, "/grid");
    if (s.size() != 3 || s[0] == 0 || s[1] == 0 || s[2] == 0) throw ConfigError("/grid/sub_size needs 3 positive entries");
    c.sub_size = {s[0], s[1], s[2]};
  }
  if (j.contains("model_p")) c.arch_p = arch_from_json(j.at("model_p"));
  if (j.contains("model_i")) c.arch_i = arch_from_json(j.at("model_i"));
  if (j.contains("train_p")) c.train_p = train_config_from_json(j.at("train_p"), "/train_p");
  if (j.contains("train_i")) c.train_i = train_config_from_json(j.at("train_i"), "/train_i");
  if (j.contains("pipeline")) {
    const auto& p = j.at("pipeline");
    if (p.is_object() && (p.contains("schedule") || p.contains("sub_size") || p.contains("geometry_preset"))) {
      throw ConfigError("/pipeline: schedule, sub_size and geometry_preset are set at the top level");
    }
    c.pipeline = pipeline_config_from_json(p);
  }
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::reject_unknown(d, "/dataset",
                           {"train_seed_base", "train_count", "test_seed_base", "test_count", "image_train_subjects",
                            "init_seed"});
    detail::read_if(d, "train_seed_base", c.train_seed_base, "/dataset");
    detail::read_if(d, "train_count", c.train_count, "/dataset");
    detail::read_if(d, "test_seed_base", c.test_seed_base, "/dataset");
    detail::read_if(d, "test_count", c.test_count, "/dataset");
    detail::read_if(d, "image_train_subjects", c.image_train_subjects, "/dataset");
    detail::read_if(d, "init_seed", c.init_seed, "/dataset");
    if (c.train_count == 0) throw ConfigError("/dataset/train_count must be >= 1");
  }
  detail::read_if(j, "output_dir", c.output_dir, "");
  if (c.preset.geometry.n_views % c.pipeline.keep_every != 0) {
    throw ConfigError("/pipeline/keep_every " + std::to_string(c.pipeline.keep_every) + " does not divide " +
                      std::to_string(c.preset.geometry.n_views) + " views");
  }
  return c;
}

[[nodiscard]] inline nlohmann::json to_json(const ExperimentConfig& c) {
  auto pipeline = to_json(c.pipeline);
  pipeline.erase("schedule");
  pipeline.erase("sub_size");
  pipeline.erase("geometry_preset");
  auto train_p = to_json(c.train_p);
  auto train_i = to_json(c.train_i);
  return {{"geometry_preset", c.preset.name},
          {"geometry", to_json(c.preset.geometry)},
          {"schedule", to_json(c.schedule)},
          {"grid", {{"sub_size", {c.sub_size.d0, c.sub_size.d1, c.sub_size.d2}}}},
          {"model_p", to_json(c.arch_p)},
          {"model_i", to_json(c.arch_i)},
          {"train_p", train_p},
          {"train_i", train_i},
          {"pipeline", pipeline},
          {"dataset",
           {{"train_seed_base", c.train_seed_base},
            {"train_count", c.train_count},
            {"test_seed_base", c.test_seed_base},
            {"test_count", c.test_count},
            {"image_train_subjects", c.image_train_subjects},
            {"init_seed", c.init_seed}}},
          {"output_dir", c.output_dir}};
}

[[nodiscard]] inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = read_json_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return experiment_config_from_json(j);
}

}  // namespace sparsebeam
