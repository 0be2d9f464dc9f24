#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sparsebeam/config.hpp"
#include "sparsebeam/experiment.hpp"
#include "sparsebeam/fdk.hpp"
#include "sparsebeam/image_export.hpp"
#include "sparsebeam/metrics.hpp"
#include "sparsebeam/model_io.hpp"
#include "sparsebeam/phantom.hpp"
#include "sparsebeam/pipeline.hpp"
#include "sparsebeam/projector.hpp"
#include "sparsebeam/volume_io.hpp"

namespace sparsebeam::cli {

namespace fs = std::filesystem;

/// Keeps freed conv-net scratch buffers in the heap instead of returning them
/// to the kernel after every layer; training otherwise spends a third of its
/// time in mmap/munmap.
inline void retain_heap() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

/// SPARSEBEAM_WORKERS, when set to a positive integer, overrides `fallback`.
inline std::size_t workers_from_env(std::size_t fallback) {
  const char* v = std::getenv("SPARSEBEAM_WORKERS");
  if (v == nullptr || *v == '\0') return fallback;
  try {
    std::size_t used = 0;
    const long n = std::stol(v, &used);
    if (used != std::string(v).size() || n < 1) throw ConfigError("");
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ConfigError(std::string("SPARSEBEAM_WORKERS must be a positive integer, got '") + v + "'");
  }
}

inline fs::path with_suffix(const fs::path& prefix, const std::string& suffix) {
  return fs::path(prefix.string() + suffix);
}

inline void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

/// Phantom documents are configuration: malformed JSON is a config error.
inline EllipsoidPhantom load_phantom(const fs::path& path) {
  nlohmann::json j;
  try {
    j = read_json_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return phantom_from_json(j);
}

inline fs::path resolve_against(const fs::path& base_dir, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : fs::absolute(base_dir / path);
}

struct PhantomArgs {
  std::string spec;
  std::optional<std::uint64_t> random_seed;
  std::string preset = "desk";
  std::string out;
};

inline void cmd_phantom(const PhantomArgs& a, std::ostream& out) {
  const ScanPreset preset = preset_by_name(a.preset);
  EllipsoidPhantom phantom;
  if (a.random_seed) {
    phantom = random_phantom(*a.random_seed);
  } else {
    if (a.spec.empty()) throw ConfigError("phantom: give --spec or --random");
    phantom = load_phantom(a.spec);
  }
  phantom.check_fits(preset.geometry);
  const auto volume = voxelize(phantom, preset.volume_dims, preset.voxel_size);
  const fs::path prefix(a.out);
  ensure_parent(prefix);
  write_json_file(with_suffix(prefix, ".phantom.json"), to_json(phantom));
  save_volume(volume, with_suffix(prefix, ".volume.json"));
  out << "wrote " << with_suffix(prefix, ".phantom.json").string() << " and " << with_suffix(prefix, ".volume.json").string()
      << '\n';
}

struct ScanArgs {
  std::string phantom;
  std::string volume;
  std::string preset = "desk";
  std::size_t views = 0;
  std::size_t keep_every = 1;
  std::string out;
};

inline void cmd_scan(const ScanArgs& a, std::size_t workers, std::ostream& out) {
  ScanPreset preset = preset_by_name(a.preset);
  if (a.views > 0) preset.geometry.n_views = a.views;
  preset.geometry.validate();
  if (a.keep_every < 1 || preset.geometry.n_views % a.keep_every != 0) {
    throw ConfigError("keep_every " + std::to_string(a.keep_every) + " does not divide " +
                      std::to_string(preset.geometry.n_views) + " views");
  }
  ProjectionSet full;
  if (!a.phantom.empty() == !a.volume.empty()) throw ConfigError("scan: give exactly one of --phantom or --volume");
  if (!a.phantom.empty()) {
    const auto phantom = load_phantom(a.phantom);
    phantom.check_fits(preset.geometry);
    full = project_analytic(phantom, preset.geometry, workers);
  } else {
    full = project(load_volume(a.volume), preset.geometry, workers);
  }
  const auto sparse = downsample_views(full, a.keep_every);
  const fs::path prefix(a.out);
  ensure_parent(prefix);
  save_projections(full, with_suffix(prefix, ".full.json"));
  save_projections(sparse, with_suffix(prefix, ".sparse.json"));
  out << "scanned " << full.geometry.n_views << " views, " << sparse.present_views() << " present after keep_every "
      << a.keep_every << '\n';
}

struct TrainArgs {
  std::string domain;
  std::string config;
  std::string model_p;
  std::string out;
  std::string history;
};

inline void write_history(const fs::path& path, const std::vector<double>& losses, const TrainConfig& c) {
  std::ostringstream s;
  s << "iteration,loss,learning_rate\n" << std::setprecision(17);
  for (std::size_t k = 0; k < losses.size(); ++k) s << k << ',' << losses[k] << ',' << c.learning_rate(k) << '\n';
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << s.str();
  if (!f) throw IoError("write failed: " + path.string());
}

inline void cmd_train(const TrainArgs& a, std::size_t workers, std::ostream& out) {
  const fs::path cfg_path(a.config);
  ExperimentConfig cfg = load_experiment_config(cfg_path);
  if (a.domain != "p" && a.domain != "i") throw ConfigError("train: --domain must be p or i");
  const bool proj = a.domain == "p";
  std::optional<ConvDenoiser<float>> model_p;
  if (!proj) {
    if (a.model_p.empty()) throw ConfigError("train --domain i needs --model-p (the trained projection model)");
    model_p = load_model<float>(a.model_p);
  }
  TrainConfig tc = proj ? cfg.train_p : cfg.train_i;
  tc.workers = workers;
  PipelineConfig pc = cfg.pipeline_config();
  pc.workers = workers;

  std::vector<Subject> subjects;
  for (std::size_t i = 0; i < cfg.train_count; ++i) {
    subjects.push_back(make_subject(cfg.train_seed_base + i, cfg.preset, pc.filter, workers));
  }
  auto clean = std::make_shared<std::vector<Field3<float>>>();
  auto cond = std::make_shared<std::vector<Field3<float>>>();
  if (proj) {
    for (const auto& s : subjects) {
      clean->push_back(s.full.data);
      cond->push_back(fill_views(downsample_views(s.full, pc.keep_every), pc.view_fill).data);
    }
  } else {
    const std::size_t n = cfg.image_train_subjects == 0 ? subjects.size()
                                                        : std::min(cfg.image_train_subjects, subjects.size());
    for (std::size_t i = 0; i < n; ++i) {
      PipelineConfig stage = pc;
      stage.refine = false;
      stage.run_seed = image_training_seed(pc.run_seed, subjects[i].seed);
      const auto r = run(stage, downsample_views(subjects[i].full, pc.keep_every), cfg.preset.volume_dims,
                         cfg.preset.voxel_size, *model_p, nullptr);
      clean->push_back(subjects[i].reference.data);
      cond->push_back(r.volume.data);
    }
  }
  ConvDenoiser<float> net(proj ? cfg.arch_p : cfg.arch_i);
  net.initialize(proj ? cfg.init_seed : cfg.init_seed + 1);
  net.set_noise_levels(pc.schedule);
  const auto result = train(net, block_pair_sampler<float>(clean, cond, pc.sub_size, proj ? pc.projection_gain : pc.image_gain),
                            tc, pc.schedule);
  const fs::path model_path(a.out);
  ensure_parent(model_path);
  save_model(net, model_path);
  const fs::path hist = a.history.empty() ? fs::path(model_path).replace_extension(".history.csv") : fs::path(a.history);
  write_history(hist, result.losses, tc);
  out << "trained " << (proj ? "projection" : "image") << " model for " << tc.iterations << " iterations -> "
      << model_path.string() << '\n';
}

struct ReconstructArgs {
  std::string config;
  std::string projections;
  std::string manifest;
  std::string method = "pipeline";
  std::string filter;
  std::string views = "present";
  std::string out;
};

inline void cmd_reconstruct(const ReconstructArgs& a, std::size_t workers, std::ostream& out) {
  const auto sparse = load_projections(a.projections);
  PipelineConfig pc;
  ScanPreset preset;
  std::optional<nlohmann::json> expected;
  if (!a.manifest.empty()) {
    nlohmann::json m;
    try {
      m = read_json_file(a.manifest);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
    if (!m.is_object() || !m.contains("config") || !m.contains("checksums")) {
      throw ConfigError(a.manifest + ": not a run manifest");
    }
    pc = pipeline_config_from_json(m.at("config"));
    preset = preset_by_name(pc.geometry_preset);
    expected = m.at("checksums");
  } else {
    if (a.config.empty()) throw ConfigError("reconstruct: give --config or --manifest");
    const fs::path cfg_path(a.config);
    const ExperimentConfig cfg = load_experiment_config(cfg_path);
    pc = cfg.pipeline_config();
    preset = cfg.preset;
    const fs::path base = fs::absolute(cfg_path).parent_path();
    pc.denoiser_p = resolve_against(base, pc.denoiser_p).string();
    pc.denoiser_i = resolve_against(base, pc.denoiser_i).string();
  }
  pc.workers = workers;
  if (!a.filter.empty()) {
    if (expected) throw ConfigError("reconstruct: --filter cannot override a manifest");
    pc.filter = window_from_string(a.filter);
  }
  if (a.views != "present" && a.views != "all") throw ConfigError("reconstruct: --views must be all or present");
  const fs::path prefix(a.out);

  if (a.method == "fdk") {
    const auto sel = a.views == "all" ? ViewSelection::all : ViewSelection::present;
    const auto v = fdk_reconstruct(sparse, preset.volume_dims, preset.voxel_size, pc.filter, sel, workers);
    ensure_parent(prefix);
    save_volume(v, with_suffix(prefix, ".volume.json"));
    out << "FDK over " << (sel == ViewSelection::all ? sparse.geometry.n_views : sparse.present_views()) << " views -> "
        << with_suffix(prefix, ".volume.json").string() << '\n';
    return;
  }
  if (a.method != "pipeline") throw ConfigError("reconstruct: --method must be pipeline or fdk");
  if (pc.denoiser_p.empty()) throw ConfigError("reconstruct: pipeline.denoiser_p is not set");
  if (sparse.geometry.n_views % pc.keep_every != 0) throw ConfigError("reconstruct: keep_every does not divide n_views");
  const auto model_p = load_model<float>(pc.denoiser_p);
  std::optional<ConvDenoiser<float>> model_i;
  if (pc.refine) {
    if (pc.denoiser_i.empty()) throw ConfigError("reconstruct: refinement is on but pipeline.denoiser_i is not set");
    model_i = load_model<float>(pc.denoiser_i);
  }
  const auto r = run(pc, sparse, preset.volume_dims, preset.voxel_size, model_p, model_i ? &*model_i : nullptr);
  if (expected && nlohmann::json(r.manifest.checksums) != *expected) {
    throw Error("rerun checksums differ from " + a.manifest);
  }
  ensure_parent(prefix);
  save_volume(r.volume, with_suffix(prefix, ".volume.json"));
  write_json_file(with_suffix(prefix, ".manifest.json"), r.manifest.to_json());
  out << (expected ? "rerun reproduced all checksums; " : "") << "reconstructed -> "
      << with_suffix(prefix, ".volume.json").string() << '\n';
}

struct EvalArgs {
  std::string recon;
  std::string truth;
  std::string out;
};

inline void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto recon = load_volume(a.recon);
  const auto truth = load_volume(a.truth);
  const auto j = to_json(evaluate_metrics(recon.data, truth.data));
  if (!a.out.empty()) {
    ensure_parent(a.out);
    write_json_file(a.out, j);
  }
  out << j.dump() << '\n';
}

struct ExportArgs {
  std::string volume;
  std::string out;
  std::vector<double> window{-100.0, 550.0};
  std::string plane = "axial";
  std::optional<std::size_t> slice;
  bool montage = false;
  double mu_water = 0.02;
};

inline void cmd_export(const ExportArgs& a, std::ostream& out) {
  if (a.window.size() != 2 || !(a.window[1] > a.window[0])) throw ConfigError("export: --window needs LO HI with LO < HI");
  const Plane plane = plane_from_string(a.plane);
  const auto hu = hu_convert(load_volume(a.volume), a.mu_water);
  GrayImage img;
  if (a.montage) {
    img = render_montage(hu, a.window[0], a.window[1]);
  } else {
    const std::size_t slice = a.slice.value_or(plane_depth(hu.dims(), plane) / 2);
    img = render_slice(hu, plane, slice, a.window[0], a.window[1]);
  }
  ensure_parent(a.out);
  write_png(a.out, img);
  out << "wrote " << img.width << "x" << img.height << " image to " << a.out << '\n';
}

/// Parses and runs one command; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Sparse-view cone-beam CT with dual-domain diffusion refinement"};
  app.require_subcommand(1);
  std::size_t workers = 1;
  app.add_option("--workers", workers, "Worker threads (SPARSEBEAM_WORKERS overrides)")->check(CLI::PositiveNumber);

  PhantomArgs ph;
  auto* c_ph = app.add_subcommand("phantom", "Write a phantom description and its voxelized volume");
  c_ph->add_option("--spec", ph.spec, "Phantom JSON (list of ellipsoids)");
  c_ph->add_option("--random", ph.random_seed, "Generate a random phantom from this seed");
  c_ph->add_option("--preset", ph.preset, "Geometry preset (desk|koning)");
  c_ph->add_option("--out", ph.out, "Output prefix")->required();

  ScanArgs sc;
  auto* c_sc = app.add_subcommand("scan", "Simulate full and view-downsampled projections");
  c_sc->add_option("--phantom", sc.phantom, "Phantom JSON (analytic projection)");
  c_sc->add_option("--volume", sc.volume, "Volume sidecar (numeric projection)");
  c_sc->add_option("--preset", sc.preset, "Geometry preset (desk|koning)");
  c_sc->add_option("--views", sc.views, "Override the number of full-scan views");
  c_sc->add_option("--keep-every", sc.keep_every, "Keep every K-th view in the sparse set");
  c_sc->add_option("--out", sc.out, "Output prefix")->required();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train a projection- or image-domain denoiser");
  c_tr->add_option("--domain", tr.domain, "p (projections) or i (images)")->required();
  c_tr->add_option("--config", tr.config, "Experiment config JSON")->required();
  c_tr->add_option("--model-p", tr.model_p, "Trained projection model (needed for --domain i)");
  c_tr->add_option("--out", tr.out, "Model file to write")->required();
  c_tr->add_option("--history", tr.history, "Loss history CSV (default: next to the model)");

  ReconstructArgs rc;
  auto* c_rc = app.add_subcommand("reconstruct", "Dual-domain reconstruction of sparse projections");
  c_rc->add_option("--config", rc.config, "Experiment config JSON");
  c_rc->add_option("--projections", rc.projections, "Sparse projection sidecar")->required();
  c_rc->add_option("--manifest", rc.manifest, "Rerun from a manifest and verify its checksums");
  c_rc->add_option("--method", rc.method, "pipeline or fdk (sparse-view baseline)");
  c_rc->add_option("--filter", rc.filter, "Ramp window: ramlak or hann (default from config)");
  c_rc->add_option("--views", rc.views, "FDK view set: present or all (--method fdk)");
  c_rc->add_option("--out", rc.out, "Output prefix")->required();

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "PSNR, SSIM and RMSE of a reconstruction against a reference");
  c_ev->add_option("--recon", ev.recon, "Reconstruction sidecar")->required();
  c_ev->add_option("--truth", ev.truth, "Reference sidecar")->required();
  c_ev->add_option("--out", ev.out, "Metrics JSON to write");

  ExportArgs ex;
  auto* c_ex = app.add_subcommand("export", "Windowed 8-bit PNG of a slice or three-plane montage");
  c_ex->add_option("--volume", ex.volume, "Volume sidecar (1/mm)")->required();
  c_ex->add_option("--out", ex.out, "PNG path")->required();
  c_ex->add_option("--window", ex.window, "Display window LO HI in HU")->expected(2);
  c_ex->add_option("--plane", ex.plane, "axial|sagittal|coronal");
  c_ex->add_option("--slice", ex.slice, "Slice index (default: centre)");
  c_ex->add_flag("--montage", ex.montage, "Axial, coronal and sagittal side by side");
  c_ex->add_option("--mu-water", ex.mu_water, "Water attenuation for HU conversion (1/mm)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::config);
  }

  try {
    const std::size_t w = workers_from_env(workers);
    if (c_ph->parsed()) cmd_phantom(ph, out);
    else if (c_sc->parsed()) cmd_scan(sc, w, out);
    else if (c_tr->parsed()) cmd_train(tr, w, out);
    else if (c_rc->parsed()) cmd_reconstruct(rc, w, out);
    else if (c_ev->parsed()) cmd_eval(ev, out);
    else if (c_ex->parsed()) cmd_export(ex, out);
  } catch (const StageError& e) {
    err << "error: " << e.what() << '\n' << "completed stages: " << e.manifest().at("completed_stages").dump() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::data);
  }
  return 0;
}

}  // namespace sparsebeam::cli
