#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <catch_amalgamated.hpp>

#include "sparsebeam/config.hpp"
#include "sparsebeam/image_export.hpp"
#include "sparsebeam/metrics.hpp"
#include "sparsebeam/model_io.hpp"
#include "sparsebeam/volume_io.hpp"
#include "sparsebeam_cli.hpp"
#include "test_support.hpp"

using namespace sparsebeam;
namespace fs = std::filesystem;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("sparsebeam_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

// Runs the built executable; stdout and stderr land next to `log`.
int run_cli(const std::vector<std::string>& args, const fs::path& log) {
  std::string cmd = quote(SPARSEBEAM_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " >" + quote(log.string() + ".out") + " 2>" + quote(log.string() + ".err");
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  f << text;
}

std::vector<double> history_losses(const fs::path& csv) {
  std::ifstream f(csv);
  std::string line;
  std::getline(f, line);
  REQUIRE(line == "iteration,loss,learning_rate");
  std::vector<double> out;
  while (std::getline(f, line)) {
    const auto a = line.find(','), b = line.rfind(',');
    out.push_back(std::stod(line.substr(a + 1, b - a - 1)));
  }
  return out;
}

// Small but complete experiment: one training subject, 8^3 blocks, T = 4.
nlohmann::json tiny_config(std::size_t iterations) {
  return {{"geometry_preset", "desk"},
          {"schedule", {{"T", 4}, {"beta_start", 1e-4}, {"beta_end", 2e-2}}},
          {"grid", {{"sub_size", {8, 8, 8}}}},
          {"model_p", {{"width1", 4}, {"width2", 8}}},
          {"model_i", {{"width1", 4}, {"width2", 8}}},
          {"train_p", {{"iterations", iterations}, {"batch", 2}, {"seed", 5}}},
          {"train_i", {{"iterations", iterations}, {"batch", 2}, {"seed", 6}}},
          {"pipeline", {{"keep_every", 3}, {"run_seed", 77}, {"denoiser_p", "p.model.json"}, {"denoiser_i", "i.model.json"}}},
          {"dataset", {{"train_seed_base", 100}, {"train_count", 1}, {"init_seed", 3}}}};
}

const char* kSphere = R"({"ellipsoids": [{"center": [2, -3, 1], "semi_axes": [15, 15, 15], "attenuation": 0.02}]})";

}  // namespace

TEST_CASE("command line parse errors exit with 2", "[cli]") {
  const auto dir = scratch_dir("parse");
  CHECK(run_cli({}, dir / "none") == 2);
  CHECK(run_cli({"frobnicate"}, dir / "unknown") == 2);
  CHECK(run_cli({"phantom"}, dir / "missing_out") == 2);
  CHECK(run_cli({"--workers", "0", "phantom", "--random", "1", "--out", (dir / "w").string()}, dir / "workers") == 2);
  CHECK(run_cli({"--help"}, dir / "help") == 0);
}

TEST_CASE("phantom command", "[cli][phantom]") {
  const auto dir = scratch_dir("phantom");

  SECTION("sphere mass matches the analytic volume") {
    write_text(dir / "sphere.json", kSphere);
    REQUIRE(run_cli({"phantom", "--spec", (dir / "sphere.json").string(), "--out", (dir / "s").string()}, dir / "log") == 0);
    const auto v = load_volume(dir / "s.volume.json");
    CHECK(v.dims() == Shape3{64, 64, 64});
    const double mass = std::accumulate(v.data.values().begin(), v.data.values().end(), 0.0) * std::pow(v.voxel_size, 3);
    const double expected = 4.0 / 3.0 * std::numbers::pi * 15.0 * 15.0 * 15.0 * 0.02;
    CHECK_THAT(mass, WithinRel(expected, 0.01));
    const auto reread = phantom_from_json(read_json_file(dir / "s.phantom.json"));
    REQUIRE(reread.ellipsoids().size() == 1);
    CHECK(reread.ellipsoids()[0].center == Vec3{2, -3, 1});
  }

  SECTION("an empty spec gives a zero volume") {
    write_text(dir / "empty.json", "[]");
    REQUIRE(run_cli({"phantom", "--spec", (dir / "empty.json").string(), "--out", (dir / "e").string()}, dir / "log") == 0);
    const auto v = load_volume(dir / "e.volume.json");
    for (float x : v.data.values()) REQUIRE(x == 0.0f);
  }

  SECTION("malformed JSON is a config error and writes nothing") {
    write_text(dir / "bad.json", R"({"ellipsoids": [ {"center": [0, 0, 0], )");
    CHECK(run_cli({"phantom", "--spec", (dir / "bad.json").string(), "--out", (dir / "out" / "b").string()}, dir / "log") == 2);
    CHECK_FALSE(fs::exists(dir / "out"));
    CHECK(slurp(dir / "log.err").find("error") != std::string::npos);
  }

  SECTION("unknown keys and oversized phantoms are rejected") {
    write_text(dir / "typo.json", R"([{"centre": [0, 0, 0], "semi_axes": [5, 5, 5], "attenuation": 0.02}])");
    CHECK(run_cli({"phantom", "--spec", (dir / "typo.json").string(), "--out", (dir / "t").string()}, dir / "log") == 2);
    write_text(dir / "huge.json", R"([{"center": [0, 0, 0], "semi_axes": [500, 500, 500], "attenuation": 0.02}])");
    CHECK(run_cli({"phantom", "--spec", (dir / "huge.json").string(), "--out", (dir / "h").string()}, dir / "log") != 0);
    CHECK_FALSE(fs::exists(dir / "t.volume.json"));
    CHECK_FALSE(fs::exists(dir / "h.volume.json"));
  }

  SECTION("random phantoms are reproducible") {
    REQUIRE(run_cli({"phantom", "--random", "42", "--out", (dir / "r1").string()}, dir / "log") == 0);
    REQUIRE(run_cli({"phantom", "--random", "42", "--out", (dir / "r2").string()}, dir / "log") == 0);
    CHECK(slurp(dir / "r1.f32") == slurp(dir / "r2.f32"));
    CHECK(slurp(dir / "r1.phantom.json") == slurp(dir / "r2.phantom.json"));
  }
}

TEST_CASE("scan command", "[cli][scan]") {
  const auto dir = scratch_dir("scan");
  write_text(dir / "sphere.json", kSphere);
  const auto spec = (dir / "sphere.json").string();

  SECTION("keep_every 2 and 3 keep 30 and 20 of 60 views") {
    REQUIRE(run_cli({"scan", "--phantom", spec, "--keep-every", "2", "--out", (dir / "k2").string()}, dir / "log") == 0);
    REQUIRE(run_cli({"scan", "--phantom", spec, "--keep-every", "3", "--out", (dir / "k3").string()}, dir / "log") == 0);
    const auto full = load_projections(dir / "k2.full.json");
    CHECK(full.geometry.n_views == 60);
    CHECK(full.present_views() == 60);
    const auto k2 = load_projections(dir / "k2.sparse.json");
    const auto k3 = load_projections(dir / "k3.sparse.json");
    CHECK(k2.present_views() == 30);
    CHECK(k3.present_views() == 20);
    for (std::size_t k = 0; k < 60; ++k) CHECK(k3.view_mask[k] == (k % 3 == 0));
    CHECK(slurp(dir / "k2.full.f32") == slurp(dir / "k3.full.f32"));
  }

  SECTION("a non-divisor is a config error") {
    CHECK(run_cli({"scan", "--phantom", spec, "--keep-every", "7", "--out", (dir / "k7").string()}, dir / "log") == 2);
    CHECK_FALSE(fs::exists(dir / "k7.full.json"));
  }

  SECTION("a view-count override and numeric projection of a volume") {
    REQUIRE(run_cli({"phantom", "--spec", spec, "--out", (dir / "s").string()}, dir / "log") == 0);
    REQUIRE(run_cli({"scan", "--volume", (dir / "s.volume.json").string(), "--views", "12", "--keep-every", "4", "--out",
                     (dir / "v").string()},
                    dir / "log") == 0);
    const auto p = load_projections(dir / "v.sparse.json");
    CHECK(p.geometry.n_views == 12);
    CHECK(p.present_views() == 3);
  }

  SECTION("missing input files are data errors") {
    CHECK(run_cli({"scan", "--volume", (dir / "nope.json").string(), "--out", (dir / "n").string()}, dir / "log") == 3);
  }
}

TEST_CASE("eval command", "[cli][eval]") {
  const auto dir = scratch_dir("eval");
  const Shape3 dims{12, 10, 9};
  const ImageVolume v{testing::uniform_field<float>(dims, 3, 0.0, 0.05), 1.0};
  save_volume(v, dir / "v.json");

  SECTION("identical volumes") {
    REQUIRE(run_cli({"eval", "--recon", (dir / "v.json").string(), "--truth", (dir / "v.json").string(), "--out",
                     (dir / "m.json").string()},
                    dir / "log") == 0);
    const auto m = read_json_file(dir / "m.json");
    CHECK(m.at("psnr_db") == "inf");
    CHECK(m.at("ssim").get<double>() == 1.0);
    CHECK(m.at("rmse").get<double>() == 0.0);
  }

  SECTION("a constant offset gives rmse |c|") {
    // Values on a 2^-10 grid keep every squared difference and sum exact.
    ImageVolume w = v;
    for (auto& x : w.data.values()) x = static_cast<float>(std::ldexp(std::round(std::ldexp(x, 10)), -10));
    ImageVolume shifted = w;
    for (auto& x : shifted.data.values()) x -= 0.25f;
    save_volume(w, dir / "w.json");
    save_volume(shifted, dir / "shifted.json");
    REQUIRE(run_cli({"eval", "--recon", (dir / "shifted.json").string(), "--truth", (dir / "w.json").string(), "--out",
                     (dir / "m.json").string()},
                    dir / "log") == 0);
    CHECK(read_json_file(dir / "m.json").at("rmse").get<double>() == 0.25);
  }

  SECTION("mismatched dims are a data error") {
    save_volume(ImageVolume{Field3<float>(Shape3{12, 10, 8}), 1.0}, dir / "small.json");
    CHECK(run_cli({"eval", "--recon", (dir / "small.json").string(), "--truth", (dir / "v.json").string()}, dir / "log") == 3);
  }

  SECTION("a corrupted blob is a data error") {
    auto bytes = slurp(dir / "v.f32");
    bytes[17] = static_cast<char>(bytes[17] ^ 0x5a);
    write_text(dir / "v.f32", bytes);
    CHECK(run_cli({"eval", "--recon", (dir / "v.json").string(), "--truth", (dir / "v.json").string()}, dir / "log") == 3);
    CHECK(slurp(dir / "log.err").find("checksum") != std::string::npos);
  }
}

TEST_CASE("export command", "[cli][export]") {
  const auto dir = scratch_dir("export");
  const double mu_water = 0.02;
  // Axial slice holds a ramp from -400 to +850 HU along x.
  const Shape3 dims{5, 6, 126};
  ImageVolume v{Field3<float>(dims), 1.0};
  auto hu_at = [](std::size_t x) { return -400.0 + 10.0 * static_cast<double>(x); };
  for (std::size_t z = 0; z < dims.d0; ++z)
    for (std::size_t y = 0; y < dims.d1; ++y)
      for (std::size_t x = 0; x < dims.d2; ++x)
        v.data(z, y, x) = static_cast<float>(mu_water * (1.0 + hu_at(x) / 1000.0));
  save_volume(v, dir / "ramp.json");

  SECTION("ramp pixels follow the window arithmetic") {
    REQUIRE(run_cli({"export", "--volume", (dir / "ramp.json").string(), "--out", (dir / "a.png").string(), "--plane",
                     "axial", "--slice", "2"},
                    dir / "log") == 0);
    const auto img = read_png(dir / "a.png");
    REQUIRE(img.width == 126);
    REQUIRE(img.height == 6);
    for (std::size_t x = 0; x < dims.d2; ++x) {
      const double hu = 1000.0 * (static_cast<double>(v.data(2, 0, x)) - mu_water) / mu_water;
      const double level = std::clamp(255.0 * (hu + 100.0) / 650.0, 0.0, 255.0);
      INFO("x = " << x << ", HU = " << hu);
      // Float storage can move a value sitting on a rounding tie by one level.
      const bool tie = std::abs(level - std::floor(level) - 0.5) < 1e-3;
      CHECK(std::abs(int{img.at(3, x)} - static_cast<int>(std::floor(level + 0.5))) <= (tie ? 1 : 0));
      if (hu_at(x) <= -110.0) CHECK(img.at(3, x) == 0);
      if (hu_at(x) >= 560.0) CHECK(img.at(3, x) == 255);
    }
  }

  SECTION("plane layouts and the montage") {
    REQUIRE(run_cli({"export", "--volume", (dir / "ramp.json").string(), "--out", (dir / "c.png").string(), "--plane",
                     "coronal"},
                    dir / "log") == 0);
    const auto c = read_png(dir / "c.png");
    CHECK(c.height == 5);
    CHECK(c.width == 126);
    REQUIRE(run_cli({"export", "--volume", (dir / "ramp.json").string(), "--out", (dir / "s.png").string(), "--plane",
                     "sagittal", "--slice", "0"},
                    dir / "log") == 0);
    const auto s = read_png(dir / "s.png");
    CHECK(s.height == 5);
    CHECK(s.width == 6);
    for (auto p : s.pixels) CHECK(p == 0);
    REQUIRE(run_cli({"export", "--volume", (dir / "ramp.json").string(), "--out", (dir / "m.png").string(), "--montage"},
                    dir / "log") == 0);
    const auto m = read_png(dir / "m.png");
    CHECK(m.width == 126 + 126 + 6 + 4);
    CHECK(m.height == 6);
  }

  SECTION("bad window, plane and slice are config errors") {
    const auto vol = (dir / "ramp.json").string();
    const auto png = (dir / "x.png").string();
    CHECK(run_cli({"export", "--volume", vol, "--out", png, "--window", "550", "-100"}, dir / "log") == 2);
    CHECK(run_cli({"export", "--volume", vol, "--out", png, "--plane", "oblique"}, dir / "log") == 2);
    CHECK(run_cli({"export", "--volume", vol, "--out", png, "--plane", "axial", "--slice", "5"}, dir / "log") == 2);
    CHECK_FALSE(fs::exists(png));
  }
}

TEST_CASE("experiment config validation", "[cli][config]") {
  const auto base = tiny_config(10);
  const auto c = experiment_config_from_json(base);
  CHECK(c.schedule.steps() == 4);
  CHECK(c.sub_size == Shape3{8, 8, 8});
  CHECK(c.arch_p.width1 == 4);
  CHECK(c.train_count == 1);
  CHECK(c.pipeline_config().geometry_preset == "desk");

  const auto round = experiment_config_from_json(to_json(c));
  CHECK(to_json(round) == to_json(c));

  auto bad = base;
  bad["pipeline"]["keep_evry"] = 3;
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  bad = base;
  bad["dataset"]["paths"] = "x";
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  bad = base;
  bad["pipeline"]["keep_every"] = 7;
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  bad = base;
  bad["pipeline"]["schedule"] = base["schedule"];
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  bad = base;
  bad["train_p"]["batch"] = "eight";
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  bad = base;
  bad["extra"] = 1;
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
}

TEST_CASE("train command", "[cli][train]") {
  const auto dir = scratch_dir("train");
  write_json_file(dir / "cfg.json", tiny_config(30));
  const auto cfg = (dir / "cfg.json").string();

  SECTION("a fixed seed reproduces the history and model") {
    REQUIRE(run_cli({"train", "--domain", "p", "--config", cfg, "--out", (dir / "a.model.json").string()}, dir / "log") == 0);
    REQUIRE(run_cli({"--workers", "3", "train", "--domain", "p", "--config", cfg, "--out", (dir / "b.model.json").string()},
                    dir / "log") == 0);
    CHECK(history_losses(dir / "a.model.history.csv").size() == 30);
    CHECK(slurp(dir / "a.model.history.csv") == slurp(dir / "b.model.history.csv"));
    CHECK(slurp(dir / "a.model.f32") == slurp(dir / "b.model.f32"));
  }

  SECTION("zero iterations leave the initialization") {
    auto j = tiny_config(0);
    write_json_file(dir / "zero.json", j);
    REQUIRE(run_cli({"train", "--domain", "p", "--config", (dir / "zero.json").string(), "--out",
                     (dir / "z.model.json").string(), "--history", (dir / "z.csv").string()},
                    dir / "log") == 0);
    CHECK(history_losses(dir / "z.csv").empty());
    const auto trained = load_model<float>(dir / "z.model.json");
    const auto c = experiment_config_from_json(j);
    ConvDenoiser<float> init(c.arch_p);
    init.initialize(c.init_seed);
    REQUIRE(trained.parameter_count() == init.parameter_count());
    CHECK(std::equal(trained.parameters().begin(), trained.parameters().end(), init.parameters().begin()));
  }

  SECTION("the image domain needs a projection model") {
    CHECK(run_cli({"train", "--domain", "i", "--config", cfg, "--out", (dir / "i.model.json").string()}, dir / "log") == 2);
    CHECK(run_cli({"train", "--domain", "x", "--config", cfg, "--out", (dir / "x.model.json").string()}, dir / "log") == 2);
  }

  SECTION("divergence exits with 4") {
    auto j = tiny_config(20);
    j["train_p"]["lr_start"] = 1e30;
    j["train_p"]["lr_end"] = 1e30;
    write_json_file(dir / "div.json", j);
    CHECK(run_cli({"train", "--domain", "p", "--config", (dir / "div.json").string(), "--out",
                   (dir / "d.model.json").string()},
                  dir / "log") == 4);
    CHECK(slurp(dir / "log.err").find("iteration") != std::string::npos);
  }
}

TEST_CASE("training through the command line reduces the loss", "[cli][train][slow]") {
  const auto dir = scratch_dir("train_long");
  auto j = tiny_config(2000);
  j["train_p"]["batch"] = 8;
  j["train_p"]["lr_start"] = 1e-3;
  j["train_p"]["lr_end"] = 1e-4;
  write_json_file(dir / "cfg.json", j);
  REQUIRE(run_cli({"train", "--domain", "p", "--config", (dir / "cfg.json").string(), "--out",
                   (dir / "p.model.json").string()},
                  dir / "log") == 0);
  const auto losses = history_losses(dir / "p.model.history.csv");
  REQUIRE(losses.size() == 2000);
  const double head = std::accumulate(losses.begin(), losses.begin() + 100, 0.0) / 100.0;
  const double tail = std::accumulate(losses.end() - 100, losses.end(), 0.0) / 100.0;
  INFO("initial-100 mean " << head << ", trailing-100 mean " << tail);
  CHECK(tail < 0.5 * head);
}

TEST_CASE("reconstruct command end to end", "[cli][reconstruct]") {
  const auto dir = scratch_dir("reconstruct");
  write_json_file(dir / "cfg.json", tiny_config(20));
  const auto cfg = (dir / "cfg.json").string();
  REQUIRE(run_cli({"train", "--domain", "p", "--config", cfg, "--out", (dir / "p.model.json").string()}, dir / "log") == 0);
  REQUIRE(run_cli({"train", "--domain", "i", "--config", cfg, "--model-p", (dir / "p.model.json").string(), "--out",
                   (dir / "i.model.json").string()},
                  dir / "log") == 0);
  REQUIRE(run_cli({"phantom", "--random", "9001", "--out", (dir / "ph").string()}, dir / "log") == 0);
  REQUIRE(run_cli({"scan", "--phantom", (dir / "ph.phantom.json").string(), "--keep-every", "3", "--out",
                   (dir / "scan").string()},
                  dir / "log") == 0);
  const auto sparse = (dir / "scan.sparse.json").string();

  // Relative denoiser paths resolve against the config file's directory.
  const auto here = fs::current_path();
  fs::current_path(fs::temp_directory_path());
  const int rc = run_cli({"reconstruct", "--config", cfg, "--projections", sparse, "--out", (dir / "r1").string()}, dir / "log");
  fs::current_path(here);
  REQUIRE(rc == 0);
  REQUIRE(run_cli({"--workers", "4", "reconstruct", "--config", cfg, "--projections", sparse, "--out", (dir / "r4").string()},
                  dir / "log") == 0);
  CHECK(slurp(dir / "r1.volume.f32") == slurp(dir / "r4.volume.f32"));

  const auto manifest = read_json_file(dir / "r1.manifest.json");
  CHECK(manifest.at("completed_stages") == nlohmann::json::array({"inpaint", "fdk", "refine"}));

  SECTION("a manifest rerun reproduces the checksums") {
    REQUIRE(run_cli({"reconstruct", "--manifest", (dir / "r1.manifest.json").string(), "--projections", sparse, "--out",
                     (dir / "rerun").string()},
                    dir / "log") == 0);
    CHECK(slurp(dir / "rerun.volume.f32") == slurp(dir / "r1.volume.f32"));
    CHECK(slurp(dir / "log.out").find("reproduced") != std::string::npos);
  }

  SECTION("a tampered manifest fails the rerun") {
    auto m = manifest;
    m["config"]["run_seed"] = 78;
    write_json_file(dir / "tampered.json", m);
    CHECK(run_cli({"reconstruct", "--manifest", (dir / "tampered.json").string(), "--projections", sparse, "--out",
                   (dir / "t").string()},
                  dir / "log") == 3);
    CHECK_FALSE(fs::exists(dir / "t.volume.json"));
  }

  SECTION("fdk method matches the library baseline") {
    REQUIRE(run_cli({"reconstruct", "--config", cfg, "--projections", sparse, "--method", "fdk", "--out",
                     (dir / "fdk").string()},
                    dir / "log") == 0);
    const auto expected = fdk_reconstruct(load_projections(sparse), Shape3{64, 64, 64}, 1.0, FilterWindow::ram_lak,
                                          ViewSelection::present, 1);
    CHECK(load_volume(dir / "fdk.volume.json").data == expected.data);
    CHECK(run_cli({"reconstruct", "--config", cfg, "--projections", sparse, "--method", "fdk", "--views", "all", "--out",
                   (dir / "all").string()},
                  dir / "log") != 0);
    CHECK(run_cli({"reconstruct", "--config", cfg, "--projections", sparse, "--method", "sart", "--out",
                   (dir / "sart").string()},
                  dir / "log") == 2);
  }

  SECTION("a missing denoiser is a data error") {
    auto j = tiny_config(20);
    j["pipeline"]["denoiser_i"] = "absent.model.json";
    write_json_file(dir / "missing.json", j);
    CHECK(run_cli({"reconstruct", "--config", (dir / "missing.json").string(), "--projections", sparse, "--out",
                   (dir / "m").string()},
                  dir / "log") == 3);
  }
}

TEST_CASE("workers environment variable", "[cli]") {
  CHECK(cli::workers_from_env(3) >= 1);
  ::setenv("SPARSEBEAM_WORKERS", "6", 1);
  CHECK(cli::workers_from_env(3) == 6);
  ::setenv("SPARSEBEAM_WORKERS", "zero", 1);
  CHECK_THROWS_AS(cli::workers_from_env(3), ConfigError);
  ::unsetenv("SPARSEBEAM_WORKERS");
  CHECK(cli::workers_from_env(3) == 3);
}

TEST_CASE("metrics against hand-computed values", "[metrics]") {
  const Shape3 s{8, 8, 8};
  Field3<double> truth(s), recon(s);
  for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = (i % 2 == 0) ? 0.0 : 2.0;
  recon = truth;
  recon[5] += 0.8;
  const double e = std::sqrt(0.64 / 512.0);
  CHECK_THAT(rmse(recon, truth), WithinRel(e, 1e-12));
  CHECK_THAT(psnr(recon, truth), WithinRel(20.0 * std::log10(2.0 / e), 1e-12));
  CHECK(std::isinf(psnr(truth, truth)));
  CHECK(ssim(truth, truth) == 1.0);
  const double sv = ssim(recon, truth);
  CHECK(sv < 1.0);
  CHECK(sv > 0.9);

  SECTION("ssim of one window equals the global formula") {
    const Shape3 w{7, 7, 7};
    const auto a = testing::uniform_field<double>(w, 1), b = testing::uniform_field<double>(w, 2);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ma += a[i];
      mb += b[i];
    }
    const double n = static_cast<double>(a.size());
    ma /= n;
    mb /= n;
    double va = 0, vb = 0, cov = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      va += (a[i] - ma) * (a[i] - ma);
      vb += (b[i] - mb) * (b[i] - mb);
      cov += (a[i] - ma) * (b[i] - mb);
    }
    va /= n;
    vb /= n;
    cov /= n;
    const auto [lo, hi] = std::minmax_element(b.values().begin(), b.values().end());
    const double L = *hi - *lo;
    const double c1 = std::pow(0.01 * L, 2), c2 = std::pow(0.03 * L, 2);
    const double expected = (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    CHECK_THAT(ssim(a, b), WithinRel(expected, 1e-9));
  }

  CHECK_THROWS_AS(rmse(Field3<double>(Shape3{2, 2, 2}), truth), ShapeError);
  CHECK_THROWS_AS(psnr(recon, Field3<double>(s)), ShapeError);
  CHECK(to_json(Metrics{std::numeric_limits<double>::infinity(), 1.0, 0.0}).at("psnr_db") == "inf");
}

TEST_CASE("volume files round trip", "[io]") {
  const auto dir = scratch_dir("volume_io");
  const ImageVolume v{testing::uniform_field<float>(Shape3{3, 4, 5}, 8), 0.75};
  save_volume(v, dir / "v.json");
  const auto back = load_volume(dir / "v.json");
  CHECK(back.data == v.data);
  CHECK(back.voxel_size == 0.75);
  CHECK(volume_domain(dir / "v.json") == "image");
  CHECK_THROWS_AS(load_projections(dir / "v.json"), IoError);

  ConeBeamGeometry g;
  g.n_views = 6;
  g.det_rows = 4;
  g.det_cols = 5;
  ProjectionSet p(g);
  p.data = testing::uniform_field<float>(g.projection_shape(), 9);
  p = downsample_views(p, 2);
  save_projections(p, dir / "p.json");
  const auto q = load_projections(dir / "p.json");
  CHECK(q.data == p.data);
  CHECK(q.view_mask == p.view_mask);
  CHECK(q.geometry.n_views == 6);
  CHECK(volume_domain(dir / "p.json") == "projection");

  CHECK_THROWS_AS(save_volume(v, dir / "bad.f32"), IoError);
  fs::resize_file(dir / "v.f32", 12);
  CHECK_THROWS_AS(load_volume(dir / "v.json"), IoError);
}

TEST_CASE("png round trip and window mapping", "[export]") {
  const auto dir = scratch_dir("png");
  GrayImage img{3, 2, {0, 10, 20, 200, 250, 255}};
  write_png(dir / "x.png", img);
  const auto back = read_png(dir / "x.png");
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.pixels == img.pixels);
  CHECK(window_to_gray(-1000, -100, 550) == 0);
  CHECK(window_to_gray(-100, -100, 550) == 0);
  CHECK(window_to_gray(550, -100, 550) == 255);
  CHECK(window_to_gray(225, -100, 550) == 128);
  CHECK_THROWS_AS(window_to_gray(0, 1, 1), ConfigError);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), IoError);
}
