#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsebeam/binary_io.hpp"
#include "sparsebeam/checksum.hpp"
#include "sparsebeam/conv_net.hpp"

namespace sparsebeam {

inline nlohmann::json to_json(const ConvNetArch& a) {
  return {{"in_channels", a.in_channels},
          {"width1", a.width1},
          {"width2", a.width2},
          {"embed_width", a.embed_width},
          {"kernel", a.kernel},
          {"sigma_data", a.sigma_data},
          {"anchor", a.anchor}};
}

inline ConvNetArch arch_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("architecture: expected an object");
  ConvNetArch a;
  for (const auto& [key, value] : j.items()) {
    if (key == "sigma_data") {
      if (!value.is_number()) throw ConfigError("architecture: 'sigma_data' must be a number");
      a.sigma_data = value.get<double>();
      continue;
    }
    if (key == "anchor") {
      if (!value.is_boolean()) throw ConfigError("architecture: 'anchor' must be a boolean");
      a.anchor = value.get<bool>();
      continue;
    }
    if (!value.is_number_integer()) throw ConfigError("architecture: '" + key + "' must be an integer");
    const int v = value.get<int>();
    if (key == "in_channels") a.in_channels = v;
    else if (key == "width1") a.width1 = v;
    else if (key == "width2") a.width2 = v;
    else if (key == "embed_width") a.embed_width = v;
    else if (key == "kernel") a.kernel = v;
    else throw ConfigError("architecture: unknown key '" + key + "'");
  }
  return a;
}

/// Writes `<path>` (JSON descriptor) and `<path stem>.f32` (parameters).
template <typename Real>
void save_model(const ConvDenoiser<Real>& net, const std::filesystem::path& path) {
  std::vector<float> blob(net.parameters().begin(), net.parameters().end());
  auto blob_path = path;
  blob_path.replace_extension(".f32");
  write_f32le(blob_path, blob);
  nlohmann::json j = {{"format", "sparsebeam-conv-denoiser"},
                      {"architecture", to_json(net.arch())},
                      {"param_count", net.parameter_count()},
                      {"dtype", "f32le"},
                      {"blob", blob_path.filename().string()},
                      {"checksum", checksum_string<float>(blob)}};
  if (net.preconditioned()) j["noise_levels"] = net.noise_levels();
  write_json_file(path, j);
}

template <typename Real>
[[nodiscard]] ConvDenoiser<Real> load_model(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  try {
    if (j.at("format") != "sparsebeam-conv-denoiser") throw IoError(path.string() + ": not a denoiser model file");
    if (j.at("dtype") != "f32le") throw IoError(path.string() + ": unsupported dtype");
    ConvDenoiser<Real> net(arch_from_json(j.at("architecture")));
    const auto count = j.at("param_count").get<std::size_t>();
    if (count != net.parameter_count()) {
      throw IoError(path.string() + ": parameter count " + std::to_string(count) + " does not match architecture (" +
                    std::to_string(net.parameter_count()) + ")");
    }
    const auto blob = read_f32le(path.parent_path() / j.at("blob").get<std::string>(), count);
    if (checksum_string<float>(blob) != j.at("checksum").get<std::string>()) {
      throw IoError(path.string() + ": parameter checksum mismatch");
    }
    std::copy(blob.begin(), blob.end(), net.parameters().begin());
    if (net.preconditioned()) {
      if (!j.contains("noise_levels")) throw IoError(path.string() + ": preconditioned model without noise levels");
      net.set_noise_levels(j.at("noise_levels").get<std::vector<double>>());
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace sparsebeam
