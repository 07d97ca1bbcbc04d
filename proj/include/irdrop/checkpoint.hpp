#pragma once

// Checkpoint directory layout:
//   manifest.json            format tag/version, widths, layer table, metadata
//   <layer>.weight.npy       float64, shape (out, in, k, k)
//   <layer>.bias.npy         float64, shape (out,)

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "irdrop/error.hpp"
#include "irdrop/npy.hpp"
#include "irdrop/unet.hpp"

namespace irdrop::checkpoint {

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kFormatTag = "irdrop-unet";
inline constexpr int kFormatVersion = 1;

template <typename T>
struct Checkpoint {
  unet::UNetParams<T> params;
  nlohmann::json metadata = nlohmann::json::object();
  std::string model_version;
};

// FNV-1a over the float64 image of every parameter, in layer order.
template <typename T>
std::string model_version(const unet::UNetParams<T>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  params.for_each_array([&](const std::string&, std::span<const T> values) {
    for (T v : values) {
      const auto d = static_cast<double>(v);
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &d, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  });
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline std::vector<std::size_t> weight_shape(const unet::ConvSpec& s) {
  return {s.out_channels, s.in_channels, s.kernel, s.kernel};
}

[[noreturn]] inline void fail(const std::string& message) { throw Error(ErrorKind::kCheckpoint, message); }

}  // namespace detail

template <typename T>
void save_checkpoint(const unet::UNetParams<T>& params, const std::filesystem::path& dir,
                     const nlohmann::json& metadata = nlohmann::json::object()) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) irdrop::detail::fail(ErrorKind::kIo, "cannot create checkpoint directory '" + dir.string() + "'");

  nlohmann::json manifest;
  manifest["format"] = kFormatTag;
  manifest["format_version"] = kFormatVersion;
  manifest["widths"] = {params.widths.enc1, params.widths.enc2, params.widths.bottleneck};
  manifest["model_version"] = model_version(params);
  manifest["metadata"] = metadata;
  auto& layers = manifest["layers"] = nlohmann::json::array();

  for (std::size_t i = 0; i < unet::kLayerCount; ++i) {
    const auto& layer = params.layers[i];
    const std::string name = unet::kLayerNames[i];
    npy::ArrayRecord w;
    w.header.shape = detail::weight_shape(layer.spec);
    w.data.assign(layer.weight.begin(), layer.weight.end());
    npy::ArrayRecord b;
    b.header.shape = {layer.spec.out_channels};
    b.data.assign(layer.bias.begin(), layer.bias.end());
    npy::save(dir / (name + ".weight.npy"), w, npy::DType::kF8);
    npy::save(dir / (name + ".bias.npy"), b, npy::DType::kF8);
    layers.push_back({{"name", name},
                      {"weight_file", name + ".weight.npy"},
                      {"weight_shape", w.header.shape},
                      {"bias_file", name + ".bias.npy"},
                      {"bias_shape", b.header.shape}});
  }

  std::ofstream out(dir / kManifestFile, std::ios::trunc);
  if (!out) irdrop::detail::fail(ErrorKind::kIo, "cannot write manifest in '" + dir.string() + "'");
  out << manifest.dump(2) << '\n';
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifestFile;
  std::ifstream in(manifest_path);
  if (!in) detail::fail("missing manifest '" + manifest_path.string() + "'");

  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    detail::fail("malformed manifest '" + manifest_path.string() + "': " + e.what());
  }

  try {
    if (manifest.at("format").get<std::string>() != kFormatTag) detail::fail("not an irdrop checkpoint");
    const int version = manifest.at("format_version").get<int>();
    if (version != kFormatVersion) detail::fail("unknown checkpoint format version " + std::to_string(version));

    const auto widths = manifest.at("widths").get<std::vector<std::size_t>>();
    if (widths.size() != 3 || widths[0] == 0 || widths[1] == 0 || widths[2] == 0) {
      detail::fail("manifest widths must be three positive integers");
    }
    Checkpoint<T> ckpt;
    // Read at full precision so the version hash covers the bytes on disk.
    unet::UNetParams<double> stored(unet::Widths{widths[0], widths[1], widths[2]});
    if (manifest.contains("metadata")) ckpt.metadata = manifest["metadata"];

    const auto& layers = manifest.at("layers");
    if (!layers.is_array() || layers.size() != unet::kLayerCount) {
      detail::fail("manifest must list " + std::to_string(unet::kLayerCount) + " layers");
    }

    auto read_array = [&](const nlohmann::json& entry, const char* file_key, const char* shape_key,
                          const std::vector<std::size_t>& expected, std::vector<double>& dst) {
      const auto name = entry.at("name").get<std::string>();
      const auto declared = entry.at(shape_key).get<std::vector<std::size_t>>();
      if (declared != expected) detail::fail("layer " + name + ": manifest " + shape_key + " does not match the architecture");
      const auto path = dir / entry.at(file_key).get<std::string>();
      if (!std::filesystem::exists(path)) detail::fail("missing parameter file '" + path.string() + "'");
      npy::ArrayRecord rec;
      try {
        rec = npy::load(path);
      } catch (const Error& e) {
        detail::fail(e.what());
      }
      if (rec.header.shape != expected) detail::fail("parameter file '" + path.string() + "' has the wrong shape");
      for (std::size_t i = 0; i < rec.data.size(); ++i) dst[i] = rec.data[i];
    };

    for (std::size_t i = 0; i < unet::kLayerCount; ++i) {
      const auto& entry = layers[i];
      auto& layer = stored.layers[i];
      if (entry.at("name").get<std::string>() != unet::kLayerNames[i]) {
        detail::fail(std::string("manifest layer ") + std::to_string(i) + " should be " + unet::kLayerNames[i]);
      }
      read_array(entry, "weight_file", "weight_shape", detail::weight_shape(layer.spec), layer.weight);
      read_array(entry, "bias_file", "bias_shape", {layer.spec.out_channels}, layer.bias);
    }

    ckpt.model_version = model_version(stored);
    ckpt.params = unet::cast_params<T>(stored);
    if (manifest.contains("model_version") && manifest["model_version"].get<std::string>() != ckpt.model_version) {
      detail::fail("parameter files do not match the manifest model_version");
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    detail::fail("malformed manifest '" + manifest_path.string() + "': " + e.what());
  }
}

}  // namespace irdrop::checkpoint
