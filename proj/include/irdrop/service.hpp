#pragma once

// Inference front end shared by the `predict` subcommand and the HTTP
// service: one Predictor, one JSON encoding.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "irdrop/analysis.hpp"
#include "irdrop/checkpoint.hpp"
#include "irdrop/error.hpp"
#include "irdrop/grid.hpp"
#include "irdrop/npy.hpp"
#include "irdrop/unet.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose `_res` macro collides
// with Eigen's internal parameter names.
#include <httplib.h>
#include <nlohmann/json.hpp>

namespace irdrop::service {

inline constexpr std::size_t kMapSize = 64;
inline constexpr const char* kFieldNames[3] = {"power_grid", "cell_density", "switching"};

struct PredictResult {
  Grid2D ir_drop;
  analysis::RiskReport report;
  double inference_ms = 0.0;
};

// Immutable model snapshot. predict() is const and safe to call from
// concurrent request handlers.
class Predictor {
 public:
  Predictor(unet::UNetParams<float> params, std::string model_version, analysis::RiskOptions options = {})
      : params_(std::move(params)), model_version_(std::move(model_version)), options_(options) {}

  static Predictor from_checkpoint(const std::filesystem::path& dir, analysis::RiskOptions options = {}) {
    auto ckpt = checkpoint::load_checkpoint<float>(dir);
    return Predictor(std::move(ckpt.params), std::move(ckpt.model_version), options);
  }

  const std::string& model_version() const noexcept { return model_version_; }
  const analysis::RiskOptions& options() const noexcept { return options_; }
  const unet::UNetParams<float>& params() const noexcept { return params_; }

  PredictResult predict(const Grid2D& power_grid, const Grid2D& cell_density, const Grid2D& switching,
                        double threshold = analysis::kDefaultThreshold) const {
    const Grid2D* maps[3] = {&power_grid, &cell_density, &switching};
    for (std::size_t i = 0; i < 3; ++i) {
      if (maps[i]->height() != kMapSize || maps[i]->width() != kMapSize) {
        detail::fail(ErrorKind::kShape, std::string(kFieldNames[i]) + ": expected a 64x64 map, got " +
                                            std::to_string(maps[i]->height()) + "x" +
                                            std::to_string(maps[i]->width()));
      }
    }
    detail::require(std::isfinite(threshold), ErrorKind::kInvalidInput, "threshold must be finite");
    const auto start = std::chrono::steady_clock::now();
    PredictResult res;
    res.ir_drop = unet::predict_map(params_, preprocess_maps(power_grid, cell_density, switching));
    res.inference_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    res.report = analysis::risk_report(res.ir_drop, threshold, options_);
    return res;
  }

 private:
  unet::UNetParams<float> params_;
  std::string model_version_;
  analysis::RiskOptions options_;
};

inline nlohmann::json grid_to_json(const Grid2D& g) {
  auto rows = nlohmann::json::array();
  for (std::size_t r = 0; r < g.height(); ++r) {
    auto row = nlohmann::json::array();
    for (std::size_t c = 0; c < g.width(); ++c) row.push_back(g(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json to_json(const analysis::RiskReport& r) {
  return {{"max_ir_drop", r.max_ir_drop},
          {"mean_ir_drop", r.mean_ir_drop},
          {"hotspot_count", r.hotspot_count},
          {"risk_level", analysis::to_string(r.risk_level)},
          {"threshold", r.threshold_used}};
}

inline nlohmann::json to_json(const PredictResult& res, const std::string& model_version, bool include_map = true) {
  auto j = to_json(res.report);
  j["inference_ms"] = res.inference_ms;
  j["model_version"] = model_version;
  if (include_map) j["ir_drop"] = grid_to_json(res.ir_drop);
  return j;
}

inline nlohmann::json to_json(const analysis::MetricsReport& m) {
  nlohmann::json j = {{"mse", m.mse}, {"n_samples", m.n_samples}};
  // JSON has no infinity; a perfect score is written as the string "inf".
  if (std::isinf(m.psnr_db)) {
    j["psnr_db"] = "inf";
  } else {
    j["psnr_db"] = m.psnr_db;
  }
  return j;
}

// ---- request decoding ----

// A client-side problem with the request body. status is 400 for malformed
// input and 422 for well-formed maps of the wrong shape.
struct RequestError {
  int status = 400;
  std::string field;
  std::string message;
};

struct PredictRequest {
  Grid2D power_grid;
  Grid2D cell_density;
  Grid2D switching;
  double threshold = analysis::kDefaultThreshold;
};

namespace wire {

[[noreturn]] inline void reject(int status, std::string field, std::string message) {
  throw RequestError{status, std::move(field), std::move(message)};
}

inline Grid2D grid_from_json(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array()) reject(400, field, "expected a nested array of numbers");
  const std::size_t h = j.size();
  if (h == 0) reject(422, field, "expected a 64x64 map, got an empty array");
  std::size_t w = 0;
  std::vector<double> values;
  for (std::size_t r = 0; r < h; ++r) {
    const auto& row = j[r];
    if (!row.is_array()) reject(400, field, "row " + std::to_string(r) + " is not an array");
    if (r == 0) {
      w = row.size();
      values.reserve(h * w);
    } else if (row.size() != w) {
      reject(400, field, "ragged array: row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                             " values, row 0 has " + std::to_string(w));
    }
    for (const auto& v : row) {
      if (!v.is_number()) reject(400, field, "non-numeric value in row " + std::to_string(r));
      const double d = v.get<double>();
      if (!std::isfinite(d)) reject(400, field, "non-finite value in row " + std::to_string(r));
      values.push_back(d);
    }
  }
  if (h != kMapSize || w != kMapSize) {
    reject(422, field, "expected a 64x64 map, got " + std::to_string(h) + "x" + std::to_string(w));
  }
  return Grid2D(h, w, std::move(values));
}

inline Grid2D grid_from_npy(const std::string& bytes, const std::string& field) {
  npy::ArrayRecord rec;
  try {
    rec = npy::read_npy(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
  } catch (const Error& e) {
    reject(400, field, std::string("unreadable .npy part: ") + e.what());
  }
  auto shape = rec.header.shape;
  if (shape.size() == 3 && shape[0] == 1) shape.erase(shape.begin());
  if (shape.size() != 2 || shape[0] != kMapSize || shape[1] != kMapSize) {
    std::string dims;
    for (std::size_t i = 0; i < rec.header.shape.size(); ++i) dims += (i ? "x" : "") + std::to_string(rec.header.shape[i]);
    reject(422, field, "expected a 64x64 map, got shape " + (dims.empty() ? std::string("()") : dims));
  }
  for (double v : rec.data) {
    if (!std::isfinite(v)) reject(400, field, "non-finite value in .npy part");
  }
  return Grid2D(kMapSize, kMapSize, std::move(rec.data));
}

inline double parse_threshold(const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    reject(400, "threshold", "not a number");
  }
  if (used != text.size() || !std::isfinite(v)) reject(400, "threshold", "not a finite number");
  return v;
}

}  // namespace wire

inline PredictRequest parse_json_request(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    wire::reject(400, "body", std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) wire::reject(400, "body", "expected a JSON object");
  PredictRequest req;
  Grid2D* targets[3] = {&req.power_grid, &req.cell_density, &req.switching};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!j.contains(kFieldNames[i])) wire::reject(400, kFieldNames[i], "missing");
    *targets[i] = wire::grid_from_json(j[kFieldNames[i]], kFieldNames[i]);
  }
  if (j.contains("threshold") && !j["threshold"].is_null()) {
    if (!j["threshold"].is_number()) wire::reject(400, "threshold", "not a number");
    req.threshold = j["threshold"].get<double>();
  }
  return req;
}

inline PredictRequest parse_multipart_request(const httplib::Request& http) {
  PredictRequest req;
  Grid2D* targets[3] = {&req.power_grid, &req.cell_density, &req.switching};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!http.has_file(kFieldNames[i])) wire::reject(400, kFieldNames[i], "missing");
    *targets[i] = wire::grid_from_npy(http.get_file_value(kFieldNames[i]).content, kFieldNames[i]);
  }
  if (http.has_file("threshold")) req.threshold = wire::parse_threshold(http.get_file_value("threshold").content);
  return req;
}

// ---- HTTP wiring ----

struct BindAddress {
  std::string host = "127.0.0.1";
  int port = 8080;
};

inline constexpr const char* kBindEnv = "IRDROP_BIND";

inline BindAddress parse_bind(const std::string& text) {
  const auto colon = text.rfind(':');
  detail::require(colon != std::string::npos && colon > 0 && colon + 1 < text.size(),
                          ErrorKind::kInvalidParameter, "bind address must look like HOST:PORT, got '" + text + "'");
  BindAddress b;
  b.host = text.substr(0, colon);
  const std::string port = text.substr(colon + 1);
  std::size_t used = 0;
  int value = -1;
  try {
    value = std::stoi(port, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  detail::require(used == port.size() && value >= 0 && value <= 65535, ErrorKind::kInvalidParameter,
                          "invalid port in bind address '" + text + "'");
  b.port = value;
  return b;
}

// Explicit flag first, then IRDROP_BIND, then the loopback default.
inline BindAddress resolve_bind(const std::optional<std::string>& flag) {
  if (flag) return parse_bind(*flag);
  if (const char* env = std::getenv(kBindEnv); env != nullptr && *env != '\0') return parse_bind(env);
  return {};
}

struct ServiceOptions {
  std::string cors_origin = "*";
  std::optional<std::filesystem::path> static_dir;
};

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline nlohmann::json error_body(const std::string& kind, const std::string& field, const std::string& message) {
  nlohmann::json e = {{"kind", kind}, {"message", message}};
  if (!field.empty()) e["field"] = field;
  return {{"error", e}};
}

// Registers /health, /predict and CORS handling on `server`. `predictor`
// must outlive the server.
inline void install_routes(httplib::Server& server, const Predictor& predictor, const ServiceOptions& options = {}) {
  server.set_default_headers({{"Access-Control-Allow-Origin", options.cors_origin},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Max-Age", "600"}});

  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Get("/health", [&predictor](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}, {"model_version", predictor.model_version()}});
  });

  server.Post("/predict", [&predictor](const httplib::Request& http, httplib::Response& res) {
    PredictRequest req;
    try {
      req = http.is_multipart_form_data() ? parse_multipart_request(http) : parse_json_request(http.body);
    } catch (const RequestError& e) {
      send_json(res, e.status, error_body(e.status == 422 ? "shape" : "invalid-input", e.field, e.message));
      return;
    }
    try {
      const auto result = predictor.predict(req.power_grid, req.cell_density, req.switching, req.threshold);
      send_json(res, 200, to_json(result, predictor.model_version()));
    } catch (const Error& e) {
      const int status = e.kind() == ErrorKind::kShape ? 422 : (e.kind() == ErrorKind::kInvalidInput ? 400 : 500);
      send_json(res, status, error_body(std::string(to_string(e.kind())), "", e.what()));
    } catch (const std::exception& e) {
      send_json(res, 500, error_body("internal", "", e.what()));
    }
  });

  if (options.static_dir) {
    detail::require(server.set_mount_point("/", options.static_dir->string()), ErrorKind::kIo,
                            "static directory '" + options.static_dir->string() + "' does not exist");
  }
}

}  // namespace irdrop::service
