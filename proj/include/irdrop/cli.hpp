#pragma once

// `irdrop` command line: gen / oracle / train / eval / predict / serve.
// run() is the whole program minus process exit, so tests can drive it
// in-process with string streams.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "irdrop/analysis.hpp"
#include "irdrop/checkpoint.hpp"
#include "irdrop/datagen.hpp"
#include "irdrop/error.hpp"
#include "irdrop/npy.hpp"
#include "irdrop/pde.hpp"
#include "irdrop/service.hpp"
#include "irdrop/training.hpp"

namespace irdrop::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline void print_error(std::ostream& err, const std::string& kind, const std::string& message) {
  err << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
}

namespace cmd {

struct GenArgs {
  GenConfig cfg;
  std::filesystem::path out;
  std::string dtype = "f4";
};

inline int gen(const GenArgs& a, std::ostream& out) {
  const auto ds = generate_dataset(a.cfg);
  save_dataset(ds, a.out, a.dtype == "f8" ? npy::DType::kF8 : npy::DType::kF4);
  out << nlohmann::json{{"out", a.out.string()},
                        {"n_samples", ds.size()},
                        {"files", {kPowerGridFile, kCellDensityFile, kSwitchingFile, kLabelsFile}}}
             .dump()
      << '\n';
  return kExitOk;
}

struct OracleArgs {
  std::filesystem::path inputs;
  std::optional<std::filesystem::path> out;
  pde::SolverConfig solver;
  double vdd = 1.0;
  std::size_t limit = 0;
  bool normalize = false;
};

// Solves the grid PDE for every sample, writes the drops as one stack and
// reports how well the synthetic labels (if present) track them.
inline int oracle(const OracleArgs& a, std::ostream& out) {
  Dataset ds = load_dataset(a.inputs, false);
  if (a.limit > 0 && a.limit < ds.size()) ds.samples.resize(a.limit);
  detail::require(!ds.empty(), ErrorKind::kInvalidInput, "no samples in '" + a.inputs.string() + "'");

  std::vector<Grid2D> drops;
  drops.reserve(ds.size());
  double pearson_sum = 0.0, spearman_sum = 0.0, worst_residual = 0.0;
  std::size_t compared = 0, degenerate = 0, iterations = 0;
  for (const auto& s : ds.samples) {
    const auto sol = pde::solve_pde(pde::problem_from_maps(s.power_grid, s.cell_density, s.switching, a.vdd), a.solver);
    iterations += sol.iterations;
    worst_residual = std::max(worst_residual, sol.relative_residual);
    if (!s.ir_drop.empty()) {
      const auto rep = pde::compare_labels(s.ir_drop, sol.ir_drop);
      if (rep.degenerate) {
        ++degenerate;
      } else {
        pearson_sum += rep.pearson;
        spearman_sum += rep.spearman;
        ++compared;
      }
    }
    drops.push_back(a.normalize ? normalize_minmax(sol.ir_drop) : sol.ir_drop);
  }
  const auto path = a.out.value_or(a.inputs / "labels_pde.npy");
  npy::save(path, npy::from_grids(drops), npy::DType::kF8);

  nlohmann::json report = {{"out", path.string()},
                           {"n_samples", ds.size()},
                           {"mean_iterations", static_cast<double>(iterations) / static_cast<double>(ds.size())},
                           {"max_relative_residual", worst_residual},
                           {"compared", compared},
                           {"degenerate", degenerate}};
  if (compared > 0) {
    report["mean_pearson"] = pearson_sum / static_cast<double>(compared);
    report["mean_spearman"] = spearman_sum / static_cast<double>(compared);
  }
  out << report.dump() << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> history;
  train::TrainConfig cfg;
  bool quiet = false;
};

inline void write_history(const std::filesystem::path& path, const std::vector<train::EpochReport>& history) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) detail::fail(ErrorKind::kIo, "cannot write history '" + path.string() + "'");
  f << "epoch,train_loss,val_loss,seconds\n" << std::setprecision(10);
  for (const auto& r : history) f << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.seconds << '\n';
}

inline int train_cmd(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const Dataset ds = load_dataset(a.data, true);
  train::TrainHooks hooks;
  if (!a.quiet) {
    hooks.on_epoch = [&err](const train::EpochReport& r) {
      char line[160];
      std::snprintf(line, sizeof(line), "epoch %3zu  train %.6e  val %.6e  psnr %6.2f dB  %.1fs", r.epoch,
                    r.train_loss, r.val_loss, analysis::psnr(r.val_loss), r.seconds);
      err << line << '\n' << std::flush;
    };
  }
  const auto result = train::train<float>(ds, a.cfg, hooks);
  if (result.best_epoch == 0) {
    detail::fail(ErrorKind::kTraining, "training produced no usable checkpoint: " + result.message);
  }

  const nlohmann::json meta = {{"best_epoch", result.best_epoch},
                               {"best_val_loss", result.best_val_loss},
                               {"epochs_run", result.history.size()},
                               {"stop_reason", train::to_string(result.stop_reason)},
                               {"n_samples", ds.size()},
                               {"learning_rate", a.cfg.learning_rate},
                               {"batch_size", a.cfg.batch_size},
                               {"max_epochs", a.cfg.max_epochs},
                               {"patience", a.cfg.patience},
                               {"val_fraction", a.cfg.val_fraction},
                               {"seed", a.cfg.seed}};
  checkpoint::save_checkpoint(result.best_params, a.out, meta);
  const auto history_path = a.history.value_or(a.out / "history.csv");
  write_history(history_path, result.history);

  nlohmann::json summary = meta;
  summary["checkpoint"] = a.out.string();
  summary["history"] = history_path.string();
  summary["best_val_psnr_db"] = analysis::psnr(result.best_val_loss);
  summary["model_version"] = checkpoint::model_version(result.best_params);
  if (!result.message.empty()) summary["message"] = result.message;
  out << summary.dump() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  bool json = false;
};

inline int eval(const EvalArgs& a, std::ostream& out) {
  const auto ckpt = checkpoint::load_checkpoint<float>(a.checkpoint);
  const auto rep = analysis::evaluate(ckpt.params, load_dataset(a.data, true));
  if (a.json) {
    out << service::to_json(rep).dump() << '\n';
  } else {
    out << std::setprecision(6) << "n_samples  " << rep.n_samples << "\nmse        " << rep.mse << "\npsnr_db    "
        << rep.psnr_db << '\n';
  }
  return kExitOk;
}

struct PredictArgs {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> inputs;
  std::size_t index = 0;
  std::optional<std::filesystem::path> power_grid, cell_density, switching;
  std::optional<std::filesystem::path> out_map;
  double threshold = analysis::kDefaultThreshold;
  analysis::RiskBands bands;
  bool json = false;
  bool no_map = false;
  bool per_pixel = false;
};

inline Grid2D load_single_map(const std::filesystem::path& path) {
  auto rec = npy::load(path);
  if (rec.header.shape.size() == 3 && rec.header.shape[0] == 1) rec.header.shape.erase(rec.header.shape.begin());
  return npy::to_grid(rec);
}

inline int predict(const PredictArgs& a, std::ostream& out) {
  analysis::RiskOptions options;
  options.bands = a.bands;
  options.mode = a.per_pixel ? analysis::CountMode::kPixels : analysis::CountMode::kComponents;
  const auto predictor = service::Predictor::from_checkpoint(a.checkpoint, options);

  Grid2D pg, cd, sw;
  if (a.inputs) {
    const Dataset ds = load_dataset(*a.inputs, false);
    detail::require(a.index < ds.size(), ErrorKind::kInvalidParameter,
                    "index " + std::to_string(a.index) + " out of range for " + std::to_string(ds.size()) + " samples");
    pg = ds.samples[a.index].power_grid;
    cd = ds.samples[a.index].cell_density;
    sw = ds.samples[a.index].switching;
  } else {
    detail::require(a.power_grid && a.cell_density && a.switching, ErrorKind::kInvalidParameter,
                    "give either --inputs DIR or all of --power-grid, --cell-density, --switching");
    pg = load_single_map(*a.power_grid);
    cd = load_single_map(*a.cell_density);
    sw = load_single_map(*a.switching);
  }

  const auto res = predictor.predict(pg, cd, sw, a.threshold);
  if (a.out_map) npy::save(*a.out_map, npy::from_grid(res.ir_drop), npy::DType::kF8);
  if (a.json) {
    out << service::to_json(res, predictor.model_version(), !a.no_map).dump() << '\n';
  } else {
    const auto& r = res.report;
    out << std::setprecision(6) << "max_ir_drop    " << r.max_ir_drop << "\nmean_ir_drop   " << r.mean_ir_drop
        << "\nhotspot_count  " << r.hotspot_count << "\nrisk_level     " << analysis::to_string(r.risk_level)
        << "\nthreshold      " << r.threshold_used << "\ninference_ms   " << res.inference_ms << '\n';
  }
  return kExitOk;
}

struct ServeArgs {
  std::filesystem::path checkpoint;
  std::optional<std::string> bind;
  std::optional<std::filesystem::path> static_dir;
  std::string cors_origin = "*";
  analysis::RiskBands bands;
  bool per_pixel = false;
};

inline int serve(const ServeArgs& a, std::ostream& out) {
  analysis::RiskOptions options;
  options.bands = a.bands;
  options.mode = a.per_pixel ? analysis::CountMode::kPixels : analysis::CountMode::kComponents;
  const auto predictor = service::Predictor::from_checkpoint(a.checkpoint, options);
  const auto bind = service::resolve_bind(a.bind);

  httplib::Server server;
  service::ServiceOptions sopts;
  sopts.cors_origin = a.cors_origin;
  sopts.static_dir = a.static_dir;
  service::install_routes(server, predictor, sopts);
  if (!server.bind_to_port(bind.host, bind.port)) {
    detail::fail(ErrorKind::kIo, "cannot bind " + bind.host + ":" + std::to_string(bind.port));
  }
  out << nlohmann::json{{"listening", bind.host + ":" + std::to_string(bind.port)},
                        {"model_version", predictor.model_version()}}
             .dump()
      << '\n'
      << std::flush;
  server.listen_after_bind();
  return kExitOk;
}

}  // namespace cmd

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"IR-drop surrogate pipeline: data generation, PDE oracle, U-Net training and inference", "irdrop"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "irdrop 0.1.0");

  auto add_bands = [](CLI::App* sub, analysis::RiskBands& bands) {
    sub->add_option("--risk-medium", bands.medium, "Smallest hotspot count rated MEDIUM")->capture_default_str();
    sub->add_option("--risk-high", bands.high, "Smallest hotspot count rated HIGH")->capture_default_str();
  };

  cmd::GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset (four .npy stacks)");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--n-samples", gen.cfg.n_samples, "Number of samples")->capture_default_str();
  g->add_option("--seed", gen.cfg.seed, "Base seed")->capture_default_str();
  g->add_option("--height", gen.cfg.height, "Map height in pixels")->capture_default_str();
  g->add_option("--width", gen.cfg.width, "Map width in pixels")->capture_default_str();
  g->add_option("--eps", gen.cfg.eps, "Denominator stabiliser of the label formula")->capture_default_str();
  g->add_option("--label-sigma", gen.cfg.label_sigma, "Gaussian sigma of label smoothing (px)")->capture_default_str();
  g->add_option("--noise-sigma", gen.cfg.noise_sigma, "Gaussian sigma of the input noise fields (px)")
      ->capture_default_str();
  g->add_option("--blob-count-min", gen.cfg.blob_count_range.low)->capture_default_str();
  g->add_option("--blob-count-max", gen.cfg.blob_count_range.high)->capture_default_str();
  g->add_option("--blob-sigma-min", gen.cfg.blob_sigma_range.low)->capture_default_str();
  g->add_option("--blob-sigma-max", gen.cfg.blob_sigma_range.high)->capture_default_str();
  g->add_option("--stripe-period-min", gen.cfg.stripe_period_range.low)->capture_default_str();
  g->add_option("--stripe-period-max", gen.cfg.stripe_period_range.high)->capture_default_str();
  g->add_option("--grid-floor", gen.cfg.grid_floor, "Lower bound of the power-grid map")->capture_default_str();
  g->add_option("--dtype", gen.dtype, "Element type of written files")
      ->check(CLI::IsMember({"f4", "f8"}))
      ->capture_default_str();

  cmd::OracleArgs orc;
  auto* o = app.add_subcommand("oracle", "Solve the grid PDE for a dataset and compare with its labels");
  o->add_option("--inputs", orc.inputs, "Dataset directory")->required();
  o->add_option("--out", orc.out, "Output .npy (default: <inputs>/labels_pde.npy)");
  o->add_option("--tol", orc.solver.tol, "Relative residual tolerance")->capture_default_str();
  o->add_option("--max-iter", orc.solver.max_iter, "CG iteration cap")->capture_default_str();
  o->add_option("--vdd", orc.vdd, "Supply voltage")->capture_default_str();
  o->add_option("--limit", orc.limit, "Only solve the first N samples (0 = all)")->capture_default_str();
  o->add_flag("--normalize", orc.normalize, "Min-max normalize each PDE map before writing");

  cmd::TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the U-Net on a dataset");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Checkpoint directory")->required();
  t->add_option("--history", tr.history, "History CSV (default: <out>/history.csv)");
  t->add_option("--lr", tr.cfg.learning_rate, "Adam learning rate")->capture_default_str();
  t->add_option("--batch-size", tr.cfg.batch_size)->capture_default_str();
  t->add_option("--epochs", tr.cfg.max_epochs, "Maximum epochs")->capture_default_str();
  t->add_option("--patience", tr.cfg.patience, "Early-stopping patience")->capture_default_str();
  t->add_option("--val-fraction", tr.cfg.val_fraction)->capture_default_str();
  t->add_option("--seed", tr.cfg.seed)->capture_default_str();
  t->add_flag("--quiet", tr.quiet, "No per-epoch progress on stderr");

  cmd::EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Report MSE and PSNR of a checkpoint on a dataset");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_flag("--json", ev.json, "Machine-readable output");

  cmd::PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Predict an IR-drop map and its risk report");
  p->add_option("--checkpoint", pr.checkpoint)->required();
  auto* inputs = p->add_option("--inputs", pr.inputs, "Dataset directory");
  p->add_option("--index", pr.index, "Sample index within --inputs")->capture_default_str()->needs(inputs);
  auto* pg = p->add_option("--power-grid", pr.power_grid, "Single 64x64 .npy map")->excludes(inputs);
  auto* cd = p->add_option("--cell-density", pr.cell_density)->excludes(inputs);
  auto* sw = p->add_option("--switching", pr.switching)->excludes(inputs);
  pg->needs(cd)->needs(sw);
  cd->needs(pg)->needs(sw);
  sw->needs(pg)->needs(cd);
  p->add_option("--threshold", pr.threshold, "Hotspot threshold")->capture_default_str();
  p->add_option("--out", pr.out_map, "Also write the predicted map as .npy");
  p->add_flag("--json", pr.json, "Print the full response as JSON");
  p->add_flag("--no-map", pr.no_map, "Omit ir_drop from --json output");
  p->add_flag("--per-pixel", pr.per_pixel, "Count hotspot pixels instead of connected regions");
  add_bands(p, pr.bands);

  cmd::ServeArgs sv;
  auto* s = app.add_subcommand("serve", "Run the HTTP inference service");
  s->add_option("--checkpoint", sv.checkpoint)->required();
  s->add_option("--bind", sv.bind, "HOST:PORT (default: $IRDROP_BIND, else 127.0.0.1:8080)");
  s->add_option("--static", sv.static_dir, "Directory served at /");
  s->add_option("--cors-origin", sv.cors_origin, "Access-Control-Allow-Origin value")->capture_default_str();
  s->add_flag("--per-pixel", sv.per_pixel, "Count hotspot pixels instead of connected regions");
  add_bands(s, sv.bands);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ok) {
    return app.exit(ok, out, err);
  } catch (const CLI::ParseError& pe) {
    print_error(err, "usage", pe.what());
    return kExitUsage;
  }

  try {
    if (g->parsed()) return cmd::gen(gen, out);
    if (o->parsed()) return cmd::oracle(orc, out);
    if (t->parsed()) return cmd::train_cmd(tr, out, err);
    if (e->parsed()) return cmd::eval(ev, out);
    if (p->parsed()) return cmd::predict(pr, out);
    if (s->parsed()) return cmd::serve(sv, out);
  } catch (const Error& ex) {
    print_error(err, std::string(to_string(ex.kind())), ex.what());
    return kExitRuntime;
  } catch (const std::exception& ex) {
    print_error(err, "internal", ex.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace irdrop::cli
