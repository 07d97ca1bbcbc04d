#pragma once

// Finite-difference reference solver for the static power-grid equation
//   div(sigma grad V) = -J
// on the pixel grid. Pads are Dirichlet nodes held at vdd, the outer
// boundary is zero-flux, and the solver works directly in the drop
// d = vdd - V, so that positive current density lowers the voltage.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "irdrop/error.hpp"
#include "irdrop/grid.hpp"

namespace irdrop::pde {

struct Pad {
  std::size_t row;
  std::size_t col;

  friend auto operator<=>(const Pad&, const Pad&) = default;
};

struct PdeProblem {
  Grid2D sigma;    // conductivity, strictly positive
  Grid2D current;  // current density drawn at each node, nonnegative
  double vdd = 1.0;
  std::vector<Pad> pads;
};

struct SolverConfig {
  double tol = 1e-8;  // relative residual ||b - A x|| / ||b||
  int max_iter = 20000;
};

inline std::vector<Pad> corner_pads(std::size_t height, std::size_t width) {
  std::set<Pad> unique{{0, 0}, {0, width - 1}, {height - 1, 0}, {height - 1, width - 1}};
  return {unique.begin(), unique.end()};
}

// Reduced system over the non-pad nodes, stored in CSR form.
struct LinearSystem {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::ptrdiff_t> unknown_of_node;  // -1 for pad nodes
  std::vector<std::size_t> node_of_unknown;
  std::vector<std::size_t> row_ptr;
  std::vector<std::size_t> col_idx;
  std::vector<double> values;
  std::vector<double> rhs;

  std::size_t unknowns() const noexcept { return node_of_unknown.size(); }

  // Entry lookup for tests and diagnostics; linear in the row length.
  double at(std::size_t row, std::size_t col) const {
    for (std::size_t k = row_ptr[row]; k < row_ptr[row + 1]; ++k) {
      if (col_idx[k] == col) return values[k];
    }
    return 0.0;
  }

  void multiply(const std::vector<double>& x, std::vector<double>& y) const {
    y.resize(unknowns());
    for (std::size_t i = 0; i < unknowns(); ++i) {
      double acc = 0.0;
      for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) acc += values[k] * x[col_idx[k]];
      y[i] = acc;
    }
  }
};

inline double edge_conductance(double a, double b) { return 2.0 * a * b / (a + b); }

inline void validate(const PdeProblem& p) {
  using detail::fail;
  if (p.sigma.empty() || !p.sigma.same_shape(p.current)) {
    fail(ErrorKind::kInvalidProblem, "sigma and current maps must be non-empty and share one shape");
  }
  for (double s : p.sigma.values()) {
    if (!(s > 0.0) || !std::isfinite(s)) fail(ErrorKind::kInvalidProblem, "conductivity must be positive");
  }
  for (double j : p.current.values()) {
    if (!(j >= 0.0) || !std::isfinite(j)) fail(ErrorKind::kInvalidProblem, "current density must be nonnegative");
  }
  if (!std::isfinite(p.vdd)) fail(ErrorKind::kInvalidProblem, "vdd must be finite");
  if (p.pads.empty()) fail(ErrorKind::kInvalidProblem, "at least one pad is required");
  for (const Pad& pad : p.pads) {
    if (pad.row >= p.sigma.height() || pad.col >= p.sigma.width()) {
      fail(ErrorKind::kInvalidProblem, "pad (" + std::to_string(pad.row) + ", " + std::to_string(pad.col) +
                                           ") lies outside the grid");
    }
  }
}

inline LinearSystem assemble_system(const PdeProblem& p) {
  validate(p);
  const std::size_t h = p.sigma.height();
  const std::size_t w = p.sigma.width();
  const std::size_t n = h * w;

  LinearSystem sys;
  sys.height = h;
  sys.width = w;
  sys.unknown_of_node.assign(n, 0);
  for (const Pad& pad : p.pads) sys.unknown_of_node[pad.row * w + pad.col] = -1;
  for (std::size_t node = 0; node < n; ++node) {
    if (sys.unknown_of_node[node] < 0) continue;
    sys.unknown_of_node[node] = static_cast<std::ptrdiff_t>(sys.node_of_unknown.size());
    sys.node_of_unknown.push_back(node);
  }
  if (sys.unknowns() == 0) detail::fail(ErrorKind::kInvalidProblem, "every node is a pad");

  sys.row_ptr.reserve(sys.unknowns() + 1);
  sys.row_ptr.push_back(0);
  sys.rhs.resize(sys.unknowns());
  const auto sigma = p.sigma.values();

  for (std::size_t u = 0; u < sys.unknowns(); ++u) {
    const std::size_t node = sys.node_of_unknown[u];
    const std::size_t r = node / w;
    const std::size_t c = node % w;
    std::vector<std::pair<std::size_t, double>> row;
    double diag = 0.0;
    auto couple = [&](std::size_t other) {
      const double g = edge_conductance(sigma[node], sigma[other]);
      diag += g;
      const auto v = sys.unknown_of_node[other];
      if (v >= 0) row.emplace_back(static_cast<std::size_t>(v), -g);
    };
    // Missing neighbours at the outer boundary mean zero flux.
    if (r > 0) couple(node - w);
    if (c > 0) couple(node - 1);
    if (c + 1 < w) couple(node + 1);
    if (r + 1 < h) couple(node + w);
    row.emplace_back(u, diag);
    std::sort(row.begin(), row.end());
    for (const auto& [col, val] : row) {
      sys.col_idx.push_back(col);
      sys.values.push_back(val);
    }
    sys.row_ptr.push_back(sys.col_idx.size());
    sys.rhs[u] = p.current.values()[node];
  }
  return sys;
}

struct PdeSolution {
  Grid2D ir_drop;  // vdd - V; zero on pads
  int iterations = 0;
  double relative_residual = 0.0;

  Grid2D voltage(double vdd) const {
    Grid2D v = ir_drop;
    for (double& x : v.values()) x = vdd - x;
    return v;
  }
};

namespace impl {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace impl

// Unpreconditioned conjugate gradient. Convergence is declared on the true
// residual b - A x, not only the recursively updated one.
inline std::vector<double> conjugate_gradient(const LinearSystem& sys, const SolverConfig& cfg,
                                              int& iterations, double& relative_residual) {
  detail::require(cfg.tol > 0.0, ErrorKind::kInvalidParameter, "solver tolerance must be positive");
  detail::require(cfg.max_iter > 0, ErrorKind::kInvalidParameter, "max_iter must be positive");
  const std::size_t n = sys.unknowns();
  std::vector<double> x(n, 0.0);
  const double b_norm = std::sqrt(impl::dot(sys.rhs, sys.rhs));
  iterations = 0;
  relative_residual = 0.0;
  if (b_norm == 0.0) return x;

  std::vector<double> r = sys.rhs;
  std::vector<double> p = r;
  std::vector<double> ap(n);
  double rr = impl::dot(r, r);
  const double target = cfg.tol * b_norm;

  while (iterations < cfg.max_iter) {
    sys.multiply(p, ap);
    const double alpha = rr / impl::dot(p, ap);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    ++iterations;
    double rr_next = impl::dot(r, r);
    if (std::sqrt(rr_next) <= target) {
      sys.multiply(x, ap);
      for (std::size_t i = 0; i < n; ++i) r[i] = sys.rhs[i] - ap[i];
      rr_next = impl::dot(r, r);
      if (std::sqrt(rr_next) <= target) {
        relative_residual = std::sqrt(rr_next) / b_norm;
        return x;
      }
      // Drifted: restart from the true residual.
      p = r;
      rr = rr_next;
      continue;
    }
    const double beta = rr_next / rr;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    rr = rr_next;
  }
  sys.multiply(x, ap);
  for (std::size_t i = 0; i < n; ++i) r[i] = sys.rhs[i] - ap[i];
  relative_residual = std::sqrt(impl::dot(r, r)) / b_norm;
  throw ConvergenceError("conjugate gradient did not converge in " + std::to_string(cfg.max_iter) +
                             " iterations (relative residual " + std::to_string(relative_residual) + ")",
                         relative_residual, iterations);
}

inline PdeSolution solve_pde(const PdeProblem& p, const SolverConfig& cfg = {}) {
  const LinearSystem sys = assemble_system(p);
  PdeSolution sol;
  const auto x = conjugate_gradient(sys, cfg, sol.iterations, sol.relative_residual);
  sol.ir_drop = Grid2D(sys.height, sys.width, 0.0);
  auto out = sol.ir_drop.values();
  for (std::size_t u = 0; u < x.size(); ++u) out[sys.node_of_unknown[u]] = x[u];
  return sol;
}

// Current delivered by the pads: the flow from every pad into its
// neighbours plus the demand sitting directly on pad nodes. Equals the
// total demand for an exact solution.
inline double pad_supply(const PdeProblem& p, const Grid2D& ir_drop) {
  const std::size_t h = p.sigma.height();
  const std::size_t w = p.sigma.width();
  std::set<Pad> pads(p.pads.begin(), p.pads.end());
  double total = 0.0;
  for (const Pad& pad : pads) {
    const std::size_t node = pad.row * w + pad.col;
    const double s = p.sigma.values()[node];
    auto flow = [&](std::size_t other) {
      total += edge_conductance(s, p.sigma.values()[other]) * (ir_drop.values()[other] - ir_drop.values()[node]);
    };
    if (pad.row > 0) flow(node - w);
    if (pad.col > 0) flow(node - 1);
    if (pad.col + 1 < w) flow(node + 1);
    if (pad.row + 1 < h) flow(node + w);
    total += p.current.values()[node];
  }
  return total;
}

struct CorrelationReport {
  double pearson = 0.0;
  double spearman = 0.0;
  bool degenerate = false;  // a constant map leaves correlation undefined
};

namespace impl {

inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  // Checked directly: a rounded mean can leave tiny nonzero deviations.
  auto constant = [](std::span<const double> v) {
    return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
  };
  if (constant(a) || constant(b)) return std::nullopt;
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

// Fractional ranks; ties share the average of their positions.
inline std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace impl

inline CorrelationReport compare_labels(const Grid2D& synthetic, const Grid2D& physical) {
  if (!synthetic.same_shape(physical) || synthetic.empty()) {
    irdrop::detail::fail(ErrorKind::kShape, "compared maps must be non-empty and share one shape");
  }
  CorrelationReport rep;
  const auto p = impl::pearson(synthetic.values(), physical.values());
  if (!p) {
    rep.degenerate = true;
    return rep;
  }
  rep.pearson = *p;
  const auto ra = impl::ranks(synthetic.values());
  const auto rb = impl::ranks(physical.values());
  rep.spearman = impl::pearson(ra, rb).value_or(0.0);
  return rep;
}

// Problem used to cross-check the synthetic label: conductivity from the
// power-grid map, demand from density times switching, pads at the corners.
inline PdeProblem problem_from_maps(const Grid2D& power_grid, const Grid2D& cell_density,
                                    const Grid2D& switching, double vdd = 1.0) {
  if (!power_grid.same_shape(cell_density) || !power_grid.same_shape(switching)) {
    irdrop::detail::fail(ErrorKind::kShape, "input maps must share one shape");
  }
  PdeProblem p;
  p.sigma = power_grid;
  p.current = Grid2D(power_grid.height(), power_grid.width());
  for (std::size_t i = 0; i < p.current.size(); ++i) {
    p.current.values()[i] = cell_density.values()[i] * switching.values()[i];
  }
  p.vdd = vdd;
  p.pads = corner_pads(power_grid.height(), power_grid.width());
  return p;
}

}  // namespace irdrop::pde
