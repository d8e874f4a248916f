#include "bicr/theory.hpp"

#include <cmath>

namespace bicr {

ErrorSimResult error_accumulation_sim(double e_b, std::span<const double> e_c,
                                      std::span<const double> eps) {
  if (e_c.size() != eps.size()) {
    throw DimensionError("error sim: e_c and eps must cover the same stages");
  }
  if (!(e_b >= 0.0)) throw ConfigError("error sim: e_b must be >= 0");
  for (double v : e_c) {
    if (!(v >= 1.0)) throw ConfigError("error sim: every e_c must be >= 1");
  }
  for (double v : eps) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("error sim: every eps must lie in [0, 1]");
  }

  double chain = e_b;  // pure transfer accumulation up to the current stage
  double fused = e_b;
  for (std::size_t i = 0; i < e_c.size(); ++i) {
    chain *= e_c[i];
    fused = eps[i] * fused + (1.0 - eps[i]) * chain;
  }
  return ErrorSimResult{chain, fused, chain - fused};
}

ErrorSweepResult error_accumulation_sweep(int trials, int max_stages, Rng& rng) {
  if (trials < 0) throw ConfigError("error sweep: trials must be >= 0");
  if (max_stages < 2) throw ConfigError("error sweep: max_stages must be >= 2");
  ErrorSweepResult result;
  result.rows.reserve(trials);
  result.min_diff = std::numeric_limits<double>::infinity();
  for (int i = 0; i < trials; ++i) {
    const int t = 2 + rng.uniform_int(max_stages - 1);
    const double e_b = rng.uniform(0.5, 2.0);
    std::vector<double> e_c(t - 1), eps(t - 1);
    for (auto& v : e_c) v = rng.uniform(1.0, 2.0);
    for (auto& v : eps) v = rng.uniform();
    const auto sim = error_accumulation_sim(e_b, e_c, eps);
    result.rows.push_back(ErrorSweepRow{t, e_b, sim.e_f, sim.e_d, sim.diff});
    result.min_diff = std::min(result.min_diff, sim.diff);
  }
  result.pass = trials == 0 || result.min_diff >= -1e-12;
  return result;
}

FusionGridResult fusion_grid_sim(int grid_n, const Matrix& f_prev, const Matrix& f_cur,
                                 double c_t) {
  if (grid_n < 2) throw ConfigError("fusion grid needs >= 2 points per axis");
  require_same_shape(f_prev, f_cur, "fusion_grid_sim");

  FusionGridResult result;
  result.grid_n = grid_n;
  result.c_t = c_t;
  result.surface = Matrix(grid_n, grid_n);
  result.min_value = std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid_n; ++i) {
    const double a1 = static_cast<double>(i) / (grid_n - 1);
    for (int j = 0; j < grid_n; ++j) {
      const double a2 = static_cast<double>(j) / (grid_n - 1);
      double sq = 0.0;
      for (std::size_t k = 0; k < f_prev.size(); ++k) {
        const double v = (a1 - a2) * f_prev.data()[k] + (a2 - a1) * f_cur.data()[k];
        sq += v * v;
      }
      const double value = std::sqrt(sq) + c_t;
      result.surface.at(i, j) = value;
      result.min_value = std::min(result.min_value, value);
    }
  }
  for (int i = 0; i < grid_n; ++i) {
    for (int j = 0; j < grid_n; ++j) {
      if (result.surface.at(i, j) <= result.min_value + 1e-12) {
        result.argmin_cells.emplace_back(i, j);
      }
    }
  }
  return result;
}

}  // namespace bicr
