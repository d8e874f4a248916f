#pragma once

#include <span>
#include <vector>

#include "bicr/matrix.hpp"
#include "bicr/rng.hpp"

namespace bicr {

// Error-accumulation comparison for one stage sequence. e_c and eps hold
// one value per stage 2..T (length T-1); e_b is the stage-1 model error.
//
//   e_f        = e_b * prod(e_c)                   (pure transfer chain)
//   e_d(1)     = e_b
//   e_d(i)     = eps_i * e_d(i-1) + (1 - eps_i) * e_b * prod_{j<=i} e_c_j
//   diff       = e_f - e_d(T)
struct ErrorSimResult {
  double e_f = 0.0;
  double e_d = 0.0;
  double diff = 0.0;
};

ErrorSimResult error_accumulation_sim(double e_b, std::span<const double> e_c,
                                      std::span<const double> eps);

struct ErrorSweepRow {
  int stages = 0;
  double e_b = 0.0;
  double e_f = 0.0;
  double e_d = 0.0;
  double diff = 0.0;
};

struct ErrorSweepResult {
  std::vector<ErrorSweepRow> rows;
  double min_diff = 0.0;
  bool pass = false;  // every diff >= -1e-12
};

// Random configurations with e_c in [1, 2], eps in [0, 1], e_b in
// [0.5, 2], stage counts in [2, max_stages].
ErrorSweepResult error_accumulation_sweep(int trials, int max_stages, Rng& rng);

// Discrepancy surface between the two fusion weights over an evenly
// spaced [0, 1]^2 grid:
//   value(a1, a2) = || (a1 - a2) * f_prev + (a2 - a1) * f_cur ||_F + c_t
struct FusionGridResult {
  int grid_n = 0;
  double c_t = 0.0;
  double min_value = 0.0;
  Matrix surface;                                  // grid_n x grid_n
  std::vector<std::pair<int, int>> argmin_cells;   // within 1e-12 of the min
};

FusionGridResult fusion_grid_sim(int grid_n, const Matrix& f_prev, const Matrix& f_cur,
                                 double c_t);

}  // namespace bicr
