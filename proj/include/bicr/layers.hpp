#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bicr/matrix.hpp"
#include "bicr/rng.hpp"

namespace bicr {

enum class Mode { Train, Eval };

// A learnable tensor and its gradient accumulator. Gradients are summed
// across backward calls and zeroed at the start of each optimization step.
struct Parameter {
  Parameter() = default;
  Parameter(Matrix v, std::string n)
      : value(std::move(v)), grad(value.rows(), value.cols()), name(std::move(n)) {}

  void zero_grad() { grad.fill(0.0); }

  Matrix value;
  Matrix grad;
  std::string name;
};

// y = x * W^T + b with W stored out x in. forward() caches the input for
// the next backward(); apply() is the cache-free serving path.
class Affine {
 public:
  Affine() = default;
  // He initialization: weights ~ N(0, 2/fan_in), bias zero.
  Affine(int in, int out, Rng& rng, const std::string& name);

  Matrix forward(const Matrix& x);
  Matrix apply(const Matrix& x) const;
  // Accumulates w/b grads, returns dL/dx.
  Matrix backward(const Matrix& dy);
  // dL/dx only, without touching this layer's grads (for frozen layers).
  Matrix backward_input_only(const Matrix& dy) const;

  int in_dim() const { return w.value.cols(); }
  int out_dim() const { return w.value.rows(); }
  std::vector<Parameter*> parameters() { return {&w, &b}; }

  Parameter w;  // out x in
  Parameter b;  // 1 x out

 private:
  Matrix x_;
};

// Per-channel batch normalization over the rows of a B x C matrix.
// Train mode normalizes with biased batch statistics and updates running
// statistics (unbiased variance, PyTorch convention:
// running = (1 - momentum) * running + momentum * batch). Train mode
// requires B >= 2. Eval mode uses the running statistics.
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(int channels, const std::string& name, double eps = 1e-5, double momentum = 0.1);

  Matrix forward(const Matrix& x);
  Matrix apply(const Matrix& x) const;  // always eval statistics
  Matrix backward(const Matrix& dy);

  void set_mode(Mode m) { mode_ = m; }
  Mode mode() const { return mode_; }
  int channels() const { return gamma.value.cols(); }
  std::vector<Parameter*> parameters() { return {&gamma, &beta}; }

  Parameter gamma;  // 1 x C
  Parameter beta;   // 1 x C
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

 private:
  Mode mode_ = Mode::Train;
  Matrix xhat_;
  std::vector<double> inv_std_;
  bool train_cache_ = false;
};

// y = x for x > 0, slope_c * x otherwise, per channel. The x == 0 point
// uses the positive branch (subgradient choice).
class PReLU {
 public:
  PReLU() = default;
  PReLU(int channels, const std::string& name, double init = 0.25);

  Matrix forward(const Matrix& x);
  Matrix apply(const Matrix& x) const;
  Matrix backward(const Matrix& dy);

  int channels() const { return slope.value.cols(); }
  std::vector<Parameter*> parameters() { return {&slope}; }

  Parameter slope;  // 1 x C

 private:
  Matrix x_;
};

// Row-wise softmax with max-subtraction stabilization.
class SoftmaxRows {
 public:
  Matrix forward(const Matrix& x);
  static Matrix apply(const Matrix& x);
  Matrix backward(const Matrix& dy) const;

 private:
  Matrix y_;
};

// Row-wise l2 normalization. Throws DegenerateVectorError on rows with
// norm below kDegenerateNorm.
class L2NormalizeRows {
 public:
  Matrix forward(const Matrix& x);
  static Matrix apply(const Matrix& x);
  Matrix backward(const Matrix& dy) const;

 private:
  Matrix y_;
  std::vector<double> norms_;
};

class Sigmoid {
 public:
  Matrix forward(const Matrix& x);
  static Matrix apply(const Matrix& x);
  Matrix backward(const Matrix& dy) const;

 private:
  Matrix y_;
};

// Single-decay SGD schedule: lr(epoch) = lr * decay_factor once
// epoch >= decay_epoch.
struct SgdConfig {
  double lr = 8e-3;
  double decay_factor = 0.1;
  int decay_epoch = 30;
  double momentum = 0.0;

  void validate() const;
  double lr_at(int epoch) const { return epoch >= decay_epoch ? lr * decay_factor : lr; }
};

// Plain SGD with optional momentum buffers keyed by parameter identity.
class Sgd {
 public:
  void step(const std::vector<Parameter*>& params, const SgdConfig& cfg, int epoch);

 private:
  std::vector<std::pair<Parameter*, Matrix>> velocity_;
};

void zero_grads(const std::vector<Parameter*>& params);

// Central-difference gradient check. The callable must recompute the loss
// from scratch (forward only) and be deterministic; the analytic gradients
// must already sit in each parameter's grad buffer. Returns the max
// relative error with denominator max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const std::function<double()>& f, const std::vector<Parameter*>& params,
                         double h = 1e-5);

}  // namespace bicr
