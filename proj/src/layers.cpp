#include "bicr/layers.hpp"

#include <algorithm>
#include <cmath>

namespace bicr {

Affine::Affine(int in, int out, Rng& rng, const std::string& name) {
  Matrix wv = Matrix::randn(out, in, rng, std::sqrt(2.0 / std::max(in, 1)));
  w = Parameter(std::move(wv), name + ".w");
  b = Parameter(Matrix(1, out), name + ".b");
}

Matrix Affine::forward(const Matrix& x) {
  x_ = x;
  return apply(x);
}

Matrix Affine::apply(const Matrix& x) const {
  if (x.cols() != in_dim()) {
    throw DimensionError("affine " + w.name + ": input width " + std::to_string(x.cols()) +
                         " != " + std::to_string(in_dim()));
  }
  Matrix y = matmul_nt(x, w.value);
  for (int r = 0; r < y.rows(); ++r) {
    double* row = y.row_ptr(r);
    for (int c = 0; c < y.cols(); ++c) row[c] += b.value.at(0, c);
  }
  return y;
}

Matrix Affine::backward(const Matrix& dy) {
  require_shape(dy, x_.rows(), out_dim(), "affine backward " + w.name);
  add_in_place(w.grad, matmul_tn(dy, x_));  // dW = dY^T X
  for (int r = 0; r < dy.rows(); ++r)
    for (int c = 0; c < dy.cols(); ++c) b.grad.at(0, c) += dy.at(r, c);
  return matmul(dy, w.value);  // dX = dY W
}

Matrix Affine::backward_input_only(const Matrix& dy) const { return matmul(dy, w.value); }

BatchNorm::BatchNorm(int channels, const std::string& name, double eps_, double momentum_)
    : gamma(Matrix(1, channels), name + ".gamma"),
      beta(Matrix(1, channels), name + ".beta"),
      running_mean(channels, 0.0),
      running_var(channels, 1.0),
      eps(eps_),
      momentum(momentum_) {
  gamma.value.fill(1.0);
}

Matrix BatchNorm::forward(const Matrix& x) {
  const int c = channels();
  if (x.cols() != c) {
    throw DimensionError("batchnorm " + gamma.name + ": input width " + std::to_string(x.cols()) +
                         " != " + std::to_string(c));
  }
  if (mode_ == Mode::Eval) {
    train_cache_ = false;
    xhat_ = Matrix(x.rows(), c);
    inv_std_.assign(c, 0.0);
    for (int j = 0; j < c; ++j) inv_std_[j] = 1.0 / std::sqrt(running_var[j] + eps);
    Matrix y(x.rows(), c);
    for (int r = 0; r < x.rows(); ++r) {
      for (int j = 0; j < c; ++j) {
        xhat_.at(r, j) = (x.at(r, j) - running_mean[j]) * inv_std_[j];
        y.at(r, j) = gamma.value.at(0, j) * xhat_.at(r, j) + beta.value.at(0, j);
      }
    }
    return y;
  }

  const int bsize = x.rows();
  if (bsize < 2) {
    throw InsufficientDataError("batchnorm " + gamma.name + " in train mode needs a batch of >= 2, got " +
                                std::to_string(bsize));
  }
  train_cache_ = true;
  xhat_ = Matrix(bsize, c);
  inv_std_.assign(c, 0.0);
  Matrix y(bsize, c);
  for (int j = 0; j < c; ++j) {
    double mean = 0.0;
    for (int r = 0; r < bsize; ++r) mean += x.at(r, j);
    mean /= bsize;
    double var = 0.0;
    for (int r = 0; r < bsize; ++r) {
      const double d = x.at(r, j) - mean;
      var += d * d;
    }
    var /= bsize;  // biased, used for normalization
    inv_std_[j] = 1.0 / std::sqrt(var + eps);
    for (int r = 0; r < bsize; ++r) {
      xhat_.at(r, j) = (x.at(r, j) - mean) * inv_std_[j];
      y.at(r, j) = gamma.value.at(0, j) * xhat_.at(r, j) + beta.value.at(0, j);
    }
    const double unbiased = var * bsize / (bsize - 1);
    running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mean;
    running_var[j] = (1.0 - momentum) * running_var[j] + momentum * unbiased;
  }
  return y;
}

Matrix BatchNorm::apply(const Matrix& x) const {
  const int c = channels();
  if (x.cols() != c) {
    throw DimensionError("batchnorm " + gamma.name + ": input width " + std::to_string(x.cols()) +
                         " != " + std::to_string(c));
  }
  Matrix y(x.rows(), c);
  for (int r = 0; r < x.rows(); ++r) {
    for (int j = 0; j < c; ++j) {
      const double xh = (x.at(r, j) - running_mean[j]) / std::sqrt(running_var[j] + eps);
      y.at(r, j) = gamma.value.at(0, j) * xh + beta.value.at(0, j);
    }
  }
  return y;
}

Matrix BatchNorm::backward(const Matrix& dy) {
  require_same_shape(dy, xhat_, "batchnorm backward " + gamma.name);
  const int bsize = dy.rows();
  const int c = channels();
  Matrix dx(bsize, c);
  for (int j = 0; j < c; ++j) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int r = 0; r < bsize; ++r) {
      sum_dy += dy.at(r, j);
      sum_dy_xhat += dy.at(r, j) * xhat_.at(r, j);
    }
    gamma.grad.at(0, j) += sum_dy_xhat;
    beta.grad.at(0, j) += sum_dy;
    const double g = gamma.value.at(0, j);
    if (train_cache_) {
      // Full train-mode gradient: the batch statistics depend on x.
      const double scale = g * inv_std_[j] / bsize;
      for (int r = 0; r < bsize; ++r) {
        dx.at(r, j) = scale * (bsize * dy.at(r, j) - sum_dy - xhat_.at(r, j) * sum_dy_xhat);
      }
    } else {
      const double scale = g * inv_std_[j];
      for (int r = 0; r < bsize; ++r) dx.at(r, j) = scale * dy.at(r, j);
    }
  }
  return dx;
}

PReLU::PReLU(int channels, const std::string& name, double init) {
  Matrix s(1, channels);
  s.fill(init);
  slope = Parameter(std::move(s), name + ".slope");
}

Matrix PReLU::forward(const Matrix& x) {
  x_ = x;
  return apply(x);
}

Matrix PReLU::apply(const Matrix& x) const {
  if (x.cols() != channels()) {
    throw DimensionError("prelu " + slope.name + ": input width " + std::to_string(x.cols()) +
                         " != " + std::to_string(channels()));
  }
  Matrix y = x;
  for (int r = 0; r < y.rows(); ++r) {
    double* row = y.row_ptr(r);
    for (int c = 0; c < y.cols(); ++c) {
      if (row[c] < 0.0) row[c] *= slope.value.at(0, c);
    }
  }
  return y;
}

Matrix PReLU::backward(const Matrix& dy) {
  require_same_shape(dy, x_, "prelu backward " + slope.name);
  Matrix dx(dy.rows(), dy.cols());
  for (int r = 0; r < dy.rows(); ++r) {
    for (int c = 0; c < dy.cols(); ++c) {
      const double xv = x_.at(r, c);
      if (xv < 0.0) {
        dx.at(r, c) = dy.at(r, c) * slope.value.at(0, c);
        slope.grad.at(0, c) += dy.at(r, c) * xv;
      } else {
        dx.at(r, c) = dy.at(r, c);
      }
    }
  }
  return dx;
}

Matrix SoftmaxRows::apply(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    auto row = softmax(x.row(r));
    std::copy(row.begin(), row.end(), y.row_ptr(r));
  }
  return y;
}

Matrix SoftmaxRows::forward(const Matrix& x) {
  y_ = apply(x);
  return y_;
}

Matrix SoftmaxRows::backward(const Matrix& dy) const {
  require_same_shape(dy, y_, "softmax backward");
  Matrix dx(dy.rows(), dy.cols());
  for (int r = 0; r < dy.rows(); ++r) {
    double dot_dy_y = 0.0;
    for (int c = 0; c < dy.cols(); ++c) dot_dy_y += dy.at(r, c) * y_.at(r, c);
    for (int c = 0; c < dy.cols(); ++c) dx.at(r, c) = y_.at(r, c) * (dy.at(r, c) - dot_dy_y);
  }
  return dx;
}

Matrix L2NormalizeRows::apply(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    auto row = l2_normalize(x.row(r));
    std::copy(row.begin(), row.end(), y.row_ptr(r));
  }
  return y;
}

Matrix L2NormalizeRows::forward(const Matrix& x) {
  y_ = Matrix(x.rows(), x.cols());
  norms_.assign(x.rows(), 0.0);
  for (int r = 0; r < x.rows(); ++r) {
    const double n = l2_norm(x.row(r));
    if (n < kDegenerateNorm) {
      throw DegenerateVectorError("l2 normalize: row " + std::to_string(r) + " has norm " +
                                  std::to_string(n));
    }
    norms_[r] = n;
    for (int c = 0; c < x.cols(); ++c) y_.at(r, c) = x.at(r, c) / n;
  }
  return y_;
}

Matrix L2NormalizeRows::backward(const Matrix& dy) const {
  require_same_shape(dy, y_, "l2 normalize backward");
  Matrix dx(dy.rows(), dy.cols());
  for (int r = 0; r < dy.rows(); ++r) {
    double dot_dy_y = 0.0;
    for (int c = 0; c < dy.cols(); ++c) dot_dy_y += dy.at(r, c) * y_.at(r, c);
    for (int c = 0; c < dy.cols(); ++c) {
      dx.at(r, c) = (dy.at(r, c) - y_.at(r, c) * dot_dy_y) / norms_[r];
    }
  }
  return dx;
}

Matrix Sigmoid::apply(const Matrix& x) {
  Matrix y = x;
  for (auto& v : y.data()) v = 1.0 / (1.0 + std::exp(-v));
  return y;
}

Matrix Sigmoid::forward(const Matrix& x) {
  y_ = apply(x);
  return y_;
}

Matrix Sigmoid::backward(const Matrix& dy) const {
  require_same_shape(dy, y_, "sigmoid backward");
  Matrix dx(dy.rows(), dy.cols());
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const double y = y_.data()[i];
    dx.data()[i] = dy.data()[i] * y * (1.0 - y);
  }
  return dx;
}

void SgdConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("sgd lr must be > 0, got " + std::to_string(lr));
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw ConfigError("sgd decay_factor must be in (0, 1], got " + std::to_string(decay_factor));
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("sgd momentum must be in [0, 1), got " + std::to_string(momentum));
  }
}

void Sgd::step(const std::vector<Parameter*>& params, const SgdConfig& cfg, int epoch) {
  cfg.validate();
  const double lr = cfg.lr_at(epoch);
  for (Parameter* p : params) {
    if (!p->grad.all_finite()) {
      throw TrainingDivergedError("non-finite gradient in parameter " + p->name);
    }
    if (cfg.momentum == 0.0) {
      axpy_in_place(p->value, -lr, p->grad);
      continue;
    }
    auto it = std::find_if(velocity_.begin(), velocity_.end(),
                           [p](const auto& kv) { return kv.first == p; });
    if (it == velocity_.end()) {
      velocity_.emplace_back(p, Matrix(p->value.rows(), p->value.cols()));
      it = std::prev(velocity_.end());
    }
    Matrix& v = it->second;
    for (std::size_t i = 0; i < v.size(); ++i) {
      v.data()[i] = cfg.momentum * v.data()[i] + p->grad.data()[i];
      p->value.data()[i] -= lr * v.data()[i];
    }
  }
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->zero_grad();
}

double finite_diff_check(const std::function<double()>& f, const std::vector<Parameter*>& params,
                         double h) {
  if (h < 1e-7 || h > 1e-3) {
    throw ConfigError("finite_diff_check step must be in [1e-7, 1e-3], got " + std::to_string(h));
  }
  double max_rel = 0.0;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data()[i];
      p->value.data()[i] = saved + h;
      const double f_plus = f();
      p->value.data()[i] = saved - h;
      const double f_minus = f();
      p->value.data()[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw EvaluationError("non-finite objective while probing " + p->name);
      }
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double analytic = p->grad.data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace bicr
