#include "bicr/bict.hpp"

#include <cmath>

namespace bicr {

void BiCTConfig::validate() const {
  if (feature_dim < 1) throw ConfigError("bict feature_dim must be >= 1");
  if (prototype_count < 1) throw ConfigError("bict prototype_count must be >= 1");
  if (bottleneck_dim < 1) throw ConfigError("bict bottleneck_dim must be >= 1");
  if (blocks < 1) throw ConfigError("bict blocks must be >= 1");
  if (fixed_gate >= 0.0 && fixed_gate > 1.0) {
    throw ConfigError("bict fixed_gate must be in [0, 1] when set");
  }
}

CaptureHead::CaptureHead(int feature_dim, int prototype_count, Rng& rng, const std::string& name)
    : fc1_(feature_dim, feature_dim, rng, name + ".fc1"),
      fc2_(feature_dim, feature_dim, rng, name + ".fc2"),
      fc3_(feature_dim, prototype_count, rng, name + ".fc3"),
      act1_(feature_dim, name + ".act1"),
      act2_(feature_dim, name + ".act2") {}

Matrix CaptureHead::forward(const Matrix& z_norm) {
  return fc3_.forward(act2_.forward(fc2_.forward(act1_.forward(fc1_.forward(z_norm)))));
}

Matrix CaptureHead::apply(const Matrix& z_norm) const {
  return fc3_.apply(act2_.apply(fc2_.apply(act1_.apply(fc1_.apply(z_norm)))));
}

Matrix CaptureHead::backward(const Matrix& dlogits) {
  return fc1_.backward(act1_.backward(fc2_.backward(act2_.backward(fc3_.backward(dlogits)))));
}

std::vector<Parameter*> CaptureHead::parameters() {
  std::vector<Parameter*> out;
  for (auto* l : {&fc1_, &fc2_, &fc3_})
    for (auto* p : l->parameters()) out.push_back(p);
  for (auto* a : {&act1_, &act2_})
    for (auto* p : a->parameters()) out.push_back(p);
  return out;
}

MappingHead::MappingHead(int feature_dim, int bottleneck_dim, Rng& rng, const std::string& name)
    : fc1_(feature_dim, bottleneck_dim, rng, name + ".fc1"),
      fc2_(bottleneck_dim, feature_dim, rng, name + ".fc2"),
      bn_(bottleneck_dim, name + ".bn"),
      act_(bottleneck_dim, name + ".act") {}

Matrix MappingHead::forward(const Matrix& z_norm) {
  return fc2_.forward(act_.forward(bn_.forward(fc1_.forward(z_norm))));
}

Matrix MappingHead::apply(const Matrix& z_norm) const {
  return fc2_.apply(act_.apply(bn_.apply(fc1_.apply(z_norm))));
}

Matrix MappingHead::backward(const Matrix& dzm) {
  return fc1_.backward(bn_.backward(act_.backward(fc2_.backward(dzm))));
}

std::vector<Parameter*> MappingHead::parameters() {
  std::vector<Parameter*> out;
  for (auto* p : fc1_.parameters()) out.push_back(p);
  for (auto* p : bn_.parameters()) out.push_back(p);
  for (auto* p : act_.parameters()) out.push_back(p);
  for (auto* p : fc2_.parameters()) out.push_back(p);
  return out;
}

GateHead::GateHead(int feature_dim, Rng& rng, const std::string& name)
    : fc_(feature_dim, 1, rng, name + ".fc") {}

Matrix GateHead::forward(const Matrix& z_norm) { return sig_.forward(fc_.forward(z_norm)); }

Matrix GateHead::apply(const Matrix& z_norm) const { return Sigmoid::apply(fc_.apply(z_norm)); }

Matrix GateHead::backward(const Matrix& da) { return fc_.backward(sig_.backward(da)); }

std::vector<Parameter*> GateHead::parameters() { return fc_.parameters(); }

BiCTBlock::BiCTBlock(const BiCTConfig& cfg, Rng& rng, const std::string& name)
    : prototypes_(Matrix::randn(cfg.prototype_count, cfg.feature_dim, rng,
                                1.0 / std::sqrt(cfg.feature_dim)),
                  name + ".prototypes"),
      capture_(cfg.feature_dim, cfg.prototype_count, rng, name + ".capture"),
      mapping_(cfg.feature_dim, cfg.bottleneck_dim, rng, name + ".mapping"),
      gate_(cfg.feature_dim, rng, name + ".gate"),
      fixed_gate_(cfg.fixed_gate) {}

Matrix BiCTBlock::kcm_forward(const Matrix& z_norm) {
  k_ = softmax_.forward(capture_.forward(z_norm));
  zc_ = matmul(k_, prototypes_.value);
  return zc_;
}

Matrix BiCTBlock::kcm_backward(const Matrix& dzc) {
  add_in_place(prototypes_.grad, matmul_tn(k_, dzc));
  Matrix dk = matmul_nt(dzc, prototypes_.value);
  return capture_.backward(softmax_.backward(dk));
}

Matrix BiCTBlock::fmm_forward(const Matrix& z_norm) {
  zm_ = mapping_.forward(z_norm);
  return zm_;
}

Matrix BiCTBlock::fmm_backward(const Matrix& dzm) { return mapping_.backward(dzm); }

Matrix BiCTBlock::combine(const Matrix& z_norm, const Matrix& zc, const Matrix& zm,
                          const Matrix& a) const {
  Matrix out(z_norm.rows(), z_norm.cols());
  for (int r = 0; r < out.rows(); ++r) {
    const double av = a.at(r, 0);
    for (int c = 0; c < out.cols(); ++c) {
      out.at(r, c) = (1.0 - av) * zc.at(r, c) + av * zm.at(r, c) + z_norm.at(r, c);
    }
  }
  return out;
}

Matrix BiCTBlock::forward(const Matrix& z) {
  z_norm_ = norm_.forward(z);
  kcm_forward(z_norm_);
  fmm_forward(z_norm_);
  if (fixed_gate_ >= 0.0) {
    a_ = Matrix(z.rows(), 1);
    a_.fill(fixed_gate_);
  } else {
    a_ = gate_.forward(z_norm_);
  }
  return combine(z_norm_, zc_, zm_, a_);
}

Matrix BiCTBlock::backward(const Matrix& dout) {
  require_same_shape(dout, z_norm_, "bict block backward");
  const int bsize = dout.rows();
  const int c = dout.cols();
  Matrix dzc(bsize, c);
  Matrix dzm(bsize, c);
  Matrix da(bsize, 1);
  for (int r = 0; r < bsize; ++r) {
    const double av = a_.at(r, 0);
    double da_r = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = dout.at(r, j);
      dzc.at(r, j) = (1.0 - av) * d;
      dzm.at(r, j) = av * d;
      da_r += d * (zm_.at(r, j) - zc_.at(r, j));
    }
    da.at(r, 0) = da_r;
  }
  Matrix dz_norm = dout;  // residual path
  add_in_place(dz_norm, kcm_backward(dzc));
  add_in_place(dz_norm, fmm_backward(dzm));
  if (fixed_gate_ < 0.0) add_in_place(dz_norm, gate_.backward(da));
  return norm_.backward(dz_norm);
}

Matrix BiCTBlock::apply(const Matrix& z) const {
  Matrix z_norm = L2NormalizeRows::apply(z);
  Matrix k = SoftmaxRows::apply(capture_.apply(z_norm));
  Matrix zc = matmul(k, prototypes_.value);
  Matrix zm = mapping_.apply(z_norm);
  Matrix a;
  if (fixed_gate_ >= 0.0) {
    a = Matrix(z.rows(), 1);
    a.fill(fixed_gate_);
  } else {
    a = gate_.apply(z_norm);
  }
  return combine(z_norm, zc, zm, a);
}

std::vector<Parameter*> BiCTBlock::parameters() {
  std::vector<Parameter*> out{&prototypes_};
  for (auto* p : capture_.parameters()) out.push_back(p);
  for (auto* p : mapping_.parameters()) out.push_back(p);
  if (fixed_gate_ < 0.0) {
    for (auto* p : gate_.parameters()) out.push_back(p);
  }
  return out;
}

BiCTNetwork::BiCTNetwork(const BiCTConfig& cfg, TransferDirection dir, int source_stage,
                         int target_stage, Rng& rng)
    : cfg_(cfg), dir_(dir), source_stage_(source_stage), target_stage_(target_stage) {
  cfg_.validate();
  const std::string base = dir == TransferDirection::Forward ? "theta_fwd" : "theta_bwd";
  blocks_.reserve(cfg_.blocks);
  for (int i = 0; i < cfg_.blocks; ++i) {
    blocks_.emplace_back(cfg_, rng, base + ".block" + std::to_string(i));
  }
  param_count_ = 0;
  for (auto* p : parameters()) param_count_ += p->value.size();
}

Matrix BiCTNetwork::forward(const Matrix& z) {
  Matrix cur = z;
  for (auto& b : blocks_) cur = b.forward(cur);
  return cur;
}

Matrix BiCTNetwork::backward(const Matrix& dout) {
  Matrix cur = dout;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) cur = it->backward(cur);
  return cur;
}

Matrix BiCTNetwork::apply(const Matrix& z) const {
  Matrix cur = z;
  for (const auto& b : blocks_) cur = b.apply(cur);
  return cur;
}

void BiCTNetwork::set_mode(Mode m) {
  mode_ = m;
  for (auto& b : blocks_) b.set_mode(m);
}

std::vector<Parameter*> BiCTNetwork::parameters() {
  std::vector<Parameter*> out;
  for (auto& b : blocks_)
    for (auto* p : b.parameters()) out.push_back(p);
  return out;
}

std::size_t BiCTNetwork::parameter_count() const { return param_count_; }

}  // namespace bicr
