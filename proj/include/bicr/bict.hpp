#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "bicr/layers.hpp"
#include "bicr/matrix.hpp"
#include "bicr/rng.hpp"

namespace bicr {

// Forward transfers source-stage (old) features into the target (new)
// feature space; Backward is the reverse instance.
enum class TransferDirection { Forward, Backward };

struct BiCTConfig {
  int feature_dim = 32;      // C
  int prototype_count = 16;  // P
  int bottleneck_dim = 32;   // C0
  int blocks = 4;
  // When in [0, 1], replaces the learned gate with a constant balance
  // factor (fixed-balance ablation). Negative means learned.
  double fixed_gate = -1.0;

  void validate() const;
};

// Knowledge-capturing path: a capture MLP produces per-prototype logits,
// softmax turns them into a capturing probability, and the output is the
// probability-weighted sum of learnable prototype rows.
class CaptureHead {
 public:
  CaptureHead() = default;
  CaptureHead(int feature_dim, int prototype_count, Rng& rng, const std::string& name);

  Matrix forward(const Matrix& z_norm);  // B x C -> B x P logits
  Matrix apply(const Matrix& z_norm) const;
  Matrix backward(const Matrix& dlogits);

  std::vector<Parameter*> parameters();

 private:
  Affine fc1_, fc2_, fc3_;
  PReLU act1_, act2_;
};

// Bottleneck mapping path: C -> C0 -> C with batch norm and PReLU in the
// middle.
class MappingHead {
 public:
  MappingHead() = default;
  MappingHead(int feature_dim, int bottleneck_dim, Rng& rng, const std::string& name);

  Matrix forward(const Matrix& z_norm);
  Matrix apply(const Matrix& z_norm) const;
  Matrix backward(const Matrix& dzm);
  void set_mode(Mode m) { bn_.set_mode(m); }

  std::vector<Parameter*> parameters();
  BatchNorm& batch_norm() { return bn_; }

 private:
  Affine fc1_, fc2_;
  BatchNorm bn_;
  PReLU act_;
};

// Scalar balance factor per sample: affine C -> 1 followed by a sigmoid,
// so the factor stays strictly inside (0, 1).
class GateHead {
 public:
  GateHead() = default;
  GateHead(int feature_dim, Rng& rng, const std::string& name);

  Matrix forward(const Matrix& z_norm);  // B x 1
  Matrix apply(const Matrix& z_norm) const;
  Matrix backward(const Matrix& da);

  std::vector<Parameter*> parameters();

 private:
  Affine fc_;
  Sigmoid sig_;
};

// One transfer block. The input is re-l2-normalized, both paths consume
// the normalized feature, and the normalized feature rides the residual:
//   out = (1 - a) * z_c + a * z_m + z_norm.
class BiCTBlock {
 public:
  BiCTBlock() = default;
  BiCTBlock(const BiCTConfig& cfg, Rng& rng, const std::string& name);

  // Knowledge-capturing path on an already normalized input.
  Matrix kcm_forward(const Matrix& z_norm);
  Matrix kcm_backward(const Matrix& dzc);
  // Mapping path on an already normalized input.
  Matrix fmm_forward(const Matrix& z_norm);
  Matrix fmm_backward(const Matrix& dzm);

  Matrix forward(const Matrix& z);
  Matrix backward(const Matrix& dout);
  Matrix apply(const Matrix& z) const;

  void set_mode(Mode m) { mapping_.set_mode(m); }
  std::vector<Parameter*> parameters();
  const Matrix& gate_values() const { return a_; }  // B x 1, after forward
  Parameter& prototypes() { return prototypes_; }
  MappingHead& mapping() { return mapping_; }

 private:
  Matrix combine(const Matrix& z_norm, const Matrix& zc, const Matrix& zm, const Matrix& a) const;

  Parameter prototypes_;  // P x C
  CaptureHead capture_;
  MappingHead mapping_;
  GateHead gate_;
  double fixed_gate_ = -1.0;

  L2NormalizeRows norm_;
  SoftmaxRows softmax_;
  Matrix z_norm_, k_, zc_, zm_, a_;
};

// Cascade of transfer blocks (four by the default configuration), each
// with independent prototypes and heads.
class BiCTNetwork {
 public:
  BiCTNetwork() = default;
  BiCTNetwork(const BiCTConfig& cfg, TransferDirection dir, int source_stage, int target_stage,
              Rng& rng);

  Matrix forward(const Matrix& z);
  Matrix backward(const Matrix& dout);
  Matrix apply(const Matrix& z) const;

  void set_mode(Mode m);
  Mode mode() const { return mode_; }
  std::vector<Parameter*> parameters();
  std::size_t parameter_count() const;

  TransferDirection direction() const { return dir_; }
  int source_stage() const { return source_stage_; }
  int target_stage() const { return target_stage_; }
  const BiCTConfig& config() const { return cfg_; }
  std::vector<BiCTBlock>& blocks() { return blocks_; }

 private:
  BiCTConfig cfg_;
  TransferDirection dir_ = TransferDirection::Forward;
  int source_stage_ = 0;
  int target_stage_ = 0;
  Mode mode_ = Mode::Train;
  std::vector<BiCTBlock> blocks_;
  std::size_t param_count_ = 0;
};

}  // namespace bicr
