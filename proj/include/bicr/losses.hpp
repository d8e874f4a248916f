#pragma once

#include <vector>

#include "bicr/bict.hpp"
#include "bicr/layers.hpp"
#include "bicr/matrix.hpp"

namespace bicr {

// Balance weights for the four training-loss components.
struct LossWeights {
  double mu1 = 100.0;  // alignment
  double mu2 = 1.0;    // relation distillation
  double mu3 = 7e-2;   // anti-forgetting
  double mu4 = 5e-4;   // direction consistency

  void validate() const;
};

// Per-dimension mean and standard deviation of a feature population.
// std stores the raw population value; consumers add kSigmaEps before
// dividing or multiplying so zero-variance dimensions stay usable.
struct DomainStatistics {
  std::vector<double> mean;
  std::vector<double> std;
};

inline constexpr double kSigmaEps = 1e-6;
inline constexpr double kLogFloor = 1e-12;

// Population statistics over the rows of `features`. Requires >= 2 rows.
DomainStatistics compute_statistics(const Matrix& features);

// Mean squared distance between row-normalized features:
//   (1/B) sum_i || norm(a_i) - norm(b_i) ||^2
class AlignmentLoss {
 public:
  double forward(const Matrix& z_new, const Matrix& z_trans);
  // Gradients w.r.t. the raw (unnormalized) inputs, scaled by dloss.
  Matrix backward_trans(double dloss) const;
  Matrix backward_new(double dloss) const;

 private:
  L2NormalizeRows norm_new_, norm_trans_;
  Matrix diff_;  // norm(new) - norm(trans)
  int batch_ = 0;
};

double alignment_loss(const Matrix& z_new, const Matrix& z_trans);

// Row-softmax over pairwise cosine similarities (diagonal included).
// Rows are probability distributions over the batch.
class AffinityOp {
 public:
  Matrix forward(const Matrix& z);  // B x C -> B x B, requires B >= 2
  Matrix backward(const Matrix& dm);

 private:
  L2NormalizeRows norm_;
  SoftmaxRows softmax_;
  Matrix z_norm_;
};

Matrix affinity(const Matrix& z);

// Affinity with same-identity entries removed. Each surviving entry is
// divided by the row sum over k != i (same-identity terms included in the
// denominator; renormalize = true restricts the denominator to
// cross-identity terms so rows sum to one). Rows whose every other sample
// shares the identity are flagged invalid and zeroed.
struct MaskedAffinity {
  Matrix m;
  std::vector<int> ids;
  std::vector<char> row_valid;
};

class MaskNormalizeOp {
 public:
  explicit MaskNormalizeOp(bool renormalize = false) : renormalize_(renormalize) {}

  MaskedAffinity forward(const Matrix& m, const std::vector<int>& ids);
  Matrix backward(const Matrix& dm_hat) const;

 private:
  bool renormalize_ = false;
  Matrix m_;
  std::vector<int> ids_;
  std::vector<char> row_valid_;
  std::vector<double> denom_;
};

MaskedAffinity mask_normalize(const Matrix& m, const std::vector<int>& ids,
                              bool renormalize = false);

// Row-wise KL between two masked affinities with identical mask pattern:
//   (1/B) sum_i sum_j old_ij * log(old_ij / new_ij)
// over valid rows, with new floored at kLogFloor inside the log and
// 0 * log 0 := 0.
class RelationLoss {
 public:
  double forward(const MaskedAffinity& m_old, const MaskedAffinity& m_new);
  Matrix backward_new(double dloss) const;  // w.r.t. m_new.m

 private:
  Matrix old_, new_;
  std::vector<char> row_valid_;
  int batch_ = 0;
};

double relation_loss(const MaskedAffinity& m_old, const MaskedAffinity& m_new);

// Old-classifier logits of the source features and of the transferred
// features restored into the source feature scale:
//   q     = softmax(psi(z_old))
//   q_hat = softmax(psi(norm(z_trans) * (std + eps) + mean))
std::pair<Matrix, Matrix> anti_forget_logits(const Affine& psi, const Matrix& z_old,
                                             const Matrix& z_trans, const DomainStatistics& stats);

// (1/B) sum_i KL(q_i || q_hat_i), q_hat floored at kLogFloor in the log.
double anti_forget_loss(const Matrix& q, const Matrix& q_hat);

// Differentiable composite of the two calls above; the classifier stays
// frozen (its gradients are never touched) and the gradient flows to
// z_trans only.
class AntiForgetPath {
 public:
  double forward(const Affine& psi, const Matrix& z_old, const Matrix& z_trans,
                 const DomainStatistics& stats);
  Matrix backward_trans(double dloss) const;

  const Matrix& q() const { return q_; }
  const Matrix& q_hat() const { return q_hat_; }

 private:
  const Affine* psi_ = nullptr;
  L2NormalizeRows norm_trans_;
  Matrix q_, q_hat_;
  std::vector<double> sigma_;
  int batch_ = 0;
};

// (1/B) sum_i (1 - cos(u_i, v_i)) with
//   u_i = normalize(norm(z_trans)_i - norm(z_old)_i)
//   v_i = normalize(norm(z_new)_i - norm(z_old)_i),
// rows with a degenerate difference vector skipped.
class DirectionConsistencyLoss {
 public:
  double forward(const Matrix& z_trans, const Matrix& z_old, const Matrix& z_new);
  Matrix backward_trans(double dloss) const;
  bool degenerate_batch() const { return degenerate_batch_; }

 private:
  L2NormalizeRows norm_trans_;
  Matrix u_, v_;
  std::vector<double> n1_;
  std::vector<char> row_valid_;
  bool degenerate_batch_ = false;
  int batch_ = 0;
};

double direction_consistency_loss(const Matrix& z_trans, const Matrix& z_old, const Matrix& z_new);

// The eight directional components of one training step. Both transfer
// directions contribute symmetrically and are averaged.
struct LossBreakdown {
  double align_fwd = 0.0, align_bwd = 0.0;
  double relation_fwd = 0.0, relation_bwd = 0.0;
  double anti_forget_fwd = 0.0, anti_forget_bwd = 0.0;
  double direction_fwd = 0.0, direction_bwd = 0.0;

  double bcd(const LossWeights& w) const {
    return w.mu1 * 0.5 * (align_fwd + align_bwd) + w.mu2 * 0.5 * (relation_fwd + relation_bwd);
  }
  double bad(const LossWeights& w) const {
    return w.mu3 * 0.5 * (anti_forget_fwd + anti_forget_bwd) +
           w.mu4 * 0.5 * (direction_fwd + direction_bwd);
  }
  double total(const LossWeights& w) const { return bcd(w) + bad(w); }
};

// One batch of frozen-model features for transfer training.
struct TransferBatch {
  Matrix z_old;  // old-model features, B x C
  Matrix z_new;  // new-model features, B x C
  std::vector<int> ids;
};

// Frozen classifier heads and feature statistics for both directions.
struct FrozenHeads {
  const Affine* psi_old = nullptr;
  const Affine* psi_new = nullptr;
  DomainStatistics stats_old;
  DomainStatistics stats_new;
};

// Evaluates the full training objective on one batch and, when requested,
// accumulates gradients into the two transfer networks (only; the frozen
// embedder features and classifiers never receive gradients).
class TransferObjective {
 public:
  explicit TransferObjective(const LossWeights& weights, bool renormalize_masked_rows = false)
      : weights_(weights), renormalize_(renormalize_masked_rows) {
    weights_.validate();
  }

  double evaluate(BiCTNetwork& theta_fwd, BiCTNetwork& theta_bwd, const TransferBatch& batch,
                  const FrozenHeads& heads, bool with_backward);

  const LossBreakdown& breakdown() const { return breakdown_; }

 private:
  LossWeights weights_;
  bool renormalize_ = false;
  LossBreakdown breakdown_;
};

}  // namespace bicr
