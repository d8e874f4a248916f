#include "bicr/losses.hpp"

#include <cmath>

namespace bicr {

void LossWeights::validate() const {
  for (double m : {mu1, mu2, mu3, mu4}) {
    if (!(m >= 0.0) || !std::isfinite(m)) {
      throw ConfigError("loss weights must be finite and nonnegative");
    }
  }
}

DomainStatistics compute_statistics(const Matrix& features) {
  if (features.rows() < 2) {
    throw InsufficientDataError("statistics need >= 2 samples, got " +
                                std::to_string(features.rows()));
  }
  const int n = features.rows();
  const int c = features.cols();
  DomainStatistics s;
  s.mean.assign(c, 0.0);
  s.std.assign(c, 0.0);
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < c; ++j) s.mean[j] += features.at(r, j);
  for (auto& v : s.mean) v /= n;
  for (int r = 0; r < n; ++r) {
    for (int j = 0; j < c; ++j) {
      const double d = features.at(r, j) - s.mean[j];
      s.std[j] += d * d;
    }
  }
  for (auto& v : s.std) v = std::sqrt(v / n);
  return s;
}

double AlignmentLoss::forward(const Matrix& z_new, const Matrix& z_trans) {
  require_same_shape(z_new, z_trans, "alignment_loss");
  batch_ = z_new.rows();
  diff_ = sub(norm_new_.forward(z_new), norm_trans_.forward(z_trans));
  double loss = 0.0;
  for (double v : diff_.data()) loss += v * v;
  return loss / batch_;
}

Matrix AlignmentLoss::backward_trans(double dloss) const {
  return norm_trans_.backward(scale(diff_, -2.0 * dloss / batch_));
}

Matrix AlignmentLoss::backward_new(double dloss) const {
  return norm_new_.backward(scale(diff_, 2.0 * dloss / batch_));
}

double alignment_loss(const Matrix& z_new, const Matrix& z_trans) {
  AlignmentLoss op;
  return op.forward(z_new, z_trans);
}

Matrix AffinityOp::forward(const Matrix& z) {
  if (z.rows() < 2) {
    throw InsufficientDataError("affinity needs a batch of >= 2, got " + std::to_string(z.rows()));
  }
  z_norm_ = norm_.forward(z);
  Matrix sims = matmul_nt(z_norm_, z_norm_);  // cosine of every pair
  return softmax_.forward(sims);
}

Matrix AffinityOp::backward(const Matrix& dm) {
  Matrix ds = softmax_.backward(dm);
  // S = N N^T with N row-normalized: dN = (dS + dS^T) N.
  Matrix dz_norm = matmul(add(ds, transpose(ds)), z_norm_);
  return norm_.backward(dz_norm);
}

Matrix affinity(const Matrix& z) {
  AffinityOp op;
  return op.forward(z);
}

MaskedAffinity MaskNormalizeOp::forward(const Matrix& m, const std::vector<int>& ids) {
  if (m.rows() != m.cols()) {
    throw DimensionError("mask_normalize expects a square affinity, got " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
  if (ids.size() != static_cast<std::size_t>(m.rows())) {
    throw DimensionError("mask_normalize: " + std::to_string(ids.size()) + " labels for " +
                         std::to_string(m.rows()) + " rows");
  }
  const int b = m.rows();
  m_ = m;
  ids_ = ids;
  row_valid_.assign(b, 0);
  denom_.assign(b, 0.0);

  MaskedAffinity out;
  out.m = Matrix(b, b);
  out.ids = ids;
  out.row_valid.assign(b, 0);
  for (int i = 0; i < b; ++i) {
    bool has_cross = false;
    double denom = 0.0;
    for (int k = 0; k < b; ++k) {
      if (k == i) continue;
      const bool cross = ids[k] != ids[i];
      has_cross = has_cross || cross;
      if (renormalize_ ? cross : true) denom += m.at(i, k);
    }
    row_valid_[i] = has_cross ? 1 : 0;
    out.row_valid[i] = row_valid_[i];
    denom_[i] = denom;
    if (!has_cross || denom <= 0.0) continue;
    for (int j = 0; j < b; ++j) {
      if (ids[j] != ids[i]) out.m.at(i, j) = m.at(i, j) / denom;
    }
  }
  return out;
}

Matrix MaskNormalizeOp::backward(const Matrix& dm_hat) const {
  require_same_shape(dm_hat, m_, "mask_normalize backward");
  const int b = m_.rows();
  Matrix dm(b, b);
  for (int i = 0; i < b; ++i) {
    if (!row_valid_[i] || denom_[i] <= 0.0) continue;
    double weighted = 0.0;  // sum_j dm_hat_ij * m_ij over cross-identity j
    for (int j = 0; j < b; ++j) {
      if (ids_[j] != ids_[i]) weighted += dm_hat.at(i, j) * m_.at(i, j);
    }
    const double denom_sq = denom_[i] * denom_[i];
    for (int k = 0; k < b; ++k) {
      if (ids_[k] != ids_[i]) dm.at(i, k) += dm_hat.at(i, k) / denom_[i];
      if (k == i) continue;
      const bool in_denom = renormalize_ ? ids_[k] != ids_[i] : true;
      if (in_denom) dm.at(i, k) -= weighted / denom_sq;
    }
  }
  return dm;
}

MaskedAffinity mask_normalize(const Matrix& m, const std::vector<int>& ids, bool renormalize) {
  MaskNormalizeOp op(renormalize);
  return op.forward(m, ids);
}

double RelationLoss::forward(const MaskedAffinity& m_old, const MaskedAffinity& m_new) {
  require_same_shape(m_old.m, m_new.m, "relation_loss");
  if (m_old.ids != m_new.ids) {
    throw DimensionError("relation_loss: identity mask patterns differ");
  }
  old_ = m_old.m;
  new_ = m_new.m;
  row_valid_ = m_old.row_valid;
  batch_ = old_.rows();
  double loss = 0.0;
  for (int i = 0; i < batch_; ++i) {
    if (!row_valid_[i]) continue;
    for (int j = 0; j < batch_; ++j) {
      const double a = old_.at(i, j);
      if (a <= 0.0) continue;
      loss += a * (std::log(a) - std::log(std::max(new_.at(i, j), kLogFloor)));
    }
  }
  return loss / batch_;
}

Matrix RelationLoss::backward_new(double dloss) const {
  Matrix dm(batch_, batch_);
  for (int i = 0; i < batch_; ++i) {
    if (!row_valid_[i]) continue;
    for (int j = 0; j < batch_; ++j) {
      const double a = old_.at(i, j);
      const double bv = new_.at(i, j);
      if (a <= 0.0 || bv <= kLogFloor) continue;
      dm.at(i, j) = -dloss * a / (bv * batch_);
    }
  }
  return dm;
}

double relation_loss(const MaskedAffinity& m_old, const MaskedAffinity& m_new) {
  RelationLoss op;
  return op.forward(m_old, m_new);
}

namespace {

Matrix restore_to_source_scale(const Matrix& z_norm, const DomainStatistics& stats) {
  if (z_norm.cols() != static_cast<int>(stats.mean.size())) {
    throw DimensionError("statistics dimension " + std::to_string(stats.mean.size()) +
                         " does not match feature width " + std::to_string(z_norm.cols()));
  }
  Matrix out = z_norm;
  for (int r = 0; r < out.rows(); ++r) {
    for (int c = 0; c < out.cols(); ++c) {
      out.at(r, c) = out.at(r, c) * (stats.std[c] + kSigmaEps) + stats.mean[c];
    }
  }
  return out;
}

}  // namespace

std::pair<Matrix, Matrix> anti_forget_logits(const Affine& psi, const Matrix& z_old,
                                             const Matrix& z_trans, const DomainStatistics& stats) {
  if (psi.out_dim() < 1) {
    throw EvaluationError("anti_forget_logits without an old classifier (stage 1)");
  }
  require_same_shape(z_old, z_trans, "anti_forget_logits");
  Matrix q = SoftmaxRows::apply(psi.apply(z_old));
  Matrix restored = restore_to_source_scale(L2NormalizeRows::apply(z_trans), stats);
  Matrix q_hat = SoftmaxRows::apply(psi.apply(restored));
  return {std::move(q), std::move(q_hat)};
}

double anti_forget_loss(const Matrix& q, const Matrix& q_hat) {
  require_same_shape(q, q_hat, "anti_forget_loss");
  double loss = 0.0;
  for (int i = 0; i < q.rows(); ++i) {
    for (int j = 0; j < q.cols(); ++j) {
      const double a = q.at(i, j);
      if (a <= 0.0) continue;
      loss += a * (std::log(a) - std::log(std::max(q_hat.at(i, j), kLogFloor)));
    }
  }
  return loss / q.rows();
}

double AntiForgetPath::forward(const Affine& psi, const Matrix& z_old, const Matrix& z_trans,
                               const DomainStatistics& stats) {
  if (psi.out_dim() < 1) {
    throw EvaluationError("anti-forgetting path without an old classifier (stage 1)");
  }
  require_same_shape(z_old, z_trans, "anti-forgetting path");
  psi_ = &psi;
  batch_ = z_old.rows();
  sigma_.assign(stats.std.size(), 0.0);
  for (std::size_t j = 0; j < sigma_.size(); ++j) sigma_[j] = stats.std[j] + kSigmaEps;

  q_ = SoftmaxRows::apply(psi.apply(z_old));
  Matrix restored = restore_to_source_scale(norm_trans_.forward(z_trans), stats);
  q_hat_ = SoftmaxRows::apply(psi.apply(restored));
  return anti_forget_loss(q_, q_hat_);
}

Matrix AntiForgetPath::backward_trans(double dloss) const {
  // dL/dq_hat = -(1/B) q / q_hat on floored entries, then back through the
  // softmax, the frozen classifier, and the scale restore.
  Matrix dq_hat(q_hat_.rows(), q_hat_.cols());
  for (int i = 0; i < q_hat_.rows(); ++i) {
    for (int j = 0; j < q_hat_.cols(); ++j) {
      const double a = q_.at(i, j);
      const double b = q_hat_.at(i, j);
      if (a <= 0.0 || b <= kLogFloor) continue;
      dq_hat.at(i, j) = -dloss * a / (b * batch_);
    }
  }
  // Softmax Jacobian using the cached q_hat.
  Matrix dlogits(dq_hat.rows(), dq_hat.cols());
  for (int r = 0; r < dq_hat.rows(); ++r) {
    double dot_dy_y = 0.0;
    for (int c = 0; c < dq_hat.cols(); ++c) dot_dy_y += dq_hat.at(r, c) * q_hat_.at(r, c);
    for (int c = 0; c < dq_hat.cols(); ++c) {
      dlogits.at(r, c) = q_hat_.at(r, c) * (dq_hat.at(r, c) - dot_dy_y);
    }
  }
  Matrix drestored = psi_->backward_input_only(dlogits);
  for (int r = 0; r < drestored.rows(); ++r)
    for (int c = 0; c < drestored.cols(); ++c) drestored.at(r, c) *= sigma_[c];
  return norm_trans_.backward(drestored);
}

double DirectionConsistencyLoss::forward(const Matrix& z_trans, const Matrix& z_old,
                                         const Matrix& z_new) {
  require_same_shape(z_trans, z_old, "direction_consistency_loss");
  require_same_shape(z_trans, z_new, "direction_consistency_loss");
  batch_ = z_trans.rows();
  const int c = z_trans.cols();

  Matrix tn = norm_trans_.forward(z_trans);
  Matrix on = L2NormalizeRows::apply(z_old);
  Matrix nn = L2NormalizeRows::apply(z_new);

  u_ = Matrix(batch_, c);
  v_ = Matrix(batch_, c);
  n1_.assign(batch_, 0.0);
  row_valid_.assign(batch_, 0);

  double loss = 0.0;
  int valid = 0;
  for (int i = 0; i < batch_; ++i) {
    double n1 = 0.0, n2 = 0.0;
    for (int j = 0; j < c; ++j) {
      const double e1 = tn.at(i, j) - on.at(i, j);
      const double e2 = nn.at(i, j) - on.at(i, j);
      u_.at(i, j) = e1;
      v_.at(i, j) = e2;
      n1 += e1 * e1;
      n2 += e2 * e2;
    }
    n1 = std::sqrt(n1);
    n2 = std::sqrt(n2);
    if (n1 < kDegenerateNorm || n2 < kDegenerateNorm) continue;
    row_valid_[i] = 1;
    n1_[i] = n1;
    double cos = 0.0;
    for (int j = 0; j < c; ++j) {
      u_.at(i, j) /= n1;
      v_.at(i, j) /= n2;
      cos += u_.at(i, j) * v_.at(i, j);
    }
    loss += 1.0 - cos;
    ++valid;
  }
  degenerate_batch_ = valid == 0;
  return loss / batch_;
}

Matrix DirectionConsistencyLoss::backward_trans(double dloss) const {
  Matrix dtn(batch_, u_.cols());
  for (int i = 0; i < batch_; ++i) {
    if (!row_valid_[i]) continue;
    double uv = 0.0;
    for (int j = 0; j < u_.cols(); ++j) uv += u_.at(i, j) * v_.at(i, j);
    const double scale = -dloss / (batch_ * n1_[i]);
    for (int j = 0; j < u_.cols(); ++j) {
      dtn.at(i, j) = scale * (v_.at(i, j) - u_.at(i, j) * uv);
    }
  }
  return norm_trans_.backward(dtn);
}

double direction_consistency_loss(const Matrix& z_trans, const Matrix& z_old, const Matrix& z_new) {
  DirectionConsistencyLoss op;
  return op.forward(z_trans, z_old, z_new);
}

double TransferObjective::evaluate(BiCTNetwork& theta_fwd, BiCTNetwork& theta_bwd,
                                   const TransferBatch& batch, const FrozenHeads& heads,
                                   bool with_backward) {
  Matrix trans_fwd = theta_fwd.forward(batch.z_old);  // old -> new space
  Matrix trans_bwd = theta_bwd.forward(batch.z_new);  // new -> old space

  // Source-side affinities are constants; transferred affinities carry
  // gradient back into the networks.
  MaskedAffinity masked_old = mask_normalize(affinity(batch.z_old), batch.ids, renormalize_);
  MaskedAffinity masked_new = mask_normalize(affinity(batch.z_new), batch.ids, renormalize_);

  AlignmentLoss align_fwd, align_bwd;
  AffinityOp aff_fwd, aff_bwd;
  MaskNormalizeOp mask_fwd(renormalize_), mask_bwd(renormalize_);
  RelationLoss rel_fwd, rel_bwd;
  AntiForgetPath af_fwd, af_bwd;
  DirectionConsistencyLoss dc_fwd, dc_bwd;

  breakdown_.align_fwd = align_fwd.forward(batch.z_new, trans_fwd);
  breakdown_.align_bwd = align_bwd.forward(batch.z_old, trans_bwd);

  MaskedAffinity masked_trans_fwd = mask_fwd.forward(aff_fwd.forward(trans_fwd), batch.ids);
  MaskedAffinity masked_trans_bwd = mask_bwd.forward(aff_bwd.forward(trans_bwd), batch.ids);
  breakdown_.relation_fwd = rel_fwd.forward(masked_old, masked_trans_fwd);
  breakdown_.relation_bwd = rel_bwd.forward(masked_new, masked_trans_bwd);

  breakdown_.anti_forget_fwd =
      af_fwd.forward(*heads.psi_old, batch.z_old, trans_fwd, heads.stats_old);
  breakdown_.anti_forget_bwd =
      af_bwd.forward(*heads.psi_new, batch.z_new, trans_bwd, heads.stats_new);

  breakdown_.direction_fwd = dc_fwd.forward(trans_fwd, batch.z_old, batch.z_new);
  breakdown_.direction_bwd = dc_bwd.forward(trans_bwd, batch.z_new, batch.z_old);

  const double total = breakdown_.total(weights_);
  if (!with_backward) return total;

  const double w_align = weights_.mu1 * 0.5;
  const double w_rel = weights_.mu2 * 0.5;
  const double w_af = weights_.mu3 * 0.5;
  const double w_dc = weights_.mu4 * 0.5;

  Matrix d_fwd = align_fwd.backward_trans(w_align);
  add_in_place(d_fwd, aff_fwd.backward(mask_fwd.backward(rel_fwd.backward_new(w_rel))));
  add_in_place(d_fwd, af_fwd.backward_trans(w_af));
  add_in_place(d_fwd, dc_fwd.backward_trans(w_dc));
  theta_fwd.backward(d_fwd);

  Matrix d_bwd = align_bwd.backward_trans(w_align);
  add_in_place(d_bwd, aff_bwd.backward(mask_bwd.backward(rel_bwd.backward_new(w_rel))));
  add_in_place(d_bwd, af_bwd.backward_trans(w_af));
  add_in_place(d_bwd, dc_bwd.backward_trans(w_dc));
  theta_bwd.backward(d_bwd);

  return total;
}

}  // namespace bicr
