#include "bicr/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace bicr {

void EmbedderConfig::validate() const {
  if (input_dim < 1 || hidden_dim < 1 || feature_dim < 1) {
    throw ConfigError("embedder dimensions must be >= 1");
  }
  if (depth < 2) throw ConfigError("embedder depth must be >= 2 affine layers");
}

Embedder::Embedder(const EmbedderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  fcs_.reserve(cfg.depth);
  for (int i = 0; i < cfg.depth; ++i) {
    const int in = i == 0 ? cfg.input_dim : cfg.hidden_dim;
    const int out = i == cfg.depth - 1 ? cfg.feature_dim : cfg.hidden_dim;
    fcs_.emplace_back(in, out, rng, "embedder.fc" + std::to_string(i));
    if (i + 1 < cfg.depth) acts_.emplace_back(out, "embedder.act" + std::to_string(i));
  }
  param_count_ = 0;
  for (auto* p : parameters()) param_count_ += p->value.size();
}

Matrix Embedder::forward(const Matrix& x) {
  Matrix cur = x;
  for (std::size_t i = 0; i < fcs_.size(); ++i) {
    cur = fcs_[i].forward(cur);
    if (i < acts_.size()) cur = acts_[i].forward(cur);
  }
  return cur;
}

Matrix Embedder::apply(const Matrix& x) const {
  Matrix cur = x;
  for (std::size_t i = 0; i < fcs_.size(); ++i) {
    cur = fcs_[i].apply(cur);
    if (i < acts_.size()) cur = acts_[i].apply(cur);
  }
  return cur;
}

Matrix Embedder::backward(const Matrix& dy) {
  Matrix cur = dy;
  for (std::size_t i = fcs_.size(); i-- > 0;) {
    if (i < acts_.size()) cur = acts_[i].backward(cur);
    cur = fcs_[i].backward(cur);
  }
  return cur;
}

std::vector<Parameter*> Embedder::parameters() {
  std::vector<Parameter*> out;
  for (auto& fc : fcs_)
    for (auto* p : fc.parameters()) out.push_back(p);
  for (auto& act : acts_)
    for (auto* p : act.parameters()) out.push_back(p);
  return out;
}

ClassifierHead::ClassifierHead(int feature_dim, std::vector<int> labels, Rng& rng)
    : labels_(std::move(labels)) {
  std::sort(labels_.begin(), labels_.end());
  labels_.erase(std::unique(labels_.begin(), labels_.end()), labels_.end());
  if (labels_.empty()) throw InsufficientDataError("classifier head needs at least one identity");
  fc_ = Affine(feature_dim, static_cast<int>(labels_.size()), rng, "classifier");
}

int ClassifierHead::class_of(int label) const {
  auto it = std::lower_bound(labels_.begin(), labels_.end(), label);
  if (it == labels_.end() || *it != label) {
    throw EvaluationError("label " + std::to_string(label) + " unknown to this classifier head");
  }
  return static_cast<int>(it - labels_.begin());
}

StageSnapshot snapshot_freeze(const Embedder& embedder, const ClassifierHead& classifier,
                              const DomainStatistics& stats, int stage) {
  return StageSnapshot{embedder, classifier, stats, stage};
}

DomainStatistics compute_domain_stats(const Embedder& embedder, const Matrix& inputs) {
  return compute_statistics(embedder.apply(inputs));
}

double batch_hard_triplet_loss(const Matrix& z, const std::vector<int>& ids, double margin,
                               Matrix* dz) {
  if (ids.size() != static_cast<std::size_t>(z.rows())) {
    throw DimensionError("triplet loss: label count does not match batch");
  }
  const int b = z.rows();
  L2NormalizeRows norm;
  Matrix zn = norm.forward(z);

  Matrix dist(b, b);
  for (int i = 0; i < b; ++i) {
    for (int j = i + 1; j < b; ++j) {
      double d2 = 0.0;
      for (int c = 0; c < z.cols(); ++c) {
        const double d = zn.at(i, c) - zn.at(j, c);
        d2 += d * d;
      }
      const double d = std::sqrt(d2);
      dist.at(i, j) = d;
      dist.at(j, i) = d;
    }
  }

  double loss = 0.0;
  int active_anchors = 0;
  std::vector<std::pair<int, int>> hard(b, {-1, -1});  // (hardest positive, hardest negative)
  for (int i = 0; i < b; ++i) {
    int pos = -1, neg = -1;
    for (int j = 0; j < b; ++j) {
      if (j == i) continue;
      if (ids[j] == ids[i]) {
        if (pos < 0 || dist.at(i, j) > dist.at(i, pos)) pos = j;
      } else {
        if (neg < 0 || dist.at(i, j) < dist.at(i, neg)) neg = j;
      }
    }
    if (pos < 0 || neg < 0) continue;
    hard[i] = {pos, neg};
    ++active_anchors;
    loss += std::max(0.0, dist.at(i, pos) - dist.at(i, neg) + margin);
  }
  if (active_anchors == 0) {
    if (dz) *dz = Matrix(b, z.cols());
    return 0.0;
  }
  loss /= active_anchors;

  if (dz) {
    Matrix dzn(b, z.cols());
    const double w = 1.0 / active_anchors;
    for (int i = 0; i < b; ++i) {
      const auto [pos, neg] = hard[i];
      if (pos < 0) continue;
      if (dist.at(i, pos) - dist.at(i, neg) + margin <= 0.0) continue;
      for (const auto& [j, sign] : {std::pair{pos, w}, std::pair{neg, -w}}) {
        const double d = dist.at(i, j);
        if (d < kDegenerateNorm) continue;
        for (int c = 0; c < z.cols(); ++c) {
          const double g = sign * (zn.at(i, c) - zn.at(j, c)) / d;
          dzn.at(i, c) += g;
          dzn.at(j, c) -= g;
        }
      }
    }
    *dz = norm.backward(dzn);
  }
  return loss;
}

void BaselineTrainConfig::validate() const {
  if (epochs_first < 0 || epochs_later < 0) throw ConfigError("baseline epochs must be >= 0");
  if (ids_per_batch < 2) throw ConfigError("baseline ids_per_batch must be >= 2");
  if (samples_per_id < 2) throw ConfigError("baseline samples_per_id must be >= 2");
  if (triplet_margin < 0.0) throw ConfigError("baseline triplet_margin must be >= 0");
}

namespace {

double cross_entropy(const Matrix& logits, const std::vector<int>& classes, Matrix* dlogits) {
  const int b = logits.rows();
  double loss = 0.0;
  if (dlogits) *dlogits = Matrix(b, logits.cols());
  for (int i = 0; i < b; ++i) {
    auto p = softmax(logits.row(i));
    loss -= std::log(std::max(p[classes[i]], kLogFloor));
    if (dlogits) {
      for (int c = 0; c < logits.cols(); ++c) {
        dlogits->at(i, c) = (p[c] - (c == classes[i] ? 1.0 : 0.0)) / b;
      }
    }
  }
  return loss / b;
}

}  // namespace

BaselineTrainResult train_stage_embedder(const Embedder* init, const EmbedderConfig& ecfg,
                                         const std::vector<SyntheticSample>& train, int epochs,
                                         const BaselineTrainConfig& cfg, Rng& rng) {
  cfg.validate();
  std::map<int, std::vector<int>> by_id;
  for (std::size_t i = 0; i < train.size(); ++i) {
    by_id[train[i].identity].push_back(static_cast<int>(i));
  }
  if (by_id.size() < 2) {
    throw InsufficientDataError("unlearnable split: training needs >= 2 identities, got " +
                                std::to_string(by_id.size()));
  }
  std::size_t min_count = train.size();
  std::vector<int> id_list;
  for (const auto& [id, idx] : by_id) {
    id_list.push_back(id);
    min_count = std::min(min_count, idx.size());
  }
  if (min_count < 2) {
    throw InsufficientDataError("unlearnable split: every identity needs >= 2 samples");
  }

  BaselineTrainResult result;
  result.embedder = init ? *init : Embedder(ecfg, rng.split(1));
  result.classifier = ClassifierHead(ecfg.feature_dim, id_list, rng.split(2));
  if (init && init->config() != ecfg) {
    throw DimensionError("baseline init embedder does not match the configured architecture");
  }
  if (epochs == 0) return result;

  const int p_eff = std::min<int>(cfg.ids_per_batch, static_cast<int>(id_list.size()));
  const int k_eff = std::min<int>(cfg.samples_per_id, static_cast<int>(min_count));
  const int batch_size = p_eff * k_eff;
  const int batches = std::max<int>(1, static_cast<int>(train.size()) / batch_size);

  SgdConfig sgd_cfg = cfg.sgd;
  if (sgd_cfg.decay_epoch < 0) sgd_cfg.decay_epoch = epochs / 2;

  std::vector<Parameter*> params = result.embedder.parameters();
  for (auto* p : result.classifier.parameters()) params.push_back(p);
  Sgd optimizer;
  Rng batch_rng = rng.split(3);

  const int input_dim = ecfg.input_dim;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int bi = 0; bi < batches; ++bi) {
      // PK batch over the train split.
      std::vector<int> ids_order = id_list;
      batch_rng.shuffle(ids_order);
      Matrix bx(batch_size, input_dim);
      std::vector<int> bids(batch_size);
      std::vector<int> bclasses(batch_size);
      int row = 0;
      for (int p = 0; p < p_eff; ++p) {
        std::vector<int> idx = by_id.at(ids_order[p]);
        batch_rng.shuffle(idx);
        for (int k = 0; k < k_eff; ++k, ++row) {
          const auto& s = train[idx[k]];
          std::copy(s.x.begin(), s.x.end(), bx.row_ptr(row));
          bids[row] = s.identity;
          bclasses[row] = result.classifier.class_of(s.identity);
        }
      }

      zero_grads(params);
      Matrix z = result.embedder.forward(bx);
      Matrix logits = result.classifier.forward(z);
      Matrix dlogits;
      const double ce = cross_entropy(logits, bclasses, &dlogits);
      Matrix dz = result.classifier.backward(dlogits);
      Matrix dz_tri;
      const double tri = batch_hard_triplet_loss(z, bids, cfg.triplet_margin, &dz_tri);
      add_in_place(dz, dz_tri);
      result.embedder.backward(dz);

      const double loss = ce + tri;
      if (!std::isfinite(loss)) {
        throw TrainingDivergedError("baseline loss diverged at epoch " + std::to_string(epoch));
      }
      optimizer.step(params, sgd_cfg, epoch);
      epoch_loss += loss;
    }
    result.epoch_losses.push_back(epoch_loss / batches);
  }
  return result;
}

}  // namespace bicr
