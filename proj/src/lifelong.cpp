#include "bicr/lifelong.hpp"

#include <chrono>
#include <cmath>

namespace bicr {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void RawVault::add_stage(const StageData& data) {
  Entry e;
  e.train = to_batch(data.train);
  e.gallery = to_batch(data.gallery);
  stages_[data.stage] = std::move(e);
}

void RawVault::close_stage(int stage) {
  auto it = stages_.find(stage);
  if (it == stages_.end()) throw ProtocolError("closing unknown stage " + std::to_string(stage));
  it->second.closed = true;
}

Batch RawVault::train_inputs(int stage) {
  auto it = stages_.find(stage);
  if (it == stages_.end()) throw ProtocolError("no raw data for stage " + std::to_string(stage));
  if (it->second.closed) ++closed_accesses_;
  return it->second.train;
}

Batch RawVault::gallery_inputs(int stage) {
  auto it = stages_.find(stage);
  if (it == stages_.end()) throw ProtocolError("no raw data for stage " + std::to_string(stage));
  if (it->second.closed) ++closed_accesses_;
  return it->second.gallery;
}

std::vector<int> RawVault::stages() const {
  std::vector<int> out;
  for (const auto& [s, e] : stages_) out.push_back(s);
  return out;
}

double compute_epsilon_raw(const Embedder& old_model, const Embedder& new_model,
                           const Matrix& inputs, int batch_cap) {
  if (inputs.rows() < 2) {
    throw InsufficientDataError("epsilon needs >= 2 samples, got " +
                                std::to_string(inputs.rows()));
  }
  if (batch_cap < 2) throw ConfigError("epsilon batch cap must be >= 2");
  const int n = inputs.rows();
  const int chunks = (n + batch_cap - 1) / batch_cap;
  double abs_sum = 0.0;
  int consumed = 0;
  for (int c = 0; c < chunks; ++c) {
    // Even chunk sizes keep every chunk >= 2 rows for n >= 2.
    const int begin = static_cast<int>(static_cast<long long>(n) * c / chunks);
    const int end = static_cast<int>(static_cast<long long>(n) * (c + 1) / chunks);
    const int rows = end - begin;
    Matrix chunk(rows, inputs.cols());
    for (int r = 0; r < rows; ++r) {
      std::copy(inputs.row_ptr(begin + r), inputs.row_ptr(begin + r) + inputs.cols(),
                chunk.row_ptr(r));
    }
    Matrix m_old = affinity(old_model.apply(chunk));
    Matrix m_new = affinity(new_model.apply(chunk));
    for (std::size_t i = 0; i < m_old.size(); ++i) {
      abs_sum += std::abs(m_new.data()[i] - m_old.data()[i]);
    }
    consumed += rows;
  }
  return abs_sum / consumed;
}

double scale_epsilon(double raw, EpsilonScale scale) {
  switch (scale) {
    case EpsilonScale::Clamp: return std::min(raw, 1.0);
    case EpsilonScale::Halve: return raw / 2.0;
  }
  return raw;
}

Embedder dff_fuse_models(const Embedder& old_model, const Embedder& new_model, double epsilon) {
  if (old_model.config() != new_model.config()) {
    throw DimensionError("model fusion requires identical architectures");
  }
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ConfigError("fusion epsilon must lie in [0, 1], got " + std::to_string(epsilon));
  }
  if (epsilon == 0.0) return new_model;
  if (epsilon == 1.0) return old_model;
  Embedder fused = new_model;
  Embedder old_copy = old_model;  // parameters() is non-const access
  auto fused_params = fused.parameters();
  auto old_params = old_copy.parameters();
  for (std::size_t i = 0; i < fused_params.size(); ++i) {
    Matrix& out = fused_params[i]->value;
    const Matrix& ov = old_params[i]->value;
    for (std::size_t k = 0; k < out.size(); ++k) {
      out.data()[k] = epsilon * ov.data()[k] + (1.0 - epsilon) * out.data()[k];
    }
  }
  return fused;
}

TransferTrainResult train_transfer_networks(const StageSnapshot& old_snap,
                                            const Embedder& new_embedder,
                                            const ClassifierHead& new_classifier,
                                            const StageData& data, const ExperimentConfig& cfg,
                                            Rng rng) {
  BiCTConfig bcfg = cfg.transfer.bict;
  bcfg.feature_dim = cfg.embedder.feature_dim;

  Rng rng_fwd = rng.split(1);
  Rng rng_bwd = rng.split(2);
  Rng rng_batch = rng.split(3);
  TransferTrainResult result{
      BiCTNetwork(bcfg, TransferDirection::Forward, old_snap.stage, data.stage, rng_fwd),
      BiCTNetwork(bcfg, TransferDirection::Backward, data.stage, old_snap.stage, rng_bwd),
      {},
      {}};

  // Source statistics for the scale restore come from the two frozen
  // models' features of the current stage (older data is unavailable).
  Batch train = to_batch(data.train);
  FrozenHeads heads;
  heads.psi_old = &old_snap.classifier.affine();
  heads.psi_new = &new_classifier.affine();
  heads.stats_old = compute_statistics(old_snap.embedder.apply(train.x));
  heads.stats_new = compute_statistics(new_embedder.apply(train.x));

  TransferObjective objective(cfg.loss_weights, cfg.dff.renormalize_masked_rows);
  std::vector<Parameter*> params = result.theta_fwd.parameters();
  for (auto* p : result.theta_bwd.parameters()) params.push_back(p);

  SgdConfig sgd_cfg = cfg.transfer.sgd;
  if (sgd_cfg.decay_epoch < 0) sgd_cfg.decay_epoch = cfg.transfer.epochs / 2;
  Sgd optimizer;

  const int batch_size = cfg.baseline.ids_per_batch * cfg.baseline.samples_per_id;
  const int batches = std::max<int>(1, static_cast<int>(data.train.size()) / batch_size);

  for (int epoch = 0; epoch < cfg.transfer.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int bi = 0; bi < batches; ++bi) {
      Batch b = sample_batch(data, cfg.baseline.ids_per_batch, cfg.baseline.samples_per_id,
                             rng_batch);
      TransferBatch tb;
      tb.z_old = old_snap.embedder.apply(b.x);
      tb.z_new = new_embedder.apply(b.x);
      tb.ids = b.ids;

      zero_grads(params);
      const double loss = objective.evaluate(result.theta_fwd, result.theta_bwd, tb, heads, true);
      if (!std::isfinite(loss)) {
        throw TrainingDivergedError("transfer loss diverged at epoch " + std::to_string(epoch));
      }
      optimizer.step(params, sgd_cfg, epoch);
      epoch_loss += loss;
    }
    result.epoch_losses.push_back(epoch_loss / batches);
    result.last_breakdown = objective.breakdown();
  }
  result.theta_fwd.set_mode(Mode::Eval);
  result.theta_bwd.set_mode(Mode::Eval);
  return result;
}

LifelongRunner::LifelongRunner(ExperimentConfig cfg, std::vector<StageData> stream)
    : cfg_(std::move(cfg)), stream_(std::move(stream)), root_(cfg_.seed),
      store_(cfg_.embedder.feature_dim) {
  cfg_.validate();
  for (std::size_t i = 0; i < stream_.size(); ++i) {
    if (stream_[i].stage != static_cast<int>(i) + 1) {
      throw ProtocolError("stream stages must be 1..T in order");
    }
  }
}

RunOutcome LifelongRunner::run() {
  RunOutcome out;
  for (int t = 1; t <= static_cast<int>(stream_.size()); ++t) {
    out.stages.push_back(run_stage(t));
  }
  const auto& final_eval = out.stages.back().eval;
  for (const auto& [ds, m] : final_eval) {
    out.final_mean_map += m.map;
    out.final_mean_r1 += m.r1;
  }
  out.final_mean_map /= final_eval.size();
  out.final_mean_r1 /= final_eval.size();
  if (stream_.size() >= 2) {
    out.af_map = average_forgetting(perf_map_);
    out.af_r1 = average_forgetting(perf_r1_);
  }
  out.closed_raw_accesses = vault_.closed_accesses();
  out.excluded_queries = excluded_queries_;
  return out;
}

StageOutcome LifelongRunner::run_stage(int t) {
  if (t != static_cast<int>(perf_map_.size()) + 1) {
    throw ProtocolError("stages must run in order; got stage " + std::to_string(t));
  }
  const StageData& data = stream_[t - 1];
  vault_.add_stage(data);
  StageOutcome rec;
  rec.stage = t;

  Rng rng_baseline = root_.split(0x10000u + static_cast<std::uint64_t>(t));
  Rng rng_transfer = root_.split(0x20000u + static_cast<std::uint64_t>(t));

  // Baseline training phase.
  auto t0 = std::chrono::steady_clock::now();
  Embedder new_embedder;
  ClassifierHead new_classifier;
  if (cfg_.mode == RunMode::Joint) {
    std::vector<SyntheticSample> pooled;
    for (int s = 1; s <= t; ++s) {
      Batch b = vault_.train_inputs(s);  // counts accesses to closed stages by design
      for (int r = 0; r < b.x.rows(); ++r) {
        SyntheticSample sample;
        sample.x.assign(b.x.row_ptr(r), b.x.row_ptr(r) + b.x.cols());
        sample.identity = b.ids[r];
        sample.stage = s;
        pooled.push_back(std::move(sample));
      }
    }
    auto trained = train_stage_embedder(nullptr, cfg_.embedder, pooled,
                                        cfg_.baseline.epochs_first, cfg_.baseline, rng_baseline);
    new_embedder = std::move(trained.embedder);
    new_classifier = std::move(trained.classifier);
    rec.baseline_losses = std::move(trained.epoch_losses);
  } else {
    const Embedder* init = prev_ ? &prev_->embedder : nullptr;
    const int epochs = t == 1 ? cfg_.baseline.epochs_first : cfg_.baseline.epochs_later;
    auto trained =
        train_stage_embedder(init, cfg_.embedder, data.train, epochs, cfg_.baseline, rng_baseline);
    new_embedder = std::move(trained.embedder);
    new_classifier = std::move(trained.classifier);
    rec.baseline_losses = std::move(trained.epoch_losses);
  }
  rec.seconds_baseline = seconds_since(t0);

  // Knowledge-change coefficient between the frozen old model and the
  // freshly trained one, over current-stage samples.
  if (t >= 2 && cfg_.mode != RunMode::Joint) {
    Batch train = vault_.train_inputs(t);
    rec.epsilon_raw =
        compute_epsilon_raw(prev_->embedder, new_embedder, train.x, cfg_.dff.epsilon_batch_cap);
    rec.epsilon_used = scale_epsilon(rec.epsilon_raw, cfg_.dff.epsilon_scale);
  }

  // Transfer training phase (only the arms that update features need it;
  // the reindex arm trains identically so the trajectories stay paired).
  t0 = std::chrono::steady_clock::now();
  if (t >= 2 && (cfg_.mode == RunMode::Rfl || cfg_.mode == RunMode::Reindex)) {
    auto trained =
        train_transfer_networks(*prev_, new_embedder, new_classifier, data, cfg_, rng_transfer);
    last_fwd_ = std::move(trained.theta_fwd);
    last_bwd_ = std::move(trained.theta_bwd);
    rec.transfer_losses = std::move(trained.epoch_losses);
  }
  rec.seconds_transfer = seconds_since(t0);

  // Model fusion (the oracle arm serves its own model).
  Embedder fused;
  if (cfg_.mode == RunMode::Joint || t == 1) {
    fused = new_embedder;
  } else {
    fused = dff_fuse_models(prev_->embedder, new_embedder, rec.epsilon_used);
  }

  // Gallery update phase.
  t0 = std::chrono::steady_clock::now();
  switch (cfg_.mode) {
    case RunMode::Rfl: {
      if (t == 1) {
        store_.advance_version(1);
      } else {
        const double feature_eps = cfg_.dff.feature_fusion ? rec.epsilon_used : 0.0;
        store_.update_all(*last_fwd_, feature_eps, t);
      }
      Batch g = vault_.gallery_inputs(t);
      store_.append_features(L2NormalizeRows::apply(fused.apply(g.x)), g.ids, t);
      break;
    }
    case RunMode::Frozen: {
      store_.advance_version(t);
      Batch g = vault_.gallery_inputs(t);
      store_.append_features(L2NormalizeRows::apply(fused.apply(g.x)), g.ids, t);
      break;
    }
    case RunMode::Reindex:
    case RunMode::Joint: {
      // Full rebuild from raws with the current serving model.
      GalleryStore rebuilt(cfg_.embedder.feature_dim);
      rebuilt.advance_version(t);
      for (int s = 1; s <= t; ++s) {
        Batch g = vault_.gallery_inputs(s);
        rebuilt.append_extracted(L2NormalizeRows::apply(fused.apply(g.x)), g.ids, s);
      }
      store_ = std::move(rebuilt);
      break;
    }
  }
  rec.seconds_gallery = seconds_since(t0);

  // Snapshot for the next stage (the fused model serves as the old model).
  if (cfg_.mode != RunMode::Joint) {
    Batch train = vault_.train_inputs(t);
    DomainStatistics stats = compute_domain_stats(fused, train.x);
    prev_ = snapshot_freeze(fused, new_classifier, stats, t);
  }
  query_model_ = fused;
  last_classifier_ = new_classifier;

  // Evaluation over every dataset seen so far.
  t0 = std::chrono::steady_clock::now();
  std::vector<const StageData*> seen;
  for (int s = 1; s <= t; ++s) seen.push_back(&stream_[s - 1]);
  rec.eval = evaluate_stage(fused, store_, seen, t);
  rec.seconds_eval = seconds_since(t0);

  perf_map_.emplace_back();
  perf_r1_.emplace_back();
  for (const auto& [ds, m] : rec.eval) {
    perf_map_[ds - 1].push_back(m.map);
    perf_r1_[ds - 1].push_back(m.r1);
    excluded_queries_ += m.excluded;
  }

  vault_.close_stage(t);
  return rec;
}

}  // namespace bicr
