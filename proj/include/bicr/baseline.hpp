#pragma once

#include <vector>

#include "bicr/layers.hpp"
#include "bicr/losses.hpp"
#include "bicr/matrix.hpp"
#include "bicr/synthdata.hpp"

namespace bicr {

struct EmbedderConfig {
  int input_dim = 48;
  int hidden_dim = 128;
  int feature_dim = 32;
  int depth = 3;  // number of affine layers, >= 2

  void validate() const;
  bool operator==(const EmbedderConfig&) const = default;
};

// MLP feature extractor: input -> hidden x (depth - 2) -> feature, PReLU
// between affine layers. Stands in for the image backbone.
class Embedder {
 public:
  Embedder() = default;
  Embedder(const EmbedderConfig& cfg, Rng& rng);

  Matrix forward(const Matrix& x);
  Matrix apply(const Matrix& x) const;
  Matrix backward(const Matrix& dy);

  const EmbedderConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();
  std::size_t parameter_count() const { return param_count_; }

 private:
  EmbedderConfig cfg_;
  std::vector<Affine> fcs_;
  std::vector<PReLU> acts_;
  std::size_t param_count_ = 0;
};

// Per-stage identity classifier over the stage's label set. Labels are
// mapped to class indices in sorted order.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(int feature_dim, std::vector<int> labels, Rng& rng);

  Matrix forward(const Matrix& z) { return fc_.forward(z); }
  Matrix apply(const Matrix& z) const { return fc_.apply(z); }
  Matrix backward(const Matrix& dlogits) { return fc_.backward(dlogits); }

  int num_classes() const { return fc_.out_dim(); }
  int class_of(int label) const;
  const std::vector<int>& labels() const { return labels_; }
  std::vector<Parameter*> parameters() { return fc_.parameters(); }
  const Affine& affine() const { return fc_; }

 private:
  Affine fc_;
  std::vector<int> labels_;  // sorted
};

// Frozen copy of a stage's models and source-domain statistics. All
// members are plain values, so the snapshot is isolated from any later
// mutation of the live models.
struct StageSnapshot {
  Embedder embedder;
  ClassifierHead classifier;
  DomainStatistics stats;
  int stage = 0;
};

StageSnapshot snapshot_freeze(const Embedder& embedder, const ClassifierHead& classifier,
                              const DomainStatistics& stats, int stage);

// Per-dimension statistics of the embedder's features over the samples.
DomainStatistics compute_domain_stats(const Embedder& embedder, const Matrix& inputs);

// Batch-hard triplet loss on row-normalized embeddings with Euclidean
// distances. Returns the loss; writes the gradient w.r.t. the raw
// embeddings into *dz when non-null.
double batch_hard_triplet_loss(const Matrix& z, const std::vector<int>& ids, double margin,
                               Matrix* dz);

struct BaselineTrainConfig {
  int epochs_first = 40;
  int epochs_later = 30;
  SgdConfig sgd{8e-3, 0.1, -1, 0.0};  // decay_epoch < 0 resolves to epochs / 2
  int ids_per_batch = 16;
  int samples_per_id = 4;
  double triplet_margin = 0.3;

  void validate() const;
};

struct BaselineTrainResult {
  Embedder embedder;
  ClassifierHead classifier;
  std::vector<double> epoch_losses;
};

// Cross-entropy + batch-hard triplet fine-tuning on one stage's train
// split. `init` of null trains from scratch; epochs 0 returns the initial
// embedder untouched (with a fresh classifier head).
BaselineTrainResult train_stage_embedder(const Embedder* init, const EmbedderConfig& ecfg,
                                         const std::vector<SyntheticSample>& train,
                                         int epochs, const BaselineTrainConfig& cfg, Rng& rng);

}  // namespace bicr
