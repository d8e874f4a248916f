#pragma once

#include <vector>

#include "bicr/matrix.hpp"
#include "bicr/rng.hpp"

namespace bicr {

// Affine domain map x -> rotation * (scale ⊙ x) + shift. Severity scales
// how far the rotation angles, log-scales and shifts sit from the
// identity map; severity 0 is exactly the identity for every stage.
struct DomainSpec {
  Matrix rotation;            // orthogonal, input_dim x input_dim
  std::vector<double> scale;  // per-dim, > 0
  std::vector<double> shift;  // per-dim
  double noise_std = 0.0;
  double severity = 0.0;

  std::vector<double> apply(std::span<const double> x) const;
  std::vector<double> apply_inverse(std::span<const double> x) const;
};

struct SyntheticSample {
  std::vector<double> x;
  int identity = 0;
  int stage = 0;
};

// One stage of the stream. Train and gallery identities are disjoint;
// query samples share the gallery identities but are distinct draws.
struct StageData {
  int stage = 0;
  DomainSpec domain;
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> gallery;
  std::vector<SyntheticSample> query;
};

struct StreamConfig {
  int stages = 5;
  int ids_per_stage = 50;
  int samples_per_id = 20;
  int input_dim = 48;
  double severity = 1.0;
  double noise_std = 0.6;
  double train_id_fraction = 0.5;
  int query_per_id = 5;
  // Shape of the domain shift at severity 1 (pilot-calibrated defaults).
  double rotation_angle = 0.5;
  double scale_sigma = 0.35;
  double shift_sigma = 0.8;

  void validate() const;
};

DomainSpec make_domain(const StreamConfig& cfg, Rng& rng);

// Generates `stages` stages with globally disjoint identity labels and a
// fresh domain per stage. Deterministic given the generator.
std::vector<StageData> make_stream(const StreamConfig& cfg, Rng& rng);

struct Batch {
  Matrix x;  // B x input_dim
  std::vector<int> ids;
};

// PK sampling: ids_per_batch distinct identities with samples_per_id
// distinct samples each, drawn from the stage's train split.
Batch sample_batch(const StageData& stage, int ids_per_batch, int samples_per_id, Rng& rng);

// Packs samples into a design matrix plus the label column.
Batch to_batch(const std::vector<SyntheticSample>& samples);

}  // namespace bicr
