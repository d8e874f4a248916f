#include "bicr/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

namespace bicr {

void StreamConfig::validate() const {
  if (stages < 1) throw ConfigError("stream stages must be >= 1");
  if (ids_per_stage < 4) throw ConfigError("stream ids_per_stage must be >= 4");
  if (samples_per_id < 4) throw ConfigError("stream samples_per_id must be >= 4");
  if (input_dim < 2) throw ConfigError("stream input_dim must be >= 2");
  if (severity < 0.0) throw ConfigError("stream severity must be >= 0");
  if (noise_std < 0.0) throw ConfigError("stream noise_std must be >= 0");
  if (query_per_id < 1 || query_per_id >= samples_per_id) {
    throw ConfigError("stream query_per_id must be in [1, samples_per_id)");
  }
  const int train_ids = static_cast<int>(std::lround(train_id_fraction * ids_per_stage));
  if (train_ids < 2 || ids_per_stage - train_ids < 2) {
    throw ConfigError("stream train_id_fraction must leave >= 2 train and >= 2 gallery identities");
  }
}

std::vector<double> DomainSpec::apply(std::span<const double> x) const {
  const int d = rotation.rows();
  std::vector<double> scaled(d);
  for (int i = 0; i < d; ++i) scaled[i] = scale[i] * x[i];
  std::vector<double> out(d);
  for (int i = 0; i < d; ++i) {
    double acc = 0.0;
    const double* row = rotation.row_ptr(i);
    for (int j = 0; j < d; ++j) acc += row[j] * scaled[j];
    out[i] = acc + shift[i];
  }
  return out;
}

std::vector<double> DomainSpec::apply_inverse(std::span<const double> x) const {
  const int d = rotation.rows();
  std::vector<double> centered(d);
  for (int i = 0; i < d; ++i) centered[i] = x[i] - shift[i];
  std::vector<double> out(d);
  for (int i = 0; i < d; ++i) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += rotation.at(j, i) * centered[j];  // R^T
    out[i] = acc / scale[i];
  }
  return out;
}

DomainSpec make_domain(const StreamConfig& cfg, Rng& rng) {
  const int d = cfg.input_dim;
  DomainSpec spec;
  spec.noise_std = cfg.noise_std;
  spec.severity = cfg.severity;
  spec.scale.resize(d);
  spec.shift.resize(d);
  for (int i = 0; i < d; ++i) spec.scale[i] = std::exp(cfg.severity * cfg.scale_sigma * rng.normal());
  for (int i = 0; i < d; ++i) spec.shift[i] = cfg.severity * cfg.shift_sigma * rng.normal();

  // Product of d random Givens rotations, each with an angle proportional
  // to severity, keeps the matrix exactly orthogonal.
  spec.rotation = Matrix::identity(d);
  for (int k = 0; k < d; ++k) {
    const int i = rng.uniform_int(d);
    int j = rng.uniform_int(d - 1);
    if (j >= i) ++j;
    const double theta = cfg.severity * cfg.rotation_angle * rng.uniform(-1.0, 1.0);
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    for (int col = 0; col < d; ++col) {
      const double ri = spec.rotation.at(i, col);
      const double rj = spec.rotation.at(j, col);
      spec.rotation.at(i, col) = c * ri - s * rj;
      spec.rotation.at(j, col) = s * ri + c * rj;
    }
  }
  return spec;
}

namespace {

SyntheticSample draw_sample(const DomainSpec& domain, std::span<const double> base_mean, int id,
                            int stage, Rng& rng) {
  SyntheticSample s;
  s.x = domain.apply(base_mean);
  for (auto& v : s.x) v += domain.noise_std * rng.normal();
  s.identity = id;
  s.stage = stage;
  return s;
}

}  // namespace

std::vector<StageData> make_stream(const StreamConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<StageData> stream;
  stream.reserve(cfg.stages);
  const int n_train_ids = static_cast<int>(std::lround(cfg.train_id_fraction * cfg.ids_per_stage));

  for (int t = 1; t <= cfg.stages; ++t) {
    Rng stage_rng = rng.split(static_cast<std::uint64_t>(t));
    Rng domain_rng = stage_rng.split(1);
    Rng id_rng = stage_rng.split(2);
    Rng sample_rng = stage_rng.split(3);

    StageData data;
    data.stage = t;
    data.domain = make_domain(cfg, domain_rng);

    std::vector<int> labels(cfg.ids_per_stage);
    std::vector<std::vector<double>> base_means(cfg.ids_per_stage);
    for (int k = 0; k < cfg.ids_per_stage; ++k) {
      labels[k] = (t - 1) * cfg.ids_per_stage + k;  // globally disjoint
      base_means[k].resize(cfg.input_dim);
      for (auto& v : base_means[k]) v = id_rng.normal();
    }

    std::vector<int> order(cfg.ids_per_stage);
    for (int k = 0; k < cfg.ids_per_stage; ++k) order[k] = k;
    id_rng.shuffle(order);

    for (int pos = 0; pos < cfg.ids_per_stage; ++pos) {
      const int k = order[pos];
      const bool is_train = pos < n_train_ids;
      for (int s = 0; s < cfg.samples_per_id; ++s) {
        SyntheticSample sample = draw_sample(data.domain, base_means[k], labels[k], t, sample_rng);
        if (is_train) {
          data.train.push_back(std::move(sample));
        } else if (s < cfg.samples_per_id - cfg.query_per_id) {
          data.gallery.push_back(std::move(sample));
        } else {
          data.query.push_back(std::move(sample));
        }
      }
    }
    stream.push_back(std::move(data));
  }
  return stream;
}

Batch to_batch(const std::vector<SyntheticSample>& samples) {
  Batch b;
  if (samples.empty()) return b;
  b.x = Matrix(static_cast<int>(samples.size()), static_cast<int>(samples[0].x.size()));
  b.ids.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].x.size() != static_cast<std::size_t>(b.x.cols())) {
      throw DimensionError("ragged sample dimensions in batch");
    }
    std::copy(samples[i].x.begin(), samples[i].x.end(), b.x.row_ptr(static_cast<int>(i)));
    b.ids[i] = samples[i].identity;
  }
  return b;
}

Batch sample_batch(const StageData& stage, int ids_per_batch, int samples_per_id, Rng& rng) {
  std::map<int, std::vector<int>> by_id;  // identity -> sample indices
  for (std::size_t i = 0; i < stage.train.size(); ++i) {
    by_id[stage.train[i].identity].push_back(static_cast<int>(i));
  }
  std::vector<int> eligible;
  for (const auto& [id, idx] : by_id) {
    if (static_cast<int>(idx.size()) >= samples_per_id) eligible.push_back(id);
  }
  if (static_cast<int>(eligible.size()) < ids_per_batch) {
    throw InsufficientDataError("PK sampling needs " + std::to_string(ids_per_batch) +
                                " identities with >= " + std::to_string(samples_per_id) +
                                " samples, stage " + std::to_string(stage.stage) + " has " +
                                std::to_string(eligible.size()));
  }
  rng.shuffle(eligible);
  std::vector<const SyntheticSample*> chosen;
  chosen.reserve(static_cast<std::size_t>(ids_per_batch) * samples_per_id);
  for (int p = 0; p < ids_per_batch; ++p) {
    std::vector<int> idx = by_id[eligible[p]];
    rng.shuffle(idx);
    for (int k = 0; k < samples_per_id; ++k) chosen.push_back(&stage.train[idx[k]]);
  }

  Batch b;
  b.x = Matrix(static_cast<int>(chosen.size()), static_cast<int>(chosen[0]->x.size()));
  b.ids.resize(chosen.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    std::copy(chosen[i]->x.begin(), chosen[i]->x.end(), b.x.row_ptr(static_cast<int>(i)));
    b.ids[i] = chosen[i]->identity;
  }
  return b;
}

}  // namespace bicr
