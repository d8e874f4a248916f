#pragma once

#include <map>
#include <optional>
#include <vector>

#include "bicr/baseline.hpp"
#include "bicr/config.hpp"
#include "bicr/gallery.hpp"
#include "bicr/metrics.hpp"
#include "bicr/synthdata.hpp"

namespace bicr {

// Instrumented holder for raw stage inputs. Gallery and train raws of a
// closed stage may still be read (the rebuild arms do, deliberately), but
// every such access is counted; the re-indexing-free arm must end a run
// with a zero count.
class RawVault {
 public:
  void add_stage(const StageData& data);
  void close_stage(int stage);

  Batch train_inputs(int stage);
  Batch gallery_inputs(int stage);
  std::vector<int> stages() const;
  std::uint64_t closed_accesses() const { return closed_accesses_; }

 private:
  struct Entry {
    Batch train;
    Batch gallery;
    bool closed = false;
  };
  std::map<int, Entry> stages_;
  std::uint64_t closed_accesses_ = 0;
};

// Knowledge-change coefficient: mean absolute difference between the two
// models' affinity matrices over the same samples, computed in row chunks
// of at most batch_cap and combined as sum(|diff|) / N_total.
double compute_epsilon_raw(const Embedder& old_model, const Embedder& new_model,
                           const Matrix& inputs, int batch_cap);

double scale_epsilon(double raw, EpsilonScale scale);

// Per-parameter convex combination epsilon * old + (1 - epsilon) * new.
// The boundaries reproduce the inputs bitwise.
Embedder dff_fuse_models(const Embedder& old_model, const Embedder& new_model, double epsilon);

struct TransferTrainResult {
  BiCTNetwork theta_fwd;  // old -> new feature space
  BiCTNetwork theta_bwd;  // new -> old feature space
  std::vector<double> epoch_losses;
  LossBreakdown last_breakdown;
};

// Trains the two transfer networks on the current stage's train split
// under the combined distillation objective. Only the transfer networks
// receive gradients; the snapshot and the new models stay frozen. The
// returned networks are in eval mode.
TransferTrainResult train_transfer_networks(const StageSnapshot& old_snap,
                                            const Embedder& new_embedder,
                                            const ClassifierHead& new_classifier,
                                            const StageData& data, const ExperimentConfig& cfg,
                                            Rng rng);

struct StageOutcome {
  int stage = 0;
  double epsilon_raw = std::numeric_limits<double>::quiet_NaN();
  double epsilon_used = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> baseline_losses;
  std::vector<double> transfer_losses;
  std::map<int, DatasetMetrics> eval;  // dataset stage -> metrics at this stage
  double seconds_baseline = 0.0;
  double seconds_transfer = 0.0;
  double seconds_gallery = 0.0;
  double seconds_eval = 0.0;
};

struct RunOutcome {
  std::vector<StageOutcome> stages;
  double final_mean_map = 0.0;
  double final_mean_r1 = 0.0;
  double af_map = std::numeric_limits<double>::quiet_NaN();
  double af_r1 = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t closed_raw_accesses = 0;
  int excluded_queries = 0;
};

// Runs the stage protocol over a generated stream in one of the four
// arms: rfl (transfer + dynamic fusion, never touches closed raws),
// reindex (re-extracts all gallery raws, upper bound), frozen (no feature
// update, lower bound), joint (retrains on the union, oracle).
class LifelongRunner {
 public:
  LifelongRunner(ExperimentConfig cfg, std::vector<StageData> stream);

  RunOutcome run();

  const GalleryStore& store() const { return store_; }
  const std::optional<StageSnapshot>& snapshot() const { return prev_; }
  const std::optional<BiCTNetwork>& theta_fwd() const { return last_fwd_; }
  const std::optional<BiCTNetwork>& theta_bwd() const { return last_bwd_; }
  const std::optional<Embedder>& query_model() const { return query_model_; }
  const std::optional<ClassifierHead>& classifier() const { return last_classifier_; }

 private:
  StageOutcome run_stage(int t);

  ExperimentConfig cfg_;
  std::vector<StageData> stream_;
  Rng root_;
  RawVault vault_;
  GalleryStore store_;
  std::optional<StageSnapshot> prev_;
  std::optional<BiCTNetwork> last_fwd_, last_bwd_;
  std::optional<Embedder> query_model_;
  std::optional<ClassifierHead> last_classifier_;
  std::vector<std::vector<double>> perf_map_, perf_r1_;
  int excluded_queries_ = 0;
};

}  // namespace bicr
