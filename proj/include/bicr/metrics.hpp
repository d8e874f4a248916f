#pragma once

#include <map>
#include <vector>

#include "bicr/baseline.hpp"
#include "bicr/gallery.hpp"
#include "bicr/synthdata.hpp"

namespace bicr {

// A query identity against an already-ranked gallery identity list.
struct RankEvalCase {
  int query_identity = 0;
  std::vector<int> ranked_identities;
};

// AP = mean over relevant ranks k of (relevant in top-k) / k. Throws
// EvaluationError when the gallery holds no relevant entry.
double average_precision(const RankEvalCase& c);

struct DatasetMetrics {
  double map = 0.0;
  double r1 = 0.0;
  int evaluated = 0;
  int excluded = 0;  // queries with no relevant gallery entry
};

// Embeds every stage's query set with the query model, ranks it against
// the full store (cross-stage distractors included) and scores mAP / R1
// per query's origin dataset. Queries without any relevant entry are
// excluded and counted. `eval_stage` must equal the store version.
std::map<int, DatasetMetrics> evaluate_stage(const Embedder& query_model,
                                             const GalleryStore& store,
                                             const std::vector<const StageData*>& datasets,
                                             int eval_stage);

// Average forgetting over a per-dataset performance history.
// perf[d][k] is dataset d's metric at evaluation stage d + k (0-based
// datasets); each row spans stages d .. T-1. AF averages the gap between
// each earlier dataset's best past value and its final value.
double average_forgetting(const std::vector<std::vector<double>>& perf);

}  // namespace bicr
