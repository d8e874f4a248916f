#include "bicr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace bicr {

double average_precision(const RankEvalCase& c) {
  int relevant_seen = 0;
  double ap = 0.0;
  for (std::size_t k = 0; k < c.ranked_identities.size(); ++k) {
    if (c.ranked_identities[k] == c.query_identity) {
      ++relevant_seen;
      ap += static_cast<double>(relevant_seen) / static_cast<double>(k + 1);
    }
  }
  if (relevant_seen == 0) {
    throw EvaluationError("average_precision: no relevant entry for identity " +
                          std::to_string(c.query_identity));
  }
  return ap / relevant_seen;
}

std::map<int, DatasetMetrics> evaluate_stage(const Embedder& query_model,
                                             const GalleryStore& store,
                                             const std::vector<const StageData*>& datasets,
                                             int eval_stage) {
  if (static_cast<int>(store.current_version()) != eval_stage) {
    throw ProtocolError("evaluate_stage at stage " + std::to_string(eval_stage) +
                        " against a store at version " + std::to_string(store.current_version()));
  }
  std::set<int> gallery_ids;
  for (const auto& rec : store.records()) gallery_ids.insert(static_cast<int>(rec.identity));

  std::map<int, DatasetMetrics> out;
  for (const StageData* ds : datasets) {
    if (ds->query.empty()) {
      throw EvaluationError("empty query set for dataset stage " + std::to_string(ds->stage));
    }
    Batch q = to_batch(ds->query);
    Matrix feats = L2NormalizeRows::apply(query_model.apply(q.x));

    const int nq = feats.rows();
    std::vector<double> ap(nq, -1.0);  // -1 marks an excluded query
    std::vector<char> hit1(nq, 0);
#pragma omp parallel for schedule(static) if (nq >= 8)
    for (int i = 0; i < nq; ++i) {
      if (!gallery_ids.count(q.ids[i])) continue;
      auto ranked = store.rank_query(feats.row(i));
      RankEvalCase c;
      c.query_identity = q.ids[i];
      c.ranked_identities.reserve(ranked.size());
      for (const auto& e : ranked) c.ranked_identities.push_back(static_cast<int>(e.identity));
      ap[i] = average_precision(c);
      hit1[i] = c.ranked_identities.front() == c.query_identity ? 1 : 0;
    }

    DatasetMetrics m;
    for (int i = 0; i < nq; ++i) {
      if (ap[i] < 0.0) {
        ++m.excluded;
        continue;
      }
      ++m.evaluated;
      m.map += ap[i];
      m.r1 += hit1[i];
    }
    if (m.evaluated > 0) {
      m.map /= m.evaluated;
      m.r1 /= m.evaluated;
    }
    out[ds->stage] = m;
  }
  return out;
}

double average_forgetting(const std::vector<std::vector<double>>& perf) {
  const std::size_t t = perf.size();
  if (t < 2) throw EvaluationError("average_forgetting needs >= 2 stages");
  double af = 0.0;
  for (std::size_t d = 0; d + 1 < t; ++d) {
    const auto& row = perf[d];
    if (row.size() != t - d) {
      throw DimensionError("average_forgetting: dataset " + std::to_string(d + 1) +
                           " history has " + std::to_string(row.size()) + " entries, expected " +
                           std::to_string(t - d));
    }
    double best_past = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k + 1 < row.size(); ++k) best_past = std::max(best_past, row[k]);
    af += best_past - row.back();
  }
  return af / static_cast<double>(t - 1);
}

}  // namespace bicr
