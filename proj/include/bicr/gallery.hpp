#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bicr/bict.hpp"
#include "bicr/matrix.hpp"

namespace bicr {

// One stored gallery feature. Raw inputs are never stored here; once a
// stage closes, the fp32 feature is all that remains of its images.
struct GalleryRecord {
  std::uint64_t entry_id = 0;
  std::uint32_t identity = 0;       // kept for evaluation only
  std::uint32_t origin_stage = 0;   // stage whose model extracted it
  std::uint32_t space_version = 0;  // feature space it currently lives in
  std::vector<float> feature;

  bool operator==(const GalleryRecord&) const = default;
};

struct RankedEntry {
  std::uint64_t entry_id = 0;
  std::uint32_t identity = 0;
  double similarity = 0.0;
};

// Append-only feature store with in-place version upgrades. Many readers
// or one writer; never both at once.
class GalleryStore {
 public:
  GalleryStore() = default;
  explicit GalleryStore(int feature_dim) : feature_dim_(feature_dim) {}

  int feature_dim() const { return feature_dim_; }
  std::uint32_t current_version() const { return current_version_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<GalleryRecord>& records() const { return records_; }

  // Opens stage `stage` without touching stored features (first stage,
  // and the frozen arm which deliberately leaves history stale).
  void advance_version(int stage);

  // Adds current-stage features; requires current_version == stage.
  void append_features(const Matrix& features, const std::vector<int>& identities, int stage);

  // Adds re-extracted features for any already-open origin stage (rebuild
  // arms). Records land in the current version's feature space.
  void append_extracted(const Matrix& features, const std::vector<int>& identities,
                        int origin_stage);

  // In-place upgrade of every record from version new_stage - 1:
  //   feature <- epsilon * feature + (1 - epsilon) * transfer(feature).
  // The transfer network must be the forward direction in eval mode.
  void update_all(const BiCTNetwork& transfer, double epsilon, int new_stage);

  // Records sorted by descending cosine similarity to q, ties broken by
  // ascending entry id.
  std::vector<RankedEntry> rank_query(std::span<const double> q) const;

  void persist(const std::string& path) const;
  static GalleryStore load(const std::string& path);

  bool operator==(const GalleryStore&) const = default;

 private:
  int feature_dim_ = 0;
  std::uint32_t current_version_ = 0;
  std::uint64_t next_entry_id_ = 0;
  std::vector<GalleryRecord> records_;
};

}  // namespace bicr
