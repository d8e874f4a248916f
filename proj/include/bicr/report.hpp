#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "bicr/config.hpp"
#include "bicr/lifelong.hpp"

namespace bicr {

std::uint64_t fnv1a64(std::string_view bytes);
std::string to_hex(std::uint64_t v);

// JSON view of a run. The content hash covers the outcome fields plus
// mode and seed; the config echo and wall-clock timings stay outside the
// hash so config-echo reruns and timing jitter cannot change it.
nlohmann::json run_report_json(const ExperimentConfig& cfg, const RunOutcome& outcome);
std::string run_content_hash(const ExperimentConfig& cfg, const RunOutcome& outcome);

// Writes report.json, report.csv and per-stage stage_<t>.json files.
// Returns the content hash.
std::string write_run_report(const std::string& out_dir, const ExperimentConfig& cfg,
                             const RunOutcome& outcome);

// Named-tensor checkpoint (fp32 payload) holding the final serving
// embedder, classifier head and both transfer networks.
void save_checkpoint(const std::string& path, const ExperimentConfig& cfg,
                     const Embedder& query_model, const ClassifierHead& classifier,
                     const BiCTNetwork* theta_fwd, const BiCTNetwork* theta_bwd, int stage);

struct Checkpoint {
  ExperimentConfig cfg;
  Embedder query_model;
  ClassifierHead classifier;
  int stage = 0;
  bool has_transfer = false;
  BiCTNetwork theta_fwd;
  BiCTNetwork theta_bwd;
};

Checkpoint load_checkpoint(const std::string& path);

// Raw synthetic stream serialization (fp64 payload, the generator's exact
// output).
void save_stream(const std::string& path, const std::vector<StageData>& stream);
std::vector<StageData> load_stream(const std::string& path);

}  // namespace bicr
