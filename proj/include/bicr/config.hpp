#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "bicr/baseline.hpp"
#include "bicr/bict.hpp"
#include "bicr/losses.hpp"
#include "bicr/synthdata.hpp"

namespace bicr {

enum class RunMode { Rfl, Reindex, Frozen, Joint };

RunMode parse_run_mode(const std::string& s);
std::string to_string(RunMode m);

// How the raw knowledge-change coefficient (range [0, 2]) becomes the
// convex fusion weight: clamp to [0, 1] or halve.
enum class EpsilonScale { Clamp, Halve };

EpsilonScale parse_epsilon_scale(const std::string& s);
std::string to_string(EpsilonScale s);

struct TransferTrainConfig {
  BiCTConfig bict;  // feature_dim is mirrored from the embedder config
  int epochs = 20;
  SgdConfig sgd{8e-3, 0.1, -1, 0.0};  // decay_epoch < 0 resolves to epochs / 2

  void validate() const;
};

struct DffConfig {
  EpsilonScale epsilon_scale = EpsilonScale::Clamp;
  bool feature_fusion = true;  // epsilon-weighted mix in the gallery update
  int epsilon_batch_cap = 256;
  bool renormalize_masked_rows = false;

  void validate() const;
};

struct BenchConfig {
  int deep_hidden_dim = 512;
  int deep_depth = 10;

  void validate() const;
};

struct ExperimentConfig {
  std::uint64_t seed = 42;
  RunMode mode = RunMode::Rfl;
  StreamConfig stream;
  EmbedderConfig embedder;  // input_dim mirrored from the stream config
  BaselineTrainConfig baseline;
  TransferTrainConfig transfer;
  LossWeights loss_weights;
  DffConfig dff;
  BenchConfig bench;

  void validate() const;
};

// Canonical JSON echo of a config (includes every key).
nlohmann::json config_to_json(const ExperimentConfig& cfg);

// Strict parse: unknown keys are rejected, partial documents inherit
// defaults. Throws ConfigError with the offending key path.
ExperimentConfig config_from_json(const nlohmann::json& doc);

// Reads and parses a config file; parse errors carry the line/column from
// the JSON parser.
nlohmann::json read_config_document(const std::string& path);

// Applies one `dotted.key=value` override onto a config document.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace bicr
