#include "bicr/config.hpp"

#include <fstream>

namespace bicr {

using nlohmann::json;

RunMode parse_run_mode(const std::string& s) {
  if (s == "rfl") return RunMode::Rfl;
  if (s == "reindex") return RunMode::Reindex;
  if (s == "frozen") return RunMode::Frozen;
  if (s == "joint") return RunMode::Joint;
  throw ConfigError("unknown mode '" + s + "' (expected rfl|reindex|frozen|joint)");
}

std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::Rfl: return "rfl";
    case RunMode::Reindex: return "reindex";
    case RunMode::Frozen: return "frozen";
    case RunMode::Joint: return "joint";
  }
  return "?";
}

EpsilonScale parse_epsilon_scale(const std::string& s) {
  if (s == "clamp") return EpsilonScale::Clamp;
  if (s == "halve") return EpsilonScale::Halve;
  throw ConfigError("unknown epsilon_scale '" + s + "' (expected clamp|halve)");
}

std::string to_string(EpsilonScale s) {
  return s == EpsilonScale::Clamp ? "clamp" : "halve";
}

void TransferTrainConfig::validate() const {
  bict.validate();
  if (epochs < 0) throw ConfigError("transfer epochs must be >= 0");
  SgdConfig resolved = sgd;
  if (resolved.decay_epoch < 0) resolved.decay_epoch = 0;
  resolved.validate();
}

void DffConfig::validate() const {
  if (epsilon_batch_cap < 2) throw ConfigError("dff epsilon_batch_cap must be >= 2");
}

void BenchConfig::validate() const {
  if (deep_hidden_dim < 1) throw ConfigError("bench deep_hidden_dim must be >= 1");
  if (deep_depth < 2) throw ConfigError("bench deep_depth must be >= 2");
}

void ExperimentConfig::validate() const {
  stream.validate();
  embedder.validate();
  baseline.validate();
  transfer.validate();
  loss_weights.validate();
  dff.validate();
  bench.validate();
  if (embedder.input_dim != stream.input_dim) {
    throw ConfigError("embedder input_dim must equal stream input_dim");
  }
  if (transfer.bict.feature_dim != embedder.feature_dim) {
    throw ConfigError("transfer feature_dim must equal embedder feature_dim");
  }
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["mode"] = to_string(cfg.mode);
  j["stream"] = {{"stages", cfg.stream.stages},
                 {"ids_per_stage", cfg.stream.ids_per_stage},
                 {"samples_per_id", cfg.stream.samples_per_id},
                 {"input_dim", cfg.stream.input_dim},
                 {"severity", cfg.stream.severity},
                 {"noise_std", cfg.stream.noise_std},
                 {"train_id_fraction", cfg.stream.train_id_fraction},
                 {"query_per_id", cfg.stream.query_per_id},
                 {"rotation_angle", cfg.stream.rotation_angle},
                 {"scale_sigma", cfg.stream.scale_sigma},
                 {"shift_sigma", cfg.stream.shift_sigma}};
  j["embedder"] = {{"hidden_dim", cfg.embedder.hidden_dim},
                   {"feature_dim", cfg.embedder.feature_dim},
                   {"depth", cfg.embedder.depth}};
  j["baseline"] = {{"epochs_first", cfg.baseline.epochs_first},
                   {"epochs_later", cfg.baseline.epochs_later},
                   {"lr", cfg.baseline.sgd.lr},
                   {"lr_decay", cfg.baseline.sgd.decay_factor},
                   {"decay_epoch", cfg.baseline.sgd.decay_epoch},
                   {"momentum", cfg.baseline.sgd.momentum},
                   {"triplet_margin", cfg.baseline.triplet_margin}};
  j["transfer"] = {{"blocks", cfg.transfer.bict.blocks},
                   {"prototypes", cfg.transfer.bict.prototype_count},
                   {"bottleneck_dim", cfg.transfer.bict.bottleneck_dim},
                   {"fixed_gate", cfg.transfer.bict.fixed_gate},
                   {"epochs", cfg.transfer.epochs},
                   {"lr", cfg.transfer.sgd.lr},
                   {"lr_decay", cfg.transfer.sgd.decay_factor},
                   {"decay_epoch", cfg.transfer.sgd.decay_epoch},
                   {"momentum", cfg.transfer.sgd.momentum}};
  j["batch"] = {{"ids_per_batch", cfg.baseline.ids_per_batch},
                {"samples_per_id", cfg.baseline.samples_per_id}};
  j["loss_weights"] = {{"mu1", cfg.loss_weights.mu1},
                       {"mu2", cfg.loss_weights.mu2},
                       {"mu3", cfg.loss_weights.mu3},
                       {"mu4", cfg.loss_weights.mu4}};
  j["dff"] = {{"epsilon_scale", to_string(cfg.dff.epsilon_scale)},
              {"feature_fusion", cfg.dff.feature_fusion},
              {"epsilon_batch_cap", cfg.dff.epsilon_batch_cap},
              {"renormalize_masked_rows", cfg.dff.renormalize_masked_rows}};
  j["bench"] = {{"deep_hidden_dim", cfg.bench.deep_hidden_dim},
                {"deep_depth", cfg.bench.deep_depth}};
  return j;
}

namespace {

class SectionReader {
 public:
  SectionReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_ + " must be an object");
  }

  ~SectionReader() = default;

  template <typename T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  void get_string(const char* key, std::string& out) { get<std::string>(key, out); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw ConfigError("unknown config key " + path_ + "." + it.key());
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

}  // namespace

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig cfg;
  if (!doc.is_object()) throw ConfigError("config root must be a JSON object");

  SectionReader root(doc, "config");
  root.get("seed", cfg.seed);
  std::string mode = to_string(cfg.mode);
  root.get_string("mode", mode);
  cfg.mode = parse_run_mode(mode);

  if (doc.contains("stream")) {
    SectionReader s(doc["stream"], "stream");
    s.get("stages", cfg.stream.stages);
    s.get("ids_per_stage", cfg.stream.ids_per_stage);
    s.get("samples_per_id", cfg.stream.samples_per_id);
    s.get("input_dim", cfg.stream.input_dim);
    s.get("severity", cfg.stream.severity);
    s.get("noise_std", cfg.stream.noise_std);
    s.get("train_id_fraction", cfg.stream.train_id_fraction);
    s.get("query_per_id", cfg.stream.query_per_id);
    s.get("rotation_angle", cfg.stream.rotation_angle);
    s.get("scale_sigma", cfg.stream.scale_sigma);
    s.get("shift_sigma", cfg.stream.shift_sigma);
    s.finish();
  }
  if (doc.contains("embedder")) {
    SectionReader s(doc["embedder"], "embedder");
    s.get("hidden_dim", cfg.embedder.hidden_dim);
    s.get("feature_dim", cfg.embedder.feature_dim);
    s.get("depth", cfg.embedder.depth);
    s.finish();
  }
  if (doc.contains("baseline")) {
    SectionReader s(doc["baseline"], "baseline");
    s.get("epochs_first", cfg.baseline.epochs_first);
    s.get("epochs_later", cfg.baseline.epochs_later);
    s.get("lr", cfg.baseline.sgd.lr);
    s.get("lr_decay", cfg.baseline.sgd.decay_factor);
    s.get("decay_epoch", cfg.baseline.sgd.decay_epoch);
    s.get("momentum", cfg.baseline.sgd.momentum);
    s.get("triplet_margin", cfg.baseline.triplet_margin);
    s.finish();
  }
  if (doc.contains("transfer")) {
    SectionReader s(doc["transfer"], "transfer");
    s.get("blocks", cfg.transfer.bict.blocks);
    s.get("prototypes", cfg.transfer.bict.prototype_count);
    s.get("bottleneck_dim", cfg.transfer.bict.bottleneck_dim);
    s.get("fixed_gate", cfg.transfer.bict.fixed_gate);
    s.get("epochs", cfg.transfer.epochs);
    s.get("lr", cfg.transfer.sgd.lr);
    s.get("lr_decay", cfg.transfer.sgd.decay_factor);
    s.get("decay_epoch", cfg.transfer.sgd.decay_epoch);
    s.get("momentum", cfg.transfer.sgd.momentum);
    s.finish();
  }
  if (doc.contains("batch")) {
    SectionReader s(doc["batch"], "batch");
    s.get("ids_per_batch", cfg.baseline.ids_per_batch);
    s.get("samples_per_id", cfg.baseline.samples_per_id);
    s.finish();
  }
  if (doc.contains("loss_weights")) {
    SectionReader s(doc["loss_weights"], "loss_weights");
    s.get("mu1", cfg.loss_weights.mu1);
    s.get("mu2", cfg.loss_weights.mu2);
    s.get("mu3", cfg.loss_weights.mu3);
    s.get("mu4", cfg.loss_weights.mu4);
    s.finish();
  }
  if (doc.contains("dff")) {
    SectionReader s(doc["dff"], "dff");
    std::string scale = to_string(cfg.dff.epsilon_scale);
    s.get_string("epsilon_scale", scale);
    cfg.dff.epsilon_scale = parse_epsilon_scale(scale);
    s.get("feature_fusion", cfg.dff.feature_fusion);
    s.get("epsilon_batch_cap", cfg.dff.epsilon_batch_cap);
    s.get("renormalize_masked_rows", cfg.dff.renormalize_masked_rows);
    s.finish();
  }
  if (doc.contains("bench")) {
    SectionReader s(doc["bench"], "bench");
    s.get("deep_hidden_dim", cfg.bench.deep_hidden_dim);
    s.get("deep_depth", cfg.bench.deep_depth);
    s.finish();
  }
  for (const char* section : {"stream", "embedder", "baseline", "transfer", "batch",
                              "loss_weights", "dff", "bench"}) {
    json dummy;
    root.get(section, dummy);
  }
  root.finish();

  cfg.embedder.input_dim = cfg.stream.input_dim;
  cfg.transfer.bict.feature_dim = cfg.embedder.feature_dim;
  cfg.validate();
  return cfg;
}

json read_config_document(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like section.key=value: " + assignment);
  }
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dotpos = path.find('.', start);
    const std::string key = path.substr(start, dotpos - start);
    if (key.empty()) throw ConfigError("empty key in override " + assignment);
    if (dotpos == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    start = dotpos + 1;
  }
}

}  // namespace bicr
