#include "bicr/report.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace bicr {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(16) << v;
  return os.str();
}

namespace {

json eval_to_json(const std::map<int, DatasetMetrics>& eval) {
  json j = json::object();
  for (const auto& [ds, m] : eval) {
    j[std::to_string(ds)] = {{"map", m.map},
                             {"r1", m.r1},
                             {"evaluated", m.evaluated},
                             {"excluded", m.excluded}};
  }
  return j;
}

json stage_core_json(const StageOutcome& s) {
  json j;
  j["stage"] = s.stage;
  j["epsilon_raw"] = s.epsilon_raw;
  j["epsilon_used"] = s.epsilon_used;
  j["baseline_losses"] = s.baseline_losses;
  j["transfer_losses"] = s.transfer_losses;
  j["eval"] = eval_to_json(s.eval);
  return j;
}

json stage_full_json(const StageOutcome& s) {
  json j = stage_core_json(s);
  j["timings"] = {{"baseline_s", s.seconds_baseline},
                  {"transfer_s", s.seconds_transfer},
                  {"gallery_s", s.seconds_gallery},
                  {"eval_s", s.seconds_eval}};
  return j;
}

json outcome_core_json(const ExperimentConfig& cfg, const RunOutcome& outcome) {
  json j;
  j["mode"] = to_string(cfg.mode);
  j["seed"] = cfg.seed;
  j["stages"] = json::array();
  for (const auto& s : outcome.stages) j["stages"].push_back(stage_core_json(s));
  j["final"] = {{"mean_map", outcome.final_mean_map},
                {"mean_r1", outcome.final_mean_r1},
                {"af_map", outcome.af_map},
                {"af_r1", outcome.af_r1}};
  j["privacy"] = {{"closed_raw_accesses", outcome.closed_raw_accesses},
                  {"excluded_queries", outcome.excluded_queries}};
  return j;
}

}  // namespace

std::string run_content_hash(const ExperimentConfig& cfg, const RunOutcome& outcome) {
  return to_hex(fnv1a64(outcome_core_json(cfg, outcome).dump()));
}

json run_report_json(const ExperimentConfig& cfg, const RunOutcome& outcome) {
  json j = outcome_core_json(cfg, outcome);
  j["config"] = config_to_json(cfg);
  j["stages"] = json::array();
  for (const auto& s : outcome.stages) j["stages"].push_back(stage_full_json(s));
  j["content_hash"] = run_content_hash(cfg, outcome);
  return j;
}

std::string write_run_report(const std::string& out_dir, const ExperimentConfig& cfg,
                             const RunOutcome& outcome) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  json report = run_report_json(cfg, outcome);
  {
    std::ofstream f(fs::path(out_dir) / "report.json");
    if (!f) throw Error("cannot write report.json in " + out_dir);
    f << report.dump(2) << "\n";
  }
  for (const auto& s : outcome.stages) {
    std::ofstream f(fs::path(out_dir) / ("stage_" + std::to_string(s.stage) + ".json"));
    f << stage_full_json(s).dump(2) << "\n";
  }
  {
    std::ofstream f(fs::path(out_dir) / "report.csv");
    if (!f) throw Error("cannot write report.csv in " + out_dir);
    f << "mode,seed,eval_stage,dataset_stage,metric,value\n";
    const std::string prefix = to_string(cfg.mode) + "," + std::to_string(cfg.seed) + ",";
    f << std::setprecision(17);
    for (const auto& s : outcome.stages) {
      for (const auto& [ds, m] : s.eval) {
        f << prefix << s.stage << "," << ds << ",map," << m.map << "\n";
        f << prefix << s.stage << "," << ds << ",r1," << m.r1 << "\n";
      }
    }
    const int last = outcome.stages.empty() ? 0 : outcome.stages.back().stage;
    f << prefix << last << ",,final_mean_map," << outcome.final_mean_map << "\n";
    f << prefix << last << ",,final_mean_r1," << outcome.final_mean_r1 << "\n";
    f << prefix << last << ",,af_map," << outcome.af_map << "\n";
    f << prefix << last << ",,af_r1," << outcome.af_r1 << "\n";
  }
  return report["content_hash"].get<std::string>();
}

// ---------------------------------------------------------------------------
// Binary helpers shared by the checkpoint and stream formats.

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void expect_magic(const char* magic) {
    need(8);
    if (std::memcmp(bytes_.data() + pos_, magic, 8) != 0) {
      throw FormatError(path_ + ": bad magic", pos_);
    }
    pos_ += 8;
  }
  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw FormatError(path_ + ": truncated file", pos_);
  }

 private:
  unsigned char byte(std::size_t i) const { return static_cast<unsigned char>(bytes_[i]); }
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("short write to " + path);
}

void put_tensor(std::string& out, const std::string& name, const Matrix& m) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.data()) put_f32(out, static_cast<float>(v));
}

void put_vector_tensor(std::string& out, const std::string& name, const std::vector<double>& v) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(v.size()));
  for (double x : v) put_f32(out, static_cast<float>(x));
}

struct NamedTensor {
  std::string name;
  Matrix m;
};

std::vector<NamedTensor> read_tensors(Reader& r) {
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint32_t name_len = r.u32();
    t.name = r.str(name_len);
    const int rows = static_cast<int>(r.u32());
    const int cols = static_cast<int>(r.u32());
    t.m = Matrix(rows, cols);
    for (auto& v : t.m.data()) v = r.f32();
    out.push_back(std::move(t));
  }
  return out;
}

const Matrix& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name == name) return t.m;
  }
  throw FormatError("checkpoint is missing tensor " + name, 0);
}

void collect_network_tensors(std::string& out, BiCTNetwork& net, std::uint32_t& count) {
  for (auto* p : net.parameters()) {
    put_tensor(out, p->name, p->value);
    ++count;
  }
  for (auto& block : net.blocks()) {
    auto& bn = block.mapping().batch_norm();
    put_vector_tensor(out, bn.gamma.name + ".running_mean", bn.running_mean);
    put_vector_tensor(out, bn.gamma.name + ".running_var", bn.running_var);
    count += 2;
  }
}

void restore_network(BiCTNetwork& net, const std::vector<NamedTensor>& tensors) {
  for (auto* p : net.parameters()) {
    const Matrix& t = find_tensor(tensors, p->name);
    require_same_shape(t, p->value, "checkpoint tensor " + p->name);
    p->value = t;
  }
  for (auto& block : net.blocks()) {
    auto& bn = block.mapping().batch_norm();
    bn.running_mean = find_tensor(tensors, bn.gamma.name + ".running_mean").data();
    bn.running_var = find_tensor(tensors, bn.gamma.name + ".running_var").data();
  }
  net.set_mode(Mode::Eval);
}

constexpr char kCheckpointMagic[9] = "BICRCKP1";
constexpr char kStreamMagic[9] = "BICRSTR1";

}  // namespace

void save_checkpoint(const std::string& path, const ExperimentConfig& cfg,
                     const Embedder& query_model, const ClassifierHead& classifier,
                     const BiCTNetwork* theta_fwd, const BiCTNetwork* theta_bwd, int stage) {
  json meta;
  meta["config"] = config_to_json(cfg);
  meta["stage"] = stage;
  meta["has_transfer"] = theta_fwd != nullptr && theta_bwd != nullptr;
  meta["classifier_labels"] = classifier.labels();
  const std::string meta_str = meta.dump();

  std::string out;
  out.append(kCheckpointMagic, 8);
  put_u32(out, 1);  // format version
  put_u64(out, meta_str.size());
  out.append(meta_str);

  std::string tensor_bytes;
  std::uint32_t count = 0;
  Embedder model_copy = query_model;
  for (auto* p : model_copy.parameters()) {
    put_tensor(tensor_bytes, p->name, p->value);
    ++count;
  }
  ClassifierHead cls_copy = classifier;
  for (auto* p : cls_copy.parameters()) {
    put_tensor(tensor_bytes, p->name, p->value);
    ++count;
  }
  if (theta_fwd && theta_bwd) {
    BiCTNetwork fwd_copy = *theta_fwd;
    BiCTNetwork bwd_copy = *theta_bwd;
    collect_network_tensors(tensor_bytes, fwd_copy, count);
    collect_network_tensors(tensor_bytes, bwd_copy, count);
  }
  put_u32(out, count);
  out.append(tensor_bytes);
  spit(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(slurp(path), path);
  r.expect_magic(kCheckpointMagic);
  const std::size_t version_offset = r.pos();
  const std::uint32_t fmt = r.u32();
  if (fmt != 1) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(fmt),
                      version_offset);
  }
  const std::uint64_t meta_len = r.u64();
  json meta;
  try {
    meta = json::parse(r.str(meta_len));
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": bad checkpoint metadata: " + e.what(), r.pos());
  }

  Checkpoint ckpt;
  ckpt.cfg = config_from_json(meta.at("config"));
  ckpt.stage = meta.at("stage").get<int>();
  ckpt.has_transfer = meta.at("has_transfer").get<bool>();
  auto labels = meta.at("classifier_labels").get<std::vector<int>>();

  auto tensors = read_tensors(r);
  if (!r.at_end()) throw FormatError(path + ": trailing bytes", r.pos());

  Rng scratch(0);
  ckpt.query_model = Embedder(ckpt.cfg.embedder, scratch);
  for (auto* p : ckpt.query_model.parameters()) {
    const Matrix& t = find_tensor(tensors, p->name);
    require_same_shape(t, p->value, "checkpoint tensor " + p->name);
    p->value = t;
  }
  ckpt.classifier = ClassifierHead(ckpt.cfg.embedder.feature_dim, labels, scratch);
  for (auto* p : ckpt.classifier.parameters()) {
    const Matrix& t = find_tensor(tensors, p->name);
    require_same_shape(t, p->value, "checkpoint tensor " + p->name);
    p->value = t;
  }
  if (ckpt.has_transfer) {
    BiCTConfig bcfg = ckpt.cfg.transfer.bict;
    bcfg.feature_dim = ckpt.cfg.embedder.feature_dim;
    ckpt.theta_fwd = BiCTNetwork(bcfg, TransferDirection::Forward, ckpt.stage - 1, ckpt.stage,
                                 scratch);
    ckpt.theta_bwd = BiCTNetwork(bcfg, TransferDirection::Backward, ckpt.stage, ckpt.stage - 1,
                                 scratch);
    restore_network(ckpt.theta_fwd, tensors);
    restore_network(ckpt.theta_bwd, tensors);
  }
  return ckpt;
}

void save_stream(const std::string& path, const std::vector<StageData>& stream) {
  if (stream.empty()) throw Error("refusing to save an empty stream");
  const int dim = stream[0].domain.rotation.rows();
  std::string out;
  out.append(kStreamMagic, 8);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(stream.size()));
  put_u32(out, static_cast<std::uint32_t>(dim));
  auto put_samples = [&](const std::vector<SyntheticSample>& samples) {
    put_u64(out, samples.size());
    for (const auto& s : samples) {
      put_u32(out, static_cast<std::uint32_t>(s.identity));
      put_u32(out, static_cast<std::uint32_t>(s.stage));
      for (double v : s.x) put_f64(out, v);
    }
  };
  for (const auto& stage : stream) {
    put_u32(out, static_cast<std::uint32_t>(stage.stage));
    for (double v : stage.domain.rotation.data()) put_f64(out, v);
    for (double v : stage.domain.scale) put_f64(out, v);
    for (double v : stage.domain.shift) put_f64(out, v);
    put_f64(out, stage.domain.noise_std);
    put_f64(out, stage.domain.severity);
    put_samples(stage.train);
    put_samples(stage.gallery);
    put_samples(stage.query);
  }
  spit(path, out);
}

std::vector<StageData> load_stream(const std::string& path) {
  Reader r(slurp(path), path);
  r.expect_magic(kStreamMagic);
  const std::size_t version_offset = r.pos();
  const std::uint32_t fmt = r.u32();
  if (fmt != 1) {
    throw FormatError(path + ": unsupported stream version " + std::to_string(fmt),
                      version_offset);
  }
  const std::uint32_t stages = r.u32();
  const int dim = static_cast<int>(r.u32());
  std::vector<StageData> stream;
  stream.reserve(stages);
  auto read_samples = [&](std::vector<SyntheticSample>& samples) {
    const std::uint64_t count = r.u64();
    samples.resize(count);
    for (auto& s : samples) {
      s.identity = static_cast<int>(r.u32());
      s.stage = static_cast<int>(r.u32());
      s.x.resize(dim);
      for (auto& v : s.x) v = r.f64();
    }
  };
  for (std::uint32_t i = 0; i < stages; ++i) {
    StageData stage;
    stage.stage = static_cast<int>(r.u32());
    stage.domain.rotation = Matrix(dim, dim);
    for (auto& v : stage.domain.rotation.data()) v = r.f64();
    stage.domain.scale.resize(dim);
    for (auto& v : stage.domain.scale) v = r.f64();
    stage.domain.shift.resize(dim);
    for (auto& v : stage.domain.shift) v = r.f64();
    stage.domain.noise_std = r.f64();
    stage.domain.severity = r.f64();
    read_samples(stage.train);
    read_samples(stage.gallery);
    read_samples(stage.query);
    stream.push_back(std::move(stage));
  }
  if (!r.at_end()) throw FormatError(path + ": trailing bytes", r.pos());
  return stream;
}

}  // namespace bicr
