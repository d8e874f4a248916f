#include "bicr/gallery.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace bicr {

namespace {

constexpr char kMagic[8] = {'B', 'I', 'C', 'R', 'G', 'A', 'L', '1'};
constexpr std::uint32_t kFormatVersion = 1;

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

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

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
  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(path_ + ": truncated gallery file", pos_);
    }
  }
  unsigned char byte(std::size_t i) const { return static_cast<unsigned char>(bytes_[i]); }

 private:
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void GalleryStore::advance_version(int stage) {
  if (stage <= static_cast<int>(current_version_)) {
    throw ProtocolError("stale store: cannot advance version " +
                        std::to_string(current_version_) + " to " + std::to_string(stage));
  }
  current_version_ = static_cast<std::uint32_t>(stage);
}

void GalleryStore::append_features(const Matrix& features, const std::vector<int>& identities,
                                   int stage) {
  if (static_cast<std::uint32_t>(stage) != current_version_) {
    throw ProtocolError("stale store: appending stage " + std::to_string(stage) +
                        " features into a store at version " + std::to_string(current_version_));
  }
  append_extracted(features, identities, stage);
}

void GalleryStore::append_extracted(const Matrix& features, const std::vector<int>& identities,
                                    int origin_stage) {
  if (origin_stage < 1 || static_cast<std::uint32_t>(origin_stage) > current_version_) {
    throw ProtocolError("origin stage " + std::to_string(origin_stage) +
                        " outside the store's open range (version " +
                        std::to_string(current_version_) + ")");
  }
  if (features.cols() != feature_dim_) {
    throw DimensionError("gallery append: feature width " + std::to_string(features.cols()) +
                         " != " + std::to_string(feature_dim_));
  }
  if (identities.size() != static_cast<std::size_t>(features.rows())) {
    throw DimensionError("gallery append: identity count does not match feature rows");
  }
  if (!features.all_finite()) {
    throw EvaluationError("gallery append: non-finite feature");
  }
  records_.reserve(records_.size() + features.rows());
  for (int r = 0; r < features.rows(); ++r) {
    GalleryRecord rec;
    rec.entry_id = next_entry_id_++;
    rec.identity = static_cast<std::uint32_t>(identities[r]);
    rec.origin_stage = static_cast<std::uint32_t>(origin_stage);
    rec.space_version = current_version_;
    rec.feature.resize(feature_dim_);
    for (int c = 0; c < feature_dim_; ++c) rec.feature[c] = static_cast<float>(features.at(r, c));
    records_.push_back(std::move(rec));
  }
}

void GalleryStore::update_all(const BiCTNetwork& transfer, double epsilon, int new_stage) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ConfigError("update_all epsilon must lie in [0, 1], got " + std::to_string(epsilon));
  }
  if (transfer.direction() != TransferDirection::Forward) {
    throw ProtocolError("update_all requires the forward transfer network");
  }
  if (transfer.mode() != Mode::Eval) {
    throw ProtocolError("update_all requires the transfer network in eval mode");
  }
  if (transfer.config().feature_dim != feature_dim_) {
    throw DimensionError("transfer network width " + std::to_string(transfer.config().feature_dim) +
                         " != gallery width " + std::to_string(feature_dim_));
  }
  if (new_stage != static_cast<int>(current_version_) + 1) {
    throw ProtocolError("skipped stage: store at version " + std::to_string(current_version_) +
                        " cannot update directly to " + std::to_string(new_stage));
  }
  for (const auto& rec : records_) {
    if (rec.space_version != current_version_) {
      throw ProtocolError("record " + std::to_string(rec.entry_id) + " at version " +
                          std::to_string(rec.space_version) + " but store is at " +
                          std::to_string(current_version_));
    }
  }
  current_version_ = static_cast<std::uint32_t>(new_stage);
  if (records_.empty() || epsilon == 1.0) {
    // Boundary: features unchanged except for the version bump.
    for (auto& rec : records_) rec.space_version = current_version_;
    return;
  }

  const int n = static_cast<int>(records_.size());
  Matrix old_feats(n, feature_dim_);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < feature_dim_; ++c) old_feats.at(r, c) = records_[r].feature[c];
  Matrix moved = transfer.apply(old_feats);

#pragma omp parallel for schedule(static)
  for (int r = 0; r < n; ++r) {
    auto& rec = records_[r];
    rec.space_version = current_version_;
    for (int c = 0; c < feature_dim_; ++c) {
      const double mixed = epsilon == 0.0
                               ? moved.at(r, c)
                               : epsilon * old_feats.at(r, c) + (1.0 - epsilon) * moved.at(r, c);
      rec.feature[c] = static_cast<float>(mixed);
    }
  }
}

std::vector<RankedEntry> GalleryStore::rank_query(std::span<const double> q) const {
  if (records_.empty()) throw EmptyGalleryError("rank_query on an empty gallery");
  if (q.size() != static_cast<std::size_t>(feature_dim_)) {
    throw DimensionError("query width " + std::to_string(q.size()) + " != " +
                         std::to_string(feature_dim_));
  }
  const double qn = l2_norm(q);
  if (qn < kDegenerateNorm) throw DegenerateVectorError("rank_query with a zero-norm query");

  const int n = static_cast<int>(records_.size());
  std::vector<RankedEntry> out(n);
#pragma omp parallel for schedule(static) if (n >= 1024)
  for (int i = 0; i < n; ++i) {
    const auto& rec = records_[i];
    double dot_qf = 0.0, fn2 = 0.0;
    for (int c = 0; c < feature_dim_; ++c) {
      const double f = rec.feature[c];
      dot_qf += q[c] * f;
      fn2 += f * f;
    }
    const double fn = std::sqrt(fn2);
    // A collapsed stored feature ranks behind every real one.
    const double sim = fn < kDegenerateNorm ? -2.0 : std::clamp(dot_qf / (qn * fn), -1.0, 1.0);
    out[i] = RankedEntry{rec.entry_id, rec.identity, sim};
  }
  std::sort(out.begin(), out.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.entry_id < b.entry_id;
  });
  return out;
}

void GalleryStore::persist(const std::string& path) const {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(feature_dim_));
  put_u32(out, current_version_);
  put_u64(out, records_.size());
  for (const auto& rec : records_) {
    put_u64(out, rec.entry_id);
    put_u32(out, rec.identity);
    put_u32(out, rec.origin_stage);
    put_u32(out, rec.space_version);
    for (float f : rec.feature) put_f32(out, f);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("short write to " + path);
}

GalleryStore GalleryStore::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r(bytes, path);
  r.need(sizeof(kMagic));
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path + ": bad magic", 0);
  }
  r.skip(sizeof(kMagic));
  GalleryStore store;
  const std::size_t version_offset = r.pos();
  const std::uint32_t fmt = r.u32();
  if (fmt != kFormatVersion) {
    throw FormatError(path + ": unsupported format version " + std::to_string(fmt),
                      version_offset);
  }
  store.feature_dim_ = static_cast<int>(r.u32());
  store.current_version_ = r.u32();
  const std::uint64_t count = r.u64();
  store.records_.reserve(count);
  std::uint64_t max_id = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    GalleryRecord rec;
    rec.entry_id = r.u64();
    rec.identity = r.u32();
    rec.origin_stage = r.u32();
    rec.space_version = r.u32();
    rec.feature.resize(store.feature_dim_);
    for (int c = 0; c < store.feature_dim_; ++c) rec.feature[c] = r.f32();
    max_id = std::max(max_id, rec.entry_id + 1);
    store.records_.push_back(std::move(rec));
  }
  if (!r.at_end()) {
    throw FormatError(path + ": trailing bytes after last record", r.pos());
  }
  store.next_entry_id_ = max_id;
  return store;
}

}  // namespace bicr
