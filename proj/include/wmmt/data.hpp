#pragma once

// Domain types and on-disk formats: FTR1 feature files, the JSON-lines
// manifest and the JSON-lines prediction file.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "wmmt/error.hpp"
#include "wmmt/matrix.hpp"

namespace wmmt {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

class FeatureSequence {
 public:
  FeatureSequence() = default;
  FeatureSequence(Matrix values, double fps) : values_(std::move(values)), fps_(fps) {
    if (values_.rows() < 1) fail(ErrorKind::format, "feature sequence needs T >= 1");
    if (values_.cols() < 1) fail(ErrorKind::format, "feature sequence needs d >= 1");
    if (!(fps_ > 0) || !std::isfinite(fps_)) fail(ErrorKind::format, "feature sequence needs fps > 0");
    if (!all_finite(values_)) fail(ErrorKind::numeric, "feature sequence has non-finite values");
  }

  std::size_t frames() const noexcept { return values_.rows(); }
  std::size_t dim() const noexcept { return values_.cols(); }
  double fps() const noexcept { return fps_; }
  double duration_seconds() const noexcept { return static_cast<double>(frames()) / fps_; }
  const Matrix& values() const noexcept { return values_; }

  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;

 private:
  Matrix values_;
  double fps_ = 1.0;
};

// Modality-specific forgery type.
//   0 both genuine, 1 both forged, 2 visual forged only, 3 audio forged only
struct ForgeryLabel {
  int class_id = 0;

  static ForgeryLabel checked(long long id) {
    if (id < 0 || id > 3) fail(ErrorKind::domain, "forgery label must be in 0..3, got " + std::to_string(id));
    return ForgeryLabel{static_cast<int>(id)};
  }

  bool visual_forged() const noexcept { return class_id == 1 || class_id == 2; }
  bool audio_forged() const noexcept { return class_id == 1 || class_id == 3; }
  bool any_forged() const noexcept { return class_id != 0; }

  friend bool operator==(const ForgeryLabel&, const ForgeryLabel&) = default;
};

struct BinaryLabels {
  int visual = 0;
  int audio = 0;
  friend bool operator==(const BinaryLabels&, const BinaryLabels&) = default;
};

inline BinaryLabels derive_binary_labels(ForgeryLabel label) {
  return {label.visual_forged() ? 1 : 0, label.audio_forged() ? 1 : 0};
}

struct SegmentAnnotation {
  double start_s = 0.0;
  double end_s = 0.0;
  int kind = 1;
  friend bool operator==(const SegmentAnnotation&, const SegmentAnnotation&) = default;
};

struct SegmentProposal {
  double start_s = 0.0;
  double end_s = 0.0;
  double score = 0.0;
  // Auxiliary forgery-type tag (argmax class over the run); -1 when absent.
  int kind = -1;
  friend bool operator==(const SegmentProposal&, const SegmentProposal&) = default;
};

struct VideoSample {
  std::string id;
  FeatureSequence visual;
  FeatureSequence audio;
  ForgeryLabel label;
  std::vector<SegmentAnnotation> gt_segments;

  std::size_t frames() const noexcept { return visual.frames(); }
  double fps() const noexcept { return visual.fps(); }
};

// ---------------------------------------------------------------------------
// FTR1 feature files: "FTR1" | u32 T | u32 d | f32 fps | T*d f32 row-major,
// all little-endian.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string context) : bytes_(bytes), context_(std::move(context)) {}

  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  double f64(const char* field) { return std::bit_cast<double>(u64(field)); }
  std::string_view take(std::size_t n, const char* field) {
    need(n, field);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  [[noreturn]] void error(const std::string& msg) const { fail(ErrorKind::format, context_ + ": " + msg); }

 private:
  void need(std::size_t n, const char* field) const {
    if (bytes_.size() - pos_ < n) error(std::string("truncated at field '") + field + "'");
  }
  std::string_view bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

// Writes via a temporary sibling and rename so readers never observe a
// partially written file.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::io, "write failed for " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(ErrorKind::io, "cannot rename into " + path.string());
  }
}

inline std::string encode_feature_file(const FeatureSequence& seq) {
  std::string out = "FTR1";
  out.reserve(16 + seq.values().size() * 4);
  detail::put_u32(out, static_cast<std::uint32_t>(seq.frames()));
  detail::put_u32(out, static_cast<std::uint32_t>(seq.dim()));
  detail::put_f32(out, static_cast<float>(seq.fps()));
  for (double v : seq.values().data()) detail::put_f32(out, static_cast<float>(v));
  return out;
}

inline FeatureSequence decode_feature_file(std::string_view bytes, const std::string& context = "feature file") {
  detail::ByteReader r(bytes, context);
  if (bytes.empty()) r.error("empty file");
  if (r.take(4, "magic") != "FTR1") r.error("bad magic (expected FTR1)");
  const std::uint32_t t = r.u32("T");
  const std::uint32_t d = r.u32("d");
  const float fps = r.f32("fps");
  if (t == 0) r.error("field 'T' must be positive");
  if (d == 0) r.error("field 'd' must be positive");
  if (!(fps > 0.0f) || !std::isfinite(fps)) r.error("field 'fps' must be positive");
  const std::uint64_t count = static_cast<std::uint64_t>(t) * d;
  if (r.remaining() < count * 4) r.error("truncated payload");
  if (r.remaining() > count * 4) r.error("trailing bytes after payload");
  Matrix values(t, d);
  for (auto& v : values.data()) {
    v = static_cast<double>(r.f32("payload"));
    if (!std::isfinite(v)) r.error("non-finite payload value");
  }
  return FeatureSequence(std::move(values), static_cast<double>(fps));
}

inline FeatureSequence load_feature_file(const fs::path& path) {
  return decode_feature_file(detail::read_file(path), path.string());
}

inline void save_feature_file(const FeatureSequence& seq, const fs::path& path) {
  write_file_atomic(path, encode_feature_file(seq));
}

// Mean-pools audio rows into target_frames contiguous buckets; the first
// (frames % target) buckets take one extra row.
inline FeatureSequence align_audio(const FeatureSequence& audio, std::size_t target_frames) {
  if (target_frames < 1) fail(ErrorKind::alignment, "target_frames must be >= 1");
  const std::size_t n = audio.frames();
  if (target_frames > n)
    fail(ErrorKind::alignment, "unsupported upsample: audio has " + std::to_string(n) + " frames, target " +
                                   std::to_string(target_frames));
  if (target_frames == n) return audio;
  const std::size_t base = n / target_frames;
  const std::size_t extra = n % target_frames;
  Matrix out(target_frames, audio.dim());
  std::size_t src = 0;
  for (std::size_t b = 0; b < target_frames; ++b) {
    const std::size_t len = base + (b < extra ? 1 : 0);
    auto dst = out.row(b);
    for (std::size_t k = 0; k < len; ++k) {
      const auto r = audio.values().row(src + k);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += r[j];
    }
    for (auto& x : dst) x /= static_cast<double>(len);
    src += len;
  }
  const double fps = audio.fps() * static_cast<double>(target_frames) / static_cast<double>(n);
  return FeatureSequence(std::move(out), fps);
}

// ---------------------------------------------------------------------------
// Manifest (JSON lines)

struct ManifestEntry {
  std::string id;
  std::string visual_path;
  std::string audio_path;
  double fps = 1.0;
  ForgeryLabel label;
  std::vector<SegmentAnnotation> segments;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  // Relative feature paths resolve against this directory.
  fs::path base_dir;

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }
};

namespace detail {

template <typename T>
T get_field(const json& obj, const char* key, std::string_view context) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(ErrorKind::format, std::string(context) + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::format, std::string(context) + ": field '" + key + "' has the wrong type");
  }
}

inline json parse_json_line(const std::string& line, const std::string& context) {
  try {
    json j = json::parse(line);
    if (!j.is_object()) fail(ErrorKind::format, context + ": expected a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    fail(ErrorKind::format, context + ": " + e.what());
  }
}

template <typename F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string line(text.substr(pos, end - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) f(line, line_no);
    pos = end + 1;
  }
}

}  // namespace detail

inline json to_json(const SegmentAnnotation& s) {
  return json{{"start_s", s.start_s}, {"end_s", s.end_s}, {"kind", s.kind}};
}

inline json to_json(const ManifestEntry& e) {
  json segs = json::array();
  for (const auto& s : e.segments) segs.push_back(to_json(s));
  return json{{"id", e.id},         {"visual_path", e.visual_path}, {"audio_path", e.audio_path},
              {"fps", e.fps},       {"label", e.label.class_id},    {"segments", std::move(segs)}};
}

inline std::string dump_manifest(const Manifest& m) {
  std::string out;
  for (const auto& e : m.entries) {
    out += to_json(e).dump();
    out += '\n';
  }
  return out;
}

inline ManifestEntry parse_manifest_entry(const json& j, const std::string& ctx) {
  ManifestEntry e;
  e.id = detail::get_field<std::string>(j, "id", ctx);
  e.visual_path = detail::get_field<std::string>(j, "visual_path", ctx);
  e.audio_path = detail::get_field<std::string>(j, "audio_path", ctx);
  e.fps = detail::get_field<double>(j, "fps", ctx);
  if (!(e.fps > 0)) fail(ErrorKind::format, ctx + ": field 'fps' must be positive");
  const auto label = detail::get_field<long long>(j, "label", ctx);
  if (label < 0 || label > 3) fail(ErrorKind::format, ctx + ": field 'label' must be in 0..3");
  e.label = ForgeryLabel{static_cast<int>(label)};
  const auto segs = detail::get_field<json>(j, "segments", ctx);
  if (!segs.is_array()) fail(ErrorKind::format, ctx + ": field 'segments' must be an array");
  for (const auto& s : segs) {
    SegmentAnnotation a;
    a.start_s = detail::get_field<double>(s, "start_s", ctx);
    a.end_s = detail::get_field<double>(s, "end_s", ctx);
    const auto kind = detail::get_field<long long>(s, "kind", ctx);
    if (kind < 1 || kind > 3) fail(ErrorKind::format, ctx + ": segment 'kind' must be in 1..3");
    a.kind = static_cast<int>(kind);
    if (!(a.start_s >= 0 && a.start_s < a.end_s))
      fail(ErrorKind::format, ctx + ": segment needs 0 <= start_s < end_s");
    e.segments.push_back(a);
  }
  if (e.label.any_forged() == e.segments.empty())
    fail(ErrorKind::format, ctx + ": label 0 must have no segments and labels 1..3 at least one");
  return e;
}

// Parses manifest text. When check_files is set, every referenced feature
// file must exist relative to base_dir.
inline Manifest parse_manifest(std::string_view text, const fs::path& base_dir, bool check_files = false) {
  Manifest m;
  m.base_dir = base_dir;
  std::set<std::string> ids;
  detail::for_each_line(text, [&](const std::string& line, std::size_t line_no) {
    const std::string ctx = "manifest line " + std::to_string(line_no);
    auto e = parse_manifest_entry(detail::parse_json_line(line, ctx), ctx);
    if (!ids.insert(e.id).second) fail(ErrorKind::format, ctx + ": duplicate id '" + e.id + "'");
    if (check_files) {
      for (const auto* p : {&e.visual_path, &e.audio_path})
        if (!fs::exists(base_dir / *p)) fail(ErrorKind::io, ctx + ": missing feature file " + *p);
    }
    m.entries.push_back(std::move(e));
  });
  return m;
}

inline Manifest load_manifest(const fs::path& path) {
  return parse_manifest(detail::read_file(path), path.parent_path(), true);
}

inline void save_manifest(const Manifest& m, const fs::path& path) { write_file_atomic(path, dump_manifest(m)); }

// Loads both streams for one entry and pools audio onto the visual frame grid.
inline VideoSample load_sample(const ManifestEntry& e, const fs::path& base_dir) {
  VideoSample s;
  s.id = e.id;
  s.visual = load_feature_file(base_dir / e.visual_path);
  if (std::abs(s.visual.fps() - e.fps) > 1e-4 * e.fps)
    fail(ErrorKind::format, e.id + ": visual fps " + std::to_string(s.visual.fps()) +
                                " disagrees with manifest fps " + std::to_string(e.fps));
  // Manifest fps is authoritative (the file header stores it as f32).
  s.visual = FeatureSequence(s.visual.values(), e.fps);
  const FeatureSequence audio = load_feature_file(base_dir / e.audio_path);
  s.audio = align_audio(audio, s.visual.frames());
  s.label = e.label;
  s.gt_segments = e.segments;
  for (const auto& g : s.gt_segments)
    if (g.end_s > s.visual.duration_seconds() + 1e-9)
      fail(ErrorKind::format, e.id + ": segment ends after the video");
  return s;
}

inline std::vector<VideoSample> load_samples(const Manifest& m) {
  std::vector<VideoSample> out;
  out.reserve(m.size());
  for (const auto& e : m.entries) out.push_back(load_sample(e, m.base_dir));
  return out;
}

// ---------------------------------------------------------------------------
// Prediction file (JSON lines): {id, pred_label, proposals: [{start_s, end_s, score}]}

struct PredictionRecord {
  std::string id;
  int pred_label = 0;
  std::vector<SegmentProposal> proposals;
};

inline json to_json(const PredictionRecord& p) {
  json props = json::array();
  for (const auto& s : p.proposals) {
    json o{{"start_s", s.start_s}, {"end_s", s.end_s}, {"score", s.score}};
    if (s.kind >= 0) o["kind"] = s.kind;
    props.push_back(std::move(o));
  }
  return json{{"id", p.id}, {"pred_label", p.pred_label}, {"proposals", std::move(props)}};
}

inline std::string dump_predictions(const std::vector<PredictionRecord>& preds) {
  std::string out;
  for (const auto& p : preds) {
    out += to_json(p).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<PredictionRecord> parse_predictions(std::string_view text) {
  std::vector<PredictionRecord> out;
  std::set<std::string> ids;
  detail::for_each_line(text, [&](const std::string& line, std::size_t line_no) {
    const std::string ctx = "prediction line " + std::to_string(line_no);
    const json j = detail::parse_json_line(line, ctx);
    PredictionRecord p;
    p.id = detail::get_field<std::string>(j, "id", ctx);
    const auto label = detail::get_field<long long>(j, "pred_label", ctx);
    if (label < 0 || label > 3) fail(ErrorKind::format, ctx + ": field 'pred_label' must be in 0..3");
    p.pred_label = static_cast<int>(label);
    const auto props = detail::get_field<json>(j, "proposals", ctx);
    if (!props.is_array()) fail(ErrorKind::format, ctx + ": field 'proposals' must be an array");
    for (const auto& o : props) {
      SegmentProposal s;
      s.start_s = detail::get_field<double>(o, "start_s", ctx);
      s.end_s = detail::get_field<double>(o, "end_s", ctx);
      s.score = detail::get_field<double>(o, "score", ctx);
      if (o.contains("kind")) s.kind = detail::get_field<int>(o, "kind", ctx);
      if (!(s.start_s >= 0 && s.start_s < s.end_s)) fail(ErrorKind::format, ctx + ": proposal needs 0 <= start_s < end_s");
      if (!(s.score >= 0 && s.score <= 1)) fail(ErrorKind::format, ctx + ": proposal score must be in [0,1]");
      p.proposals.push_back(s);
    }
    if (!ids.insert(p.id).second) fail(ErrorKind::format, ctx + ": duplicate id '" + p.id + "'");
    out.push_back(std::move(p));
  });
  return out;
}

inline std::vector<PredictionRecord> load_predictions(const fs::path& path) {
  return parse_predictions(detail::read_file(path));
}

inline void save_predictions(const std::vector<PredictionRecord>& preds, const fs::path& path) {
  write_file_atomic(path, dump_predictions(preds));
}

}  // namespace wmmt
