#pragma once

// Synthetic two-stream corpora with labelled forged segments.
//
// Each stream is a stationary AR(1) process
//   g_t = rho g_{t-1} + sqrt(1 - rho^2) s eps_t,   rho = smoothness, s = 1
// so genuine frames have unit marginal spread and adjacent differences of
// variance 2 (1 - rho). Inside a forged span every frame additionally gets
// independent noise that lifts its marginal spread to s (1 + delta), plus
// a constant shift of delta * s along a corpus-wide sign pattern. With
// delta = 0 forged and genuine frames come from the same law.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "wmmt/data.hpp"
#include "wmmt/json_util.hpp"
#include "wmmt/losses.hpp"
#include "wmmt/parallel.hpp"
#include "wmmt/rng.hpp"

namespace wmmt {

struct SynthConfig {
  std::size_t num_videos = 100;
  std::size_t frames = 64;
  std::size_t dim_v = 16;
  std::size_t dim_a = 16;
  double fps = 25.0;
  // Raw audio frames per visual frame; alignment pools them back.
  std::size_t audio_rate = 2;
  std::array<double, 4> class_mix = {0.4, 0.2, 0.2, 0.2};
  double ratio_lo = 0.1;
  double ratio_hi = 0.4;
  std::size_t max_segments = 2;
  double deviation_amplitude = 3.0;
  double smoothness = 0.9;
  std::uint64_t seed = 0;
  std::string id_prefix = "vid";

  void validate() const {
    auto bad = [](const std::string& f, const std::string& why) {
      fail(ErrorKind::config, "config field 'synth." + f + "' " + why);
    };
    if (num_videos < 1) bad("num_videos", "must be >= 1");
    if (frames < 8) bad("frames", "must be >= 8");
    if (dim_v < 1) bad("dim_v", "must be >= 1");
    if (dim_a < 1) bad("dim_a", "must be >= 1");
    if (!(fps > 0) || !std::isfinite(fps)) bad("fps", "must be > 0");
    if (audio_rate < 1) bad("audio_rate", "must be >= 1");
    double sum = 0.0;
    for (double w : class_mix) {
      if (!(w >= 0)) bad("class_mix", "weights must be nonnegative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) bad("class_mix", "must sum to 1");
    if (!(ratio_lo > 0 && ratio_lo <= ratio_hi && ratio_hi < 1)) bad("forgery_ratio_range", "needs 0 < lo <= hi < 1");
    if (max_segments < 1) bad("max_segments", "must be >= 1");
    if (!(deviation_amplitude >= 0) || !std::isfinite(deviation_amplitude))
      bad("deviation_amplitude", "must be >= 0");
    if (!(smoothness > 0 && smoothness <= 1)) bad("smoothness", "must be in (0,1]");
    // K segments separated by at least one genuine frame.
    const auto most = static_cast<std::size_t>(std::ceil(ratio_hi * static_cast<double>(frames)));
    if (most + (max_segments - 1) > frames - 1)
      bad("max_segments", "infeasible: " + std::to_string(max_segments) + " segments cannot pack a forged ratio of " +
                              std::to_string(ratio_hi) + " into " + std::to_string(frames) + " frames");
  }
};

inline json to_json(const SynthConfig& c) {
  return json{{"num_videos", c.num_videos},
              {"frames", c.frames},
              {"dim_v", c.dim_v},
              {"dim_a", c.dim_a},
              {"fps", c.fps},
              {"audio_rate", c.audio_rate},
              {"class_mix", c.class_mix},
              {"forgery_ratio_range", std::array<double, 2>{c.ratio_lo, c.ratio_hi}},
              {"max_segments", c.max_segments},
              {"deviation_amplitude", c.deviation_amplitude},
              {"smoothness", c.smoothness},
              {"seed", c.seed},
              {"id_prefix", c.id_prefix}};
}

inline SynthConfig synth_config_from_json(const json& j, const std::string& path, SynthConfig c = {}) {
  ObjectReader r(j, path);
  r.get("num_videos", c.num_videos).get("frames", c.frames).get("dim_v", c.dim_v).get("dim_a", c.dim_a);
  r.get("fps", c.fps).get("audio_rate", c.audio_rate).get("max_segments", c.max_segments);
  r.get("deviation_amplitude", c.deviation_amplitude).get("smoothness", c.smoothness).get("seed", c.seed);
  r.get("id_prefix", c.id_prefix);
  if (r.has("class_mix")) {
    std::vector<double> mix;
    r.get("class_mix", mix);
    if (mix.size() != 4) r.invalid("class_mix", "must have 4 entries");
    std::copy(mix.begin(), mix.end(), c.class_mix.begin());
  }
  if (r.has("forgery_ratio_range")) {
    std::vector<double> range;
    r.get("forgery_ratio_range", range);
    if (range.size() != 2) r.invalid("forgery_ratio_range", "must be [lo, hi]");
    c.ratio_lo = range[0];
    c.ratio_hi = range[1];
  }
  r.finish();
  c.validate();
  return c;
}

// Class counts by largest remainder; ties go to the lower class.
inline std::array<std::size_t, 4> class_counts(const std::array<double, 4>& mix, std::size_t n) {
  std::array<std::size_t, 4> counts{};
  std::array<double, 4> frac{};
  std::size_t used = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    const double exact = mix[c] * static_cast<double>(n);
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    frac[c] = exact - std::floor(exact);
    used += counts[c];
  }
  while (used < n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 4; ++c)
      if (frac[c] > frac[best]) best = c;
    ++counts[best];
    frac[best] = -1.0;
    ++used;
  }
  return counts;
}

struct FrameSpan {
  std::size_t first = 0;  // inclusive
  std::size_t last = 0;   // inclusive
};

// Splits `total` forged frames into k runs, separated by at least one
// genuine frame, placed uniformly at random within `frames`.
inline std::vector<FrameSpan> draw_segments(Rng& rng, std::size_t frames, std::size_t total, std::size_t k) {
  k = std::max<std::size_t>(1, std::min(k, total));
  // Run lengths: k positive parts of total.
  std::vector<std::size_t> cuts;
  std::vector<std::size_t> pool(total - 1);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i + 1;
  rng.shuffle(std::span<std::size_t>(pool));
  cuts.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k - 1));
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::size_t> lengths;
  std::size_t prev = 0;
  for (std::size_t c : cuts) {
    lengths.push_back(c - prev);
    prev = c;
  }
  lengths.push_back(total - prev);
  // Gaps: k+1 parts of the genuine frames, inner gaps at least 1.
  const std::size_t free = frames - total - (k - 1);
  std::vector<std::size_t> gaps(k + 1, 0);
  for (std::size_t i = 1; i < k; ++i) gaps[i] = 1;
  for (std::size_t i = 0; i < free; ++i) ++gaps[rng.below(k + 1)];
  std::vector<FrameSpan> spans;
  std::size_t pos = gaps[0];
  for (std::size_t i = 0; i < k; ++i) {
    spans.push_back({pos, pos + lengths[i] - 1});
    pos += lengths[i] + gaps[i + 1];
  }
  return spans;
}

namespace detail {

inline Matrix synth_stream(Rng& rng, std::size_t frames, std::size_t dim, double smoothness, double delta,
                           const std::vector<double>& shift_sign, const std::vector<FrameSpan>& forged,
                           std::size_t rate) {
  const double s_base = 1.0;
  const double innov = std::sqrt(std::max(0.0, 1.0 - smoothness * smoothness)) * s_base;
  const double excess = s_base * std::sqrt((1.0 + delta) * (1.0 + delta) - 1.0);
  Matrix out(frames, dim);
  std::vector<double> state(dim);
  for (auto& x : state) x = rng.normal() * s_base;
  std::vector<bool> is_forged(frames, false);
  for (const auto& sp : forged)
    for (std::size_t t = sp.first * rate; t < (sp.last + 1) * rate; ++t) is_forged[t] = true;
  for (std::size_t t = 0; t < frames; ++t) {
    if (t > 0)
      for (auto& x : state) x = smoothness * x + innov * rng.normal();
    for (std::size_t j = 0; j < dim; ++j) {
      double v = state[j];
      if (is_forged[t]) v += excess * rng.normal() + delta * s_base * shift_sign[j];
      out(t, j) = v;
    }
  }
  return out;
}

inline std::vector<double> shift_pattern(std::uint64_t seed, std::uint64_t stream, std::size_t dim) {
  Rng rng(derive_seed(seed, stream));
  std::vector<double> s(dim);
  for (auto& x : s) x = rng.below(2) ? 1.0 : -1.0;
  return s;
}

}  // namespace detail

struct SynthVideo {
  ManifestEntry entry;
  FeatureSequence visual;
  FeatureSequence audio;  // raw rate, before alignment
};

// Generates video `index` with its own subseed; independent of other videos.
inline SynthVideo synth_video(const SynthConfig& cfg, std::size_t index, ForgeryLabel label) {
  Rng rng(derive_seed(cfg.seed, 1000 + index));
  SynthVideo out;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  out.entry.id = cfg.id_prefix + buf;
  out.entry.fps = cfg.fps;
  out.entry.label = label;
  std::vector<FrameSpan> spans;
  if (label.any_forged()) {
    const double ratio = rng.uniform(cfg.ratio_lo, cfg.ratio_hi);
    auto total = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(cfg.frames)));
    total = std::clamp<std::size_t>(total, 1, cfg.frames - cfg.max_segments);
    const std::size_t k = 1 + rng.below(cfg.max_segments);
    spans = draw_segments(rng, cfg.frames, total, k);
    for (const auto& sp : spans)
      out.entry.segments.push_back({static_cast<double>(sp.first) / cfg.fps,
                                    static_cast<double>(sp.last + 1) / cfg.fps, label.class_id});
  }
  const auto sign_v = detail::shift_pattern(cfg.seed, 1, cfg.dim_v);
  const auto sign_a = detail::shift_pattern(cfg.seed, 2, cfg.dim_a);
  const std::vector<FrameSpan> none;
  Rng rng_v(derive_seed(rng.next_u64(), 1));
  Rng rng_a(derive_seed(rng.next_u64(), 2));
  Matrix v = detail::synth_stream(rng_v, cfg.frames, cfg.dim_v, cfg.smoothness, cfg.deviation_amplitude, sign_v,
                                  label.visual_forged() ? spans : none, 1);
  Matrix a = detail::synth_stream(rng_a, cfg.frames * cfg.audio_rate, cfg.dim_a, cfg.smoothness,
                                  cfg.deviation_amplitude, sign_a, label.audio_forged() ? spans : none,
                                  cfg.audio_rate);
  // Round through f32 so in-memory samples equal what the files hold.
  for (auto* m : {&v, &a})
    for (auto& x : m->data()) x = static_cast<double>(static_cast<float>(x));
  out.visual = FeatureSequence(std::move(v), static_cast<double>(static_cast<float>(cfg.fps)));
  out.audio = FeatureSequence(std::move(a), static_cast<double>(static_cast<float>(cfg.fps * cfg.audio_rate)));
  return out;
}

inline std::vector<ForgeryLabel> corpus_labels(const SynthConfig& cfg) {
  const auto counts = class_counts(cfg.class_mix, cfg.num_videos);
  std::vector<ForgeryLabel> labels;
  for (int c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < counts[static_cast<std::size_t>(c)]; ++i) labels.push_back(ForgeryLabel{c});
  Rng rng(derive_seed(cfg.seed, 0));
  rng.shuffle(std::span<ForgeryLabel>(labels));
  return labels;
}

// In-memory corpus with audio already aligned; equal to loading what
// generate_corpus writes.
inline std::vector<VideoSample> synth_samples(const SynthConfig& cfg, std::size_t threads = 1) {
  cfg.validate();
  const auto labels = corpus_labels(cfg);
  std::vector<VideoSample> out(cfg.num_videos);
  parallel_for(cfg.num_videos, threads, [&](std::size_t i) {
    SynthVideo v = synth_video(cfg, i, labels[i]);
    VideoSample& s = out[i];
    s.id = v.entry.id;
    s.visual = FeatureSequence(v.visual.values(), cfg.fps);
    s.audio = align_audio(v.audio, cfg.frames);
    s.label = v.entry.label;
    s.gt_segments = v.entry.segments;
  });
  return out;
}

// Writes features/<id>_v.ftr, features/<id>_a.ftr, manifest.jsonl and
// corpus.json (the generating config, including the seed) under out_dir.
inline Manifest generate_corpus(const SynthConfig& cfg, const fs::path& out_dir, std::size_t threads = 1) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "features", ec);
  if (ec) fail(ErrorKind::io, "cannot create " + (out_dir / "features").string());
  const auto labels = corpus_labels(cfg);
  Manifest m;
  m.base_dir = out_dir;
  m.entries.resize(cfg.num_videos);
  parallel_for(cfg.num_videos, threads, [&](std::size_t i) {
    SynthVideo v = synth_video(cfg, i, labels[i]);
    v.entry.visual_path = "features/" + v.entry.id + "_v.ftr";
    v.entry.audio_path = "features/" + v.entry.id + "_a.ftr";
    save_feature_file(v.visual, out_dir / v.entry.visual_path);
    save_feature_file(v.audio, out_dir / v.entry.audio_path);
    m.entries[i] = std::move(v.entry);
  });
  save_manifest(m, out_dir / "manifest.jsonl");
  write_file_atomic(out_dir / "corpus.json", json{{"seed", cfg.seed}, {"synth", to_json(cfg)}}.dump(2) + "\n");
  return m;
}

// ---------------------------------------------------------------------------
// Deviation statistics per class and stream

struct StreamStats {
  std::size_t count = 0;
  double mean = 0.0;
  double std_error = 0.0;
};

inline StreamStats summarize(const std::vector<double>& xs) {
  StreamStats s;
  s.count = xs.size();
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std_error = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  }
  return s;
}

inline json to_json(const StreamStats& s) {
  return json{{"count", s.count}, {"mean", s.mean}, {"std_error", s.std_error}};
}

struct DeviationReport {
  DeviationMeasure measure = DeviationMeasure::mse;
  // [class][stream] with streams visual, audio, multimodal
  std::array<std::array<StreamStats, 3>, 4> per_class{};
  // Per stream: genuine = class 0; forged = classes whose label marks the
  // stream as forged (visual {1,2}, audio {1,3}, multimodal {1,2,3}).
  std::array<StreamStats, 3> genuine{};
  std::array<StreamStats, 3> forged{};
};

inline constexpr const char* kStreamNames[3] = {"visual", "audio", "multimodal"};

inline DeviationReport corpus_deviation_report(const std::vector<VideoSample>& samples, DeviationMeasure measure) {
  if (samples.empty()) fail(ErrorKind::empty_input, "deviation report over an empty manifest");
  std::array<std::array<std::vector<double>, 3>, 4> vals;
  std::array<std::vector<double>, 3> gen, forg;
  for (const auto& s : samples) {
    const Matrix mm = hconcat(s.visual.values(), s.audio.values());
    const double d[3] = {temporal_deviation(s.visual.values(), measure),
                         temporal_deviation(s.audio.values(), measure), temporal_deviation(mm, measure)};
    const bool forged_in[3] = {s.label.visual_forged(), s.label.audio_forged(), s.label.any_forged()};
    for (int k = 0; k < 3; ++k) {
      vals[static_cast<std::size_t>(s.label.class_id)][k].push_back(d[k]);
      if (s.label.class_id == 0) gen[k].push_back(d[k]);
      else if (forged_in[k]) forg[k].push_back(d[k]);
    }
  }
  DeviationReport rep;
  rep.measure = measure;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t k = 0; k < 3; ++k) rep.per_class[c][k] = summarize(vals[c][k]);
  for (std::size_t k = 0; k < 3; ++k) {
    rep.genuine[k] = summarize(gen[k]);
    rep.forged[k] = summarize(forg[k]);
  }
  return rep;
}

inline DeviationReport corpus_deviation_report(const Manifest& m, DeviationMeasure measure) {
  if (m.empty()) fail(ErrorKind::empty_input, "deviation report over an empty manifest");
  return corpus_deviation_report(load_samples(m), measure);
}

inline json to_json(const DeviationReport& r) {
  json classes = json::object();
  for (std::size_t c = 0; c < 4; ++c) {
    json per = json::object();
    for (std::size_t k = 0; k < 3; ++k) per[kStreamNames[k]] = to_json(r.per_class[c][k]);
    classes[std::to_string(c)] = std::move(per);
  }
  json streams = json::object();
  for (std::size_t k = 0; k < 3; ++k)
    streams[kStreamNames[k]] = json{{"genuine", to_json(r.genuine[k])}, {"forged", to_json(r.forged[k])}};
  return json{{"measure", to_string(r.measure)}, {"classes", std::move(classes)}, {"streams", std::move(streams)}};
}

}  // namespace wmmt
