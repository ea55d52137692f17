#pragma once

// Localization heads, frame-to-video aggregation, the three-task forward
// pass and the expert-selection gate used at inference.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "wmmt/data.hpp"
#include "wmmt/enhance.hpp"
#include "wmmt/localize.hpp"
#include "wmmt/matrix.hpp"
#include "wmmt/rng.hpp"

namespace wmmt {

struct HeadParams {
  Matrix weight;  // d_in x C
  Matrix bias;    // 1 x C
  friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

struct ModelParams {
  EnhanceParams enhance;
  HeadParams head_v;  // C = 2
  HeadParams head_a;  // C = 2
  HeadParams head_m;  // C = 4
  // Architecture flag, not learned.
  InterRouting routing = InterRouting::queries_from_own;

  std::size_t dim_visual() const noexcept { return enhance.intra_v.query.rows(); }
  std::size_t dim_audio() const noexcept { return enhance.intra_a.query.rows(); }
  std::size_t d_out() const noexcept { return enhance.intra_v.value.cols(); }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Visits every learnable tensor with a stable name, in a fixed order.
template <typename Params, typename F>
void for_each_param(Params& p, F&& f) {
  auto tppa = [&](const char* prefix, auto& t) {
    f(std::string(prefix) + ".query", t.query);
    f(std::string(prefix) + ".key", t.key);
    f(std::string(prefix) + ".value", t.value);
  };
  tppa("intra_v", p.enhance.intra_v);
  tppa("intra_a", p.enhance.intra_a);
  tppa("inter_v", p.enhance.inter_v);
  tppa("inter_a", p.enhance.inter_a);
  auto head = [&](const char* prefix, auto& h) {
    f(std::string(prefix) + ".weight", h.weight);
    f(std::string(prefix) + ".bias", h.bias);
  };
  head("head_v", p.head_v);
  head("head_a", p.head_a);
  head("head_m", p.head_m);
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for_each_param(z, [](const std::string&, Matrix& m) { m = Matrix(m.rows(), m.cols()); });
  return z;
}

inline std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  for_each_param(p, [&](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

// Projections and head weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases 0.
inline ModelParams init_params(std::size_t dim_visual, std::size_t dim_audio, std::size_t d_out, std::uint64_t seed,
                               InterRouting routing = InterRouting::queries_from_own) {
  if (dim_visual == 0 || dim_audio == 0 || d_out == 0) fail(ErrorKind::config, "model dims must be positive");
  ModelParams p;
  p.routing = routing;
  auto shape_tppa = [&](TppaParams& t, std::size_t q_in, std::size_t kv_in) {
    t.query = Matrix(q_in, d_out);
    t.key = Matrix(kv_in, d_out);
    t.value = Matrix(kv_in, d_out);
  };
  shape_tppa(p.enhance.intra_v, dim_visual, dim_visual);
  shape_tppa(p.enhance.intra_a, dim_audio, dim_audio);
  shape_tppa(p.enhance.inter_v, d_out, d_out);
  shape_tppa(p.enhance.inter_a, d_out, d_out);
  p.head_v = {Matrix(d_out, 2), Matrix(1, 2)};
  p.head_a = {Matrix(d_out, 2), Matrix(1, 2)};
  p.head_m = {Matrix(2 * d_out, 4), Matrix(1, 4)};

  Rng rng(derive_seed(seed, 0x1417000000000000ull));
  for_each_param(p, [&](const std::string& name, Matrix& m) {
    if (name.ends_with(".bias")) return;
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.rows()));
    for (auto& x : m.data()) x = rng.uniform(-bound, bound);
  });
  return p;
}

// Per-frame affine map.
inline ForgeryActivationSequence localize(const Matrix& features, const HeadParams& head, HeadKind kind) {
  if (features.cols() != head.weight.rows())
    fail(ErrorKind::shape, "head expects " + std::to_string(head.weight.rows()) + "-dim features, got " +
                               std::to_string(features.cols()));
  Matrix logits = matmul(features, head.weight);
  for (std::size_t t = 0; t < logits.rows(); ++t)
    for (std::size_t c = 0; c < logits.cols(); ++c) logits(t, c) += head.bias(0, c);
  return ForgeryActivationSequence(std::move(logits), kind);
}

// softmax of the time-averaged logits.
inline Vector aggregate(const ForgeryActivationSequence& fas) { return softmax_vector(column_mean(fas.logits)); }

struct VideoPrediction {
  Vector visual;      // [genuine, forged]
  Vector audio;       // [genuine, forged]
  Vector multimodal;  // 4 forgery types
};

struct ForwardResult {
  EnhanceTrace trace;
  Matrix multimodal_features;  // F_m
  ForgeryActivationSequence fas_v, fas_a, fas_m;
  VideoPrediction pred;

  const Matrix& visual_features() const { return trace.visual(); }
  const Matrix& audio_features() const { return trace.audio(); }
};

inline ForwardResult forward(const Matrix& visual, const Matrix& audio, const ModelParams& p) {
  ForwardResult r;
  r.trace = enhance_trace(visual, audio, p.enhance, p.routing);
  r.multimodal_features = r.trace.multimodal();
  r.fas_v = localize(r.trace.visual(), p.head_v, HeadKind::visual);
  r.fas_a = localize(r.trace.audio(), p.head_a, HeadKind::audio);
  r.fas_m = localize(r.multimodal_features, p.head_m, HeadKind::multimodal);
  r.pred = {aggregate(r.fas_v), aggregate(r.fas_a), aggregate(r.fas_m)};
  return r;
}

inline ForwardResult forward(const VideoSample& s, const ModelParams& p) {
  return forward(s.visual.values(), s.audio.values(), p);
}

enum class Expert { none, visual, audio, multimodal };

inline const char* to_string(Expert e) {
  switch (e) {
    case Expert::none: return "none";
    case Expert::visual: return "visual";
    case Expert::audio: return "audio";
    case Expert::multimodal: return "multimodal";
  }
  return "?";
}

// Argmax with ties toward the lower index.
inline int argmax(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

inline Expert expert_for_class(int class_id) {
  switch (class_id) {
    case 1: return Expert::multimodal;
    case 2: return Expert::visual;
    case 3: return Expert::audio;
    default: return Expert::none;
  }
}

inline Expert select_expert(const VideoPrediction& pred) { return expert_for_class(argmax(pred.multimodal)); }

// Proposals from the FAS the gate picks; the other heads are not read.
inline std::vector<SegmentProposal> expert_proposals(Expert gate, const ForgeryActivationSequence& fas_v,
                                                     const ForgeryActivationSequence& fas_a,
                                                     const ForgeryActivationSequence& fas_m, double fps,
                                                     const ProposalConfig& cfg = {}) {
  switch (gate) {
    case Expert::none: return {};
    case Expert::visual: return fas_to_proposals(fas_v, fps, cfg);
    case Expert::audio: return fas_to_proposals(fas_a, fps, cfg);
    case Expert::multimodal: return fas_to_proposals(fas_m, fps, cfg);
  }
  return {};
}

struct Inference {
  ForgeryLabel pred_label;
  Expert gate = Expert::none;
  std::vector<SegmentProposal> proposals;
};

inline Inference infer(const VideoSample& s, const ModelParams& p, const ProposalConfig& cfg = {}) {
  const ForwardResult r = forward(s, p);
  Inference out;
  out.pred_label = ForgeryLabel{argmax(r.pred.multimodal)};
  out.gate = select_expert(r.pred);
  out.proposals = expert_proposals(out.gate, r.fas_v, r.fas_a, r.fas_m, s.fps(), cfg);
  return out;
}

inline PredictionRecord to_record(const VideoSample& s, const Inference& inf) {
  return {s.id, inf.pred_label.class_id, inf.proposals};
}

}  // namespace wmmt
