#pragma once

// Temporal-property-preserving attention (TPPA).
//
// Given query-side rows A (T x d) and key/value-side rows B (T x d'), the
// relevance matrix R = (A Wq)(B Wk)^T / sqrt(d_out) is summed over its rows,
// giving one relevance per key frame. Those T numbers are normalised with
// softmax and rescaled by T (so the mean weight is 1), then used to scale
// the rows of V = B Wv. Output row j therefore stays tied to frame j.
//
// The column sums are evaluated as K (sum_i q_i) / sqrt(d_out), which is
// the same quantity as column_sum(Q K^T) / sqrt(d_out) at O(T d) cost.

#include <cmath>
#include <string>

#include "wmmt/data.hpp"
#include "wmmt/error.hpp"
#include "wmmt/matrix.hpp"

namespace wmmt {

struct TppaParams {
  Matrix query;  // d_q x d_out
  Matrix key;    // d_kv x d_out
  Matrix value;  // d_kv x d_out

  std::size_t d_out() const noexcept { return value.cols(); }
  friend bool operator==(const TppaParams&, const TppaParams&) = default;
};

// Gradients share the parameter layout.
using TppaGrad = TppaParams;

// Intermediate values kept for the backward pass.
struct TppaTrace {
  Vector target_colsum;  // 1^T A, length d_q
  Matrix source;         // B
  Matrix keys;           // K = B Wk
  Matrix values;         // V = B Wv
  Vector query_sum;      // s = 1^T Q
  Vector probs;          // softmax(c)
  Vector weights;        // T * probs
  Matrix output;         // diag(w) V
};

namespace detail {

inline void check_tppa_shapes(const Matrix& target, const Matrix& source, const TppaParams& p) {
  if (target.rows() != source.rows())
    fail(ErrorKind::alignment, "TPPA needs equal frame counts, got " + std::to_string(target.rows()) + " and " +
                                   std::to_string(source.rows()));
  if (target.rows() == 0) fail(ErrorKind::shape, "TPPA on empty sequence");
  if (p.query.rows() != target.cols() || p.key.rows() != source.cols() || p.value.rows() != source.cols())
    fail(ErrorKind::shape, "TPPA projection rows do not match feature dims");
  if (p.query.cols() != p.key.cols())
    fail(ErrorKind::shape, "TPPA query/key widths differ");
}

}  // namespace detail

inline TppaTrace tppa_trace(const Matrix& target, const Matrix& source, const TppaParams& p, bool with_values = true) {
  detail::check_tppa_shapes(target, source, p);
  TppaTrace tr;
  const std::size_t t = target.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.key.cols()));
  tr.target_colsum = column_sum(target);
  // s = 1^T (A Wq) = (1^T A) Wq
  tr.query_sum.assign(p.query.cols(), 0.0);
  for (std::size_t k = 0; k < p.query.rows(); ++k) {
    const double a = tr.target_colsum[k];
    const auto wr = p.query.row(k);
    for (std::size_t j = 0; j < wr.size(); ++j) tr.query_sum[j] += a * wr[j];
  }
  tr.keys = matmul(source, p.key);
  Vector c = matvec(tr.keys, tr.query_sum);
  for (auto& x : c) x *= scale;
  tr.probs = softmax_vector(c);
  tr.weights.resize(t);
  for (std::size_t j = 0; j < t; ++j) tr.weights[j] = static_cast<double>(t) * tr.probs[j];
  if (with_values) {
    tr.source = source;
    tr.values = matmul(source, p.value);
    tr.output = row_scale(tr.values, tr.weights);
  }
  return tr;
}

// Per-frame TPPA weights: positive, summing to T.
inline Vector tppa_weights(const Matrix& queries_src, const Matrix& keys_src, const TppaParams& p) {
  return tppa_trace(queries_src, keys_src, p, false).weights;
}

inline Matrix tppa(const Matrix& target, const Matrix& source, const TppaParams& p) {
  return tppa_trace(target, source, p).output;
}

// Backpropagates d_out through one TPPA block. Gradients are accumulated
// into grad, d_target and d_source; either input gradient may be null.
inline void tppa_backward(const TppaTrace& tr, const Matrix& d_output, const TppaParams& p, TppaGrad& grad,
                          Matrix* d_target, Matrix* d_source) {
  const std::size_t t = tr.weights.size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.key.cols()));

  // Y = diag(w) V
  Matrix d_values = row_scale(d_output, tr.weights);
  Vector d_w(t);
  for (std::size_t j = 0; j < t; ++j) d_w[j] = dot(d_output.row(j), tr.values.row(j));

  // w = T softmax(c)
  double inner = 0.0;
  for (std::size_t j = 0; j < t; ++j) inner += tr.probs[j] * d_w[j];
  Vector d_c(t);
  for (std::size_t j = 0; j < t; ++j)
    d_c[j] = static_cast<double>(t) * tr.probs[j] * (d_w[j] - inner) * scale;

  // c = K s (scale folded into d_c)
  Matrix d_keys(t, p.key.cols());
  for (std::size_t j = 0; j < t; ++j)
    for (std::size_t k = 0; k < d_keys.cols(); ++k) d_keys(j, k) = d_c[j] * tr.query_sum[k];
  Vector d_s(p.key.cols(), 0.0);
  for (std::size_t j = 0; j < t; ++j) {
    const auto kr = tr.keys.row(j);
    for (std::size_t k = 0; k < d_s.size(); ++k) d_s[k] += d_c[j] * kr[k];
  }

  // s = (1^T A) Wq
  for (std::size_t i = 0; i < p.query.rows(); ++i)
    for (std::size_t k = 0; k < p.query.cols(); ++k) grad.query(i, k) += tr.target_colsum[i] * d_s[k];
  if (d_target) {
    const Vector row = matvec(p.query, d_s);  // every target row receives Wq d_s
    for (std::size_t i = 0; i < d_target->rows(); ++i)
      for (std::size_t k = 0; k < row.size(); ++k) (*d_target)(i, k) += row[k];
  }

  grad.key += matmul_tn(tr.source, d_keys);
  grad.value += matmul_tn(tr.source, d_values);
  if (d_source) {
    *d_source += matmul_nt(d_keys, p.key);
    *d_source += matmul_nt(d_values, p.value);
  }
}

// ---------------------------------------------------------------------------
// Intra/inter enhancement and the full two-stage chain.

// Which side supplies the per-frame content of the inter-modal outputs.
//   queries_from_own: F_v'' = TPPA(queries F_v', keys/values F_a')
//   values_from_own:  F_v'' = TPPA(queries F_a', keys/values F_v')
enum class InterRouting { queries_from_own, values_from_own };

inline const char* to_string(InterRouting r) {
  return r == InterRouting::queries_from_own ? "queries_from_own" : "values_from_own";
}

inline InterRouting parse_inter_routing(const std::string& s) {
  if (s == "queries_from_own") return InterRouting::queries_from_own;
  if (s == "values_from_own") return InterRouting::values_from_own;
  fail(ErrorKind::config, "inter_routing must be queries_from_own or values_from_own, got '" + s + "'");
}

struct EnhanceParams {
  TppaParams intra_v;
  TppaParams intra_a;
  TppaParams inter_v;  // produces F_v''
  TppaParams inter_a;  // produces F_a''
  friend bool operator==(const EnhanceParams&, const EnhanceParams&) = default;
};

inline FeatureSequence intra_enhance(const FeatureSequence& f, const TppaParams& p) {
  return FeatureSequence(tppa(f.values(), f.values(), p), f.fps());
}

inline FeatureSequence inter_enhance(const FeatureSequence& target, const FeatureSequence& source, const TppaParams& p) {
  if (target.frames() != source.frames())
    fail(ErrorKind::alignment, "inter_enhance needs aligned streams (" + std::to_string(target.frames()) + " vs " +
                                   std::to_string(source.frames()) + " frames); run align_audio first");
  return FeatureSequence(tppa(target.values(), source.values(), p), target.fps());
}

struct EnhanceTrace {
  TppaTrace intra_v, intra_a, inter_v, inter_a;
  InterRouting routing = InterRouting::queries_from_own;

  const Matrix& visual_intra() const { return intra_v.output; }
  const Matrix& audio_intra() const { return intra_a.output; }
  const Matrix& visual() const { return inter_v.output; }  // F_v''
  const Matrix& audio() const { return inter_a.output; }   // F_a''
  Matrix multimodal() const { return hconcat(visual(), audio()); }
};

inline EnhanceTrace enhance_trace(const Matrix& v, const Matrix& a, const EnhanceParams& p, InterRouting routing) {
  if (v.rows() != a.rows())
    fail(ErrorKind::alignment, "visual and audio frame counts differ (" + std::to_string(v.rows()) + " vs " +
                                   std::to_string(a.rows()) + "); run align_audio first");
  EnhanceTrace tr;
  tr.routing = routing;
  tr.intra_v = tppa_trace(v, v, p.intra_v);
  tr.intra_a = tppa_trace(a, a, p.intra_a);
  const Matrix& fv = tr.intra_v.output;
  const Matrix& fa = tr.intra_a.output;
  if (routing == InterRouting::queries_from_own) {
    tr.inter_v = tppa_trace(fv, fa, p.inter_v);
    tr.inter_a = tppa_trace(fa, fv, p.inter_a);
  } else {
    tr.inter_v = tppa_trace(fa, fv, p.inter_v);
    tr.inter_a = tppa_trace(fv, fa, p.inter_a);
  }
  return tr;
}

struct EnhancedFeatures {
  FeatureSequence visual;      // F_v''
  FeatureSequence audio;       // F_a''
  FeatureSequence multimodal;  // F_m = [F_v'' | F_a'']
};

inline EnhancedFeatures enhance_all(const FeatureSequence& v, const FeatureSequence& a, const EnhanceParams& p,
                                    InterRouting routing) {
  const EnhanceTrace tr = enhance_trace(v.values(), a.values(), p, routing);
  return {FeatureSequence(tr.visual(), v.fps()), FeatureSequence(tr.audio(), v.fps()),
          FeatureSequence(tr.multimodal(), v.fps())};
}

using EnhanceGrad = EnhanceParams;

// Backward through the chain. With stop_cross_gradient set, each inter block
// treats the other modality's intra output as a constant, so losses on one
// stream cannot move the other modality's intra-projection parameters
// through that block.
inline void enhance_backward(const EnhanceTrace& tr, const Matrix& d_visual, const Matrix& d_audio,
                             const EnhanceParams& p, EnhanceGrad& g, bool stop_cross_gradient = false) {
  Matrix d_fv(tr.visual_intra().rows(), tr.visual_intra().cols());
  Matrix d_fa(tr.audio_intra().rows(), tr.audio_intra().cols());
  Matrix* cross_a = stop_cross_gradient ? nullptr : &d_fa;
  Matrix* cross_v = stop_cross_gradient ? nullptr : &d_fv;
  if (tr.routing == InterRouting::queries_from_own) {
    tppa_backward(tr.inter_v, d_visual, p.inter_v, g.inter_v, &d_fv, cross_a);
    tppa_backward(tr.inter_a, d_audio, p.inter_a, g.inter_a, &d_fa, cross_v);
  } else {
    tppa_backward(tr.inter_v, d_visual, p.inter_v, g.inter_v, cross_a, &d_fv);
    tppa_backward(tr.inter_a, d_audio, p.inter_a, g.inter_a, cross_v, &d_fa);
  }
  tppa_backward(tr.intra_v, d_fv, p.intra_v, g.intra_v, nullptr, nullptr);
  tppa_backward(tr.intra_a, d_fa, p.intra_a, g.intra_a, nullptr, nullptr);
}

}  // namespace wmmt
