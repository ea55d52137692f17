#pragma once

// Analytic gradients of the total loss, Adam, the training loop,
// checkpoints and the finite-difference gradient check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "wmmt/data.hpp"
#include "wmmt/json_util.hpp"
#include "wmmt/losses.hpp"
#include "wmmt/model.hpp"
#include "wmmt/parallel.hpp"
#include "wmmt/rng.hpp"

namespace wmmt {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  LossWeights weights;
  DeviationConfig deviation;
  std::size_t d_out = 64;
  InterRouting routing = InterRouting::queries_from_own;
  bool stop_cross_gradient = false;
  std::size_t threads = 1;

  // Settings for small synthetic corpora: same schedule, larger step.
  static TrainConfig desk_scale() {
    TrainConfig c;
    c.learning_rate = 1e-3;
    return c;
  }

  void validate() const {
    if (batch_size < 1) fail(ErrorKind::config, "config field 'train.batch_size' must be >= 1");
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
      fail(ErrorKind::config, "config field 'train.learning_rate' must be >= 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1)) fail(ErrorKind::config, "config field 'train.adam_beta1' must be in [0,1)");
    if (!(adam_beta2 >= 0 && adam_beta2 < 1)) fail(ErrorKind::config, "config field 'train.adam_beta2' must be in [0,1)");
    if (!(adam_eps > 0)) fail(ErrorKind::config, "config field 'train.adam_eps' must be > 0");
    if (d_out < 1) fail(ErrorKind::config, "config field 'train.d_out' must be >= 1");
    for (double w : {weights.lambda_m, weights.lambda_v, weights.lambda_a, weights.phi})
      if (!(w >= 0) || !std::isfinite(w)) fail(ErrorKind::config, "config field 'train.weights' must be nonnegative");
    if (deviation.objectives.empty()) fail(ErrorKind::config, "config field 'train.deviation.objectives' must be nonempty");
  }
};

// ---------------------------------------------------------------------------
// JSON codecs for the loss/deviation/train config blocks.

inline json to_json(const LossWeights& w) {
  return json{{"lambda_m", w.lambda_m}, {"lambda_v", w.lambda_v}, {"lambda_a", w.lambda_a}, {"phi", w.phi}};
}

inline LossWeights loss_weights_from_json(const json& j, const std::string& path) {
  LossWeights w;
  ObjectReader r(j, path);
  r.get("lambda_m", w.lambda_m).get("lambda_v", w.lambda_v).get("lambda_a", w.lambda_a).get("phi", w.phi);
  r.finish();
  return w;
}

inline json to_json(const DeviationConfig& d) {
  json objs = json::array();
  for (auto o : d.objectives) objs.push_back(to_string(o));
  return json{{"measure", to_string(d.measure)},
              {"objectives", std::move(objs)},
              {"reduction", d.reduction == DeviationReduction::mean ? "mean" : "sum"}};
}

inline DeviationConfig deviation_config_from_json(const json& j, const std::string& path) {
  DeviationConfig d;
  ObjectReader r(j, path);
  std::string measure = to_string(d.measure);
  r.get("measure", measure);
  try {
    d.measure = parse_measure(measure);
  } catch (const Error& e) {
    r.invalid("measure", e.what());
  }
  if (r.has("objectives")) {
    std::vector<std::string> objs;
    r.get("objectives", objs);
    if (objs.empty()) r.invalid("objectives", "must be nonempty");
    d.objectives.clear();
    for (const auto& o : objs) {
      try {
        const auto parsed = parse_objective(o);
        if (std::find(d.objectives.begin(), d.objectives.end(), parsed) != d.objectives.end())
          r.invalid("objectives", "lists '" + o + "' twice");
        d.objectives.push_back(parsed);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::config && std::string(e.what()).starts_with("config field")) throw;
        r.invalid("objectives", e.what());
      }
    }
  }
  std::string reduction = d.reduction == DeviationReduction::mean ? "mean" : "sum";
  r.get("reduction", reduction);
  if (reduction == "mean") d.reduction = DeviationReduction::mean;
  else if (reduction == "sum") d.reduction = DeviationReduction::sum;
  else r.invalid("reduction", "must be 'mean' or 'sum'");
  r.finish();
  return d;
}

inline json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"seed", c.seed},
              {"weights", to_json(c.weights)},
              {"deviation", to_json(c.deviation)},
              {"d_out", c.d_out},
              {"routing", to_string(c.routing)},
              {"stop_cross_gradient", c.stop_cross_gradient},
              {"threads", c.threads}};
}

inline TrainConfig train_config_from_json(const json& j, const std::string& path,
                                          TrainConfig c = TrainConfig::desk_scale()) {
  ObjectReader r(j, path);
  r.get("epochs", c.epochs).get("batch_size", c.batch_size).get("learning_rate", c.learning_rate);
  r.get("adam_beta1", c.adam_beta1).get("adam_beta2", c.adam_beta2).get("adam_eps", c.adam_eps);
  r.get("seed", c.seed).get("d_out", c.d_out).get("stop_cross_gradient", c.stop_cross_gradient);
  r.get("threads", c.threads);
  if (const json* w = r.child("weights")) c.weights = loss_weights_from_json(*w, r.field("weights"));
  if (const json* d = r.child("deviation")) c.deviation = deviation_config_from_json(*d, r.field("deviation"));
  std::string routing = to_string(c.routing);
  r.get("routing", routing);
  try {
    c.routing = parse_inter_routing(routing);
  } catch (const Error& e) {
    r.invalid("routing", e.what());
  }
  r.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Gradients

struct SampleGradient {
  ModelParams grad;
  LossBreakdown loss;
};

namespace detail {

inline void head_backward(const Matrix& features, const Matrix& d_logits, const HeadParams& head, HeadParams& g,
                          Matrix& d_features) {
  g.weight += matmul_tn(features, d_logits);
  for (std::size_t t = 0; t < d_logits.rows(); ++t)
    for (std::size_t c = 0; c < d_logits.cols(); ++c) g.bias(0, c) += d_logits(t, c);
  d_features += matmul_nt(d_logits, head.weight);
}

// Gradient of the mean-logit vector for a binary head under weighted BCE.
inline Vector binary_head_grad(int y, const Vector& prob, double weight) {
  const double p = prob[1];
  const double dp = weight * bce_derivative(y, p);
  const double s = dp * p * (1.0 - p);
  return {-s, s};
}

inline Matrix spread_over_frames(const Vector& d_mean, std::size_t frames) {
  Matrix d(frames, d_mean.size());
  const double inv = 1.0 / static_cast<double>(frames);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t c = 0; c < d_mean.size(); ++c) d(t, c) = d_mean[c] * inv;
  return d;
}

}  // namespace detail

// Loss and exact gradient for one sample.
inline SampleGradient sample_gradient(const Matrix& visual, const Matrix& audio, ForgeryLabel label,
                                      const ModelParams& p, const LossWeights& w, const DeviationConfig& dev,
                                      bool stop_cross_gradient = false) {
  const ForwardResult r = forward(visual, audio, p);
  SampleGradient out;
  out.loss = total_loss(label, r, w, dev);
  out.grad = zeros_like(p);
  ModelParams& g = out.grad;
  const std::size_t t = visual.rows();
  const std::size_t d = p.d_out();
  const BinaryLabels y = derive_binary_labels(label);

  // L_m: softmax + cross-entropy on the mean logits.
  Vector dm(4, 0.0);
  const auto cls = static_cast<std::size_t>(label.class_id);
  if (r.pred.multimodal[cls] >= kProbEps)
    for (std::size_t c = 0; c < 4; ++c) dm[c] = w.lambda_m * (r.pred.multimodal[c] - (c == cls ? 1.0 : 0.0));
  const Vector dv = detail::binary_head_grad(y.visual, r.pred.visual, w.lambda_v);
  const Vector da = detail::binary_head_grad(y.audio, r.pred.audio, w.lambda_a);

  Matrix d_visual(t, d), d_audio(t, d), d_multi(t, 2 * d);
  detail::head_backward(r.visual_features(), detail::spread_over_frames(dv, t), p.head_v, g.head_v, d_visual);
  detail::head_backward(r.audio_features(), detail::spread_over_frames(da, t), p.head_a, g.head_a, d_audio);
  detail::head_backward(r.multimodal_features, detail::spread_over_frames(dm, t), p.head_m, g.head_m, d_multi);

  if (w.phi != 0.0) {
    const double per = w.phi / static_cast<double>(dev.objectives.size());
    for (auto o : dev.objectives) {
      const Matrix f = objective_features(r, o);
      const double dd = per * deviation_loss_derivative(temporal_deviation(f, dev.measure, dev.reduction), label);
      Matrix& target = o == DeviationObjective::audio ? d_audio : (o == DeviationObjective::visual ? d_visual : d_multi);
      temporal_deviation_backward(f, dev.measure, dev.reduction, dd, target);
    }
  }
  d_visual += column_block(d_multi, 0, d);
  d_audio += column_block(d_multi, d, d);
  enhance_backward(r.trace, d_visual, d_audio, p.enhance, g.enhance, stop_cross_gradient);
  return out;
}

inline SampleGradient sample_gradient(const VideoSample& s, const ModelParams& p, const LossWeights& w,
                                      const DeviationConfig& dev, bool stop_cross_gradient = false) {
  return sample_gradient(s.visual.values(), s.audio.values(), s.label, p, w, dev, stop_cross_gradient);
}

struct BatchGradient {
  ModelParams grad;
  LossBreakdown loss;  // batch means
};

// Batch-mean loss and gradient. Per-sample results are reduced in index
// order, so the result is independent of the thread count.
inline BatchGradient batch_gradient(std::span<const VideoSample* const> batch, const ModelParams& p,
                                    const LossWeights& w, const DeviationConfig& dev, bool stop_cross_gradient = false,
                                    std::size_t threads = 1) {
  if (batch.empty()) fail(ErrorKind::empty_input, "gradient of an empty batch");
  std::vector<SampleGradient> parts(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    parts[i] = sample_gradient(*batch[i], p, w, dev, stop_cross_gradient);
  });
  BatchGradient out;
  out.grad = zeros_like(p);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!std::isfinite(parts[i].loss.total))
      fail(ErrorKind::numeric, "non-finite loss for sample '" + batch[i]->id + "'");
    out.loss.total += parts[i].loss.total * inv;
    out.loss.multimodal += parts[i].loss.multimodal * inv;
    out.loss.visual += parts[i].loss.visual * inv;
    out.loss.audio += parts[i].loss.audio * inv;
    out.loss.deviation += parts[i].loss.deviation * inv;
    std::vector<Matrix*> dst;
    for_each_param(out.grad, [&](const std::string&, Matrix& m) { dst.push_back(&m); });
    std::size_t k = 0;
    for_each_param(parts[i].grad, [&](const std::string& name, Matrix& m) {
      for (std::size_t e = 0; e < m.size(); ++e) {
        if (!std::isfinite(m.data()[e]))
          fail(ErrorKind::numeric, "non-finite gradient in " + name + " for sample '" + batch[i]->id + "'");
        dst[k]->data()[e] += m.data()[e] * inv;
      }
      ++k;
    });
  }
  return out;
}

inline double batch_loss(std::span<const VideoSample* const> batch, const ModelParams& p, const LossWeights& w,
                         const DeviationConfig& dev) {
  double s = 0.0;
  for (const auto* sample : batch) s += total_loss(*sample, forward(*sample, p), w, dev).total;
  return s / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::uint64_t step = 0;
  ModelParams m;
  ModelParams v;
};

inline AdamState adam_init(const ModelParams& p) { return {0, zeros_like(p), zeros_like(p)}; }

inline void adam_step(ModelParams& params, const ModelParams& grad, AdamState& st, double lr, double beta1,
                      double beta2, double eps) {
  ++st.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  std::vector<Matrix*> ps, ms, vs;
  std::vector<const Matrix*> gs;
  for_each_param(params, [&](const std::string&, Matrix& x) { ps.push_back(&x); });
  for_each_param(grad, [&](const std::string&, const Matrix& x) { gs.push_back(&x); });
  for_each_param(st.m, [&](const std::string&, Matrix& x) { ms.push_back(&x); });
  for_each_param(st.v, [&](const std::string&, Matrix& x) { vs.push_back(&x); });
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto& x = ps[k]->data();
    const auto& g = gs[k]->data();
    auto& m = ms[k]->data();
    auto& v = vs[k]->data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (little-endian):
//   "WMMT" | u32 version | u32 record_count
//   record_count x { u32 name_len | name | u32 ndim | ndim x u64 dim | prod(dim) x f64 }
//   u64 json_len | json_len bytes of UTF-8 JSON
// Records hold the model parameters by name, then "adam.m/<name>" and
// "adam.v/<name>". The JSON carries format_version, epoch, adam_step and
// the TrainConfig snapshot.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  ModelParams params;
  TrainConfig config;
  std::uint64_t epoch = 0;
  AdamState adam;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.format_version == b.format_version && a.params == b.params && a.epoch == b.epoch &&
           a.adam.step == b.adam.step && a.adam.m == b.adam.m && a.adam.v == b.adam.v &&
           to_json(a.config) == to_json(b.config);
  }
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::vector<std::pair<std::string, const Matrix*>> records;
  for_each_param(ck.params, [&](const std::string& n, const Matrix& m) { records.emplace_back(n, &m); });
  for_each_param(ck.adam.m, [&](const std::string& n, const Matrix& m) { records.emplace_back("adam.m/" + n, &m); });
  for_each_param(ck.adam.v, [&](const std::string& n, const Matrix& m) { records.emplace_back("adam.v/" + n, &m); });
  std::string out = "WMMT";
  detail::put_u32(out, ck.format_version);
  detail::put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, m] : records) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, 2);
    detail::put_u64(out, m->rows());
    detail::put_u64(out, m->cols());
    for (double x : m->data()) detail::put_f64(out, x);
  }
  const json meta{{"format_version", ck.format_version},
                  {"epoch", ck.epoch},
                  {"adam_step", ck.adam.step},
                  {"seed", ck.config.seed},
                  {"config", to_json(ck.config)}};
  const std::string text = meta.dump();
  detail::put_u64(out, text.size());
  out += text;
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& context = "checkpoint") {
  detail::ByteReader r(bytes, context);
  if (bytes.empty()) r.error("empty file");
  if (r.take(4, "magic") != "WMMT") r.error("bad magic (expected WMMT)");
  Checkpoint ck;
  ck.format_version = r.u32("version");
  if (ck.format_version != kCheckpointVersion) r.error("unsupported version " + std::to_string(ck.format_version));
  const std::uint32_t count = r.u32("record_count");
  std::map<std::string, Matrix> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32("name_len");
    std::string name(r.take(len, "name"));
    const std::uint32_t ndim = r.u32("ndim");
    if (ndim != 2) r.error("record '" + name + "' must be 2-D");
    const std::uint64_t rows = r.u64("dim"), cols = r.u64("dim");
    if (rows * cols > r.remaining() / 8) r.error("record '" + name + "' truncated");
    Matrix m(rows, cols);
    for (auto& x : m.data()) x = r.f64("payload");
    if (!records.emplace(name, std::move(m)).second) r.error("duplicate record '" + name + "'");
  }
  const std::uint64_t json_len = r.u64("json_len");
  if (json_len > r.remaining()) r.error("truncated config snapshot");
  const std::string text(r.take(json_len, "config"));
  if (r.remaining() != 0) r.error("trailing bytes");
  json meta;
  try {
    meta = json::parse(text);
    ck.epoch = meta.at("epoch").get<std::uint64_t>();
    ck.adam.step = meta.at("adam_step").get<std::uint64_t>();
    ck.config = train_config_from_json(meta.at("config"), "config", TrainConfig{});
  } catch (const json::exception& e) {
    r.error(std::string("bad config snapshot: ") + e.what());
  } catch (const Error& e) {
    r.error(std::string("bad config snapshot: ") + e.what());
  }

  auto find = [&](const std::string& n) -> Matrix& {
    auto it = records.find(n);
    if (it == records.end()) r.error("missing record '" + n + "'");
    return it->second;
  };
  const Matrix& qv = find("intra_v.query");
  const Matrix& qa = find("intra_a.query");
  ck.params = init_params(qv.rows(), qa.rows(), qv.cols(), 0, ck.config.routing);
  ck.adam = {ck.adam.step, zeros_like(ck.params), zeros_like(ck.params)};
  std::size_t used = 0;
  auto fill = [&](const std::string& prefix, ModelParams& target) {
    for_each_param(target, [&](const std::string& n, Matrix& m) {
      Matrix& src = find(prefix + n);
      if (!src.same_shape(m)) r.error("record '" + prefix + n + "' has shape " + shape_str(src) + ", expected " + shape_str(m));
      m = std::move(src);
      ++used;
    });
  };
  fill("", ck.params);
  fill("adam.m/", ck.adam.m);
  fill("adam.v/", ck.adam.v);
  if (used != records.size()) r.error("unexpected extra records");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const fs::path& path) { write_file_atomic(path, encode_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const fs::path& path) {
  return decode_checkpoint(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochLog {
  std::uint64_t epoch = 0;
  LossBreakdown mean_loss;
};

inline json to_json(const EpochLog& e, std::uint64_t seed) {
  return json{{"epoch", e.epoch},
              {"seed", seed},
              {"total", e.mean_loss.total},
              {"multimodal", e.mean_loss.multimodal},
              {"visual", e.mean_loss.visual},
              {"audio", e.mean_loss.audio},
              {"deviation", e.mean_loss.deviation}};
}

struct TrainResult {
  Checkpoint checkpoint;      // last completed epoch
  std::vector<EpochLog> log;  // epochs run by this call
  bool aborted = false;
  std::string abort_reason;
};

inline Checkpoint initial_checkpoint(std::size_t dim_visual, std::size_t dim_audio, const TrainConfig& cfg) {
  Checkpoint ck;
  ck.config = cfg;
  ck.params = init_params(dim_visual, dim_audio, cfg.d_out, cfg.seed, cfg.routing);
  ck.adam = adam_init(ck.params);
  return ck;
}

// Runs cfg.epochs epochs starting after start.epoch. Each epoch visits the
// samples in an order drawn from (seed, epoch); the batch loss log is the
// mean over that epoch's batches.
inline TrainResult train_loop(const std::vector<VideoSample>& samples, const TrainConfig& cfg, Checkpoint start,
                              const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (samples.empty()) fail(ErrorKind::empty_input, "training set is empty");
  TrainResult res;
  res.checkpoint = std::move(start);
  res.checkpoint.config = cfg;
  Checkpoint work = res.checkpoint;
  std::vector<std::size_t> order(samples.size());
  const std::uint64_t first = work.epoch + 1;
  for (std::uint64_t epoch = first; epoch < first + cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, 0x5eed0000ull + epoch));
    rng.shuffle(std::span<std::size_t>(order));
    EpochLog log;
    log.epoch = epoch;
    std::size_t batches = 0;
    try {
      for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
        std::vector<const VideoSample*> batch;
        for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) batch.push_back(&samples[order[i]]);
        const BatchGradient bg = batch_gradient(batch, work.params, cfg.weights, cfg.deviation,
                                                cfg.stop_cross_gradient, cfg.threads);
        adam_step(work.params, bg.grad, work.adam, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        bool finite = true;
        for_each_param(work.params, [&](const std::string&, const Matrix& m) { finite = finite && all_finite(m); });
        if (!finite) fail(ErrorKind::numeric, "parameters diverged in epoch " + std::to_string(epoch));
        log.mean_loss.total += bg.loss.total;
        log.mean_loss.multimodal += bg.loss.multimodal;
        log.mean_loss.visual += bg.loss.visual;
        log.mean_loss.audio += bg.loss.audio;
        log.mean_loss.deviation += bg.loss.deviation;
        ++batches;
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric) throw;
      res.aborted = true;
      res.abort_reason = e.what();
      return res;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    log.mean_loss.total *= inv;
    log.mean_loss.multimodal *= inv;
    log.mean_loss.visual *= inv;
    log.mean_loss.audio *= inv;
    log.mean_loss.deviation *= inv;
    work.epoch = epoch;
    res.checkpoint = work;
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return res;
}

inline TrainResult train_loop(const std::vector<VideoSample>& samples, const TrainConfig& cfg,
                              const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (samples.empty()) fail(ErrorKind::empty_input, "training set is empty");
  return train_loop(samples, cfg,
                    initial_checkpoint(samples.front().visual.dim(), samples.front().audio.dim(), cfg), on_epoch);
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckConfig {
  std::size_t frames = 6;
  std::size_t dim_visual = 3;
  std::size_t dim_audio = 3;
  std::size_t d_out = 4;
  std::size_t batch = 2;
  double step = 1e-5;
  double abs_tol = 1e-6;
  double rel_tol = 1e-4;
  LossWeights weights;
  DeviationConfig deviation;
  InterRouting routing = InterRouting::queries_from_own;
};

struct GradcheckReport {
  bool pass = false;
  std::size_t coordinates = 0;
  std::size_t failures = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::string worst_param;
};

inline json to_json(const GradcheckReport& r) {
  return json{{"pass", r.pass},
              {"coordinates", r.coordinates},
              {"failures", r.failures},
              {"max_abs_error", r.max_abs_error},
              {"max_rel_error", r.max_rel_error},
              {"worst_param", r.worst_param}};
}

// Random tiny batch: features ~ N(0,1), labels alternate over the four
// classes starting from a seeded offset.
inline std::vector<VideoSample> gradcheck_batch(const GradcheckConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x9c));
  std::vector<VideoSample> out;
  const int offset = static_cast<int>(rng.below(4));
  for (std::size_t i = 0; i < cfg.batch; ++i) {
    Matrix v(cfg.frames, cfg.dim_visual), a(cfg.frames, cfg.dim_audio);
    for (auto& x : v.data()) x = rng.normal();
    for (auto& x : a.data()) x = rng.normal();
    VideoSample s;
    s.id = "gc" + std::to_string(i);
    s.visual = FeatureSequence(std::move(v), 1.0);
    s.audio = FeatureSequence(std::move(a), 1.0);
    s.label = ForgeryLabel{(offset + static_cast<int>(i)) % 4};
    out.push_back(std::move(s));
  }
  return out;
}

inline GradcheckReport gradcheck(const GradcheckConfig& cfg, std::uint64_t seed) {
  const auto samples = gradcheck_batch(cfg, seed);
  std::vector<const VideoSample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  ModelParams params = init_params(cfg.dim_visual, cfg.dim_audio, cfg.d_out, seed, cfg.routing);
  // Non-zero biases so their gradients are exercised away from symmetry.
  Rng rng(derive_seed(seed, 0xb1a5));
  for_each_param(params, [&](const std::string& n, Matrix& m) {
    if (n.ends_with(".bias"))
      for (auto& x : m.data()) x = rng.uniform(-0.5, 0.5);
  });
  const BatchGradient analytic = batch_gradient(batch, params, cfg.weights, cfg.deviation);

  GradcheckReport rep;
  std::vector<const Matrix*> grads;
  for_each_param(analytic.grad, [&](const std::string&, const Matrix& m) { grads.push_back(&m); });
  std::size_t k = 0;
  double worst = -1.0;
  for_each_param(params, [&](const std::string& name, Matrix& m) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double orig = m.data()[i];
      m.data()[i] = orig + cfg.step;
      const double up = batch_loss(batch, params, cfg.weights, cfg.deviation);
      m.data()[i] = orig - cfg.step;
      const double down = batch_loss(batch, params, cfg.weights, cfg.deviation);
      m.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * cfg.step);
      const double a = grads[k]->data()[i];
      const double err = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double rel = scale > 0 ? err / scale : 0.0;
      ++rep.coordinates;
      const double allowed = std::max(cfg.abs_tol, cfg.rel_tol * scale);
      if (!(err <= allowed)) ++rep.failures;
      rep.max_abs_error = std::max(rep.max_abs_error, err);
      rep.max_rel_error = std::max(rep.max_rel_error, rel);
      if (err / std::max(allowed, 1e-300) > worst) {
        worst = err / std::max(allowed, 1e-300);
        rep.worst_param = name + "[" + std::to_string(i) + "]";
      }
    }
    ++k;
  });
  rep.pass = rep.failures == 0;
  return rep;
}

}  // namespace wmmt
