#pragma once

// Training objectives: per-task classification losses, the adjacent-frame
// deviation measures, the deviation-perceiving loss and the weighted total.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "wmmt/data.hpp"
#include "wmmt/matrix.hpp"
#include "wmmt/model.hpp"

namespace wmmt {

inline constexpr double kProbEps = 1e-12;
inline constexpr double kNormEps = 1e-12;

struct LossWeights {
  double lambda_m = 0.8;
  double lambda_v = 0.1;
  double lambda_a = 0.1;
  double phi = 0.1;
};

enum class DeviationMeasure { l1, l2, cosine, kl, mse };

inline constexpr DeviationMeasure kAllMeasures[] = {DeviationMeasure::l1, DeviationMeasure::l2,
                                                    DeviationMeasure::cosine, DeviationMeasure::kl,
                                                    DeviationMeasure::mse};

inline const char* to_string(DeviationMeasure m) {
  switch (m) {
    case DeviationMeasure::l1: return "l1";
    case DeviationMeasure::l2: return "l2";
    case DeviationMeasure::cosine: return "cosine";
    case DeviationMeasure::kl: return "kl";
    case DeviationMeasure::mse: return "mse";
  }
  return "?";
}

inline DeviationMeasure parse_measure(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (auto m : kAllMeasures)
    if (s == to_string(m)) return m;
  fail(ErrorKind::config, "unknown deviation measure '" + s + "' (expected l1, l2, cosine, kl or mse)");
}

enum class DeviationObjective { audio, visual, multimodal };

inline const char* to_string(DeviationObjective o) {
  switch (o) {
    case DeviationObjective::audio: return "audio";
    case DeviationObjective::visual: return "visual";
    case DeviationObjective::multimodal: return "multimodal";
  }
  return "?";
}

inline DeviationObjective parse_objective(const std::string& s) {
  if (s == "audio") return DeviationObjective::audio;
  if (s == "visual") return DeviationObjective::visual;
  if (s == "multimodal") return DeviationObjective::multimodal;
  fail(ErrorKind::config, "unknown deviation objective '" + s + "' (expected audio, visual or multimodal)");
}

// How adjacent-pair deviations are reduced before the sigmoid.
enum class DeviationReduction { mean, sum };

struct DeviationConfig {
  DeviationMeasure measure = DeviationMeasure::mse;
  std::vector<DeviationObjective> objectives = {DeviationObjective::multimodal};
  DeviationReduction reduction = DeviationReduction::mean;
};

// ---------------------------------------------------------------------------
// Classification losses

inline double bce(int y, double y_hat) {
  if (!(y_hat >= 0.0 && y_hat <= 1.0)) fail(ErrorKind::domain, "bce: probability outside [0,1]");
  if (y != 0 && y != 1) fail(ErrorKind::domain, "bce: label must be 0 or 1");
  const double p = std::clamp(y_hat, kProbEps, 1.0 - kProbEps);
  return -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
}

// d bce / d y_hat; zero where clipping is active.
inline double bce_derivative(int y, double y_hat) {
  if (y_hat < kProbEps || y_hat > 1.0 - kProbEps) return 0.0;
  return -static_cast<double>(y) / y_hat + static_cast<double>(1 - y) / (1.0 - y_hat);
}

inline double cross_entropy(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) fail(ErrorKind::shape, "cross_entropy length mismatch");
  int ones = 0;
  std::size_t hot = 0;
  for (std::size_t c = 0; c < y.size(); ++c) {
    if (y[c] == 1.0) {
      ++ones;
      hot = c;
    } else if (y[c] != 0.0) {
      fail(ErrorKind::domain, "cross_entropy: target is not one-hot");
    }
  }
  if (ones != 1) fail(ErrorKind::domain, "cross_entropy: target is not one-hot");
  return -std::log(std::max(y_hat[hot], kProbEps));
}

inline Vector one_hot(std::size_t n, std::size_t hot) {
  Vector v(n, 0.0);
  v.at(hot) = 1.0;
  return v;
}

// ---------------------------------------------------------------------------
// Deviation measures between two frames

inline double deviation_measure(std::span<const double> u, std::span<const double> v, DeviationMeasure m) {
  if (u.size() != v.size()) fail(ErrorKind::shape, "deviation_measure length mismatch");
  const std::size_t n = u.size();
  switch (m) {
    case DeviationMeasure::mse: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
      return s / static_cast<double>(n);
    }
    case DeviationMeasure::l1: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += std::abs(u[i] - v[i]);
      return s;
    }
    case DeviationMeasure::l2: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
      return std::sqrt(s);
    }
    case DeviationMeasure::cosine: {
      const double nu = norm2(u), nv = norm2(v);
      if (nu < kNormEps || nv < kNormEps) return 0.0;
      return std::max(0.0, 1.0 - dot(u, v) / (nu * nv));
    }
    case DeviationMeasure::kl: {
      const Vector p = softmax_vector(u);
      const double lu = log_sum_exp(u), lv = log_sum_exp(v);
      // sum p (log p - log q) with log p = u - lse(u), log q = v - lse(v)
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += p[i] * ((u[i] - lu) - (v[i] - lv));
      return std::max(0.0, s);
    }
  }
  return 0.0;
}

// Accumulates scale * d f(u, v) into du and dv.
inline void deviation_measure_backward(std::span<const double> u, std::span<const double> v, DeviationMeasure m,
                                       double scale, std::span<double> du, std::span<double> dv) {
  const std::size_t n = u.size();
  switch (m) {
    case DeviationMeasure::mse:
      for (std::size_t i = 0; i < n; ++i) {
        const double g = scale * 2.0 * (u[i] - v[i]) / static_cast<double>(n);
        du[i] += g;
        dv[i] -= g;
      }
      return;
    case DeviationMeasure::l1:
      for (std::size_t i = 0; i < n; ++i) {
        const double diff = u[i] - v[i];
        const double g = scale * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0));
        du[i] += g;
        dv[i] -= g;
      }
      return;
    case DeviationMeasure::l2: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
      const double r = std::sqrt(s);
      if (r < kNormEps) return;
      for (std::size_t i = 0; i < n; ++i) {
        const double g = scale * (u[i] - v[i]) / r;
        du[i] += g;
        dv[i] -= g;
      }
      return;
    }
    case DeviationMeasure::cosine: {
      const double nu = norm2(u), nv = norm2(v);
      if (nu < kNormEps || nv < kNormEps) return;
      const double uv = dot(u, v);
      const double inv = 1.0 / (nu * nv);
      for (std::size_t i = 0; i < n; ++i) {
        du[i] -= scale * (v[i] * inv - uv * u[i] * inv / (nu * nu));
        dv[i] -= scale * (u[i] * inv - uv * v[i] * inv / (nv * nv));
      }
      return;
    }
    case DeviationMeasure::kl: {
      const Vector p = softmax_vector(u);
      const Vector q = softmax_vector(v);
      double mean_diff = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean_diff += p[i] * (u[i] - v[i]);
      for (std::size_t i = 0; i < n; ++i) {
        du[i] += scale * p[i] * ((u[i] - v[i]) - mean_diff);
        dv[i] += scale * (q[i] - p[i]);
      }
      return;
    }
  }
}

// Pre-sigmoid statistic: mean (or sum) of adjacent-frame deviations.
inline double adjacent_deviation(const Matrix& f, DeviationMeasure m, DeviationReduction red = DeviationReduction::mean) {
  if (f.rows() < 2) fail(ErrorKind::shape, "temporal deviation: sequence too short (need T >= 2)");
  double s = 0.0;
  for (std::size_t t = 0; t + 1 < f.rows(); ++t) s += deviation_measure(f.row(t), f.row(t + 1), m);
  return red == DeviationReduction::mean ? s / static_cast<double>(f.rows() - 1) : s;
}

inline double temporal_deviation(const Matrix& f, DeviationMeasure m, DeviationReduction red = DeviationReduction::mean) {
  return sigmoid(adjacent_deviation(f, m, red));
}

// Accumulates d_dev * d(temporal_deviation)/d f into d_f.
inline void temporal_deviation_backward(const Matrix& f, DeviationMeasure m, DeviationReduction red, double d_dev,
                                        Matrix& d_f) {
  const double x = adjacent_deviation(f, m, red);
  double scale = d_dev * sigmoid_derivative(x);
  if (red == DeviationReduction::mean) scale /= static_cast<double>(f.rows() - 1);
  if (scale == 0.0) return;
  for (std::size_t t = 0; t + 1 < f.rows(); ++t)
    deviation_measure_backward(f.row(t), f.row(t + 1), m, scale, d_f.row(t), d_f.row(t + 1));
}

inline int deviation_indicator(ForgeryLabel label) { return label.any_forged() ? 1 : 0; }

inline double deviation_loss(double d, ForgeryLabel label) {
  if (!(d > 0.0 && d < 1.0)) fail(ErrorKind::domain, "deviation_loss: d must lie in (0,1)");
  const int psi = deviation_indicator(label);
  return -(psi * std::log(d) + (1 - psi) * std::log(1.0 - d));
}

inline double deviation_loss_derivative(double d, ForgeryLabel label) {
  const int psi = deviation_indicator(label);
  return -static_cast<double>(psi) / d + static_cast<double>(1 - psi) / (1.0 - d);
}

// ---------------------------------------------------------------------------
// Total loss

struct LossBreakdown {
  double multimodal = 0.0;  // L_m
  double visual = 0.0;      // L_v
  double audio = 0.0;       // L_a
  double deviation = 0.0;   // L_dp (mean over objectives)
  double total = 0.0;
};

inline Matrix objective_features(const ForwardResult& r, DeviationObjective o) {
  switch (o) {
    case DeviationObjective::audio: return r.audio_features();
    case DeviationObjective::visual: return r.visual_features();
    case DeviationObjective::multimodal: return r.multimodal_features;
  }
  return {};
}

inline LossBreakdown total_loss(ForgeryLabel label, const ForwardResult& r, const LossWeights& w,
                                const DeviationConfig& dev) {
  LossBreakdown b;
  const BinaryLabels y = derive_binary_labels(label);
  b.multimodal = cross_entropy(one_hot(4, static_cast<std::size_t>(label.class_id)), r.pred.multimodal);
  b.visual = bce(y.visual, r.pred.visual[1]);
  b.audio = bce(y.audio, r.pred.audio[1]);
  if (w.phi != 0.0 && !dev.objectives.empty()) {
    double s = 0.0;
    for (auto o : dev.objectives)
      s += deviation_loss(temporal_deviation(objective_features(r, o), dev.measure, dev.reduction), label);
    b.deviation = s / static_cast<double>(dev.objectives.size());
  }
  b.total = w.lambda_m * b.multimodal + w.lambda_v * b.visual + w.lambda_a * b.audio + w.phi * b.deviation;
  return b;
}

inline LossBreakdown total_loss(const VideoSample& s, const ForwardResult& r, const LossWeights& w,
                                const DeviationConfig& dev) {
  return total_loss(s.label, r, w, dev);
}

}  // namespace wmmt
