#pragma once

// Forgery activation sequences and their conversion to scored segments.

#include <algorithm>
#include <array>
#include <map>
#include <utility>
#include <vector>

#include "wmmt/data.hpp"
#include "wmmt/error.hpp"
#include "wmmt/matrix.hpp"

namespace wmmt {

enum class HeadKind { visual, audio, multimodal };

inline std::size_t class_count(HeadKind k) noexcept { return k == HeadKind::multimodal ? 4 : 2; }

inline const char* to_string(HeadKind k) {
  switch (k) {
    case HeadKind::visual: return "visual";
    case HeadKind::audio: return "audio";
    case HeadKind::multimodal: return "multimodal";
  }
  return "?";
}

// Per-frame class logits from one localization head.
struct ForgeryActivationSequence {
  Matrix logits;  // T x C
  HeadKind head = HeadKind::visual;

  ForgeryActivationSequence() = default;
  ForgeryActivationSequence(Matrix l, HeadKind k) : logits(std::move(l)), head(k) {
    if (logits.rows() < 1) fail(ErrorKind::shape, "FAS needs at least one frame");
    if (logits.cols() != class_count(head))
      fail(ErrorKind::shape, std::string("FAS for ") + to_string(head) + " head needs " +
                                 std::to_string(class_count(head)) + " classes, got " + std::to_string(logits.cols()));
  }
  std::size_t frames() const noexcept { return logits.rows(); }
};

// Per-frame probability that the frame is forged.
inline Vector forged_curve(const ForgeryActivationSequence& fas) {
  Vector q(fas.frames());
  for (std::size_t t = 0; t < fas.frames(); ++t) {
    const Vector p = softmax_vector(fas.logits.row(t));
    q[t] = fas.head == HeadKind::multimodal ? 1.0 - p[0] : p[1];
  }
  return q;
}

template <typename A, typename B>
double temporal_iou(const A& a, const B& b) {
  const double inter = std::min(a.end_s, b.end_s) - std::max(a.start_s, b.start_s);
  if (inter <= 0) return 0.0;
  const double uni = std::max(a.end_s, b.end_s) - std::min(a.start_s, b.start_s);
  return uni > 0 ? inter / uni : 0.0;
}

// Canonical proposal order: descending score, then earlier start, then
// longer duration.
inline bool proposal_before(const SegmentProposal& a, const SegmentProposal& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.start_s != b.start_s) return a.start_s < b.start_s;
  return (a.end_s - a.start_s) > (b.end_s - b.start_s);
}

inline void sort_proposals(std::vector<SegmentProposal>& props) {
  std::stable_sort(props.begin(), props.end(), proposal_before);
}

// Greedy NMS: keep the best remaining proposal, drop everything whose IoU
// with it exceeds the threshold. Output is in canonical order.
inline std::vector<SegmentProposal> nms(std::vector<SegmentProposal> props, double iou_threshold) {
  sort_proposals(props);
  std::vector<SegmentProposal> kept;
  std::vector<bool> dropped(props.size(), false);
  for (std::size_t i = 0; i < props.size(); ++i) {
    if (dropped[i]) continue;
    kept.push_back(props[i]);
    for (std::size_t j = i + 1; j < props.size(); ++j)
      if (!dropped[j] && temporal_iou(props[i], props[j]) > iou_threshold) dropped[j] = true;
  }
  return kept;
}

struct ProposalConfig {
  std::vector<double> thresholds = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double nms_iou = 0.5;
  std::size_t max_proposals = 100;
  // Tag each proposal with a forgery class (1..3); off by default so the
  // prediction file holds only start_s, end_s and score.
  bool tag_kind = false;
};

// Multi-threshold run extraction followed by NMS.
inline std::vector<SegmentProposal> fas_to_proposals(const ForgeryActivationSequence& fas, double fps,
                                                     const ProposalConfig& cfg = {}) {
  if (!(fps > 0)) fail(ErrorKind::domain, "fas_to_proposals needs fps > 0");
  const Vector q = forged_curve(fas);
  const std::size_t t_count = q.size();

  // Per-frame class probabilities for the auxiliary kind tag.
  Matrix probs(t_count, fas.logits.cols());
  for (std::size_t t = 0; t < t_count; ++t) {
    const Vector p = softmax_vector(fas.logits.row(t));
    std::copy(p.begin(), p.end(), probs.row(t).begin());
  }

  std::map<std::pair<std::size_t, std::size_t>, SegmentProposal> runs;
  for (double theta : cfg.thresholds) {
    std::size_t t = 0;
    while (t < t_count) {
      if (q[t] < theta) {
        ++t;
        continue;
      }
      const std::size_t first = t;
      double sum = 0.0;
      while (t < t_count && q[t] >= theta) sum += q[t++];
      const std::size_t last = t - 1;
      if (runs.count({first, last})) continue;
      SegmentProposal p;
      p.start_s = static_cast<double>(first) / fps;
      p.end_s = static_cast<double>(last + 1) / fps;
      p.score = std::clamp(sum / static_cast<double>(last - first + 1), 0.0, 1.0);
      if (!cfg.tag_kind) {
        p.kind = -1;
      } else if (fas.head == HeadKind::multimodal) {
        std::array<double, 4> mass{};
        for (std::size_t k = first; k <= last; ++k)
          for (std::size_t c = 1; c < 4; ++c) mass[c] += probs(k, c);
        int best = 1;
        for (int c = 2; c < 4; ++c)
          if (mass[c] > mass[best]) best = c;
        p.kind = best;
      } else {
        p.kind = fas.head == HeadKind::visual ? 2 : 3;
      }
      runs.emplace(std::make_pair(first, last), p);
    }
  }
  std::vector<SegmentProposal> cands;
  cands.reserve(runs.size());
  for (auto& [key, p] : runs) cands.push_back(p);
  auto out = nms(std::move(cands), cfg.nms_iou);
  if (out.size() > cfg.max_proposals) out.resize(cfg.max_proposals);
  return out;
}

}  // namespace wmmt
