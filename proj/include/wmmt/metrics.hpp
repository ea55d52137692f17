#pragma once

// Temporal localization metrics: AP at an IoU threshold (all-point
// interpolation over a pooled ranking), the mAP grid, AR@k, and an
// enumeration-based oracle used for differential testing.

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wmmt/data.hpp"
#include "wmmt/json_util.hpp"
#include "wmmt/localize.hpp"

namespace wmmt {

struct EvalConfig {
  std::vector<double> map_iou_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  std::vector<std::size_t> ar_proposal_counts = {20, 10, 5, 2};
  std::vector<double> ar_iou_grid = {0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95};

  void validate() const {
    auto grid = [](const std::vector<double>& g, const char* name) {
      if (g.empty()) fail(ErrorKind::config, std::string("config field 'eval.") + name + "' must be nonempty");
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(g[i] > 0 && g[i] <= 1))
          fail(ErrorKind::config, std::string("config field 'eval.") + name + "' values must be in (0,1]");
        if (i && !(g[i] > g[i - 1]))
          fail(ErrorKind::config, std::string("config field 'eval.") + name + "' must be strictly increasing");
      }
    };
    grid(map_iou_grid, "map_iou_grid");
    grid(ar_iou_grid, "ar_iou_grid");
    if (ar_proposal_counts.empty()) fail(ErrorKind::config, "config field 'eval.ar_proposal_counts' must be nonempty");
    for (auto k : ar_proposal_counts)
      if (k < 1) fail(ErrorKind::config, "config field 'eval.ar_proposal_counts' values must be >= 1");
  }
};

inline json to_json(const EvalConfig& c) {
  return json{{"map_iou_grid", c.map_iou_grid},
              {"ar_proposal_counts", c.ar_proposal_counts},
              {"ar_iou_grid", c.ar_iou_grid}};
}

inline EvalConfig eval_config_from_json(const json& j, const std::string& path, EvalConfig c = {}) {
  ObjectReader r(j, path);
  r.get("map_iou_grid", c.map_iou_grid).get("ar_proposal_counts", c.ar_proposal_counts).get("ar_iou_grid", c.ar_iou_grid);
  r.finish();
  c.validate();
  return c;
}

// One video's ground truth and proposals.
struct EvalVideo {
  std::string id;
  std::vector<SegmentAnnotation> gts;
  std::vector<SegmentProposal> proposals;
};

// Joins predictions to the manifest by id. Videos without a prediction
// contribute no proposals; predictions for unknown ids are an error.
inline std::vector<EvalVideo> join_predictions(const Manifest& m, const std::vector<PredictionRecord>& preds) {
  std::map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : preds) by_id[p.id] = &p;
  std::vector<EvalVideo> out;
  std::size_t found = 0;
  for (const auto& e : m.entries) {
    EvalVideo v{e.id, e.segments, {}};
    if (auto it = by_id.find(e.id); it != by_id.end()) {
      v.proposals = it->second->proposals;
      ++found;
    }
    out.push_back(std::move(v));
  }
  if (found != by_id.size()) {
    for (const auto& [id, p] : by_id)
      if (std::none_of(m.entries.begin(), m.entries.end(), [&](const ManifestEntry& e) { return e.id == id; }))
        fail(ErrorKind::format, "prediction for id '" + id + "' which is not in the manifest");
  }
  return out;
}

namespace detail {

struct RankedProposal {
  std::size_t video;
  SegmentProposal p;
};

// Pooled ranking: descending score, then earlier video id, then earlier
// start, then longer duration.
inline std::vector<RankedProposal> pooled_ranking(const std::vector<EvalVideo>& videos) {
  std::vector<RankedProposal> all;
  for (std::size_t v = 0; v < videos.size(); ++v)
    for (const auto& p : videos[v].proposals) all.push_back({v, p});
  std::stable_sort(all.begin(), all.end(), [&](const RankedProposal& a, const RankedProposal& b) {
    if (a.p.score != b.p.score) return a.p.score > b.p.score;
    if (videos[a.video].id != videos[b.video].id) return videos[a.video].id < videos[b.video].id;
    if (a.p.start_s != b.p.start_s) return a.p.start_s < b.p.start_s;
    return (a.p.end_s - a.p.start_s) > (b.p.end_s - b.p.start_s);
  });
  return all;
}

// Best unmatched gt with IoU >= thr (ties toward the lower index), or -1.
inline int greedy_pick(const std::vector<SegmentAnnotation>& gts, const std::vector<bool>& used,
                       const SegmentProposal& p, double thr) {
  int best = -1;
  double best_iou = -1.0;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (used[g]) continue;
    const double iou = temporal_iou(p, gts[g]);
    if (iou >= thr && iou > best_iou) {
      best = static_cast<int>(g);
      best_iou = iou;
    }
  }
  return best;
}

inline std::size_t total_gts(const std::vector<EvalVideo>& videos) {
  std::size_t n = 0;
  for (const auto& v : videos) n += v.gts.size();
  return n;
}

inline std::string grid_key(double x) {
  std::ostringstream ss;
  ss << x;
  return ss.str();
}

}  // namespace detail

inline double average_precision(const std::vector<EvalVideo>& videos, double iou_threshold) {
  const auto ranked = detail::pooled_ranking(videos);
  const std::size_t g_total = detail::total_gts(videos);
  if (g_total == 0) return ranked.empty() ? 1.0 : 0.0;
  std::vector<std::vector<bool>> used(videos.size());
  for (std::size_t v = 0; v < videos.size(); ++v) used[v].assign(videos[v].gts.size(), false);
  const std::size_t n = ranked.size();
  std::vector<bool> tp(n, false);
  std::vector<double> precision(n);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& r = ranked[k];
    const int g = detail::greedy_pick(videos[r.video].gts, used[r.video], r.p, iou_threshold);
    if (g >= 0) {
      used[r.video][static_cast<std::size_t>(g)] = true;
      tp[k] = true;
      ++hits;
    }
    precision[k] = static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  // Precision envelope.
  for (std::size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0, prev_recall = 0.0;
  hits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!tp[k]) continue;
    ++hits;
    const double recall = static_cast<double>(hits) / static_cast<double>(g_total);
    ap += (recall - prev_recall) * precision[k];
    prev_recall = recall;
  }
  return ap;
}

// Recall of all ground truths using each video's top-k proposals.
inline double recall_at(const std::vector<EvalVideo>& videos, std::size_t k, double iou_threshold) {
  const std::size_t g_total = detail::total_gts(videos);
  if (g_total == 0) return 0.0;
  std::size_t matched = 0;
  for (const auto& v : videos) {
    auto props = v.proposals;
    sort_proposals(props);
    if (props.size() > k) props.resize(k);
    std::vector<bool> used(v.gts.size(), false);
    for (const auto& p : props) {
      const int g = detail::greedy_pick(v.gts, used, p, iou_threshold);
      if (g >= 0) {
        used[static_cast<std::size_t>(g)] = true;
        ++matched;
      }
    }
  }
  return static_cast<double>(matched) / static_cast<double>(g_total);
}

// AR@k: recall averaged over the AR IoU grid. Zero when there is no
// ground truth.
inline double average_recall(const std::vector<EvalVideo>& videos, std::size_t k, const EvalConfig& cfg) {
  double s = 0.0;
  for (double thr : cfg.ar_iou_grid) s += recall_at(videos, k, thr);
  return s / static_cast<double>(cfg.ar_iou_grid.size());
}

struct MetricsReport {
  std::vector<std::pair<double, double>> map;      // (IoU, AP)
  double map_avg = 0.0;
  std::vector<std::pair<std::size_t, double>> ar;  // (k, AR@k)
  double ar_avg = 0.0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline std::vector<std::pair<double, double>> map_grid(const std::vector<EvalVideo>& videos, const EvalConfig& cfg) {
  std::vector<std::pair<double, double>> out;
  if (videos.empty()) return out;
  for (double thr : cfg.map_iou_grid) out.emplace_back(thr, average_precision(videos, thr));
  return out;
}

template <typename T>
double mean_of_second(const std::vector<std::pair<T, double>>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [k, v] : xs) s += v;
  return s / static_cast<double>(xs.size());
}

inline MetricsReport evaluate(const std::vector<EvalVideo>& videos, const EvalConfig& cfg) {
  MetricsReport r;
  r.map = map_grid(videos, cfg);
  r.map_avg = mean_of_second(r.map);
  if (!videos.empty())
    for (auto k : cfg.ar_proposal_counts) r.ar.emplace_back(k, average_recall(videos, k, cfg));
  r.ar_avg = mean_of_second(r.ar);
  return r;
}

inline json to_json(const MetricsReport& r) {
  json m = json::object();
  for (const auto& [thr, v] : r.map) m[detail::grid_key(thr)] = v;
  m["avg"] = r.map_avg;
  json a = json::object();
  for (const auto& [k, v] : r.ar) a[std::to_string(k)] = v;
  a["avg"] = r.ar_avg;
  return json{{"map", std::move(m)}, {"ar", std::move(a)}};
}

// ---------------------------------------------------------------------------
// Oracle

inline constexpr std::size_t kOracleMaxProposals = 32;

struct OracleReport {
  MetricsReport report;  // greedy matching, recomputed by enumeration
  // AR@k under maximum bipartite matching, same order as report.ar.
  std::vector<std::pair<std::size_t, double>> ar_optimal;
  // Number of (k, IoU) cells where optimal matching recalls more than greedy.
  std::size_t divergent_cells = 0;
};

namespace detail {

// Kuhn's augmenting-path maximum matching on a proposal x gt adjacency.
inline std::size_t max_matching(const std::vector<std::vector<bool>>& adj, std::size_t gts) {
  std::vector<int> owner(gts, -1);
  std::size_t size = 0;
  for (std::size_t p = 0; p < adj.size(); ++p) {
    std::vector<bool> seen(gts, false);
    std::function<bool(std::size_t)> augment = [&](std::size_t u) {
      for (std::size_t g = 0; g < gts; ++g) {
        if (!adj[u][g] || seen[g]) continue;
        seen[g] = true;
        if (owner[g] < 0 || augment(static_cast<std::size_t>(owner[g]))) {
          owner[g] = static_cast<int>(u);
          return true;
        }
      }
      return false;
    };
    if (augment(p)) ++size;
  }
  return size;
}

// Greedy matching replayed from a precomputed IoU table.
inline std::vector<bool> replay_greedy(const std::vector<std::vector<double>>& iou, std::size_t gts, double thr) {
  std::vector<bool> taken(gts, false), tp(iou.size(), false);
  for (std::size_t p = 0; p < iou.size(); ++p) {
    int best = -1;
    for (std::size_t g = 0; g < gts; ++g)
      if (!taken[g] && iou[p][g] >= thr && (best < 0 || iou[p][g] > iou[p][static_cast<std::size_t>(best)]))
        best = static_cast<int>(g);
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = true;
      tp[p] = true;
    }
  }
  return tp;
}

inline double oracle_ap(const std::vector<EvalVideo>& videos, double thr) {
  // Ranking by exhaustive pairwise comparison count (rank = number of
  // proposals that sort strictly before).
  struct Item {
    std::size_t video;
    std::size_t index;
    SegmentProposal p;
  };
  std::vector<Item> items;
  for (std::size_t v = 0; v < videos.size(); ++v)
    for (std::size_t i = 0; i < videos[v].proposals.size(); ++i) items.push_back({v, i, videos[v].proposals[i]});
  auto before = [&](const Item& a, const Item& b) {
    if (a.p.score != b.p.score) return a.p.score > b.p.score;
    if (videos[a.video].id != videos[b.video].id) return videos[a.video].id < videos[b.video].id;
    if (a.p.start_s != b.p.start_s) return a.p.start_s < b.p.start_s;
    if ((a.p.end_s - a.p.start_s) != (b.p.end_s - b.p.start_s)) return (a.p.end_s - a.p.start_s) > (b.p.end_s - b.p.start_s);
    if (a.video != b.video) return a.video < b.video;
    return a.index < b.index;
  };
  const std::size_t n = items.size();
  std::vector<Item> ranked(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && before(items[j], items[i])) ++rank;
    ranked[rank] = items[i];
  }
  std::size_t g_total = 0;
  for (const auto& v : videos) g_total += v.gts.size();
  if (g_total == 0) return n == 0 ? 1.0 : 0.0;

  // Per-video greedy replay over that video's proposals in global rank order.
  std::vector<bool> tp(n, false);
  for (std::size_t v = 0; v < videos.size(); ++v) {
    std::vector<std::size_t> pos;
    std::vector<std::vector<double>> iou;
    for (std::size_t k = 0; k < n; ++k) {
      if (ranked[k].video != v) continue;
      pos.push_back(k);
      std::vector<double> row;
      for (const auto& g : videos[v].gts) row.push_back(temporal_iou(ranked[k].p, g));
      iou.push_back(std::move(row));
    }
    const auto hits = replay_greedy(iou, videos[v].gts.size(), thr);
    for (std::size_t i = 0; i < pos.size(); ++i) tp[pos[i]] = hits[i];
  }

  // The PR point set, then AP as sum of recall steps times the best
  // precision at any point with recall at least as large.
  std::vector<double> prec(n), rec(n);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (tp[k]) ++hits;
    prec[k] = static_cast<double>(hits) / static_cast<double>(k + 1);
    rec[k] = static_cast<double>(hits) / static_cast<double>(g_total);
  }
  double ap = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!tp[k]) continue;
    double env = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (rec[j] >= rec[k]) env = std::max(env, prec[j]);
    ap += (rec[k] - prev) * env;
    prev = rec[k];
  }
  return ap;
}

}  // namespace detail

inline OracleReport oracle_eval(const std::vector<EvalVideo>& videos, const EvalConfig& cfg) {
  for (const auto& v : videos)
    if (v.proposals.size() > kOracleMaxProposals)
      fail(ErrorKind::oracle_scope, "oracle supports at most " + std::to_string(kOracleMaxProposals) +
                                        " proposals per video; '" + v.id + "' has " + std::to_string(v.proposals.size()));
  OracleReport out;
  if (videos.empty()) return out;
  for (double thr : cfg.map_iou_grid) out.report.map.emplace_back(thr, detail::oracle_ap(videos, thr));
  out.report.map_avg = mean_of_second(out.report.map);

  std::size_t g_total = 0;
  for (const auto& v : videos) g_total += v.gts.size();
  for (auto k : cfg.ar_proposal_counts) {
    double greedy_sum = 0.0, optimal_sum = 0.0;
    for (double thr : cfg.ar_iou_grid) {
      std::size_t greedy = 0, optimal = 0;
      for (const auto& v : videos) {
        // Top-k by selection: repeatedly take the best remaining proposal.
        std::vector<SegmentProposal> rest = v.proposals, top;
        while (!rest.empty() && top.size() < k) {
          std::size_t best = 0;
          for (std::size_t i = 1; i < rest.size(); ++i)
            if (proposal_before(rest[i], rest[best])) best = i;
          top.push_back(rest[best]);
          rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(best));
        }
        std::vector<std::vector<double>> iou;
        std::vector<std::vector<bool>> adj;
        for (const auto& p : top) {
          std::vector<double> row;
          std::vector<bool> edges;
          for (const auto& g : v.gts) {
            row.push_back(temporal_iou(p, g));
            edges.push_back(row.back() >= thr);
          }
          iou.push_back(std::move(row));
          adj.push_back(std::move(edges));
        }
        const auto hits = detail::replay_greedy(iou, v.gts.size(), thr);
        greedy += static_cast<std::size_t>(std::count(hits.begin(), hits.end(), true));
        optimal += detail::max_matching(adj, v.gts.size());
      }
      if (optimal > greedy) ++out.divergent_cells;
      if (g_total) {
        greedy_sum += static_cast<double>(greedy) / static_cast<double>(g_total);
        optimal_sum += static_cast<double>(optimal) / static_cast<double>(g_total);
      }
    }
    out.report.ar.emplace_back(k, greedy_sum / static_cast<double>(cfg.ar_iou_grid.size()));
    out.ar_optimal.emplace_back(k, optimal_sum / static_cast<double>(cfg.ar_iou_grid.size()));
  }
  out.report.ar_avg = mean_of_second(out.report.ar);
  return out;
}

}  // namespace wmmt
