#pragma once

// Run configuration: one JSON document with a section per stage. The
// master seed and thread count live at the top level and are copied into
// the stages that need them.

#include <string>
#include <vector>

#include "wmmt/json_util.hpp"
#include "wmmt/localize.hpp"
#include "wmmt/metrics.hpp"
#include "wmmt/synth.hpp"
#include "wmmt/train.hpp"

namespace wmmt {

struct PathsConfig {
  std::string corpus_dir;
  std::string manifest;
  std::string checkpoint;
  std::string predictions;
  std::string metrics;
  std::string out_dir;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  SynthConfig synth;
  TrainConfig train = TrainConfig::desk_scale();
  EvalConfig eval;
  ProposalConfig proposals;
  PathsConfig paths;

  const DeviationConfig& deviation() const { return train.deviation; }
};

inline json to_json(const ProposalConfig& p) {
  return json{{"thresholds", p.thresholds}, {"nms_iou", p.nms_iou}, {"max_proposals", p.max_proposals}, {"tag_kind", p.tag_kind}};
}

inline ProposalConfig proposal_config_from_json(const json& j, const std::string& path) {
  ProposalConfig p;
  ObjectReader r(j, path);
  r.get("thresholds", p.thresholds).get("nms_iou", p.nms_iou).get("max_proposals", p.max_proposals).get("tag_kind", p.tag_kind);
  r.finish();
  for (double t : p.thresholds)
    if (!(t > 0 && t <= 1)) r.invalid("thresholds", "values must be in (0,1]");
  if (p.thresholds.empty()) r.invalid("thresholds", "must be nonempty");
  if (!(p.nms_iou >= 0 && p.nms_iou <= 1)) r.invalid("nms_iou", "must be in [0,1]");
  if (p.max_proposals < 1) r.invalid("max_proposals", "must be >= 1");
  return p;
}

inline json to_json(const PathsConfig& p) {
  return json{{"corpus_dir", p.corpus_dir}, {"manifest", p.manifest},         {"checkpoint", p.checkpoint},
              {"predictions", p.predictions}, {"metrics", p.metrics}, {"out_dir", p.out_dir}};
}

inline json to_json(const RunConfig& c) {
  json train = to_json(c.train);
  train.erase("seed");
  train.erase("threads");
  train.erase("deviation");
  json synth = to_json(c.synth);
  synth.erase("seed");
  return json{{"seed", c.seed},          {"threads", c.threads},         {"synth", std::move(synth)},
              {"train", std::move(train)}, {"deviation", to_json(c.deviation())}, {"eval", to_json(c.eval)},
              {"proposals", to_json(c.proposals)}, {"paths", to_json(c.paths)}};
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "");
  r.get("seed", c.seed).get("threads", c.threads);
  if (c.threads < 1) r.invalid("threads", "must be >= 1");
  auto reject = [](const json& section, const std::string& name, const char* key, const char* where) {
    if (section.is_object() && section.contains(key))
      fail(ErrorKind::config, "config field '" + name + "." + key + "' is not allowed; set top-level '" + where + "'");
  };
  if (const json* s = r.child("synth")) {
    reject(*s, "synth", "seed", "seed");
    c.synth = synth_config_from_json(*s, "synth");
  }
  if (const json* t = r.child("train")) {
    reject(*t, "train", "seed", "seed");
    reject(*t, "train", "threads", "threads");
    reject(*t, "train", "deviation", "deviation");
    c.train = train_config_from_json(*t, "train");
  }
  if (const json* d = r.child("deviation")) c.train.deviation = deviation_config_from_json(*d, "deviation");
  if (const json* e = r.child("eval")) c.eval = eval_config_from_json(*e, "eval");
  if (const json* p = r.child("proposals")) c.proposals = proposal_config_from_json(*p, "proposals");
  if (const json* p = r.child("paths")) {
    ObjectReader pr(*p, "paths");
    pr.get("corpus_dir", c.paths.corpus_dir).get("manifest", c.paths.manifest).get("checkpoint", c.paths.checkpoint);
    pr.get("predictions", c.paths.predictions).get("metrics", c.paths.metrics).get("out_dir", c.paths.out_dir);
    pr.finish();
  }
  r.finish();
  c.synth.seed = c.seed;
  c.train.seed = c.seed;
  c.train.threads = c.threads;
  return c;
}

// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON
// when it parses, otherwise taken as a string.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    fail(ErrorKind::config, "override '" + assignment + "' must look like path.to.field=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  if (!doc.is_object()) doc = json::object();
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) fail(ErrorKind::config, "override path '" + path + "' has an empty component");
    if (dot == std::string::npos) {
      if (node->contains(key) && (*node)[key].is_structured() && !value.is_structured())
        fail(ErrorKind::config, "override '" + path + "' must target a scalar field");
      (*node)[key] = value;
      return;
    }
    json& next = (*node)[key];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) fail(ErrorKind::config, "override path '" + path + "' passes through a non-object");
    node = &next;
    start = dot + 1;
  }
}

inline json parse_config_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::config, origin + ": invalid JSON: " + e.what());
  }
}

inline json load_config_document(const fs::path& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  return parse_config_text(text, path.string());
}

}  // namespace wmmt
