// wmmt: corpus synthesis, training, inference, evaluation and diagnostics.
//
// Exit codes: 0 ok, 2 config, 3 data/format/io, 4 numeric. Failures print
// one JSON line {"error": kind, "message": text} on stderr.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wmmt/wmmt.hpp"

using namespace wmmt;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;
  std::vector<std::string> sets;
};

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return 2;
    case ErrorKind::numeric: return 4;
    default: return 3;
  }
}

void report_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

RunConfig build_config(const Globals& g) {
  json doc = g.config.empty() ? json::object() : load_config_document(g.config);
  if (g.seed) doc["seed"] = *g.seed;
  if (g.threads) doc["threads"] = *g.threads;
  for (const auto& s : g.sets) apply_override(doc, s);
  return run_config_from_json(doc);
}

std::string pick(const std::string& flag, const std::string& fallback, const char* what) {
  if (!flag.empty()) return flag;
  if (!fallback.empty()) return fallback;
  fail(ErrorKind::config, std::string("missing ") + what);
}

void write_json(const json& j, const std::string& path) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty()) std::cout << text;
  else write_file_atomic(path, text);
}

std::vector<VideoSample> load_manifest_samples(const std::string& path) {
  const Manifest m = load_manifest(path);
  if (m.empty()) fail(ErrorKind::empty_input, "manifest '" + path + "' has no entries");
  return load_samples(m);
}

int cmd_synth(const RunConfig& cfg, const Globals& g) {
  const std::string dir = pick(g.out, cfg.paths.corpus_dir.empty() ? cfg.paths.out_dir : cfg.paths.corpus_dir,
                               "output directory (--out or paths.corpus_dir)");
  generate_corpus(cfg.synth, dir, cfg.threads);
  std::cout << (fs::path(dir) / "manifest.jsonl").string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const Globals& g, const std::string& manifest_flag, const std::string& resume,
              const std::string& log_flag) {
  const std::string manifest = pick(manifest_flag, cfg.paths.manifest, "manifest (--manifest or paths.manifest)");
  const std::string out = pick(g.out, cfg.paths.checkpoint, "checkpoint path (--out or paths.checkpoint)");
  const std::string log_path = !log_flag.empty() ? log_flag : (!cfg.paths.metrics.empty() ? cfg.paths.metrics : out + ".log.jsonl");
  const auto samples = load_manifest_samples(manifest);

  Checkpoint start;
  std::string log_text;
  if (!resume.empty()) {
    start = load_checkpoint(resume);
    if (start.params.d_out() != cfg.train.d_out || start.params.routing != cfg.train.routing)
      fail(ErrorKind::config, "resume checkpoint was trained with d_out " + std::to_string(start.params.d_out()) +
                                  " and routing " + to_string(start.params.routing) + "; config disagrees");
    if (std::error_code ec; fs::exists(log_path, ec)) log_text = detail::read_file(log_path);
  } else {
    start = initial_checkpoint(samples.front().visual.dim(), samples.front().audio.dim(), cfg.train);
  }
  if (start.params.dim_visual() != samples.front().visual.dim() || start.params.dim_audio() != samples.front().audio.dim())
    fail(ErrorKind::shape, "checkpoint feature dims do not match the manifest features");

  const TrainResult res = train_loop(samples, cfg.train, std::move(start));
  for (const auto& e : res.log) log_text += to_json(e, cfg.seed).dump() + "\n";
  save_checkpoint(res.checkpoint, out);
  write_file_atomic(log_path, log_text);
  if (res.aborted) {
    report_error("numeric", res.abort_reason + "; saved epoch " + std::to_string(res.checkpoint.epoch));
    return 4;
  }
  std::cout << out << "\n";
  return 0;
}

int cmd_infer(const RunConfig& cfg, const Globals& g, const std::string& ck_flag, const std::string& manifest_flag) {
  const Checkpoint ck = load_checkpoint(pick(ck_flag, cfg.paths.checkpoint, "checkpoint (--checkpoint)"));
  const std::string out = pick(g.out, cfg.paths.predictions, "prediction path (--out or paths.predictions)");
  const auto samples = load_manifest_samples(pick(manifest_flag, cfg.paths.manifest, "manifest (--manifest)"));
  std::vector<PredictionRecord> preds(samples.size());
  parallel_for(samples.size(), cfg.threads,
               [&](std::size_t i) { preds[i] = to_record(samples[i], infer(samples[i], ck.params, cfg.proposals)); });
  save_predictions(preds, out);
  std::cout << out << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const Globals& g, const std::string& pred_flag, const std::string& manifest_flag,
             bool oracle) {
  const auto preds = load_predictions(pick(pred_flag, cfg.paths.predictions, "predictions (--predictions)"));
  const Manifest m = load_manifest(pick(manifest_flag, cfg.paths.manifest, "manifest (--manifest)"));
  const auto videos = join_predictions(m, preds);
  std::size_t correct = 0, matched = 0;
  for (const auto& p : preds)
    for (const auto& e : m.entries)
      if (e.id == p.id) {
        ++matched;
        correct += p.pred_label == e.label.class_id;
      }
  json out;
  if (oracle) {
    const OracleReport r = oracle_eval(videos, cfg.eval);
    out = to_json(r.report);
    json opt = json::object();
    for (const auto& [k, v] : r.ar_optimal) opt[std::to_string(k)] = v;
    out["ar_optimal_matching"] = std::move(opt);
    out["divergent_cells"] = r.divergent_cells;
  } else {
    out = to_json(evaluate(videos, cfg.eval));
  }
  out["accuracy"] = matched ? static_cast<double>(correct) / static_cast<double>(matched) : 0.0;
  write_json(out, g.out.empty() ? cfg.paths.metrics : g.out);
  return 0;
}

int cmd_stats(const RunConfig& cfg, const Globals& g, const std::string& manifest_flag, const std::string& measure) {
  const Manifest m = load_manifest(pick(manifest_flag, cfg.paths.manifest, "manifest (--manifest)"));
  DeviationMeasure meas = cfg.deviation().measure;
  if (!measure.empty()) meas = parse_measure(measure);
  write_json(to_json(corpus_deviation_report(m, meas)), g.out);
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, const Globals& g) {
  GradcheckConfig gc;
  gc.weights = cfg.train.weights;
  gc.deviation = cfg.deviation();
  gc.routing = cfg.train.routing;
  const GradcheckReport rep = gradcheck(gc, cfg.seed);
  json out = to_json(rep);
  out["seed"] = cfg.seed;
  write_json(out, g.out);
  return rep.pass ? 0 : 4;
}

int cmd_export(const RunConfig& cfg, const Globals& g, const std::string& ck_flag, const std::string& manifest_flag) {
  const Checkpoint ck = load_checkpoint(pick(ck_flag, cfg.paths.checkpoint, "checkpoint (--checkpoint)"));
  const fs::path dir = pick(g.out, cfg.paths.out_dir, "output directory (--out or paths.out_dir)");
  const auto samples = load_manifest_samples(pick(manifest_flag, cfg.paths.manifest, "manifest (--manifest)"));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string());
  parallel_for(samples.size(), cfg.threads, [&](std::size_t i) {
    const auto& s = samples[i];
    const EnhancedFeatures f = enhance_all(s.visual, s.audio, ck.params.enhance, ck.params.routing);
    save_feature_file(f.visual, dir / (s.id + "_visual.ftr"));
    save_feature_file(f.audio, dir / (s.id + "_audio.ftr"));
    save_feature_file(f.multimodal, dir / (s.id + "_multimodal.ftr"));
  });
  std::cout << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised multimodal temporal forgery localization"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "run config JSON");
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output path");
  app.add_option("--set", g.sets, "override a config field, e.g. train.epochs=5");

  std::string manifest, checkpoint, resume, log_path, predictions, measure;
  bool oracle = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--manifest", manifest);
  train->add_option("--resume", resume, "continue from this checkpoint");
  train->add_option("--log", log_path, "per-epoch metrics log (JSON lines)");
  auto* infer_cmd = app.add_subcommand("infer", "predict labels and segments");
  infer_cmd->add_option("--checkpoint", checkpoint);
  infer_cmd->add_option("--manifest", manifest);
  auto* eval = app.add_subcommand("eval", "score predictions against a manifest");
  eval->add_option("--predictions", predictions);
  eval->add_option("--manifest", manifest);
  eval->add_flag("--oracle", oracle, "use the enumeration oracle");
  auto* stats = app.add_subcommand("stats", "temporal deviation report");
  stats->add_option("--manifest", manifest);
  stats->add_option("--measure", measure);
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  auto* export_cmd = app.add_subcommand("export-embeddings", "write enhanced features per video");
  export_cmd->add_option("--checkpoint", checkpoint);
  export_cmd->add_option("--manifest", manifest);
  for (auto* sub : app.get_subcommands([](CLI::App*) { return true; })) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("config", e.what());
    return 2;
  }

  try {
    const RunConfig cfg = build_config(g);
    if (synth->parsed()) return cmd_synth(cfg, g);
    if (train->parsed()) return cmd_train(cfg, g, manifest, resume, log_path);
    if (infer_cmd->parsed()) return cmd_infer(cfg, g, checkpoint, manifest);
    if (eval->parsed()) return cmd_eval(cfg, g, predictions, manifest, oracle);
    if (stats->parsed()) return cmd_stats(cfg, g, manifest, measure);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(cfg, g);
    if (export_cmd->parsed()) return cmd_export(cfg, g, checkpoint, manifest);
  } catch (const Error& e) {
    report_error(to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    report_error("io", e.what());
    return 3;
  }
  return 2;
}
