#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "eatr/data.hpp"
#include "eatr/errors.hpp"
#include "eatr/metrics.hpp"
#include "eatr/model.hpp"
#include "eatr/pseudo_events.hpp"
#include "eatr/training.hpp"
#include "eatr/util.hpp"
#include "png_plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eatr;

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const DivergenceError*>(&e)) return 4;
  if (dynamic_cast<const MissingArtifactError*>(&e)) return 3;
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const FormatError*>(&e)) return 2;
  if (dynamic_cast<const ValidationError*>(&e)) return 2;
  return 1;
}

std::optional<uint64_t> env_seed() {
  const char* s = std::getenv("EATR_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno != 0 || end == s || *end != '\0')
    throw ConfigError("EATR_SEED must be a nonnegative integer");
  return uint64_t(v);
}

struct Timer {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
  double sec() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
  }
};

std::string file_sha1(const std::string& path) {
  return util::sha1_hex(util::read_file(path));
}

// Content hash over the loaded feature matrices (digest of per-sample
// digests), so the manifest identifies inputs regardless of file layout.
std::string features_sha1(const std::vector<data::GroundingSample>& samples) {
  std::string digests;
  for (const auto& s : samples) {
    digests += util::sha1_hex(data::encode_feature_matrix(s.video_features));
    digests +=
        util::sha1_hex(data::encode_feature_matrix(s.sentence_features));
  }
  return util::sha1_hex(digests);
}

void write_manifest(const std::string& path, json manifest, double wall_sec) {
  manifest["wall_clock_sec"] = wall_sec;
  util::atomic_write_file(path, manifest.dump(2) + "\n");
}

std::string resolve_dataset_path(const std::string& data_arg) {
  if (fs::is_directory(data_arg))
    return (fs::path(data_arg) / "dataset.jsonl").string();
  return data_arg;
}

std::vector<double> span_to_window(const geom::Span& sp, double duration) {
  const double lo = std::max(0.0, sp.c - sp.w / 2.0) * duration;
  const double hi = std::min(1.0, sp.c + sp.w / 2.0) * duration;
  return {lo, hi};
}

// ---- gen-data ----

struct GenFlags {
  data::GenConfig cfg;
  std::string out;
};

int cmd_gen_data(const GenFlags& f) {
  Timer timer;
  data::generate_synthetic(f.cfg, f.out);

  json m;
  m["command"] = "gen-data";
  json cfg;
  cfg["num_samples"] = f.cfg.num_samples;
  cfg["frames"] = f.cfg.l_v;
  cfg["tokens"] = f.cfg.l_s;
  cfg["d_in"] = f.cfg.d_in;
  cfg["min_events"] = f.cfg.min_events;
  cfg["max_events"] = f.cfg.max_events;
  cfg["noise_sigma"] = f.cfg.noise_sigma;
  m["config"] = cfg;
  m["seed"] = f.cfg.seed;
  m["inputs"] = json::object();
  const std::string ds_path = (fs::path(f.out) / "dataset.jsonl").string();
  m["outputs"] = json::array({ds_path, (fs::path(f.out) / "features").string()});
  write_manifest((fs::path(f.out) / "manifest.json").string(), m, timer.sec());
  std::cout << "wrote " << f.cfg.num_samples << " samples to " << ds_path
            << "\n";
  return 0;
}

// ---- shared config resolution for train ----

struct TrainFlags {
  std::string data, out, config_path, profile = "paper", resume;
  bool plot = false;
  int epochs = 0, batch_size = 0, d = 0, heads = 0, depth = 0, queries = 0,
      slot_iters = 0, workers = 0;
  double lr = 0, weight_decay = 0, dropout = 0, grad_clip_norm = 0,
         val_fraction = 0, lambda_sal = 0, lambda_event = 0, lambda_l1 = 0,
         lambda_iou = 0, lambda_c = 0, alpha = 0, background_weight = 0;
  uint64_t seed = 0;
  json overrides = json::object();  // only keys the user actually passed
};

train::TrainConfig resolve_train_config(const TrainFlags& f) {
  train::TrainConfig base;
  if (f.profile == "paper")
    base = train::paper_profile();
  else if (f.profile == "desk")
    base = train::desk_profile();
  else
    throw ConfigError("--profile must be 'paper' or 'desk'");
  if (auto s = env_seed()) base.seed = *s;

  json j = json::parse(train::config_to_json_text(base));
  if (!f.config_path.empty()) {
    json file;
    try {
      file = json::parse(util::read_file(f.config_path));
    } catch (const json::exception& e) {
      throw ConfigError("--config " + f.config_path + ": invalid JSON: " +
                        e.what());
    }
    if (!file.is_object())
      throw ConfigError("--config " + f.config_path +
                        ": expected a JSON object");
    for (const auto& [k, v] : file.items()) j[k] = v;
  }
  for (const auto& [k, v] : f.overrides.items()) j[k] = v;
  return train::config_from_json_text(j.dump());
}

int cmd_train(const TrainFlags& f) {
  Timer timer;
  train::TrainConfig cfg = resolve_train_config(f);
  const std::string ds_path = resolve_dataset_path(f.data);
  auto all = data::load_dataset(ds_path);
  std::vector<data::GroundingSample> tr_set, val_set;
  train::split_dataset(all, cfg.val_fraction, cfg.seed, &tr_set, &val_set);

  train::TrainResult res =
      train::train(cfg, tr_set, val_set, f.out, f.resume);

  json outputs = json::array({res.best_path, res.last_path,
                              (fs::path(f.out) / "loss.csv").string(),
                              (fs::path(f.out) / "history.csv").string()});
  if (f.plot) {
    plot::Series loss{"total", res.step_losses, 30, 80, 200};
    const std::string loss_png = (fs::path(f.out) / "loss.png").string();
    plot::line_plot_png(loss_png, {loss});
    plot::Series map_s{"mAP_avg", {}, 30, 150, 60};
    plot::Series r1_s{"R1@0.5", {}, 200, 60, 60};
    for (const auto& h : res.history) {
      map_s.y.push_back(h.val.map_avg);
      r1_s.y.push_back(h.val.r1_at_05);
    }
    const std::string met_png = (fs::path(f.out) / "metrics.png").string();
    plot::line_plot_png(met_png, {map_s, r1_s});
    outputs.push_back(loss_png);
    outputs.push_back(met_png);
  }

  json m;
  m["command"] = "train";
  m["config"] = json::parse(train::config_to_json_text(cfg));
  m["seed"] = cfg.seed;
  json inputs;
  inputs["dataset"] = file_sha1(ds_path);
  inputs["features"] = features_sha1(all);
  if (!f.resume.empty()) inputs["resume"] = file_sha1(f.resume);
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  write_manifest((fs::path(f.out) / "manifest.json").string(), m,
                 timer.sec());

  std::cout << "best epoch " << res.best_epoch << " of "
            << res.history.size() << ":\n"
            << metrics::report_json(res.best_report);
  return 0;
}

// ---- eval ----

struct EvalFlags {
  std::string ckpt, data, out = "eval_out";
  int workers = 0;
};

int cmd_eval(const EvalFlags& f) {
  Timer timer;
  train::Checkpoint ck = train::load_checkpoint(f.ckpt);
  model::Model<float> m = train::model_from_checkpoint(ck);
  train::TrainConfig cfg = train::config_from_json_text(ck.config_json);
  const int workers = f.workers > 0 ? f.workers : cfg.workers;

  const std::string ds_path = resolve_dataset_path(f.data);
  auto samples = data::load_dataset(ds_path);
  auto preds = train::predict(m, samples, workers);
  metrics::GroundTruth gts;
  std::vector<int64_t> qids;
  for (const auto& s : samples) {
    gts.push_back(s.gt_moments);
    qids.push_back(s.qid);
  }
  metrics::Report report = metrics::evaluate(preds, gts);

  fs::create_directories(f.out);
  const std::string metrics_path = (fs::path(f.out) / "metrics.json").string();
  const std::string csv_path = (fs::path(f.out) / "per_sample.csv").string();
  util::atomic_write_file(metrics_path, metrics::report_json(report));
  util::atomic_write_file(csv_path, metrics::top1_iou_csv(preds, gts, qids));

  json man;
  man["command"] = "eval";
  man["config"] = json::parse(ck.config_json);
  man["seed"] = cfg.seed;
  json inputs;
  inputs["checkpoint"] = file_sha1(f.ckpt);
  inputs["dataset"] = file_sha1(ds_path);
  inputs["features"] = features_sha1(samples);
  man["inputs"] = inputs;
  man["outputs"] = json::array({metrics_path, csv_path});
  write_manifest((fs::path(f.out) / "manifest.json").string(), man,
                 timer.sec());

  std::cout << metrics::report_json(report);
  return 0;
}

// ---- predict ----

struct PredictFlags {
  std::string ckpt, data, sample, out = "predictions.jsonl", dump_attention;
  int top_k = 0;
};

int cmd_predict(const PredictFlags& f) {
  Timer timer;
  if (f.data.empty() == f.sample.empty())
    throw ConfigError("predict: pass exactly one of --data or --sample");
  train::Checkpoint ck = train::load_checkpoint(f.ckpt);
  model::Model<float> m = train::model_from_checkpoint(ck);

  std::vector<data::GroundingSample> samples;
  std::string ds_path;
  if (!f.data.empty()) {
    ds_path = resolve_dataset_path(f.data);
    samples = data::load_dataset(ds_path);
  } else {
    samples.push_back(data::parse_sample_record(
        util::read_file(f.sample),
        fs::path(f.sample).parent_path().string()));
  }

  const bool want_attention = !f.dump_attention.empty();
  std::string pred_lines, attn_lines;
  for (const auto& s : samples) {
    tape::TapeF t;
    auto bp = m.bind(t);
    std::vector<char> vmask(size_t(s.video_features.rows), 1);
    std::vector<char> smask(size_t(s.sentence_features.rows), 1);
    auto fwd = m.forward(t, bp, s.video_features, vmask, s.sentence_features,
                         smask, nullptr, want_attention);
    const auto& spans = t.val(fwd.layer_spans.back());
    const auto& conf = t.val(fwd.layer_conf.back());
    std::vector<metrics::ScoredSpan> ranked;
    for (int q = 0; q < spans.rows; ++q)
      ranked.push_back({geom::Span{double(spans(q, 0)), double(spans(q, 1))},
                        double(conf(q, 0))});
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const metrics::ScoredSpan& a,
                        const metrics::ScoredSpan& b) {
                       return a.confidence > b.confidence;
                     });
    if (f.top_k > 0 && int(ranked.size()) > f.top_k)
      ranked.resize(size_t(f.top_k));

    json rec;
    rec["qid"] = s.qid;
    rec["vid"] = s.vid;
    rec["duration"] = s.duration;
    json sp = json::array();
    for (const auto& r : ranked) {
      auto w = span_to_window(r.span, s.duration);
      sp.push_back(json::array({w[0], w[1], r.confidence}));
    }
    rec["spans"] = sp;
    pred_lines += rec.dump() + "\n";

    if (want_attention) {
      json arec;
      arec["vid"] = s.vid;
      json layers = json::array();
      for (auto av : fwd.cross_attn) {
        const auto& a = t.val(av);
        json rows = json::array();
        for (int r = 0; r < a.rows; ++r) {
          json row = json::array();
          for (int c = 0; c < a.cols; ++c) row.push_back(double(a(r, c)));
          rows.push_back(row);
        }
        layers.push_back(rows);
      }
      arec["layers"] = layers;
      attn_lines += arec.dump() + "\n";
    }
  }

  util::atomic_write_file(f.out, pred_lines);
  json outputs = json::array({f.out});
  if (want_attention) {
    util::atomic_write_file(f.dump_attention, attn_lines);
    outputs.push_back(f.dump_attention);
  }

  json man;
  man["command"] = "predict";
  man["config"] = json::parse(ck.config_json);
  man["seed"] = train::config_from_json_text(ck.config_json).seed;
  json inputs;
  inputs["checkpoint"] = file_sha1(f.ckpt);
  if (!ds_path.empty())
    inputs["dataset"] = file_sha1(ds_path);
  else
    inputs["sample"] = file_sha1(f.sample);
  inputs["features"] = features_sha1(samples);
  man["inputs"] = inputs;
  man["outputs"] = outputs;
  write_manifest(f.out + ".manifest.json", man, timer.sec());

  std::cout << "wrote " << samples.size() << " prediction record"
            << (samples.size() == 1 ? "" : "s") << " to " << f.out << "\n";
  return 0;
}

// ---- pseudo-events ----

struct PseudoFlags {
  std::string features, data, out;
};

int cmd_pseudo_events(const PseudoFlags& f) {
  Timer timer;
  if (f.features.empty() == f.data.empty())
    throw ConfigError("pseudo-events: pass exactly one of --features or --data");

  std::string lines;
  json inputs;
  auto emit = [&](const std::string& vid, const Mat<float>& feats) {
    json rec;
    rec["vid"] = vid;
    json events = json::array();
    for (const auto& sp : pev::pseudo_events(feats)) {
      auto w = span_to_window(sp, 1.0);
      events.push_back(json::array({w[0], w[1]}));
    }
    rec["events"] = events;
    lines += rec.dump() + "\n";
  };

  if (!f.features.empty()) {
    emit(fs::path(f.features).stem().string(),
         data::read_feature_matrix(f.features));
    inputs["features"] = file_sha1(f.features);
  } else {
    const std::string ds_path = resolve_dataset_path(f.data);
    auto samples = data::load_dataset(ds_path);
    for (const auto& s : samples) emit(s.vid, s.video_features);
    inputs["dataset"] = file_sha1(ds_path);
    inputs["features"] = features_sha1(samples);
  }

  if (f.out.empty()) {
    std::cout << lines;
    return 0;
  }
  util::atomic_write_file(f.out, lines);
  json man;
  man["command"] = "pseudo-events";
  man["config"] = json::object();
  man["seed"] = env_seed().value_or(0);
  man["inputs"] = inputs;
  man["outputs"] = json::array({f.out});
  write_manifest(f.out + ".manifest.json", man, timer.sec());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-aware moment localization over video features"};
  app.require_subcommand(1);

  GenFlags gf;
  auto* gen = app.add_subcommand("gen-data",
                                 "generate a synthetic grounding benchmark");
  gen->add_option("--out", gf.out, "output directory")->required();
  gen->add_option("--num-samples", gf.cfg.num_samples, "dataset size");
  gen->add_option("--frames", gf.cfg.l_v, "frames per video");
  gen->add_option("--tokens", gf.cfg.l_s, "sentence tokens");
  gen->add_option("--d-in", gf.cfg.d_in, "raw feature width");
  gen->add_option("--min-events", gf.cfg.min_events, "fewest events");
  gen->add_option("--max-events", gf.cfg.max_events, "most events");
  gen->add_option("--noise-sigma", gf.cfg.noise_sigma, "feature noise");
  gen->add_option("--seed", gf.cfg.seed, "generation seed");

  TrainFlags tf;
  auto* tc = app.add_subcommand("train", "train a grounding model");
  tc->add_option("--data", tf.data, "dataset dir or .jsonl")->required();
  tc->add_option("--out", tf.out, "run directory")->required();
  tc->add_option("--config", tf.config_path, "flat JSON config file");
  tc->add_option("--profile", tf.profile, "paper|desk defaults");
  tc->add_option("--resume", tf.resume, "checkpoint to resume from");
  tc->add_flag("--plot", tf.plot, "emit loss.png and metrics.png");
  tc->add_option("--epochs", tf.epochs, "");
  tc->add_option("--batch-size", tf.batch_size, "");
  tc->add_option("--lr", tf.lr, "");
  tc->add_option("--weight-decay", tf.weight_decay, "");
  tc->add_option("--dropout", tf.dropout, "");
  tc->add_option("--grad-clip-norm", tf.grad_clip_norm, "");
  tc->add_option("--val-fraction", tf.val_fraction, "");
  tc->add_option("--workers", tf.workers, "");
  tc->add_option("--seed", tf.seed, "");
  tc->add_option("--d", tf.d, "model width");
  tc->add_option("--heads", tf.heads, "");
  tc->add_option("--depth", tf.depth, "encoder/decoder layers");
  tc->add_option("--queries", tf.queries, "moment queries");
  tc->add_option("--slot-iters", tf.slot_iters, "slot attention iterations");
  tc->add_option("--lambda-sal", tf.lambda_sal, "");
  tc->add_option("--lambda-event", tf.lambda_event, "");
  tc->add_option("--lambda-l1", tf.lambda_l1, "");
  tc->add_option("--lambda-iou", tf.lambda_iou, "");
  tc->add_option("--lambda-c", tf.lambda_c, "");
  tc->add_option("--alpha", tf.alpha, "saliency margin");
  tc->add_option("--background-weight", tf.background_weight, "");
  tc->add_flag("--no-aux-loss", "drop per-layer span supervision");
  tc->add_flag("--no-event-reasoning", "ablation: learnable free queries");
  tc->add_flag("--no-event-loss", "ablation: no pseudo-event supervision");
  tc->add_flag("--no-gf-layer", "ablation: skip gated fusion");

  EvalFlags ef;
  auto* ec = app.add_subcommand("eval", "evaluate a checkpoint");
  ec->add_option("--ckpt", ef.ckpt, "checkpoint path")->required();
  ec->add_option("--data", ef.data, "dataset dir or .jsonl")->required();
  ec->add_option("--out", ef.out, "output directory");
  ec->add_option("--workers", ef.workers, "");

  PredictFlags pf;
  auto* pc = app.add_subcommand("predict", "rank spans for samples");
  pc->add_option("--ckpt", pf.ckpt, "checkpoint path")->required();
  pc->add_option("--data", pf.data, "dataset dir or .jsonl");
  pc->add_option("--sample", pf.sample, "single-record JSON file");
  pc->add_option("--out", pf.out, "predictions JSONL path");
  pc->add_option("--top-k", pf.top_k, "keep k best spans (0 = all)");
  pc->add_option("--dump-attention", pf.dump_attention,
                 "decoder cross-attention JSONL path");

  PseudoFlags sf;
  auto* sc = app.add_subcommand("pseudo-events",
                                "detect event boundaries in features");
  sc->add_option("--features", sf.features, "single .eatf feature file");
  sc->add_option("--data", sf.data, "dataset dir or .jsonl");
  sc->add_option("--out", sf.out, "output JSONL (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      if (auto s = env_seed(); s && gen->count("--seed") == 0)
        gf.cfg.seed = *s;
      return cmd_gen_data(gf);
    }
    if (tc->parsed()) {
      auto& ov = tf.overrides;
      if (tc->count("--epochs")) ov["epochs"] = tf.epochs;
      if (tc->count("--batch-size")) ov["batch_size"] = tf.batch_size;
      if (tc->count("--lr")) ov["lr"] = tf.lr;
      if (tc->count("--weight-decay")) ov["weight_decay"] = tf.weight_decay;
      if (tc->count("--dropout")) ov["dropout"] = tf.dropout;
      if (tc->count("--grad-clip-norm"))
        ov["grad_clip_norm"] = tf.grad_clip_norm;
      if (tc->count("--val-fraction")) ov["val_fraction"] = tf.val_fraction;
      if (tc->count("--workers")) ov["workers"] = tf.workers;
      if (tc->count("--seed")) ov["seed"] = tf.seed;
      if (tc->count("--d")) ov["d"] = tf.d;
      if (tc->count("--heads")) ov["heads"] = tf.heads;
      if (tc->count("--depth")) ov["T"] = tf.depth;
      if (tc->count("--queries")) ov["N"] = tf.queries;
      if (tc->count("--slot-iters")) ov["K"] = tf.slot_iters;
      if (tc->count("--lambda-sal")) ov["lambda_sal"] = tf.lambda_sal;
      if (tc->count("--lambda-event")) ov["lambda_event"] = tf.lambda_event;
      if (tc->count("--lambda-l1")) ov["lambda_l1"] = tf.lambda_l1;
      if (tc->count("--lambda-iou")) ov["lambda_iou"] = tf.lambda_iou;
      if (tc->count("--lambda-c")) ov["lambda_c"] = tf.lambda_c;
      if (tc->count("--alpha")) ov["alpha"] = tf.alpha;
      if (tc->count("--background-weight"))
        ov["background_weight"] = tf.background_weight;
      if (tc->count("--no-aux-loss")) ov["aux_loss"] = false;
      if (tc->count("--no-event-reasoning")) ov["event_reasoning"] = false;
      if (tc->count("--no-event-loss")) ov["event_loss"] = false;
      if (tc->count("--no-gf-layer")) ov["gf_layer"] = false;
      return cmd_train(tf);
    }
    if (ec->parsed()) return cmd_eval(ef);
    if (pc->parsed()) return cmd_predict(pf);
    if (sc->parsed()) return cmd_pseudo_events(sf);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
