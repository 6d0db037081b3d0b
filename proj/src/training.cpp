#include "eatr/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "json.hpp"

#include "eatr/errors.hpp"
#include "eatr/pseudo_events.hpp"
#include "eatr/util.hpp"

namespace eatr::train {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  loss.validate();
  if (lr <= 0) throw ConfigError("train: lr must be positive");
  if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (grad_clip_norm < 0)
    throw ConfigError("train: grad_clip_norm must be >= 0");
  if (workers < 1) throw ConfigError("train: workers must be >= 1");
  if (val_fraction < 0 || val_fraction >= 1)
    throw ConfigError("train: val_fraction must be in [0, 1)");
  if (model.d <= 0 || model.heads <= 0 || model.T < 1 || model.N < 1 ||
      model.K < 1)
    throw ConfigError("train: model dimensions must be positive");
}

TrainConfig paper_profile() { return TrainConfig{}; }

TrainConfig desk_profile() {
  TrainConfig cfg;
  cfg.model.d = 64;
  cfg.epochs = 30;
  return cfg;
}

std::string config_to_json_text(const TrainConfig& cfg) {
  json j;
  j["d"] = cfg.model.d;
  j["heads"] = cfg.model.heads;
  j["T"] = cfg.model.T;
  j["N"] = cfg.model.N;
  j["K"] = cfg.model.K;
  j["d_in_video"] = cfg.model.d_in_video;
  j["d_in_sentence"] = cfg.model.d_in_sentence;
  j["dropout"] = cfg.model.dropout;
  j["aux_loss"] = cfg.model.aux_loss;
  j["event_reasoning"] = cfg.model.use_event_reasoning;
  j["gf_layer"] = cfg.model.use_gf_layer;
  j["tsm_include_pe"] = cfg.model.tsm_include_pe;
  j["event_loss"] = cfg.use_event_loss;
  j["lambda_sal"] = cfg.loss.lambda_sal;
  j["lambda_event"] = cfg.loss.lambda_event;
  j["alpha"] = cfg.loss.alpha;
  j["lambda_l1"] = cfg.loss.cost.lambda_l1;
  j["lambda_iou"] = cfg.loss.cost.lambda_iou;
  j["lambda_c"] = cfg.loss.cost.lambda_c;
  j["background_weight"] = cfg.loss.background_weight;
  j["lr"] = cfg.lr;
  j["weight_decay"] = cfg.weight_decay;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["grad_clip_norm"] = cfg.grad_clip_norm;
  j["seed"] = cfg.seed;
  j["workers"] = cfg.workers;
  j["val_fraction"] = cfg.val_fraction;
  return j.dump(2) + "\n";
}

TrainConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");

  TrainConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "d") cfg.model.d = value.get<int>();
      else if (key == "heads") cfg.model.heads = value.get<int>();
      else if (key == "T") cfg.model.T = value.get<int>();
      else if (key == "N") cfg.model.N = value.get<int>();
      else if (key == "K") cfg.model.K = value.get<int>();
      else if (key == "d_in_video") cfg.model.d_in_video = value.get<int>();
      else if (key == "d_in_sentence")
        cfg.model.d_in_sentence = value.get<int>();
      else if (key == "dropout") cfg.model.dropout = value.get<double>();
      else if (key == "aux_loss") cfg.model.aux_loss = value.get<bool>();
      else if (key == "event_reasoning")
        cfg.model.use_event_reasoning = value.get<bool>();
      else if (key == "gf_layer") cfg.model.use_gf_layer = value.get<bool>();
      else if (key == "tsm_include_pe")
        cfg.model.tsm_include_pe = value.get<bool>();
      else if (key == "event_loss") cfg.use_event_loss = value.get<bool>();
      else if (key == "lambda_sal") cfg.loss.lambda_sal = value.get<double>();
      else if (key == "lambda_event")
        cfg.loss.lambda_event = value.get<double>();
      else if (key == "alpha") cfg.loss.alpha = value.get<double>();
      else if (key == "lambda_l1")
        cfg.loss.cost.lambda_l1 = value.get<double>();
      else if (key == "lambda_iou")
        cfg.loss.cost.lambda_iou = value.get<double>();
      else if (key == "lambda_c") cfg.loss.cost.lambda_c = value.get<double>();
      else if (key == "background_weight")
        cfg.loss.background_weight = value.get<double>();
      else if (key == "lr") cfg.lr = value.get<double>();
      else if (key == "weight_decay") cfg.weight_decay = value.get<double>();
      else if (key == "batch_size") cfg.batch_size = value.get<int>();
      else if (key == "epochs") cfg.epochs = value.get<int>();
      else if (key == "grad_clip_norm")
        cfg.grad_clip_norm = value.get<double>();
      else if (key == "seed") cfg.seed = value.get<uint64_t>();
      else if (key == "workers") cfg.workers = value.get<int>();
      else if (key == "val_fraction") cfg.val_fraction = value.get<double>();
      else
        throw ConfigError("config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value type: ") + e.what());
  }
  return cfg;
}

void AdamW::init(const model::ParamSet<float>& params) {
  m.clear();
  v.clear();
  steps = 0;
  for (const auto& p : params.values) {
    m.emplace_back(p.rows, p.cols);
    v.emplace_back(p.rows, p.cols);
  }
}

void AdamW::step(model::ParamSet<float>& params,
                 const std::vector<Mat<float>>& grads) {
  if (m.size() != params.values.size() || grads.size() != m.size())
    throw ValidationError("optimizer state does not match the parameter set");
  ++steps;
  const double bc1 = 1.0 - std::pow(beta1, double(steps));
  const double bc2 = 1.0 - std::pow(beta2, double(steps));
  for (size_t i = 0; i < params.values.size(); ++i) {
    auto& p = params.values[i];
    const auto& g = grads[i];
    if (!p.same_shape(g))
      throw ValidationError("gradient shape mismatch at parameter " +
                            params.names[i]);
    for (size_t k = 0; k < p.v.size(); ++k) {
      const double gk = double(g.v[k]);
      const double mk = beta1 * double(m[i].v[k]) + (1.0 - beta1) * gk;
      const double vk = beta2 * double(v[i].v[k]) + (1.0 - beta2) * gk * gk;
      m[i].v[k] = float(mk);
      v[i].v[k] = float(vk);
      const double update = (mk / bc1) / (std::sqrt(vk / bc2) + eps) +
                            weight_decay * double(p.v[k]);
      p.v[k] = float(double(p.v[k]) - lr * update);
    }
  }
}

namespace {

void put_u32le(std::string& out, uint32_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 24) & 0xff));
}

uint32_t get_u32le(const std::string& s, size_t off) {
  return uint32_t(uint8_t(s[off])) | uint32_t(uint8_t(s[off + 1])) << 8 |
         uint32_t(uint8_t(s[off + 2])) << 16 |
         uint32_t(uint8_t(s[off + 3])) << 24;
}

constexpr char kCkptMagic[] = "EATRCKPT";
constexpr uint32_t kCkptVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  for (size_t i = 0; i < ck.params.values.size(); ++i)
    if (!ck.params.values[i].all_finite())
      throw ValidationError("checkpoint: non-finite parameter " +
                            ck.params.names[i]);

  json h;
  h["config"] = json::parse(ck.config_json);
  h["config_hash"] = ck.config_hash;
  h["epoch"] = ck.epoch;
  h["global_step"] = ck.global_step;
  h["best_metric"] = ck.best_metric;
  h["rng_state"] = ck.rng_state;
  h["adam_steps"] = ck.adam_steps;
  h["param_names"] = ck.params.names;
  h["has_adam"] = !ck.adam_m.empty();
  const std::string header = h.dump();

  std::string buf;
  buf.append(kCkptMagic, 8);
  put_u32le(buf, kCkptVersion);
  put_u32le(buf, uint32_t(header.size()));
  buf += header;
  for (const auto& p : ck.params.values)
    buf += data::encode_feature_matrix(p);
  if (!ck.adam_m.empty()) {
    if (ck.adam_m.size() != ck.params.values.size() ||
        ck.adam_v.size() != ck.params.values.size())
      throw ValidationError("checkpoint: optimizer moment count mismatch");
    for (const auto& p : ck.adam_m) buf += data::encode_feature_matrix(p);
    for (const auto& p : ck.adam_v) buf += data::encode_feature_matrix(p);
  }
  util::atomic_write_file(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = util::read_file(path);
  if (buf.size() < 16 || buf.compare(0, 8, kCkptMagic) != 0)
    throw FormatError(path + ": not a checkpoint file");
  const uint32_t version = get_u32le(buf, 8);
  if (version != kCkptVersion) {
    std::ostringstream msg;
    msg << path << ": incompatible checkpoint version " << version
        << ", expected " << kCkptVersion;
    throw ConfigError(msg.str());
  }
  const uint32_t hlen = get_u32le(buf, 12);
  if (buf.size() < 16 + size_t(hlen))
    throw FormatError(path + ": truncated checkpoint header");

  json h;
  try {
    h = json::parse(buf.substr(16, hlen));
  } catch (const json::exception& e) {
    throw FormatError(path + ": bad checkpoint header: " + e.what());
  }

  Checkpoint ck;
  try {
    ck.version = int(version);
    ck.config_json = h.at("config").dump(2) + "\n";
    ck.config_hash = h.at("config_hash").get<std::string>();
    ck.epoch = h.at("epoch").get<int>();
    ck.global_step = h.at("global_step").get<int64_t>();
    ck.best_metric = h.at("best_metric").get<double>();
    ck.rng_state = h.at("rng_state").get<std::vector<uint64_t>>();
    ck.adam_steps = h.at("adam_steps").get<int64_t>();
    const auto names = h.at("param_names").get<std::vector<std::string>>();
    const bool has_adam = h.at("has_adam").get<bool>();

    size_t off = 16 + hlen;
    for (const auto& name : names)
      ck.params.add(name, data::decode_feature_matrix(buf, off));
    if (has_adam) {
      for (size_t i = 0; i < names.size(); ++i)
        ck.adam_m.push_back(data::decode_feature_matrix(buf, off));
      for (size_t i = 0; i < names.size(); ++i)
        ck.adam_v.push_back(data::decode_feature_matrix(buf, off));
    }
    if (off != buf.size())
      throw FormatError("trailing bytes after checkpoint payload");
  } catch (const json::exception& e) {
    throw FormatError(path + ": bad checkpoint field: " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
  return ck;
}

model::Model<float> model_from_checkpoint(const Checkpoint& ck) {
  TrainConfig cfg = config_from_json_text(ck.config_json);
  cfg.model.validate();
  model::Model<float> m(cfg.model, cfg.seed);
  if (m.params().names != ck.params.names)
    throw ConfigError(
        "checkpoint parameters do not match the stored configuration");
  m.params() = ck.params;
  return m;
}

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg), model_(cfg.model, cfg.seed) {
  cfg_.validate();
  opt_.lr = cfg.lr;
  opt_.weight_decay = cfg.weight_decay;
  opt_.init(model_.params());
}

namespace {

struct SampleLossVars {
  std::vector<tape::Var> moments;
  tape::Var saliency;
  tape::Var event;
  tape::Var total;
};

// Shared loss assembly for training and eval paths.
SampleLossVars build_sample_loss(tape::TapeF& t, const model::Model<float>& m,
                                 const model::BoundParams& bp,
                                 const data::GroundingSample& s,
                                 const losses::LossWeights& w,
                                 bool use_event_loss, Rng* dropout_rng,
                                 Rng& sal_rng, losses::LossCounters* counters) {
  if (s.gt_moments.empty())
    throw ValidationError("sample '" + s.vid + "' has no ground-truth span");
  std::vector<char> vmask(size_t(s.video_features.rows), 1);
  std::vector<char> smask(size_t(s.sentence_features.rows), 1);
  auto fwd = m.forward(t, bp, s.video_features, vmask, s.sentence_features,
                       smask, dropout_rng, false);

  // catch blow-ups before span costs reach the matching solver
  auto finite = [&](tape::Var v) { return !v.valid() || t.val(v).all_finite(); };
  bool ok = finite(fwd.saliency);
  for (auto v : fwd.layer_spans) ok = ok && finite(v);
  for (auto v : fwd.layer_conf) ok = ok && finite(v);
  if (fwd.has_event_queries) ok = ok && finite(fwd.event_pos);
  if (!ok)
    throw DivergenceError("sample '" + s.vid +
                          "': non-finite forward outputs");

  SampleLossVars out;
  const int last = int(fwd.layer_spans.size()) - 1;
  const int first = m.config().aux_loss ? 0 : last;
  for (int l = first; l <= last; ++l)
    out.moments.push_back(losses::moment_loss_t(
        t, fwd.layer_spans[size_t(l)], fwd.layer_conf[size_t(l)],
        s.gt_moments, w.cost, w.background_weight));

  out.saliency = losses::saliency_loss_t(t, fwd.saliency, vmask,
                                         s.gt_moments[0], w.alpha, sal_rng,
                                         counters);
  if (use_event_loss && fwd.has_event_queries) {
    const auto& feats = m.config().tsm_include_pe ? t.val(fwd.h_v)
                                                  : t.val(fwd.h_v_nope);
    auto pseudo = pev::pseudo_events(feats);
    out.event = losses::event_loss_t(t, fwd.event_pos, pseudo, w.cost,
                                     counters);
  }
  out.total = losses::combine_losses_t(t, out.moments, out.saliency,
                                       out.event, w);
  return out;
}

StepLoss read_components(const tape::TapeF& t, const SampleLossVars& v) {
  StepLoss out;
  for (auto mv : v.moments) out.moment += double(t.val(mv)(0, 0));
  out.saliency = double(t.val(v.saliency)(0, 0));
  out.event = v.event.valid() ? double(t.val(v.event)(0, 0)) : 0.0;
  out.total = double(t.val(v.total)(0, 0));
  return out;
}

}  // namespace

StepLoss Trainer::step(const std::vector<const data::GroundingSample*>& batch,
                       uint64_t step_seed) {
  if (batch.empty()) throw ValidationError("train step: empty batch");
  const size_t n = batch.size();
  const auto& params = model_.params();

  struct ChunkAcc {
    std::vector<Mat<float>> grads;
    StepLoss sums;
    losses::LossCounters counters;
    bool used = false;
  };
  std::vector<ChunkAcc> acc(size_t(cfg_.workers));

  util::parallel_for(n, cfg_.workers, [&](size_t b, size_t e, int w) {
    ChunkAcc& a = acc[size_t(w)];
    a.used = true;
    for (const auto& p : params.values) a.grads.emplace_back(p.rows, p.cols);
    for (size_t i = b; i < e; ++i) {
      const auto& s = *batch[i];
      Rng rng(derive_seed(step_seed, i));
      tape::TapeF t;
      auto bp = model_.bind(t);
      auto lv = build_sample_loss(t, model_, bp, s, cfg_.loss,
                                  cfg_.use_event_loss, &rng, rng,
                                  &a.counters);
      StepLoss sl = read_components(t, lv);
      try {
        losses::overall_loss(sl.moment, sl.saliency, sl.event, cfg_.loss);
      } catch (const DivergenceError& e) {
        throw DivergenceError("sample '" + s.vid + "': " + e.what());
      }
      a.sums.moment += sl.moment;
      a.sums.saliency += sl.saliency;
      a.sums.event += sl.event;
      a.sums.total += sl.total;
      t.backward(lv.total);
      for (size_t p = 0; p < a.grads.size(); ++p) {
        const auto& g = t.grad(bp.vars[p]);
        for (size_t k = 0; k < g.v.size(); ++k) a.grads[p].v[k] += g.v[k];
      }
    }
  });

  std::vector<Mat<float>> grads;
  for (const auto& p : params.values) grads.emplace_back(p.rows, p.cols);
  StepLoss mean;
  for (const auto& a : acc) {
    if (!a.used) continue;
    for (size_t p = 0; p < grads.size(); ++p)
      for (size_t k = 0; k < grads[p].v.size(); ++k)
        grads[p].v[k] += a.grads[p].v[k];
    mean.moment += a.sums.moment;
    mean.saliency += a.sums.saliency;
    mean.event += a.sums.event;
    mean.total += a.sums.total;
    counters_.saliency_skipped += a.counters.saliency_skipped;
    counters_.empty_pseudo += a.counters.empty_pseudo;
  }
  const float inv = float(1.0 / double(n));
  for (auto& g : grads)
    for (auto& x : g.v) x *= inv;
  mean.moment /= double(n);
  mean.saliency /= double(n);
  mean.event /= double(n);
  mean.total /= double(n);

  if (cfg_.grad_clip_norm > 0) {
    double norm_sq = 0.0;
    for (const auto& g : grads)
      for (float x : g.v) norm_sq += double(x) * double(x);
    const double norm = std::sqrt(norm_sq);
    if (norm > cfg_.grad_clip_norm) {
      const float scale = float(cfg_.grad_clip_norm / norm);
      for (auto& g : grads)
        for (auto& x : g.v) x *= scale;
    }
  }
  opt_.step(model_.params(), grads);
  return mean;
}

StepLoss eval_sample_loss(const model::Model<float>& m,
                          const data::GroundingSample& sample,
                          const losses::LossWeights& w, bool use_event_loss,
                          uint64_t sal_seed) {
  tape::TapeF t;
  auto bp = m.bind(t);
  Rng sal_rng(sal_seed);
  auto lv = build_sample_loss(t, m, bp, sample, w, use_event_loss, nullptr,
                              sal_rng, nullptr);
  return read_components(t, lv);
}

metrics::PredictionSet predict(const model::Model<float>& m,
                               const std::vector<data::GroundingSample>& ds,
                               int workers) {
  metrics::PredictionSet preds;
  preds.resize(ds.size());
  util::parallel_for(ds.size(), workers, [&](size_t b, size_t e, int) {
    for (size_t i = b; i < e; ++i) {
      const auto& s = ds[i];
      tape::TapeF t;
      auto bp = m.bind(t);
      std::vector<char> vmask(size_t(s.video_features.rows), 1);
      std::vector<char> smask(size_t(s.sentence_features.rows), 1);
      auto fwd = m.forward(t, bp, s.video_features, vmask,
                           s.sentence_features, smask, nullptr, false);
      const auto& spans = t.val(fwd.layer_spans.back());
      const auto& conf = t.val(fwd.layer_conf.back());
      std::vector<metrics::ScoredSpan> list;
      for (int q = 0; q < spans.rows; ++q)
        list.push_back({geom::Span{double(spans(q, 0)), double(spans(q, 1))},
                        double(conf(q, 0))});
      std::stable_sort(list.begin(), list.end(),
                       [](const metrics::ScoredSpan& a,
                          const metrics::ScoredSpan& b) {
                         return a.confidence > b.confidence;
                       });
      preds[i] = std::move(list);
    }
  });
  return preds;
}

void split_dataset(const std::vector<data::GroundingSample>& all,
                   double val_fraction, uint64_t seed,
                   std::vector<data::GroundingSample>* train_out,
                   std::vector<data::GroundingSample>* val_out) {
  train_out->clear();
  val_out->clear();
  std::vector<size_t> order(all.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0xDA7A5E7ULL));
  rng.shuffle(order);
  size_t n_val = 0;
  if (all.size() >= 2 && val_fraction > 0) {
    n_val = size_t(std::llround(val_fraction * double(all.size())));
    n_val = std::max<size_t>(1, std::min(n_val, all.size() - 1));
  }
  for (size_t i = 0; i < order.size(); ++i) {
    if (i < all.size() - n_val)
      train_out->push_back(all[order[i]]);
    else
      val_out->push_back(all[order[i]]);
  }
}

TrainResult train(const TrainConfig& cfg0,
                  const std::vector<data::GroundingSample>& train_set,
                  const std::vector<data::GroundingSample>& val_set,
                  const std::string& out_dir,
                  const std::string& resume_path) {
  if (train_set.empty()) throw ValidationError("train: empty training set");
  TrainConfig cfg = cfg0;
  if (cfg.model.d_in_video == 0)
    cfg.model.d_in_video = train_set[0].video_features.cols;
  if (cfg.model.d_in_sentence == 0)
    cfg.model.d_in_sentence = train_set[0].sentence_features.cols;
  auto check_dims = [&](const data::GroundingSample& s) {
    if (s.video_features.cols != cfg.model.d_in_video ||
        s.sentence_features.cols != cfg.model.d_in_sentence)
      throw ValidationError("sample '" + s.vid +
                            "' feature width differs from the dataset");
  };
  for (const auto& s : train_set) check_dims(s);
  for (const auto& s : val_set) check_dims(s);
  cfg.validate();
  cfg.model.validate();
  fs::create_directories(out_dir);

  Trainer tr(cfg);
  const std::string cfg_json = config_to_json_text(cfg);
  const std::string cfg_hash = util::sha1_hex(cfg_json);

  int start_epoch = 0;
  int64_t gstep = 0;
  double best = -1.0;
  int best_epoch = -1;
  metrics::Report best_report;

  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    if (ck.config_hash != cfg_hash)
      std::cerr << "warning: resuming from a checkpoint trained with a "
                   "different configuration\n";
    if (ck.params.names != tr.net().params().names)
      throw ConfigError("resume: checkpoint parameters do not match config");
    tr.net().params() = ck.params;
    tr.optimizer().m = ck.adam_m;
    tr.optimizer().v = ck.adam_v;
    tr.optimizer().steps = ck.adam_steps;
    start_epoch = ck.epoch;
    gstep = ck.global_step;
    best = ck.best_metric;
  }

  TrainResult res;
  res.best_path = (fs::path(out_dir) / "best.ckpt").string();
  res.last_path = (fs::path(out_dir) / "last.ckpt").string();

  auto save_state = [&](const std::string& path, int epochs_done) {
    Checkpoint ck;
    ck.config_json = cfg_json;
    ck.config_hash = cfg_hash;
    ck.epoch = epochs_done;
    ck.global_step = gstep;
    ck.best_metric = best;
    ck.rng_state = Rng(cfg.seed).save_state();
    ck.params = tr.net().params();
    ck.adam_m = tr.optimizer().m;
    ck.adam_v = tr.optimizer().v;
    ck.adam_steps = tr.optimizer().steps;
    save_checkpoint(path, ck);
  };

  std::ostringstream loss_csv;
  loss_csv.precision(10);
  loss_csv << "step,moment,saliency,event,total\n";
  std::ostringstream hist_csv;
  hist_csv.precision(10);
  hist_csv << "epoch,train_loss,r1_05,r1_07,map_05,map_075,map_avg\n";
  auto flush_csvs = [&]() {
    util::atomic_write_file((fs::path(out_dir) / "loss.csv").string(),
                            loss_csv.str());
    util::atomic_write_file((fs::path(out_dir) / "history.csv").string(),
                            hist_csv.str());
  };

  metrics::GroundTruth val_gts;
  for (const auto& s : val_set) val_gts.push_back(s.gt_moments);

  try {
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
      std::vector<size_t> order(train_set.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng shuffle_rng(derive_seed(cfg.seed, 0xE70C0000ULL + uint64_t(epoch)));
      shuffle_rng.shuffle(order);

      double epoch_loss = 0.0;
      int epoch_steps = 0;
      for (size_t b0 = 0; b0 < order.size();
           b0 += size_t(cfg.batch_size)) {
        const size_t b1 =
            std::min(order.size(), b0 + size_t(cfg.batch_size));
        std::vector<const data::GroundingSample*> batch;
        for (size_t i = b0; i < b1; ++i)
          batch.push_back(&train_set[order[i]]);
        const uint64_t step_seed =
            derive_seed(cfg.seed ^ 0x57E9000000000000ULL, uint64_t(gstep));
        StepLoss sl = tr.step(batch, step_seed);
        loss_csv << gstep << ',' << sl.moment << ',' << sl.saliency << ','
                 << sl.event << ',' << sl.total << '\n';
        res.step_losses.push_back(sl.total);
        epoch_loss += sl.total;
        ++epoch_steps;
        ++gstep;
      }
      epoch_loss /= double(std::max(1, epoch_steps));

      EpochRecord rec;
      rec.epoch = epoch;
      rec.train_loss = epoch_loss;
      if (!val_set.empty()) {
        auto preds = predict(tr.net(), val_set, cfg.workers);
        rec.val = metrics::evaluate(preds, val_gts);
      }
      res.history.push_back(rec);
      hist_csv << epoch << ',' << rec.train_loss << ',' << rec.val.r1_at_05
               << ',' << rec.val.r1_at_07 << ',' << rec.val.map_at_05 << ','
               << rec.val.map_at_075 << ',' << rec.val.map_avg << '\n';

      if (rec.val.map_avg > best) {
        best = rec.val.map_avg;
        best_epoch = epoch;
        best_report = rec.val;
        save_state(res.best_path, epoch + 1);
      }
      save_state(res.last_path, epoch + 1);
      flush_csvs();
    }
  } catch (const DivergenceError& e) {
    json diag;
    diag["error"] = e.what();
    diag["global_step"] = gstep;
    diag["history_epochs"] = int(res.history.size());
    util::atomic_write_file((fs::path(out_dir) / "divergence.json").string(),
                            diag.dump(2) + "\n");
    flush_csvs();
    throw;
  }

  res.best_epoch = best_epoch;
  res.best_report = best_report;
  res.counters = tr.counters();
  return res;
}

}  // namespace eatr::train
