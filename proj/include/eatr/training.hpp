#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eatr/data.hpp"
#include "eatr/losses.hpp"
#include "eatr/metrics.hpp"
#include "eatr/model.hpp"

namespace eatr::train {

struct TrainConfig {
  model::ModelConfig model;  // d_in_* stay 0 until bound to a dataset
  losses::LossWeights loss;
  bool use_event_loss = true;  // ablation: drop pseudo-event supervision
  double lr = 1e-4;
  double weight_decay = 1e-4;
  int batch_size = 32;
  int epochs = 200;
  double grad_clip_norm = 0.1;
  uint64_t seed = 0;
  int workers = 8;  // fixed logical worker count, part of the run's identity
  double val_fraction = 0.2;

  void validate() const;  // everything except the data-bound input dims
};

TrainConfig paper_profile();
TrainConfig desk_profile();  // d = 64, epochs = 30

// Flat JSON round-trip; unknown keys are rejected. Used for config files and
// the checkpoint header (hash of the canonical text identifies a config).
std::string config_to_json_text(const TrainConfig& cfg);
TrainConfig config_from_json_text(const std::string& text);

struct StepLoss {
  double moment = 0.0;
  double saliency = 0.0;
  double event = 0.0;
  double total = 0.0;
};

// Decoupled weight decay Adam on the float parameter set.
struct AdamW {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  int64_t steps = 0;
  std::vector<Mat<float>> m, v;

  void init(const model::ParamSet<float>& params);
  void step(model::ParamSet<float>& params,
            const std::vector<Mat<float>>& grads);
};

struct Checkpoint {
  int version = 1;
  std::string config_json;
  std::string config_hash;
  int epoch = 0;  // epochs completed
  int64_t global_step = 0;
  double best_metric = -1.0;
  std::vector<uint64_t> rng_state;
  model::ParamSet<float> params;
  std::vector<Mat<float>> adam_m, adam_v;
  int64_t adam_steps = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);  // ConfigError on
                                                      // version mismatch

// Builds a model from a checkpoint (dims recovered from the stored config).
model::Model<float> model_from_checkpoint(const Checkpoint& ck);

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);  // cfg.model dims must be bound

  model::Model<float>& net() { return model_; }
  const model::Model<float>& net() const { return model_; }
  AdamW& optimizer() { return opt_; }
  losses::LossCounters& counters() { return counters_; }

  // One optimizer step over a batch; per-sample rngs derive from step_seed.
  StepLoss step(const std::vector<const data::GroundingSample*>& batch,
                uint64_t step_seed);

 private:
  TrainConfig cfg_;
  model::Model<float> model_;
  AdamW opt_;
  losses::LossCounters counters_;
};

// Eval-mode loss of one sample (no dropout); the saliency pair and pseudo
// events are deterministic given sal_seed and the current parameters.
StepLoss eval_sample_loss(const model::Model<float>& m,
                          const data::GroundingSample& sample,
                          const losses::LossWeights& w, bool use_event_loss,
                          uint64_t sal_seed);

// Final-layer spans ranked by confidence for every sample.
metrics::PredictionSet predict(const model::Model<float>& m,
                               const std::vector<data::GroundingSample>& ds,
                               int workers);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  metrics::Report val;
};

struct TrainResult {
  std::string best_path;
  std::string last_path;
  int best_epoch = -1;
  metrics::Report best_report;
  std::vector<double> step_losses;  // total per optimizer step
  std::vector<EpochRecord> history;
  losses::LossCounters counters;
};

// Deterministic split by shuffled index (val_fraction tail, at least one
// sample per side when possible).
void split_dataset(const std::vector<data::GroundingSample>& all,
                   double val_fraction, uint64_t seed,
                   std::vector<data::GroundingSample>* train_out,
                   std::vector<data::GroundingSample>* val_out);

// Full loop: shuffled minibatches, per-epoch validation, best-by-mean-AP
// checkpointing, loss.csv + history.csv in out_dir. Throws DivergenceError
// after writing diagnostics if a loss goes non-finite (last.ckpt holds the
// last completed epoch). resume_path restarts from a saved checkpoint.
TrainResult train(const TrainConfig& cfg,
                  const std::vector<data::GroundingSample>& train_set,
                  const std::vector<data::GroundingSample>& val_set,
                  const std::string& out_dir,
                  const std::string& resume_path = "");

}  // namespace eatr::train
