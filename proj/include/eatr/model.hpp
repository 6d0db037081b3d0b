#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "eatr/mat.hpp"
#include "eatr/rng.hpp"
#include "eatr/tape.hpp"

namespace eatr::model {

struct ModelConfig {
  int d = 256;
  int heads = 8;
  int T = 3;  // encoder and decoder depth
  int N = 10; // moment queries / event slots
  int K = 3;  // slot attention iterations
  int d_in_video = 0;
  int d_in_sentence = 0;
  double dropout = 0.1;
  double ln_eps = 1e-5;
  bool aux_loss = true;
  // ablations
  bool use_event_reasoning = true;  // off: zero content + free learnable spans
  bool use_gf_layer = true;         // off: first decoder layer is plain
  bool tsm_include_pe = false;      // feed PE-carrying features to the TSM

  void validate() const;  // throws ConfigError
};

// Named parameter registry; registration order is the canonical order for
// gradient buffers and checkpoints.
template <class T>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Mat<T>> values;
  std::unordered_map<std::string, int> index;

  int add(const std::string& name, Mat<T> value);
  int at(const std::string& name) const;  // throws if missing
  size_t total_elems() const;

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (size_t i = 0; i < values.size(); ++i)
      out.add(names[i], values[i].template cast<U>());
    return out;
  }
};

// Per-tape handles for every parameter, aligned with ParamSet order.
struct BoundParams {
  std::vector<tape::Var> vars;
};

// Everything a training step or prediction needs from one forward pass.
template <class T>
struct Forward {
  tape::Var h_v;       // projected video + PE (pre-encoder), L_v x d
  tape::Var h_v_nope;  // projected video without PE, L_v x d
  tape::Var h_s;       // projected sentence, L_s x d
  tape::Var enc_joint; // (L_v+L_s) x d
  tape::Var saliency;  // L_v x 1
  tape::Var h_gs;      // 1 x d
  bool has_event_queries = false;
  tape::Var event_pos;  // N x 2 initial positional queries in (0,1)
  tape::Var gf_gate;    // N x 1 (valid only when the GF layer ran)
  std::vector<tape::Var> layer_spans;  // T entries, N x 2
  std::vector<tape::Var> layer_conf;   // T entries, N x 1
  std::vector<tape::Var> cross_attn;   // per layer, N x (L_v+L_s), head-mean
                                       // (filled when record_attention)
};

template <class T>
class Model {
 public:
  Model(ModelConfig cfg, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  BoundParams bind(tape::Tape<T>& t) const;

  // dropout_rng == nullptr -> eval mode (dropout off). Masks mark valid rows.
  Forward<T> forward(tape::Tape<T>& t, const BoundParams& bp,
                     const Mat<T>& video, const std::vector<char>& video_mask,
                     const Mat<T>& sentence,
                     const std::vector<char>& sentence_mask, Rng* dropout_rng,
                     bool record_attention = false) const;

 private:
  ModelConfig cfg_;
  ParamSet<T> params_;
};

// Frame-index sinusoidal embeddings, one row per position, temperature 1.
template <class T>
Mat<T> frame_positional_matrix(int length, int d);

using ModelF = Model<float>;
using ModelD = Model<double>;

}  // namespace eatr::model
