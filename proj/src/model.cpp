#include "eatr/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eatr/errors.hpp"
#include "eatr/geometry.hpp"

namespace eatr::model {

void ModelConfig::validate() const {
  if (d <= 0 || d % 2 != 0)
    throw ConfigError("model: d must be positive and even");
  if (heads <= 0 || d % heads != 0)
    throw ConfigError("model: heads must divide d");
  if (T <= 0) throw ConfigError("model: depth T must be positive");
  if (N <= 0) throw ConfigError("model: query count N must be positive");
  if (K <= 0) throw ConfigError("model: slot iterations K must be positive");
  if (d_in_video <= 0 || d_in_sentence <= 0)
    throw ConfigError("model: input feature dims must be positive");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("model: dropout must be in [0, 1)");
  if (ln_eps <= 0.0) throw ConfigError("model: ln_eps must be positive");
}

template <class T>
int ParamSet<T>::add(const std::string& name, Mat<T> value) {
  if (index.count(name))
    throw ConfigError("duplicate parameter name: " + name);
  const int id = int(values.size());
  names.push_back(name);
  values.push_back(std::move(value));
  index.emplace(names.back(), id);
  return id;
}

template <class T>
int ParamSet<T>::at(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

template <class T>
size_t ParamSet<T>::total_elems() const {
  size_t n = 0;
  for (const auto& m : values) n += m.size();
  return n;
}

namespace {

// gain on the positional q/k projections; attention logits grow with its
// square, so 2 turns the ~1.4-logit self-alignment bump of a plain xavier
// init into ~5.7, enough for a query to mostly read its own span
constexpr double kPosProjGain = 2.0;

template <class T>
Mat<T> xavier(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / double(rows + cols));
  Mat<T> m(rows, cols);
  for (auto& x : m.v) x = T(rng.uniform(-limit, limit));
  return m;
}

}  // namespace

template <class T>
Mat<T> frame_positional_matrix(int length, int d) {
  Mat<T> m(length, d);
  for (int i = 0; i < length; ++i) {
    auto row = geom::sinusoidal_encode(T(i), d, T(geom::kFrameTau));
    std::copy(row.begin(), row.end(), m.row(i));
  }
  return m;
}

template <class T>
Model<T>::Model(ModelConfig cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed);
  const int d = cfg_.d;

  auto W = [&](const std::string& name, int r, int c) {
    params_.add(name, xavier<T>(r, c, rng));
  };
  auto B = [&](const std::string& name, int c) {
    params_.add(name, Mat<T>(1, c));
  };
  auto LN = [&](const std::string& name) {
    params_.add(name + ".g", Mat<T>::full(1, d, T(1)));
    params_.add(name + ".b", Mat<T>(1, d));
  };
  auto attn = [&](const std::string& p, bool modulated) {
    W(p + ".wq", d, d); B(p + ".bq", d);
    W(p + ".wk", d, d); B(p + ".bk", d);
    W(p + ".wv", d, d); B(p + ".bv", d);
    W(p + ".wo", d, d); B(p + ".bo", d);
    if (modulated) {  // projections for the positional halves of q/k
      // identical init on both sides makes the positional dot product an
      // approximate identity form, and the gain sharpens it, so anchors
      // attend mostly to their own frames from the first step instead of
      // having to learn the alignment; both projections stay learnable
      Mat<T> wp = xavier<T>(d, d, rng);
      for (auto& x : wp.v) x *= T(kPosProjGain);
      params_.add(p + ".wqp", wp);
      params_.add(p + ".wkp", std::move(wp));
    }
  };
  auto ffn = [&](const std::string& p) {
    W(p + ".w1", d, 4 * d); B(p + ".b1", 4 * d);
    W(p + ".w2", 4 * d, d); B(p + ".b2", d);
  };

  W("proj.video.w", cfg_.d_in_video, d);
  B("proj.video.b", d);
  W("proj.sentence.w", cfg_.d_in_sentence, d);
  B("proj.sentence.b", d);

  for (int l = 0; l < cfg_.T; ++l) {
    const std::string p = "enc" + std::to_string(l);
    attn(p + ".attn", false);
    LN(p + ".ln1");
    ffn(p + ".ffn");
    LN(p + ".ln2");
  }
  W("saliency.w", d, 1);
  B("saliency.b", 1);

  if (cfg_.use_event_reasoning) {
    Mat<T> e0(cfg_.N, d);
    for (auto& x : e0.v) x = T(rng.normal(0.0, 0.02));
    params_.add("event.slots", std::move(e0));
    LN("event.ln_frames");
    LN("event.ln_slots");
    LN("event.ln_update");
    W("event.w1", d, d);  // frames -> attention space
    W("event.w2", d, d);  // slots -> attention space
    W("event.w3", d, d);  // frame values for the slot update
    W("event.w4", d, d);  // residual slot MLP
    W("event.span.w", d, 2);
    B("event.span.b", 2);
  } else {
    // free span logits: evenly spaced centers, width 0.5 after the sigmoid
    Mat<T> q(cfg_.N, 2);
    for (int i = 0; i < cfg_.N; ++i) {
      const double c = (i + 0.5) / double(cfg_.N);
      q(i, 0) = T(std::log(c / (1.0 - c)));
      q(i, 1) = T(0);
    }
    params_.add("event.free_spans", std::move(q));
  }

  // positional-query embedding: concat of (center, width) encodings -> d
  W("posq.w1", 2 * d, d);
  B("posq.b1", d);
  W("posq.w2", d, d);
  B("posq.b2", d);

  for (int l = 0; l < cfg_.T; ++l) {
    const std::string p = "dec" + std::to_string(l);
    attn(p + ".self", false);
    LN(p + ".ln1");
    if (l == 0 && cfg_.use_gf_layer) {
      attn(p + ".sent", false);  // query <- pooled sentence cross attention
      attn(p + ".fuse", false);  // gated fusion self attention
      W(p + ".fuse_out.w", d, d);
      B(p + ".fuse_out.b", d);
      LN(p + ".ln_fuse");
    }
    attn(p + ".cross", true);
    LN(p + ".ln2");
    ffn(p + ".ffn");
    LN(p + ".ln3");
  }

  // heads shared across decoder layers
  W("offset.w1", d, d);
  B("offset.b1", d);
  W("offset.w2", d, 2);
  B("offset.b2", 2);
  W("span.w1", d, d);
  B("span.b1", d);
  W("span.w2", d, d);
  B("span.b2", d);
  W("span.w3", d, 2);
  B("span.b3", 2);
  W("conf.w", d, 1);
  B("conf.b", 1);
}

template <class T>
BoundParams Model<T>::bind(tape::Tape<T>& t) const {
  BoundParams bp;
  bp.vars.reserve(params_.values.size());
  for (const auto& m : params_.values) bp.vars.push_back(t.input_ref(&m, true));
  return bp;
}

namespace {

template <class T>
struct Ctx {
  tape::Tape<T>& t;
  const ParamSet<T>& ps;
  const BoundParams& bp;
  const ModelConfig& cfg;
  Rng* drng;

  tape::Var p(const std::string& name) const {
    return bp.vars[size_t(ps.at(name))];
  }

  tape::Var drop(tape::Var x) const {
    if (drng != nullptr && cfg.dropout > 0.0)
      return t.dropout(x, cfg.dropout, *drng);
    return x;
  }

  tape::Var postnorm(const std::string& ln, tape::Var residual,
                     tape::Var sublayer) const {
    return t.layer_norm(t.add(residual, drop(sublayer)), p(ln + ".g"),
                        p(ln + ".b"), T(cfg.ln_eps));
  }

  tape::Var ffn(const std::string& pre, tape::Var x) const {
    tape::Var h = t.relu(t.linear(x, p(pre + ".w1"), p(pre + ".b1")));
    return t.linear(drop(h), p(pre + ".w2"), p(pre + ".b2"));
  }

  // Multi-head attention over kv_src keys/values. When q_pos/k_pos are given,
  // each head's query/key gets its slice of the projected positional features
  // concatenated onto the content slice (scale then uses the doubled width).
  tape::Var mha(const std::string& pre, tape::Var q_src, tape::Var kv_src,
                const std::vector<char>& key_mask, tape::Var q_pos,
                tape::Var k_pos, tape::Var* mean_attn) const {
    const int d = cfg.d, H = cfg.heads, dh = d / H;
    tape::Var Q = t.linear(q_src, p(pre + ".wq"), p(pre + ".bq"));
    tape::Var K = t.linear(kv_src, p(pre + ".wk"), p(pre + ".bk"));
    tape::Var V = t.linear(kv_src, p(pre + ".wv"), p(pre + ".bv"));
    const bool mod = q_pos.valid();
    tape::Var Qp, Kp;
    if (mod) {
      Qp = t.matmul(q_pos, p(pre + ".wqp"));
      Kp = t.matmul(k_pos, p(pre + ".wkp"));
    }
    const T scale = T(1.0 / std::sqrt(double(mod ? 2 * dh : dh)));
    tape::Var out, attn_sum;
    for (int h = 0; h < H; ++h) {
      tape::Var qh = t.slice_cols(Q, h * dh, (h + 1) * dh);
      tape::Var kh = t.slice_cols(K, h * dh, (h + 1) * dh);
      if (mod) {
        qh = t.concat_cols(qh, t.slice_cols(Qp, h * dh, (h + 1) * dh));
        kh = t.concat_cols(kh, t.slice_cols(Kp, h * dh, (h + 1) * dh));
      }
      tape::Var a =
          t.row_softmax(t.scale(t.matmul_nt(qh, kh), scale), key_mask);
      if (mean_attn != nullptr) attn_sum = (h == 0) ? a : t.add(attn_sum, a);
      tape::Var oh = t.matmul(a, t.slice_cols(V, h * dh, (h + 1) * dh));
      out = (h == 0) ? oh : t.concat_cols(out, oh);
    }
    if (mean_attn != nullptr) *mean_attn = t.scale(attn_sum, T(1.0 / H));
    return t.linear(out, p(pre + ".wo"), p(pre + ".bo"));
  }
};

inline int count_valid(const std::vector<char>& mask) {
  int n = 0;
  for (char m : mask) n += (m != 0);
  return n;
}

}  // namespace

template <class T>
Forward<T> Model<T>::forward(tape::Tape<T>& t, const BoundParams& bp,
                             const Mat<T>& video,
                             const std::vector<char>& video_mask,
                             const Mat<T>& sentence,
                             const std::vector<char>& sentence_mask,
                             Rng* dropout_rng, bool record_attention) const {
  if (video.cols != cfg_.d_in_video)
    throw ValidationError("forward: video feature dim mismatch");
  if (sentence.cols != cfg_.d_in_sentence)
    throw ValidationError("forward: sentence feature dim mismatch");
  if (int(video_mask.size()) != video.rows ||
      int(sentence_mask.size()) != sentence.rows)
    throw ValidationError("forward: mask length mismatch");
  if (count_valid(video_mask) == 0 || count_valid(sentence_mask) == 0)
    throw ValidationError("forward: need at least one valid frame and token");

  const int d = cfg_.d;
  const int Lv = video.rows;
  const int Ls = sentence.rows;
  Ctx<T> c{t, params_, bp, cfg_, dropout_rng};
  Forward<T> out;

  tape::Var vin = t.input(video);
  tape::Var sin_ = t.input(sentence);
  out.h_v_nope = t.linear(vin, c.p("proj.video.w"), c.p("proj.video.b"));
  tape::Var pe = t.input(frame_positional_matrix<T>(Lv, d));
  out.h_v = t.add(out.h_v_nope, pe);
  out.h_s = t.linear(sin_, c.p("proj.sentence.w"), c.p("proj.sentence.b"));

  std::vector<char> joint_mask = video_mask;
  joint_mask.insert(joint_mask.end(), sentence_mask.begin(),
                    sentence_mask.end());

  tape::Var X = t.concat_rows(out.h_v, out.h_s);
  for (int l = 0; l < cfg_.T; ++l) {
    const std::string p = "enc" + std::to_string(l);
    tape::Var a = c.mha(p + ".attn", X, X, joint_mask, {}, {}, nullptr);
    X = c.postnorm(p + ".ln1", X, a);
    X = c.postnorm(p + ".ln2", X, c.ffn(p + ".ffn", X));
  }
  out.enc_joint = X;
  tape::Var enc_video = t.slice_rows(X, 0, Lv);
  out.saliency = t.linear(enc_video, c.p("saliency.w"), c.p("saliency.b"));
  out.h_gs = t.row_max_pool(out.h_s, sentence_mask);

  tape::Var C, P;
  if (cfg_.use_event_reasoning) {
    tape::Var E = c.p("event.slots");
    tape::Var hv_ln =
        t.layer_norm(out.h_v, c.p("event.ln_frames.g"),
                     c.p("event.ln_frames.b"), T(cfg_.ln_eps));
    tape::Var hv_attn = t.matmul(hv_ln, c.p("event.w1"));
    tape::Var hv_val = t.matmul(out.h_v, c.p("event.w3"));
    const T inv_sqrt_d = T(1.0 / std::sqrt(double(d)));
    for (int k = 0; k < cfg_.K; ++k) {
      tape::Var e_ln = t.layer_norm(E, c.p("event.ln_slots.g"),
                                    c.p("event.ln_slots.b"), T(cfg_.ln_eps));
      tape::Var e_attn = t.matmul(e_ln, c.p("event.w2"));
      tape::Var logits =
          t.scale(t.matmul_nt(hv_attn, e_attn), inv_sqrt_d);  // L_v x N
      tape::Var A = t.row_softmax(logits);  // frames compete over slots
      A = t.zero_rows(A, video_mask);
      tape::Var An = t.col_normalize(A, T(1e-8));  // per-slot frame weights
      tape::Var U = t.add(t.matmul_tn(An, hv_val), E);
      tape::Var u_ln = t.layer_norm(U, c.p("event.ln_update.g"),
                                    c.p("event.ln_update.b"), T(cfg_.ln_eps));
      E = t.add(t.matmul(u_ln, c.p("event.w4")), U);
    }
    C = E;
    P = t.sigmoid(t.linear(E, c.p("event.span.w"), c.p("event.span.b")));
    out.has_event_queries = true;
  } else {
    C = t.input(Mat<T>(cfg_.N, d), false);  // zero content queries
    P = t.sigmoid(c.p("event.free_spans"));
  }
  out.event_pos = P;

  // cross-attention key positions: frame centers under the same coordinate
  // encoding as the query anchors, so the positional dot product is aligned
  // from initialization; padded and sentence rows carry none
  const int Lv_valid = count_valid(video_mask);
  Mat<T> key_pos_m(Lv + Ls, 1);
  std::vector<char> video_rows(size_t(Lv + Ls), 0);
  for (int i = 0; i < Lv; ++i) {
    if (!video_mask.empty() && !video_mask[size_t(i)]) continue;
    key_pos_m(i, 0) = T((i + 0.5) / Lv_valid);
    video_rows[size_t(i)] = 1;
  }
  tape::Var pe_joint = t.zero_rows(
      t.sincos_embed(t.input(key_pos_m), d, T(geom::kCoordTau)), video_rows);

  auto embed_pos = [&](tape::Var pos) {
    tape::Var pc =
        t.sincos_embed(t.slice_cols(pos, 0, 1), d, T(geom::kCoordTau));
    tape::Var pw =
        t.sincos_embed(t.slice_cols(pos, 1, 2), d, T(geom::kCoordTau));
    tape::Var h = t.relu(
        t.linear(t.concat_cols(pc, pw), c.p("posq.w1"), c.p("posq.b1")));
    return t.linear(h, c.p("posq.w2"), c.p("posq.b2"));
  };

  const T span_eps = T(1e-6);
  for (int l = 0; l < cfg_.T; ++l) {
    const std::string pl = "dec" + std::to_string(l);
    tape::Var pemb = embed_pos(P);
    tape::Var xq = t.add(C, pemb);
    tape::Var sa = c.mha(pl + ".self", xq, xq, {}, {}, {}, nullptr);
    C = c.postnorm(pl + ".ln1", C, sa);

    if (l == 0 && cfg_.use_gf_layer) {
      tape::Var chat = c.mha(pl + ".sent", C, out.h_gs, {}, {}, {}, nullptr);
      tape::Var g = t.sigmoid(t.dot_rows(C, chat));
      tape::Var fused_in = t.add(C, chat);
      tape::Var f = c.mha(pl + ".fuse", fused_in, fused_in, {}, {}, {},
                          nullptr);
      tape::Var fused = t.linear(t.scale_rows(f, g), c.p(pl + ".fuse_out.w"),
                                 c.p(pl + ".fuse_out.b"));
      C = c.postnorm(pl + ".ln_fuse", C, fused);
      out.gf_gate = g;
    }

    // query positional slice: the anchor center under the key encoding
    tape::Var pq =
        t.sincos_embed(t.slice_cols(P, 0, 1), d, T(geom::kCoordTau));
    tape::Var attn_mean;
    tape::Var ca = c.mha(pl + ".cross", C, out.enc_joint, joint_mask, pq,
                         pe_joint, record_attention ? &attn_mean : nullptr);
    if (record_attention) out.cross_attn.push_back(attn_mean);
    C = c.postnorm(pl + ".ln2", C, ca);
    C = c.postnorm(pl + ".ln3", C, c.ffn(pl + ".ffn", C));

    if (l < cfg_.T - 1) {  // refine positions for the next layer
      tape::Var oh = t.relu(t.linear(C, c.p("offset.w1"), c.p("offset.b1")));
      tape::Var delta = t.linear(oh, c.p("offset.w2"), c.p("offset.b2"));
      P = t.sigmoid(t.add(t.logit(P, span_eps), delta));
    }

    tape::Var sh = t.relu(t.linear(C, c.p("span.w1"), c.p("span.b1")));
    sh = t.relu(t.linear(sh, c.p("span.w2"), c.p("span.b2")));
    tape::Var sdelta = t.linear(sh, c.p("span.w3"), c.p("span.b3"));
    out.layer_spans.push_back(t.sigmoid(t.add(t.logit(P, span_eps), sdelta)));
    out.layer_conf.push_back(
        t.sigmoid(t.linear(C, c.p("conf.w"), c.p("conf.b"))));
  }
  return out;
}

template struct ParamSet<float>;
template struct ParamSet<double>;
template class Model<float>;
template class Model<double>;
template Mat<float> frame_positional_matrix<float>(int, int);
template Mat<double> frame_positional_matrix<double>(int, int);

}  // namespace eatr::model
