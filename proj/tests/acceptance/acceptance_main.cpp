// Acceptance gate: ten pass/fail checks covering matcher optimality,
// geometry, event discovery, gradients, equivariance, metrics, end-to-end
// convergence, ablation directions, and external feature ingestion.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "eatr/assignment.hpp"
#include "eatr/data.hpp"
#include "eatr/errors.hpp"
#include "eatr/geometry.hpp"
#include "eatr/losses.hpp"
#include "eatr/metrics.hpp"
#include "eatr/model.hpp"
#include "eatr/pseudo_events.hpp"
#include "eatr/rng.hpp"
#include "eatr/training.hpp"
#include "eatr/util.hpp"

using namespace eatr;
namespace fs = std::filesystem;

namespace {

struct CheckFail : std::runtime_error {
  explicit CheckFail(const std::string& what) : std::runtime_error(what) {}
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw CheckFail(msg);
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

fs::path scratch_root() {
  static fs::path root = [] {
    fs::path p = fs::temp_directory_path() /
                 ("eatr_accept_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return root;
}

// ---------------------------------------------------------------- 1

double brute_force_min_cost(const Mat<double>& cost) {
  const bool flip = cost.rows > cost.cols;
  const int r = flip ? cost.cols : cost.rows;
  const int c = flip ? cost.rows : cost.cols;
  auto at = [&](int i, int j) { return flip ? cost(j, i) : cost(i, j); };
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> cols;
  std::function<void(int, double)> rec = [&](int row, double acc) {
    if (row == r) {
      best = std::min(best, acc);
      return;
    }
    for (int j = 0; j < c; ++j) {
      if (std::find(cols.begin(), cols.end(), j) != cols.end()) continue;
      cols.push_back(j);
      rec(row + 1, acc + at(row, j));
      cols.pop_back();
    }
  };
  rec(0, 0.0);
  return best;
}

double assignment_cost_row_order(const Mat<double>& cost,
                                 const assign::Assignment& a) {
  auto pairs = a.pairs;
  std::sort(pairs.begin(), pairs.end());
  double total = 0.0;
  for (const auto& [i, j] : pairs) total += cost(i, j);
  return total;
}

std::string crit1_matcher_optimality() {
  Rng rng(101);
  int exact_trials = 0, close_trials = 0;
  double worst_real_gap = 0.0;
  for (int r = 1; r <= 6; ++r)
    for (int c = 1; c <= 6; ++c) {
      // integer costs make the optimal total exactly representable, so the
      // stated equality is literal
      for (int trial = 0; trial < 1000; ++trial) {
        Mat<double> cost{r, c};
        for (auto& x : cost.v) x = double(rng.uniform_int(0, 100));
        auto a = assign::hungarian(cost);
        const double mine = assignment_cost_row_order(cost, a);
        const double ref = brute_force_min_cost(cost);
        require(mine == ref, fmt("integer-cost mismatch at %dx%d: %g vs %g",
                                 r, c, mine, ref));
        require(a.total_cost == ref,
                fmt("reported total differs at %dx%d", r, c));
        ++exact_trials;
      }
      for (int trial = 0; trial < 200; ++trial) {
        Mat<double> cost{r, c};
        for (auto& x : cost.v) x = rng.uniform(-5.0, 5.0);
        auto a = assign::hungarian(cost);
        const double gap = std::abs(assignment_cost_row_order(cost, a) -
                                    brute_force_min_cost(cost));
        worst_real_gap = std::max(worst_real_gap, gap);
        require(gap <= 1e-9, fmt("real-cost gap %.3e at %dx%d", gap, r, c));
        ++close_trials;
      }
    }
  return fmt(
      "exact on %d integer-cost matrices over all shapes to 6x6; "
      "%d real-cost matrices within 1e-9 (worst %.1e)",
      exact_trials, close_trials, worst_real_gap);
}

// ---------------------------------------------------------------- 2

std::string crit2_geometry() {
  Rng rng(202);
  double worst_sym = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    double lo1 = rng.uniform(0.0, 0.99), hi1 = rng.uniform(lo1 + 1e-4, 1.0);
    double lo2 = rng.uniform(0.0, 0.99), hi2 = rng.uniform(lo2 + 1e-4, 1.0);
    geom::Span a{(lo1 + hi1) / 2, hi1 - lo1};
    geom::Span b{(lo2 + hi2) / 2, hi2 - lo2};
    auto ab = geom::iou_giou(a, b);
    auto ba = geom::iou_giou(b, a);
    require(ab.giou <= ab.iou + 1e-12, "giou exceeded iou");
    require(ab.giou > -1.0 && ab.giou <= 1.0 + 1e-12, "giou out of (-1,1]");
    worst_sym = std::max(worst_sym, std::abs(ab.giou - ba.giou));
    require(worst_sym <= 1e-9, "giou asymmetric beyond 1e-9");
  }
  auto w1 = geom::iou_giou({0.5, 0.2}, {0.5, 0.2});
  require(std::abs(w1.giou - 1.0) <= 1e-9, "identical spans giou != 1");
  auto w2 = geom::iou_giou({0.1, 0.2}, {0.9, 0.2});
  require(std::abs(w2.giou - (-0.6)) <= 1e-9, "disjoint spans giou != -0.6");
  auto w3 = geom::iou_giou({0.4, 0.4}, {0.6, 0.4});
  require(std::abs(w3.giou - 1.0 / 3.0) <= 1e-9, "overlap spans giou != 1/3");
  return fmt(
      "10000 pairs: giou<=iou, range (-1,1], symmetry (worst %.1e); "
      "worked values 1.0 / -0.6 / 1/3 within 1e-9",
      worst_sym);
}

// ---------------------------------------------------------------- 3

std::vector<int> event_start_frames(const std::vector<geom::Span>& events,
                                    int l_v) {
  std::vector<int> starts;
  for (const auto& e : events)
    starts.push_back(int(std::lround((e.c - e.w / 2.0) * l_v)));
  return starts;
}

std::string crit3_pseudo_events() {
  // two-block self-similarity fixture
  Mat<double> tsm{10, 10};
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) tsm(i, j) = ((i < 5) == (j < 5)) ? 1.0 : 0.0;
  auto b = pev::boundary_scores(tsm);
  require(std::abs(b.scores[4] - 8.0) <= 1e-12 &&
              std::abs(b.scores[5] - 8.0) <= 1e-12,
          "fixture boundary peaks != 8");
  require(b.scores[2] == 0.0 && b.scores[7] == 0.0,
          "fixture interior scores != 0");
  auto ev = pev::extract_events(b, 10);
  require(ev.size() == 2, "fixture did not yield two events");
  require(std::abs(ev[0].c - 0.25) <= 1e-12 &&
              std::abs(ev[0].w - 0.5) <= 1e-12 &&
              std::abs(ev[1].c - 0.75) <= 1e-12 &&
              std::abs(ev[1].w - 0.5) <= 1e-12,
          "fixture events != [(0.25,0.5),(0.75,0.5)]");

  auto run_batch = [&](double sigma, uint64_t seed, bool exact) {
    data::GenConfig g;
    g.num_samples = 100;
    g.l_v = 40;
    g.l_s = 6;
    g.d_in = 64;
    g.noise_sigma = sigma;
    g.seed = seed;
    const fs::path dir = scratch_root() / ("pev_" + std::to_string(seed));
    data::generate_synthetic(g, dir.string());
    auto samples = data::load_dataset((dir / "dataset.jsonl").string());
    int good = 0;
    for (const auto& s : samples) {
      auto starts =
          event_start_frames(pev::pseudo_events(s.video_features), g.l_v);
      const auto& want = s.meta.event_starts;
      bool ok = starts.size() == want.size();
      for (size_t k = 0; ok && k < starts.size(); ++k)
        ok = exact ? starts[k] == want[k]
                   : std::abs(starts[k] - want[k]) <= 1;
      good += ok ? 1 : 0;
    }
    return good;
  };

  const int clean = run_batch(0.0, 31, true);
  require(clean == 100,
          fmt("zero-noise recovery %d/100, expected 100", clean));
  const int noisy = run_batch(0.05, 32, false);
  require(noisy >= 95,
          fmt("sigma=0.05 within-1-frame rate %d/100 < 95", noisy));
  return fmt(
      "fixture peaks {8,8} and events [(0.25,0.5),(0.75,0.5)]; zero-noise "
      "100/100 exact; sigma=0.05 %d/100 within +-1 frame",
      noisy);
}

// ---------------------------------------------------------------- 4

std::string crit4_gradients() {
  model::ModelConfig mc;
  mc.d = 8;
  mc.heads = 2;
  mc.T = 2;
  mc.N = 3;
  mc.K = 2;
  mc.d_in_video = 10;
  mc.d_in_sentence = 6;
  mc.dropout = 0.0;
  model::Model<double> m(mc, 55);

  const int l_v = 12, l_s = 4;
  Rng rng(56);
  Mat<double> video{l_v, mc.d_in_video};
  for (auto& x : video.v) x = rng.normal(0.0, 1.0);
  Mat<double> sentence{l_s, mc.d_in_sentence};
  for (auto& x : sentence.v) x = rng.normal(0.0, 1.0);
  std::vector<char> vmask(size_t(l_v), 1), smask(size_t(l_s), 1);
  std::vector<geom::Span> gt{{0.4, 0.3}, {0.8, 0.15}};
  losses::LossWeights w;

  // fixed targets: event supervision is piecewise constant in the params,
  // so the finite-difference probe must hold it at the base point
  std::vector<geom::Span> pseudo;
  {
    tape::Tape<double> t;
    auto bp = m.bind(t);
    auto fwd = m.forward(t, bp, video, vmask, sentence, smask, nullptr);
    pseudo = pev::pseudo_events(t.val(fwd.h_v_nope));
  }

  auto build = [&](tape::Tape<double>& t, model::BoundParams* bp_out) {
    auto bp = m.bind(t);
    auto fwd = m.forward(t, bp, video, vmask, sentence, smask, nullptr);
    std::vector<tape::Var> moments;
    for (size_t l = 0; l < fwd.layer_spans.size(); ++l)
      moments.push_back(losses::moment_loss_t(t, fwd.layer_spans[l],
                                              fwd.layer_conf[l], gt, w.cost,
                                              w.background_weight));
    Rng srng(77);
    auto sal = losses::saliency_loss_t(t, fwd.saliency, vmask, gt[0], w.alpha,
                                       srng, nullptr);
    auto ev = losses::event_loss_t(t, fwd.event_pos, pseudo, w.cost, nullptr);
    if (bp_out) *bp_out = bp;
    return losses::combine_losses_t(t, moments, sal, ev, w);
  };
  auto loss_value = [&]() {
    tape::Tape<double> t;
    return t.val(build(t, nullptr))(0, 0);
  };

  std::vector<Mat<double>> analytic;
  {
    tape::Tape<double> t;
    model::BoundParams bp;
    auto total = build(t, &bp);
    t.backward(total);
    for (auto v : bp.vars) analytic.push_back(t.grad(v));
  }

  auto& ps = m.params();
  double worst = 0.0;
  std::string worst_group = "-";
  long probes = 0;
  for (size_t g = 0; g < ps.values.size(); ++g) {
    auto& p = ps.values[g];
    const size_t n = p.v.size();
    const size_t stride = n <= 48 ? 1 : (n + 47) / 48;
    for (size_t k = 0; k < n; k += stride) {
      const double x0 = p.v[k];
      const double h = 1e-5 * std::max(1.0, std::abs(x0));
      p.v[k] = x0 + h;
      const double fp = loss_value();
      p.v[k] = x0 - h;
      const double fm = loss_value();
      p.v[k] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[g](int(k) / p.cols, int(k) % p.cols);
      const double rel =
          std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      if (rel > worst) {
        worst = rel;
        worst_group = ps.names[g];
      }
      ++probes;
      require(rel <= 1e-4,
              fmt("gradient mismatch at %s[%zu]: analytic %.8e vs "
                  "central-difference %.8e (rel %.2e)",
                  ps.names[g].c_str(), k, an, fd, rel));
    }
  }
  return fmt(
      "%ld probes across %zu parameter groups, worst rel err %.2e (%s), "
      "tol 1e-4",
      probes, ps.values.size(), worst, worst_group.c_str());
}

// ---------------------------------------------------------------- 5

std::string crit5_slot_equivariance() {
  model::ModelConfig mc;
  mc.d = 16;
  mc.heads = 4;
  mc.T = 2;
  mc.N = 6;
  mc.K = 3;
  mc.d_in_video = 12;
  mc.d_in_sentence = 8;
  mc.dropout = 0.0;

  Rng rng(505);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    model::Model<double> m(mc, 600 + uint64_t(trial));
    const int l_v = int(rng.uniform_int(8, 18));
    Mat<double> video{l_v, mc.d_in_video};
    for (auto& x : video.v) x = rng.normal(0.0, 1.0);
    Mat<double> sentence{3, mc.d_in_sentence};
    for (auto& x : sentence.v) x = rng.normal(0.0, 1.0);
    std::vector<char> vmask(size_t(l_v), 1), smask(3, 1);

    std::vector<int> perm(size_t(mc.N));
    for (int i = 0; i < mc.N; ++i) perm[size_t(i)] = i;
    rng.shuffle(perm);

    auto outputs = [&]() {
      tape::Tape<double> t;
      auto bp = m.bind(t);
      auto f = m.forward(t, bp, video, vmask, sentence, smask, nullptr);
      return std::pair<Mat<double>, Mat<double>>(
          t.val(f.event_pos), t.val(f.layer_spans.back()));
    };

    auto [pos_a, spans_a] = outputs();
    auto& ps = m.params();
    Mat<double>& slots = ps.values[size_t(ps.at("event.slots"))];
    Mat<double> permuted{slots.rows, slots.cols};
    for (int i = 0; i < slots.rows; ++i)
      for (int j = 0; j < slots.cols; ++j)
        permuted(i, j) = slots(perm[size_t(i)], j);
    slots = permuted;
    auto [pos_b, spans_b] = outputs();

    for (int i = 0; i < mc.N; ++i)
      for (int j = 0; j < 2; ++j) {
        worst = std::max(worst,
                         std::abs(pos_b(i, j) - pos_a(perm[size_t(i)], j)));
        worst = std::max(
            worst, std::abs(spans_b(i, j) - spans_a(perm[size_t(i)], j)));
      }
    require(worst <= 1e-6,
            fmt("trial %d: permutation deviation %.3e > 1e-6", trial, worst));
  }
  return fmt(
      "100 random slot permutations: initial positions and final spans "
      "permute identically (worst dev %.1e)",
      worst);
}

// ---------------------------------------------------------------- 6

// Independent AP reference: rank by the documented tie rules, then for
// every prefix length recompute the greedy matching from scratch (instead
// of marking matches incrementally) and integrate the same all-point
// interpolated precision-recall area.
double oracle_ap(const metrics::PredictionSet& preds,
                 const metrics::GroundTruth& gts, double thr) {
  struct R {
    double conf;
    size_t sample, slot;
  };
  std::vector<R> ranked;
  size_t total_gt = 0;
  for (size_t s = 0; s < preds.size(); ++s) {
    total_gt += gts[s].size();
    for (size_t q = 0; q < preds[s].size(); ++q)
      ranked.push_back({preds[s][q].confidence, s, q});
  }
  std::sort(ranked.begin(), ranked.end(), [](const R& a, const R& b) {
    if (a.conf != b.conf) return a.conf > b.conf;
    if (a.sample != b.sample) return a.sample < b.sample;
    return a.slot < b.slot;
  });

  // true positives among the first k ranked predictions, matched greedily
  // in rank order; highest-IoU unused gt wins, later index on ties
  auto prefix_tp = [&](size_t k) {
    std::vector<std::vector<bool>> used(gts.size());
    for (size_t s = 0; s < gts.size(); ++s)
      used[s].assign(gts[s].size(), false);
    int tp = 0;
    for (size_t i = 0; i < k; ++i) {
      const auto& r = ranked[i];
      const auto& span = preds[r.sample][r.slot].span;
      int pick = -1;
      double best = thr;
      for (size_t g = 0; g < gts[r.sample].size(); ++g) {
        if (used[r.sample][g]) continue;
        const double v = geom::iou_giou(span, gts[r.sample][g]).iou;
        if (v >= best) {
          best = v;
          pick = int(g);
        }
      }
      if (pick >= 0) {
        used[r.sample][size_t(pick)] = true;
        ++tp;
      }
    }
    return tp;
  };

  std::vector<double> precision, recall;
  for (size_t k = 1; k <= ranked.size(); ++k) {
    const int tp = prefix_tp(k);
    precision.push_back(double(tp) / double(k));
    recall.push_back(double(tp) / double(total_gt));
  }
  double ap = 0.0;
  double run_max = 0.0;
  for (size_t r = ranked.size(); r-- > 0;) {
    run_max = std::max(run_max, precision[r]);
    const double lo = (r == 0) ? 0.0 : recall[r - 1];
    ap += (recall[r] - lo) * run_max;
  }
  return ap;
}

std::string crit6_metrics_oracle() {
  Rng rng(606);
  const std::vector<double> thresholds{0.3, 0.5, 0.75};
  const std::vector<double> conf_grid{0.1, 0.25, 0.5, 0.75, 0.9};
  long cases = 0;
  for (int n_samples = 1; n_samples <= 4; ++n_samples)
    for (int max_preds = 0; max_preds <= 4; ++max_preds)
      for (int trial = 0; trial < 40; ++trial) {
        metrics::PredictionSet preds;
        metrics::GroundTruth gts;
        preds.resize(size_t(n_samples));
        gts.resize(size_t(n_samples));
        for (int s = 0; s < n_samples; ++s) {
          const int n_gt = 1 + int(rng.uniform_int(0, 1));
          for (int g = 0; g < n_gt; ++g) {
            const double lo = double(rng.uniform_int(0, 6)) / 10.0;
            const double len = double(1 + rng.uniform_int(0, 3)) / 10.0;
            gts[size_t(s)].push_back(geom::Span{lo + len / 2.0, len});
          }
          const int n_pred = int(rng.uniform_int(0, max_preds));
          for (int q = 0; q < n_pred; ++q) {
            const double lo = double(rng.uniform_int(0, 6)) / 10.0;
            const double len = double(1 + rng.uniform_int(0, 3)) / 10.0;
            preds[size_t(s)].push_back(
                {geom::Span{lo + len / 2.0, len},
                 conf_grid[size_t(rng.uniform_int(
                     0, int64_t(conf_grid.size()) - 1))]});
          }
        }
        auto res = metrics::mean_ap(preds, gts, thresholds);
        for (size_t t = 0; t < thresholds.size(); ++t) {
          const double ref = oracle_ap(preds, gts, thresholds[t]);
          require(res.per_threshold[t] == ref,
                  fmt("AP mismatch at thr %.2f (case %ld): %.17g vs "
                      "reference %.17g",
                      thresholds[t], cases, res.per_threshold[t], ref));
        }
        ++cases;
      }

  metrics::PredictionSet p1;
  p1.push_back({{geom::Span{0.5, 0.2}, 0.9}});
  metrics::GroundTruth g1{{geom::Span{0.5, 0.3}}};
  require(metrics::recall1_at_iou(p1, g1, 0.5) == 1.0,
          "worked recall example missed at m=0.5");
  require(metrics::recall1_at_iou(p1, g1, 0.7) == 0.0,
          "worked recall example hit at m=0.7");
  return fmt(
      "%ld enumerated cases x 3 thresholds match the prefix-rematching "
      "reference exactly; recall example (IoU 2/3) hits at 0.5, misses at "
      "0.7",
      cases);
}

// ------------------------------------------------------- shared training

std::vector<data::GroundingSample> gen_and_load(const data::GenConfig& g,
                                                const std::string& tag) {
  const fs::path dir = scratch_root() / tag;
  data::generate_synthetic(g, dir.string());
  return data::load_dataset((dir / "dataset.jsonl").string());
}

struct RunHistory {
  std::vector<double> r1_05, r1_07;
  double best_r1_05() const {
    double b = 0.0;
    for (double v : r1_05) b = std::max(b, v);
    return b;
  }
  // 1-based epoch count to reach the threshold; cap+1 when never reached
  int epochs_to(double thr, int cap) const {
    for (size_t e = 0; e < r1_05.size(); ++e)
      if (r1_05[e] >= thr) return int(e) + 1;
    return cap + 1;
  }
};

RunHistory run_training(train::TrainConfig cfg,
                        const std::vector<data::GroundingSample>& tr_set,
                        const std::vector<data::GroundingSample>& val_set,
                        int max_epochs, double stop_r1_05,
                        double stop_r1_07) {
  cfg.model.d_in_video = tr_set[0].video_features.cols;
  cfg.model.d_in_sentence = tr_set[0].sentence_features.cols;
  train::Trainer tr(cfg);
  metrics::GroundTruth gts;
  for (const auto& s : val_set) gts.push_back(s.gt_moments);

  RunHistory hist;
  int64_t gstep = 0;
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    std::vector<size_t> order(tr_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng sh(derive_seed(cfg.seed, 0xACCE0000ULL + uint64_t(epoch)));
    sh.shuffle(order);
    for (size_t b0 = 0; b0 < order.size(); b0 += size_t(cfg.batch_size)) {
      const size_t b1 = std::min(order.size(), b0 + size_t(cfg.batch_size));
      std::vector<const data::GroundingSample*> batch;
      for (size_t i = b0; i < b1; ++i) batch.push_back(&tr_set[order[i]]);
      tr.step(batch, derive_seed(cfg.seed ^ 0xACCE57E0ULL, uint64_t(gstep)));
      ++gstep;
    }
    auto preds = train::predict(tr.net(), val_set, cfg.workers);
    auto rep = metrics::evaluate(preds, gts);
    hist.r1_05.push_back(rep.r1_at_05);
    hist.r1_07.push_back(rep.r1_at_07);
    if (rep.r1_at_05 >= stop_r1_05 && rep.r1_at_07 >= stop_r1_07) break;
  }
  return hist;
}

// ---------------------------------------------------------------- 7

std::string crit7_convergence() {
  data::GenConfig g;
  g.num_samples = 2200;
  g.l_v = 50;
  g.l_s = 6;
  g.d_in = 64;
  g.noise_sigma = 0.05;
  g.seed = 7;
  auto all = gen_and_load(g, "conv");
  std::vector<data::GroundingSample> tr_set, val_set;
  train::split_dataset(all, 200.0 / 2200.0, 7, &tr_set, &val_set);
  require(val_set.size() == 200, "expected a 2000/200 split");

  train::TrainConfig cfg = train::desk_profile();
  cfg.model.N = 5;
  cfg.seed = 7;

  const auto t0 = std::chrono::steady_clock::now();
  RunHistory hist = run_training(cfg, tr_set, val_set, 30, 0.90, 0.75);
  const double train_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  const int epochs = int(hist.r1_05.size());
  const double r1_05 = hist.r1_05.back();
  const double r1_07 = hist.r1_07.back();
  require(r1_05 >= 0.90 && r1_07 >= 0.75,
          fmt("after %d epochs: R1@0.5=%.3f (need 0.90), R1@0.7=%.3f "
              "(need 0.75)",
              epochs, r1_05, r1_07));
  require(train_sec <= 900.0,
          fmt("training wall clock %.0fs exceeds 900s", train_sec));
  return fmt(
      "R1@0.5=%.3f, R1@0.7=%.3f after %d epochs on the 2000/200 split "
      "(%.0fs train)",
      r1_05, r1_07, epochs, train_sec);
}

// ------------------------------------------------------------- 8 and 9

// Harder, smaller benchmark so variant gaps stay visible: more events per
// video, higher noise, fewer samples, smaller model.
constexpr int kDirEpochCap = 20;

data::GenConfig direction_gen(uint64_t seed) {
  data::GenConfig g;
  g.num_samples = 700;
  g.l_v = 32;
  g.l_s = 4;
  g.d_in = 32;
  g.min_events = 3;
  g.max_events = 6;
  g.noise_sigma = 0.1;
  g.seed = seed;
  return g;
}

train::TrainConfig direction_cfg(uint64_t seed, bool event_reasoning,
                                 bool event_loss, bool gf_layer) {
  train::TrainConfig cfg;
  cfg.model.d = 32;
  cfg.model.heads = 4;
  cfg.model.T = 2;
  cfg.model.N = 8;
  cfg.model.K = 3;
  cfg.model.use_event_reasoning = event_reasoning;
  cfg.model.use_gf_layer = gf_layer;
  cfg.use_event_loss = event_loss;
  cfg.epochs = kDirEpochCap;
  cfg.seed = seed;
  return cfg;
}

struct DirectionRuns {
  // seed 21 full-history runs for the score comparison
  RunHistory full, no_event_loss, baseline;
  // per-seed epochs-to-0.80 (seeds 21..23), full model vs baseline
  std::vector<int> full_epochs, base_epochs;
};

const DirectionRuns& direction_runs() {
  static DirectionRuns runs = [] {
    DirectionRuns r;
    for (uint64_t seed : {21, 22, 23}) {
      auto all =
          gen_and_load(direction_gen(seed), "dir_" + std::to_string(seed));
      std::vector<data::GroundingSample> tr_set, val_set;
      train::split_dataset(all, 100.0 / 700.0, seed, &tr_set, &val_set);

      // seed 21 runs to the cap (its full histories feed the score check);
      // the other seeds may stop once the 0.80 target is crossed
      const double stop05 = seed == 21 ? 2.0 : 0.80;
      const double stop07 = seed == 21 ? 2.0 : 0.0;
      RunHistory full = run_training(direction_cfg(seed, true, true, true),
                                     tr_set, val_set, kDirEpochCap, stop05,
                                     stop07);
      RunHistory base =
          run_training(direction_cfg(seed, false, false, false), tr_set,
                       val_set, kDirEpochCap, stop05, stop07);
      r.full_epochs.push_back(full.epochs_to(0.80, kDirEpochCap));
      r.base_epochs.push_back(base.epochs_to(0.80, kDirEpochCap));
      if (seed == 21) {
        r.full = full;
        r.baseline = base;
        r.no_event_loss =
            run_training(direction_cfg(seed, true, false, true), tr_set,
                         val_set, kDirEpochCap, 2.0, 2.0);
      }
    }
    return r;
  }();
  return runs;
}

std::string crit8_ablation_direction() {
  const auto& r = direction_runs();
  const double full = r.full.best_r1_05();
  const double noev = r.no_event_loss.best_r1_05();
  const double base = r.baseline.best_r1_05();
  require(full > base,
          fmt("full model R1@0.5 %.3f not above the free-query baseline "
              "%.3f",
              full, base));
  require(noev < full,
          fmt("dropping event supervision did not reduce R1@0.5 "
              "(full %.3f, without %.3f)",
              full, noev));
  return fmt(
      "best R1@0.5 over %d epochs: full %.3f > baseline %.3f; removing "
      "event supervision drops it to %.3f",
      kDirEpochCap, full, base, noev);
}

int median3(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

std::string crit9_convergence_speed() {
  const auto& r = direction_runs();
  const int mf = median3(r.full_epochs);
  const int mb = median3(r.base_epochs);
  require(mf < mb, fmt("median epochs to R1@0.5>=0.80: full %d vs baseline "
                       "%d",
                       mf, mb));
  std::ostringstream d;
  d << "median epochs to R1@0.5>=0.80 over seeds {21,22,23}: full " << mf
    << " [";
  for (size_t i = 0; i < r.full_epochs.size(); ++i)
    d << (i ? "," : "") << r.full_epochs[i];
  d << "] < baseline " << mb << " [";
  for (size_t i = 0; i < r.base_epochs.size(); ++i)
    d << (i ? "," : "") << r.base_epochs[i];
  d << "] (" << kDirEpochCap + 1 << " = never within the cap)";
  return d.str();
}

// ---------------------------------------------------------------- 10

std::string crit10_external_ingestion() {
  // externally produced features: widths unlike anything the generator
  // emits, video and sentence widths differing
  const fs::path dir = scratch_root() / "external";
  fs::create_directories(dir / "features");
  const int l_v = 37, d_v = 96, l_s = 5, d_s = 120;
  Mat<float> video{l_v, d_v};
  for (int i = 0; i < l_v; ++i)
    for (int j = 0; j < d_v; ++j)
      video(i, j) = float(std::sin(0.7 * i + 0.3 * j) + 0.01 * i);
  Mat<float> sentence{l_s, d_s};
  for (int i = 0; i < l_s; ++i)
    for (int j = 0; j < d_s; ++j)
      sentence(i, j) = float(std::cos(0.9 * i - 0.2 * j));

  data::write_feature_matrix((dir / "features/ext_video.eatf").string(),
                             video);
  data::write_feature_matrix((dir / "features/ext_sentence.eatf").string(),
                             sentence);
  util::atomic_write_file(
      (dir / "dataset.jsonl").string(),
      "{\"qid\": 9001, \"vid\": \"external_clip\", \"duration\": 74.0, "
      "\"relevant_windows\": [[10.0, 30.0]], "
      "\"video_feature_ref\": \"features/ext_video.eatf\", "
      "\"sentence_feature_ref\": \"features/ext_sentence.eatf\"}\n");

  auto samples = data::load_dataset((dir / "dataset.jsonl").string());
  require(samples.size() == 1, "external record did not load");
  const auto& s = samples[0];
  require(s.video_features.rows == l_v && s.video_features.cols == d_v &&
              s.sentence_features.rows == l_s &&
              s.sentence_features.cols == d_s,
          "external feature shapes mangled");
  require(s.video_features.v == video.v && s.sentence_features.v == sentence.v,
          "external features not bit-exact after round trip");
  require(std::abs(s.gt_moments[0].c - 20.0 / 74.0) <= 1e-12 &&
              std::abs(s.gt_moments[0].w - 20.0 / 74.0) <= 1e-12,
          "window normalization wrong for external duration");

  // the model consumes the foreign widths without any code change
  model::ModelConfig mc;
  mc.d = 32;
  mc.heads = 4;
  mc.T = 2;
  mc.N = 4;
  mc.K = 2;
  mc.d_in_video = d_v;
  mc.d_in_sentence = d_s;
  model::Model<float> m(mc, 1);
  tape::TapeF t;
  auto bp = m.bind(t);
  std::vector<char> vmask(size_t(l_v), 1), smask(size_t(l_s), 1);
  auto fwd = m.forward(t, bp, s.video_features, vmask, s.sentence_features,
                       smask, nullptr);
  require(t.val(fwd.layer_spans.back()).rows == mc.N,
          "forward pass failed on external features");

  return "external 96/120-wide features round-trip bit-exact and drive a "
         "forward pass; published benchmark numbers (e.g. 61.36 R1@0.5 on "
         "QVHighlights) are NOT reproduced - they require SlowFast/CLIP/"
         "I3D features and the original datasets, which are out of scope";
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    const int id = std::atoi(argv[i]);
    if (id >= 1 && id <= 10) only.push_back(id);
  }
  struct Entry {
    int id;
    const char* name;
    double limit_sec;  // 0 = no stated budget
    std::function<std::string()> run;
  };
  const std::vector<Entry> entries{
      {1, "matcher optimality", 10, crit1_matcher_optimality},
      {2, "span geometry", 5, crit2_geometry},
      {3, "event discovery", 30, crit3_pseudo_events},
      {4, "gradient correctness", 120, crit4_gradients},
      {5, "slot permutation equivariance", 0, crit5_slot_equivariance},
      {6, "ranking metrics oracle", 0, crit6_metrics_oracle},
      {7, "synthetic convergence", 0, crit7_convergence},
      {8, "ablation score direction", 0, crit8_ablation_direction},
      {9, "ablation convergence speed", 0, crit9_convergence_speed},
      {10, "external feature ingestion", 0, crit10_external_ingestion},
  };

  int failures = 0;
  for (const auto& e : entries) {
    if (!only.empty() &&
        std::find(only.begin(), only.end(), e.id) == only.end())
      continue;
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = true;
    try {
      detail = e.run();
    } catch (const std::exception& ex) {
      ok = false;
      detail = ex.what();
    }
    const double sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (ok && e.limit_sec > 0 && sec > e.limit_sec) {
      ok = false;
      detail = fmt("finished but took %.1fs (budget %.0fs); %s", sec,
                   e.limit_sec, detail.c_str());
    }
    std::printf("criterion %2d %s (%.1fs) %s: %s\n", e.id,
                ok ? "PASS" : "FAIL", sec, e.name, detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
  }
  if (only.empty())
    std::printf("%s: %d/10 criteria passed\n",
                failures == 0 ? "ACCEPTED" : "REJECTED", 10 - failures);
  std::error_code ec;
  fs::remove_all(scratch_root(), ec);
  return failures;
}
