// Standalone acceptance harness. Each criterion prints exactly one line:
//   [NN] PASS|FAIL  <title>  (<measurements>)
// Run with no arguments to execute all criteria, or pass a single criterion
// number to run just that one. Exit code 0 iff every executed criterion
// passed. Tolerances are pinned here on purpose; loosening them to make a
// criterion pass defeats the point of the harness.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "pmx/checkpoint.hpp"
#include "pmx/grad_check.hpp"
#include "pmx/io.hpp"
#include "pmx/kmeans.hpp"
#include "pmx/matrix.hpp"
#include "pmx/mixer.hpp"
#include "pmx/ops.hpp"
#include "pmx/profile.hpp"
#include "pmx/reduce.hpp"
#include "pmx/rng.hpp"
#include "pmx/synthetic.hpp"
#include "pmx/train.hpp"

using namespace pmx;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng,
                     double scale = 1.0) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Pairs every parameter tensor with its gradient tensor in traversal order.
std::vector<ParamRef> collect_refs(MixerParams& params, const MixerParams& grads) {
  std::vector<ParamRef> refs;
  std::vector<std::pair<std::string, Matrix*>> vals;
  for_each_param(params, [&](const std::string& name, Matrix& m, bool) {
    vals.emplace_back(name, &m);
  });
  std::vector<const Matrix*> gs;
  for_each_param(grads, [&](const std::string&, const Matrix& m, bool) {
    gs.push_back(&m);
  });
  refs.reserve(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    refs.push_back({vals[i].first, vals[i].second, gs[i]});
  }
  return refs;
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients vs central finite differences on the full model.
// ---------------------------------------------------------------------------
Outcome crit_gradient_fidelity() {
  MixerConfig cfg;
  cfg.tokens = 4;
  cfg.channels = 8;
  cfg.token_hidden = 6;
  cfg.channel_hidden = 10;
  cfg.blocks = 2;
  cfg.num_classes = 3;
  cfg.num_domains = 5;
  cfg.domain_hidden = 6;

  Stopwatch watch;
  Rng rng(20260815);
  MixerParams params = init_params(cfg, 7);
  const Matrix x = random_matrix(cfg.tokens, cfg.channels, rng);
  const std::size_t y = 1, d = 3;

  // Analytic gradient of class_loss + domain_loss: lambda = -1 makes the
  // reversal layer multiply the domain path by +1 for backbone parameters.
  ForwardCache cache;
  ForwardResult out = forward(x, params, true, nullptr, &cache);
  SoftmaxCrossEntropy ce_c = softmax_cross_entropy(out.class_logits, y);
  SoftmaxCrossEntropy ce_d = softmax_cross_entropy(out.domain_logits, d);
  const MixerParams grads = backward(params, cache, ce_c.grad, ce_d.grad, -1.0);

  std::vector<ParamRef> refs = collect_refs(params, grads);
  const auto loss = [&]() {
    ForwardResult r = forward(x, params, false);
    return softmax_cross_entropy(r.class_logits, y).loss +
           softmax_cross_entropy(r.domain_logits, d).loss;
  };
  GradCheckReport rep = finite_diff_check(refs, loss);
  const double elapsed = watch.seconds();

  Outcome o;
  o.pass = rep.max_rel_err < 1e-4 && elapsed < 60.0 &&
           rep.coords_checked == param_count(cfg);
  o.detail = "max rel err " + fmt(rep.max_rel_err) + " over " +
             std::to_string(rep.coords_checked) + " coords in " + fmt(elapsed) +
             "s, worst " + rep.worst_param;
  return o;
}

// ---------------------------------------------------------------------------
// 2. Best-of-restarts clustering vs the exhaustive two-cluster optimum.
// ---------------------------------------------------------------------------
struct BestPartition {
  double sse = 0.0;
  std::uint32_t mask = 0;
};

BestPartition exhaustive_two_partition(const Matrix& pts) {
  const std::size_t n = pts.rows(), d = pts.cols();
  BestPartition best;
  best.sse = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
    double total = 0.0;
    for (int side = 0; side < 2; ++side) {
      std::vector<double> mean(d, 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (((mask >> i) & 1u) != static_cast<std::uint32_t>(side)) continue;
        ++count;
        for (std::size_t j = 0; j < d; ++j) mean[j] += pts(i, j);
      }
      for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(count);
      for (std::size_t i = 0; i < n; ++i) {
        if (((mask >> i) & 1u) != static_cast<std::uint32_t>(side)) continue;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = pts(i, j) - mean[j];
          total += diff * diff;
        }
      }
    }
    if (total < best.sse) {
      best.sse = total;
      best.mask = mask;
    }
  }
  return best;
}

// Two-component mixture: the shape of data the reducer actually clusters.
// Random unit direction, center separation U(1,4), unit gaussian spread.
Matrix blob_instance(std::size_t n, std::size_t dim, Rng& rng) {
  std::vector<double> u(dim);
  double norm = 0.0;
  for (auto& v : u) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  const double sep = 1.0 + 3.0 * rng.uniform();
  Matrix pts(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const double side = (rng.index(2) == 0) ? -0.5 : 0.5;
    for (std::size_t j = 0; j < dim; ++j)
      pts(i, j) = side * sep * u[j] / norm + rng.normal();
  }
  return pts;
}

Outcome crit_clustering_optimality() {
  Rng rng(1);
  const std::size_t instances = 20;
  std::size_t optimal = 0;
  std::size_t monotone_runs = 0, total_runs = 0;

  for (std::size_t inst = 0; inst < instances; ++inst) {
    const std::size_t n = 4 + rng.index(5);   // 4..8 points
    const std::size_t dim = 1 + rng.index(3);  // 1..3 coordinates
    const Matrix pts = blob_instance(n, dim, rng);
    const std::uint64_t seed = 1000 + inst;

    const KMeansResult got = kmeans_best_of(pts, 2, seed, 5);
    const BestPartition want = exhaustive_two_partition(pts);

    std::uint32_t got_mask = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (got.assignments[i] == 1) got_mask |= (1u << i);
    }
    const std::uint32_t full = (1u << n) - 1;
    const bool same_partition =
        got_mask == want.mask || got_mask == (want.mask ^ full);
    const bool same_inertia =
        std::abs(got.inertia - want.sse) <= 1e-9 * std::max(1.0, want.sse);
    if (same_partition && same_inertia) ++optimal;

    // Every individual restart must have a non-increasing inertia trace.
    for (std::size_t r = 0; r < 5; ++r) {
      const KMeansResult run =
          kmeans(pts, 2, derive_seed(seed, static_cast<std::uint64_t>(r)));
      ++total_runs;
      bool mono = true;
      for (std::size_t t = 1; t < run.inertia_trace.size(); ++t) {
        if (run.inertia_trace[t] >
            run.inertia_trace[t - 1] * (1.0 + 1e-12) + 1e-12) {
          mono = false;
        }
      }
      if (mono) ++monotone_runs;
    }
  }

  Outcome o;
  o.pass = optimal >= 19 && monotone_runs == total_runs;
  o.detail = std::to_string(optimal) + "/20 optimal partitions, " +
             std::to_string(monotone_runs) + "/" + std::to_string(total_runs) +
             " monotone traces";
  return o;
}

// ---------------------------------------------------------------------------
// 3. Reversal layer: backbone share of the domain gradient is -lambda times
//    the unreversed gradient; domain-head gradients ignore lambda.
// ---------------------------------------------------------------------------
Outcome crit_reversal_sign_law() {
  MixerConfig cfg;
  cfg.tokens = 3;
  cfg.channels = 5;
  cfg.token_hidden = 4;
  cfg.channel_hidden = 6;
  cfg.blocks = 1;
  cfg.num_classes = 2;
  cfg.num_domains = 3;
  cfg.domain_hidden = 4;

  Rng rng(99);
  MixerParams params = init_params(cfg, 5);
  const Matrix x = random_matrix(cfg.tokens, cfg.channels, rng);
  const std::vector<double> d_class(cfg.num_classes, 0.0);

  const auto grads_at = [&](double lambda) {
    ForwardCache cache;
    ForwardResult out = forward(x, params, true, nullptr, &cache);
    SoftmaxCrossEntropy ce_d = softmax_cross_entropy(out.domain_logits, 1);
    return backward(params, cache, d_class, ce_d.grad, lambda);
  };
  const MixerParams ref = grads_at(-1.0);  // unreversed: -lambda = +1

  double max_dev = 0.0;
  for (double lambda : {0.0, 0.5, 1.0, 2.0}) {
    const MixerParams g = grads_at(lambda);
    std::vector<const Matrix*> gs, rs;
    std::vector<std::string> names;
    for_each_param(g, [&](const std::string& n, const Matrix& m, bool) {
      gs.push_back(&m);
      names.push_back(n);
    });
    for_each_param(ref, [&](const std::string&, const Matrix& m, bool) {
      rs.push_back(&m);
    });
    for (std::size_t t = 0; t < gs.size(); ++t) {
      const bool domain_head = names[t].rfind("dom_", 0) == 0;
      const double factor = domain_head ? 1.0 : -lambda;
      for (std::size_t i = 0; i < gs[t]->size(); ++i) {
        const double want = factor * rs[t]->data()[i];
        const double dev = std::abs(gs[t]->data()[i] - want) /
                           std::max(1.0, std::abs(rs[t]->data()[i]));
        max_dev = std::max(max_dev, dev);
      }
    }
  }

  Outcome o;
  o.pass = max_dev <= 1e-12;
  o.detail = "max deviation " + fmt(max_dev) +
             " across lambda in {0, 0.5, 1, 2}";
  return o;
}

// ---------------------------------------------------------------------------
// 4. All-zero parameters: logits exactly zero, loss exactly ln(num_classes).
// ---------------------------------------------------------------------------
Outcome crit_zero_network_identity() {
  MixerConfig cfg;
  cfg.tokens = 5;
  cfg.channels = 16;
  cfg.token_hidden = 8;
  cfg.channel_hidden = 12;
  cfg.blocks = 2;
  cfg.num_classes = 3;
  cfg.num_domains = 2;
  cfg.domain_hidden = 4;

  const MixerParams zero = make_zero_params(cfg);
  Rng rng(7);
  bool logits_zero = true;
  double max_loss_dev = 0.0;
  for (std::size_t trial = 0; trial < 10; ++trial) {
    const Matrix x = random_matrix(cfg.tokens, cfg.channels, rng, 3.0);
    ForwardResult out = forward(x, zero);
    for (double v : out.class_logits) logits_zero &= (v == 0.0);
    for (double v : out.domain_logits) logits_zero &= (v == 0.0);
    const double loss =
        softmax_cross_entropy(out.class_logits, trial % cfg.num_classes).loss;
    max_loss_dev = std::max(max_loss_dev, std::abs(loss - std::log(3.0)));
  }

  Outcome o;
  o.pass = logits_zero && max_loss_dev <= 1e-12;
  o.detail = std::string("logits ") +
             (logits_zero ? "exactly zero" : "NOT zero") + ", |loss - ln 3| <= " +
             fmt(max_loss_dev);
  return o;
}

// ---------------------------------------------------------------------------
// 5. Reversal-strength schedule: endpoints and monotonicity.
// ---------------------------------------------------------------------------
Outcome crit_schedule() {
  const std::size_t total = 150;
  const double at_start = lambda_schedule(0, total, 1.0);
  const double at_end = lambda_schedule(total, total, 1.0);
  const double want_end = 2.0 / (1.0 + std::exp(-10.0));

  bool nondecreasing = true;
  double prev = at_start;
  for (std::size_t e = 1; e <= total; ++e) {
    const double cur = lambda_schedule(e, total, 1.0);
    if (cur < prev) nondecreasing = false;
    prev = cur;
  }

  Outcome o;
  o.pass = at_start == 1.0 && std::abs(at_end - want_end) <= 1e-12 &&
           nondecreasing;
  o.detail = "start " + fmt(at_start) + ", end dev " +
             fmt(std::abs(at_end - want_end)) +
             (nondecreasing ? ", nondecreasing" : ", NOT monotone");
  return o;
}

// ---------------------------------------------------------------------------
// 6. Synthetic end-to-end: separable corpus, 5-fold cross-validation.
// ---------------------------------------------------------------------------
Outcome crit_synthetic_end_to_end() {
  Stopwatch watch;
  SyntheticSpec spec;
  spec.num_bags = 60;
  spec.num_classes = 3;
  spec.num_domains = 1;
  spec.feature_dim = 64;
  spec.noise_sigma = 0.0;
  spec.seed = 42;

  SyntheticCorpus corpus = gen_synthetic_bags(spec);
  ReduceBagsResult red = reduce_bags(corpus.bags, 5, 1);

  MixerConfig model;
  model.tokens = 5;
  model.channels = 64;
  model.token_hidden = 64;
  model.channel_hidden = 128;
  model.blocks = 2;
  model.num_classes = 3;
  model.num_domains = 1;
  model.domain_hidden = 16;

  TrainConfig tc;
  tc.epochs = 40;
  tc.optimizer.learning_rate = 1e-3;
  tc.folds = 5;
  tc.repeats = 1;
  tc.seed = 7;

  CrossvalReport rep = run_crossval(red.bags, model, tc, 4);
  const double elapsed = watch.seconds();

  Outcome o;
  o.pass = rep.mean_macro_f1 >= 0.95 && rep.mean_auroc >= 0.98 &&
           elapsed < 300.0;
  o.detail = "macro-F1 " + fmt(rep.mean_macro_f1) + ", AUROC " +
             fmt(rep.mean_auroc) + ", " + fmt(elapsed) + "s";
  return o;
}

// ---------------------------------------------------------------------------
// 7. Adversarial branch strips domain information without losing accuracy.
// ---------------------------------------------------------------------------

// Multinomial logistic probe fitted on one feature set by full-batch gradient
// descent from zero weights, scored on a held-out set. Deterministic.
double linear_probe_accuracy(const std::vector<std::vector<double>>& feats,
                             const std::vector<std::size_t>& labels,
                             const std::vector<std::vector<double>>& eval_feats,
                             const std::vector<std::size_t>& eval_labels,
                             std::size_t num_labels) {
  const std::size_t n = feats.size();
  const std::size_t d = feats.front().size();

  // Standardize features for a well-conditioned probe.
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (const auto& f : feats)
    for (std::size_t j = 0; j < d; ++j) mean[j] += f[j];
  for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);
  for (const auto& f : feats)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = f[j] - mean[j];
      sd[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j)
    sd[j] = std::sqrt(sd[j] / static_cast<double>(n)) + 1e-12;

  Matrix w(num_labels, d + 1);  // last column is the bias
  Matrix grad(num_labels, d + 1);
  std::vector<double> z(num_labels), xrow(d + 1);
  for (std::size_t iter = 0; iter < 500; ++iter) {
    grad.fill(0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j)
        xrow[j] = (feats[i][j] - mean[j]) / sd[j];
      xrow[d] = 1.0;
      for (std::size_t c = 0; c < num_labels; ++c) {
        z[c] = 0.0;
        for (std::size_t j = 0; j <= d; ++j) z[c] += w(c, j) * xrow[j];
      }
      const std::vector<double> p = softmax(z);
      for (std::size_t c = 0; c < num_labels; ++c) {
        const double delta = p[c] - (c == labels[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j <= d; ++j) grad(c, j) += delta * xrow[j];
      }
    }
    const double step = 0.5 / static_cast<double>(n);
    for (std::size_t idx = 0; idx < w.size(); ++idx)
      w.data()[idx] -= step * grad.data()[idx];
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval_feats.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j)
      xrow[j] = (eval_feats[i][j] - mean[j]) / sd[j];
    xrow[d] = 1.0;
    std::size_t arg = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < num_labels; ++c) {
      double dot = 0.0;
      for (std::size_t j = 0; j <= d; ++j) dot += w(c, j) * xrow[j];
      if (dot > best) {
        best = dot;
        arg = c;
      }
    }
    if (arg == eval_labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(eval_feats.size());
}

Outcome crit_adversarial_effect() {
  const std::size_t seeds = 5;
  double probe_adv = 0.0, probe_base = 0.0, f1_adv = 0.0, f1_base = 0.0;

  for (std::size_t s = 0; s < seeds; ++s) {
    SyntheticSpec spec;
    spec.num_bags = 60;
    spec.num_classes = 3;
    spec.num_domains = 6;
    spec.confound_domains = true;
    spec.domain_shift_magnitude = 2.0;
    spec.noise_sigma = 1.0;
    spec.feature_dim = 32;
    spec.patches_min = 32;
    spec.patches_max = 64;
    spec.seed = 100 + s;

    SyntheticCorpus corpus = gen_synthetic_bags(spec);
    ReduceBagsResult red = reduce_bags(corpus.bags, 4, 1);

    std::vector<std::size_t> labels(red.bags.size());
    for (std::size_t i = 0; i < red.bags.size(); ++i)
      labels[i] = red.bags[i].class_label;
    const std::vector<std::size_t> fold_of =
        stratified_kfold(labels, 4, 900 + s);
    std::vector<const PrototypeBag*> train_ptrs, test_ptrs;
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < red.bags.size(); ++i) {
      if (fold_of[i] == 0) {
        test_ptrs.push_back(&red.bags[i]);
        test_idx.push_back(i);
      } else {
        train_ptrs.push_back(&red.bags[i]);
        train_idx.push_back(i);
      }
    }

    MixerConfig model;
    model.tokens = 4;
    model.channels = 32;
    model.token_hidden = 32;
    model.channel_hidden = 64;
    model.blocks = 2;
    model.num_classes = 3;
    model.num_domains = 6;
    model.domain_hidden = 16;

    // Plain momentum SGD keeps the natural size ratio between the class and
    // domain gradients; an adaptive optimizer rescales the small domain-head
    // gradients up and the reversal game turns into unstable cycling instead
    // of settling where the domain clouds overlap.
    TrainConfig base_cfg;
    base_cfg.epochs = 150;
    base_cfg.batch_size = 8;
    base_cfg.optimizer.kind = OptimizerKind::sgd_momentum;
    base_cfg.optimizer.learning_rate = 2e-2;
    base_cfg.seed = 50 + s;
    base_cfg.alpha = 0.0;  // with the offset: reversal strength fixed at 0
    base_cfg.lambda_offset = true;

    TrainConfig adv_cfg = base_cfg;
    adv_cfg.alpha = 1.0;  // reversal strength ramps from 0 toward 1

    for (int variant = 0; variant < 2; ++variant) {
      const TrainConfig& tc = variant == 0 ? adv_cfg : base_cfg;
      TrainResult tr = train(train_ptrs, model, tc);

      // Pooled representations in eval mode; the probe is fitted on the
      // training bags and scored on the held-out bags, mirroring the F1 split.
      std::vector<std::vector<double>> train_feats, test_feats;
      std::vector<std::size_t> train_doms, test_doms;
      const auto pooled_of = [&](std::size_t i) {
        ForwardCache cache;
        forward(red.bags[i].prototypes, tr.params, false, nullptr, &cache);
        return std::vector<double>(cache.pooled.data(),
                                   cache.pooled.data() + cache.pooled.size());
      };
      for (std::size_t i : train_idx) {
        train_feats.push_back(pooled_of(i));
        train_doms.push_back(red.bags[i].domain_id);
      }
      for (std::size_t i : test_idx) {
        test_feats.push_back(pooled_of(i));
        test_doms.push_back(red.bags[i].domain_id);
      }
      const double probe = linear_probe_accuracy(train_feats, train_doms,
                                                 test_feats, test_doms, 6);
      const double f1 = evaluate(tr.params, test_ptrs).metrics.macro_f1;
      if (variant == 0) {
        probe_adv += probe;
        f1_adv += f1;
      } else {
        probe_base += probe;
        f1_base += f1;
      }
    }
  }

  probe_adv /= seeds;
  probe_base /= seeds;
  f1_adv /= seeds;
  f1_base /= seeds;

  Outcome o;
  const double probe_drop = probe_base - probe_adv;
  const double f1_cost = f1_base - f1_adv;
  o.pass = probe_drop >= 0.10 && f1_cost < 0.05;
  o.detail = "domain probe " + fmt(probe_base) + " -> " + fmt(probe_adv) +
             " (drop " + fmt(probe_drop) + "), macro-F1 " + fmt(f1_base) +
             " -> " + fmt(f1_adv) + " (cost " + fmt(f1_cost) + ")";
  return o;
}

// ---------------------------------------------------------------------------
// 8. Forward+backward wall time is linear in the token count k.
// ---------------------------------------------------------------------------
Outcome crit_linear_scaling() {
  MixerConfig base;
  base.channels = 256;
  base.token_hidden = 256;
  base.channel_hidden = 512;
  base.blocks = 4;
  base.num_classes = 3;
  base.num_domains = 3;
  base.domain_hidden = 64;

  const std::vector<std::size_t> ks = {8, 16, 32, 64};
  std::vector<double> med(ks.size());
  Rng rng(5150);

  for (std::size_t i = 0; i < ks.size(); ++i) {
    MixerConfig cfg = base;
    cfg.tokens = ks[i];
    MixerParams params = init_params(cfg, 3);
    const Matrix x = random_matrix(cfg.tokens, cfg.channels, rng);

    const auto one_iter = [&]() {
      ForwardCache cache;
      ForwardResult out = forward(x, params, true, nullptr, &cache);
      SoftmaxCrossEntropy ce_c = softmax_cross_entropy(out.class_logits, 0);
      SoftmaxCrossEntropy ce_d = softmax_cross_entropy(out.domain_logits, 1);
      MixerParams g = backward(params, cache, ce_c.grad, ce_d.grad, 1.0);
      return g.cls_b(0, 0);  // keep the result alive
    };

    volatile double sink = one_iter();  // warm-up
    std::vector<double> times;
    for (int rep = 0; rep < 5; ++rep) {
      Stopwatch watch;
      sink = one_iter();
      times.push_back(watch.seconds());
    }
    (void)sink;
    std::sort(times.begin(), times.end());
    med[i] = times[times.size() / 2];
  }

  // Least-squares line t = a + b*k over the four medians.
  const double n = static_cast<double>(ks.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double kx = static_cast<double>(ks[i]);
    sx += kx;
    sy += med[i];
    sxx += kx * kx;
    sxy += kx * med[i];
  }
  const double b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double a = (sy - b * sx) / n;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double kx = static_cast<double>(ks[i]);
    const double fitted = a + b * kx;
    ss_res += (med[i] - fitted) * (med[i] - fitted);
    ss_tot += (med[i] - sy / n) * (med[i] - sy / n);
  }
  const double r2 = 1.0 - ss_res / ss_tot;

  bool ratios_ok = true;
  std::string ratio_text;
  for (std::size_t i = 1; i < ks.size(); ++i) {
    const double ratio = med[i] / med[i - 1];
    ratios_ok &= (ratio >= 1.5 && ratio <= 2.8);
    ratio_text += (i > 1 ? "," : "") + fmt(ratio);
  }

  Outcome o;
  o.pass = r2 >= 0.98 && ratios_ok;
  o.detail = "R^2 " + fmt(r2) + ", doubling ratios " + ratio_text +
             ", medians(ms) " + fmt(med[0] * 1e3) + "/" + fmt(med[1] * 1e3) +
             "/" + fmt(med[2] * 1e3) + "/" + fmt(med[3] * 1e3);
  return o;
}

// ---------------------------------------------------------------------------
// 9. Matrix files and checkpoints round-trip bit-exactly.
// ---------------------------------------------------------------------------
bool bits_equal(const Matrix& lhs, const Matrix& rhs) {
  if (lhs.rows() != rhs.rows() || lhs.cols() != rhs.cols()) return false;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(lhs.data()[i]) !=
        std::bit_cast<std::uint64_t>(rhs.data()[i])) {
      return false;
    }
  }
  return true;
}

Outcome crit_round_trips() {
  const fs::path dir = fs::temp_directory_path() / "pmx_acceptance_roundtrip";
  fs::create_directories(dir);
  Rng rng(31337);
  const double specials[] = {-0.0, 0.0, 5e-324, -5e-324,
                             1.7976931348623157e308,
                             -1.7976931348623157e308, 1e-300};
  std::size_t passed = 0;
  const std::size_t cases = 100;

  for (std::size_t c = 0; c < cases; ++c) {
    // Matrix file round-trip.
    Matrix m = random_matrix(1 + rng.index(6), 1 + rng.index(6), rng, 10.0);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (rng.index(8) == 0) m.data()[i] = specials[rng.index(7)];
    }
    const fs::path mpath = dir / ("case_" + std::to_string(c) + ".pmb");
    write_matrix(mpath, m);
    const bool matrix_ok = bits_equal(m, read_matrix(mpath));

    // Checkpoint round-trip with a random small architecture.
    MixerConfig cfg;
    cfg.tokens = 1 + rng.index(4);
    cfg.channels = 1 + rng.index(5);
    cfg.token_hidden = 1 + rng.index(4);
    cfg.channel_hidden = 1 + rng.index(4);
    cfg.blocks = 1 + rng.index(3);
    cfg.num_classes = 2 + rng.index(3);
    cfg.num_domains = 1 + rng.index(3);
    cfg.domain_hidden = 1 + rng.index(3);
    cfg.final_norm = rng.index(2) == 0;
    MixerParams params = init_params(cfg, derive_seed(4, c));
    for_each_param(params, [&](const std::string&, Matrix& t, bool) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (rng.index(10) == 0) t.data()[i] = specials[rng.index(7)];
      }
    });
    const fs::path cpath = dir / ("case_" + std::to_string(c) + ".pmx");
    save_checkpoint(cpath, params);
    const MixerParams back = load_checkpoint(cpath);

    bool ckpt_ok = back.config.tokens == cfg.tokens &&
                   back.config.channels == cfg.channels &&
                   back.config.blocks == cfg.blocks &&
                   back.config.final_norm == cfg.final_norm;
    if (ckpt_ok) {
      std::vector<const Matrix*> orig, rt;
      for_each_param(params, [&](const std::string&, const Matrix& t, bool) {
        orig.push_back(&t);
      });
      for_each_param(back, [&](const std::string&, const Matrix& t, bool) {
        rt.push_back(&t);
      });
      for (std::size_t t = 0; t < orig.size(); ++t) {
        ckpt_ok &= bits_equal(*orig[t], *rt[t]);
      }
    }
    if (matrix_ok && ckpt_ok) ++passed;
  }
  fs::remove_all(dir);

  Outcome o;
  o.pass = passed == cases;
  o.detail = std::to_string(passed) + "/" + std::to_string(cases) +
             " cases bit-identical";
  return o;
}

// ---------------------------------------------------------------------------
// 10. Reference-shape parameter count vs the documented 14M +/- 1.5M budget.
// ---------------------------------------------------------------------------
Outcome crit_reference_param_count() {
  MixerConfig cfg;
  cfg.tokens = 5;
  cfg.channels = 1024;
  cfg.token_hidden = 1024;
  cfg.channel_hidden = 2048;
  cfg.blocks = 12;
  cfg.num_classes = 2;
  cfg.num_domains = 1;
  cfg.domain_hidden = 512;

  const std::size_t count = param_count(cfg);
  const double millions = static_cast<double>(count) / 1e6;

  MixerConfig three = cfg;
  three.blocks = 3;
  const std::size_t count3 = param_count(three);

  Outcome o;
  o.pass = millions >= 12.5 && millions <= 15.5;
  o.detail = "analytic count " + std::to_string(count) + " (" + fmt(millions) +
             "M) at 12 blocks vs budget [12.5M, 15.5M]; counting rule is "
             "documented in the profile output; the budget matches a 3-block "
             "stack (" +
             std::to_string(count3) + " = " +
             fmt(static_cast<double>(count3) / 1e6) + "M)";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* title;
    Outcome (*run)();
  };
  const std::vector<Criterion> criteria = {
      {"analytic gradients match central finite differences",
       crit_gradient_fidelity},
      {"clustering reaches the exhaustive two-cluster optimum",
       crit_clustering_optimality},
      {"reversal layer scales backbone gradients by -lambda",
       crit_reversal_sign_law},
      {"zero parameters give zero logits and ln(C) loss",
       crit_zero_network_identity},
      {"reversal-strength schedule endpoints and monotonicity", crit_schedule},
      {"synthetic end-to-end cross-validation quality",
       crit_synthetic_end_to_end},
      {"adversarial branch strips domain information cheaply",
       crit_adversarial_effect},
      {"forward+backward time scales linearly in token count",
       crit_linear_scaling},
      {"matrix and checkpoint files round-trip bit-exactly", crit_round_trips},
      {"reference-shape parameter count within documented budget",
       crit_reference_param_count},
  };

  int only = 0;
  if (argc > 1) {
    only = std::atoi(argv[1]);
    if (only < 1 || static_cast<std::size_t>(only) > criteria.size()) {
      std::fprintf(stderr, "usage: %s [criterion 1..%zu]\n", argv[0],
                   criteria.size());
      return 2;
    }
  }

  bool all_pass = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only && static_cast<std::size_t>(only) != i + 1) continue;
    const Outcome o = criteria[i].run();
    std::printf("[%2zu] %s  %s  (%s)\n", i + 1, o.pass ? "PASS" : "FAIL",
                criteria[i].title, o.detail.c_str());
    std::fflush(stdout);
    all_pass &= o.pass;
  }
  return all_pass ? 0 : 1;
}
