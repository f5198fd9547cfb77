#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "pmx/bags.hpp"
#include "pmx/errors.hpp"
#include "pmx/metrics.hpp"
#include "pmx/mixer.hpp"
#include "pmx/optimizer.hpp"
#include "pmx/profile.hpp"
#include "pmx/rng.hpp"

namespace pmx {

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 1;  // bags per optimizer step
  OptimizerConfig optimizer;
  double alpha = 1.0;  // multiplier inside the reversal-strength schedule
  bool lambda_offset = false;  // subtract 1 so the schedule starts at 0
  std::size_t folds = 5;
  std::size_t repeats = 1;
  std::uint64_t seed = 0;
};

inline void validate_train_config(const TrainConfig& c) {
  if (c.epochs == 0) throw ParamError("train config: epochs must be >= 1");
  if (c.batch_size == 0) throw ParamError("train config: batch_size must be >= 1");
  if (c.folds == 0) throw ParamError("train config: folds must be >= 1");
  if (c.repeats == 0) throw ParamError("train config: repeats must be >= 1");
  if (!(c.alpha >= 0.0)) throw ParamError("train config: alpha must be >= 0");
  validate_optimizer_config(c.optimizer);
}

/// Reversal strength for an epoch: r = (e/E)*alpha, lambda = 2/(1+exp(-10r)).
/// Nondecreasing in e and bounded in [1, 2) for alpha >= 0.
inline double lambda_schedule(std::size_t epoch, std::size_t total_epochs,
                              double alpha) {
  if (total_epochs == 0) throw ParamError("lambda_schedule: total epochs must be >= 1");
  if (epoch > total_epochs) {
    throw ParamError("lambda_schedule: epoch " + std::to_string(epoch) +
                     " beyond total " + std::to_string(total_epochs));
  }
  const double r = (static_cast<double>(epoch) / static_cast<double>(total_epochs)) * alpha;
  return 2.0 / (1.0 + std::exp(-10.0 * r));
}

/// Per-class round-robin fold assignment after a seeded in-class shuffle.
/// Class c's shuffled members land in folds (c + i) % folds, so remainders
/// rotate across folds instead of piling onto fold 0. Fold sizes within a
/// class differ by at most 1.
inline std::vector<std::size_t> stratified_kfold(
    const std::vector<std::size_t>& labels, std::size_t folds,
    std::uint64_t seed) {
  if (folds == 0) throw ParamError("stratified split: folds must be >= 1");
  if (labels.empty()) throw ParamError("stratified split: no labels");
  const std::size_t num_classes = 1 + *std::max_element(labels.begin(), labels.end());
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);

  std::vector<std::size_t> fold_of(labels.size(), 0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (members[c].empty()) continue;
    if (members[c].size() < folds) {
      throw ParamError("stratified split: class " + std::to_string(c) + " has " +
                       std::to_string(members[c].size()) +
                       " members, fewer than " + std::to_string(folds) + " folds");
    }
    Rng rng(derive_seed(seed, "fold-class-" + std::to_string(c)));
    rng.shuffle(members[c].begin(), members[c].end());
    for (std::size_t i = 0; i < members[c].size(); ++i) {
      fold_of[members[c][i]] = (c + i) % folds;
    }
  }
  return fold_of;
}

namespace detail {

inline void check_bag_against_config(const PrototypeBag& bag,
                                     const MixerConfig& cfg, bool check_domain) {
  if (bag.prototypes.rows() != cfg.tokens || bag.prototypes.cols() != cfg.channels) {
    throw DimensionError("bag '" + bag.slide_id + "': prototypes " +
                         bag.prototypes.shape_str() + ", model expects " +
                         std::to_string(cfg.tokens) + "x" +
                         std::to_string(cfg.channels));
  }
  if (bag.class_label >= cfg.num_classes) {
    throw DataError("bag '" + bag.slide_id + "': class label " +
                    std::to_string(bag.class_label) + " out of range for " +
                    std::to_string(cfg.num_classes) + " classes");
  }
  if (check_domain && bag.domain_id >= cfg.num_domains) {
    throw DataError("bag '" + bag.slide_id + "': domain id " +
                    std::to_string(bag.domain_id) + " out of range for " +
                    std::to_string(cfg.num_domains) + " domains");
  }
}

}  // namespace detail

/// One pass over the bags in a shuffled order: forward, class and domain
/// losses, backward with the given reversal strength, one optimizer step per
/// batch. Returns the mean losses of the epoch.
inline EpochStats train_epoch(MixerParams& params, OptState& opt_state,
                              const std::vector<const PrototypeBag*>& bags,
                              double lambda, const OptimizerConfig& opt_cfg,
                              std::size_t batch_size, Rng& rng) {
  if (bags.empty()) throw DataError("train epoch: no bags");
  if (batch_size == 0) throw ParamError("train epoch: batch_size must be >= 1");
  const MixerConfig& cfg = params.config;

  std::vector<std::size_t> order(bags.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());

  EpochStats stats;
  stats.lambda = lambda;
  MixerParams batch_grads = make_zero_params(cfg);
  std::vector<Matrix*> acc;
  for_each_param(batch_grads, [&](const std::string&, Matrix& m, bool) { acc.push_back(&m); });
  std::size_t in_batch = 0;

  auto flush = [&]() {
    if (in_batch == 0) return;
    if (in_batch > 1) {
      const double inv = 1.0 / static_cast<double>(in_batch);
      for_each_param(batch_grads,
                     [&](const std::string&, Matrix& m, bool) { scale_inplace(m, inv); });
    }
    optimizer_step(params, batch_grads, opt_state, opt_cfg);
    for_each_param(batch_grads, [&](const std::string&, Matrix& m, bool) { m.fill(0.0); });
    in_batch = 0;
  };

  for (std::size_t idx : order) {
    const PrototypeBag& bag = *bags[idx];
    detail::check_bag_against_config(bag, cfg, true);
    ForwardCache cache;
    ForwardResult out = forward(bag.prototypes, params, true,
                                cfg.dropout_rate > 0.0 ? &rng : nullptr, &cache);
    SoftmaxCrossEntropy ce_cls = softmax_cross_entropy(out.class_logits, bag.class_label);
    SoftmaxCrossEntropy ce_dom = softmax_cross_entropy(out.domain_logits, bag.domain_id);
    if (!std::isfinite(ce_cls.loss) || !std::isfinite(ce_dom.loss)) {
      throw NumericError("non-finite loss on bag '" + bag.slide_id + "'");
    }
    stats.class_loss += ce_cls.loss;
    stats.domain_loss += ce_dom.loss;

    MixerParams grads = backward(params, cache, ce_cls.grad, ce_dom.grad, lambda);
    std::size_t t = 0;
    for_each_param(grads, [&](const std::string&, const Matrix& g, bool) {
      add_inplace(*acc[t++], g);
    });
    ++in_batch;
    if (in_batch == batch_size) flush();
  }
  flush();

  stats.class_loss /= static_cast<double>(bags.size());
  stats.domain_loss /= static_cast<double>(bags.size());
  return stats;
}

struct TrainResult {
  MixerParams params;
  std::vector<EpochStats> curve;
  double seconds_per_epoch = 0.0;
};

/// Full training run: seeded init, per-epoch reversal schedule, epoch-seeded
/// shuffling. Deterministic given (config, bags, seed).
inline TrainResult train(const std::vector<const PrototypeBag*>& bags,
                         const MixerConfig& model_cfg, const TrainConfig& cfg) {
  validate_config(model_cfg);
  validate_train_config(cfg);
  if (bags.empty()) throw DataError("train: no bags");
  for (const PrototypeBag* b : bags) detail::check_bag_against_config(*b, model_cfg, true);

  TrainResult result;
  result.params = init_params(model_cfg, derive_seed(cfg.seed, "params"));
  OptState opt_state = make_opt_state(result.params);
  result.curve.reserve(cfg.epochs);

  Stopwatch watch;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    double lambda = lambda_schedule(e, cfg.epochs, cfg.alpha);
    if (cfg.lambda_offset) lambda -= 1.0;
    Rng epoch_rng(derive_seed(cfg.seed, "epoch-" + std::to_string(e)));
    try {
      result.curve.push_back(train_epoch(result.params, opt_state, bags, lambda,
                                         cfg.optimizer, cfg.batch_size, epoch_rng));
    } catch (const NumericError& err) {
      throw NumericError("epoch " + std::to_string(e) + ": " + err.what());
    }
  }
  result.seconds_per_epoch = watch.seconds() / static_cast<double>(cfg.epochs);
  return result;
}

struct EvalResult {
  std::vector<std::size_t> predictions;
  Matrix scores;  // rows = bags, columns = class probabilities
  MetricsReport metrics;
};

/// Argmax predictions and softmax scores for every bag, plus the metric
/// suite against the true class labels. Domain ids play no part here: held
/// out bags carry domain ids the model never saw, so domain loss is a
/// training-time quantity only.
inline EvalResult evaluate(const MixerParams& params,
                           const std::vector<const PrototypeBag*>& bags) {
  if (bags.empty()) throw DataError("evaluate: no bags");
  const MixerConfig& cfg = params.config;
  EvalResult result;
  result.scores = Matrix(bags.size(), cfg.num_classes);
  result.predictions.resize(bags.size());
  std::vector<std::size_t> truth(bags.size());

  for (std::size_t i = 0; i < bags.size(); ++i) {
    const PrototypeBag& bag = *bags[i];
    detail::check_bag_against_config(bag, cfg, false);
    ForwardResult out = forward(bag.prototypes, params);
    const std::vector<double> probs = softmax(out.class_logits);
    std::size_t best = 0;
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
      result.scores(i, c) = probs[c];
      if (probs[c] > probs[best]) best = c;
    }
    result.predictions[i] = best;
    truth[i] = bag.class_label;
  }
  result.metrics = compute_metrics(truth, result.predictions, result.scores,
                                   cfg.num_classes);
  return result;
}

struct FoldOutcome {
  std::size_t repeat = 0;
  std::size_t fold = 0;
  double macro_f1 = 0.0;
  double auroc = 0.0;
  double final_class_loss = 0.0;
  double final_domain_loss = 0.0;
  double seconds_per_epoch = 0.0;
};

struct CrossvalReport {
  std::vector<FoldOutcome> rows;  // folds x repeats entries
  double mean_macro_f1 = 0.0, std_macro_f1 = 0.0;
  double mean_auroc = 0.0, std_auroc = 0.0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= n;  // population variance: one sample gives exactly 0
  return {mean, std::sqrt(var)};
}

}  // namespace detail

/// Stratified k-fold cross-validation with fresh parameters per (repeat,
/// fold). folds=1 degenerates to fit-and-evaluate on the full set (no held
/// out data); with folds >= 2 a bag is never evaluated by a model that saw
/// it in training. Every (repeat, fold) cell is seeded independently, so
/// running cells on `jobs` worker threads changes nothing but wall time.
inline CrossvalReport run_crossval(const std::vector<PrototypeBag>& bags,
                                   const MixerConfig& model_cfg,
                                   const TrainConfig& cfg, std::size_t jobs = 1) {
  validate_train_config(cfg);
  if (bags.empty()) throw DataError("crossval: no bags");

  std::vector<std::size_t> labels(bags.size());
  for (std::size_t i = 0; i < bags.size(); ++i) labels[i] = bags[i].class_label;

  struct Task {
    std::size_t repeat, fold;
    std::uint64_t seed;
    std::vector<std::size_t> fold_of;
  };
  std::vector<Task> tasks;
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const std::uint64_t repeat_seed = derive_seed(cfg.seed, "repeat-" + std::to_string(r));
    const std::vector<std::size_t> fold_of =
        stratified_kfold(labels, cfg.folds, repeat_seed);
    for (std::size_t f = 0; f < cfg.folds; ++f) {
      tasks.push_back({r, f, derive_seed(repeat_seed, "fold-" + std::to_string(f)),
                       fold_of});
    }
  }

  std::vector<FoldOutcome> rows(tasks.size());
  auto run_task = [&](std::size_t ti) {
    const Task& task = tasks[ti];
    std::vector<const PrototypeBag*> train_set, eval_set;
    for (std::size_t i = 0; i < bags.size(); ++i) {
      if (cfg.folds == 1) {
        train_set.push_back(&bags[i]);
        eval_set.push_back(&bags[i]);
      } else if (task.fold_of[i] == task.fold) {
        eval_set.push_back(&bags[i]);
      } else {
        train_set.push_back(&bags[i]);
      }
    }
    if (train_set.empty() || eval_set.empty()) {
      throw DataError("crossval: empty train or eval split in fold " +
                      std::to_string(task.fold));
    }
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = task.seed;
    TrainResult trained = train(train_set, model_cfg, fold_cfg);
    EvalResult eval = evaluate(trained.params, eval_set);

    FoldOutcome row;
    row.repeat = task.repeat;
    row.fold = task.fold;
    row.macro_f1 = eval.metrics.macro_f1;
    row.auroc = eval.metrics.auroc;
    row.final_class_loss = trained.curve.back().class_loss;
    row.final_domain_loss = trained.curve.back().domain_loss;
    row.seconds_per_epoch = trained.seconds_per_epoch;
    rows[ti] = row;
  };

  if (jobs <= 1 || tasks.size() <= 1) {
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) run_task(ti);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
      for (;;) {
        const std::size_t ti = next.fetch_add(1);
        if (ti >= tasks.size()) return;
        try {
          run_task(ti);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min(jobs, tasks.size());
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  CrossvalReport report;
  report.rows = std::move(rows);
  std::vector<double> f1s, aurocs;
  for (const FoldOutcome& row : report.rows) {
    f1s.push_back(row.macro_f1);
    aurocs.push_back(row.auroc);
  }
  auto [mf, sf] = detail::mean_std(f1s);
  report.mean_macro_f1 = mf;
  report.std_macro_f1 = sf;
  auto [ma, sa] = detail::mean_std(aurocs);
  report.mean_auroc = ma;
  report.std_auroc = sa;
  return report;
}

}  // namespace pmx
