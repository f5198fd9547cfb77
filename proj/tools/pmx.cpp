// Command-line surface for the prototype-table pipeline: synthetic corpus
// generation, bag reduction, training, cross-validation, k sweeps, and
// checkpoint evaluation. Every command writes a record.txt describing the
// resolved configuration and a content hash of its inputs.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pmx/checkpoint.hpp"
#include "pmx/errors.hpp"
#include "pmx/io.hpp"
#include "pmx/metrics.hpp"
#include "pmx/mixer.hpp"
#include "pmx/profile.hpp"
#include "pmx/reports.hpp"
#include "pmx/synthetic.hpp"
#include "pmx/train.hpp"

namespace {

using namespace pmx;

std::string join_args(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    if (i) out += ' ';
    const std::string arg = argv[i];
    if (arg.find(' ') != std::string::npos) {
      out += '"' + arg + '"';
    } else {
      out += arg;
    }
  }
  return out;
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

std::string trim(const std::string& s) {
  const char* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

// Expands `--config FILE` into command-line tokens. Each key=value line
// becomes `--key=value`, but only when the flag was not already given
// explicitly, so explicit flags always win over the file.
std::vector<std::string> expand_config_args(const std::vector<std::string>& in) {
  std::string path;
  std::vector<std::string> args;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == "--config" && i + 1 < in.size()) {
      path = in[i + 1];
      ++i;
      continue;
    }
    if (in[i].rfind("--config=", 0) == 0) {
      path = in[i].substr(9);
      continue;
    }
    args.push_back(in[i]);
  }
  if (path.empty()) return args;

  std::ifstream file(path);
  if (!file) throw ParamError("cannot open config file '" + path + "'");
  const auto given = [&args](const std::string& flag) {
    return std::any_of(args.begin(), args.end(), [&flag](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
  };
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(file, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#' || text[0] == ';') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ParamError("config file '" + path + "' line " +
                       std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(text.substr(0, eq));
    std::string value = trim(text.substr(eq + 1));
    if (value.size() >= 2 &&
        ((value.front() == '"' && value.back() == '"') ||
         (value.front() == '\'' && value.back() == '\''))) {
      value = value.substr(1, value.size() - 2);
    }
    const std::string flag = "--" + key;
    if (given(flag)) continue;
    if (key == "final-norm" && given("--no-final-norm")) continue;
    if (key == "no-final-norm" && given("--final-norm")) continue;
    args.push_back(flag + "=" + value);
  }
  return args;
}

// ---------------------------------------------------------------------------
// Flag bundles
// ---------------------------------------------------------------------------

struct ModelFlags {
  std::size_t blocks = 12;
  std::size_t token_hidden = 1024;
  std::size_t channel_hidden = 2048;
  std::size_t domain_hidden = 512;
  std::size_t classes = 0;  // 0 = take from the manifest
  std::size_t domains = 0;  // 0 = infer from the manifest's domain ids
  double dropout = 0.0;
  bool final_norm = true;

  void attach(CLI::App* cmd) {
    cmd->add_option("--blocks", blocks, "Stacked mixer blocks")
        ->capture_default_str();
    cmd->add_option("--token-hidden", token_hidden,
                    "Hidden width of the token-mixing MLP")
        ->capture_default_str();
    cmd->add_option("--channel-hidden", channel_hidden,
                    "Hidden width of the channel-mixing MLP")
        ->capture_default_str();
    cmd->add_option("--domain-hidden", domain_hidden,
                    "Hidden width of the domain-predictor MLP")
        ->capture_default_str();
    cmd->add_option("--classes", classes,
                    "Class count (default: read from the manifest)");
    cmd->add_option("--domains", domains,
                    "Domain count (default: inferred from domain ids)");
    cmd->add_option("--dropout", dropout, "Dropout rate after each mixing MLP")
        ->capture_default_str();
    cmd->add_flag("--final-norm,!--no-final-norm", final_norm,
                  "Normalize once more before pooling");
  }

  MixerConfig resolve(std::size_t tokens, std::size_t channels,
                      std::size_t manifest_classes,
                      std::size_t inferred_domains) const {
    MixerConfig c;
    c.tokens = tokens;
    c.channels = channels;
    c.token_hidden = token_hidden;
    c.channel_hidden = channel_hidden;
    c.blocks = blocks;
    c.num_classes = classes ? classes : manifest_classes;
    c.num_domains = domains ? domains : std::max<std::size_t>(inferred_domains, 1);
    c.domain_hidden = domain_hidden;
    c.dropout_rate = dropout;
    c.final_norm = final_norm;
    validate_config(c);
    return c;
  }

  void record(std::vector<std::pair<std::string, std::string>>& cfg,
              const MixerConfig& m) const {
    cfg.emplace_back("model.tokens", std::to_string(m.tokens));
    cfg.emplace_back("model.channels", std::to_string(m.channels));
    cfg.emplace_back("model.token_hidden", std::to_string(m.token_hidden));
    cfg.emplace_back("model.channel_hidden", std::to_string(m.channel_hidden));
    cfg.emplace_back("model.blocks", std::to_string(m.blocks));
    cfg.emplace_back("model.classes", std::to_string(m.num_classes));
    cfg.emplace_back("model.domains", std::to_string(m.num_domains));
    cfg.emplace_back("model.domain_hidden", std::to_string(m.domain_hidden));
    cfg.emplace_back("model.dropout", format_double(m.dropout_rate));
    cfg.emplace_back("model.final_norm", bool_str(m.final_norm));
  }
};

struct TrainFlags {
  std::size_t epochs = 150;
  std::size_t batch_size = 1;
  std::string optimizer = "adam";
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;
  double alpha = 1.0;
  bool lambda_offset = false;
  std::uint64_t seed = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--batch-size", batch_size, "Bags per optimizer step")
        ->capture_default_str();
    cmd->add_option("--optimizer", optimizer, "adam or sgd")
        ->check(CLI::IsMember({"adam", "sgd"}))
        ->capture_default_str();
    cmd->add_option("--lr", lr, "Learning rate")->capture_default_str();
    cmd->add_option("--beta1", beta1, "Adam first-moment decay")
        ->capture_default_str();
    cmd->add_option("--beta2", beta2, "Adam second-moment decay")
        ->capture_default_str();
    cmd->add_option("--eps", eps, "Adam epsilon")->capture_default_str();
    cmd->add_option("--momentum", momentum, "SGD momentum")->capture_default_str();
    cmd->add_option("--alpha", alpha,
                    "Multiplier inside the reversal-strength schedule")
        ->capture_default_str();
    cmd->add_flag("--lambda-offset", lambda_offset,
                  "Subtract 1 from the schedule so it starts at 0");
    cmd->add_option("--seed", seed, "Master seed")->capture_default_str();
  }

  TrainConfig resolve(std::size_t folds = 1, std::size_t repeats = 1) const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.optimizer.kind =
        optimizer == "adam" ? OptimizerKind::adam : OptimizerKind::sgd_momentum;
    t.optimizer.learning_rate = lr;
    t.optimizer.beta1 = beta1;
    t.optimizer.beta2 = beta2;
    t.optimizer.eps = eps;
    t.optimizer.momentum = momentum;
    t.alpha = alpha;
    t.lambda_offset = lambda_offset;
    t.folds = folds;
    t.repeats = repeats;
    t.seed = seed;
    validate_train_config(t);
    return t;
  }

  void record(std::vector<std::pair<std::string, std::string>>& cfg,
              const TrainConfig& t) const {
    cfg.emplace_back("train.epochs", std::to_string(t.epochs));
    cfg.emplace_back("train.batch_size", std::to_string(t.batch_size));
    cfg.emplace_back("train.optimizer", optimizer);
    cfg.emplace_back("train.lr", format_double(t.optimizer.learning_rate));
    cfg.emplace_back("train.beta1", format_double(t.optimizer.beta1));
    cfg.emplace_back("train.beta2", format_double(t.optimizer.beta2));
    cfg.emplace_back("train.eps", format_double(t.optimizer.eps));
    cfg.emplace_back("train.momentum", format_double(t.optimizer.momentum));
    cfg.emplace_back("train.alpha", format_double(t.alpha));
    cfg.emplace_back("train.lambda_offset", bool_str(t.lambda_offset));
    cfg.emplace_back("train.folds", std::to_string(t.folds));
    cfg.emplace_back("train.repeats", std::to_string(t.repeats));
    cfg.emplace_back("train.seed", std::to_string(t.seed));
  }
};

struct LoadedPrototypes {
  LoadedDataset ds;
  std::size_t tokens = 0;
};

LoadedPrototypes load_prototypes(const std::string& manifest) {
  LoadedPrototypes out;
  out.ds = load_dataset(manifest);
  if (!out.ds.is_prototype()) {
    throw DataError("manifest '" + manifest +
                    "' holds raw embeddings; run `reduce` first");
  }
  out.tokens = out.ds.prototypes.front().prototypes.rows();
  return out;
}

std::vector<const PrototypeBag*> bag_ptrs(const std::vector<PrototypeBag>& bags) {
  std::vector<const PrototypeBag*> out;
  out.reserve(bags.size());
  for (const auto& b : bags) out.push_back(&b);
  return out;
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_gen_synthetic(const SyntheticSpec& spec, const std::string& out,
                      const std::string& cmdline) {
  gen_synthetic(spec, out);
  RunRecord rec;
  rec.command_line = cmdline;
  rec.seed = spec.seed;
  rec.input_hash = hash_dataset(fs::path(out) / "manifest.tsv");
  rec.config = {
      {"bags", std::to_string(spec.num_bags)},
      {"classes", std::to_string(spec.num_classes)},
      {"domains", std::to_string(spec.num_domains)},
      {"min_patches", std::to_string(spec.patches_min)},
      {"max_patches", std::to_string(spec.patches_max)},
      {"n", std::to_string(spec.feature_dim)},
      {"signal_fraction", format_double(spec.signal_fraction)},
      {"shift", format_double(spec.domain_shift_magnitude)},
      {"noise", format_double(spec.noise_sigma)},
      {"background_centers", std::to_string(spec.background_centers)},
      {"confound_domains", bool_str(spec.confound_domains)},
      {"seed", std::to_string(spec.seed)},
  };
  rec.artifacts = {"manifest.tsv", "bags/", "ground_truth.tsv"};
  write_run_record(out, rec);
  std::cout << "wrote " << spec.num_bags << " bags under " << out << "\n";
  return 0;
}

int cmd_reduce(const std::string& manifest, std::size_t k, std::uint64_t seed,
               const std::string& out, std::size_t restarts, bool widen_f32,
               const std::string& cmdline) {
  const std::uint64_t in_hash = hash_dataset(manifest);
  ReduceDatasetResult res = reduce_dataset(manifest, k, seed, out, restarts, widen_f32);
  RunRecord rec;
  rec.command_line = cmdline;
  rec.seed = seed;
  rec.input_hash = in_hash;
  rec.config = {
      {"manifest", manifest},
      {"k", std::to_string(k)},
      {"restarts", std::to_string(restarts)},
      {"widen_f32", bool_str(widen_f32)},
      {"seed", std::to_string(seed)},
  };
  rec.artifacts = {"manifest.tsv", "bags/", "report.csv"};
  write_run_record(out, rec);
  std::cout << "reduced " << res.manifest.entries.size() << " bags to k=" << k;
  if (res.failed) std::cout << " (" << res.failed << " skipped, see report.csv)";
  std::cout << "\n";
  return 0;
}

int cmd_train(const std::string& manifest, const std::string& out,
              const ModelFlags& mf, const TrainFlags& tf, bool profile,
              const std::string& cmdline) {
  const std::uint64_t in_hash = hash_dataset(manifest);
  LoadedPrototypes data = load_prototypes(manifest);
  MixerConfig model_cfg =
      mf.resolve(data.tokens, data.ds.feature_dim, data.ds.manifest.num_classes,
                 infer_num_domains(data.ds.manifest));
  TrainConfig train_cfg = tf.resolve();

  TrainResult result = train(bag_ptrs(data.ds.prototypes), model_cfg, train_cfg);
  EvalResult eval = evaluate(result.params, bag_ptrs(data.ds.prototypes));

  fs::create_directories(out);
  save_checkpoint(fs::path(out) / "checkpoint.pmx", result.params);
  detail::write_file_bytes(fs::path(out) / "losses.csv",
                           encode_loss_curve_csv(result.curve));
  detail::write_file_bytes(fs::path(out) / "metrics.csv",
                           encode_metrics_csv(eval.metrics));

  RunRecord rec;
  rec.command_line = cmdline;
  rec.seed = train_cfg.seed;
  rec.input_hash = in_hash;
  rec.config.emplace_back("manifest", manifest);
  mf.record(rec.config, model_cfg);
  tf.record(rec.config, train_cfg);
  rec.artifacts = {"checkpoint.pmx", "losses.csv", "metrics.csv"};

  CostProfile cost;
  cost.param_count = param_count(model_cfg);
  cost.peak_resident_bytes = peak_resident_bytes();
  cost.seconds_per_epoch = result.seconds_per_epoch;
  const std::string profile_text = encode_profile(model_cfg, cost);
  if (profile) {
    detail::write_file_bytes(fs::path(out) / "profile.txt", profile_text);
    rec.artifacts.push_back("profile.txt");
    std::cout << profile_text;
  }
  write_run_record(out, rec);

  std::cout << "final class loss " << format_double(result.curve.back().class_loss)
            << ", domain loss " << format_double(result.curve.back().domain_loss)
            << "\n"
            << summarize_metrics(eval.metrics);
  return 0;
}

int cmd_crossval(const std::string& manifest, const std::string& out,
                 const ModelFlags& mf, const TrainFlags& tf, std::size_t folds,
                 std::size_t repeats, std::size_t jobs, bool profile,
                 const std::string& cmdline) {
  const std::uint64_t in_hash = hash_dataset(manifest);
  LoadedPrototypes data = load_prototypes(manifest);
  MixerConfig model_cfg =
      mf.resolve(data.tokens, data.ds.feature_dim, data.ds.manifest.num_classes,
                 infer_num_domains(data.ds.manifest));
  TrainConfig train_cfg = tf.resolve(folds, repeats);

  CrossvalReport report = run_crossval(data.ds.prototypes, model_cfg, train_cfg, jobs);

  fs::create_directories(out);
  detail::write_file_bytes(fs::path(out) / "metrics.csv", encode_crossval_csv(report));
  detail::write_file_bytes(fs::path(out) / "summary.txt", summarize_crossval(report));

  RunRecord rec;
  rec.command_line = cmdline;
  rec.seed = train_cfg.seed;
  rec.input_hash = in_hash;
  rec.config.emplace_back("manifest", manifest);
  rec.config.emplace_back("jobs", std::to_string(jobs));
  mf.record(rec.config, model_cfg);
  tf.record(rec.config, train_cfg);
  rec.artifacts = {"metrics.csv", "summary.txt"};

  if (profile) {
    CostProfile cost;
    cost.param_count = param_count(model_cfg);
    cost.peak_resident_bytes = peak_resident_bytes();
    double sec = 0.0;
    for (const FoldOutcome& row : report.rows) sec += row.seconds_per_epoch;
    cost.seconds_per_epoch = sec / static_cast<double>(report.rows.size());
    const std::string profile_text = encode_profile(model_cfg, cost);
    detail::write_file_bytes(fs::path(out) / "profile.txt", profile_text);
    rec.artifacts.push_back("profile.txt");
    std::cout << profile_text;
  }
  write_run_record(out, rec);
  std::cout << summarize_crossval(report);
  return 0;
}

int cmd_sweep_k(const std::string& manifest, const std::string& out,
                const std::string& k_list, std::size_t restarts,
                const ModelFlags& mf, const TrainFlags& tf, std::size_t folds,
                std::size_t repeats, std::size_t jobs,
                const std::string& cmdline) {
  std::vector<std::size_t> ks;
  {
    std::string token;
    for (char ch : k_list + ",") {
      if (ch == ',') {
        if (!token.empty()) {
          ks.push_back(static_cast<std::size_t>(std::stoull(token)));
          token.clear();
        }
      } else if (ch >= '0' && ch <= '9') {
        token += ch;
      } else {
        throw ParamError("sweep-k: bad character '" + std::string(1, ch) +
                         "' in --k-list");
      }
    }
    if (ks.empty()) throw ParamError("sweep-k: empty --k-list");
  }

  const std::uint64_t in_hash = hash_dataset(manifest);
  fs::create_directories(out);
  std::string csv =
      "k,mean_macro_f1,std_macro_f1,mean_auroc,std_auroc,seconds_per_epoch,"
      "param_count\n";
  for (std::size_t k : ks) {
    const fs::path k_dir = fs::path(out) / ("k_" + std::to_string(k));
    reduce_dataset(manifest, k, tf.seed, k_dir, restarts);
    LoadedPrototypes data = load_prototypes((k_dir / "manifest.tsv").string());
    MixerConfig model_cfg =
        mf.resolve(data.tokens, data.ds.feature_dim, data.ds.manifest.num_classes,
                   infer_num_domains(data.ds.manifest));
    TrainConfig train_cfg = tf.resolve(folds, repeats);
    CrossvalReport rep = run_crossval(data.ds.prototypes, model_cfg, train_cfg, jobs);
    double sec = 0.0;
    for (const FoldOutcome& row : rep.rows) sec += row.seconds_per_epoch;
    sec /= static_cast<double>(rep.rows.size());
    csv += std::to_string(k) + "," + format_double(rep.mean_macro_f1) + "," +
           format_double(rep.std_macro_f1) + "," + format_double(rep.mean_auroc) +
           "," + format_double(rep.std_auroc) + "," + format_double(sec) + "," +
           std::to_string(param_count(model_cfg)) + "\n";
    std::cout << "k=" << k << ": macro-F1 " << format_double(rep.mean_macro_f1)
              << " +/- " << format_double(rep.std_macro_f1) << "\n";
  }
  detail::write_file_bytes(fs::path(out) / "sweep.csv", csv);

  RunRecord rec;
  rec.command_line = cmdline;
  rec.seed = tf.seed;
  rec.input_hash = in_hash;
  rec.config = {{"manifest", manifest}, {"k_list", k_list},
                {"restarts", std::to_string(restarts)},
                {"folds", std::to_string(folds)},
                {"repeats", std::to_string(repeats)},
                {"jobs", std::to_string(jobs)},
                {"seed", std::to_string(tf.seed)}};
  rec.artifacts = {"sweep.csv"};
  write_run_record(out, rec);
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest,
             const std::string& out, const std::string& cmdline) {
  const std::uint64_t in_hash =
      hash_files({checkpoint}) ^ hash_dataset(manifest);
  MixerParams params = load_checkpoint(checkpoint);
  LoadedPrototypes data = load_prototypes(manifest);
  if (params.config.tokens != data.tokens ||
      params.config.channels != data.ds.feature_dim) {
    throw DimensionError(
        "checkpoint expects " + std::to_string(params.config.tokens) + "x" +
        std::to_string(params.config.channels) + " prototype tables, dataset has " +
        std::to_string(data.tokens) + "x" + std::to_string(data.ds.feature_dim));
  }
  EvalResult eval = evaluate(params, bag_ptrs(data.ds.prototypes));
  std::cout << summarize_metrics(eval.metrics);
  if (!out.empty()) {
    fs::create_directories(out);
    detail::write_file_bytes(fs::path(out) / "metrics.csv",
                             encode_metrics_csv(eval.metrics));
    RunRecord rec;
    rec.command_line = cmdline;
    rec.seed = 0;
    rec.input_hash = in_hash;
    rec.config = {{"checkpoint", checkpoint}, {"manifest", manifest}};
    rec.artifacts = {"metrics.csv"};
    write_run_record(out, rec);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-table bag classifier pipeline"};
  app.require_subcommand(1);
  const std::string cmdline = join_args(argc, argv);
  std::string config_sink;
  static constexpr const char* kConfigHelp =
      "key=value file supplying defaults; explicit flags win";

  // gen-synthetic -------------------------------------------------------
  SyntheticSpec spec;
  std::string gen_out;
  CLI::App* gen = app.add_subcommand("gen-synthetic",
                                     "Write a synthetic bag corpus with known structure");
  gen->add_option("--config", config_sink, kConfigHelp);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--bags", spec.num_bags, "Bag count")->capture_default_str();
  gen->add_option("--classes", spec.num_classes, "Class count")->capture_default_str();
  gen->add_option("--domains", spec.num_domains, "Domain count")->capture_default_str();
  gen->add_option("--min-patches", spec.patches_min, "Minimum instances per bag")
      ->capture_default_str();
  gen->add_option("--max-patches", spec.patches_max, "Maximum instances per bag")
      ->capture_default_str();
  gen->add_option("--n", spec.feature_dim, "Embedding width")->capture_default_str();
  gen->add_option("--signal-fraction", spec.signal_fraction,
                  "Share of instances carrying class signal")
      ->capture_default_str();
  gen->add_option("--shift", spec.domain_shift_magnitude,
                  "Magnitude of the additive per-domain offset")
      ->capture_default_str();
  gen->add_option("--noise", spec.noise_sigma, "Gaussian noise level")
      ->capture_default_str();
  gen->add_option("--background-centers", spec.background_centers,
                  "Count of class-independent background centers")
      ->capture_default_str();
  gen->add_flag("--confound-domains", spec.confound_domains,
                "Nest domains inside classes so domain predicts class");
  gen->add_option("--seed", spec.seed, "Master seed")->capture_default_str();

  // reduce --------------------------------------------------------------
  std::string red_manifest, red_out;
  std::size_t red_k = 5, red_restarts = 5;
  std::uint64_t red_seed = 0;
  bool red_widen = false;
  CLI::App* red = app.add_subcommand("reduce",
                                     "Reduce each bag to k cluster prototypes");
  red->add_option("--config", config_sink, kConfigHelp);
  red->add_option("--manifest", red_manifest, "Embeddings manifest")->required();
  red->add_option("--k", red_k, "Prototypes per bag")->required();
  red->add_option("--out", red_out, "Output directory")->required();
  red->add_option("--restarts", red_restarts, "Clustering restarts")
      ->capture_default_str();
  red->add_flag("--widen-f32", red_widen, "Accept 32-bit matrix payloads");
  red->add_option("--seed", red_seed, "Master seed")->capture_default_str();

  // train / crossval ----------------------------------------------------
  std::string tr_manifest, tr_out;
  ModelFlags tr_model;
  TrainFlags tr_train;
  bool tr_profile = false;
  CLI::App* tr = app.add_subcommand("train", "Train one model on every bag");
  tr->add_option("--config", config_sink, kConfigHelp);
  tr->add_option("--manifest", tr_manifest, "Prototype manifest")->required();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr_model.attach(tr);
  tr_train.attach(tr);
  tr->add_flag("--profile", tr_profile, "Emit parameter/FLOP/memory profile");

  std::string cv_manifest, cv_out;
  ModelFlags cv_model;
  TrainFlags cv_train;
  std::size_t cv_folds = 5, cv_repeats = 1, cv_jobs = 1;
  bool cv_profile = false;
  CLI::App* cv = app.add_subcommand("crossval",
                                    "Stratified k-fold cross-validation");
  cv->add_option("--config", config_sink, kConfigHelp);
  cv->add_option("--manifest", cv_manifest, "Prototype manifest")->required();
  cv->add_option("--out", cv_out, "Output directory")->required();
  cv_model.attach(cv);
  cv_train.attach(cv);
  cv->add_option("--folds", cv_folds, "Fold count")->capture_default_str();
  cv->add_option("--repeats", cv_repeats, "Independent repeats")->capture_default_str();
  cv->add_option("--jobs", cv_jobs, "Worker threads over fold-repeat cells")
      ->capture_default_str();
  cv->add_flag("--profile", cv_profile, "Emit parameter/FLOP/memory profile");

  // sweep-k ---------------------------------------------------------------
  std::string sw_manifest, sw_out, sw_klist = "1,2,4,5,6,8,10,12,16";
  ModelFlags sw_model;
  TrainFlags sw_train;
  std::size_t sw_folds = 5, sw_repeats = 1, sw_jobs = 1, sw_restarts = 5;
  CLI::App* sw = app.add_subcommand(
      "sweep-k", "Reduce and cross-validate across a list of k values");
  sw->add_option("--config", config_sink, kConfigHelp);
  sw->add_option("--manifest", sw_manifest, "Embeddings manifest")->required();
  sw->add_option("--out", sw_out, "Output directory")->required();
  sw->add_option("--k-list", sw_klist, "Comma-separated k values")
      ->capture_default_str();
  sw->add_option("--restarts", sw_restarts, "Clustering restarts")
      ->capture_default_str();
  sw_model.attach(sw);
  sw_train.attach(sw);
  sw->add_option("--folds", sw_folds, "Fold count")->capture_default_str();
  sw->add_option("--repeats", sw_repeats, "Independent repeats")->capture_default_str();
  sw->add_option("--jobs", sw_jobs, "Worker threads over fold-repeat cells")
      ->capture_default_str();

  // eval ------------------------------------------------------------------
  std::string ev_checkpoint, ev_manifest, ev_out;
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--config", config_sink, kConfigHelp);
  ev->add_option("--checkpoint", ev_checkpoint, "Model checkpoint")->required();
  ev->add_option("--manifest", ev_manifest, "Prototype manifest")->required();
  ev->add_option("--out", ev_out, "Optional output directory for metrics.csv");

  std::vector<std::string> args;
  try {
    args = expand_config_args(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const ParamError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_synthetic(spec, gen_out, cmdline);
    if (red->parsed()) {
      return cmd_reduce(red_manifest, red_k, red_seed, red_out, red_restarts,
                        red_widen, cmdline);
    }
    if (tr->parsed()) {
      return cmd_train(tr_manifest, tr_out, tr_model, tr_train, tr_profile, cmdline);
    }
    if (cv->parsed()) {
      return cmd_crossval(cv_manifest, cv_out, cv_model, cv_train, cv_folds,
                          cv_repeats, cv_jobs, cv_profile, cmdline);
    }
    if (sw->parsed()) {
      return cmd_sweep_k(sw_manifest, sw_out, sw_klist, sw_restarts, sw_model,
                         sw_train, sw_folds, sw_repeats, sw_jobs, cmdline);
    }
    if (ev->parsed()) return cmd_eval(ev_checkpoint, ev_manifest, ev_out, cmdline);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const ParamError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << " (byte " << e.byte_offset() << ")\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
