#pragma once

#include <cstdint>
#include <cstdio>
#include <ctime>
#include <string>
#include <utility>
#include <vector>

#include "pmx/io.hpp"
#include "pmx/metrics.hpp"
#include "pmx/mixer.hpp"
#include "pmx/rng.hpp"
#include "pmx/train.hpp"

namespace pmx {

inline std::string encode_loss_curve_csv(const std::vector<EpochStats>& curve) {
  std::string out = "epoch,class_loss,domain_loss,lambda\n";
  for (std::size_t e = 0; e < curve.size(); ++e) {
    out += std::to_string(e) + "," + format_double(curve[e].class_loss) + "," +
           format_double(curve[e].domain_loss) + "," +
           format_double(curve[e].lambda) + "\n";
  }
  return out;
}

inline std::string encode_crossval_csv(const CrossvalReport& report) {
  std::string out =
      "repeat,fold,macro_f1,auroc,final_class_loss,final_domain_loss,"
      "seconds_per_epoch\n";
  for (const FoldOutcome& r : report.rows) {
    out += std::to_string(r.repeat) + "," + std::to_string(r.fold) + "," +
           format_double(r.macro_f1) + "," + format_double(r.auroc) + "," +
           format_double(r.final_class_loss) + "," +
           format_double(r.final_domain_loss) + "," +
           format_double(r.seconds_per_epoch) + "\n";
  }
  return out;
}

/// Single-evaluation metrics as CSV (one row per class plus a summary row).
inline std::string encode_metrics_csv(const MetricsReport& m) {
  std::string out = "class,support,precision,recall,f1,auroc,present\n";
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    const ClassMetrics& cm = m.per_class[c];
    out += std::to_string(c) + "," + std::to_string(cm.support) + "," +
           format_double(cm.precision) + "," + format_double(cm.recall) + "," +
           format_double(cm.f1) + "," + format_double(cm.auroc) + "," +
           (cm.present ? "1" : "0") + "\n";
  }
  out += "macro,," + format_double(m.macro_f1) + ",," + format_double(m.macro_f1) +
         "," + format_double(m.auroc) + ",\n";
  return out;
}

inline std::string summarize_crossval(const CrossvalReport& r) {
  std::string out;
  out += "fold-repeat cells: " + std::to_string(r.rows.size()) + "\n";
  out += "macro-F1: " + format_double(r.mean_macro_f1) + " +/- " +
         format_double(r.std_macro_f1) + "\n";
  out += "AUROC:    " + format_double(r.mean_auroc) + " +/- " +
         format_double(r.std_auroc) + "\n";
  return out;
}

inline std::string summarize_metrics(const MetricsReport& m) {
  std::string out;
  out += "macro-F1 " + format_double(m.macro_f1) + ", AUROC " +
         format_double(m.auroc) + "\n";
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    const ClassMetrics& cm = m.per_class[c];
    out += "  class " + std::to_string(c);
    if (!cm.present) {
      out += ": absent from eval set\n";
      continue;
    }
    out += ": support " + std::to_string(cm.support) + ", P " +
           format_double(cm.precision) + ", R " + format_double(cm.recall) +
           ", F1 " + format_double(cm.f1) + ", AUROC " + format_double(cm.auroc) +
           "\n";
  }
  if (!m.absent_classes.empty()) {
    out += "  (absent classes excluded from macro averages)\n";
  }
  return out;
}

/// Cost profile of a configuration plus measured runtime quantities.
inline std::string encode_profile(const MixerConfig& cfg, const CostProfile& cost) {
  const FlopCount flops = analytic_flops(cfg);
  std::string out;
  out += "param_count: " + std::to_string(cost.param_count) + "\n";
  out += "param_count_millions: " +
         format_double(static_cast<double>(cost.param_count) / 1e6) + "\n";
  out += "includes: weights, biases, and norm gains/shifts of every layer\n";
  out += "forward_flops(k=" + std::to_string(cfg.tokens) +
         "): " + format_double(flops.total(cfg.tokens)) + "\n";
  out += "forward_flops_per_token: " + format_double(flops.per_token) + "\n";
  out += "forward_flops_constant: " + format_double(flops.constant) + "\n";
  out += "peak_resident_bytes: " + std::to_string(cost.peak_resident_bytes) + "\n";
  out += "seconds_per_epoch: " + format_double(cost.seconds_per_epoch) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Run records: every command writes record.txt into its output directory
// with the resolved configuration and a content hash of the inputs, so a rerun
// can be matched to its artifacts.
// ---------------------------------------------------------------------------

struct RunRecord {
  std::string command_line;
  std::vector<std::pair<std::string, std::string>> config;  // fully resolved
  std::uint64_t seed = 0;
  std::uint64_t input_hash = 0;  // FNV-1a over the input files' bytes
  std::vector<std::string> artifacts;
};

/// FNV-1a over the raw bytes of a set of files (order-sensitive).
inline std::uint64_t hash_files(const std::vector<fs::path>& paths) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const fs::path& p : paths) {
    const std::string bytes = detail::read_file_bytes(p);
    for (unsigned char ch : bytes) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

/// Hash of a manifest file plus every bag payload it references.
inline std::uint64_t hash_dataset(const fs::path& manifest_path) {
  std::vector<fs::path> files = {manifest_path};
  const Manifest man = read_manifest(manifest_path);
  const fs::path base = manifest_path.has_parent_path()
                            ? manifest_path.parent_path()
                            : fs::path(".");
  for (const ManifestEntry& e : man.entries) {
    const fs::path bag = base / e.path;
    if (fs::exists(bag)) files.push_back(bag);
    if (man.kind == "prototypes" && fs::exists(sizes_sidecar(bag))) {
      files.push_back(sizes_sidecar(bag));
    }
  }
  return hash_files(files);
}

inline std::string encode_run_record(const RunRecord& rec) {
  std::string out;
  out += "command: " + rec.command_line + "\n";
  std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  out += "created_utc: " + std::string(stamp) + "\n";
  out += "seed: " + std::to_string(rec.seed) + "\n";
  char hex[24];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(rec.input_hash));
  out += "input_hash: " + std::string(hex) + "\n";
  out += "config:\n";
  for (const auto& [key, value] : rec.config) {
    out += "  " + key + " = " + value + "\n";
  }
  out += "artifacts:\n";
  for (const std::string& a : rec.artifacts) out += "  " + a + "\n";
  return out;
}

inline void write_run_record(const fs::path& out_dir, const RunRecord& rec) {
  fs::create_directories(out_dir);
  detail::write_file_bytes(out_dir / "record.txt", encode_run_record(rec));
}

}  // namespace pmx
