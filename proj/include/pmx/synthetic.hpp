#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pmx/bags.hpp"
#include "pmx/errors.hpp"
#include "pmx/io.hpp"
#include "pmx/matrix.hpp"
#include "pmx/rng.hpp"

namespace pmx {

/// Parameters of the synthetic multiple-instance corpus. Each bag holds
/// patch embeddings: a signal_fraction share drawn around a class-specific
/// center, the rest around shared background centers, everything shifted by a
/// per-domain offset and perturbed by isotropic Gaussian noise.
struct SyntheticSpec {
  std::size_t num_bags = 60;
  std::size_t num_classes = 3;
  std::size_t num_domains = 1;
  std::size_t patches_min = 64;   // patches per bag, inclusive range
  std::size_t patches_max = 128;
  std::size_t feature_dim = 64;   // embedding width N
  double signal_fraction = 0.5;   // share of patches carrying class signal
  double domain_shift_magnitude = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::size_t background_centers = 3;
  // When set, domains are nested inside classes (each class owns an equal,
  // disjoint block of domains) so domain identity predicts the class.
  bool confound_domains = false;
};

struct SyntheticGroundTruth {
  Matrix class_centers;       // num_classes x N
  Matrix background_centers;  // background_centers x N
  Matrix domain_offsets;      // num_domains x N, rows scaled to shift magnitude
};

struct SyntheticCorpus {
  std::vector<EmbeddingBag> bags;
  SyntheticGroundTruth truth;
};

namespace detail {

inline void validate(const SyntheticSpec& spec) {
  if (spec.num_bags == 0) throw ParamError("synthetic: num_bags must be >= 1");
  if (spec.num_classes == 0) throw ParamError("synthetic: num_classes must be >= 1");
  if (spec.num_domains == 0) throw ParamError("synthetic: num_domains must be >= 1");
  if (spec.num_domains > spec.num_bags) {
    throw ParamError("synthetic: num_domains exceeds num_bags");
  }
  if (spec.patches_min == 0 || spec.patches_min > spec.patches_max) {
    throw ParamError("synthetic: patches range must satisfy 1 <= min <= max");
  }
  if (spec.feature_dim == 0) throw ParamError("synthetic: feature_dim must be >= 1");
  if (!(spec.signal_fraction > 0.0) || spec.signal_fraction > 1.0) {
    throw ParamError("synthetic: signal_fraction must be in (0, 1]");
  }
  if (spec.noise_sigma < 0.0) throw ParamError("synthetic: noise_sigma must be >= 0");
  if (spec.domain_shift_magnitude < 0.0) {
    throw ParamError("synthetic: domain_shift_magnitude must be >= 0");
  }
  if (spec.background_centers == 0) {
    throw ParamError("synthetic: background_centers must be >= 1");
  }
  if (spec.confound_domains && spec.num_domains % spec.num_classes != 0) {
    throw ParamError(
        "synthetic: confound_domains needs num_domains divisible by num_classes");
  }
}

inline Matrix gaussian_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

inline std::string slide_name(std::size_t index, std::size_t total) {
  std::string digits = std::to_string(total == 0 ? 0 : total - 1);
  const std::size_t width = std::max<std::size_t>(4, digits.size());
  std::string num = std::to_string(index);
  return "bag_" + std::string(width - std::min(width, num.size()), '0') + num;
}

}  // namespace detail

/// Generate the corpus in memory. Bag contents depend only on (seed,
/// slide_id), so regenerating with the same spec is bit-identical and bags do
/// not disturb each other.
inline SyntheticCorpus gen_synthetic_bags(const SyntheticSpec& spec) {
  detail::validate(spec);
  const std::size_t dim = spec.feature_dim;

  SyntheticCorpus corpus;
  {
    Rng rng(derive_seed(spec.seed, "class_centers"));
    corpus.truth.class_centers = detail::gaussian_rows(spec.num_classes, dim, rng);
  }
  {
    Rng rng(derive_seed(spec.seed, "background_centers"));
    corpus.truth.background_centers =
        detail::gaussian_rows(spec.background_centers, dim, rng);
  }
  {
    Rng rng(derive_seed(spec.seed, "domain_offsets"));
    Matrix dirs = detail::gaussian_rows(spec.num_domains, dim, rng);
    for (std::size_t d = 0; d < spec.num_domains; ++d) {
      double* row = dirs.row_ptr(d);
      double norm = 0.0;
      for (std::size_t j = 0; j < dim; ++j) norm += row[j] * row[j];
      norm = std::sqrt(norm);
      const double s = norm > 0.0 ? spec.domain_shift_magnitude / norm : 0.0;
      for (std::size_t j = 0; j < dim; ++j) row[j] *= s;
    }
    corpus.truth.domain_offsets = std::move(dirs);
  }

  const std::size_t domains_per_class =
      spec.confound_domains ? spec.num_domains / spec.num_classes : 0;

  corpus.bags.reserve(spec.num_bags);
  for (std::size_t b = 0; b < spec.num_bags; ++b) {
    EmbeddingBag bag;
    bag.slide_id = detail::slide_name(b, spec.num_bags);
    bag.class_label = b % spec.num_classes;
    const std::size_t cycle = b / spec.num_classes;
    bag.domain_id = spec.confound_domains
                        ? bag.class_label * domains_per_class +
                              cycle % domains_per_class
                        : cycle % spec.num_domains;

    Rng rng(derive_seed(spec.seed, bag.slide_id));
    const std::size_t n_patches =
        spec.patches_min +
        (spec.patches_max > spec.patches_min
             ? rng.index(spec.patches_max - spec.patches_min + 1)
             : 0);
    std::size_t n_signal = static_cast<std::size_t>(
        std::llround(spec.signal_fraction * static_cast<double>(n_patches)));
    n_signal = std::min(std::max<std::size_t>(n_signal, 1), n_patches);

    bag.features = Matrix(n_patches, dim);
    const double* offset = corpus.truth.domain_offsets.row_ptr(bag.domain_id);
    for (std::size_t p = 0; p < n_patches; ++p) {
      const double* center =
          p < n_signal
              ? corpus.truth.class_centers.row_ptr(bag.class_label)
              : corpus.truth.background_centers.row_ptr(
                    rng.index(spec.background_centers));
      double* row = bag.features.row_ptr(p);
      for (std::size_t j = 0; j < dim; ++j) {
        double v = center[j] + offset[j];
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
        row[j] = v;
      }
    }
    // Signal patches should not sit at fixed positions in the bag.
    std::vector<std::size_t> perm(n_patches);
    for (std::size_t p = 0; p < n_patches; ++p) perm[p] = p;
    rng.shuffle(perm.begin(), perm.end());
    Matrix shuffled(n_patches, dim);
    for (std::size_t p = 0; p < n_patches; ++p) {
      std::copy_n(bag.features.row_ptr(perm[p]), dim, shuffled.row_ptr(p));
    }
    bag.features = std::move(shuffled);
    corpus.bags.push_back(std::move(bag));
  }
  return corpus;
}

/// Generate and persist: bag files + manifest.tsv + ground-truth matrices
/// (class_centers.pmb, background_centers.pmb, domain_offsets.pmb) with a
/// ground_truth.tsv index, all under out_dir.
inline Manifest gen_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
  SyntheticCorpus corpus = gen_synthetic_bags(spec);
  Manifest man =
      write_embedding_dataset(out_dir, "synthetic", spec.num_classes, corpus.bags);

  write_matrix(out_dir / "class_centers.pmb", corpus.truth.class_centers);
  write_matrix(out_dir / "background_centers.pmb", corpus.truth.background_centers);
  write_matrix(out_dir / "domain_offsets.pmb", corpus.truth.domain_offsets);

  std::string index;
  index += "# ground truth index: name<TAB>file<TAB>rows\n";
  index += "class_centers\tclass_centers.pmb\t" +
           std::to_string(spec.num_classes) + "\n";
  index += "background_centers\tbackground_centers.pmb\t" +
           std::to_string(spec.background_centers) + "\n";
  index += "domain_offsets\tdomain_offsets.pmb\t" +
           std::to_string(spec.num_domains) + "\n";
  index += "num_domains\t" + std::to_string(spec.num_domains) + "\n";
  index += "signal_fraction\t" + format_double(spec.signal_fraction) + "\n";
  index += "domain_shift_magnitude\t" +
           format_double(spec.domain_shift_magnitude) + "\n";
  index += "noise_sigma\t" + format_double(spec.noise_sigma) + "\n";
  index += "seed\t" + std::to_string(spec.seed) + "\n";
  detail::write_file_bytes(out_dir / "ground_truth.tsv", index);
  return man;
}

}  // namespace pmx
