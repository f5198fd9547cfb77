#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmx/bags.hpp"
#include "pmx/errors.hpp"
#include "pmx/kmeans.hpp"
#include "pmx/rng.hpp"

namespace pmx {

struct ReduceOutcome {
  PrototypeBag bag;
  double inertia = 0.0;
  std::size_t iterations = 0;
  bool degenerate = false;  // true when k exceeded the instance count
};

/// Reduce one bag of K instance rows to k prototype rows.
///
/// Prototypes are cluster centroids in canonical order (descending cluster
/// size, then ascending L2 norm, then ascending first coordinate). When
/// k >= K every instance is its own prototype (the exact optimum), and for
/// k > K the ordered rows are repeated cyclically with cluster size 0 so the
/// sizes still sum to K; such bags are flagged degenerate.
///
/// The clustering seed depends only on the dataset seed and the slide id, so
/// a bag's prototypes do not change when other bags are added or removed.
inline ReduceOutcome reduce_bag(const EmbeddingBag& bag, std::size_t k,
                                std::uint64_t seed, std::size_t restarts = 5,
                                std::size_t max_iters = 100) {
  if (k == 0) throw ParamError("reduce_bag: k must be >= 1");
  const std::size_t n_inst = bag.features.rows(), dim = bag.features.cols();
  if (n_inst == 0 || dim == 0) {
    throw DataError("reduce_bag: bag '" + bag.slide_id + "' has no instances");
  }
  if (!bag.features.all_finite()) {
    throw DataError("reduce_bag: bag '" + bag.slide_id +
                    "' contains non-finite values");
  }

  ReduceOutcome out;
  out.bag.slide_id = bag.slide_id;
  out.bag.class_label = bag.class_label;
  out.bag.domain_id = bag.domain_id;
  out.bag.prototypes = Matrix(k, dim);
  out.bag.cluster_sizes.assign(k, 0);

  Matrix centroids;
  std::vector<std::uint32_t> sizes;
  if (k >= n_inst) {
    centroids = bag.features;
    sizes.assign(n_inst, 1);
    out.degenerate = k > n_inst;
    out.inertia = 0.0;
    out.iterations = 0;
  } else {
    KMeansResult res = kmeans_best_of(bag.features, k,
                                      derive_seed(seed, bag.slide_id), restarts,
                                      max_iters);
    centroids = std::move(res.centroids);
    sizes.assign(k, 0);
    for (std::uint32_t a : res.assignments) ++sizes[a];
    out.inertia = res.inertia;
    out.iterations = res.iterations;
  }

  const std::vector<std::size_t> order = canonical_order(centroids, sizes);
  const std::size_t real = order.size();
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t src = order[r % real];
    std::copy_n(centroids.row_ptr(src), dim, out.bag.prototypes.row_ptr(r));
    out.bag.cluster_sizes[r] = r < real ? sizes[src] : 0;
  }
  return out;
}

struct ReduceReportRow {
  std::string slide_id;
  std::size_t instance_count = 0;
  std::size_t k = 0;
  double inertia = 0.0;
  std::size_t iterations = 0;
  bool degenerate = false;
  std::string note;  // empty on success, failure reason otherwise
};

struct ReduceBagsResult {
  std::vector<PrototypeBag> bags;
  std::vector<ReduceReportRow> report;
};

/// In-memory reduction of a whole dataset; throws on the first bad bag.
/// The file-level variant that skips unreadable bags lives in io.hpp.
inline ReduceBagsResult reduce_bags(const std::vector<EmbeddingBag>& bags,
                                    std::size_t k, std::uint64_t seed,
                                    std::size_t restarts = 5) {
  if (bags.empty()) throw DataError("reduce_bags: no bags to reduce");
  ReduceBagsResult out;
  out.bags.reserve(bags.size());
  out.report.reserve(bags.size());
  for (const EmbeddingBag& bag : bags) {
    ReduceOutcome one = reduce_bag(bag, k, seed, restarts);
    out.report.push_back({bag.slide_id, bag.features.rows(), k, one.inertia,
                          one.iterations, one.degenerate, {}});
    out.bags.push_back(std::move(one.bag));
  }
  return out;
}

}  // namespace pmx
