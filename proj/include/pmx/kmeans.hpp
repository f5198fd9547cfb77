#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "pmx/errors.hpp"
#include "pmx/matrix.hpp"
#include "pmx/rng.hpp"

namespace pmx {

struct KMeansResult {
  Matrix centroids;                        // k x N, mean of assigned points
  std::vector<std::uint32_t> assignments;  // per point, in [0, k)
  double inertia = 0.0;                    // sum of squared distances
  std::size_t iterations = 0;
  std::vector<double> inertia_trace;       // inertia after each assignment step
};

namespace detail {

// Nearest centroid, ties broken by lowest cluster index (strict <).
inline std::pair<std::uint32_t, double> nearest_centroid(const double* point,
                                                         const Matrix& centroids) {
  std::uint32_t best = 0;
  double best_d = squared_distance(point, centroids.row_ptr(0), centroids.cols());
  for (std::size_t c = 1; c < centroids.rows(); ++c) {
    const double d = squared_distance(point, centroids.row_ptr(c), centroids.cols());
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(c);
    }
  }
  return {best, best_d};
}

// k-means++ seeding: next center drawn with probability proportional to the
// squared distance to the nearest chosen center. Falls back to a uniform draw
// when all remaining distances are zero (duplicate points).
inline Matrix kmeanspp_seed(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t n_points = points.rows(), dim = points.cols();
  Matrix centers(k, dim);
  std::vector<double> dist2(n_points, std::numeric_limits<double>::infinity());

  const std::size_t first = rng.index(n_points);
  std::copy_n(points.row_ptr(first), dim, centers.row_ptr(0));

  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n_points; ++i) {
      const double d =
          squared_distance(points.row_ptr(i), centers.row_ptr(c - 1), dim);
      if (d < dist2[i]) dist2[i] = d;
      total += dist2[i];
    }
    std::size_t pick;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double cum = 0.0;
      pick = n_points - 1;
      for (std::size_t i = 0; i < n_points; ++i) {
        cum += dist2[i];
        if (cum > r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.index(n_points);
    }
    std::copy_n(points.row_ptr(pick), dim, centers.row_ptr(c));
  }
  return centers;
}

// centroids[c] = mean of points assigned to c, summed in ascending point
// order. Empty clusters keep their previous centroid.
inline void update_means(Matrix& centroids, const Matrix& points,
                         const std::vector<std::uint32_t>& assignments,
                         const std::vector<std::uint32_t>& sizes) {
  const std::size_t dim = points.cols();
  Matrix sums(centroids.rows(), dim);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double* srow = sums.row_ptr(assignments[i]);
    const double* prow = points.row_ptr(i);
    for (std::size_t d = 0; d < dim; ++d) srow[d] += prow[d];
  }
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    if (sizes[c] == 0) continue;
    double* crow = centroids.row_ptr(c);
    const double* srow = sums.row_ptr(c);
    const double inv = 1.0 / static_cast<double>(sizes[c]);
    for (std::size_t d = 0; d < dim; ++d) crow[d] = srow[d] * inv;
  }
}

}  // namespace detail

/// Lloyd's algorithm from k-means++ seeding. Stops when the relative inertia
/// decrease falls below rel_tol or after max_iters assignment steps. Empty
/// clusters are repaired by relocating their centroid onto the point farthest
/// from its own centroid (taken from a cluster that keeps >= 1 point), which
/// never increases the objective. Returned centroids are exact means of the
/// returned assignments.
inline KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                           std::size_t max_iters = 100, double rel_tol = 1e-6) {
  const std::size_t n_points = points.rows(), dim = points.cols();
  if (k == 0) throw ParamError("kmeans: k must be >= 1");
  if (k > n_points) {
    throw ParamError("kmeans: k=" + std::to_string(k) +
                     " exceeds point count K=" + std::to_string(n_points));
  }
  if (max_iters == 0) throw ParamError("kmeans: max_iters must be >= 1");

  Rng rng(seed);
  Matrix centroids = detail::kmeanspp_seed(points, k, rng);
  std::vector<std::uint32_t> assign(n_points, 0), committed;
  std::vector<std::uint32_t> sizes(k, 0);

  KMeansResult res;
  double prev_inertia = std::numeric_limits<double>::infinity();

  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    double inertia = 0.0;
    std::fill(sizes.begin(), sizes.end(), 0u);
    for (std::size_t i = 0; i < n_points; ++i) {
      const auto [c, d] = detail::nearest_centroid(points.row_ptr(i), centroids);
      assign[i] = c;
      ++sizes[c];
      inertia += d;
    }

    // Lloyd never increases the objective; a measured increase is rounding
    // noise at convergence. Keep the previous committed state and stop.
    if (inertia > prev_inertia) {
      assign = committed;
      break;
    }
    res.inertia_trace.push_back(inertia);
    res.iterations = iter + 1;
    const bool converged =
        std::isfinite(prev_inertia) &&
        prev_inertia - inertia < rel_tol * std::max(prev_inertia, 1e-300);
    prev_inertia = inertia;

    detail::update_means(centroids, points, assign, sizes);

    if (!converged) {
      for (std::size_t c = 0; c < k; ++c) {
        if (sizes[c] != 0) continue;
        std::size_t donor = n_points;
        double worst = -1.0;
        for (std::size_t i = 0; i < n_points; ++i) {
          if (sizes[assign[i]] < 2) continue;
          const double d = squared_distance(points.row_ptr(i),
                                            centroids.row_ptr(assign[i]), dim);
          if (d > worst) {
            worst = d;
            donor = i;
          }
        }
        if (donor == n_points) continue;  // unreachable while k <= n_points
        const std::uint32_t from = assign[donor];
        std::copy_n(points.row_ptr(donor), dim, centroids.row_ptr(c));
        assign[donor] = static_cast<std::uint32_t>(c);
        --sizes[from];
        sizes[c] = 1;
        // Re-mean the donor cluster without the moved point.
        double* frow = centroids.row_ptr(from);
        std::fill(frow, frow + dim, 0.0);
        for (std::size_t i = 0; i < n_points; ++i) {
          if (assign[i] != from) continue;
          const double* prow = points.row_ptr(i);
          for (std::size_t d = 0; d < dim; ++d) frow[d] += prow[d];
        }
        const double inv = 1.0 / static_cast<double>(sizes[from]);
        for (std::size_t d = 0; d < dim; ++d) frow[d] *= inv;
      }
    }

    committed = assign;  // pairs with centroids = means(assign)
    if (converged) break;
  }

  res.assignments = std::move(committed);
  // Final centroids are means of the final assignments; report the inertia of
  // exactly that pairing.
  std::fill(sizes.begin(), sizes.end(), 0u);
  for (std::uint32_t a : res.assignments) ++sizes[a];
  detail::update_means(centroids, points, res.assignments, sizes);
  double final_inertia = 0.0;
  for (std::size_t i = 0; i < n_points; ++i) {
    final_inertia += squared_distance(points.row_ptr(i),
                                      centroids.row_ptr(res.assignments[i]), dim);
  }
  res.centroids = std::move(centroids);
  res.inertia = final_inertia;
  return res;
}

/// Best of `restarts` seeded runs; strictly lower inertia wins, first run
/// wins ties.
inline KMeansResult kmeans_best_of(const Matrix& points, std::size_t k,
                                   std::uint64_t seed, std::size_t restarts = 5,
                                   std::size_t max_iters = 100,
                                   double rel_tol = 1e-6) {
  KMeansResult best;
  bool have = false;
  for (std::size_t r = 0; r < restarts; ++r) {
    KMeansResult run = kmeans(points, k, derive_seed(seed, static_cast<std::uint64_t>(r)),
                              max_iters, rel_tol);
    if (!have || run.inertia < best.inertia) {
      best = std::move(run);
      have = true;
    }
  }
  return best;
}

/// Canonical prototype order: descending cluster size, then ascending
/// centroid L2 norm, then ascending first coordinate. Stable, so sorting an
/// already-sorted sequence is a no-op.
inline std::vector<std::size_t> canonical_order(
    const Matrix& centroids, const std::vector<std::uint32_t>& sizes) {
  std::vector<double> norm2(centroids.rows(), 0.0);
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double* row = centroids.row_ptr(c);
    for (std::size_t d = 0; d < centroids.cols(); ++d) norm2[c] += row[d] * row[d];
  }
  std::vector<std::size_t> order(centroids.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sizes[a] != sizes[b]) return sizes[a] > sizes[b];
    if (norm2[a] != norm2[b]) return norm2[a] < norm2[b];
    return centroids(a, 0) < centroids(b, 0);
  });
  return order;
}

}  // namespace pmx
