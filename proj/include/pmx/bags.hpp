#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmx/matrix.hpp"

namespace pmx {

/// One slide's bag of patch embeddings (K instances x N channels).
struct EmbeddingBag {
  std::string slide_id;
  std::size_t class_label = 0;
  std::size_t domain_id = 0;
  Matrix features;  // K x N
};

/// Reduced bag: k centroids in canonical order plus their cluster sizes.
/// sum(cluster_sizes) equals K of the source bag; padded rows carry size 0.
struct PrototypeBag {
  std::string slide_id;
  std::size_t class_label = 0;
  std::size_t domain_id = 0;
  Matrix prototypes;  // k x N
  std::vector<std::uint32_t> cluster_sizes;
};

}  // namespace pmx
