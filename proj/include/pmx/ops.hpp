#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "pmx/errors.hpp"
#include "pmx/matrix.hpp"

namespace pmx {

// ---------------------------------------------------------------------------
// GELU, exact erf form: gelu(x) = x * Phi(x).
// ---------------------------------------------------------------------------

inline double gelu(double x) {
  return x * 0.5 * std::erfc(-x * 0.70710678118654752440);
}

/// d/dx gelu(x) = Phi(x) + x * phi(x).
inline double gelu_grad(double x) {
  const double phi_cdf = 0.5 * std::erfc(-x * 0.70710678118654752440);
  const double phi_pdf = 0.39894228040143267794 * std::exp(-0.5 * x * x);
  return phi_cdf + x * phi_pdf;
}

inline Matrix gelu(const Matrix& x) {
  Matrix out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu(out[i]);
  return out;
}

inline Matrix gelu_grad(const Matrix& x) {
  Matrix out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_grad(out[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization along rows (the channel axis), population variance.
// ---------------------------------------------------------------------------

struct LayerNormCache {
  Matrix x_hat;                  // normalized input, pre gain/bias
  std::vector<double> inv_std;   // 1/sqrt(var+eps) per row
};

/// Normalizes each row of x over its columns: y = gain .* x_hat + bias.
/// gain and bias are 1xN. Fills *cache (required for the backward pass)
/// when non-null.
inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias,
                         double eps, LayerNormCache* cache = nullptr) {
  const std::size_t n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layer_norm: gain " + gain.shape_str() + ", bias " +
                         bias.shape_str() + " vs input " + x.shape_str());
  }
  Matrix out(x.rows(), n);
  if (cache) {
    cache->x_hat = Matrix(x.rows(), n);
    cache->inv_std.assign(x.rows(), 0.0);
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* xr = x.row_ptr(r);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += xr[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = xr[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      const double xh = (xr[i] - mean) * inv_std;
      out(r, i) = gain[i] * xh + bias[i];
      if (cache) cache->x_hat(r, i) = xh;
    }
    if (cache) cache->inv_std[r] = inv_std;
  }
  return out;
}

/// Backward of layer_norm. Accumulates into d_gain/d_bias, returns d_x.
inline Matrix layer_norm_backward(const Matrix& d_out, const LayerNormCache& cache,
                                  const Matrix& gain, Matrix& d_gain,
                                  Matrix& d_bias) {
  const std::size_t n = d_out.cols();
  Matrix d_x(d_out.rows(), n);
  std::vector<double> q(n);
  for (std::size_t r = 0; r < d_out.rows(); ++r) {
    double mean_q = 0.0, mean_qx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double go = d_out(r, i);
      const double xh = cache.x_hat(r, i);
      d_gain[i] += go * xh;
      d_bias[i] += go;
      q[i] = go * gain[i];
      mean_q += q[i];
      mean_qx += q[i] * xh;
    }
    mean_q /= static_cast<double>(n);
    mean_qx /= static_cast<double>(n);
    const double s = cache.inv_std[r];
    for (std::size_t i = 0; i < n; ++i) {
      d_x(r, i) = s * (q[i] - mean_q - cache.x_hat(r, i) * mean_qx);
    }
  }
  return d_x;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy, max-subtracted.
// ---------------------------------------------------------------------------

inline std::vector<double> softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

struct SoftmaxCrossEntropy {
  double loss;
  std::vector<double> grad;  // softmax(logits) - onehot(target)
};

inline SoftmaxCrossEntropy softmax_cross_entropy(const std::vector<double>& logits,
                                                 std::size_t target) {
  if (target >= logits.size()) {
    throw ParamError("softmax_cross_entropy: target " + std::to_string(target) +
                     " out of range for " + std::to_string(logits.size()) +
                     " classes");
  }
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  SoftmaxCrossEntropy out;
  out.loss = std::log(z) - (logits[target] - mx);
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.grad[i] = std::exp(logits[i] - mx) / z;
  }
  out.grad[target] -= 1.0;
  return out;
}

}  // namespace pmx
