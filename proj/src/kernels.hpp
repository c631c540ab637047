#pragma once

// Small dense kernels shared by the inference path and the trainer. Both
// paths must call these so that a training forward pass reproduces inference
// bit for bit.

#include <cmath>
#include <cstddef>
#include <span>

#include "mgeo/tensor.hpp"

namespace mgeo::kernels {

// y = W x, W is (out, in) row-major.
inline void matvec(const Matrix& w, std::span<const float> x, std::span<float> y) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const float* row = w.data.data() + r * w.cols;
    float acc = 0.0f;
    for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

// x_grad += W^T y_grad
inline void matvec_t_acc(const Matrix& w, std::span<const float> y_grad, std::span<float> x_grad) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const float* row = w.data.data() + r * w.cols;
    const float g = y_grad[r];
    for (std::size_t c = 0; c < w.cols; ++c) x_grad[c] += row[c] * g;
  }
}

// W_grad += y_grad x^T
inline void outer_acc(Matrix& w_grad, std::span<const float> y_grad, std::span<const float> x) {
  for (std::size_t r = 0; r < w_grad.rows; ++r) {
    float* row = w_grad.data.data() + r * w_grad.cols;
    const float g = y_grad[r];
    for (std::size_t c = 0; c < w_grad.cols; ++c) row[c] += g * x[c];
  }
}

inline float inv_rms(std::span<const float> x, double eps) {
  float ss = 0.0f;
  for (float v : x) ss += v * v;
  return 1.0f / std::sqrt(ss / static_cast<float>(x.size()) + static_cast<float>(eps));
}

inline void rms_norm_into(std::span<const float> x, std::span<const float> gain, double eps,
                          std::span<float> out) {
  const float r = inv_rms(x, eps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gain[i] * (x[i] * r);
}

// Rotary embedding on every head of `v` (half-split pairing: i <-> i + head_dim/2).
// sign = +1 rotates forward, -1 applies the inverse rotation (used for gradients).
inline void rope(std::span<float> v, std::size_t pos, int n_heads, int head_dim, double theta,
                 int sign = 1) {
  const int half = head_dim / 2;
  for (int h = 0; h < n_heads; ++h) {
    float* base = v.data() + static_cast<std::size_t>(h) * head_dim;
    for (int i = 0; i < half; ++i) {
      const double freq = std::pow(theta, -2.0 * i / head_dim);
      const double angle = static_cast<double>(pos) * freq;
      const float c = static_cast<float>(std::cos(angle));
      const float s = static_cast<float>(sign * std::sin(angle));
      const float a = base[i];
      const float b = base[i + half];
      base[i] = a * c - b * s;
      base[i + half] = a * s + b * c;
    }
  }
}

inline float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }
inline float silu(float x) { return x * sigmoid(x); }

}  // namespace mgeo::kernels
