#pragma once

// Dense forward and backward kernels. All reductions run in a fixed
// left-to-right order so results are reproducible bit-for-bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "xmodal/numkit/tensor.hpp"

namespace xmodal::numkit {

enum class GeluVariant { tanh, erf };

namespace detail {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace detail

// C = A·B
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = 0;
      for (std::size_t t = 0; t < k; ++t) sum += a[i * k + t] * b[t * n + j];
      c[i * n + j] = sum;
    }
  }
  return c;
}

// C = A·Bᵀ, with B given as [n×k].
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()) + "^T");
  }
  Tensor<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* br = b.data() + j * k;
      T sum = 0;
      for (std::size_t t = 0; t < k; ++t) sum += ar[t] * br[t];
      c[i * n + j] = sum;
    }
  }
  return c;
}

// C = Aᵀ·B, with A given as [k×m].
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul_tn");
  detail::require_matrix(b, "matmul_tn");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul_tn: inner dimensions differ, " + shape_string(a.shape()) + "^T x " +
                     shape_string(b.shape()));
  }
  Tensor<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = 0;
      for (std::size_t t = 0; t < k; ++t) sum += a[t * m + i] * b[t * n + j];
      c[i * n + j] = sum;
    }
  }
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

// Adds a per-column bias vector to every row.
template <typename T>
void add_row_bias_inplace(Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.size() != x.cols()) {
    throw ShapeError("bias of " + shape_string(bias.shape()) + " does not match " +
                     std::to_string(x.cols()) + " columns");
  }
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) x[r * n + c] += bias[c];
}

// Fully connected layer in row form: y = x·Wᵀ + b, W stored [out×in].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias = nullptr) {
  Tensor<T> y = matmul_nt(x, weight);
  if (bias) add_row_bias_inplace(y, *bias);
  return y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out = a;
  for (auto& v : out.values()) v *= factor;
  return out;
}

template <typename T>
T gelu_scalar(T x, GeluVariant variant) {
  if (variant == GeluVariant::erf) {
    return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  }
  const T c = std::sqrt(T(2) / std::numbers::pi_v<T>);
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_derivative(T x, GeluVariant variant) {
  if (variant == GeluVariant::erf) {
    const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
    const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    return cdf + x * pdf;
  }
  const T c = std::sqrt(T(2) / std::numbers::pi_v<T>);
  const T inner = c * (x + T(0.044715) * x * x * x);
  const T th = std::tanh(inner);
  const T dinner = c * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * dinner;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x, GeluVariant variant = GeluVariant::tanh) {
  Tensor<T> out = x;
  for (auto& v : out.values()) v = gelu_scalar(v, variant);
  return out;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& grad_out, GeluVariant variant) {
  Tensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= gelu_derivative(x[i], variant);
  return g;
}

// Per-row statistics used by layer_norm and its backward pass.
template <typename T>
struct RowStats {
  std::vector<T> mean;
  std::vector<T> inv_std;
};

template <typename T>
RowStats<T> row_stats(const Tensor<T>& x, T eps) {
  const std::size_t n = x.cols(), rows = x.rows();
  RowStats<T> stats{std::vector<T>(rows), std::vector<T>(rows)};
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * n;
    T sum = 0;
    for (std::size_t c = 0; c < n; ++c) sum += xr[c];
    const T mean = sum / T(n);
    T sq = 0;
    for (std::size_t c = 0; c < n; ++c) sq += (xr[c] - mean) * (xr[c] - mean);
    stats.mean[r] = mean;
    stats.inv_std[r] = T(1) / std::sqrt(sq / T(n) + eps);
  }
  return stats;
}

// Normalizes each row over the last axis: y = gain⊙(x−μ)/√(σ²+eps) + bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    throw ShapeError("layer_norm: gain/bias " + shape_string(gain.shape()) + " vs input " +
                     shape_string(x.shape()));
  }
  const auto stats = row_stats(x, eps);
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c)
      y[r * n + c] = gain[c] * ((x[r * n + c] - stats.mean[r]) * stats.inv_std[r]) + bias[c];
  return y;
}

template <typename T>
struct LayerNormGrads {
  Tensor<T> input;
  Tensor<T> gain;
  Tensor<T> bias;
};

template <typename T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gain, T eps,
                                      const Tensor<T>& grad_out) {
  const std::size_t n = x.cols(), rows = x.rows();
  const auto stats = row_stats(x, eps);
  LayerNormGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(gain.shape()), Tensor<T>(gain.shape())};
  std::vector<T> xhat(n), dxhat(n);
  for (std::size_t r = 0; r < rows; ++r) {
    T mean_dxhat = 0, mean_dxhat_xhat = 0;
    for (std::size_t c = 0; c < n; ++c) {
      xhat[c] = (x[r * n + c] - stats.mean[r]) * stats.inv_std[r];
      const T dy = grad_out[r * n + c];
      dxhat[c] = dy * gain[c];
      g.gain[c] += dy * xhat[c];
      g.bias[c] += dy;
      mean_dxhat += dxhat[c];
      mean_dxhat_xhat += dxhat[c] * xhat[c];
    }
    mean_dxhat /= T(n);
    mean_dxhat_xhat /= T(n);
    for (std::size_t c = 0; c < n; ++c) {
      g.input[r * n + c] = stats.inv_std[r] * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
    }
  }
  return g;
}

// Group norm with one group per channel on a [C×L] signal: each channel is
// normalized over time, then scaled and shifted by its own gain and bias.
template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  detail::require_matrix(x, "channel_norm");
  const std::size_t channels = x.dim(0), n = x.dim(1);
  if (gain.size() != channels || bias.size() != channels) {
    throw ShapeError("channel_norm: gain/bias " + shape_string(gain.shape()) + " vs " +
                     std::to_string(channels) + " channels");
  }
  const auto stats = row_stats(x, eps);
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < channels; ++r)
    for (std::size_t c = 0; c < n; ++c)
      y[r * n + c] = gain[r] * ((x[r * n + c] - stats.mean[r]) * stats.inv_std[r]) + bias[r];
  return y;
}

// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  const std::size_t n = x.cols();
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* xr = x.data() + r * n;
    T* yr = y.data() + r * n;
    T peak = xr[0];
    for (std::size_t c = 1; c < n; ++c) peak = std::max(peak, xr[c]);
    T sum = 0;
    for (std::size_t c = 0; c < n; ++c) {
      yr[c] = std::exp(xr[c] - peak);
      sum += yr[c];
    }
    for (std::size_t c = 0; c < n; ++c) yr[c] /= sum;
  }
  return y;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& grad_out) {
  const std::size_t n = y.cols();
  Tensor<T> g(y.shape());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    T dot = 0;
    for (std::size_t c = 0; c < n; ++c) dot += grad_out[r * n + c] * y[r * n + c];
    for (std::size_t c = 0; c < n; ++c) g[r * n + c] = y[r * n + c] * (grad_out[r * n + c] - dot);
  }
  return g;
}

inline std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride) {
  if (length < kernel) return 0;
  return (length - kernel) / stride + 1;
}

// Valid (unpadded) grouped 1-D cross-correlation.
// signal [C_in×L], kernels [C_out×(C_in/groups)×K] -> [C_out×L_out].
template <typename T>
Tensor<T> conv1d(const Tensor<T>& signal, const Tensor<T>& kernels, std::size_t stride,
                 std::size_t groups = 1, const Tensor<T>* bias = nullptr) {
  detail::require_matrix(signal, "conv1d signal");
  if (kernels.rank() != 3) throw ShapeError("conv1d kernels must be rank 3, got " + shape_string(kernels.shape()));
  if (stride == 0 || groups == 0) throw ShapeError("conv1d stride and groups must be positive");
  const std::size_t c_in = signal.dim(0), length = signal.dim(1);
  const std::size_t c_out = kernels.dim(0), per_group_in = kernels.dim(1), k = kernels.dim(2);
  if (c_in % groups != 0 || c_out % groups != 0 || per_group_in * groups != c_in) {
    throw ShapeError("conv1d: signal " + shape_string(signal.shape()) + " incompatible with kernels " +
                     shape_string(kernels.shape()) + " and " + std::to_string(groups) + " groups");
  }
  if (length < k) {
    throw InputTooShortError("conv1d: input length " + std::to_string(length) +
                             " is shorter than kernel " + std::to_string(k));
  }
  const std::size_t out_len = conv_output_length(length, k, stride);
  const std::size_t per_group_out = c_out / groups;
  Tensor<T> out({c_out, out_len});
  for (std::size_t co = 0; co < c_out; ++co) {
    const std::size_t first_in = (co / per_group_out) * per_group_in;
    const T b = bias ? (*bias)[co] : T(0);
    for (std::size_t t = 0; t < out_len; ++t) {
      T sum = 0;
      for (std::size_t ci = 0; ci < per_group_in; ++ci) {
        const T* w = kernels.data() + (co * per_group_in + ci) * k;
        const T* s = signal.data() + (first_in + ci) * length + t * stride;
        for (std::size_t j = 0; j < k; ++j) sum += w[j] * s[j];
      }
      out[co * out_len + t] = sum + b;
    }
  }
  return out;
}

template <typename T>
struct Conv1dGrads {
  Tensor<T> signal;
  Tensor<T> kernels;
  Tensor<T> bias;
};

template <typename T>
Conv1dGrads<T> conv1d_backward(const Tensor<T>& signal, const Tensor<T>& kernels, std::size_t stride,
                               std::size_t groups, const Tensor<T>& grad_out) {
  const std::size_t length = signal.dim(1);
  const std::size_t c_out = kernels.dim(0), per_group_in = kernels.dim(1), k = kernels.dim(2);
  const std::size_t out_len = grad_out.dim(1);
  const std::size_t per_group_out = c_out / groups;
  Conv1dGrads<T> g{Tensor<T>(signal.shape()), Tensor<T>(kernels.shape()), Tensor<T>({c_out})};
  for (std::size_t co = 0; co < c_out; ++co) {
    const std::size_t first_in = (co / per_group_out) * per_group_in;
    for (std::size_t t = 0; t < out_len; ++t) {
      const T dy = grad_out[co * out_len + t];
      g.bias[co] += dy;
      for (std::size_t ci = 0; ci < per_group_in; ++ci) {
        const std::size_t w_off = (co * per_group_in + ci) * k;
        const std::size_t s_off = (first_in + ci) * length + t * stride;
        for (std::size_t j = 0; j < k; ++j) {
          g.kernels[w_off + j] += dy * signal[s_off + j];
          g.signal[s_off + j] += dy * kernels[w_off + j];
        }
      }
    }
  }
  return g;
}

// Zero-pads the column axis of a matrix.
template <typename T>
Tensor<T> pad_cols(const Tensor<T>& x, std::size_t left, std::size_t right) {
  detail::require_matrix(x, "pad_cols");
  const std::size_t r = x.dim(0), c = x.dim(1), w = c + left + right;
  Tensor<T> out({r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * w + left + j] = x[i * c + j];
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count) {
  detail::require_matrix(x, "slice_cols");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (start + count > c || count == 0) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_string(x.shape()));
  }
  Tensor<T> out({r, count});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x[i * c + start + j];
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw ShapeError("concat_cols: row count mismatch");
    total += p.cols();
  }
  Tensor<T> out({r, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * total + offset + j] = p[i * c + j];
    offset += c;
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t c = parts.front().cols();
  std::vector<T> values;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: column count mismatch");
    values.insert(values.end(), p.values().begin(), p.values().end());
    rows += p.rows();
  }
  return Tensor<T>({rows, c}, std::move(values));
}

// Mean over rows of a [T×D] matrix, returned as [1×D].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  const std::size_t n = x.cols(), rows = x.rows();
  if (rows == 0) throw EmptySequenceError("mean over an empty sequence");
  Tensor<T> out({1, n});
  for (std::size_t c = 0; c < n; ++c) {
    T sum = 0;
    for (std::size_t r = 0; r < rows; ++r) sum += x[r * n + c];
    out[c] = sum / T(rows);
  }
  return out;
}

template <typename T>
Tensor<T> max_rows(const Tensor<T>& x) {
  const std::size_t n = x.cols(), rows = x.rows();
  if (rows == 0) throw EmptySequenceError("max over an empty sequence");
  Tensor<T> out({1, n});
  for (std::size_t c = 0; c < n; ++c) {
    T best = x[c];
    for (std::size_t r = 1; r < rows; ++r) best = std::max(best, x[r * n + c]);
    out[c] = best;
  }
  return out;
}

template <typename T>
struct CrossEntropy {
  T loss;
  Tensor<T> grad_logits;
};

// Mean softmax cross-entropy over rows of logits [N×C]. Optional per-class
// weights turn it into a weighted mean (Σ wᵢ·ℓᵢ / Σ wᵢ).
template <typename T>
CrossEntropy<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels,
                                      std::span<const T> class_weights = {}) {
  const std::size_t n = logits.rows(), classes = logits.cols();
  if (labels.size() != n) {
    throw ShapeError("cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  const Tensor<T> probs = softmax(logits);
  CrossEntropy<T> ce{T(0), Tensor<T>(logits.shape())};
  T total_weight = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ShapeError("cross-entropy: label " + std::to_string(y) + " outside " + std::to_string(classes) + " classes");
    }
    total_weight += class_weights.empty() ? T(1) : class_weights[y];
  }
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    const T w = (class_weights.empty() ? T(1) : class_weights[y]) / total_weight;
    const T* xr = logits.data() + r * classes;
    T peak = xr[0];
    for (std::size_t c = 1; c < classes; ++c) peak = std::max(peak, xr[c]);
    T sum = 0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(xr[c] - peak);
    ce.loss += w * (std::log(sum) + peak - xr[y]);
    for (std::size_t c = 0; c < classes; ++c) {
      ce.grad_logits[r * classes + c] = w * (probs[r * classes + c] - (c == static_cast<std::size_t>(y) ? T(1) : T(0)));
    }
  }
  return ce;
}

}  // namespace xmodal::numkit
