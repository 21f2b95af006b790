#pragma once

// Differentiable wrappers around the numkit kernels. Each op computes its
// forward value with the same kernel the plain (tape-free) path uses, so a
// taped forward pass matches the plain one bit-for-bit.

#include <optional>
#include <span>
#include <vector>

#include "xmodal/numkit/kernels.hpp"
#include "xmodal/numkit/tape.hpp"

namespace xmodal::ad {

namespace nk = xmodal::numkit;

inline Var matmul(Tape& tape, Var a, Var b) {
  return tape.record(nk::matmul(tape.value(a), tape.value(b)), {a, b}, [](BackwardContext& ctx) {
    if (ctx.needs(0)) ctx.accumulate(0, nk::matmul_nt(ctx.grad(), ctx.input(1)));
    if (ctx.needs(1)) ctx.accumulate(1, nk::matmul_tn(ctx.input(0), ctx.grad()));
  });
}

// A·Bᵀ
inline Var matmul_nt(Tape& tape, Var a, Var b) {
  return tape.record(nk::matmul_nt(tape.value(a), tape.value(b)), {a, b}, [](BackwardContext& ctx) {
    if (ctx.needs(0)) ctx.accumulate(0, nk::matmul(ctx.grad(), ctx.input(1)));
    if (ctx.needs(1)) ctx.accumulate(1, nk::matmul_tn(ctx.grad(), ctx.input(0)));
  });
}

inline Var linear(Tape& tape, Var x, Var weight, std::optional<Var> bias = std::nullopt) {
  Tensord y = nk::linear(tape.value(x), tape.value(weight), bias ? &tape.value(*bias) : nullptr);
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record(std::move(y), std::move(inputs), [](BackwardContext& ctx) {
    if (ctx.needs(0)) ctx.accumulate(0, nk::matmul(ctx.grad(), ctx.input(1)));
    if (ctx.needs(1)) ctx.accumulate(1, nk::matmul_tn(ctx.grad(), ctx.input(0)));
    if (ctx.needs(2)) {
      const Tensord& g = ctx.grad();
      Tensord gb(ctx.input(2).shape());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g.at(r, c);
      ctx.accumulate(2, gb);
    }
  });
}

inline Var add(Tape& tape, Var a, Var b) {
  return tape.record(nk::add(tape.value(a), tape.value(b)), {a, b}, [](BackwardContext& ctx) {
    ctx.accumulate(0, ctx.grad());
    ctx.accumulate(1, ctx.grad());
  });
}

inline Var scale(Tape& tape, Var a, double factor) {
  return tape.record(nk::scale(tape.value(a), factor), {a}, [factor](BackwardContext& ctx) {
    ctx.accumulate(0, nk::scale(ctx.grad(), factor));
  });
}

inline Var transpose(Tape& tape, Var a) {
  return tape.record(nk::transpose(tape.value(a)), {a}, [](BackwardContext& ctx) {
    ctx.accumulate(0, nk::transpose(ctx.grad()));
  });
}

inline Var gelu(Tape& tape, Var x, nk::GeluVariant variant = nk::GeluVariant::tanh) {
  return tape.record(nk::gelu(tape.value(x), variant), {x}, [variant](BackwardContext& ctx) {
    ctx.accumulate(0, nk::gelu_backward(ctx.input(0), ctx.grad(), variant));
  });
}

inline Var layer_norm(Tape& tape, Var x, Var gain, Var bias, double eps) {
  Tensord y = nk::layer_norm(tape.value(x), tape.value(gain), tape.value(bias), eps);
  return tape.record(std::move(y), {x, gain, bias}, [eps](BackwardContext& ctx) {
    auto g = nk::layer_norm_backward(ctx.input(0), ctx.input(1), eps, ctx.grad());
    ctx.accumulate(0, g.input);
    ctx.accumulate(1, g.gain);
    ctx.accumulate(2, g.bias);
  });
}

inline Var softmax(Tape& tape, Var x) {
  return tape.record(nk::softmax(tape.value(x)), {x}, [](BackwardContext& ctx) {
    ctx.accumulate(0, nk::softmax_backward(ctx.output(), ctx.grad()));
  });
}

inline Var conv1d(Tape& tape, Var signal, Var kernels, std::size_t stride, std::size_t groups,
                  std::optional<Var> bias = std::nullopt) {
  Tensord y = nk::conv1d(tape.value(signal), tape.value(kernels), stride, groups,
                         bias ? &tape.value(*bias) : nullptr);
  std::vector<Var> inputs{signal, kernels};
  if (bias) inputs.push_back(*bias);
  return tape.record(std::move(y), std::move(inputs), [stride, groups](BackwardContext& ctx) {
    auto g = nk::conv1d_backward(ctx.input(0), ctx.input(1), stride, groups, ctx.grad());
    ctx.accumulate(0, g.signal);
    ctx.accumulate(1, g.kernels);
    if (ctx.needs(2)) ctx.accumulate(2, g.bias);
  });
}

inline Var pad_cols(Tape& tape, Var x, std::size_t left, std::size_t right) {
  const std::size_t cols = tape.value(x).cols();
  return tape.record(nk::pad_cols(tape.value(x), left, right), {x}, [left, cols](BackwardContext& ctx) {
    ctx.accumulate(0, nk::slice_cols(ctx.grad(), left, cols));
  });
}

inline Var slice_cols(Tape& tape, Var x, std::size_t start, std::size_t count) {
  const std::size_t cols = tape.value(x).cols();
  return tape.record(nk::slice_cols(tape.value(x), start, count), {x}, [start, count, cols](BackwardContext& ctx) {
    ctx.accumulate(0, nk::pad_cols(ctx.grad(), start, cols - start - count));
  });
}

inline Var concat_cols(Tape& tape, const std::vector<Var>& parts) {
  std::vector<Tensord> values;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    values.push_back(tape.value(p));
    widths.push_back(tape.value(p).cols());
  }
  return tape.record(nk::concat_cols(values), parts, [widths](BackwardContext& ctx) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (ctx.needs(i)) ctx.accumulate(i, nk::slice_cols(ctx.grad(), offset, widths[i]));
      offset += widths[i];
    }
  });
}

inline Var concat_rows(Tape& tape, const std::vector<Var>& parts) {
  std::vector<Tensord> values;
  std::vector<std::size_t> heights;
  for (Var p : parts) {
    values.push_back(tape.value(p));
    heights.push_back(tape.value(p).rows());
  }
  return tape.record(nk::concat_rows(values), parts, [heights](BackwardContext& ctx) {
    const Tensord& g = ctx.grad();
    const std::size_t c = g.cols();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < heights.size(); ++i) {
      if (ctx.needs(i)) {
        std::vector<double> part(g.values().begin() + offset * c, g.values().begin() + (offset + heights[i]) * c);
        ctx.accumulate(i, Tensord(ctx.input(i).shape(), std::move(part)));
      }
      offset += heights[i];
    }
  });
}

inline Var mean_rows(Tape& tape, Var x) {
  return tape.record(nk::mean_rows(tape.value(x)), {x}, [](BackwardContext& ctx) {
    const Tensord& in = ctx.input(0);
    const std::size_t rows = in.rows(), cols = in.cols();
    Tensord g(in.shape());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] = ctx.grad()[c] / double(rows);
    ctx.accumulate(0, g);
  });
}

// y = x⊙scale + shift per column, with constant scale and shift vectors.
inline Var affine_cols(Tape& tape, Var x, const std::vector<double>& scale_by, const std::vector<double>& shift_by) {
  Tensord y = tape.value(x);
  const std::size_t cols = y.cols();
  if (scale_by.size() != cols || shift_by.size() != cols) throw ShapeError("affine_cols: vector length mismatch");
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = y[r * cols + c] * scale_by[c] + shift_by[c];
  return tape.record(std::move(y), {x}, [scale_by, cols](BackwardContext& ctx) {
    Tensord g = ctx.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= scale_by[i % cols];
    ctx.accumulate(0, g);
  });
}

// Elementwise product with a constant tensor of the same shape.
inline Var mul_const(Tape& tape, Var x, const Tensord& weights) {
  Tensord y = tape.value(x);
  if (y.size() != weights.size()) throw ShapeError("mul_const: size mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= weights[i];
  return tape.record(std::move(y), {x}, [weights](BackwardContext& ctx) {
    Tensord g = ctx.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= weights[i];
    ctx.accumulate(0, g);
  });
}

inline Var sum(Tape& tape, Var x) {
  double total = 0.0;
  for (double v : tape.value(x).values()) total += v;
  return tape.record(Tensord({1}, total), {x}, [](BackwardContext& ctx) {
    ctx.accumulate(0, Tensord(ctx.input(0).shape(), ctx.grad()[0]));
  });
}

inline Var softmax_cross_entropy(Tape& tape, Var logits, std::vector<int> labels,
                                 std::vector<double> class_weights = {}) {
  auto ce = nk::softmax_cross_entropy<double>(tape.value(logits), labels, class_weights);
  Tensord grad = std::move(ce.grad_logits);
  return tape.record(Tensord({1}, ce.loss), {logits}, [grad = std::move(grad)](BackwardContext& ctx) {
    ctx.accumulate(0, nk::scale(grad, ctx.grad()[0]));
  });
}

}  // namespace xmodal::ad
