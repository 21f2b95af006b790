#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/numkit/tensor.hpp"

namespace xmodal::ad {

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t index = std::numeric_limits<std::size_t>::max();
};

class Tape;

// What a primitive's backward function sees: the upstream gradient, its own
// saved inputs and output, and a sink for input gradients.
class BackwardContext {
 public:
  const Tensord& grad() const { return *grad_; }
  const Tensord& output() const { return *output_; }
  const Tensord& input(std::size_t i) const { return *inputs_[i]; }
  bool needs(std::size_t i) const { return i < sinks_.size() && sinks_[i] != nullptr; }

  void accumulate(std::size_t i, const Tensord& g) {
    if (!needs(i)) return;
    Tensord* sink = sinks_[i];
    if (sink->empty()) {
      *sink = g;
      return;
    }
    if (sink->size() != g.size()) throw ShapeError("gradient size mismatch during backward pass");
    for (std::size_t k = 0; k < g.size(); ++k) (*sink)[k] += g[k];
  }

 private:
  friend class Tape;
  const Tensord* grad_ = nullptr;
  const Tensord* output_ = nullptr;
  std::vector<const Tensord*> inputs_;
  std::vector<Tensord*> sinks_;
};

class Gradients {
 public:
  const Tensord& operator[](Var v) const {
    auto it = grads_.find(v.index);
    if (it == grads_.end()) throw Error("no gradient recorded for tape variable " + std::to_string(v.index));
    return it->second;
  }
  bool contains(Var v) const { return grads_.count(v.index) != 0; }

 private:
  friend class Tape;
  std::map<std::size_t, Tensord> grads_;
};

// Ordered record of primitive ops from one forward pass. backward() replays
// the record in exact reverse order and leaves the tape empty.
class Tape {
 public:
  using Backward = std::function<void(BackwardContext&)>;

  Var variable(Tensord value) { return push(std::move(value), {}, nullptr, true, true); }
  Var constant(Tensord value) { return push(std::move(value), {}, nullptr, false, false); }

  // Constant that refers to a tensor owned elsewhere (e.g. frozen encoder
  // weights); the referent must outlive the tape.
  Var constant_ref(const Tensord& value) {
    Var v = push(Tensord(), {}, nullptr, false, false);
    nodes_.back().external = &value;
    return v;
  }

  Var record(Tensord value, std::vector<Var> inputs, Backward backward) {
    bool needs_grad = false;
    for (Var in : inputs) needs_grad = needs_grad || node(in).requires_grad;
    return push(std::move(value), std::move(inputs), std::move(backward), needs_grad, false);
  }

  const Tensord& value(Var v) const { return node(v).get(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }

  // Gradients of a scalar output with respect to every variable leaf. When
  // `visit_order` is given it receives the indices of the ops whose backward
  // ran, in the order they ran.
  Gradients backward(Var root, std::vector<std::size_t>* visit_order = nullptr) {
    if (value(root).size() != 1) {
      throw ShapeError("backward needs a scalar output, got " + shape_string(value(root).shape()));
    }
    std::vector<Tensord> grads(nodes_.size());
    grads[root.index] = Tensord(value(root).shape(), 1.0);
    for (std::size_t i = root.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || !n.requires_grad || grads[i].empty()) continue;
      BackwardContext ctx;
      ctx.grad_ = &grads[i];
      ctx.output_ = &n.get();
      for (Var in : n.inputs) {
        ctx.inputs_.push_back(&nodes_[in.index].get());
        ctx.sinks_.push_back(nodes_[in.index].requires_grad ? &grads[in.index] : nullptr);
      }
      n.backward(ctx);
      if (visit_order) visit_order->push_back(i);
    }
    Gradients out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].is_variable) continue;
      out.grads_[i] = grads[i].empty() ? Tensord(nodes_[i].value.shape(), 0.0) : std::move(grads[i]);
    }
    nodes_.clear();
    return out;
  }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensord value;
    std::vector<Var> inputs;
    Backward backward;
    bool requires_grad = false;
    bool is_variable = false;
    const Tensord* external = nullptr;

    const Tensord& get() const { return external ? *external : value; }
  };

  const Node& node(Var v) const {
    if (v.index >= nodes_.size()) throw Error("stale or foreign tape variable " + std::to_string(v.index));
    return nodes_[v.index];
  }

  Var push(Tensord value, std::vector<Var> inputs, Backward backward, bool requires_grad, bool is_variable) {
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward), requires_grad, is_variable});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace xmodal::ad
