#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "ugcn/errors.hpp"

namespace ugcn {

// Dense row-major double tensor. `grad` is populated by Tape::backward for
// tensors registered as leaves with requires_grad set.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
      : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }

  static Tensor from(std::vector<std::size_t> s, std::vector<double> values) {
    Tensor t;
    t.shape = std::move(s);
    if (values.size() != count(t.shape))
      throw ShapeMismatch("value count " + std::to_string(values.size()) +
                          " does not match shape product " +
                          std::to_string(count(t.shape)));
    t.data = std::move(values);
    return t;
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const {
    return data[i * shape[1] + j];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

  void zero_grad() { grad.assign(data.size(), 0.0); }
};

// Handle into a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Records primitive applications in topological order; backward replays them
// once in reverse. A tape is confined to one thread.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, Var)>;

  // Registers a leaf; the tensor's grad buffer receives its gradient after
  // backward when requires_grad is set. The value is copied onto the tape.
  Var leaf(Tensor& t) {
    Var v = push(t, t.requires_grad);
    nodes_[v.id].leaf = t.requires_grad ? &t : nullptr;
    return v;
  }

  // A value that never needs a gradient.
  Var constant(Tensor t) {
    Var v;
    v.id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{std::move(t), {}, {}, nullptr, false});
    return v;
  }

  // Records an op output. `needs_grad` should be true iff any input needs one;
  // `back` reads grad(out) and accumulates into grad(parent).
  Var node(Tensor value, bool needs_grad, BackFn back) {
    Var v;
    v.id = static_cast<int>(nodes_.size());
    nodes_.push_back(
        Node{std::move(value), {}, std::move(back), nullptr, needs_grad});
    return v;
  }

  const Tensor& val(Var v) const { return nodes_[v.id].value; }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Gradient buffer of a node, allocated on first touch (backward phase only).
  Tensor& grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.data.empty()) {
      n.grad = Tensor(n.value.shape);
    }
    return n.grad;
  }

  void backward(Var out) {
    if (consumed_) throw TapeAlreadyConsumed("backward already run");
    const Tensor& o = val(out);
    if (o.size() != 1)
      throw NonScalarOutput("output has " + std::to_string(o.size()) +
                            " elements");
    consumed_ = true;
    grad(out).data[0] = 1.0;
    for (int i = out.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.data.empty()) continue;
      if (n.back) n.back(*this, Var{i});
      if (n.leaf) {
        if (n.leaf->grad.size() != n.leaf->data.size()) n.leaf->zero_grad();
        for (std::size_t k = 0; k < n.grad.data.size(); ++k)
          n.leaf->grad[k] += n.grad.data[k];
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackFn back;
    Tensor* leaf;
    bool needs_grad;
  };

  Var push(const Tensor& t, bool needs_grad) {
    Var v;
    v.id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{t, {}, nullptr, nullptr, needs_grad});
    return v;
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace ugcn
