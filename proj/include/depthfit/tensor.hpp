#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace depthfit {

using Shape = std::vector<int>;

inline int numel(const Shape& s) {
  int n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor: nonpositive dimension");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ",";
  }
  return out + ")";
}

// Global toggle for expensive value checks (finite values, zero divisors).
// Off by default; tests and the gradcheck CLI switch it on.
inline bool& debug_checks() {
  static bool enabled = false;
  return enabled;
}

class Tape;

// Dense N-D array of doubles, row-major. The canonical image layout is
// (batch, channels, height, width). A tensor optionally carries a handle
// into a Tape node; without one it is a plain immutable value.
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> values;
  Tape* tape = nullptr;
  int node = -1;

  Tensor() = default;
  Tensor(Shape s, std::shared_ptr<std::vector<double>> v) : shape(std::move(s)), values(std::move(v)) {}

  static Tensor zeros(Shape s) {
    int n = numel(s);
    return Tensor(std::move(s), std::make_shared<std::vector<double>>(n, 0.0));
  }
  static Tensor full(Shape s, double v) {
    int n = numel(s);
    return Tensor(std::move(s), std::make_shared<std::vector<double>>(n, v));
  }
  static Tensor scalar(double v) { return full({1}, v); }
  static Tensor from(Shape s, std::vector<double> data) {
    if (numel(s) != static_cast<int>(data.size()))
      throw std::invalid_argument("tensor: shape/data length mismatch");
    return Tensor(std::move(s), std::make_shared<std::vector<double>>(std::move(data)));
  }

  int size() const { return values ? static_cast<int>(values->size()) : 0; }
  bool defined() const { return static_cast<bool>(values); }
  bool on_tape() const { return tape != nullptr && node >= 0; }

  const std::vector<double>& data() const { return *values; }
  std::vector<double>& data() { return *values; }
  double operator[](int i) const { return (*values)[i]; }

  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  // Same values, no graph handle. Gradients stop here.
  Tensor detached() const {
    Tensor t;
    t.shape = shape;
    t.values = values;
    return t;
  }

  // Deep copy of the payload (detached).
  Tensor clone() const {
    Tensor t;
    t.shape = shape;
    t.values = std::make_shared<std::vector<double>>(*values);
    return t;
  }

  void check_finite(const char* where) const {
    for (double v : *values)
      if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite value in ") + where);
  }
};

// A trainable (or frozen) leaf that persists across training steps. The
// gradient buffer accumulates across backward calls until zero_grad().
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Shape s)
      : name(std::move(n)), shape(std::move(s)), value(numel(shape), 0.0), grad(numel(shape), 0.0) {}

  int size() const { return static_cast<int>(value.size()); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

// Reverse-mode tape. Operations append nodes in execution order; backward
// walks the tape in reverse. Node gradients are allocated lazily, so
// subgraphs that do not feed the loss cost nothing in the backward pass.
class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<double> grad;                 // lazily sized
    std::vector<double>* external_grad = nullptr;  // parameter leaves accumulate here
    std::function<void(Tape&, const std::vector<double>&)> backprop;  // arg: this node's grad
  };

  int push(Shape shape, std::function<void(Tape&, const std::vector<double>&)> back) {
    nodes_.push_back(Node{std::move(shape), {}, nullptr, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Register a persistent parameter as a leaf. Its gradient buffer is the
  // parameter's own, so accumulation survives the tape.
  Tensor leaf(Parameter& p) {
    nodes_.push_back(Node{p.shape, {}, &p.grad, nullptr});
    Tensor t;
    t.shape = p.shape;
    t.values = std::shared_ptr<std::vector<double>>(&p.value, [](std::vector<double>*) {});
    t.tape = this;
    t.node = static_cast<int>(nodes_.size()) - 1;
    return t;
  }

  // Register a constant tensor as a watched leaf (gradient kept on the tape).
  // Used by gradient checks on non-parameter inputs.
  Tensor watch(const Tensor& x) {
    if (x.on_tape()) throw std::invalid_argument("watch: tensor already recorded");
    nodes_.push_back(Node{x.shape, {}, nullptr, nullptr});
    Tensor t = x;
    t.tape = this;
    t.node = static_cast<int>(nodes_.size()) - 1;
    return t;
  }

  std::vector<double>& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.external_grad) return *n.external_grad;
    if (n.grad.empty()) n.grad.assign(static_cast<size_t>(numel(n.shape)), 0.0);
    return n.grad;
  }

  bool grad_touched(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.external_grad != nullptr || !n.grad.empty();
  }

  const Shape& node_shape(int id) const { return nodes_[static_cast<size_t>(id)].shape; }
  int node_count() const { return static_cast<int>(nodes_.size()); }

  // Propagate d(loss)/d(node) into every reachable leaf. The loss must be a
  // scalar recorded on this tape. Repeated calls accumulate into leaf buffers.
  void backward(const Tensor& loss) {
    if (!loss.on_tape() || loss.tape != this) throw std::invalid_argument("backward: loss not on this tape");
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    // Intermediate gradients live in walk-local buffers; only leaves fold
    // into persistent storage, so repeated backward calls stay correct.
    std::vector<char> seeded(nodes_.size(), 0);
    std::vector<std::vector<double>> local(nodes_.size());
    local[static_cast<size_t>(loss.node)] = {1.0};
    seeded[static_cast<size_t>(loss.node)] = 1;
    walk_local_ = &local;
    walk_seeded_ = &seeded;
    for (int id = loss.node; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!seeded[static_cast<size_t>(id)]) continue;
      std::vector<double>& g = local[static_cast<size_t>(id)];
      if (n.backprop) {
        n.backprop(*this, g);
      } else {
        std::vector<double>& dst = grad_persistent(id);
        for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
      g.clear();
      g.shrink_to_fit();
    }
    walk_local_ = nullptr;
    walk_seeded_ = nullptr;
  }

  // During a backward walk, op closures call acc() to add into a parent's
  // gradient. Outside a walk this is the persistent per-node buffer.
  std::vector<double>& acc(int id) {
    if (walk_local_) {
      auto& local = *walk_local_;
      auto& seeded = *walk_seeded_;
      if (!seeded[static_cast<size_t>(id)]) {
        local[static_cast<size_t>(id)].assign(static_cast<size_t>(numel(nodes_[static_cast<size_t>(id)].shape)), 0.0);
        seeded[static_cast<size_t>(id)] = 1;
      }
      return local[static_cast<size_t>(id)];
    }
    return grad_persistent(id);
  }

  // Persistent gradient of a node (leaf buffers live here after backward).
  std::vector<double>& grad_persistent(int id) { return grad(id); }

 private:
  std::vector<Node> nodes_;
  std::vector<std::vector<double>>* walk_local_ = nullptr;
  std::vector<char>* walk_seeded_ = nullptr;
};

inline void require_same_tape(const Tensor& a, const Tensor& b) {
  if (a.on_tape() && b.on_tape() && a.tape != b.tape)
    throw std::invalid_argument("operands recorded on different tapes");
}

inline Tape* tape_of(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  if (a.on_tape()) return a.tape;
  if (b.on_tape()) return b.tape;
  return nullptr;
}

}  // namespace depthfit
