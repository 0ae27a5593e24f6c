#pragma once

// Tape-based reverse-mode differentiation over small dense tensors.
//
// A Graph records every operation in creation order, so the tape is already
// topologically sorted. Values live in one arena per graph; clear() keeps the
// capacity so a graph can be reused sentence after sentence.

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "nllm/params.hpp"
#include "nllm/tensor.hpp"

namespace nllm::ad {

class Graph;

enum class Op : std::uint8_t {
  Leaf,
  Param,
  Add,
  Sub,
  Mul,
  Affine,
  Sigmoid,
  Tanh,
  Exp,
  Log,
  MatVec,
  LogSoftmax,
  LogSumExp,
  Pick,
  Slice,
  Row,
  Concat,
  Sum,
  WeightedSum,
  ClampMin,
};

/// Handle to a tensor recorded on a Graph.
class Var {
 public:
  Var() = default;

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  Shape shape() const;
  int size() const { return shape().size(); }
  /// Valid until the next node is recorded on the same graph.
  std::span<const double> value() const;
  /// Value of a single-element tensor.
  double item() const;

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaves.
  Var constant(const Tensor& t);
  Var constant(Shape shape, std::span<const double> values);
  Var scalar(double v);
  /// Leaf honoring t.requires_grad.
  Var input(const Tensor& t);
  /// Leaf bound to a parameter; the same parameter yields the same node.
  Var param(const Parameter& p);

  // Elementwise. Binary ops accept equal shapes or one single-element operand.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  /// scale * x + shift
  Var affine(Var x, double scale, double shift = 0.0);
  Var sigmoid(Var x);
  Var tanh(Var x);
  Var exp(Var x);
  Var log(Var x);
  Var clamp_min(Var x, double floor);

  /// First `rows` rows of m (all rows when rows < 0) times v.
  Var matvec(Var m, Var v, int rows = -1);
  Var log_softmax(Var x);
  /// Single-element result.
  Var logsumexp(Var x);

  Var pick(Var x, int index);
  Var slice(Var x, int offset, int length);
  Var row(Var m, int r);
  Var concat(std::span<const Var> parts);
  Var sum(std::span<const Var> parts);
  /// sum_k weights[k] * parts[k]
  Var weighted_sum(Var weights, std::span<const Var> parts);

  /// Reverse sweep from a single-element loss.
  void backward(Var loss);
  /// Gradient of a node after backward(); empty if it did not require one.
  std::span<const double> grad(Var v) const;
  /// Adds scale * dLoss/dParam into grads for every parameter on this graph.
  void accumulate_param_grads(GradBuffer& grads, double scale = 1.0) const;

  void clear();
  int node_count() const { return static_cast<int>(nodes_.size()); }

  Shape shape_of(int id) const { return nodes_[static_cast<std::size_t>(id)].shape; }
  std::span<const double> value_of(int id) const;

 private:
  struct Node {
    Shape shape;
    Op op = Op::Leaf;
    bool requires_grad = false;
    int value_offset = 0;
    int grad_offset = 0;
    int arg_begin = 0;
    int arg_count = 0;
    int iaux = 0;
    double daux0 = 0.0;
    double daux1 = 0.0;
    const double* external = nullptr;
  };

  int push(Op op, Shape shape, std::span<const int> args, bool requires_grad);
  double* out_ptr(int id);
  const double* val_ptr(int id) const;
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  int arg(const Node& n, int k) const { return args_[static_cast<std::size_t>(n.arg_begin + k)]; }
  void check_owned(Var v) const;
  void check_finite(int id, const char* what) const;
  Var binary(Op op, Var a, Var b);
  void backprop(int id);

  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> grads_;
  std::vector<int> args_;
  int grad_size_ = 0;
  bool has_grads_ = false;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

inline Var operator+(Var a, Var b) { return a.graph().add(a, b); }
inline Var operator-(Var a, Var b) { return a.graph().sub(a, b); }
inline Var operator*(Var a, Var b) { return a.graph().mul(a, b); }
inline Var sigmoid(Var x) { return x.graph().sigmoid(x); }
inline Var tanh(Var x) { return x.graph().tanh(x); }
inline Var exp(Var x) { return x.graph().exp(x); }
inline Var log(Var x) { return x.graph().log(x); }
inline Var log_softmax(Var x) { return x.graph().log_softmax(x); }
inline Var logsumexp(Var x) { return x.graph().logsumexp(x); }
inline Var matvec(Var m, Var v, int rows = -1) { return m.graph().matvec(m, v, rows); }

}  // namespace nllm::ad
