#include "nllm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nllm/error.hpp"

namespace nllm::ad {

namespace {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Param: return "param";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Affine: return "scale";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::MatVec: return "matvec";
    case Op::LogSoftmax: return "log_softmax";
    case Op::LogSumExp: return "logsumexp";
    case Op::Pick: return "pick";
    case Op::Slice: return "slice";
    case Op::Row: return "row";
    case Op::Concat: return "concat";
    case Op::Sum: return "sum";
    case Op::WeightedSum: return "weighted_sum";
    case Op::ClampMin: return "clamp_min";
  }
  return "?";
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double max_of(const double* x, int n) {
  double m = x[0];
  for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

double logsumexp_raw(const double* x, int n) {
  const double m = max_of(x, n);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}

}  // namespace

Shape Var::shape() const { return graph_->shape_of(id_); }

std::span<const double> Var::value() const { return graph_->value_of(id_); }

double Var::item() const {
  auto v = value();
  if (v.size() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
  return v[0];
}

std::span<const double> Graph::value_of(int id) const {
  const Node& n = node(id);
  return {val_ptr(id), static_cast<std::size_t>(n.shape.size())};
}

const double* Graph::val_ptr(int id) const {
  const Node& n = node(id);
  return n.external != nullptr ? n.external : values_.data() + n.value_offset;
}

double* Graph::out_ptr(int id) { return values_.data() + node(id).value_offset; }

int Graph::push(Op op, Shape shape, std::span<const int> args, bool requires_grad) {
  Node n;
  n.shape = shape;
  n.op = op;
  n.requires_grad = requires_grad;
  n.value_offset = static_cast<int>(values_.size());
  n.grad_offset = grad_size_;
  n.arg_begin = static_cast<int>(args_.size());
  n.arg_count = static_cast<int>(args.size());
  args_.insert(args_.end(), args.begin(), args.end());
  values_.resize(values_.size() + static_cast<std::size_t>(shape.size()));
  grad_size_ += shape.size();
  nodes_.push_back(n);
  has_grads_ = false;
  return static_cast<int>(nodes_.size()) - 1;
}

void Graph::check_owned(Var v) const {
  if (!v.valid() || &v.graph() != this || v.id() < 0 || v.id() >= node_count()) {
    throw std::invalid_argument("variable does not belong to this graph");
  }
}

void Graph::check_finite(int id, const char* what) const {
  auto v = value_of(id);
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + what);
  }
}

Var Graph::constant(const Tensor& t) { return constant(t.shape, t.values); }

Var Graph::constant(Shape shape, std::span<const double> values) {
  if (static_cast<int>(values.size()) != shape.size()) throw ShapeError("constant value count mismatch");
  // values may alias this graph's arena, which push() can reallocate.
  std::vector<double> copy(values.begin(), values.end());
  const int id = push(Op::Leaf, shape, {}, false);
  std::copy(copy.begin(), copy.end(), out_ptr(id));
  check_finite(id, "leaf");
  return {this, id};
}

Var Graph::scalar(double v) { return constant(Shape::scalar(), std::span<const double>(&v, 1)); }

Var Graph::input(const Tensor& t) {
  Var v = constant(t);
  nodes_.back().requires_grad = t.requires_grad;
  return v;
}

Var Graph::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.shape = p.shape();
  n.op = Op::Param;
  n.requires_grad = true;
  n.value_offset = -1;
  n.grad_offset = grad_size_;
  n.arg_begin = static_cast<int>(args_.size());
  n.iaux = p.index();
  n.external = p.value().values.data();
  grad_size_ += n.shape.size();
  nodes_.push_back(n);
  has_grads_ = false;
  const int id = node_count() - 1;
  param_nodes_.emplace(&p, id);
  return {this, id};
}

Var Graph::binary(Op op, Var a, Var b) {
  check_owned(a);
  check_owned(b);
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  Shape out = sa;
  if (!(sa == sb)) {
    if (sb.size() == 1) {
      out = sa;
    } else if (sa.size() == 1) {
      out = sb;
    } else {
      throw ShapeError(std::string(op_name(op)) + ": shape mismatch " + sa.str() + " vs " + sb.str());
    }
  }
  const int args[2] = {a.id(), b.id()};
  const bool req = node(a.id()).requires_grad || node(b.id()).requires_grad;
  const int id = push(op, out, args, req);
  const double* x = val_ptr(a.id());
  const double* y = val_ptr(b.id());
  double* o = out_ptr(id);
  const int n = out.size();
  const int sx = sa.size() == 1 ? 0 : 1;
  const int sy = sb.size() == 1 ? 0 : 1;
  for (int i = 0; i < n; ++i) {
    const double u = x[i * sx];
    const double w = y[i * sy];
    switch (op) {
      case Op::Add: o[i] = u + w; break;
      case Op::Sub: o[i] = u - w; break;
      default: o[i] = u * w; break;
    }
  }
  check_finite(id, op_name(op));
  return {this, id};
}

Var Graph::add(Var a, Var b) { return binary(Op::Add, a, b); }
Var Graph::sub(Var a, Var b) { return binary(Op::Sub, a, b); }
Var Graph::mul(Var a, Var b) { return binary(Op::Mul, a, b); }

Var Graph::affine(Var x, double scale, double shift) {
  check_owned(x);
  const int args[1] = {x.id()};
  const int id = push(Op::Affine, x.shape(), args, node(x.id()).requires_grad);
  nodes_.back().daux0 = scale;
  nodes_.back().daux1 = shift;
  const double* in = val_ptr(x.id());
  double* o = out_ptr(id);
  for (int i = 0; i < x.size(); ++i) o[i] = scale * in[i] + shift;
  check_finite(id, "scale");
  return {this, id};
}

namespace {
template <class F>
void unary_fill(const double* in, double* out, int n, F f) {
  for (int i = 0; i < n; ++i) out[i] = f(in[i]);
}
}  // namespace

Var Graph::sigmoid(Var x) {
  check_owned(x);
  const int args[1] = {x.id()};
  const int id = push(Op::Sigmoid, x.shape(), args, node(x.id()).requires_grad);
  unary_fill(val_ptr(x.id()), out_ptr(id), x.size(), stable_sigmoid);
  return {this, id};
}

Var Graph::tanh(Var x) {
  check_owned(x);
  const int args[1] = {x.id()};
  const int id = push(Op::Tanh, x.shape(), args, node(x.id()).requires_grad);
  unary_fill(val_ptr(x.id()), out_ptr(id), x.size(), [](double v) { return std::tanh(v); });
  return {this, id};
}

Var Graph::exp(Var x) {
  check_owned(x);
  const int args[1] = {x.id()};
  const int id = push(Op::Exp, x.shape(), args, node(x.id()).requires_grad);
  unary_fill(val_ptr(x.id()), out_ptr(id), x.size(), [](double v) { return std::exp(v); });
  check_finite(id, "exp");
  return {this, id};
}

Var Graph::log(Var x) {
  check_owned(x);
  for (double v : x.value()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value");
  }
  const int args[1] = {x.id()};
  const int id = push(Op::Log, x.shape(), args, node(x.id()).requires_grad);
  unary_fill(val_ptr(x.id()), out_ptr(id), x.size(), [](double v) { return std::log(v); });
  return {this, id};
}

Var Graph::clamp_min(Var x, double floor) {
  check_owned(x);
  const int args[1] = {x.id()};
  const int id = push(Op::ClampMin, x.shape(), args, node(x.id()).requires_grad);
  nodes_.back().daux0 = floor;
  unary_fill(val_ptr(x.id()), out_ptr(id), x.size(), [floor](double v) { return std::max(v, floor); });
  return {this, id};
}

Var Graph::matvec(Var m, Var v, int rows) {
  check_owned(m);
  check_owned(v);
  const Shape sm = m.shape();
  const Shape sv = v.shape();
  const int cols = sm.rank() == 2 ? sm.cols() : sm.rows();
  const int total_rows = sm.rank() == 2 ? sm.rows() : 1;
  if (sv.size() != cols) {
    throw ShapeError("matvec: inner dimension mismatch " + sm.str() + " x " + sv.str());
  }
  if (rows < 0) rows = total_rows;
  if (rows == 0 || rows > total_rows) throw ShapeError("matvec: row count out of range");
  const int args[2] = {m.id(), v.id()};
  const int id = push(Op::MatVec, Shape::vector(rows), args,
                      node(m.id()).requires_grad || node(v.id()).requires_grad);
  nodes_.back().iaux = rows;
  const double* a = val_ptr(m.id());
  const double* x = val_ptr(v.id());
  double* o = out_ptr(id);
  for (int r = 0; r < rows; ++r) {
    const double* ar = a + static_cast<std::ptrdiff_t>(r) * cols;
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += ar[c] * x[c];
    o[r] = s;
  }
  check_finite(id, "matvec");
  return {this, id};
}

Var Graph::log_softmax(Var x) {
  check_owned(x);
  check_finite(x.id(), "log_softmax input");
  const int args[1] = {x.id()};
  const int id = push(Op::LogSoftmax, Shape::vector(x.size()), args, node(x.id()).requires_grad);
  const double* in = val_ptr(x.id());
  const int n = x.size();
  const double lse = logsumexp_raw(in, n);
  double* o = out_ptr(id);
  for (int i = 0; i < n; ++i) o[i] = in[i] - lse;
  return {this, id};
}

Var Graph::logsumexp(Var x) {
  check_owned(x);
  check_finite(x.id(), "logsumexp input");
  const int args[1] = {x.id()};
  const int id = push(Op::LogSumExp, Shape::scalar(), args, node(x.id()).requires_grad);
  out_ptr(id)[0] = logsumexp_raw(val_ptr(x.id()), x.size());
  return {this, id};
}

Var Graph::pick(Var x, int index) {
  check_owned(x);
  if (index < 0 || index >= x.size()) throw ShapeError("pick: index out of range");
  const int args[1] = {x.id()};
  const int id = push(Op::Pick, Shape::scalar(), args, node(x.id()).requires_grad);
  nodes_.back().iaux = index;
  out_ptr(id)[0] = val_ptr(x.id())[index];
  return {this, id};
}

Var Graph::slice(Var x, int offset, int length) {
  check_owned(x);
  if (offset < 0 || length <= 0 || offset + length > x.size()) throw ShapeError("slice: range out of bounds");
  const int args[1] = {x.id()};
  const int id = push(Op::Slice, Shape::vector(length), args, node(x.id()).requires_grad);
  nodes_.back().iaux = offset;
  const double* in = val_ptr(x.id()) + offset;
  std::copy(in, in + length, out_ptr(id));
  return {this, id};
}

Var Graph::row(Var m, int r) {
  check_owned(m);
  const Shape sm = m.shape();
  if (sm.rank() != 2) throw ShapeError("row: expected a matrix, got " + sm.str());
  if (r < 0 || r >= sm.rows()) throw ShapeError("row: index out of range");
  const int args[1] = {m.id()};
  const int id = push(Op::Row, Shape::vector(sm.cols()), args, node(m.id()).requires_grad);
  nodes_.back().iaux = r;
  const double* in = val_ptr(m.id()) + static_cast<std::ptrdiff_t>(r) * sm.cols();
  std::copy(in, in + sm.cols(), out_ptr(id));
  return {this, id};
}

Var Graph::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<int> ids;
  ids.reserve(parts.size());
  int total = 0;
  bool req = false;
  for (Var p : parts) {
    check_owned(p);
    ids.push_back(p.id());
    total += p.size();
    req = req || node(p.id()).requires_grad;
  }
  const int id = push(Op::Concat, Shape::vector(total), ids, req);
  double* o = out_ptr(id);
  for (int pid : ids) {
    auto v = value_of(pid);
    o = std::copy(v.begin(), v.end(), o);
  }
  return {this, id};
}

Var Graph::sum(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("sum: no inputs");
  std::vector<int> ids;
  bool req = false;
  const Shape s = parts.front().shape();
  for (Var p : parts) {
    check_owned(p);
    if (!(p.shape() == s)) throw ShapeError("sum: shape mismatch");
    ids.push_back(p.id());
    req = req || node(p.id()).requires_grad;
  }
  const int id = push(Op::Sum, s, ids, req);
  double* o = out_ptr(id);
  for (int pid : ids) {
    const double* in = val_ptr(pid);
    for (int i = 0; i < s.size(); ++i) o[i] += in[i];
  }
  check_finite(id, "sum");
  return {this, id};
}

Var Graph::weighted_sum(Var weights, std::span<const Var> parts) {
  check_owned(weights);
  if (parts.empty()) throw ShapeError("weighted_sum: no inputs");
  if (weights.size() != static_cast<int>(parts.size())) throw ShapeError("weighted_sum: weight count mismatch");
  std::vector<int> ids{weights.id()};
  bool req = node(weights.id()).requires_grad;
  const Shape s = parts.front().shape();
  for (Var p : parts) {
    check_owned(p);
    if (!(p.shape() == s)) throw ShapeError("weighted_sum: shape mismatch");
    ids.push_back(p.id());
    req = req || node(p.id()).requires_grad;
  }
  const int id = push(Op::WeightedSum, s, ids, req);
  double* o = out_ptr(id);
  const double* w = val_ptr(weights.id());
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double* in = val_ptr(ids[k + 1]);
    for (int i = 0; i < s.size(); ++i) o[i] += w[k] * in[i];
  }
  check_finite(id, "weighted_sum");
  return {this, id};
}

void Graph::backward(Var loss) {
  check_owned(loss);
  if (loss.size() != 1) throw ShapeError("backward: loss must be a single element, got " + loss.shape().str());
  grads_.assign(static_cast<std::size_t>(grad_size_), 0.0);
  has_grads_ = true;
  if (!node(loss.id()).requires_grad) return;
  grads_[static_cast<std::size_t>(node(loss.id()).grad_offset)] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    if (node(id).requires_grad) backprop(id);
  }
}

void Graph::backprop(int id) {
  const Node& n = node(id);
  const double* g = grads_.data() + n.grad_offset;
  const double* y = val_ptr(id);
  const int size = n.shape.size();
  auto gin = [&](int k) -> double* {
    const Node& a = node(arg(n, k));
    return a.requires_grad ? grads_.data() + a.grad_offset : nullptr;
  };
  auto vin = [&](int k) { return val_ptr(arg(n, k)); };
  auto sin = [&](int k) { return node(arg(n, k)).shape.size(); };

  switch (n.op) {
    case Op::Leaf:
    case Op::Param:
      return;
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const int na = sin(0), nb = sin(1);
      const int sa = na == size ? 1 : 0;
      const int sb = nb == size ? 1 : 0;
      double* ga = gin(0);
      double* gb = gin(1);
      const double* a = vin(0);
      const double* b = vin(1);
      for (int i = 0; i < size; ++i) {
        if (n.op == Op::Mul) {
          if (ga) ga[i * sa] += g[i] * b[i * sb];
          if (gb) gb[i * sb] += g[i] * a[i * sa];
        } else {
          if (ga) ga[i * sa] += g[i];
          if (gb) gb[i * sb] += n.op == Op::Add ? g[i] : -g[i];
        }
      }
      return;
    }
    case Op::Affine: {
      double* gx = gin(0);
      for (int i = 0; i < size; ++i) gx[i] += n.daux0 * g[i];
      return;
    }
    case Op::Sigmoid: {
      double* gx = gin(0);
      for (int i = 0; i < size; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
      return;
    }
    case Op::Tanh: {
      double* gx = gin(0);
      for (int i = 0; i < size; ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
      return;
    }
    case Op::Exp: {
      double* gx = gin(0);
      for (int i = 0; i < size; ++i) gx[i] += g[i] * y[i];
      return;
    }
    case Op::Log: {
      double* gx = gin(0);
      const double* x = vin(0);
      for (int i = 0; i < size; ++i) gx[i] += g[i] / x[i];
      return;
    }
    case Op::ClampMin: {
      double* gx = gin(0);
      const double* x = vin(0);
      for (int i = 0; i < size; ++i) {
        if (x[i] > n.daux0) gx[i] += g[i];
      }
      return;
    }
    case Op::MatVec: {
      const int rows = n.iaux;
      const int cols = sin(1);
      double* gm = gin(0);
      double* gv = gin(1);
      const double* m = vin(0);
      const double* v = vin(1);
      for (int r = 0; r < rows; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(r) * cols;
        if (gm) {
          double* row = gm + off;
          for (int c = 0; c < cols; ++c) row[c] += gr * v[c];
        }
        if (gv) {
          const double* row = m + off;
          for (int c = 0; c < cols; ++c) gv[c] += gr * row[c];
        }
      }
      return;
    }
    case Op::LogSoftmax: {
      double* gx = gin(0);
      double total = 0.0;
      for (int i = 0; i < size; ++i) total += g[i];
      for (int i = 0; i < size; ++i) gx[i] += g[i] - std::exp(y[i]) * total;
      return;
    }
    case Op::LogSumExp: {
      double* gx = gin(0);
      const double* x = vin(0);
      const int m = sin(0);
      for (int i = 0; i < m; ++i) gx[i] += g[0] * std::exp(x[i] - y[0]);
      return;
    }
    case Op::Pick: {
      gin(0)[n.iaux] += g[0];
      return;
    }
    case Op::Slice: {
      double* gx = gin(0) + n.iaux;
      for (int i = 0; i < size; ++i) gx[i] += g[i];
      return;
    }
    case Op::Row: {
      double* gx = gin(0) + static_cast<std::ptrdiff_t>(n.iaux) * size;
      for (int i = 0; i < size; ++i) gx[i] += g[i];
      return;
    }
    case Op::Concat: {
      int off = 0;
      for (int k = 0; k < n.arg_count; ++k) {
        const int len = sin(k);
        if (double* gx = gin(k)) {
          for (int i = 0; i < len; ++i) gx[i] += g[off + i];
        }
        off += len;
      }
      return;
    }
    case Op::Sum: {
      for (int k = 0; k < n.arg_count; ++k) {
        if (double* gx = gin(k)) {
          for (int i = 0; i < size; ++i) gx[i] += g[i];
        }
      }
      return;
    }
    case Op::WeightedSum: {
      double* gw = gin(0);
      const double* w = vin(0);
      for (int k = 1; k < n.arg_count; ++k) {
        const double* v = vin(k);
        if (gw) {
          double d = 0.0;
          for (int i = 0; i < size; ++i) d += g[i] * v[i];
          gw[k - 1] += d;
        }
        if (double* gv = gin(k)) {
          const double wk = w[k - 1];
          for (int i = 0; i < size; ++i) gv[i] += wk * g[i];
        }
      }
      return;
    }
  }
}

std::span<const double> Graph::grad(Var v) const {
  check_owned(v);
  const Node& n = node(v.id());
  if (!has_grads_ || !n.requires_grad) return {};
  return {grads_.data() + n.grad_offset, static_cast<std::size_t>(n.shape.size())};
}

void Graph::accumulate_param_grads(GradBuffer& grads, double scale) const {
  if (!has_grads_) return;
  for (const auto& [param, id] : param_nodes_) {
    const Node& n = node(id);
    auto& dst = grads.at(static_cast<std::size_t>(param->index()));
    if (static_cast<int>(dst.size()) != n.shape.size()) throw ShapeError("gradient buffer shape mismatch");
    const double* src = grads_.data() + n.grad_offset;
    for (int i = 0; i < n.shape.size(); ++i) dst[static_cast<std::size_t>(i)] += scale * src[i];
  }
}

void Graph::clear() {
  nodes_.clear();
  values_.clear();
  grads_.clear();
  args_.clear();
  param_nodes_.clear();
  grad_size_ = 0;
  has_grads_ = false;
}

}  // namespace nllm::ad
