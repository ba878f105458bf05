#include "csst/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace csst::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kSum: return "sum";
    case Op::kSumAxis: return "sum_axis";
    case Op::kMean: return "mean";
    case Op::kMeanAxis: return "mean_axis";
    case Op::kConcat: return "concat";
    case Op::kEmbedding: return "embedding";
    case Op::kSoftmax: return "softmax";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kLogSigmoid: return "log_sigmoid";
    case Op::kMaskedFill: return "masked_fill";
    case Op::kCosine: return "cosine_similarity";
    case Op::kLog: return "log";
    case Op::kExp: return "exp";
    case Op::kReshape: return "reshape";
  }
  return "?";
}

namespace {

std::string describe(const std::string& op, const std::vector<Shape>& extents,
                     const std::string& detail) {
  std::ostringstream os;
  os << op << ": " << detail << " (operands:";
  for (const auto& s : extents) os << ' ' << to_string(s);
  os << ')';
  return os.str();
}

}  // namespace

ShapeError::ShapeError(std::string op, std::vector<Shape> extents, const std::string& detail)
    : std::invalid_argument(describe(op, extents, detail)),
      op_(std::move(op)),
      extents_(std::move(extents)) {}

// ---------------------------------------------------------------------------
// Tensor

const Shape& Tensor::shape() const { return graph().node(id_).shape; }

std::span<const double> Tensor::values() const { return graph().node(id_).values; }

bool Tensor::requires_grad() const { return graph().node(id_).requires_grad; }

Graph& Tensor::graph() const {
  if (!graph_) throw std::logic_error("use of an unbound Tensor");
  return *graph_;
}

double Tensor::item() const {
  auto v = values();
  if (v.size() != 1) {
    throw ShapeError("item", {shape()}, "tensor is not a single element");
  }
  return v[0];
}

std::span<const double> Gradients::of(NodeId id) const {
  if (id >= grads_.size()) throw std::out_of_range("gradient requested for unknown node");
  return grads_[id];
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

struct Broadcast {
  Shape out;
  std::vector<std::size_t> ia;
  std::vector<std::size_t> ib;
  bool identity = false;  // both operands already have the output shape
};

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Broadcast plan_broadcast(Op op, const Shape& a, const Shape& b) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    plan.identity = true;
    return plan;
  }
  const std::size_t r = std::max(a.size(), b.size());
  plan.out.assign(r, 1);
  std::vector<std::size_t> sa(r, 0), sb(r, 0);
  const auto st_a = strides_of(a);
  const auto st_b = strides_of(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t off_a = r - a.size();
    const std::size_t off_b = r - b.size();
    const std::size_t da = i < off_a ? 1 : a[i - off_a];
    const std::size_t db = i < off_b ? 1 : b[i - off_b];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(op_name(op), {a, b}, "operands are not broadcast-compatible");
    }
    plan.out[i] = std::max(da, db);
    if (i >= off_a && da != 1) sa[i] = st_a[i - off_a];
    if (i >= off_b && db != 1) sb[i] = st_b[i - off_b];
  }
  const std::size_t n = numel(plan.out);
  plan.ia.resize(n);
  plan.ib.resize(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t pa = 0, pb = 0;
  for (std::size_t o = 0; o < n; ++o) {
    plan.ia[o] = pa;
    plan.ib[o] = pb;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < plan.out[d]) {
        pa += sa[d];
        pb += sb[d];
        break;
      }
      pa -= sa[d] * (plan.out[d] - 1);
      pb -= sb[d] * (plan.out[d] - 1);
      idx[d] = 0;
    }
  }
  return plan;
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1, axis = 0;
};

AxisSplit split_axis(Op op, const Shape& s, int axis) {
  const int rank = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + rank : axis;
  if (rank == 0 || a < 0 || a >= rank) {
    throw ShapeError(op_name(op), {s}, "axis " + std::to_string(axis) + " out of range");
  }
  AxisSplit sp;
  sp.axis = static_cast<std::size_t>(a);
  for (int i = 0; i < a; ++i) sp.outer *= s[i];
  sp.len = s[a];
  for (int i = a + 1; i < rank; ++i) sp.inner *= s[i];
  return sp;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out.push_back(s[i]);
  return out;
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid_value(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

constexpr double kExpLimit = 709.0;

void require_arity(Op op, std::span<const Tensor> in, std::size_t n) {
  if (in.size() != n) {
    std::vector<Shape> ex;
    for (const auto& t : in) ex.push_back(t.shape());
    throw ShapeError(op_name(op), ex,
                     "expected " + std::to_string(n) + " operand(s), got " +
                         std::to_string(in.size()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

Tensor Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Graph::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw ShapeError("leaf", {shape},
                     "holds " + std::to_string(values.size()) + " values");
  }
  Node n;
  n.op = Op::kLeaf;
  n.shape = std::move(shape);
  n.values = std::move(values);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Tensor Graph::apply(Op op, std::span<const Tensor> in, const Attrs& attrs) {
  for (const auto& t : in) {
    if (&t.graph() != this) throw std::logic_error("operand lives on a different graph");
  }
  Node n;
  n.op = op;
  n.attrs = attrs;
  for (const auto& t : in) {
    n.inputs.push_back(t.id());
    n.requires_grad = n.requires_grad || t.requires_grad();
  }

  switch (op) {
    case Op::kLeaf:
      throw std::logic_error("leaf nodes are created with Graph::leaf");

    case Op::kMatMul: {
      require_arity(op, in, 2);
      const Shape& sa = in[0].shape();
      const Shape& sb = in[1].shape();
      if (sa.empty() || sb.size() != 2 || sa.back() != sb[0]) {
        throw ShapeError(op_name(op), {sa, sb}, "contraction extents differ");
      }
      const std::size_t k = sb[0], m = sb[1];
      const std::size_t rows = numel(sa) / k;
      n.shape = sa;
      n.shape.back() = m;
      n.values.assign(rows * m, 0.0);
      const auto a = in[0].values();
      const auto b = in[1].values();
      for (std::size_t r = 0; r < rows; ++r) {
        double* out = n.values.data() + r * m;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = a[r * k + p];
          const double* brow = b.data() + p * m;
          for (std::size_t j = 0; j < m; ++j) out[j] += av * brow[j];
        }
      }
      break;
    }

    case Op::kAdd:
    case Op::kSub:
    case Op::kMul: {
      require_arity(op, in, 2);
      const auto plan = plan_broadcast(op, in[0].shape(), in[1].shape());
      const auto a = in[0].values();
      const auto b = in[1].values();
      const std::size_t cnt = numel(plan.out);
      n.shape = plan.out;
      n.values.resize(cnt);
      for (std::size_t o = 0; o < cnt; ++o) {
        const double x = a[plan.identity ? o : plan.ia[o]];
        const double y = b[plan.identity ? o : plan.ib[o]];
        n.values[o] = op == Op::kAdd ? x + y : op == Op::kSub ? x - y : x * y;
      }
      break;
    }

    case Op::kScale:
    case Op::kAddScalar: {
      require_arity(op, in, 1);
      n.shape = in[0].shape();
      const auto a = in[0].values();
      n.values.resize(a.size());
      for (std::size_t i = 0; i < a.size(); ++i)
        n.values[i] = op == Op::kScale ? a[i] * attrs.scalar : a[i] + attrs.scalar;
      break;
    }

    case Op::kSum:
    case Op::kMean: {
      require_arity(op, in, 1);
      const auto a = in[0].values();
      double s = 0.0;
      for (double v : a) s += v;
      if (op == Op::kMean) {
        if (a.empty()) throw ShapeError(op_name(op), {in[0].shape()}, "mean of empty tensor");
        s /= static_cast<double>(a.size());
      }
      n.shape = {};
      n.values = {s};
      break;
    }

    case Op::kSumAxis:
    case Op::kMeanAxis: {
      require_arity(op, in, 1);
      const auto sp = split_axis(op, in[0].shape(), attrs.axis);
      if (op == Op::kMeanAxis && sp.len == 0) {
        throw ShapeError(op_name(op), {in[0].shape()}, "mean over empty axis");
      }
      n.shape = drop_axis(in[0].shape(), sp.axis);
      n.values.assign(sp.outer * sp.inner, 0.0);
      const auto a = in[0].values();
      const double f = op == Op::kMeanAxis ? 1.0 / static_cast<double>(sp.len) : 1.0;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.len; ++l)
          for (std::size_t i = 0; i < sp.inner; ++i)
            n.values[o * sp.inner + i] += a[(o * sp.len + l) * sp.inner + i];
      if (f != 1.0)
        for (double& v : n.values) v *= f;
      break;
    }

    case Op::kConcat: {
      if (in.empty()) throw ShapeError(op_name(op), {}, "nothing to concatenate");
      const Shape& s0 = in[0].shape();
      const auto sp0 = split_axis(op, s0, attrs.axis);
      std::size_t total_len = 0;
      for (const auto& t : in) {
        const Shape& s = t.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i)
          if (i != sp0.axis && s[i] != s0[i]) ok = false;
        if (!ok) {
          std::vector<Shape> ex;
          for (const auto& u : in) ex.push_back(u.shape());
          throw ShapeError(op_name(op), ex, "extents differ off the concat axis");
        }
        total_len += s[sp0.axis];
      }
      n.shape = s0;
      n.shape[sp0.axis] = total_len;
      n.values.resize(numel(n.shape));
      std::size_t offset = 0;
      for (const auto& t : in) {
        const std::size_t len = t.shape()[sp0.axis];
        const auto v = t.values();
        for (std::size_t o = 0; o < sp0.outer; ++o)
          std::copy_n(v.begin() + o * len * sp0.inner, len * sp0.inner,
                      n.values.begin() + (o * total_len + offset) * sp0.inner);
        offset += len;
      }
      break;
    }

    case Op::kEmbedding: {
      require_arity(op, in, 1);
      const Shape& st = in[0].shape();
      if (st.size() != 2) throw ShapeError(op_name(op), {st}, "table must be rank 2");
      if (numel(attrs.shape) != attrs.indices.size()) {
        throw ShapeError(op_name(op), {st, attrs.shape}, "id count does not match id shape");
      }
      const std::size_t rows = st[0], dim = st[1];
      n.shape = attrs.shape;
      n.shape.push_back(dim);
      n.values.resize(attrs.indices.size() * dim);
      const auto table = in[0].values();
      for (std::size_t i = 0; i < attrs.indices.size(); ++i) {
        const std::size_t id = attrs.indices[i];
        if (id >= rows) {
          throw ShapeError(op_name(op), {st}, "id " + std::to_string(id) + " out of range");
        }
        std::copy_n(table.begin() + id * dim, dim, n.values.begin() + i * dim);
      }
      break;
    }

    case Op::kSoftmax: {
      require_arity(op, in, 1);
      const auto sp = split_axis(op, in[0].shape(), attrs.axis);
      n.shape = in[0].shape();
      const auto a = in[0].values();
      n.values.resize(a.size());
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, a[at(l)]);
          double z = 0.0;
          for (std::size_t l = 0; l < sp.len; ++l) {
            const double e = std::exp(a[at(l)] - mx);
            n.values[at(l)] = e;
            z += e;
          }
          for (std::size_t l = 0; l < sp.len; ++l) n.values[at(l)] /= z;
        }
      break;
    }

    case Op::kSigmoid:
    case Op::kTanh:
    case Op::kLogSigmoid:
    case Op::kLog:
    case Op::kExp: {
      require_arity(op, in, 1);
      n.shape = in[0].shape();
      const auto a = in[0].values();
      n.values.resize(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i];
        switch (op) {
          case Op::kSigmoid: n.values[i] = sigmoid_value(x); break;
          case Op::kTanh: n.values[i] = std::tanh(x); break;
          case Op::kLogSigmoid: n.values[i] = log_sigmoid_value(x); break;
          case Op::kLog:
            if (!(x > 0.0)) {
              throw DomainError("log: argument " + std::to_string(x) + " at index " +
                                std::to_string(i) + " is not positive");
            }
            n.values[i] = std::log(x);
            break;
          default:
            if (!(x <= kExpLimit)) {
              throw DomainError("exp: argument " + std::to_string(x) + " at index " +
                                std::to_string(i) + " overflows");
            }
            n.values[i] = std::exp(x);
            break;
        }
      }
      break;
    }

    case Op::kMaskedFill: {
      require_arity(op, in, 1);
      if (attrs.mask.size() != in[0].size()) {
        throw ShapeError(op_name(op), {in[0].shape()},
                         "mask holds " + std::to_string(attrs.mask.size()) + " entries");
      }
      n.shape = in[0].shape();
      const auto a = in[0].values();
      n.values.assign(a.begin(), a.end());
      for (std::size_t i = 0; i < a.size(); ++i)
        if (attrs.mask[i]) n.values[i] = attrs.scalar;
      break;
    }

    case Op::kCosine: {
      require_arity(op, in, 2);
      const Shape& sa = in[0].shape();
      if (sa.empty() || sa != in[1].shape()) {
        throw ShapeError(op_name(op), {sa, in[1].shape()}, "operands must share a non-scalar shape");
      }
      const std::size_t len = sa.back();
      const std::size_t rows = numel(sa) / std::max<std::size_t>(len, 1);
      n.shape = Shape(sa.begin(), sa.end() - 1);
      n.values.resize(rows);
      const auto a = in[0].values();
      const auto b = in[1].values();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t j = 0; j < len; ++j) {
          const double x = a[r * len + j], y = b[r * len + j];
          dot += x * y;
          na += x * x;
          nb += y * y;
        }
        if (na == 0.0 || nb == 0.0) {
          throw DomainError("cosine_similarity: zero-norm operand at row " + std::to_string(r));
        }
        n.values[r] = dot / (std::sqrt(na) * std::sqrt(nb));
      }
      break;
    }

    case Op::kReshape: {
      require_arity(op, in, 1);
      if (numel(attrs.shape) != in[0].size()) {
        throw ShapeError(op_name(op), {in[0].shape(), attrs.shape}, "element counts differ");
      }
      n.shape = attrs.shape;
      const auto a = in[0].values();
      n.values.assign(a.begin(), a.end());
      break;
    }
  }
  return push(std::move(n));
}

Gradients Graph::backward(const Tensor& scalar) const {
  if (&scalar.graph() != this) throw std::logic_error("backward on a foreign tensor");
  const Node& root = nodes_[scalar.id()];
  if (root.values.size() != 1) {
    throw ShapeError("backward", {root.shape}, "backward needs a single-element tensor");
  }
  Gradients out;
  out.grads_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) out.grads_[i].assign(nodes_[i].values.size(), 0.0);
  if (!root.requires_grad) return out;
  out.grads_[scalar.id()][0] = 1.0;
  for (std::size_t id = scalar.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.op == Op::kLeaf) continue;
    backprop_node(n, out.grads_[id], out.grads_);
  }
  return out;
}

void Graph::backprop_node(const Node& n, std::span<const double> g,
                          std::vector<std::vector<double>>& grads) const {
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
  auto gin = [&](std::size_t k) -> std::vector<double>& { return grads[n.inputs[k]]; };
  auto val = [&](std::size_t k) -> const std::vector<double>& { return nodes_[n.inputs[k]].values; };

  switch (n.op) {
    case Op::kLeaf:
      break;

    case Op::kMatMul: {
      const Shape& sb = nodes_[n.inputs[1]].shape;
      const std::size_t k = sb[0], m = sb[1];
      const std::size_t rows = val(0).size() / k;
      const auto& a = val(0);
      const auto& b = val(1);
      if (wants(0)) {
        auto& ga = gin(0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += g[r * m + j] * b[p * m + j];
            ga[r * k + p] += s;
          }
      }
      if (wants(1)) {
        auto& gb = gin(1);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a[r * k + p];
            if (av == 0.0) continue;
            double* dst = gb.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) dst[j] += av * g[r * m + j];
          }
      }
      break;
    }

    case Op::kAdd:
    case Op::kSub:
    case Op::kMul: {
      const auto plan = plan_broadcast(n.op, nodes_[n.inputs[0]].shape, nodes_[n.inputs[1]].shape);
      const auto& a = val(0);
      const auto& b = val(1);
      const std::size_t cnt = g.size();
      for (std::size_t side = 0; side < 2; ++side) {
        if (!wants(side)) continue;
        auto& dst = gin(side);
        for (std::size_t o = 0; o < cnt; ++o) {
          const std::size_t ia = plan.identity ? o : plan.ia[o];
          const std::size_t ib = plan.identity ? o : plan.ib[o];
          double d = g[o];
          if (n.op == Op::kSub && side == 1) d = -d;
          if (n.op == Op::kMul) d *= side == 0 ? b[ib] : a[ia];
          dst[side == 0 ? ia : ib] += d;
        }
      }
      break;
    }

    case Op::kScale:
    case Op::kAddScalar: {
      if (!wants(0)) break;
      auto& dst = gin(0);
      const double f = n.op == Op::kScale ? n.attrs.scalar : 1.0;
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * f;
      break;
    }

    case Op::kSum:
    case Op::kMean: {
      if (!wants(0)) break;
      auto& dst = gin(0);
      const double f = n.op == Op::kMean ? 1.0 / static_cast<double>(dst.size()) : 1.0;
      for (double& d : dst) d += g[0] * f;
      break;
    }

    case Op::kSumAxis:
    case Op::kMeanAxis: {
      if (!wants(0)) break;
      const auto sp = split_axis(n.op, nodes_[n.inputs[0]].shape, n.attrs.axis);
      const double f = n.op == Op::kMeanAxis ? 1.0 / static_cast<double>(sp.len) : 1.0;
      auto& dst = gin(0);
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.len; ++l)
          for (std::size_t i = 0; i < sp.inner; ++i)
            dst[(o * sp.len + l) * sp.inner + i] += g[o * sp.inner + i] * f;
      break;
    }

    case Op::kConcat: {
      const auto sp = split_axis(n.op, n.shape, n.attrs.axis);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t len = nodes_[n.inputs[k]].shape[sp.axis];
        if (wants(k)) {
          auto& dst = gin(k);
          for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t j = 0; j < len * sp.inner; ++j)
              dst[o * len * sp.inner + j] += g[(o * sp.len + offset) * sp.inner + j];
        }
        offset += len;
      }
      break;
    }

    case Op::kEmbedding: {
      if (!wants(0)) break;
      const std::size_t dim = nodes_[n.inputs[0]].shape[1];
      auto& dst = gin(0);
      for (std::size_t i = 0; i < n.attrs.indices.size(); ++i) {
        const std::size_t id = n.attrs.indices[i];
        for (std::size_t j = 0; j < dim; ++j) dst[id * dim + j] += g[i * dim + j];
      }
      break;
    }

    case Op::kSoftmax: {
      if (!wants(0)) break;
      const auto sp = split_axis(n.op, n.shape, n.attrs.axis);
      const auto& y = n.values;
      auto& dst = gin(0);
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
          double dot = 0.0;
          for (std::size_t l = 0; l < sp.len; ++l) dot += g[at(l)] * y[at(l)];
          for (std::size_t l = 0; l < sp.len; ++l) dst[at(l)] += y[at(l)] * (g[at(l)] - dot);
        }
      break;
    }

    case Op::kSigmoid:
    case Op::kTanh:
    case Op::kLogSigmoid:
    case Op::kLog:
    case Op::kExp: {
      if (!wants(0)) break;
      const auto& x = val(0);
      const auto& y = n.values;
      auto& dst = gin(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = 0.0;
        switch (n.op) {
          case Op::kSigmoid: d = y[i] * (1.0 - y[i]); break;
          case Op::kTanh: d = 1.0 - y[i] * y[i]; break;
          case Op::kLogSigmoid: d = sigmoid_value(-x[i]); break;
          case Op::kLog: d = 1.0 / x[i]; break;
          default: d = y[i]; break;
        }
        dst[i] += g[i] * d;
      }
      break;
    }

    case Op::kMaskedFill: {
      if (!wants(0)) break;
      auto& dst = gin(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!n.attrs.mask[i]) dst[i] += g[i];
      break;
    }

    case Op::kCosine: {
      const auto& a = val(0);
      const auto& b = val(1);
      const std::size_t len = nodes_[n.inputs[0]].shape.back();
      for (std::size_t r = 0; r < n.values.size(); ++r) {
        double na = 0, nb = 0;
        for (std::size_t j = 0; j < len; ++j) {
          na += a[r * len + j] * a[r * len + j];
          nb += b[r * len + j] * b[r * len + j];
        }
        const double la = std::sqrt(na), lb = std::sqrt(nb);
        const double c = n.values[r];
        // dc/da = b/(|a||b|) - c a/|a|^2, symmetric for b.
        if (wants(0)) {
          auto& dst = gin(0);
          for (std::size_t j = 0; j < len; ++j)
            dst[r * len + j] += g[r] * (b[r * len + j] / (la * lb) - c * a[r * len + j] / na);
        }
        if (wants(1)) {
          auto& dst = gin(1);
          for (std::size_t j = 0; j < len; ++j)
            dst[r * len + j] += g[r] * (a[r * len + j] / (la * lb) - c * b[r * len + j] / nb);
        }
      }
      break;
    }

    case Op::kReshape: {
      if (!wants(0)) break;
      auto& dst = gin(0);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Front-ends

namespace {

Tensor unary(Op op, const Tensor& a, Attrs attrs = {}) {
  const Tensor in[] = {a};
  return a.graph().apply(op, in, attrs);
}

Tensor binary(Op op, const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  return a.graph().apply(op, in);
}

Attrs with_axis(int axis) {
  Attrs at;
  at.axis = axis;
  return at;
}

Attrs with_scalar(double c) {
  Attrs at;
  at.scalar = c;
  return at;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return binary(Op::kMatMul, a, b); }
Tensor add(const Tensor& a, const Tensor& b) { return binary(Op::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(Op::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(Op::kMul, a, b); }
Tensor scale(const Tensor& a, double c) { return unary(Op::kScale, a, with_scalar(c)); }
Tensor add_scalar(const Tensor& a, double c) { return unary(Op::kAddScalar, a, with_scalar(c)); }
Tensor sum(const Tensor& a) { return unary(Op::kSum, a); }
Tensor sum(const Tensor& a, int axis) { return unary(Op::kSumAxis, a, with_axis(axis)); }
Tensor mean(const Tensor& a) { return unary(Op::kMean, a); }
Tensor mean(const Tensor& a, int axis) { return unary(Op::kMeanAxis, a, with_axis(axis)); }

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat", {}, "nothing to concatenate");
  return parts[0].graph().apply(Op::kConcat, parts, with_axis(axis));
}

Tensor embedding(const Tensor& table, std::vector<std::size_t> ids, Shape id_shape) {
  Attrs at;
  at.indices = std::move(ids);
  at.shape = std::move(id_shape);
  return unary(Op::kEmbedding, table, std::move(at));
}

Tensor softmax(const Tensor& a, int axis) { return unary(Op::kSoftmax, a, with_axis(axis)); }
Tensor sigmoid(const Tensor& a) { return unary(Op::kSigmoid, a); }
Tensor tanh(const Tensor& a) { return unary(Op::kTanh, a); }
Tensor log_sigmoid(const Tensor& a) { return unary(Op::kLogSigmoid, a); }

Tensor masked_fill(const Tensor& a, std::vector<std::uint8_t> mask, double value) {
  Attrs at;
  at.mask = std::move(mask);
  at.scalar = value;
  return unary(Op::kMaskedFill, a, std::move(at));
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) { return binary(Op::kCosine, a, b); }
Tensor log(const Tensor& a) { return unary(Op::kLog, a); }
Tensor exp(const Tensor& a) { return unary(Op::kExp, a); }

Tensor reshape(const Tensor& a, Shape shape) {
  Attrs at;
  at.shape = std::move(shape);
  return unary(Op::kReshape, a, std::move(at));
}

}  // namespace csst::ad
