#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Graph owns every tensor created on it. Tensor is a cheap handle (graph
// pointer + node id); it stays valid as long as its graph is alive. Every
// primitive allocates a fresh output node, so recorded values are never
// mutated and backward() can be replayed any number of times.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csst::ad {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Fill value used by masked_fill ahead of a softmax.
inline constexpr double kMaskedLogit = -1e9;

enum class Op {
  kLeaf,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kSum,
  kSumAxis,
  kMean,
  kMeanAxis,
  kConcat,
  kEmbedding,
  kSoftmax,
  kSigmoid,
  kTanh,
  kLogSigmoid,
  kMaskedFill,
  kCosine,
  kLog,
  kExp,
  kReshape,
};

const char* op_name(Op op);

/// Raised when operand shapes are incompatible. Carries the op and the
/// offending extents.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string op, std::vector<Shape> extents, const std::string& detail);

  const std::string& op() const { return op_; }
  const std::vector<Shape>& extents() const { return extents_; }

 private:
  std::string op_;
  std::vector<Shape> extents_;
};

/// Raised when log/exp (or a normalisation) is evaluated outside its domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class Graph;

class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  std::span<const double> values() const;
  std::size_t size() const { return values().size(); }
  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }

  NodeId id() const { return id_; }
  bool requires_grad() const;
  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const;

 private:
  friend class Graph;
  Tensor(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

/// Op-specific attributes for apply_primitive.
struct Attrs {
  int axis = -1;
  double scalar = 0.0;
  Shape shape;                         // reshape target / embedding id shape
  std::vector<std::size_t> indices;    // embedding ids
  std::vector<std::uint8_t> mask;      // masked_fill: 1 = replace
};

/// Per-node gradients produced by Graph::backward.
class Gradients {
 public:
  std::span<const double> of(const Tensor& t) const { return of(t.id()); }
  std::span<const double> of(NodeId id) const;
  std::size_t node_count() const { return grads_.size(); }

 private:
  friend class Graph;
  std::vector<std::vector<double>> grads_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = delete;
  Graph& operator=(Graph&&) = delete;

  Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = true);
  Tensor constant(Shape shape, std::vector<double> values) {
    return leaf(std::move(shape), std::move(values), false);
  }
  Tensor scalar(double v) { return constant({}, {v}); }

  /// Records op applied to inputs. Throws ShapeError / DomainError.
  Tensor apply(Op op, std::span<const Tensor> inputs, const Attrs& attrs = {});

  /// Reverse pass from a single-element tensor. Nodes that are not on a
  /// path to `scalar` (or do not require grad) get zero gradient.
  Gradients backward(const Tensor& scalar) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Tensor;

  struct Node {
    Op op = Op::kLeaf;
    std::vector<NodeId> inputs;
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    Attrs attrs;
  };

  Tensor push(Node node);
  const Node& node(NodeId id) const { return nodes_[id]; }
  void backprop_node(const Node& n, std::span<const double> g,
                     std::vector<std::vector<double>>& grads) const;

  std::vector<Node> nodes_;
};

// Primitive front-ends. All inputs must live on the same graph.
// Broadcasting follows numpy rules (extents aligned from the right).
Tensor matmul(const Tensor& a, const Tensor& b);   // [..., k] x [k, n] -> [..., n]
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor embedding(const Tensor& table, std::vector<std::size_t> ids, Shape id_shape);
Tensor softmax(const Tensor& a, int axis);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);
Tensor masked_fill(const Tensor& a, std::vector<std::uint8_t> mask, double value = kMaskedLogit);
Tensor cosine_similarity(const Tensor& a, const Tensor& b);  // reduces last axis
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

}  // namespace csst::ad
