#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vmae/error.hpp"

namespace vmae {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m) {
  return shape_string(Shape{m.rows(), m.cols()});
}

/// Dense n-dimensional array. Storage is flat; the trailing extent is the
/// column count of the row-major matrix view, all leading extents fold into
/// rows.
template <typename Scalar>
class Tensor {
 public:
  using MatrixType = Matrix<Scalar>;
  using MapType = Eigen::Map<MatrixType>;
  using ConstMapType = Eigen::Map<const MatrixType>;

  Tensor() : Tensor(Shape{1}) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_ = Vector<Scalar>::Zero(product(shape_));
  }

  Tensor(Shape shape, Vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (product(shape_) != data_.size()) {
      throw DimensionError("tensor: shape " + shape_string(shape_) + " holds " +
                           std::to_string(product(shape_)) + " values, got " +
                           std::to_string(data_.size()));
    }
  }

  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    Tensor t(Shape{m.rows(), m.cols()});
    t.matrix() = m.template cast<Scalar>();
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  Index cols() const { return shape_.back(); }
  Index rows() const { return size() / cols(); }

  MapType matrix() { return MapType(data_.data(), rows(), cols()); }
  ConstMapType matrix() const { return ConstMapType(data_.data(), rows(), cols()); }

  Vector<Scalar>& data() { return data_; }
  const Vector<Scalar>& data() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  static Index product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
  }

  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor: shape must not be empty");
    for (Index e : shape) {
      if (e <= 0) throw DimensionError("tensor: non-positive extent in " + shape_string(shape));
    }
  }

  Shape shape_;
  Vector<Scalar> data_;
};

/// Trainable tensor with its accumulated gradient.
template <typename Scalar>
struct Param {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool decay = true;  // subject to decoupled weight decay

  Param() = default;
  Param(std::string n, Shape shape, bool weight_decay = true)
      : name(std::move(n)), value(shape), grad(shape), decay(weight_decay) {}

  void zero_grad() { grad.data().setZero(); }
};

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, Index id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index id() const { return id_; }
  Tape<Scalar>& tape() const { return *tape_; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  Index id_ = -1;
};

/// Ordered record of primitive applications. Nodes are appended in
/// evaluation order, so every input precedes the nodes that consume it and
/// a reverse sweep is a valid topological order.
template <typename Scalar>
class Tape {
 public:
  using MatrixType = Matrix<Scalar>;
  using BackwardFn = std::function<void(Tape&, const MatrixType& out_grad)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(MatrixType value) {
    return push(std::move(value), {}, false, nullptr, nullptr);
  }

  /// Leaf that collects a gradient readable through grad().
  Var<Scalar> variable(MatrixType value) {
    return push(std::move(value), {}, true, nullptr, nullptr);
  }

  /// Leaf bound to a Param; backward() adds its gradient into param.grad.
  /// Repeated calls for the same Param return the same node.
  Var<Scalar> param(Param<Scalar>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<Scalar>(this, it->second);
    MatrixType value = p.value.matrix();
    if (p.value.shape().size() == 1) value.resize(1, p.value.size());
    Var<Scalar> v = push(std::move(value), {}, true, nullptr, &p);
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  Var<Scalar> record(MatrixType value, std::vector<Index> inputs, BackwardFn backward) {
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [this](Index i) { return nodes_[i].requires_grad; });
    return push(std::move(value), std::move(inputs), needs, needs ? std::move(backward) : nullptr,
                nullptr);
  }

  const MatrixType& value(Index id) const { return nodes_[id].value; }
  bool requires_grad(Index id) const { return nodes_[id].requires_grad; }
  const std::vector<Index>& inputs(Index id) const { return nodes_[id].inputs; }
  Index size() const { return static_cast<Index>(nodes_.size()); }

  /// Gradient of the last backward() target with respect to node `id`.
  MatrixType grad(Index id) const {
    const Node& n = nodes_[id];
    if (n.grad.size() == 0) return MatrixType::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  template <typename Derived>
  void accumulate(Index id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Reverse sweep from a scalar; each recorded op runs its rule once.
  void backward(const Var<Scalar>& loss) {
    const MatrixType& v = value(loss.id());
    if (v.rows() != 1 || v.cols() != 1) {
      throw ContractError("backward: loss must be scalar, got " + shape_string(v));
    }
    if (backward_done_) throw ContractError("backward: tape already consumed");
    backward_done_ = true;
    for (auto& n : nodes_) n.grad.resize(0, 0);
    accumulate(loss.id(), MatrixType::Ones(1, 1));
    for (Index i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param != nullptr) {
        n.param->grad.matrix() += Eigen::Map<const MatrixType>(n.grad.data(), n.param->grad.rows(),
                                                               n.param->grad.cols());
      }
    }
  }

 private:
  struct Node {
    MatrixType value;
    MatrixType grad;
    std::vector<Index> inputs;
    bool requires_grad = false;
    BackwardFn backward;
    Param<Scalar>* param = nullptr;
  };

  Var<Scalar> push(MatrixType value, std::vector<Index> inputs, bool requires_grad,
                   BackwardFn backward, Param<Scalar>* param) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    n.param = param;
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, static_cast<Index>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Param<Scalar>*, Index> param_nodes_;
  bool backward_done_ = false;
};

}  // namespace vmae
