#pragma once

// Minimal reverse-mode automatic differentiation over dense double arrays.
//
// A Tape owns nodes in creation order, so parents always precede children.
// backward() walks the tape from the loss toward the front. Broadcasting is
// limited to a leading batch dimension.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace corisk {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);
  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const;  // scalar value; throws ShapeError otherwise

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class OpTag {
  Leaf,
  MatMul,
  Add,
  Relu,
  Sigmoid,
  Scale,
  Inner,
  OuterScale,
  Concat,
  MeanSqError,
  Conv2d,
  MaxPool,
  Flatten,
  Embedding
};
std::string_view to_string(OpTag op);

class Tape;

// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct BackwardContext {
  const Tensor& out_value;
  const Tensor& out_grad;
  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
};
using BackwardFn = std::function<void(BackwardContext&)>;

class Tape {
 public:
  Var leaf(Tensor value);
  // Records an op node. Used by the op functions below.
  Var record(OpTag op, Tensor value, std::vector<Var> parents, BackwardFn backward);

  // Populates gradients of `loss` (which must be scalar) with respect to every
  // node recorded before it. Unreachable leaves get zero gradients.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& grad(std::size_t id) const;
  OpTag op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_.at(id).parents; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpTag op = OpTag::Leaf;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool has_grads_ = false;
};

namespace ad {

Var matmul(Var a, Var b);  // [m,k] x [k,n]
Var add(Var a, Var b);     // equal shapes, or [B,d] + [d]
Var relu(Var a);
Var sigmoid(Var a);
Var scale(Var a, double factor);
Var inner(Var u, Var v);         // [d].[d] -> scalar; [B,d].[d] -> [B]
Var outer_scale(Var x, Var s);   // [d]*scalar -> [d]; [B,d]*[B] -> [B,d] row-wise
Var concat(const std::vector<Var>& parts);  // along the last axis
Var mean_sq_error(Var pred, Var target);    // scalar
// [B,C,H,W] with kernels [K,C,kh,kw] and bias [K]; valid padding.
Var conv2d(Var input, Var kernels, Var bias, std::size_t stride = 1);
Var max_pool(Var input, std::size_t window);  // non-overlapping, floor
Var flatten(Var input);                       // [B,...] -> [B, prod]
Var embedding(Var table, std::span<const int> indices);  // [card,dim] -> [B,dim]

}  // namespace ad
}  // namespace corisk
