#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace inrn {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float64 array. Copies share the underlying buffer;
/// mutable_data() detaches it first, so a Tensor behaves as a value.
///
/// A tensor produced by an operation on tracked inputs carries the id of
/// the tape node that produced it. Untracked tensors never receive
/// gradients.
class Tensor {
 public:
  /// Scalar zero with shape [].
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_->size(); }

  std::span<const double> data() const noexcept { return *data_; }
  std::span<double> mutable_data();
  const std::vector<double>& values() const& noexcept { return *data_; }
  std::vector<double> values() && { return *data_; }

  double operator[](std::size_t i) const { return (*data_)[i]; }
  /// Value of a one-element tensor.
  double item() const;

  bool tracked() const noexcept { return node_ != kNoNode; }
  NodeId node() const noexcept { return node_; }
  std::uint64_t tape_serial() const noexcept { return tape_serial_; }

  /// Same values, no tape node.
  Tensor detach() const;
  /// Same values under a new shape with equal element count. No tape node.
  Tensor with_shape(Shape shape) const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  NodeId node_ = kNoNode;
  std::uint64_t tape_serial_ = 0;
};

}  // namespace inrn
