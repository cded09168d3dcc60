#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "inrn/tensor.hpp"

namespace inrn {

class Tape;

/// Handed to an operation's backward closure; exposes the gradient buffer of
/// each input (empty span when that input is untracked).
class BackwardContext {
 public:
  BackwardContext(Tape& tape, std::span<const NodeId> inputs) : tape_(tape), inputs_(inputs) {}
  std::span<double> grad(std::size_t input_index);
  bool wants(std::size_t input_index) const { return inputs_[input_index] != kNoNode; }

 private:
  Tape& tape_;
  std::span<const NodeId> inputs_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out, BackwardContext& ctx)>;

/// Define-by-run gradient tape. Nodes are appended in execution order, so
/// ids are topologically sorted and backward is a single reverse sweep.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a leaf and returns a tracked alias of it.
  Tensor watch(const Tensor& value);
  /// Like watch(), but memoizes by `key` so repeated uses of one parameter
  /// share a node and their gradient contributions sum.
  Tensor watch_keyed(const void* key, const Tensor& value);

  /// Appends an op node. Inputs that are untracked get kNoNode.
  Tensor record(std::string_view kind, Tensor value, std::vector<NodeId> inputs, BackwardFn backward);

  void backward(const Tensor& loss);

  /// Gradient of a tracked tensor after backward(); zeros if it was not
  /// reached from the loss.
  Tensor gradient(const Tensor& tracked) const;
  /// Gradient for a keyed leaf; zeros of `shape` if never watched.
  Tensor gradient_keyed(const void* key, const Shape& shape) const;

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::uint64_t serial() const noexcept { return serial_; }

 private:
  friend class BackwardContext;

  struct Node {
    std::string_view kind;
    Shape shape;
    std::vector<NodeId> inputs;
    BackwardFn backward;
  };

  void check_owned(const Tensor& t) const;

  std::uint64_t serial_;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::unordered_map<const void*, NodeId> keyed_;
};

/// Makes `tape` the thread's active tape for the scope's lifetime. Ops on
/// tracked tensors record onto the active tape.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape() noexcept;

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops accept identical shapes, or a
// one-element tensor on either side (broadcast as a scalar).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

Tensor relu(const Tensor& x);
/// Exact erf form: x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor sine(const Tensor& x);
Tensor cosine(const Tensor& x);
/// Gradient is taken as 0 where the value is 0.
Tensor sqrt(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[n,m] + b[m] broadcast over rows.
Tensor add_rowwise(const Tensor& x, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose2d(const Tensor& x);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);
Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);

/// Sum / mean of all elements, shape [].
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
/// out[i] = x[i, index[i]] for x[n,m].
Tensor pick_rows(const Tensor& x, std::span<const std::size_t> index);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad_top = 0;
  std::size_t pad_bottom = 0;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;

  static Conv2dOptions symmetric(std::size_t stride, std::size_t padding) {
    return {stride, padding, padding, padding, padding};
  }
  /// Output extent ceil(n / stride); padding split with the extra row/column
  /// at the bottom/right.
  static Conv2dOptions same(std::size_t height, std::size_t width, std::size_t kernel_h,
                            std::size_t kernel_w, std::size_t stride);
};

/// Cross-correlation (no kernel flip). input [N,C,H,W], weight [F,C,kh,kw],
/// bias [F] (a default-constructed rank-0 Tensor means none). Output extent must divide exactly.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              const Conv2dOptions& options);
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// [N, C*r*r, H, W] -> [N, C, H*r, W*r] (depth-to-space).
Tensor pixel_shuffle(const Tensor& x, std::size_t factor);
/// Inverse of pixel_shuffle.
Tensor pixel_unshuffle(const Tensor& x, std::size_t factor);
/// [N,C,H,W] -> [N,C].
Tensor global_avg_pool(const Tensor& x);
/// Nearest-neighbour resize of [N,C,H,W]; source index floor(i * in / out).
Tensor resize_nearest(const Tensor& x, std::size_t height, std::size_t width);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }

/// Names of every op kind the tape can record.
const std::vector<std::string_view>& registered_op_kinds();

/// Multiply-accumulate count of matrix products issued on this thread.
std::uint64_t mac_counter() noexcept;
void reset_mac_counter() noexcept;

// ---------------------------------------------------------------------------
// Finite-difference verification.

using TensorFunction = std::function<Tensor(std::span<const Tensor>)>;

/// Max over all input coordinates of |analytic - central| / max(1, |central|).
/// Throws NumericError naming the coordinate if f produces a non-finite value.
double grad_check(const TensorFunction& f, std::span<const Tensor> inputs, double eps = 1e-5);

/// Test hook: scales the backward of one op kind by `factor` until cleared.
void inject_gradient_fault(std::string_view kind, double factor = 1.5);
void clear_gradient_fault();

}  // namespace inrn
