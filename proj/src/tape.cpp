#include <atomic>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "inrn/autodiff.hpp"
#include "inrn/error.hpp"
#include "ops_common.hpp"

namespace inrn {
namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local std::uint64_t g_macs = 0;
std::atomic<std::uint64_t> g_next_serial{1};

// Fault injection is a process-wide test hook.
std::string g_fault_kind;
double g_fault_factor = 1.0;

}  // namespace

std::span<double> BackwardContext::grad(std::size_t input_index) {
  const NodeId id = inputs_[input_index];
  if (id == kNoNode) return {};
  auto& g = tape_.grads_[id];
  if (g.empty()) g.assign(shape_size(tape_.nodes_[id].shape), 0.0);
  return g;
}

Tape::Tape() : serial_(g_next_serial.fetch_add(1)) {}

Tensor Tape::watch(const Tensor& value) {
  Tensor out = value.detach();
  out.node_ = nodes_.size();
  out.tape_serial_ = serial_;
  nodes_.push_back(Node{"leaf", value.shape(), {}, {}});
  return out;
}

Tensor Tape::watch_keyed(const void* key, const Tensor& value) {
  if (auto it = keyed_.find(key); it != keyed_.end()) {
    Tensor out = value.detach();
    out.node_ = it->second;
    out.tape_serial_ = serial_;
    return out;
  }
  Tensor out = watch(value);
  keyed_.emplace(key, out.node_);
  return out;
}

Tensor Tape::record(std::string_view kind, Tensor value, std::vector<NodeId> inputs,
                    BackwardFn backward) {
  if (!g_fault_kind.empty() && kind == g_fault_kind) {
    const double factor = g_fault_factor;
    backward = [inner = std::move(backward), factor](std::span<const double> g, BackwardContext& ctx) {
      std::vector<double> scaled(g.begin(), g.end());
      for (double& v : scaled) v *= factor;
      inner(scaled, ctx);
    };
  }
  value.node_ = nodes_.size();
  value.tape_serial_ = serial_;
  nodes_.push_back(Node{kind, value.shape(), std::move(inputs), std::move(backward)});
  return value;
}

void Tape::check_owned(const Tensor& t) const {
  if (!t.tracked() || t.tape_serial_ != serial_ || t.node_ >= nodes_.size()) {
    throw ContractError("tensor is not tracked by this tape");
  }
}

void Tape::backward(const Tensor& loss) {
  check_owned(loss);
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  grads_.assign(nodes_.size(), {});
  grads_[loss.node_].assign(1, 1.0);
  for (NodeId id = loss.node_ + 1; id-- > 0;) {
    if (grads_[id].empty()) continue;
    Node& node = nodes_[id];
    if (!node.backward) continue;
    BackwardContext ctx(*this, node.inputs);
    node.backward(grads_[id], ctx);
  }
}

Tensor Tape::gradient(const Tensor& tracked) const {
  check_owned(tracked);
  if (tracked.node_ < grads_.size() && !grads_[tracked.node_].empty()) {
    return Tensor(tracked.shape(), grads_[tracked.node_]);
  }
  return Tensor(tracked.shape(), 0.0);
}

Tensor Tape::gradient_keyed(const void* key, const Shape& shape) const {
  auto it = keyed_.find(key);
  if (it == keyed_.end() || it->second >= grads_.size() || grads_[it->second].empty()) {
    return Tensor(shape, 0.0);
  }
  return Tensor(shape, grads_[it->second]);
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() noexcept { return g_active_tape; }

std::uint64_t mac_counter() noexcept { return g_macs; }
void reset_mac_counter() noexcept { g_macs = 0; }

void inject_gradient_fault(std::string_view kind, double factor) {
  g_fault_kind = std::string(kind);
  g_fault_factor = factor;
}

void clear_gradient_fault() {
  g_fault_kind.clear();
  g_fault_factor = 1.0;
}

namespace detail {

Tensor make_result(std::string_view kind, Tensor value, std::span<const Tensor* const> inputs,
                   BackwardFn backward) {
  bool any = false;
  for (const Tensor* t : inputs) any = any || (t && t->tracked());
  if (!any) return value;
  Tape* tape = active_tape();
  if (!tape) throw ContractError(std::string(kind) + ": tracked input used with no active tape");
  std::vector<NodeId> ids;
  ids.reserve(inputs.size());
  for (const Tensor* t : inputs) {
    if (t && t->tracked()) {
      if (t->tape_serial() != tape->serial()) {
        throw ContractError(std::string(kind) + ": input tracked by a different tape");
      }
      ids.push_back(t->node());
    } else {
      ids.push_back(kNoNode);
    }
  }
  return tape->record(kind, std::move(value), std::move(ids), std::move(backward));
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc) {
  g_macs += static_cast<std::uint64_t>(m) * n * k;
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] = beta == 0.0 ? 0.0 : c[i * ldc + j] * beta;
    return;
  }
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  const auto rows_a = static_cast<Eigen::Index>(trans_a ? k : m), cols_a = static_cast<Eigen::Index>(trans_a ? m : k);
  const auto rows_b = static_cast<Eigen::Index>(trans_b ? n : k), cols_b = static_cast<Eigen::Index>(trans_b ? k : n);
  Eigen::Map<const Mat, 0, Stride> A(a, rows_a, cols_a, Stride(static_cast<Eigen::Index>(lda)));
  Eigen::Map<const Mat, 0, Stride> B(b, rows_b, cols_b, Stride(static_cast<Eigen::Index>(ldb)));
  Eigen::Map<Mat, 0, Stride> C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n),
                               Stride(static_cast<Eigen::Index>(ldc)));
  if (beta == 0.0) {
    C.setZero();
  } else if (beta != 1.0) {
    C *= beta;
  }
  if (trans_a && trans_b) {
    C.noalias() += alpha * A.transpose() * B.transpose();
  } else if (trans_a) {
    C.noalias() += alpha * A.transpose() * B;
  } else if (trans_b) {
    C.noalias() += alpha * A * B.transpose();
  } else {
    C.noalias() += alpha * A * B;
  }
}

void require_rank(const Tensor& x, std::size_t rank, std::string_view op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(x.shape()));
  }
}

}  // namespace detail
}  // namespace inrn
