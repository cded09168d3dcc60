#include <cmath>
#include <string>

#include "inrn/autodiff.hpp"
#include "inrn/error.hpp"

namespace inrn {

const std::vector<std::string_view>& registered_op_kinds() {
  static const std::vector<std::string_view> kinds = {
      "add",         "sub",         "mul",          "div",
      "add_scalar",  "mul_scalar",  "relu",         "gelu",
      "sine",        "cosine",      "sqrt",         "clamp",
      "sum",         "mean",        "softmax_rows", "log_softmax_rows",
      "pick_rows",   "matmul",      "add_rowwise",  "reshape",
      "transpose2d", "permute",     "concat",       "conv2d",
      "pixel_shuffle", "pixel_unshuffle", "global_avg_pool", "resize_nearest",
  };
  return kinds;
}

namespace {

double evaluate_scalar(const TensorFunction& f, std::span<const Tensor> inputs, std::size_t input,
                       std::size_t coord) {
  const Tensor y = f(inputs);
  if (y.size() != 1) throw ContractError("grad_check: function must return a scalar");
  const double v = y[0];
  if (!std::isfinite(v)) {
    throw NumericError("grad_check: non-finite value at input " + std::to_string(input) + " coordinate " +
                       std::to_string(coord));
  }
  return v;
}

}  // namespace

double grad_check(const TensorFunction& f, std::span<const Tensor> inputs, double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      if (!std::isfinite(inputs[i][j])) {
        throw NumericError("grad_check: non-finite input " + std::to_string(i) + " coordinate " +
                           std::to_string(j));
      }
    }
  }

  std::vector<Tensor> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    std::vector<Tensor> tracked;
    for (const Tensor& t : inputs) tracked.push_back(tape.watch(t));
    const Tensor y = f(tracked);
    if (y.size() != 1) throw ContractError("grad_check: function must return a scalar");
    if (!std::isfinite(y[0])) throw NumericError("grad_check: non-finite function value at the base point");
    if (!y.tracked()) {
      for (const Tensor& t : inputs) analytic.emplace_back(t.shape(), 0.0);
    } else {
      tape.backward(y);
      for (const Tensor& t : tracked) analytic.push_back(tape.gradient(t));
    }
  }

  double worst = 0.0;
  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double base = inputs[i][j];
      probe[i].mutable_data()[j] = base + eps;
      const double up = evaluate_scalar(f, probe, i, j);
      probe[i].mutable_data()[j] = base - eps;
      const double down = evaluate_scalar(f, probe, i, j);
      probe[i].mutable_data()[j] = base;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i][j];
      if (!std::isfinite(a)) {
        throw NumericError("grad_check: non-finite gradient at input " + std::to_string(i) + " coordinate " +
                           std::to_string(j));
      }
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace inrn
