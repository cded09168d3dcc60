#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "inrn/autodiff.hpp"
#include "inrn/error.hpp"
#include "ops_common.hpp"

namespace inrn {
namespace {

using detail::make_result;

enum class Broadcast { none, scalar_a, scalar_b };

Broadcast broadcast_mode(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (b.size() == 1) return Broadcast::scalar_b;
  if (a.size() == 1) return Broadcast::scalar_a;
  throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
}

// Applies fwd(a_i, b_i) with scalar broadcast and returns the output tensor.
template <typename F>
Tensor binary_values(const Tensor& a, const Tensor& b, Broadcast mode, F fwd) {
  const Shape& shape = mode == Broadcast::scalar_a ? b.shape() : a.shape();
  Tensor out(shape);
  auto o = out.mutable_data();
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double x = mode == Broadcast::scalar_a ? av[0] : av[i];
    const double y = mode == Broadcast::scalar_b ? bv[0] : bv[i];
    o[i] = fwd(x, y);
  }
  return out;
}

// Accumulates d(out)/d(input) * g into an input gradient, summing when that
// input was broadcast.
template <typename F>
void accumulate(std::span<double> dst, std::span<const double> g, bool broadcast, F local) {
  if (dst.empty()) return;
  if (broadcast) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * local(i);
    dst[0] += s;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * local(i);
  }
}

template <typename F, typename D>
Tensor unary(std::string_view kind, const Tensor& x, F fwd, D deriv) {
  Tensor out(x.shape());
  auto o = out.mutable_data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(xv[i]);
  Tensor saved_out = out.detach();
  return make_result(kind, std::move(out), {&x},
                     [x = x.detach(), saved_out, deriv](std::span<const double> g, BackwardContext& ctx) {
                       auto dx = ctx.grad(0);
                       auto xv = x.data();
                       auto ov = saved_out.data();
                       for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * deriv(xv[i], ov[i]);
                     });
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast mode = broadcast_mode(a, b, "add");
  Tensor out = binary_values(a, b, mode, [](double x, double y) { return x + y; });
  return make_result("add", std::move(out), {&a, &b}, [mode](std::span<const double> g, BackwardContext& ctx) {
    accumulate(ctx.grad(0), g, mode == Broadcast::scalar_a, [](std::size_t) { return 1.0; });
    accumulate(ctx.grad(1), g, mode == Broadcast::scalar_b, [](std::size_t) { return 1.0; });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Broadcast mode = broadcast_mode(a, b, "sub");
  Tensor out = binary_values(a, b, mode, [](double x, double y) { return x - y; });
  return make_result("sub", std::move(out), {&a, &b}, [mode](std::span<const double> g, BackwardContext& ctx) {
    accumulate(ctx.grad(0), g, mode == Broadcast::scalar_a, [](std::size_t) { return 1.0; });
    accumulate(ctx.grad(1), g, mode == Broadcast::scalar_b, [](std::size_t) { return -1.0; });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast mode = broadcast_mode(a, b, "mul");
  Tensor out = binary_values(a, b, mode, [](double x, double y) { return x * y; });
  return make_result("mul", std::move(out), {&a, &b},
                     [mode, a = a.detach(), b = b.detach()](std::span<const double> g, BackwardContext& ctx) {
                       auto av = a.data();
                       auto bv = b.data();
                       auto at = [&](std::size_t i) { return mode == Broadcast::scalar_a ? av[0] : av[i]; };
                       auto bt = [&](std::size_t i) { return mode == Broadcast::scalar_b ? bv[0] : bv[i]; };
                       accumulate(ctx.grad(0), g, mode == Broadcast::scalar_a, bt);
                       accumulate(ctx.grad(1), g, mode == Broadcast::scalar_b, at);
                     });
}

Tensor div(const Tensor& a, const Tensor& b) {
  const Broadcast mode = broadcast_mode(a, b, "div");
  Tensor out = binary_values(a, b, mode, [](double x, double y) { return x / y; });
  return make_result("div", std::move(out), {&a, &b},
                     [mode, a = a.detach(), b = b.detach()](std::span<const double> g, BackwardContext& ctx) {
                       auto av = a.data();
                       auto bv = b.data();
                       auto at = [&](std::size_t i) { return mode == Broadcast::scalar_a ? av[0] : av[i]; };
                       auto bt = [&](std::size_t i) { return mode == Broadcast::scalar_b ? bv[0] : bv[i]; };
                       accumulate(ctx.grad(0), g, mode == Broadcast::scalar_a,
                                  [&](std::size_t i) { return 1.0 / bt(i); });
                       accumulate(ctx.grad(1), g, mode == Broadcast::scalar_b, [&](std::size_t i) {
                         const double y = bt(i);
                         return -at(i) / (y * y);
                       });
                     });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary("add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary("mul_scalar", x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary("gelu", x, [](double v) { return v * normal_cdf(v); },
               [](double v, double) { return normal_cdf(v) + v * normal_pdf(v); });
}

Tensor sine(const Tensor& x) {
  return unary("sine", x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Tensor cosine(const Tensor& x) {
  return unary("cosine", x, [](double v) { return std::cos(v); },
               [](double v, double) { return -std::sin(v); });
}

Tensor sqrt(const Tensor& x) {
  return unary("sqrt", x, [](double v) { return std::sqrt(v); },
               [](double, double out) { return out > 0.0 ? 0.5 / out : 0.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary("clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("sum", Tensor::scalar(s), {&x}, [](std::span<const double> g, BackwardContext& ctx) {
    auto dx = ctx.grad(0);
    for (double& v : dx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double n = static_cast<double>(x.size());
  return make_result("mean", Tensor::scalar(s / n), {&x}, [n](std::span<const double> g, BackwardContext& ctx) {
    auto dx = ctx.grad(0);
    for (double& v : dx) v += g[0] / n;
  });
}

Tensor softmax_rows(const Tensor& x) {
  detail::require_rank(x, 2, "softmax_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out(x.shape());
  auto o = out.mutable_data();
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* dst = o.data() + r * cols;
    const double m = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (dst[c] = std::exp(in[c] - m));
    for (std::size_t c = 0; c < cols; ++c) dst[c] /= z;
  }
  Tensor saved = out.detach();
  return make_result("softmax_rows", std::move(out), {&x},
                     [saved, rows, cols](std::span<const double> g, BackwardContext& ctx) {
                       auto dx = ctx.grad(0);
                       auto s = saved.data();
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * s[r * cols + c];
                         for (std::size_t c = 0; c < cols; ++c)
                           dx[r * cols + c] += s[r * cols + c] * (g[r * cols + c] - dot);
                       }
                     });
}

Tensor log_softmax_rows(const Tensor& x) {
  detail::require_rank(x, 2, "log_softmax_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out(x.shape());
  auto o = out.mutable_data();
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    const double m = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - m);
    const double lse = m + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] = in[c] - lse;
  }
  Tensor saved = out.detach();
  return make_result("log_softmax_rows", std::move(out), {&x},
                     [saved, rows, cols](std::span<const double> g, BackwardContext& ctx) {
                       auto dx = ctx.grad(0);
                       auto s = saved.data();
                       for (std::size_t r = 0; r < rows; ++r) {
                         double gs = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
                         for (std::size_t c = 0; c < cols; ++c)
                           dx[r * cols + c] += g[r * cols + c] - std::exp(s[r * cols + c]) * gs;
                       }
                     });
}

Tensor pick_rows(const Tensor& x, std::span<const std::size_t> index) {
  detail::require_rank(x, 2, "pick_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (index.size() != rows) {
    throw DimensionError("pick_rows: " + std::to_string(index.size()) + " indices for " +
                         std::to_string(rows) + " rows");
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out(Shape{rows});
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] >= cols) {
      throw DimensionError("pick_rows: index " + std::to_string(idx[r]) + " out of range for " +
                           std::to_string(cols) + " columns");
    }
    o[r] = x[r * cols + idx[r]];
  }
  return make_result("pick_rows", std::move(out), {&x},
                     [idx = std::move(idx), cols](std::span<const double> g, BackwardContext& ctx) {
                       auto dx = ctx.grad(0);
                       for (std::size_t r = 0; r < idx.size(); ++r) dx[r * cols + idx[r]] += g[r];
                     });
}

}  // namespace inrn
