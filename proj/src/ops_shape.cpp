#include <algorithm>
#include <numeric>
#include <string>

#include "inrn/autodiff.hpp"
#include "inrn/error.hpp"
#include "ops_common.hpp"

namespace inrn {

using detail::make_result;

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  detail::gemm(false, false, m, n, k, 1.0, a.data().data(), k, b.data().data(), n, 0.0,
               out.mutable_data().data(), n);
  return make_result("matmul", std::move(out), {&a, &b},
                     [a = a.detach(), b = b.detach(), m, k, n](std::span<const double> g, BackwardContext& ctx) {
                       if (auto da = ctx.grad(0); !da.empty()) {
                         // dA = G * B^T
                         detail::gemm(false, true, m, k, n, 1.0, g.data(), n, b.data().data(), n, 1.0,
                                      da.data(), k);
                       }
                       if (auto db = ctx.grad(1); !db.empty()) {
                         // dB = A^T * G
                         detail::gemm(true, false, k, n, m, 1.0, a.data().data(), k, g.data(), n, 1.0,
                                      db.data(), n);
                       }
                     });
}

Tensor add_rowwise(const Tensor& x, const Tensor& b) {
  detail::require_rank(x, 2, "add_rowwise");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (b.size() != cols) {
    throw DimensionError("add_rowwise: bias " + shape_string(b.shape()) + " for rows of " +
                         shape_string(x.shape()));
  }
  Tensor out(x.shape());
  auto o = out.mutable_data();
  auto xv = x.data();
  auto bv = b.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] = xv[r * cols + c] + bv[c];
  return make_result("add_rowwise", std::move(out), {&x, &b},
                     [rows, cols](std::span<const double> g, BackwardContext& ctx) {
                       if (auto dx = ctx.grad(0); !dx.empty())
                         for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
                       if (auto db = ctx.grad(1); !db.empty())
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  Tensor out = x.with_shape(std::move(shape));
  return make_result("reshape", std::move(out), {&x}, [](std::span<const double> g, BackwardContext& ctx) {
    auto dx = ctx.grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

Tensor transpose2d(const Tensor& x) {
  detail::require_rank(x, 2, "transpose2d");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out(Shape{cols, rows});
  auto o = out.mutable_data();
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) o[c * rows + r] = xv[r * cols + c];
  return make_result("transpose2d", std::move(out), {&x},
                     [rows, cols](std::span<const double> g, BackwardContext& ctx) {
                       auto dx = ctx.grad(0);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += g[c * rows + r];
                     });
}

namespace {

// For each output element, the flat index of its source element.
std::vector<std::size_t> permutation_map(const Shape& in_shape, std::span<const std::size_t> axes,
                                         Shape& out_shape) {
  const std::size_t rank = in_shape.size();
  if (axes.size() != rank) {
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " +
                         shape_string(in_shape));
  }
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw DimensionError("permute: axes are not a permutation");
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  out_shape.assign(rank, 0);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[axes[i]];
  const std::size_t total = shape_size(in_shape);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> counter(rank, 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += counter[i] * in_stride[axes[i]];
    map[flat] = src;
    for (std::size_t i = rank; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  Shape out_shape;
  auto map = permutation_map(x.shape(), axes, out_shape);
  Tensor out(out_shape);
  auto o = out.mutable_data();
  auto xv = x.data();
  for (std::size_t i = 0; i < map.size(); ++i) o[i] = xv[map[i]];
  return make_result("permute", std::move(out), {&x},
                     [map = std::move(map)](std::span<const double> g, BackwardContext& ctx) {
                       auto dx = ctx.grad(0);
                       for (std::size_t i = 0; i < map.size(); ++i) dx[map[i]] += g[i];
                     });
}

Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes) {
  return permute(x, std::span<const std::size_t>(axes.begin(), axes.size()));
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.dim(i) != first[i]) {
        throw DimensionError("concat: shape mismatch " + shape_string(first) + " vs " +
                             shape_string(p.shape()));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_row = out_shape[axis] * inner;

  Tensor out(out_shape);
  auto o = out.mutable_data();
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const std::size_t row = p.dim(axis) * inner;
    auto pv = p.data();
    for (std::size_t r = 0; r < outer; ++r)
      std::copy_n(pv.data() + r * row, row, o.data() + r * out_row + offset);
    offset += row;
  }
  std::vector<std::size_t> widths;
  std::vector<const Tensor*> inputs;
  for (const Tensor& p : parts) {
    widths.push_back(p.dim(axis) * inner);
    inputs.push_back(&p);
  }
  return make_result("concat", std::move(out), inputs,
                     [offsets, widths, outer, out_row](std::span<const double> g, BackwardContext& ctx) {
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         auto dp = ctx.grad(k);
                         if (dp.empty()) continue;
                         for (std::size_t r = 0; r < outer; ++r)
                           for (std::size_t j = 0; j < widths[k]; ++j)
                             dp[r * widths[k] + j] += g[r * out_row + offsets[k] + j];
                       }
                     });
}

}  // namespace inrn
