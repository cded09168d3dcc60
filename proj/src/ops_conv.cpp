#include <algorithm>
#include <string>

#include "inrn/autodiff.hpp"
#include "inrn/error.hpp"
#include "ops_common.hpp"

namespace inrn {
namespace {

using detail::make_result;

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kernel_h, kernel_w;
  std::size_t out_h, out_w;
  Conv2dOptions opt;

  std::size_t patch() const { return channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h * out_w; }
  bool pointwise() const {
    return kernel_h == 1 && kernel_w == 1 && opt.stride == 1 && opt.pad_top == 0 && opt.pad_bottom == 0 &&
           opt.pad_left == 0 && opt.pad_right == 0;
  }
};

std::size_t output_extent(std::size_t in, std::size_t pad_lo, std::size_t pad_hi, std::size_t kernel,
                          std::size_t stride, const char* axis) {
  const std::size_t padded = in + pad_lo + pad_hi;
  if (kernel > padded) {
    throw ConfigError(std::string("conv2d: kernel ") + axis + " " + std::to_string(kernel) +
                      " exceeds padded input " + std::to_string(padded));
  }
  if ((padded - kernel) % stride != 0) {
    throw ConfigError(std::string("conv2d: non-integral output ") + axis + " (" + std::to_string(padded) +
                      " - " + std::to_string(kernel) + ") / " + std::to_string(stride));
  }
  return (padded - kernel) / stride + 1;
}

// cols[patch, positions] for one image.
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t s = g.opt.stride;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        double* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * g.positions();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ki) - static_cast<std::ptrdiff_t>(g.opt.pad_top);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill_n(dst, g.out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * s + kj) - static_cast<std::ptrdiff_t>(g.opt.pad_left);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

// Scatter-add of cols back to image layout.
void col2im(const double* cols, const ConvGeometry& g, double* dx) {
  const std::size_t s = g.opt.stride;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = dx + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const double* row = cols + ((c * g.kernel_h + ki) * g.kernel_w + kj) * g.positions();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ki) - static_cast<std::ptrdiff_t>(g.opt.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.width;
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * s + kj) - static_cast<std::ptrdiff_t>(g.opt.pad_left);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Conv2dOptions Conv2dOptions::same(std::size_t height, std::size_t width, std::size_t kernel_h,
                                  std::size_t kernel_w, std::size_t stride) {
  auto split = [stride](std::size_t in, std::size_t k) {
    const std::size_t out = (in + stride - 1) / stride;
    const std::size_t needed = (out - 1) * stride + k;
    const std::size_t total = needed > in ? needed - in : 0;
    return std::pair{total / 2, total - total / 2};
  };
  const auto [top, bottom] = split(height, kernel_h);
  const auto [left, right] = split(width, kernel_w);
  return {stride, top, bottom, left, right};
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, const Conv2dOptions& options) {
  detail::require_rank(input, 4, "conv2d input");
  detail::require_rank(weight, 4, "conv2d weight");
  if (options.stride == 0) throw ConfigError("conv2d: stride must be >= 1");
  if (weight.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: weight " + shape_string(weight.shape()) + " expects " +
                         std::to_string(weight.dim(1)) + " channels, input " + shape_string(input.shape()) +
                         " has " + std::to_string(input.dim(1)));
  }
  if (bias && bias->size() != weight.dim(0)) {
    throw DimensionError("conv2d: bias " + shape_string(bias->shape()) + " for " +
                         std::to_string(weight.dim(0)) + " filters");
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2),
                 weight.dim(3), 0, 0, options};
  g.out_h = output_extent(g.height, options.pad_top, options.pad_bottom, g.kernel_h, options.stride, "height");
  g.out_w = output_extent(g.width, options.pad_left, options.pad_right, g.kernel_w, options.stride, "width");

  Tensor out(Shape{g.batch, g.filters, g.out_h, g.out_w});
  auto o = out.mutable_data();
  const std::size_t in_image = g.channels * g.height * g.width;
  const std::size_t out_image = g.filters * g.positions();
  std::vector<double> cols(g.pointwise() ? 0 : g.patch() * g.positions());
  const double* w = weight.data().data();
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* x = input.data().data() + n * in_image;
    const double* c = x;
    if (!g.pointwise()) {
      im2col(x, g, cols.data());
      c = cols.data();
    }
    double* y = o.data() + n * out_image;
    if (bias) {
      for (std::size_t f = 0; f < g.filters; ++f) std::fill_n(y + f * g.positions(), g.positions(), (*bias)[f]);
    }
    detail::gemm(false, false, g.filters, g.positions(), g.patch(), 1.0, w, g.patch(), c, g.positions(),
                 bias ? 1.0 : 0.0, y, g.positions());
  }

  Tensor no_bias;
  return make_result(
      "conv2d", std::move(out), {&input, &weight, bias ? bias : &no_bias},
      [g, x_saved = input.detach(), w_saved = weight.detach()](std::span<const double> grad,
                                                               BackwardContext& ctx) {
        auto dx = ctx.grad(0);
        auto dw = ctx.grad(1);
        auto db = ctx.grad(2);
        const std::size_t in_image = g.channels * g.height * g.width;
        const std::size_t out_image = g.filters * g.positions();
        std::vector<double> cols(g.pointwise() ? 0 : g.patch() * g.positions());
        std::vector<double> dcols(g.pointwise() || dx.empty() ? 0 : g.patch() * g.positions());
        for (std::size_t n = 0; n < g.batch; ++n) {
          const double* gy = grad.data() + n * out_image;
          if (!dw.empty()) {
            const double* x = x_saved.data().data() + n * in_image;
            const double* c = x;
            if (!g.pointwise()) {
              im2col(x, g, cols.data());
              c = cols.data();
            }
            // dW += G * cols^T
            detail::gemm(false, true, g.filters, g.patch(), g.positions(), 1.0, gy, g.positions(), c,
                         g.positions(), 1.0, dw.data(), g.patch());
          }
          if (!db.empty()) {
            for (std::size_t f = 0; f < g.filters; ++f) {
              double s = 0.0;
              for (std::size_t p = 0; p < g.positions(); ++p) s += gy[f * g.positions() + p];
              db[f] += s;
            }
          }
          if (!dx.empty()) {
            // dcols = W^T * G
            if (g.pointwise()) {
              detail::gemm(true, false, g.patch(), g.positions(), g.filters, 1.0, w_saved.data().data(),
                           g.patch(), gy, g.positions(), 1.0, dx.data() + n * in_image, g.positions());
            } else {
              detail::gemm(true, false, g.patch(), g.positions(), g.filters, 1.0, w_saved.data().data(),
                           g.patch(), gy, g.positions(), 0.0, dcols.data(), g.positions());
              col2im(dcols.data(), g, dx.data() + n * in_image);
            }
          }
        }
      });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  return conv2d(input, weight, bias.rank() == 0 ? nullptr : &bias, Conv2dOptions::symmetric(stride, padding));
}

namespace {

// Source flat index in [N, C*r*r, H, W] for every destination element of
// [N, C, H*r, W*r].
std::vector<std::size_t> shuffle_map(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::size_t r) {
  std::vector<std::size_t> map(n * c * h * r * w * r);
  std::size_t dst = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h * r; ++y)
        for (std::size_t x = 0; x < w * r; ++x) {
          const std::size_t src_c = ch * r * r + (y % r) * r + (x % r);
          map[dst++] = ((b * c * r * r + src_c) * h + y / r) * w + x / r;
        }
  return map;
}

Tensor gather(std::string_view kind, const Tensor& x, Shape out_shape, std::vector<std::size_t> map) {
  Tensor out(std::move(out_shape));
  auto o = out.mutable_data();
  auto xv = x.data();
  for (std::size_t i = 0; i < map.size(); ++i) o[i] = xv[map[i]];
  return make_result(kind, std::move(out), {&x}, [map = std::move(map)](std::span<const double> g, BackwardContext& ctx) {
    auto dx = ctx.grad(0);
    for (std::size_t i = 0; i < map.size(); ++i) dx[map[i]] += g[i];
  });
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, std::size_t factor) {
  detail::require_rank(x, 4, "pixel_shuffle");
  if (factor == 0) throw ConfigError("pixel_shuffle: factor must be >= 1");
  const std::size_t rr = factor * factor;
  if (x.dim(1) % rr != 0) {
    throw ConfigError("pixel_shuffle: " + std::to_string(x.dim(1)) + " channels not divisible by " +
                      std::to_string(rr));
  }
  const std::size_t n = x.dim(0), c = x.dim(1) / rr, h = x.dim(2), w = x.dim(3);
  return gather("pixel_shuffle", x, Shape{n, c, h * factor, w * factor}, shuffle_map(n, c, h, w, factor));
}

Tensor pixel_unshuffle(const Tensor& x, std::size_t factor) {
  detail::require_rank(x, 4, "pixel_unshuffle");
  if (factor == 0) throw ConfigError("pixel_unshuffle: factor must be >= 1");
  if (x.dim(2) % factor != 0 || x.dim(3) % factor != 0) {
    throw ConfigError("pixel_unshuffle: spatial size " + shape_string(x.shape()) + " not divisible by " +
                      std::to_string(factor));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2) / factor, w = x.dim(3) / factor;
  // Inverse of the shuffle map: destination i of unshuffle reads shuffle's
  // destination j wherever shuffle's map sends j to i.
  const auto forward = shuffle_map(n, c, h, w, factor);
  std::vector<std::size_t> map(forward.size());
  for (std::size_t j = 0; j < forward.size(); ++j) map[forward[j]] = j;
  return gather("pixel_unshuffle", x, Shape{n, c * factor * factor, h, w}, std::move(map));
}

Tensor global_avg_pool(const Tensor& x) {
  detail::require_rank(x, 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw DimensionError("global_avg_pool: empty spatial extent");
  Tensor out(Shape{n, c});
  auto o = out.mutable_data();
  auto xv = x.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) s += xv[i * hw + p];
    o[i] = s / static_cast<double>(hw);
  }
  return make_result("global_avg_pool", std::move(out), {&x}, [n, c, hw](std::span<const double> g, BackwardContext& ctx) {
    auto dx = ctx.grad(0);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < n * c; ++i)
      for (std::size_t p = 0; p < hw; ++p) dx[i * hw + p] += g[i] * inv;
  });
}

Tensor resize_nearest(const Tensor& x, std::size_t height, std::size_t width) {
  detail::require_rank(x, 4, "resize_nearest");
  if (height == 0 || width == 0) throw ConfigError("resize_nearest: target size must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<std::size_t> map(n * c * height * width);
  std::size_t dst = 0;
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t xx = 0; xx < width; ++xx) map[dst++] = (p * h + y * h / height) * w + xx * w / width;
  return gather("resize_nearest", x, Shape{n, c, height, width}, std::move(map));
}

}  // namespace inrn
