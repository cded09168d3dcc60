#pragma once

#include <cmath>
#include <vector>

#include "inrn/tensor.hpp"

namespace testing {

// Definition-level SSIM: for every valid window position, Gaussian-weighted
// moments computed directly from the pixels in that window; mean over
// positions, then over channels (and frames).
inline double ssim_oracle(const inrn::Tensor& x, const inrn::Tensor& y, std::size_t win, double sigma, double c1,
                          double c2) {
  std::size_t frames = 1, h, w, ch = 1;
  if (x.rank() == 2) {
    h = x.dim(0), w = x.dim(1);
  } else if (x.rank() == 3) {
    h = x.dim(0), w = x.dim(1), ch = x.dim(2);
  } else {
    frames = x.dim(0), h = x.dim(1), w = x.dim(2), ch = x.dim(3);
  }
  std::vector<double> g(win * win);
  double total = 0.0;
  const double r = (static_cast<double>(win) - 1.0) / 2.0;
  for (std::size_t u = 0; u < win; ++u)
    for (std::size_t v = 0; v < win; ++v) {
      const double du = u - r, dv = v - r;
      g[u * win + v] = std::exp(-(du * du + dv * dv) / (2 * sigma * sigma));
      total += g[u * win + v];
    }
  for (double& k : g) k /= total;

  double sum = 0.0;
  std::size_t planes = 0;
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t c = 0; c < ch; ++c) {
      auto at = [&](const inrn::Tensor& im, std::size_t i, std::size_t j) { return im[((t * h + i) * w + j) * ch + c]; };
      double plane = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i + win <= h; ++i)
        for (std::size_t j = 0; j + win <= w; ++j) {
          double mx = 0, my = 0;
          for (std::size_t u = 0; u < win; ++u)
            for (std::size_t v = 0; v < win; ++v) {
              mx += g[u * win + v] * at(x, i + u, j + v);
              my += g[u * win + v] * at(y, i + u, j + v);
            }
          double vx = 0, vy = 0, cxy = 0;
          for (std::size_t u = 0; u < win; ++u)
            for (std::size_t v = 0; v < win; ++v) {
              const double a = at(x, i + u, j + v) - mx, b = at(y, i + u, j + v) - my;
              vx += g[u * win + v] * a * a;
              vy += g[u * win + v] * b * b;
              cxy += g[u * win + v] * a * b;
            }
          plane += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
          ++count;
        }
      sum += plane / static_cast<double>(count);
      ++planes;
    }
  return sum / static_cast<double>(planes);
}

}  // namespace testing
