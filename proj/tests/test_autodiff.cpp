#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <thread>

#include "inrn/error.hpp"
#include "inrn/gradcheck_suite.hpp"
#include "support.hpp"

using namespace inrn;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  auto o = c.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      o[i * n + j] = s;
    }
  return c;
}

// Direct cross-correlation with explicit zero padding.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride, std::size_t pt,
                  std::size_t pb, std::size_t pl, std::size_t pr) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H + pt + pb - kh) / stride + 1, Wo = (W + pl + pr - kw) / stride + 1;
  Tensor y({N, F, Ho, Wo});
  auto o = y.mutable_data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double s = bias ? (*bias)[f] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pt);
                const long q = static_cast<long>(j * stride + v) - static_cast<long>(pl);
                if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
                s += x[((n * C + c) * H + r) * W + q] * w[((f * C + c) * kh + u) * kw + v];
              }
          o[((n * F + f) * Ho + i) * Wo + j] = s;
        }
  return y;
}

}  // namespace

TEST_CASE("matmul against a triple loop") {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({2, 2}, {5, 6, 7, 8});
  CHECK(matmul(a, b).values() == std::vector<double>{19, 22, 43, 50});

  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(7), k = 1 + rng.below(9), n = 1 + rng.below(33);
    const Tensor x = testing::uniform({m, k}, rng), y = testing::uniform({k, n}, rng);
    CHECK(testing::max_abs_diff(matmul(x, y), naive_matmul(x, y)) < 1e-12);
  }
}

TEST_CASE("matmul identity, zeros and shape errors") {
  Rng rng(2);
  const Tensor b = testing::uniform({2, 5}, rng);
  CHECK(matmul(Tensor({2, 2}, {1, 0, 0, 1}), b).values() == b.values());
  for (double v : matmul(Tensor::zeros({2, 3}), testing::uniform({3, 4}, rng)).values()) CHECK(v == 0.0);
  REQUIRE_THROWS_MATCHES(matmul(Tensor({2, 3}), Tensor({4, 2})), DimensionError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("[2,3]") && ContainsSubstring("[4,2]")));
}

TEST_CASE("conv2d against direct summation") {
  const Tensor ones_in = Tensor::ones({1, 1, 5, 5});
  const Tensor ones_k = Tensor::ones({1, 1, 3, 3});
  const Tensor z = conv2d(ones_in, ones_k, nullptr, Conv2dOptions{});
  CHECK(z.shape() == Shape{1, 1, 3, 3});
  for (double v : z.data()) CHECK(v == 9.0);

  Rng rng(3);
  struct Case {
    std::size_t n, c, h, w, f, k, stride, pt, pb, pl, pr;
  };
  for (const Case& cs : {Case{2, 3, 6, 5, 4, 3, 1, 1, 1, 1, 1}, Case{1, 2, 7, 7, 3, 3, 2, 1, 1, 1, 1},
                         Case{1, 2, 6, 6, 2, 3, 2, 0, 1, 0, 1}, Case{2, 4, 3, 4, 5, 1, 1, 0, 0, 0, 0},
                         Case{1, 1, 8, 8, 2, 5, 1, 2, 2, 2, 2}}) {
    const Tensor x = testing::uniform({cs.n, cs.c, cs.h, cs.w}, rng);
    const Tensor w = testing::uniform({cs.f, cs.c, cs.k, cs.k}, rng);
    const Tensor b = testing::uniform({cs.f}, rng);
    const Conv2dOptions opt{cs.stride, cs.pt, cs.pb, cs.pl, cs.pr};
    CHECK(testing::max_abs_diff(conv2d(x, w, &b, opt), naive_conv(x, w, &b, cs.stride, cs.pt, cs.pb, cs.pl, cs.pr)) <
          1e-12);
  }
}

TEST_CASE("conv2d identity, zero kernel and contract errors") {
  Rng rng(4);
  const Tensor x = testing::uniform({2, 1, 4, 4}, rng);
  CHECK(conv2d(x, Tensor::ones({1, 1, 1, 1}), Tensor::zeros({1}), 1, 0).values() == x.values());

  const Tensor b({1}, {0.25});
  for (double v : conv2d(x, Tensor::zeros({1, 1, 3, 3}), b, 1, 1).values()) CHECK(v == 0.25);

  // same padding keeps the extent for odd kernels
  for (std::size_t k : {1u, 3u, 5u}) {
    const Tensor y = conv2d(testing::uniform({1, 2, 7, 6}, rng), testing::uniform({3, 2, k, k}, rng), Tensor(),
                            1, (k - 1) / 2);
    CHECK(y.shape() == Shape{1, 3, 7, 6});
  }
  CHECK_THROWS_AS(conv2d(Tensor({1, 1, 6, 6}), Tensor({1, 1, 3, 3}), Tensor(), 2, 0), ConfigError);
  CHECK_THROWS_AS(conv2d(Tensor({1, 2, 5, 5}), Tensor({1, 3, 3, 3}), Tensor(), 1, 1), DimensionError);
}

TEST_CASE("same padding puts the extra row and column at the bottom right") {
  const Conv2dOptions o = Conv2dOptions::same(6, 6, 3, 3, 2);
  CHECK(o.pad_top == 0);
  CHECK(o.pad_bottom == 1);
  CHECK(o.pad_left == 0);
  CHECK(o.pad_right == 1);
  const Conv2dOptions s = Conv2dOptions::same(5, 5, 3, 3, 1);
  CHECK((s.pad_top == 1 && s.pad_bottom == 1));
}

TEST_CASE("gelu uses the exact erf form") {
  // Phi(1) = 0.5 * (1 + erf(1/sqrt 2)) from the Taylor series of erf
  double erf_series = 0.0;
  const double z = 1.0 / std::sqrt(2.0);
  double term = z;
  for (int n = 0; n < 40; ++n) {
    erf_series += term / (2 * n + 1);
    term *= -z * z / (n + 1);
  }
  erf_series *= 2.0 / std::sqrt(M_PI);
  const double oracle = 0.5 * (1.0 + erf_series);

  const Tensor y = gelu(Tensor({3}, {0.0, 1.0, 10.0}));
  CHECK(y[0] == 0.0);
  CHECK_THAT(y[1], WithinAbs(oracle, 1e-12));
  CHECK_THAT(y[1], WithinAbs(0.841345, 1e-5));
  CHECK_THAT(y[2], WithinAbs(10.0, 1e-9));
}

TEST_CASE("elementwise definitions") {
  const Tensor r = relu(Tensor({2}, {-3.0, 3.0}));
  CHECK(r.values() == std::vector<double>{0.0, 3.0});
  CHECK(mean(Tensor::ones({4, 4})).item() == 1.0);
  const Tensor s = softmax_rows(Tensor({1, 2}, {0.0, 0.0}));
  CHECK(s.values() == std::vector<double>{0.5, 0.5});
  CHECK_THROWS_AS(Tensor({2, 3}) + Tensor({3, 2}), DimensionError);
}

TEST_CASE("relu subgradient at zero is zero") {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor({3}, {-1.0, 0.0, 1.0}));
  tape.backward(sum(relu(x)));
  CHECK(tape.gradient(x).values() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("backward basics") {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor({2, 3}, 0.7));
  tape.backward(sum(x));
  for (double g : tape.gradient(x).values()) CHECK(g == 1.0);

  Tape t2;
  TapeScope s2(t2);
  const Tensor y = t2.watch(Tensor({2}, {2.0, 4.0}));
  t2.backward(mean(y * y));
  CHECK(t2.gradient(y).values() == std::vector<double>{2.0, 4.0});
}

TEST_CASE("fan-out gradients accumulate") {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor({3, 2}, 0.1));
  tape.backward(sum(x) + sum(x));
  for (double g : tape.gradient(x).values()) CHECK(g == 2.0);
}

TEST_CASE("backward contract errors") {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor({2}, 1.0));
  CHECK_THROWS_AS(tape.backward(x * 2.0), ContractError);
  CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), ContractError);
  Tape other;
  CHECK_THROWS_AS(other.backward(sum(x)), ContractError);
}

TEST_CASE("untracked tensors never receive a node") {
  const Tensor a = Tensor({2}, 1.0) * 3.0;
  CHECK_FALSE(a.tracked());
  Tape tape;
  TapeScope scope(tape);
  const Tensor b = Tensor({2}, 1.0) + Tensor({2}, 2.0);
  CHECK_FALSE(b.tracked());
  const Tensor w = tape.watch(Tensor({2}, 1.0));
  CHECK(tape.gradient(w).values() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("tape node ids are topologically ordered") {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor({2, 2}, 0.5));
  const Tensor y = gelu(matmul(x, x));
  const Tensor z = sum(y * x);
  CHECK(x.node() < y.node());
  CHECK(y.node() < z.node());
  tape.backward(z);
  CHECK(tape.gradient(y).shape() == y.shape());
  CHECK(tape.gradient(x).shape() == x.shape());
}

TEST_CASE("reshape round trip and copy on write") {
  Rng rng(5);
  const Tensor x = testing::uniform({3, 4, 2}, rng);
  CHECK(reshape(reshape(x, {6, 4}), {3, 4, 2}).values() == x.values());
  Tensor y = x;
  y.mutable_data()[0] = 99.0;
  CHECK(x[0] != 99.0);
}

TEST_CASE("pixel shuffle index map") {
  const Tensor x({1, 4, 1, 1}, {1, 2, 3, 4});
  const Tensor y = pixel_shuffle(x, 2);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.values() == std::vector<double>{1, 2, 3, 4});
  CHECK(pixel_shuffle(Tensor({1, 8, 3, 3}), 2).shape() == Shape{1, 2, 6, 6});

  Rng rng(6);
  const Tensor z = testing::uniform({2, 12, 3, 2}, rng);
  CHECK(pixel_shuffle(z, 1).values() == z.values());
  CHECK(pixel_unshuffle(pixel_shuffle(z, 2), 2).values() == z.values());
  CHECK_THROWS_AS(pixel_shuffle(Tensor({1, 6, 2, 2}), 2), ConfigError);
}

TEST_CASE("global average pool") {
  CHECK(global_avg_pool(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})).item() == 2.5);
  for (double v : global_avg_pool(Tensor({2, 3, 4, 5}, 0.75)).values()) CHECK(v == 0.75);
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor({1, 2, 3, 2}, 1.0));
  tape.backward(sum(global_avg_pool(x)));
  for (double g : tape.gradient(x).values()) CHECK_THAT(g, WithinAbs(1.0 / 6.0, 1e-15));
}

TEST_CASE("grad_check on sum is exact") {
  Rng rng(7);
  const std::vector<Tensor> in{testing::uniform({4, 3}, rng)};
  CHECK(grad_check([](std::span<const Tensor> v) { return sum(v[0]); }, in) <= 1e-10);
}

TEST_CASE("grad_check on a gelu-matmul composite") {
  Rng rng(8);
  const std::vector<Tensor> in{testing::uniform({3, 4}, rng), testing::uniform({4, 2}, rng)};
  CHECK(grad_check([](std::span<const Tensor> v) { return mean(gelu(matmul(v[0], v[1])) * 1.5); }, in) <= 1e-4);
  // three-op composite
  CHECK(grad_check([](std::span<const Tensor> v) { return sum(sine(v[0]) * cosine(v[0]) + v[0]); },
                   std::vector<Tensor>{testing::uniform({5}, rng)}) <= 1e-4);
}

TEST_CASE("grad_check raises on non-finite values") {
  const std::vector<Tensor> in{Tensor({2}, {-1.0, 1.0})};
  CHECK_THROWS_AS(grad_check([](std::span<const Tensor> v) { return sum(sqrt(v[0])); }, in), NumericError);
}

TEST_CASE("every registered op passes its gradient check for five seeds") {
  const auto& kinds = registered_op_kinds();
  CHECK(std::set<std::string_view>(kinds.begin(), kinds.end()).size() == kinds.size());
  for (std::string_view kind : kinds) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      INFO(kind << " seed " << seed);
      CHECK(op_gradient_error(kind, seed) <= 1e-4);
    }
  }
}

TEST_CASE("an injected gradient fault is detected") {
  inject_gradient_fault("mul", 1.5);
  const double err = op_gradient_error("mul", 1);
  clear_gradient_fault();
  CHECK(err > 1e-2);
  CHECK(op_gradient_error("mul", 1) <= 1e-4);
}

TEST_CASE("matmul counts multiply-accumulates") {
  const std::uint64_t before = mac_counter();
  (void)matmul(Tensor({3, 5}), Tensor({5, 7}));
  CHECK(mac_counter() - before == 3 * 5 * 7);
}

TEST_CASE("tapes on different threads are independent") {
  double g1 = 0.0, g2 = 0.0;
  auto run = [](double scale, double& out) {
    Tape tape;
    TapeScope scope(tape);
    const Tensor x = tape.watch(Tensor({4}, 1.0));
    double acc = 0.0;
    for (int i = 0; i < 200; ++i) {
      Tape inner;
      TapeScope s(inner);
      const Tensor y = inner.watch(Tensor({4}, 1.0));
      inner.backward(sum(y * scale));
      acc += inner.gradient(y)[0];
    }
    out = acc;
    (void)x;
  };
  std::thread a(run, 1.0, std::ref(g1)), b(run, 3.0, std::ref(g2));
  a.join();
  b.join();
  CHECK(g1 == 200.0);
  CHECK(g2 == 600.0);
}
