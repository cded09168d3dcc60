#include <catch_amalgamated.hpp>

#include <cmath>

#include "inrn/error.hpp"
#include "inrn/losses.hpp"
#include "ssim_oracle.hpp"
#include "support.hpp"

using namespace inrn;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

double oracle(const Tensor& x, const Tensor& y, const FitLossConfig& cfg = {}) {
  return testing::ssim_oracle(x, y, cfg.ssim_window, cfg.ssim_sigma, cfg.c1(), cfg.c2());
}

StageOutputs features(std::initializer_list<Tensor> ts) { return StageOutputs{std::vector<Tensor>(ts)}; }

}  // namespace

TEST_CASE("psnr closed forms") {
  Rng rng(1);
  const Tensor a = testing::uniform({8, 8, 3}, rng, 0.0, 0.9);
  CHECK(psnr(a, a) == kInfinitePsnr);
  CHECK_THAT(psnr(a + 0.1, a), WithinAbs(20.0, 1e-9));

  const Tensor b = testing::uniform({8, 8, 3}, rng, 0.0, 1.0);
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  CHECK_THAT(psnr(a, b), WithinAbs(10.0 * std::log10(1.0 / mse), 1e-9));
  CHECK_THROWS_AS(psnr(a, Tensor({8, 8, 1})), DimensionError);
}

TEST_CASE("ssim of an image with itself is one") {
  Rng rng(2);
  const Tensor x = testing::uniform({16, 16, 3}, rng, 0.0, 1.0);
  CHECK_THAT(ssim(x, x).item(), WithinAbs(1.0, 1e-9));
}

TEST_CASE("ssim of a checkerboard against its inverse") {
  Tensor x({12, 12});
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j) x.mutable_data()[i * 12 + j] = (i + j) % 2 ? 1.0 : 0.0;
  const Tensor y = (x * -1.0) + 1.0;
  const double s = ssim(x, y).item();
  CHECK(s < 0.0);
  CHECK_THAT(s, WithinAbs(oracle(x, y), 1e-9));
}

TEST_CASE("ssim matches the sliding-window oracle") {
  Rng rng(3);
  FitLossConfig small;
  small.ssim_window = 7;
  small.ssim_sigma = 1.0;
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t h = 11 + rng.below(10), w = 11 + rng.below(10);
    const Tensor x = testing::uniform({h, w, 3}, rng, 0.0, 1.0);
    const Tensor y = testing::uniform({h, w, 3}, rng, 0.0, 1.0);
    CHECK_THAT(ssim(x, y).item(), WithinAbs(oracle(x, y), 1e-6));
    CHECK_THAT(ssim(x, y, small).item(), WithinAbs(oracle(x, y, small), 1e-6));
  }
  const Tensor x = testing::uniform({12, 12}, rng, 0.0, 1.0), y = testing::uniform({12, 12}, rng, 0.0, 1.0);
  CHECK_THAT(ssim(x, y).item(), WithinAbs(oracle(x, y), 1e-6));
  const Tensor fx = testing::uniform({2, 11, 13, 3}, rng, 0.0, 1.0), fy = testing::uniform({2, 11, 13, 3}, rng, 0.0, 1.0);
  CHECK_THAT(ssim(fx, fy).item(), WithinAbs(oracle(fx, fy), 1e-6));
}

TEST_CASE("ssim is symmetric and bounded") {
  Rng rng(4);
  FitLossConfig cfg;
  cfg.ssim_window = 3;
  cfg.ssim_sigma = 0.8;
  for (int trial = 0; trial < 1000; ++trial) {
    const Tensor x = testing::uniform({4, 4}, rng, 0.0, 1.0), y = testing::uniform({4, 4}, rng, 0.0, 1.0);
    const double s = ssim(x, y, cfg).item();
    CHECK_THAT(s, WithinAbs(ssim(y, x, cfg).item(), 1e-12));
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("ssim rejects images smaller than the window") {
  REQUIRE_THROWS_AS(ssim(Tensor({10, 10, 3}), Tensor({10, 10, 3})), ConfigError);
  FitLossConfig even;
  even.ssim_window = 4;
  CHECK_THROWS_AS(even.validate(), ConfigError);
}

TEST_CASE("gaussian window sums to one") {
  const Tensor g = gaussian_window(11, 1.5);
  double s = 0.0;
  for (double v : g.data()) s += v;
  CHECK_THAT(s, WithinAbs(1.0, 1e-14));
}

TEST_CASE("fit loss boundary identities") {
  Rng rng(5);
  const Tensor p = testing::uniform({16, 16, 3}, rng, 0.0, 1.0), t = testing::uniform({16, 16, 3}, rng, 0.0, 1.0);
  FitLossConfig cfg;

  cfg.alpha = 1.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sq += (p[i] - t[i]) * (p[i] - t[i]);
  CHECK_THAT(fit_loss(p, t, cfg).item(), WithinAbs(std::sqrt(sq) / (16.0 * 16.0), 1e-12));

  cfg.alpha = 0.0;
  CHECK_THAT(fit_loss(p, t, cfg).item(), WithinAbs(1.0 - ssim(p, t, cfg).item(), 1e-12));

  for (double a : {0.0, 0.3, 0.7, 1.0}) {
    cfg.alpha = a;
    CHECK_THAT(fit_loss(t, t, cfg).item(), WithinAbs(0.0, 1e-12));
    CHECK(fit_loss(p, t, cfg).item() >= 0.0);
  }
  cfg.alpha = 1.5;
  CHECK_THROWS_AS(fit_loss(p, t, cfg), ConfigError);
  CHECK_THROWS_AS(fit_loss(p, Tensor({16, 16, 1}), FitLossConfig{}), DimensionError);
}

TEST_CASE("mse mode of the L2 term") {
  Rng rng(6);
  const Tensor p = testing::uniform({12, 12, 3}, rng, 0.0, 1.0), t = testing::uniform({12, 12, 3}, rng, 0.0, 1.0);
  FitLossConfig cfg;
  cfg.alpha = 1.0;
  cfg.l2_mode = FitLossConfig::L2Mode::mse;
  double sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sq += (p[i] - t[i]) * (p[i] - t[i]);
  CHECK_THAT(fit_loss(p, t, cfg).item(), WithinAbs(sq / static_cast<double>(p.size()), 1e-12));
}

TEST_CASE("ms loss simple cases") {
  const Tensor f = Tensor({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  ParameterSet params;
  Rng rng(7);
  const StageDims dims{2, 2, 2};
  const std::vector<StageDims> one{dims};
  auto aligners = make_stage_aligners(params, one, one, rng, false);
  aligners[0].projection.weight->value = Tensor({2, 2}, {1, 0, 0, 1});
  const std::vector<std::size_t> set{1};
  CHECK(ms_loss(features({f}), features({f}), aligners, set).item() == 0.0);
  CHECK_THAT(ms_loss(features({f + 0.3}), features({f}), aligners, set).item(), WithinAbs(0.09, 1e-12));
}

TEST_CASE("ms loss aligns student shapes to the teacher") {
  ParameterSet params;
  Rng rng(8);
  const std::vector<StageDims> s{{3, 8, 8}, {4, 4, 4}}, t{{5, 4, 4}, {6, 2, 2}};
  const auto aligners = make_stage_aligners(params, s, t, rng, false);
  const Tensor a = testing::uniform({2, 3, 8, 8}, rng), b = testing::uniform({2, 4, 4, 4}, rng);
  CHECK(align_student(aligners[0], a).shape() == Shape{2, 5, 4, 4});
  CHECK(align_student(aligners[1], b).shape() == Shape{2, 6, 2, 2});

  const std::vector<std::size_t> both{1, 2};
  const StageOutputs student = features({a, b});
  REQUIRE_THROWS_MATCHES(ms_loss(student, features({Tensor({2, 5, 4, 4}), Tensor({2, 6, 3, 3})}), aligners, both),
                         DimensionError, Catch::Matchers::MessageMatches(ContainsSubstring("stage 2")));
  const std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(ms_loss(student, features({Tensor({2, 5, 4, 4}), Tensor({2, 6, 2, 2})}), aligners, bad),
                  ConfigError);
}

TEST_CASE("cross entropy oracles") {
  const Tensor uniform_logits({3, 7}, 0.4);
  const std::vector<std::size_t> labels{0, 3, 6};
  CHECK_THAT(cross_entropy(uniform_logits, labels).item(), WithinAbs(std::log(7.0), 1e-12));

  Tensor margin({2, 3}, 0.0);
  margin.mutable_data()[1] = 800.0;
  margin.mutable_data()[5] = 800.0;
  const std::vector<std::size_t> hot{1, 2};
  CHECK_THAT(cross_entropy(margin, hot).item(), WithinAbs(0.0, 1e-12));

  Rng rng(9);
  const Tensor z = testing::uniform({5, 4}, rng, -6, 6);
  const std::vector<std::size_t> y{0, 3, 2, 1, 3};
  long double total = 0.0L;
  for (std::size_t i = 0; i < 5; ++i) {
    long double mx = z[i * 4];
    for (std::size_t j = 1; j < 4; ++j) mx = std::max<long double>(mx, z[i * 4 + j]);
    long double s = 0.0L;
    for (std::size_t j = 0; j < 4; ++j) s += std::exp(static_cast<long double>(z[i * 4 + j]) - mx);
    total += -(static_cast<long double>(z[i * 4 + y[i]]) - mx - std::log(s));
  }
  CHECK_THAT(cross_entropy(z, y).item(), WithinAbs(static_cast<double>(total / 5.0L), 1e-9));

  const std::vector<std::size_t> out_of_range{0, 4, 1, 1, 1};
  CHECK_THROWS_AS(cross_entropy(z, out_of_range), ContractError);
}

TEST_CASE("final loss is the weighted sum") {
  const Tensor logits({2, 3}, {0.1, 0.5, -0.2, 1.0, 0.0, 0.3});
  const std::vector<std::size_t> labels{1, 0};
  const double ce = cross_entropy(logits, labels).item();
  const Tensor ms = Tensor::scalar(0.25);
  DistillConfig cfg;
  cfg.lambda1 = 1.0;
  cfg.lambda2 = 1.0;
  CHECK_THAT(final_loss(logits, labels, ms, cfg).item(), WithinAbs(ce + 0.25, 1e-15));
  cfg.lambda2 = 0.0;
  CHECK(final_loss(logits, labels, ms, cfg).item() == ce);
  cfg.lambda1 = 0.0;
  cfg.lambda2 = 2.0;
  CHECK(final_loss(logits, labels, ms, cfg).item() == 0.5);
}

TEST_CASE("distill config validation") {
  DistillConfig cfg;
  cfg.validate();
  cfg.lambda1 = cfg.lambda2 = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  DistillConfig neg;
  neg.lambda2 = -1.0;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
  DistillConfig stages;
  stages.stage_set = {0, 2};
  CHECK_THROWS_AS(stages.validate(), ConfigError);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(10);
  FitLossConfig cfg;
  cfg.ssim_window = 5;
  const Tensor target = testing::uniform({6, 7, 3}, rng, 0.0, 1.0);
  CHECK(grad_check([&](std::span<const Tensor> v) { return fit_loss(v[0], target, cfg); },
                   std::vector<Tensor>{testing::uniform({6, 7, 3}, rng, 0.0, 1.0)}) <= 1e-4);
  const std::vector<std::size_t> labels{2, 0, 1};
  CHECK(grad_check([&](std::span<const Tensor> v) { return cross_entropy(v[0], labels); },
                   std::vector<Tensor>{testing::uniform({3, 3}, rng)}) <= 1e-4);
}
