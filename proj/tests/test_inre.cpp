#include <catch_amalgamated.hpp>

#include "inrn/data.hpp"
#include "inrn/error.hpp"
#include "inrn/inre.hpp"
#include "support.hpp"

using namespace inrn;
using Catch::Matchers::ContainsSubstring;

namespace {

std::size_t block_params(std::size_t c, double ratio, std::size_t kernel = 3) {
  ParameterSet params;
  Rng rng(0);
  INReBlockConfig cfg;
  cfg.in_channels = c;
  cfg.compression_ratio = ratio;
  cfg.conv_kernel = kernel;
  (void)build_inre_block(cfg, params, "b", rng);
  return param_count(params);
}

NetworkSpec small_generator() {
  NetworkSpec s;
  s.out_height = s.out_width = 16;
  s.base_height = s.base_width = 4;
  s.upsample_factors = {2, 2};
  s.channels = {8, 8, 4};
  s.embed.num_frequencies = 3;
  s.seed = 3;
  return s;
}

NetworkSpec classifier(const std::vector<std::size_t>& blocks, std::size_t width = 4) {
  NetworkSpec s;
  s.kind = NetworkKind::multi_stage_classifier;
  s.in_channels = 1;
  s.num_classes = 10;
  s.stages = make_stages(blocks, width);
  return s;
}

void zero_all(ParameterSet& params) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = Tensor::zeros(params[i].value.shape());
}

}  // namespace

TEST_CASE("compression-expansion block parameter count by enumeration") {
  const std::size_t expected = (64 * 32 + 32) + (32 * 32 * 9 + 32) + (32 * 64 + 64);
  CHECK(block_params(64, 2.0) == expected);

  INReBlockConfig wide;
  wide.in_channels = 16;
  wide.compression_ratio = 0.5;
  CHECK(wide.compressed_channels() == 32);
  CHECK(block_params(16, 0.5) == (16 * 32 + 32) + (32 * 32 * 9 + 32) + (32 * 16 + 16));
}

TEST_CASE("compression-expansion is smaller than a flat block") {
  for (std::size_t c : {16u, 32u, 64u})
    for (double r : {2.0, 4.0}) {
      INFO("C=" << c << " r=" << r);
      // flat: constant width c through both affines and the conv
      CHECK(block_params(c, 1.0) == (c * c + c) + (c * c * 9 + c) + (c * c + c));
      CHECK(block_params(c, r) < block_params(c, 1.0));
    }
}

TEST_CASE("block configuration errors") {
  ParameterSet params;
  Rng rng(1);
  INReBlockConfig cfg;
  cfg.in_channels = 2;
  cfg.compression_ratio = 8.0;
  CHECK_THROWS_AS(build_inre_block(cfg, params, "x", rng), ConfigError);
  cfg.compression_ratio = 1.0;
  cfg.conv_kernel = 4;
  CHECK_THROWS_AS(build_inre_block(cfg, params, "y", rng), ConfigError);
}

TEST_CASE("block forward shapes") {
  ParameterSet params;
  Rng rng(2);
  INReBlockConfig cfg;
  cfg.in_channels = 6;
  const INReBlock same = build_inre_block(cfg, params, "s", rng);
  CHECK(inre_forward(same, testing::uniform({2, 6, 8, 8}, rng)).shape() == Shape{2, 6, 8, 8});
  cfg.conv_stride = 2;
  cfg.expand_channels = 10;
  const INReBlock down = build_inre_block(cfg, params, "d", rng);
  CHECK(inre_forward(down, testing::uniform({1, 6, 8, 8}, rng)).shape() == Shape{1, 10, 4, 4});
  CHECK_THROWS_AS(inre_forward(down, Tensor({1, 5, 8, 8})), DimensionError);
}

TEST_CASE("zeroed block outputs zeros") {
  ParameterSet params;
  Rng rng(3);
  INReBlockConfig cfg;
  cfg.in_channels = 4;
  const INReBlock b = build_inre_block(cfg, params, "z", rng);
  zero_all(params);
  for (double v : inre_forward(b, testing::uniform({1, 4, 5, 5}, rng)).values()) CHECK(v == 0.0);
}

TEST_CASE("block gradient matches finite differences") {
  ParameterSet params;
  Rng rng(4);
  INReBlockConfig cfg;
  cfg.in_channels = 4;
  cfg.conv_stride = 2;
  const INReBlock b = build_inre_block(cfg, params, "g", rng);
  const Tensor x = testing::uniform({1, 4, 6, 6}, rng);
  CHECK(grad_check_parameters([&] { return mean(inre_forward(b, x) * inre_forward(b, x)); }, params) <= 1e-4);
}

TEST_CASE("single-stage generator output contract") {
  auto net = build_single_stage(small_generator());
  CHECK(net->render(time_coords(1)).shape() == Shape{1, 16, 16, 3});
  CHECK(net->render(time_coords(3)).shape() == Shape{3, 16, 16, 3});

  NetworkSpec bad = small_generator();
  bad.out_height = 20;
  REQUIRE_THROWS_MATCHES(build_single_stage(bad), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("achievable")));
}

TEST_CASE("default generator reaches 64x64 from an 8x8 base") {
  const NetworkSpec s;
  CHECK(s.base_height * s.upsample_factors[0] * s.upsample_factors[1] * s.upsample_factors[2] == 64);
  CHECK(build_generator(s)->render(time_coords(1)).shape() == Shape{1, 64, 64, 3});
}

TEST_CASE("same seed gives identical parameters and outputs") {
  auto a = build_single_stage(small_generator());
  auto b = build_single_stage(small_generator());
  for (std::size_t i = 0; i < a->parameters().size(); ++i) {
    CHECK(a->parameters()[i].value.values() == b->parameters()[i].value.values());
  }
  CHECK(a->render(time_coords(2)).values() == b->render(time_coords(2)).values());
  NetworkSpec other = small_generator();
  other.seed = 4;
  CHECK(build_single_stage(other)->parameters()[0].value.values() != a->parameters()[0].value.values());
}

TEST_CASE("classifier stage configurations") {
  Rng rng(5);
  for (const auto& blocks : std::vector<std::vector<std::size_t>>{{2, 3, 5, 2}, {3, 3, 3, 3}, {1, 1, 2, 1}}) {
    auto net = build_multi_stage(classifier(blocks));
    const auto out = net->forward(testing::uniform({2, 1, 32, 32}, rng, 0.0, 1.0));
    CHECK(out.logits.shape() == Shape{2, 10});
    REQUIRE(out.stages.features.size() == 4);
    std::size_t h = 32;
    for (std::size_t i = 0; i < 4; ++i) {
      if (i > 0) h = (h + 1) / 2;
      CHECK(out.stages.features[i].dim(2) == h);
      CHECK(out.stages.features[i].dim(1) == 4u << i);
    }
  }
}

TEST_CASE("classifier needs four stages and two classes") {
  NetworkSpec s = classifier({1, 1, 1, 1});
  s.stages.pop_back();
  CHECK_THROWS_AS(build_multi_stage(s), ConfigError);
  NetworkSpec c = classifier({1, 1, 1, 1});
  c.num_classes = 1;
  CHECK_THROWS_AS(build_multi_stage(c), ConfigError);
}

TEST_CASE("only-MLP parameter count closed form") {
  NetworkSpec s;
  s.kind = NetworkKind::baseline_only_mlp;
  s.mlp_width = 64;
  s.mlp_depth = 4;
  const std::size_t d = 3 * (1 + 2 * s.embed.num_frequencies);
  const std::size_t expected = (d * 64 + 64) + 3 * (64 * 64 + 64) + (64 * 3 + 3);
  auto net = build_generator(s);
  CHECK(param_count(*net) == expected);
  CHECK(net->render(time_coords(1)).shape() == Shape{1, 64, 64, 3});
}

TEST_CASE("baselines match the generator head and reject tiny budgets") {
  for (NetworkKind kind :
       {NetworkKind::baseline_only_mlp, NetworkKind::baseline_front_conv, NetworkKind::baseline_post_conv}) {
    NetworkSpec s = small_generator();
    s.kind = kind;
    s.mlp_width = 8;
    s.conv_width = 4;
    CHECK(build_generator(s)->render(time_coords(1)).shape() == Shape{1, 16, 16, 3});
    s.mlp_width = 1;
    s.conv_width = 1;
    s.mlp_depth = 1;
    s.conv_layers = 1;
    s.embed.num_frequencies = 0;
    CHECK_THROWS_AS(build_generator(s), ConfigError);
  }
}

TEST_CASE("param_count of trivial sets") {
  ParameterSet empty;
  CHECK(param_count(empty) == 0);
  ParameterSet one;
  Rng rng(6);
  (void)make_affine(one, "fc", 2, 3, InitScheme::kaiming_uniform, InitScheme::zeros, rng);
  CHECK(param_count(one) == 9);
}

TEST_CASE("full networks pass gradient checks on miniature inputs") {
  Rng rng(7);
  for (NetworkKind kind : {NetworkKind::single_stage_generator, NetworkKind::baseline_only_mlp,
                           NetworkKind::baseline_front_conv, NetworkKind::baseline_post_conv}) {
    NetworkSpec s;
    s.kind = kind;
    s.out_height = s.out_width = 8;
    s.base_height = s.base_width = 2;
    s.upsample_factors = {2, 2};
    s.channels = {4, 4, 4};
    s.embed.num_frequencies = 1;
    s.mlp_width = 6;
    s.mlp_depth = 2;
    s.conv_width = 4;
    s.conv_layers = 1;
    auto net = build_generator(s);
    const Tensor target = testing::uniform({1, 8, 8, 3}, rng, 0.0, 1.0);
    auto loss = [&] {
      const Tensor d = net->render(time_coords(1)) - target;
      return mean(d * d);
    };
    INFO(kind_name(kind));
    CHECK(grad_check_parameters(loss, net->parameters(), 1e-5, 8) <= 1e-4);
  }
}
