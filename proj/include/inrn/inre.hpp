#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "inrn/nn.hpp"

namespace inrn {

/// Compression-expansion block: position-wise affine compress, activation,
/// spatial convolution, activation, position-wise affine expand.
struct INReBlockConfig {
  std::size_t in_channels = 16;
  /// Comp.Coef: compressed width = round(in / ratio). Below 1 widens.
  double compression_ratio = 2.0;
  /// 0 means "restore in_channels".
  std::size_t expand_channels = 0;
  std::size_t conv_kernel = 3;
  std::size_t conv_stride = 1;
  Activation activation = Activation::gelu;
  /// Adds the input back onto the output when shapes allow it.
  bool residual = false;

  std::size_t compressed_channels() const;
  std::size_t output_channels() const { return expand_channels ? expand_channels : in_channels; }
};

struct INReBlock {
  INReBlockConfig cfg;
  AffineLayer compress;
  ConvLayer conv;
  AffineLayer expand;
};

/// Throws ConfigError when the compressed width rounds below 1 or the kernel
/// is even.
INReBlock build_inre_block(const INReBlockConfig& cfg, ParameterSet& params, const std::string& name, Rng& rng);
Tensor inre_forward(const INReBlock& block, const Tensor& x);

enum class NetworkKind {
  single_stage_generator,
  multi_stage_classifier,
  baseline_only_mlp,
  baseline_front_conv,
  baseline_post_conv,
};

const char* kind_name(NetworkKind kind);
NetworkKind parse_kind(std::string_view name);

/// One stage of the multi-stage classifier. Its input width is the previous
/// stage's channels (the stem's for the first stage); its output is
/// `channels` wide, at half resolution when `downsample` is set.
struct StageSpec {
  std::size_t num_blocks = 1;
  std::size_t channels = 8;
  bool downsample = false;
};

/// Declarative description of every network this library builds. Fields a
/// kind does not use are ignored.
struct NetworkSpec {
  NetworkKind kind = NetworkKind::single_stage_generator;
  std::uint64_t seed = 0;
  FourierEmbedConfig embed;
  double compression_ratio = 2.0;
  Activation activation = Activation::gelu;
  std::size_t conv_kernel = 3;

  // Image head (generators and baselines).
  std::size_t out_height = 64;
  std::size_t out_width = 64;
  std::size_t out_channels = 3;

  // Single-stage generator: affine bootstrap to [channels[0], base_h, base_w],
  // then one (INRe block, pixel shuffle) pair per upsample factor; the block
  // before factor i expands to channels[i+1] * factor^2.
  std::size_t base_height = 8;
  std::size_t base_width = 8;
  std::vector<std::size_t> upsample_factors = {2, 2, 2};
  std::vector<std::size_t> channels = {32, 32, 16, 16};

  // Multi-stage classifier.
  std::size_t in_channels = 1;
  std::size_t num_classes = 10;
  std::vector<StageSpec> stages;
  bool residual = true;

  // Baselines.
  std::size_t mlp_width = 64;
  std::size_t mlp_depth = 4;
  std::size_t conv_width = 32;
  std::size_t conv_layers = 2;
};

/// Four stages with widths w, 2w, 4w, 8w; all but the first downsample.
std::vector<StageSpec> make_stages(const std::vector<std::size_t>& blocks_per_stage, std::size_t base_width);

/// Ordered per-stage feature maps [N, C_i, H_i, W_i].
struct StageOutputs {
  std::vector<Tensor> features;
};

class Network {
 public:
  virtual ~Network() = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const NetworkSpec& spec() const noexcept { return spec_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

 protected:
  explicit Network(NetworkSpec spec) : spec_(std::move(spec)) {}

  NetworkSpec spec_;
  ParameterSet params_;
};

std::size_t param_count(const ParameterSet& params);
std::size_t param_count(const Network& network);

/// A network whose output is an image (or a stack of frames).
class ImageGenerator : public Network {
 public:
  /// times [T,1] -> frames [T, H, W, C], channel-last.
  virtual Tensor render(const Tensor& times) const = 0;

  std::size_t height() const noexcept { return spec_.out_height; }
  std::size_t width() const noexcept { return spec_.out_width; }
  std::size_t channels() const noexcept { return spec_.out_channels; }

 protected:
  using Network::Network;
};

class MultiStageClassifier : public Network {
 public:
  struct Output {
    Tensor logits;  // [N, num_classes]
    StageOutputs stages;
  };

  explicit MultiStageClassifier(NetworkSpec spec);
  Output forward(const Tensor& images) const;

 private:
  struct Stage {
    bool has_entry = false;
    ConvLayer entry;
    std::vector<INReBlock> blocks;
  };
  ConvLayer stem_;
  std::vector<Stage> stages_;
  AffineLayer head_;
};

std::unique_ptr<ImageGenerator> build_single_stage(const NetworkSpec& spec);
std::unique_ptr<MultiStageClassifier> build_multi_stage(const NetworkSpec& spec);
std::unique_ptr<ImageGenerator> build_baseline(NetworkKind kind, const NetworkSpec& spec);
/// Dispatches on spec.kind for every image-producing kind.
std::unique_ptr<ImageGenerator> build_generator(const NetworkSpec& spec);

}  // namespace inrn
