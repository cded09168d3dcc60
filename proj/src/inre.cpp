#include "inrn/inre.hpp"

#include <cmath>
#include <sstream>

#include "inrn/data.hpp"
#include "inrn/error.hpp"

namespace inrn {

std::size_t INReBlockConfig::compressed_channels() const {
  if (!(compression_ratio > 0.0)) throw ConfigError("compression_ratio must be positive");
  const double c = std::round(static_cast<double>(in_channels) / compression_ratio);
  if (c < 1.0) {
    throw ConfigError("compression ratio " + std::to_string(compression_ratio) + " leaves no channels of " +
                      std::to_string(in_channels));
  }
  return static_cast<std::size_t>(c);
}

INReBlock build_inre_block(const INReBlockConfig& cfg, ParameterSet& params, const std::string& name, Rng& rng) {
  if (cfg.in_channels == 0) throw ConfigError(name + ": in_channels must be positive");
  if (cfg.conv_kernel % 2 == 0) throw ConfigError(name + ": conv kernel must be odd");
  if (cfg.conv_stride == 0) throw ConfigError(name + ": conv stride must be >= 1");
  const std::size_t mid = cfg.compressed_channels();
  INReBlock block;
  block.cfg = cfg;
  block.compress = make_affine(params, name + ".compress", cfg.in_channels, mid, InitScheme::kaiming_uniform,
                               InitScheme::zeros, rng);
  block.conv = make_conv(params, name + ".conv", mid, mid, cfg.conv_kernel, cfg.conv_stride, rng);
  block.expand = make_affine(params, name + ".expand", mid, cfg.output_channels(), InitScheme::kaiming_uniform,
                             InitScheme::zeros, rng);
  return block;
}

Tensor inre_forward(const INReBlock& block, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != block.cfg.in_channels) {
    throw DimensionError("inre block expects " + std::to_string(block.cfg.in_channels) + " channels, got " +
                         shape_string(x.shape()));
  }
  Tensor h = activate(block.cfg.activation, affine_pointwise(block.compress, x));
  h = activate(block.cfg.activation, conv_forward(block.conv, h));
  h = affine_pointwise(block.expand, h);
  if (block.cfg.residual && h.shape() == x.shape()) h = add(h, x);
  return h;
}

const char* kind_name(NetworkKind kind) {
  switch (kind) {
    case NetworkKind::single_stage_generator: return "single_stage_generator";
    case NetworkKind::multi_stage_classifier: return "multi_stage_classifier";
    case NetworkKind::baseline_only_mlp: return "baseline_only_mlp";
    case NetworkKind::baseline_front_conv: return "baseline_front_conv";
    case NetworkKind::baseline_post_conv: return "baseline_post_conv";
  }
  return "?";
}

NetworkKind parse_kind(std::string_view name) {
  for (NetworkKind k : {NetworkKind::single_stage_generator, NetworkKind::multi_stage_classifier,
                        NetworkKind::baseline_only_mlp, NetworkKind::baseline_front_conv,
                        NetworkKind::baseline_post_conv}) {
    if (name == kind_name(k)) return k;
  }
  throw ConfigError("unknown network kind '" + std::string(name) + "'");
}

std::vector<StageSpec> make_stages(const std::vector<std::size_t>& blocks_per_stage, std::size_t base_width) {
  std::vector<StageSpec> stages;
  std::size_t width = base_width;
  for (std::size_t i = 0; i < blocks_per_stage.size(); ++i) {
    stages.push_back(StageSpec{blocks_per_stage[i], width, i > 0});
    width *= 2;
  }
  return stages;
}

std::size_t param_count(const ParameterSet& params) { return params.element_count(); }
std::size_t param_count(const Network& network) { return network.parameters().element_count(); }

namespace {

// [T, C, H, W] -> [T, H, W, C]
Tensor to_channel_last(const Tensor& x) { return permute(x, {0, 2, 3, 1}); }

void check_image_head(const NetworkSpec& spec) {
  if (spec.out_height == 0 || spec.out_width == 0 || spec.out_channels == 0) {
    throw ConfigError("output image dimensions must be positive");
  }
}

class SingleStageGenerator final : public ImageGenerator {
 public:
  explicit SingleStageGenerator(NetworkSpec spec) : ImageGenerator(std::move(spec)) {
    check_image_head(spec_);
    const auto& f = spec_.upsample_factors;
    if (spec_.channels.size() != f.size() + 1) {
      throw ConfigError("generator needs " + std::to_string(f.size() + 1) + " channel widths for " +
                        std::to_string(f.size()) + " upsample factors, got " +
                        std::to_string(spec_.channels.size()));
    }
    std::size_t scale = 1;
    std::ostringstream reachable;
    reachable << spec_.base_height << 'x' << spec_.base_width;
    for (std::size_t r : f) {
      if (r == 0) throw ConfigError("upsample factors must be >= 1");
      scale *= r;
      reachable << ", " << spec_.base_height * scale << 'x' << spec_.base_width * scale;
    }
    if (spec_.base_height * scale != spec_.out_height || spec_.base_width * scale != spec_.out_width) {
      throw ConfigError("output " + std::to_string(spec_.out_height) + "x" + std::to_string(spec_.out_width) +
                        " is not reachable from base " + std::to_string(spec_.base_height) + "x" +
                        std::to_string(spec_.base_width) + " with these factors; achievable sizes: " +
                        reachable.str());
    }
    Rng rng(spec_.seed);
    const std::size_t embed_dim = spec_.embed.output_dim(1);
    bootstrap_ = make_affine(params_, "bootstrap", embed_dim,
                             spec_.channels[0] * spec_.base_height * spec_.base_width, InitScheme::kaiming_uniform,
                             InitScheme::zeros, rng);
    for (std::size_t i = 0; i < f.size(); ++i) {
      INReBlockConfig cfg;
      cfg.in_channels = spec_.channels[i];
      cfg.compression_ratio = spec_.compression_ratio;
      cfg.expand_channels = spec_.channels[i + 1] * f[i] * f[i];
      cfg.conv_kernel = spec_.conv_kernel;
      cfg.activation = spec_.activation;
      blocks_.push_back(build_inre_block(cfg, params_, "level" + std::to_string(i), rng));
    }
    head_ = make_conv(params_, "head", spec_.channels.back(), spec_.out_channels, spec_.conv_kernel, 1, rng);
  }

  Tensor render(const Tensor& times) const override {
    if (times.rank() != 2 || times.dim(1) != 1) {
      throw DimensionError("generator expects times [T,1], got " + shape_string(times.shape()));
    }
    const std::size_t frames = times.dim(0);
    Tensor h = activate(spec_.activation, affine_forward(bootstrap_, fourier_embed(spec_.embed, times)));
    h = reshape(h, {frames, spec_.channels[0], spec_.base_height, spec_.base_width});
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      h = inre_forward(blocks_[i], h);
      h = activate(spec_.activation, pixel_shuffle(h, spec_.upsample_factors[i]));
    }
    return to_channel_last(conv_forward(head_, h));
  }

 private:
  AffineLayer bootstrap_;
  std::vector<INReBlock> blocks_;
  ConvLayer head_;
};

// Shared input handling for the coordinate-based baselines: every pixel of
// every frame becomes one (row, column, time) sample.
class CoordinateGenerator : public ImageGenerator {
 protected:
  explicit CoordinateGenerator(NetworkSpec spec) : ImageGenerator(std::move(spec)) {
    check_image_head(spec_);
    grid_ = coord_grid(spec_.out_height, spec_.out_width);
  }

  std::size_t embed_dim() const { return spec_.embed.output_dim(3); }

  // [T*H*W, embed_dim]
  Tensor embedded_inputs(const Tensor& times) const {
    if (times.rank() != 2 || times.dim(1) != 1) {
      throw DimensionError("generator expects times [T,1], got " + shape_string(times.shape()));
    }
    const std::size_t frames = times.dim(0), pixels = grid_.dim(0);
    std::vector<Tensor> per_frame;
    for (std::size_t t = 0; t < frames; ++t) {
      Tensor coords(Shape{pixels, 3});
      auto c = coords.mutable_data();
      for (std::size_t p = 0; p < pixels; ++p) {
        c[p * 3] = grid_[p * 2];
        c[p * 3 + 1] = grid_[p * 2 + 1];
        c[p * 3 + 2] = times[t];
      }
      per_frame.push_back(std::move(coords));
    }
    const Tensor all = frames == 1 ? per_frame.front() : concat(per_frame, 0);
    return fourier_embed(spec_.embed, all);
  }

  std::size_t frames_of(const Tensor& times) const { return times.dim(0); }

  Tensor grid_;
};

class OnlyMlp final : public CoordinateGenerator {
 public:
  explicit OnlyMlp(NetworkSpec spec) : CoordinateGenerator(std::move(spec)) {
    if (spec_.mlp_depth == 0) throw ConfigError("only_mlp needs at least one hidden layer");
    Rng rng(spec_.seed);
    std::size_t in = embed_dim();
    for (std::size_t i = 0; i < spec_.mlp_depth; ++i) {
      layers_.push_back(make_affine(params_, "hidden" + std::to_string(i), in, spec_.mlp_width,
                                    i == 0 ? InitScheme::siren_first : InitScheme::siren_hidden,
                                    InitScheme::bias_uniform, rng));
      in = spec_.mlp_width;
    }
    out_ = make_affine(params_, "out", in, spec_.out_channels, InitScheme::siren_hidden, InitScheme::bias_uniform,
                       rng);
  }

  Tensor render(const Tensor& times) const override {
    Tensor h = embedded_inputs(times);
    for (const auto& layer : layers_) h = activate(Activation::sine, affine_forward(layer, h));
    h = affine_forward(out_, h);
    return reshape(h, {frames_of(times), spec_.out_height, spec_.out_width, spec_.out_channels});
  }

 private:
  std::vector<AffineLayer> layers_;
  AffineLayer out_;
};

// Convolutions over the embedded coordinate grid, either before (front) or
// after (post) a position-wise MLP.
class ConvMlp final : public CoordinateGenerator {
 public:
  ConvMlp(NetworkSpec spec, bool conv_first) : CoordinateGenerator(std::move(spec)), conv_first_(conv_first) {
    if (spec_.conv_layers == 0 || spec_.mlp_depth == 0) {
      throw ConfigError("conv+mlp baselines need conv_layers >= 1 and mlp_depth >= 1");
    }
    Rng rng(spec_.seed);
    std::size_t width = embed_dim();
    auto add_convs = [&](std::size_t count, std::size_t final_width) {
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t out = i + 1 == count ? final_width : spec_.conv_width;
        convs_.push_back(make_conv(params_, "conv" + std::to_string(convs_.size()), width, out, spec_.conv_kernel,
                                   1, rng));
        width = out;
      }
    };
    auto add_mlp = [&](std::size_t count, std::size_t final_width) {
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t out = i + 1 == count ? final_width : spec_.mlp_width;
        mlp_.push_back(make_affine(params_, "mlp" + std::to_string(mlp_.size()), width, out,
                                   InitScheme::kaiming_uniform, InitScheme::zeros, rng));
        width = out;
      }
    };
    if (conv_first_) {
      add_convs(spec_.conv_layers, spec_.conv_width);
      add_mlp(spec_.mlp_depth + 1, spec_.out_channels);
    } else {
      add_mlp(spec_.mlp_depth, spec_.mlp_width);
      add_convs(spec_.conv_layers, spec_.out_channels);
    }
  }

  Tensor render(const Tensor& times) const override {
    const std::size_t frames = frames_of(times);
    const std::size_t h = spec_.out_height, w = spec_.out_width;
    Tensor x = embedded_inputs(times);
    x = permute(reshape(x, {frames, h, w, x.dim(1)}), {0, 3, 1, 2});
    auto run_convs = [&](bool last_is_output) {
      for (std::size_t i = 0; i < convs_.size(); ++i) {
        x = conv_forward(convs_[i], x);
        if (!(last_is_output && i + 1 == convs_.size())) x = activate(spec_.activation, x);
      }
    };
    auto run_mlp = [&](bool last_is_output) {
      for (std::size_t i = 0; i < mlp_.size(); ++i) {
        x = affine_pointwise(mlp_[i], x);
        if (!(last_is_output && i + 1 == mlp_.size())) x = activate(spec_.activation, x);
      }
    };
    if (conv_first_) {
      run_convs(false);
      run_mlp(true);
    } else {
      run_mlp(false);
      run_convs(true);
    }
    return to_channel_last(x);
  }

 private:
  bool conv_first_;
  std::vector<ConvLayer> convs_;
  std::vector<AffineLayer> mlp_;
};

}  // namespace

MultiStageClassifier::MultiStageClassifier(NetworkSpec spec) : Network(std::move(spec)) {
  if (spec_.stages.size() != 4) {
    throw ConfigError("multi-stage classifier needs exactly 4 stages, got " + std::to_string(spec_.stages.size()));
  }
  if (spec_.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (spec_.in_channels == 0) throw ConfigError("in_channels must be positive");
  Rng rng(spec_.seed);
  stem_ = make_conv(params_, "stem", spec_.in_channels, spec_.stages[0].channels, spec_.conv_kernel, 1, rng);
  std::size_t width = spec_.stages[0].channels;
  for (std::size_t s = 0; s < spec_.stages.size(); ++s) {
    const StageSpec& st = spec_.stages[s];
    if (st.num_blocks == 0 || st.channels == 0) throw ConfigError("stage " + std::to_string(s + 1) + " is empty");
    Stage stage;
    const std::string prefix = "stage" + std::to_string(s + 1);
    if (st.downsample || st.channels != width) {
      stage.has_entry = true;
      stage.entry = make_conv(params_, prefix + ".entry", width, st.channels, spec_.conv_kernel,
                              st.downsample ? 2 : 1, rng);
      width = st.channels;
    }
    for (std::size_t b = 0; b < st.num_blocks; ++b) {
      INReBlockConfig cfg;
      cfg.in_channels = width;
      cfg.compression_ratio = spec_.compression_ratio;
      cfg.expand_channels = width;
      cfg.conv_kernel = spec_.conv_kernel;
      cfg.activation = spec_.activation;
      cfg.residual = spec_.residual;
      stage.blocks.push_back(build_inre_block(cfg, params_, prefix + ".block" + std::to_string(b + 1), rng));
    }
    stages_.push_back(std::move(stage));
  }
  head_ = make_affine(params_, "classifier", width, spec_.num_classes, InitScheme::kaiming_uniform,
                      InitScheme::zeros, rng);
}

MultiStageClassifier::Output MultiStageClassifier::forward(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != spec_.in_channels) {
    throw DimensionError("classifier expects [N," + std::to_string(spec_.in_channels) + ",H,W], got " +
                         shape_string(images.shape()));
  }
  Output out;
  Tensor h = activate(spec_.activation, conv_forward(stem_, images));
  for (const Stage& stage : stages_) {
    if (stage.has_entry) h = activate(spec_.activation, conv_forward(stage.entry, h));
    for (const INReBlock& block : stage.blocks) h = inre_forward(block, h);
    out.stages.features.push_back(h);
  }
  out.logits = affine_forward(head_, global_avg_pool(h));
  return out;
}

std::unique_ptr<ImageGenerator> build_single_stage(const NetworkSpec& spec) {
  if (spec.kind != NetworkKind::single_stage_generator) {
    throw ConfigError(std::string("build_single_stage: spec kind is ") + kind_name(spec.kind));
  }
  return std::make_unique<SingleStageGenerator>(spec);
}

std::unique_ptr<MultiStageClassifier> build_multi_stage(const NetworkSpec& spec) {
  if (spec.kind != NetworkKind::multi_stage_classifier) {
    throw ConfigError(std::string("build_multi_stage: spec kind is ") + kind_name(spec.kind));
  }
  return std::make_unique<MultiStageClassifier>(spec);
}

std::unique_ptr<ImageGenerator> build_baseline(NetworkKind kind, const NetworkSpec& spec) {
  NetworkSpec s = spec;
  s.kind = kind;
  std::unique_ptr<ImageGenerator> net;
  switch (kind) {
    case NetworkKind::baseline_only_mlp: net = std::make_unique<OnlyMlp>(s); break;
    case NetworkKind::baseline_front_conv: net = std::make_unique<ConvMlp>(s, true); break;
    case NetworkKind::baseline_post_conv: net = std::make_unique<ConvMlp>(s, false); break;
    default: throw ConfigError(std::string("build_baseline: not a baseline kind: ") + kind_name(kind));
  }
  if (param_count(*net) < 100) {
    throw ConfigError("baseline budget of " + std::to_string(param_count(*net)) +
                      " parameters is below the minimum of 100");
  }
  return net;
}

std::unique_ptr<ImageGenerator> build_generator(const NetworkSpec& spec) {
  if (spec.kind == NetworkKind::single_stage_generator) return build_single_stage(spec);
  if (spec.kind == NetworkKind::multi_stage_classifier) {
    throw ConfigError("build_generator: multi_stage_classifier does not produce images");
  }
  return build_baseline(spec.kind, spec);
}

}  // namespace inrn
