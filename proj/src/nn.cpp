#include "inrn/nn.hpp"

#include <cmath>
#include <numbers>

#include "inrn/error.hpp"

namespace inrn {

Parameter& ParameterSet::add(std::string name, Tensor init) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  params_.push_back(std::make_unique<Parameter>(Parameter{std::move(name), init.detach()}));
  return *params_.back();
}

Parameter* ParameterSet::find(std::string_view name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterSet::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void copy_parameters(const ParameterSet& from, ParameterSet& to) {
  if (from.size() != to.size()) {
    throw ConfigError("copy_parameters: " + std::to_string(from.size()) + " vs " + std::to_string(to.size()) +
                      " parameters");
  }
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].name != to[i].name || from[i].value.shape() != to[i].value.shape()) {
      throw ConfigError("copy_parameters: mismatch at '" + from[i].name + "' " +
                        shape_string(from[i].value.shape()) + " vs '" + to[i].name + "' " +
                        shape_string(to[i].value.shape()));
    }
    to[i].value = from[i].value.detach();
  }
}

Tensor use(const Parameter& p) {
  if (Tape* tape = active_tape()) return tape->watch_keyed(&p, p.value);
  return p.value;
}

Tensor gradient(const Tape& tape, const Parameter& p) { return tape.gradient_keyed(&p, p.value.shape()); }

Tensor init_params(const Shape& shape, InitScheme scheme, Rng& rng, std::size_t fan_in) {
  if (fan_in == 0) {
    fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  }
  const double f = static_cast<double>(fan_in);
  double bound = 0.0;
  switch (scheme) {
    case InitScheme::kaiming_uniform: bound = std::sqrt(6.0 / f); break;
    case InitScheme::siren_first: bound = 1.0 / f; break;
    case InitScheme::siren_hidden: bound = std::sqrt(6.0 / f) / kSirenOmega; break;
    case InitScheme::bias_uniform: bound = 1.0 / std::sqrt(f); break;
    case InitScheme::zeros: return Tensor(shape, 0.0);
  }
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor activate(Activation a, const Tensor& x) {
  switch (a) {
    case Activation::gelu: return gelu(x);
    case Activation::relu: return relu(x);
    case Activation::sine: return sine(mul_scalar(x, kSirenOmega));
  }
  throw ConfigError("unknown activation");
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
    case Activation::sine: return "sine";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "gelu") return Activation::gelu;
  if (name == "relu") return Activation::relu;
  if (name == "sine") return Activation::sine;
  throw ConfigError("unknown activation '" + std::string(name) + "' (expected gelu, relu or sine)");
}

AffineLayer make_affine(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                        InitScheme weight_init, InitScheme bias_init, Rng& rng) {
  if (in == 0 || out == 0) throw ConfigError("affine layer '" + name + "' needs positive dimensions");
  AffineLayer layer;
  layer.in = in;
  layer.out = out;
  layer.weight = &params.add(name + ".weight", init_params({out, in}, weight_init, rng, in));
  layer.bias = &params.add(name + ".bias", init_params({out}, bias_init, rng, in));
  return layer;
}

Tensor affine_forward(const AffineLayer& layer, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != layer.in) {
    throw DimensionError("affine: input " + shape_string(x.shape()) + " does not match in=" +
                         std::to_string(layer.in));
  }
  return add_rowwise(matmul(x, transpose2d(use(*layer.weight))), use(*layer.bias));
}

Tensor affine_pointwise(const AffineLayer& layer, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != layer.in) {
    throw DimensionError("affine: input " + shape_string(x.shape()) + " does not have " +
                         std::to_string(layer.in) + " channels");
  }
  const Tensor w = reshape(use(*layer.weight), {layer.out, layer.in, 1, 1});
  const Tensor b = use(*layer.bias);
  return conv2d(x, w, &b, Conv2dOptions{});
}

ConvLayer make_conv(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                    std::size_t kernel, std::size_t stride, Rng& rng) {
  if (in == 0 || out == 0 || kernel == 0 || stride == 0) {
    throw ConfigError("conv layer '" + name + "' needs positive dimensions");
  }
  ConvLayer layer{nullptr, nullptr, in, out, kernel, stride};
  const std::size_t fan_in = in * kernel * kernel;
  layer.weight = &params.add(name + ".weight",
                             init_params({out, in, kernel, kernel}, InitScheme::kaiming_uniform, rng, fan_in));
  layer.bias = &params.add(name + ".bias", init_params({out}, InitScheme::zeros, rng, fan_in));
  return layer;
}

Tensor conv_forward(const ConvLayer& layer, const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("conv: expected [N,C,H,W], got " + shape_string(x.shape()));
  const auto opt = Conv2dOptions::same(x.dim(2), x.dim(3), layer.kernel, layer.kernel, layer.stride);
  const Tensor b = use(*layer.bias);
  return conv2d(x, use(*layer.weight), &b, opt);
}

Tensor fourier_embed(const FourierEmbedConfig& cfg, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) == 0) {
    throw DimensionError("fourier_embed: expected [n,d] with d >= 1, got " + shape_string(x.shape()));
  }
  std::vector<Tensor> parts;
  if (cfg.include_input) parts.push_back(x);
  double scale = std::numbers::pi;
  for (std::size_t j = 0; j < cfg.num_frequencies; ++j) {
    const Tensor scaled = mul_scalar(x, scale);
    parts.push_back(sine(scaled));
    parts.push_back(cosine(scaled));
    scale *= cfg.base;
  }
  if (parts.empty()) return Tensor(Shape{x.dim(0), 0});
  if (parts.size() == 1) return parts.front();
  return concat(parts, 1);
}

Tensor upsample(const UpsampleSpec& spec, const Tensor& x) {
  if (spec.factor == 0) throw ConfigError("upsample factor must be >= 1");
  if (spec.mode == UpsampleSpec::Mode::pixel_shuffle) return pixel_shuffle(x, spec.factor);
  if (x.rank() != 4) throw DimensionError("upsample: expected [N,C,H,W], got " + shape_string(x.shape()));
  return resize_nearest(x, x.dim(2) * spec.factor, x.dim(3) * spec.factor);
}

double grad_check_parameters(const std::function<Tensor()>& loss, ParameterSet& params, double eps,
                             std::size_t max_coords_per_param) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor y = loss();
    if (y.size() != 1) throw ContractError("grad_check_parameters: loss must be a scalar");
    if (!std::isfinite(y[0])) throw NumericError("grad_check_parameters: non-finite loss");
    if (y.tracked()) tape.backward(y);
    for (std::size_t i = 0; i < params.size(); ++i) {
      analytic.push_back(y.tracked() ? gradient(tape, params[i]) : Tensor(params[i].value.shape(), 0.0));
    }
  }
  auto value = [&](const std::string& where) {
    const Tensor y = loss();
    if (!std::isfinite(y[0])) throw NumericError("grad_check_parameters: non-finite loss at " + where);
    return y[0];
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    const std::size_t n = p.value.size();
    const std::size_t step =
        (max_coords_per_param == 0 || n <= max_coords_per_param) ? 1 : (n + max_coords_per_param - 1) / max_coords_per_param;
    for (std::size_t j = 0; j < n; j += step) {
      const double base = p.value[j];
      const std::string where = p.name + "[" + std::to_string(j) + "]";
      p.value.mutable_data()[j] = base + eps;
      const double up = value(where);
      p.value.mutable_data()[j] = base - eps;
      const double down = value(where);
      p.value.mutable_data()[j] = base;
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[i][j] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace inrn
