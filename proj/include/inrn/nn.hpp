#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "inrn/autodiff.hpp"
#include "inrn/random.hpp"

namespace inrn {

/// A named trainable tensor. The value is never tracked itself; use() hands
/// out a tracked alias on the active tape.
struct Parameter {
  std::string name;
  Tensor value;
};

/// Owns a network's parameters with stable addresses, in registration order.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  /// Throws ConfigError on a duplicate name.
  Parameter& add(std::string name, Tensor init);

  std::size_t size() const noexcept { return params_.size(); }
  bool empty() const noexcept { return params_.empty(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  /// Sum of element counts of all parameters.
  std::size_t element_count() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

/// Copies values between parameter sets with identical names and shapes;
/// throws ConfigError on any mismatch.
void copy_parameters(const ParameterSet& from, ParameterSet& to);

/// Tracked alias of `p` on the active tape (one node per parameter per
/// tape), or its plain value when no tape is active.
Tensor use(const Parameter& p);
Tensor gradient(const Tape& tape, const Parameter& p);

enum class InitScheme { kaiming_uniform, siren_first, siren_hidden, bias_uniform, zeros };

inline constexpr double kSirenOmega = 30.0;

/// Samples an initial tensor. fan_in == 0 derives it from the shape
/// (product of all dims but the first).
///   kaiming_uniform  U(-sqrt(6/fan_in), +sqrt(6/fan_in))
///   siren_first      U(-1/fan_in, +1/fan_in)
///   siren_hidden     U(-sqrt(6/fan_in)/omega, +sqrt(6/fan_in)/omega), omega = 30
///   bias_uniform     U(-1/sqrt(fan_in), +1/sqrt(fan_in))
Tensor init_params(const Shape& shape, InitScheme scheme, Rng& rng, std::size_t fan_in = 0);

enum class Activation { gelu, relu, sine };

Tensor activate(Activation a, const Tensor& x);
const char* activation_name(Activation a);
Activation parse_activation(std::string_view name);

struct AffineLayer {
  Parameter* weight = nullptr;  // [out, in]
  Parameter* bias = nullptr;    // [out]
  std::size_t in = 0;
  std::size_t out = 0;
};

AffineLayer make_affine(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                        InitScheme weight_init, InitScheme bias_init, Rng& rng);

/// x[n,in] -> x W^T + b.
Tensor affine_forward(const AffineLayer& layer, const Tensor& x);
/// Same affine map applied at every spatial position of x[N,in,H,W].
Tensor affine_pointwise(const AffineLayer& layer, const Tensor& x);

struct ConvLayer {
  Parameter* weight = nullptr;  // [out, in, k, k]
  Parameter* bias = nullptr;    // [out]
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
};

ConvLayer make_conv(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
                    std::size_t kernel, std::size_t stride, Rng& rng);
/// Convolution with "same" padding: output extent ceil(n / stride).
Tensor conv_forward(const ConvLayer& layer, const Tensor& x);

struct FourierEmbedConfig {
  std::size_t num_frequencies = 10;
  double base = 2.0;
  bool include_input = true;

  std::size_t output_dim(std::size_t input_dim) const {
    return input_dim * ((include_input ? 1 : 0) + 2 * num_frequencies);
  }
};

/// x[n,d] -> [x?, sin(base^0 pi x), cos(base^0 pi x), ..., sin(base^(F-1) pi x), cos(...)].
Tensor fourier_embed(const FourierEmbedConfig& cfg, const Tensor& x);

struct UpsampleSpec {
  enum class Mode { pixel_shuffle, nearest };
  Mode mode = Mode::pixel_shuffle;
  std::size_t factor = 2;
};

Tensor upsample(const UpsampleSpec& spec, const Tensor& x);

/// Finite-difference check of d loss / d parameters. Perturbs parameter
/// values in place (restoring them) and returns the same relative error
/// measure as grad_check. When a parameter has more than
/// `max_coords_per_param` elements, an evenly strided subset is probed.
double grad_check_parameters(const std::function<Tensor()>& loss, ParameterSet& params, double eps = 1e-5,
                             std::size_t max_coords_per_param = 0);

}  // namespace inrn
