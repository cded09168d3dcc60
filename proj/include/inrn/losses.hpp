#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "inrn/data.hpp"
#include "inrn/inre.hpp"

namespace inrn {

/// Weighting and SSIM window parameters of the fitting objective
///   alpha * (1/N) * ||pred - target||_2 + (1 - alpha) * (1 - SSIM(pred, target))
/// with N the pixel count.
struct FitLossConfig {
  enum class L2Mode {
    norm_over_n,  // ||d||_2 / N, as written in the objective
    mse,          // mean(d^2), the conventional alternative
  };

  double alpha = 0.7;
  std::size_t ssim_window = 11;
  double ssim_sigma = 1.5;
  double dynamic_range = 1.0;
  double k1 = 0.01;
  double k2 = 0.03;
  L2Mode l2_mode = L2Mode::norm_over_n;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
  /// Throws ConfigError unless alpha in [0,1] and the window is odd and >= 3.
  void validate() const;
};

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(L^2 / MSE); kInfinitePsnr when the inputs are identical.
double psnr(const Tensor& pred, const Tensor& target, double dynamic_range = 1.0);
double psnr(const Image& pred, const Image& target, double dynamic_range = 1.0);

/// Normalized separable Gaussian window, [size, size].
Tensor gaussian_window(std::size_t size, double sigma);

/// Differentiable SSIM: Gaussian-weighted statistics over every valid
/// (unpadded) window, averaged over windows and channels. Accepts [H,W],
/// [H,W,C] or [T,H,W,C].
Tensor ssim(const Tensor& pred, const Tensor& target, const FitLossConfig& cfg = {});
double ssim(const Image& pred, const Image& target, const FitLossConfig& cfg = {});

/// The L2 part of the fitting objective in the configured mode.
Tensor l2_term(const Tensor& pred, const Tensor& target, const FitLossConfig& cfg);
Tensor fit_loss(const Tensor& pred, const Tensor& target, const FitLossConfig& cfg);

/// Spatial/channel shape of one stage's features.
struct StageDims {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

StageDims stage_dims(const Tensor& features);

/// Maps student stage features onto the teacher's shape: 1x1 channel
/// projection, then nearest resize when the spatial size differs. The
/// optional teacher-side projection is off by default (identity).
struct StageAligner {
  AffineLayer projection;
  StageDims target;
  std::optional<AffineLayer> teacher_projection;
};

std::vector<StageAligner> make_stage_aligners(ParameterSet& params, std::span<const StageDims> student,
                                              std::span<const StageDims> teacher, Rng& rng,
                                              bool teacher_side = false);
Tensor align_student(const StageAligner& aligner, const Tensor& features);
Tensor align_teacher(const StageAligner& aligner, const Tensor& features);

/// Sum over the 1-based stages in `stage_set` of
/// MSE(align_student(student_i), align_teacher(teacher_i)); teacher features
/// are detached.
Tensor ms_loss(const StageOutputs& student, const StageOutputs& teacher, std::span<const StageAligner> aligners,
               std::span<const std::size_t> stage_set);

/// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

struct DistillConfig {
  double lambda1 = 1.0;
  double lambda2 = 0.5;
  std::vector<std::size_t> stage_set = {1, 2};
  bool teacher_transform = false;

  /// Throws ConfigError on negative weights, lambda1 + lambda2 == 0, or
  /// stage indices outside 1..4.
  void validate() const;
};

/// lambda1 * CE + lambda2 * ms.
Tensor final_loss(const Tensor& logits, std::span<const std::size_t> labels, const Tensor& ms,
                  const DistillConfig& cfg);

}  // namespace inrn
