#include "inrn/losses.hpp"

#include <cmath>
#include <string>

#include "inrn/error.hpp"

namespace inrn {

void FitLossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0,1], got " + std::to_string(alpha));
  if (ssim_window < 3 || ssim_window % 2 == 0) {
    throw ConfigError("ssim_window must be odd and >= 3, got " + std::to_string(ssim_window));
  }
  if (!(ssim_sigma > 0.0)) throw ConfigError("ssim_sigma must be positive");
  if (!(dynamic_range > 0.0)) throw ConfigError("dynamic_range must be positive");
}

double psnr(const Tensor& pred, const Tensor& target, double dynamic_range) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("psnr: shape mismatch " + shape_string(pred.shape()) + " vs " +
                         shape_string(target.shape()));
  }
  double se = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(pred.size());
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(dynamic_range * dynamic_range / mse);
}

double psnr(const Image& pred, const Image& target, double dynamic_range) {
  return psnr(pred.to_tensor(), target.to_tensor(), dynamic_range);
}

Tensor gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double center = static_cast<double>(size - 1) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - center;
    total += (g[i] = std::exp(-d * d / (2.0 * sigma * sigma)));
  }
  Tensor w(Shape{size, size});
  auto o = w.mutable_data();
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) o[i * size + j] = g[i] * g[j] / (total * total);
  return w;
}

namespace {

// [P, 1, H, W] planes, one per (frame, channel).
Tensor as_planes(const Tensor& x) {
  switch (x.rank()) {
    case 2: return reshape(x, {1, 1, x.dim(0), x.dim(1)});
    case 3: return reshape(permute(x, {2, 0, 1}), {x.dim(2), 1, x.dim(0), x.dim(1)});
    case 4: return reshape(permute(x, {0, 3, 1, 2}), {x.dim(0) * x.dim(3), 1, x.dim(1), x.dim(2)});
    default: throw DimensionError("ssim: expected [H,W], [H,W,C] or [T,H,W,C], got " + shape_string(x.shape()));
  }
}

std::size_t pixel_count(const Tensor& x) {
  switch (x.rank()) {
    case 2: return x.size();
    case 3: return x.dim(0) * x.dim(1);
    case 4: return x.dim(0) * x.dim(1) * x.dim(2);
    default: return x.size();
  }
}

}  // namespace

Tensor ssim(const Tensor& pred, const Tensor& target, const FitLossConfig& cfg) {
  cfg.validate();
  if (pred.shape() != target.shape()) {
    throw DimensionError("ssim: shape mismatch " + shape_string(pred.shape()) + " vs " +
                         shape_string(target.shape()));
  }
  const Tensor x = as_planes(pred);
  const Tensor y = as_planes(target);
  if (x.dim(2) < cfg.ssim_window || x.dim(3) < cfg.ssim_window) {
    throw ConfigError("ssim: image " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                      " is smaller than the " + std::to_string(cfg.ssim_window) + "x" +
                      std::to_string(cfg.ssim_window) + " window");
  }
  const Tensor window = gaussian_window(cfg.ssim_window, cfg.ssim_sigma)
                            .with_shape({1, 1, cfg.ssim_window, cfg.ssim_window});
  auto filter = [&](const Tensor& t) { return conv2d(t, window, nullptr, Conv2dOptions{}); };
  const Tensor mu_x = filter(x);
  const Tensor mu_y = filter(y);
  const Tensor mu_xx = mu_x * mu_x;
  const Tensor mu_yy = mu_y * mu_y;
  const Tensor mu_xy = mu_x * mu_y;
  const Tensor var_x = filter(x * x) - mu_xx;
  const Tensor var_y = filter(y * y) - mu_yy;
  const Tensor cov = filter(x * y) - mu_xy;
  const Tensor num = (mu_xy * 2.0 + cfg.c1()) * (cov * 2.0 + cfg.c2());
  const Tensor den = (mu_xx + mu_yy + cfg.c1()) * (var_x + var_y + cfg.c2());
  return mean(num / den);
}

double ssim(const Image& pred, const Image& target, const FitLossConfig& cfg) {
  return ssim(pred.to_tensor(), target.to_tensor(), cfg).item();
}

Tensor l2_term(const Tensor& pred, const Tensor& target, const FitLossConfig& cfg) {
  const Tensor d = pred - target;
  if (cfg.l2_mode == FitLossConfig::L2Mode::mse) return mean(d * d);
  return sqrt(sum(d * d)) * (1.0 / static_cast<double>(pixel_count(pred)));
}

Tensor fit_loss(const Tensor& pred, const Tensor& target, const FitLossConfig& cfg) {
  cfg.validate();
  if (pred.shape() != target.shape()) {
    throw DimensionError("fit_loss: shape mismatch " + shape_string(pred.shape()) + " vs " +
                         shape_string(target.shape()));
  }
  if (cfg.alpha == 1.0) return l2_term(pred, target, cfg);
  const Tensor structural = (ssim(pred, target, cfg) * -1.0) + 1.0;
  if (cfg.alpha == 0.0) return structural;
  return l2_term(pred, target, cfg) * cfg.alpha + structural * (1.0 - cfg.alpha);
}

StageDims stage_dims(const Tensor& features) {
  if (features.rank() != 4) throw DimensionError("stage features must be [N,C,H,W]");
  return {features.dim(1), features.dim(2), features.dim(3)};
}

std::vector<StageAligner> make_stage_aligners(ParameterSet& params, std::span<const StageDims> student,
                                              std::span<const StageDims> teacher, Rng& rng, bool teacher_side) {
  if (student.size() != teacher.size()) {
    throw ConfigError("stage count mismatch: student " + std::to_string(student.size()) + ", teacher " +
                      std::to_string(teacher.size()));
  }
  std::vector<StageAligner> out;
  for (std::size_t i = 0; i < student.size(); ++i) {
    const std::string name = "align" + std::to_string(i + 1);
    StageAligner a;
    a.projection = make_affine(params, name + ".student", student[i].channels, teacher[i].channels,
                               InitScheme::kaiming_uniform, InitScheme::zeros, rng);
    a.target = teacher[i];
    if (teacher_side) {
      a.teacher_projection = make_affine(params, name + ".teacher", teacher[i].channels, teacher[i].channels,
                                         InitScheme::kaiming_uniform, InitScheme::zeros, rng);
    }
    out.push_back(a);
  }
  return out;
}

Tensor align_student(const StageAligner& aligner, const Tensor& features) {
  Tensor h = affine_pointwise(aligner.projection, features);
  if (h.dim(2) != aligner.target.height || h.dim(3) != aligner.target.width) {
    h = resize_nearest(h, aligner.target.height, aligner.target.width);
  }
  return h;
}

Tensor align_teacher(const StageAligner& aligner, const Tensor& features) {
  const Tensor fixed = features.detach();
  if (!aligner.teacher_projection) return fixed;
  return affine_pointwise(*aligner.teacher_projection, fixed);
}

Tensor ms_loss(const StageOutputs& student, const StageOutputs& teacher, std::span<const StageAligner> aligners,
               std::span<const std::size_t> stage_set) {
  const std::size_t n = student.features.size();
  if (teacher.features.size() != n || aligners.size() != n) {
    throw DimensionError("ms_loss: " + std::to_string(n) + " student stages, " +
                         std::to_string(teacher.features.size()) + " teacher stages, " +
                         std::to_string(aligners.size()) + " aligners");
  }
  Tensor total = Tensor::scalar(0.0);
  bool first = true;
  for (std::size_t stage : stage_set) {
    if (stage == 0 || stage > n) throw ConfigError("ms_loss: stage " + std::to_string(stage) + " out of range");
    const std::size_t i = stage - 1;
    const Tensor s = align_student(aligners[i], student.features[i]);
    const Tensor t = align_teacher(aligners[i], teacher.features[i]);
    if (s.shape() != t.shape()) {
      throw DimensionError("ms_loss: stage " + std::to_string(stage) + " aligned student " +
                           shape_string(s.shape()) + " vs teacher " + shape_string(t.shape()));
    }
    const Tensor d = s - t;
    const Tensor term = mean(d * d);
    total = first ? term : total + term;
    first = false;
  }
  return total;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [n,N]");
  for (std::size_t label : labels) {
    if (label >= logits.dim(1)) {
      throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                          std::to_string(logits.dim(1)) + " classes");
    }
  }
  return mean(pick_rows(log_softmax_rows(logits), labels)) * -1.0;
}

void DistillConfig::validate() const {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("lambda1 and lambda2 must be non-negative");
  if (!(lambda1 + lambda2 > 0.0)) throw ConfigError("lambda1 + lambda2 must be positive");
  for (std::size_t s : stage_set) {
    if (s < 1 || s > 4) throw ConfigError("distillation stage " + std::to_string(s) + " outside 1..4");
  }
}

Tensor final_loss(const Tensor& logits, std::span<const std::size_t> labels, const Tensor& ms,
                  const DistillConfig& cfg) {
  return cross_entropy(logits, labels) * cfg.lambda1 + ms * cfg.lambda2;
}

}  // namespace inrn
