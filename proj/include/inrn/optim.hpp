#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "inrn/data.hpp"
#include "inrn/error.hpp"
#include "inrn/inre.hpp"
#include "inrn/losses.hpp"

namespace inrn {

enum class LrSchedule { constant, cosine };

const char* schedule_name(LrSchedule s);
LrSchedule parse_schedule(std::string_view name);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t steps = 1000;
  LrSchedule lr_schedule = LrSchedule::constant;

  void validate() const;
  /// Learning rate for 1-based step t of a run lasting `horizon` steps.
  double lr_at(std::size_t t, std::size_t horizon) const;
};

inline AdamConfig classifier_adam_defaults() {
  AdamConfig cfg;
  cfg.lr = 3e-4;
  return cfg;
}

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update at 1-based step t with learning rate `lr`.
/// An empty gradient tensor counts as zero. Throws NumericError naming the
/// parameter on a non-finite gradient, before touching any parameter.
void adam_step(ParameterSet& params, std::span<const Tensor> grads, AdamState& state, const AdamConfig& cfg,
               std::size_t t, double lr);

/// Owns the moment state for one parameter set.
class Adam {
 public:
  Adam(ParameterSet& params, AdamConfig cfg, std::size_t horizon = 0);

  /// Pulls gradients of every parameter from `tape` and applies one step.
  void step(const Tape& tape);
  void step(std::span<const Tensor> grads);

  std::size_t steps_taken() const noexcept { return t_; }
  const AdamState& state() const noexcept { return state_; }

 private:
  ParameterSet& params_;
  AdamConfig cfg_;
  std::size_t horizon_;
  AdamState state_;
  std::size_t t_ = 0;
};

std::vector<Tensor> gradients(const Tape& tape, const ParameterSet& params);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::optional<double> psnr;
  std::optional<double> ssim;
  std::optional<double> accuracy;
};

struct RunReport {
  std::vector<StepRecord> records;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::size_t param_count = 0;
  std::size_t steps_completed = 0;

  /// Throws ContractError unless step exceeds the last recorded step.
  void add(StepRecord record);
  const StepRecord& last() const;
};

/// step,loss,psnr,ssim with 17 significant digits.
void write_fit_csv(const RunReport& report, const std::filesystem::path& path);
/// epoch,train_loss,test_accuracy.
void write_epoch_csv(const RunReport& report, const std::filesystem::path& path);
std::string format_double(double v);

/// Raised when training diverges; carries everything recorded so far.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, RunReport partial) : NumericError(what), partial_(std::move(partial)) {}
  const RunReport& partial() const noexcept { return partial_; }

 private:
  RunReport partial_;
};

struct FitOptions {
  /// Evaluation cadence; the final step is always evaluated.
  std::size_t eval_every = 25;
  /// Skip the SSIM column (also skipped automatically when frames are
  /// smaller than the SSIM window).
  bool skip_ssim = false;
};

struct FitResult {
  std::unique_ptr<ImageGenerator> network;
  RunReport report;
  /// Final clamped frames [T, H, W, C].
  Tensor reconstruction;
};

/// Frames of identical shape stacked as [T, H, W, C].
Tensor stack_frames(std::span<const Image> frames);

/// Full-batch optimization of fit_loss over every frame for adam.steps
/// steps; `seed` replaces spec.seed for initialization.
FitResult fit_run(const NetworkSpec& spec, std::span<const Image> targets, const FitLossConfig& loss_cfg,
                  const AdamConfig& adam_cfg, std::uint64_t seed, const FitOptions& options = {});

struct ClassifierTrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::size_t eval_batch = 250;
};

struct ClassifierResult {
  std::unique_ptr<MultiStageClassifier> network;
  RunReport report;
};

double evaluate_accuracy(const MultiStageClassifier& net, const LabeledDataset& data, std::size_t batch = 250);

/// Plain cross-entropy training; one record per epoch with test accuracy.
ClassifierResult train_teacher(const NetworkSpec& spec, const LabeledDataset& train, const LabeledDataset& test,
                               const AdamConfig& adam_cfg, const ClassifierTrainConfig& train_cfg,
                               std::uint64_t seed);

/// Minibatch training of lambda1 * CE + lambda2 * ms against a frozen
/// teacher, aligners trained jointly. With lambda2 == 0 the teacher is
/// never evaluated and the run matches train_teacher exactly.
ClassifierResult distill_run(const NetworkSpec& student_spec, const MultiStageClassifier& teacher,
                             const LabeledDataset& train, const LabeledDataset& test, const DistillConfig& distill_cfg,
                             const AdamConfig& adam_cfg, const ClassifierTrainConfig& train_cfg,
                             std::uint64_t seed);

/// FNV-1a over every parameter's name, shape and payload bytes.
std::uint64_t parameter_checksum(const ParameterSet& params);
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
/// Name/value pairs in file order. Throws ParseError with a byte offset.
std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::filesystem::path& path);
/// Loads into an existing set; names and shapes must match exactly.
void load_checkpoint(ParameterSet& params, const std::filesystem::path& path);

}  // namespace inrn
