#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "inrn/config.hpp"

namespace inrn {

/// Spec of one arm before budget matching: the interleaved arm is the
/// configured generator; the baselines derive from it.
NetworkSpec arm_base_spec(ArmKind arm, const RunConfig& cfg);

/// Width-searches the arm's free width so its parameter count is as close
/// as possible to `target`. Returns the matched spec.
NetworkSpec match_budget(ArmKind arm, const NetworkSpec& base, std::size_t target);

/// Multiply-accumulates of one training step (forward + backward).
std::uint64_t macs_per_step(const NetworkSpec& spec, const Image& target, const FitLossConfig& loss);

struct ArmRun {
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  double seconds = 0.0;
  double psnr = 0.0;
  std::optional<double> ssim;
  RunReport report;
};

struct ArmRow {
  ArmKind arm = ArmKind::interleaved;
  NetworkSpec spec;
  std::size_t params = 0;
  double lr = 0.0;
  std::size_t steps = 0;
  std::uint64_t macs_per_step = 0;
  std::vector<ArmRun> runs;
  double median_psnr = 0.0;
  std::optional<double> median_ssim;
  double mean_seconds = 0.0;
  double steps_per_second = 0.0;
  double ts_relative = 1.0;
  double et_relative = 1.0;
  double budget_ratio = 1.0;
  bool failed = false;
  std::string error;
};

struct AblationReport {
  AblationConfig::Mode mode = AblationConfig::Mode::compute;
  std::size_t target_params = 0;
  double tolerance = 0.1;
  bool budgets_within = false;
  std::vector<ArmRow> rows;

  const ArmRow* find(ArmKind arm) const;
};

using AblationLog = std::function<void(const std::string&)>;

/// Runs every configured arm for every configured seed. A failing arm is
/// recorded and the others continue. Worker threads are capped by the
/// INRN_THREADS environment variable (default 1).
AblationReport run_ablation(const RunConfig& cfg, const Image& target, const AblationLog& log = {});

double median(std::vector<double> v);
std::size_t worker_threads();

}  // namespace inrn
