#include "inrn/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <mutex>
#include <thread>

namespace inrn {

const ArmRow* AblationReport::find(ArmKind arm) const {
  for (const auto& r : rows)
    if (r.arm == arm) return &r;
  return nullptr;
}

double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::size_t worker_threads() {
  const char* env = std::getenv("INRN_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError(std::string("INRN_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(v);
}

NetworkSpec arm_base_spec(ArmKind arm, const RunConfig& cfg) {
  NetworkSpec spec = cfg.resolved_network();
  switch (arm) {
    case ArmKind::interleaved:
      spec.kind = NetworkKind::single_stage_generator;
      break;
    case ArmKind::only_mlp:
      spec.kind = NetworkKind::baseline_only_mlp;
      spec.embed.num_frequencies = cfg.ablate.only_mlp_frequencies;
      break;
    case ArmKind::front_conv:
      spec.kind = NetworkKind::baseline_front_conv;
      break;
    case ArmKind::post_conv:
      spec.kind = NetworkKind::baseline_post_conv;
      break;
  }
  return spec;
}

namespace {

std::size_t params_at(ArmKind arm, NetworkSpec spec, std::size_t width) {
  spec.mlp_width = width;
  if (arm != ArmKind::only_mlp) spec.conv_width = width;
  try {
    return param_count(*build_generator(spec));
  } catch (const ConfigError&) {
    return 0;
  }
}

}  // namespace

NetworkSpec match_budget(ArmKind arm, const NetworkSpec& base, std::size_t target) {
  if (arm == ArmKind::interleaved) return base;
  std::size_t lo = 1, hi = 2;
  while (params_at(arm, base, hi) < target) {
    lo = hi;
    hi *= 2;
    if (hi > (1u << 16)) throw ConfigError("cannot reach a budget of " + std::to_string(target) + " parameters");
  }
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    (params_at(arm, base, mid) < target ? lo : hi) = mid;
  }
  auto gap = [&](std::size_t w) {
    const auto p = static_cast<double>(params_at(arm, base, w));
    return std::abs(p - static_cast<double>(target));
  };
  const std::size_t best = gap(lo) <= gap(hi) ? lo : hi;
  NetworkSpec out = base;
  out.mlp_width = best;
  if (arm != ArmKind::only_mlp) out.conv_width = best;
  return out;
}

std::uint64_t macs_per_step(const NetworkSpec& spec, const Image& target, const FitLossConfig& loss) {
  auto net = build_generator(spec);
  const std::vector<Image> frames{target};
  const Tensor t = stack_frames(frames);
  const std::uint64_t before = mac_counter();
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(fit_loss(net->render(time_coords(1)), t, loss));
  }
  return mac_counter() - before;
}

namespace {

double seconds_per_step(const NetworkSpec& spec, const Image& target, const FitLossConfig& loss, AdamConfig adam,
                        std::size_t pilot_steps, double pilot_seconds) {
  auto net = build_generator(spec);
  const std::vector<Image> frames{target};
  const Tensor t = stack_frames(frames);
  const Tensor times = time_coords(1);
  Adam opt(net->parameters(), adam);
  auto step = [&] {
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(fit_loss(net->render(times), t, loss));
    }
    opt.step(tape);
  };
  step();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  std::size_t steps = 0;
  while (steps < std::max<std::size_t>(1, pilot_steps) || elapsed() < pilot_seconds) {
    step();
    ++steps;
  }
  return elapsed() / static_cast<double>(steps);
}

}  // namespace

AblationReport run_ablation(const RunConfig& cfg, const Image& target, const AblationLog& log) {
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  const AblationConfig& ab = cfg.ablate;
  AblationReport report;
  report.mode = ab.mode;
  report.tolerance = ab.tolerance;

  const NetworkSpec reference = arm_base_spec(ArmKind::interleaved, cfg);
  report.target_params = param_count(*build_generator(reference));
  const std::uint64_t reference_macs = macs_per_step(reference, target, cfg.loss);
  const double mac_budget = static_cast<double>(reference_macs) * static_cast<double>(ab.reference_steps);
  say("budget: " + std::to_string(report.target_params) + " parameters");

  for (ArmKind arm : ab.arms) {
    ArmRow row;
    row.arm = arm;
    row.lr = ab.lr_for(arm);
    try {
      row.spec = match_budget(arm, arm_base_spec(arm, cfg), report.target_params);
      row.params = param_count(*build_generator(row.spec));
      row.budget_ratio = static_cast<double>(row.params) / static_cast<double>(report.target_params);
      row.macs_per_step = macs_per_step(row.spec, target, cfg.loss);
      AdamConfig adam = cfg.adam;
      adam.lr = row.lr;
      if (ab.mode == AblationConfig::Mode::compute) {
        row.steps = std::max<std::size_t>(
            1, static_cast<std::size_t>(mac_budget / static_cast<double>(row.macs_per_step) + 0.5));
      } else {
        const double per_step = seconds_per_step(row.spec, target, cfg.loss, adam, ab.pilot_steps, ab.pilot_seconds);
        row.steps = std::max<std::size_t>(1, static_cast<std::size_t>(ab.seconds / per_step));
      }
      say(std::string(arm_name(arm)) + ": " + std::to_string(row.params) + " parameters, " +
          std::to_string(row.steps) + " steps");
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
      say(std::string(arm_name(arm)) + " failed during setup: " + e.what());
    }
    report.rows.push_back(std::move(row));
  }

  struct Job {
    std::size_t row;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < report.rows.size(); ++r) {
    if (report.rows[r].failed) continue;
    for (std::uint64_t s : ab.seeds) jobs.push_back({r, s});
  }
  std::vector<std::optional<ArmRun>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const ArmRow& row = report.rows[jobs[j].row];
      AdamConfig adam = cfg.adam;
      adam.lr = row.lr;
      adam.steps = row.steps;
      FitOptions options = cfg.fit;
      try {
        const std::vector<Image> frames{target};
        FitResult fit = fit_run(row.spec, frames, cfg.loss, adam, jobs[j].seed, options);
        ArmRun run;
        run.seed = jobs[j].seed;
        run.steps = row.steps;
        run.seconds = fit.report.wall_seconds;
        run.psnr = *fit.report.last().psnr;
        run.ssim = fit.report.last().ssim;
        run.report = std::move(fit.report);
        std::lock_guard lock(log_mutex);
        say(std::string(arm_name(row.arm)) + " seed " + std::to_string(run.seed) + ": psnr " +
            format_double(run.psnr) + " dB in " + std::to_string(run.seconds) + " s");
        results[j] = std::move(run);
      } catch (const std::exception& e) {
        errors[j] = e.what();
      }
    }
  };
  const std::size_t threads = std::min(worker_threads(), std::max<std::size_t>(1, jobs.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    ArmRow& row = report.rows[jobs[j].row];
    if (results[j]) {
      row.runs.push_back(std::move(*results[j]));
    } else {
      row.failed = true;
      row.error = "seed " + std::to_string(jobs[j].seed) + ": " + errors[j];
    }
  }

  double min_sps = 0.0, max_seconds = 0.0;
  for (ArmRow& row : report.rows) {
    if (row.failed) continue;
    std::vector<double> p, s;
    double seconds = 0.0;
    for (const auto& run : row.runs) {
      p.push_back(run.psnr);
      if (run.ssim) s.push_back(*run.ssim);
      seconds += run.seconds;
    }
    row.median_psnr = median(p);
    if (!s.empty()) row.median_ssim = median(s);
    row.mean_seconds = seconds / static_cast<double>(row.runs.size());
    row.steps_per_second = row.mean_seconds > 0 ? static_cast<double>(row.steps) / row.mean_seconds : 0.0;
    min_sps = min_sps == 0.0 ? row.steps_per_second : std::min(min_sps, row.steps_per_second);
    max_seconds = std::max(max_seconds, row.mean_seconds);
  }
  report.budgets_within = true;
  for (ArmRow& row : report.rows) {
    if (row.failed) {
      report.budgets_within = report.budgets_within && row.params != 0 &&
                              std::abs(row.budget_ratio - 1.0) <= ab.tolerance;
      continue;
    }
    row.ts_relative = min_sps > 0 ? row.steps_per_second / min_sps : 1.0;
    row.et_relative = max_seconds > 0 ? row.mean_seconds / max_seconds : 1.0;
    report.budgets_within = report.budgets_within && std::abs(row.budget_ratio - 1.0) <= ab.tolerance;
  }
  return report;
}

}  // namespace inrn
