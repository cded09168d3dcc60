#include "inrn/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "inrn/ablation.hpp"
#include "inrn/gradcheck_suite.hpp"

namespace inrn {
namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

Json number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

Json number(const std::optional<double>& v) { return v ? number(*v) : Json(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << text;
  if (!f) throw ConfigError("failed writing " + path.string());
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

Json network_json(const NetworkSpec& s) {
  Json j;
  j["kind"] = kind_name(s.kind);
  j["activation"] = activation_name(s.activation);
  if (s.kind == NetworkKind::multi_stage_classifier) {
    Json stages = Json::array();
    for (const auto& st : s.stages) stages.push_back({{"blocks", st.num_blocks}, {"channels", st.channels}});
    j["stages"] = stages;
    j["in_channels"] = s.in_channels;
    j["num_classes"] = s.num_classes;
    j["residual"] = s.residual;
  } else {
    j["out_height"] = s.out_height;
    j["out_width"] = s.out_width;
    j["out_channels"] = s.out_channels;
    j["embed_frequencies"] = s.embed.num_frequencies;
  }
  j["compression_ratio"] = s.compression_ratio;
  return j;
}

Json base_summary(const RunConfig& cfg, const RunReport& report) {
  Json j;
  j["command"] = command_name(cfg.command);
  j["status"] = "ok";
  j["seed"] = cfg.seed;
  j["config_digest"] = cfg.digest();
  j["param_count"] = report.param_count;
  j["steps_completed"] = report.steps_completed;
  j["wall_seconds"] = number(report.wall_seconds);
  return j;
}

Json fit_summary(const RunConfig& cfg, const RunReport& report) {
  Json j = base_summary(cfg, report);
  const StepRecord* last = report.records.empty() ? nullptr : &report.records.back();
  j["final_loss"] = last ? number(last->loss) : Json(nullptr);
  j["final_psnr"] = last ? number(last->psnr) : Json(nullptr);
  j["final_ssim"] = last ? number(last->ssim) : Json(nullptr);
  j["frames"] = cfg.data.frames.size();
  j["network"] = network_json(cfg.resolved_network());
  j["alpha"] = cfg.loss.alpha;
  j["l2_mode"] = cfg.loss.l2_mode == FitLossConfig::L2Mode::mse ? "mse" : "norm";
  j["lr"] = cfg.adam.lr;
  j["lr_schedule"] = schedule_name(cfg.adam.lr_schedule);
  return j;
}

std::vector<Image> load_frames(const RunConfig& cfg) {
  std::vector<Image> frames;
  for (const auto& p : cfg.data.frames) frames.push_back(load_ppm(p));
  return frames;
}

struct ClassifierData {
  LabeledDataset train, test;
};

ClassifierData load_classifier_data(const RunConfig& cfg) {
  ClassifierData d;
  d.train = load_idx(cfg.data.train_images, cfg.data.train_labels, Split::train).head(cfg.data.train_limit);
  d.test = load_idx(cfg.data.test_images, cfg.data.test_labels, Split::test).head(cfg.data.test_limit);
  if (d.train.size() == 0 || d.test.size() == 0) throw ConfigError("empty dataset");
  return d;
}

Json classifier_summary(const RunConfig& cfg, const ClassifierData& data, const ClassifierResult& r, double lambda1,
                        double lambda2) {
  Json j = base_summary(cfg, r.report);
  j["train_size"] = data.train.size();
  j["test_size"] = data.test.size();
  j["stages"] = cfg.stage_blocks;
  j["stage_width"] = cfg.stage_width;
  j["epochs"] = cfg.train.epochs;
  j["batch_size"] = cfg.train.batch_size;
  j["lr"] = cfg.adam.lr;
  j["lambda1"] = lambda1;
  j["lambda2"] = lambda2;
  j["final_test_accuracy"] = r.report.records.empty() ? Json(nullptr) : number(r.report.last().accuracy);
  j["checkpoint"] = "model.ckpt";
  j["parameter_checksum"] = hex64(parameter_checksum(r.network->parameters()));
  j["network"] = network_json(r.network->spec());
  return j;
}

void write_checkpoint_pair(const fs::path& dir, const RunConfig& cfg, const ParameterSet& params) {
  save_checkpoint(params, dir / "model.ckpt");
  write_text(dir / "model.ckpt.ini", cfg.network_ini());
}

int diverged(const RunConfig& cfg, const DivergenceError& e, std::ostream& log, bool epochs) {
  RunReport partial = e.partial();
  partial.config_digest = cfg.digest();
  if (epochs) {
    write_epoch_csv(partial, cfg.out / "metrics.csv");
  } else {
    write_fit_csv(partial, cfg.out / "metrics.csv");
  }
  Json j = epochs ? base_summary(cfg, partial) : fit_summary(cfg, partial);
  j["status"] = "diverged";
  j["error"] = e.what();
  write_json(cfg.out / "summary.json", j);
  log << "error: training diverged: " << e.what() << " (partial report in " << cfg.out.string() << ")\n";
  return kExitDivergence;
}

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return format_double(v);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

RunConfig resolve_config(Command command, const CliOverrides& o) {
  RunConfig cfg = default_config(command);
  if (o.config) apply_config(cfg, ConfigFile::load(*o.config));
  if (o.seed) cfg.seed = *o.seed;
  if (o.steps) {
    if (*o.steps == 0) throw ConfigError("--steps must be >= 1");
    switch (command) {
      case Command::fit: cfg.adam.steps = *o.steps; break;
      case Command::ablate:
        cfg.ablate.reference_steps = *o.steps;
        cfg.ablate.mode = AblationConfig::Mode::compute;
        break;
      case Command::train_teacher:
      case Command::distill: cfg.train.epochs = *o.steps; break;
      case Command::gradcheck: throw ConfigError("--steps does not apply to gradcheck");
    }
  }
  if (o.stages) {
    if (command != Command::train_teacher && command != Command::distill) {
      throw ConfigError("--stages applies to train-teacher and distill only");
    }
    cfg.stage_blocks = *o.stages;
  }
  if (o.alpha) {
    if (command != Command::fit && command != Command::ablate) throw ConfigError("--alpha applies to fit and ablate only");
    cfg.loss.alpha = *o.alpha;
  }
  if (o.lambda1 || o.lambda2) {
    if (command != Command::distill) throw ConfigError("--lambda1/--lambda2 apply to distill only");
    if (o.lambda1) cfg.distill.lambda1 = *o.lambda1;
    if (o.lambda2) cfg.distill.lambda2 = *o.lambda2;
  }
  if (o.out) cfg.out = *o.out;
  cfg.overwrite = o.overwrite;
  if (o.inject_fault && command != Command::gradcheck) throw ConfigError("--inject-fault applies to gradcheck only");
  validate_for_command(cfg);
  return cfg;
}

void prepare_output_dir(const fs::path& dir, bool overwrite) {
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir)) throw ConfigError("output path " + dir.string() + " is not a directory");
    if (!fs::is_empty(dir) && !overwrite) {
      throw ConfigError("output directory " + dir.string() + " is not empty (pass --overwrite to replace its files)");
    }
    return;
  }
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
}

int cmd_fit(const RunConfig& cfg, std::ostream& log) {
  const std::vector<Image> frames = load_frames(cfg);
  prepare_output_dir(cfg.out, cfg.overwrite);
  const NetworkSpec spec = cfg.resolved_network();
  try {
    FitResult r = fit_run(spec, frames, cfg.loss, cfg.adam, cfg.seed, cfg.fit);
    r.report.config_digest = cfg.digest();
    write_fit_csv(r.report, cfg.out / "metrics.csv");
    const std::size_t t = r.reconstruction.dim(0);
    for (std::size_t i = 0; i < t; ++i) {
      const Shape frame{r.reconstruction.dim(1), r.reconstruction.dim(2), r.reconstruction.dim(3)};
      const std::size_t n = shape_size(frame);
      const auto all = r.reconstruction.data();
      const Tensor f(frame, std::vector<double>(all.begin() + i * n, all.begin() + (i + 1) * n));
      char name[64];
      if (t == 1) {
        std::snprintf(name, sizeof name, "reconstruction.ppm");
      } else {
        std::snprintf(name, sizeof name, "reconstruction_%03zu.ppm", i);
      }
      save_ppm(Image::from_tensor(f), cfg.out / name);
    }
    write_json(cfg.out / "summary.json", fit_summary(cfg, r.report));
    const auto& last = r.report.last();
    log << "fit: " << r.report.param_count << " parameters, " << r.report.steps_completed
        << " steps, psnr " << format_double(last.psnr.value_or(0.0)) << " dB\n";
    return kExitOk;
  } catch (const DivergenceError& e) {
    return diverged(cfg, e, log, false);
  }
}

int cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  const std::vector<Image> frames = load_frames(cfg);
  prepare_output_dir(cfg.out, cfg.overwrite);
  const AblationReport rep = run_ablation(cfg, frames.front(), [&](const std::string& s) { log << "ablate: " << s << "\n"; });

  std::ostringstream csv, md, metrics;
  csv << "arm,params,params_m,budget_ratio,lr,steps,macs_per_step,steps_per_second,ts_relative,total_seconds,"
         "et_relative,median_psnr,median_ssim,status\n";
  md << "| Arm | Para.(M) | TS (steps/s) | ET (s) | PSNR (dB) | SSIM |\n"
     << "|---|---|---|---|---|---|\n";
  metrics << "arm,seed,step,loss,psnr,ssim\n";
  bool any_failed = false;
  for (const ArmRow& row : rep.rows) {
    any_failed = any_failed || row.failed;
    const char* name = arm_name(row.arm);
    csv << name << ',' << row.params << ',' << fixed(static_cast<double>(row.params) / 1e6, 6) << ','
        << format_double(row.budget_ratio) << ',' << format_double(row.lr) << ',' << row.steps << ','
        << row.macs_per_step << ',' << format_double(row.steps_per_second) << ',' << format_double(row.ts_relative)
        << ',' << format_double(row.mean_seconds) << ',' << format_double(row.et_relative) << ','
        << (row.failed ? "" : format_double(row.median_psnr)) << ','
        << (row.median_ssim ? format_double(*row.median_ssim) : "") << ','
        << (row.failed ? "failed" : "ok") << '\n';
    if (row.failed) {
      md << "| " << name << " | " << fixed(static_cast<double>(row.params) / 1e6, 4) << " | failed | failed | "
         << "failed | failed |\n";
    } else {
      md << "| " << name << " | " << fixed(static_cast<double>(row.params) / 1e6, 4) << " | "
         << fixed(row.steps_per_second, 1) << " (" << fixed(row.ts_relative, 1) << "x) | "
         << fixed(row.mean_seconds, 1) << " (" << fixed(row.et_relative, 1) << "x) | "
         << fixed(row.median_psnr, 2) << " | " << (row.median_ssim ? fixed(*row.median_ssim, 4) : "-") << " |\n";
    }
    for (const ArmRun& run : row.runs) {
      for (const StepRecord& r : run.report.records) {
        metrics << name << ',' << run.seed << ',' << r.step << ',' << format_double(r.loss) << ','
                << (r.psnr ? format_double(*r.psnr) : "") << ',' << (r.ssim ? format_double(*r.ssim) : "") << '\n';
      }
    }
  }
  md << "\nBudget " << rep.target_params << " parameters, tolerance " << fixed(rep.tolerance * 100, 0)
     << "%: " << (rep.budgets_within ? "all arms within" : "NOT all arms within") << ". ";
  md << (rep.mode == AblationConfig::Mode::compute ? "Steps allocated by equal multiply-accumulate budget."
                                                   : "Steps allocated by equal wall-clock budget.")
     << " TS and ET are relative to the slowest arm.\n";
  write_text(cfg.out / "ablation.csv", csv.str());
  write_text(cfg.out / "ablation.md", md.str());
  write_text(cfg.out / "ablation_metrics.csv", metrics.str());

  Json j;
  j["command"] = "ablate";
  j["status"] = any_failed ? "failed" : "ok";
  j["seed"] = cfg.seed;
  j["config_digest"] = cfg.digest();
  j["mode"] = rep.mode == AblationConfig::Mode::compute ? "compute" : "wallclock";
  j["target_params"] = rep.target_params;
  j["tolerance"] = rep.tolerance;
  j["budgets_within"] = rep.budgets_within;
  j["seeds"] = cfg.ablate.seeds;
  Json rows = Json::array();
  for (const ArmRow& row : rep.rows) {
    Json r;
    r["arm"] = arm_name(row.arm);
    r["status"] = row.failed ? "failed" : "ok";
    if (row.failed) r["error"] = row.error;
    r["param_count"] = row.params;
    r["budget_ratio"] = number(row.budget_ratio);
    r["lr"] = row.lr;
    r["steps"] = row.steps;
    r["macs_per_step"] = row.macs_per_step;
    r["median_psnr"] = row.failed ? Json(nullptr) : number(row.median_psnr);
    r["median_ssim"] = number(row.median_ssim);
    r["mean_seconds"] = number(row.mean_seconds);
    r["steps_per_second"] = number(row.steps_per_second);
    r["ts_relative"] = number(row.ts_relative);
    r["et_relative"] = number(row.et_relative);
    Json runs = Json::array();
    for (const ArmRun& run : row.runs) {
      runs.push_back({{"seed", run.seed}, {"psnr", number(run.psnr)}, {"ssim", number(run.ssim)},
                      {"seconds", number(run.seconds)}});
    }
    r["runs"] = runs;
    r["network"] = network_json(row.spec);
    rows.push_back(r);
  }
  j["arms"] = rows;
  write_json(cfg.out / "summary.json", j);

  for (const ArmRow& row : rep.rows) {
    if (row.failed) log << "error: arm " << arm_name(row.arm) << " failed: " << row.error << "\n";
  }
  if (!rep.budgets_within) {
    log << "error: parameter budgets differ by more than " << fixed(rep.tolerance * 100, 0) << "%\n";
    return kExitFailure;
  }
  return any_failed ? kExitFailure : kExitOk;
}

int cmd_train_teacher(const RunConfig& cfg, std::ostream& log) {
  const ClassifierData data = load_classifier_data(cfg);
  prepare_output_dir(cfg.out, cfg.overwrite);
  try {
    ClassifierResult r = train_teacher(cfg.resolved_network(), data.train, data.test, cfg.adam, cfg.train, cfg.seed);
    r.report.config_digest = cfg.digest();
    write_epoch_csv(r.report, cfg.out / "metrics.csv");
    write_checkpoint_pair(cfg.out, cfg, r.network->parameters());
    Json j = classifier_summary(cfg, data, r, 1.0, 0.0);
    write_json(cfg.out / "summary.json", j);
    log << "train-teacher: test accuracy " << fixed(100.0 * r.report.last().accuracy.value_or(0.0), 2) << "%\n";
    return kExitOk;
  } catch (const DivergenceError& e) {
    return diverged(cfg, e, log, true);
  }
}

int cmd_distill(const RunConfig& cfg, std::ostream& log) {
  const fs::path ckpt = cfg.teacher_checkpoint;
  if (!fs::is_regular_file(ckpt)) throw ConfigError("teacher checkpoint not found: " + ckpt.string());
  fs::path ini = ckpt;
  ini += ".ini";
  if (!fs::is_regular_file(ini)) throw ConfigError("teacher network description not found: " + ini.string());
  RunConfig teacher_cfg = default_config(Command::train_teacher);
  apply_config(teacher_cfg, ConfigFile::load(ini));
  auto teacher = build_multi_stage(teacher_cfg.resolved_network());
  load_checkpoint(teacher->parameters(), ckpt);
  const std::uint64_t teacher_sum = parameter_checksum(teacher->parameters());

  const ClassifierData data = load_classifier_data(cfg);
  prepare_output_dir(cfg.out, cfg.overwrite);
  try {
    ClassifierResult r =
        distill_run(cfg.resolved_network(), *teacher, data.train, data.test, cfg.distill, cfg.adam, cfg.train, cfg.seed);
    if (parameter_checksum(teacher->parameters()) != teacher_sum) {
      throw ContractError("teacher parameters changed during distillation");
    }
    r.report.config_digest = cfg.digest();
    write_epoch_csv(r.report, cfg.out / "metrics.csv");
    write_checkpoint_pair(cfg.out, cfg, r.network->parameters());
    Json j = classifier_summary(cfg, data, r, cfg.distill.lambda1, cfg.distill.lambda2);
    j["stage_set"] = cfg.distill.stage_set;
    j["teacher_transform"] = cfg.distill.teacher_transform;
    j["teacher_checkpoint"] = ckpt.filename().string();
    j["teacher_stages"] = teacher_cfg.stage_blocks;
    j["teacher_checksum"] = hex64(teacher_sum);
    j["teacher_test_accuracy"] = number(evaluate_accuracy(*teacher, data.test, cfg.train.eval_batch));
    write_json(cfg.out / "summary.json", j);
    log << "distill: test accuracy " << fixed(100.0 * r.report.last().accuracy.value_or(0.0), 2) << "%\n";
    return kExitOk;
  } catch (const DivergenceError& e) {
    return diverged(cfg, e, log, true);
  }
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& report, std::ostream& log,
                  const std::optional<std::string>& inject_fault) {
  prepare_output_dir(cfg.out, cfg.overwrite);
  if (inject_fault) {
    const auto& kinds = registered_op_kinds();
    if (std::find(kinds.begin(), kinds.end(), *inject_fault) == kinds.end()) {
      throw ConfigError("--inject-fault: unknown op kind '" + *inject_fault + "'");
    }
    inject_gradient_fault(*inject_fault);
  }
  std::vector<GradCheckEntry> entries;
  try {
    entries = run_gradcheck_suite();
  } catch (...) {
    clear_gradient_fault();
    throw;
  }
  clear_gradient_fault();

  std::ostringstream csv;
  csv << "name,category,max_rel_error,passed\n";
  bool ok = true;
  for (const auto& e : entries) {
    ok = ok && e.passed;
    char line[160];
    std::snprintf(line, sizeof line, "%-40s %-8s %.3e  %s", e.name.c_str(), e.category.c_str(), e.max_rel_error,
                  e.passed ? "ok" : "FAIL");
    report << line << (e.error.empty() ? "" : "  (" + e.error + ")") << "\n";
    csv << e.name << ',' << e.category << ',' << format_double(e.max_rel_error) << ',' << (e.passed ? 1 : 0) << '\n';
  }
  write_text(cfg.out / "gradcheck.csv", csv.str());
  if (!ok) {
    log << "error: gradient check failed (tolerance " << format_double(kGradCheckTolerance) << ")\n";
    return kExitFailure;
  }
  return kExitOk;
}

int run_command(Command command, const CliOverrides& overrides, std::ostream& report, std::ostream& log) {
  try {
    const RunConfig cfg = resolve_config(command, overrides);
    switch (command) {
      case Command::fit: return cmd_fit(cfg, log);
      case Command::ablate: return cmd_ablate(cfg, log);
      case Command::train_teacher: return cmd_train_teacher(cfg, log);
      case Command::distill: return cmd_distill(cfg, log);
      case Command::gradcheck: return cmd_gradcheck(cfg, report, log, overrides.inject_fault);
    }
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    log << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    log << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace inrn
