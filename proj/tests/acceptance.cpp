// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "inrn/ablation.hpp"
#include "inrn/commands.hpp"
#include "inrn/gradcheck_suite.hpp"
#include "inrn/optim.hpp"
#include "ssim_oracle.hpp"
#include "support.hpp"

using namespace inrn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

std::string cli_path() {
  const char* env = std::getenv("INRN_CLI");
  if (!env) throw std::runtime_error("INRN_CLI is not set");
  return env;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = "'" + cli_path() + "' " + args + " >'" + log.string() + "' 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

fs::path mnist(const char* name) { return testing::data_dir() / "mnist" / name; }

std::string mnist_ini(std::size_t train_limit, std::size_t test_limit) {
  std::ostringstream s;
  s << "[data]\ntrain_images = " << mnist("train-images.idx3-ubyte").string()
    << "\ntrain_labels = " << mnist("train-labels.idx1-ubyte").string()
    << "\ntest_images = " << mnist("test-images.idx3-ubyte").string()
    << "\ntest_labels = " << mnist("test-labels.idx1-ubyte").string() << "\ntrain_limit = " << train_limit
    << "\ntest_limit = " << test_limit << "\n";
  return s.str();
}

fs::path write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

Outcome gradient_correctness() {
  const fs::path dir = testing::fresh_dir("acc_gradcheck");
  CliOverrides o;
  o.out = dir / "run";
  const RunConfig cfg = resolve_config(Command::gradcheck, o);
  std::ostringstream report, log;
  const auto t0 = std::chrono::steady_clock::now();
  const int code = cmd_gradcheck(cfg, report, log);
  const double secs = seconds_since(t0);

  const auto entries = run_gradcheck_suite(kGradCheckTolerance);
  double worst = 0.0;
  std::size_t networks = 0;
  bool all = true;
  for (const auto& e : entries) {
    worst = std::max(worst, e.max_rel_error);
    all = all && e.passed && e.max_rel_error <= 1e-4;
    if (e.category == "network") ++networks;
  }
  const bool pass = code == kExitOk && all && networks >= 5 && secs < 120.0;
  return {pass, std::to_string(entries.size()) + " entries, worst " + sci(worst) + ", " + fmt(secs) + " s"};
}

Outcome ssim_oracle_equivalence() {
  Rng rng(2024);
  double worst = 0.0;
  for (int pair = 0; pair < 50; ++pair) {
    FitLossConfig cfg;
    const std::size_t h = 3 + rng.below(30), w = 3 + rng.below(30);
    const std::size_t smaller = std::min(h, w);
    std::size_t win = smaller >= 11 ? 11 : (smaller % 2 == 1 ? smaller : smaller - 1);
    cfg.ssim_window = win;
    cfg.ssim_sigma = 0.5 + 2.0 * rng.uniform();
    const std::size_t c = (pair % 3 == 0) ? 1 : 3;
    const Shape shape = c == 1 ? Shape{h, w} : Shape{h, w, c};
    const Tensor x = testing::uniform(shape, rng, 0.0, 1.0);
    Tensor y = x;
    if (pair % 2 == 0) {
      y = testing::uniform(shape, rng, 0.0, 1.0);
    } else {
      for (double& v : y.mutable_data()) v = std::clamp(v + rng.uniform(-0.2, 0.2), 0.0, 1.0);
    }
    const double lib = ssim(x, y, cfg).item();
    const double ref = testing::ssim_oracle(x, y, win, cfg.ssim_sigma, cfg.c1(), cfg.c2());
    worst = std::max(worst, std::abs(lib - ref));
  }
  return {worst <= 1e-6, "50 pairs, max |diff| " + sci(worst)};
}

Outcome fit_loss_identities() {
  Rng rng(31);
  double worst_l2 = 0.0, worst_ssim = 0.0, worst_zero = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t h = 11 + rng.below(20), w = 11 + rng.below(20);
    const Tensor pred = testing::uniform({h, w, 3}, rng, 0.0, 1.0);
    const Tensor target = testing::uniform({h, w, 3}, rng, 0.0, 1.0);
    FitLossConfig cfg;

    long double sq = 0.0L;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const long double d = static_cast<long double>(pred[i]) - target[i];
      sq += d * d;
    }
    const double verbatim = static_cast<double>(std::sqrt(sq) / static_cast<long double>(h * w));
    cfg.alpha = 1.0;
    worst_l2 = std::max(worst_l2, std::abs(fit_loss(pred, target, cfg).item() - verbatim));

    cfg.alpha = 0.0;
    const double structural = 1.0 - testing::ssim_oracle(pred, target, cfg.ssim_window, cfg.ssim_sigma, cfg.c1(), cfg.c2());
    worst_ssim = std::max(worst_ssim, std::abs(fit_loss(pred, target, cfg).item() - structural));

    for (double alpha : {0.0, 0.7, 1.0}) {
      cfg.alpha = alpha;
      worst_zero = std::max(worst_zero, std::abs(fit_loss(target, target, cfg).item()));
    }
  }
  const bool pass = worst_l2 <= 1e-12 && worst_ssim <= 1e-12 && worst_zero <= 1e-12;
  return {pass, "alpha=1 " + sci(worst_l2) + ", alpha=0 " + sci(worst_ssim) + ", pred=target " + sci(worst_zero)};
}

Outcome ablation_direction() {
  RunConfig cfg = default_config(Command::ablate);
  cfg.ablate.mode = AblationConfig::Mode::wallclock;
  cfg.ablate.seeds = {0, 1, 2};
  const Image target = load_ppm(testing::data_dir() / "images" / "astronaut64.ppm");
  const AblationReport rep = run_ablation(cfg, target, [](const std::string& line) { std::cerr << line << "\n"; });
  const ArmRow* ours = rep.find(ArmKind::interleaved);
  const ArmRow* mlp = rep.find(ArmKind::only_mlp);
  if (!ours || !mlp || ours->failed || mlp->failed) return {false, "an arm failed"};
  double worst_arm_minutes = 0.0;
  std::ostringstream budgets, seconds;
  for (const auto& row : rep.rows) {
    double total = 0.0;
    for (const auto& r : row.runs) total += r.seconds;
    worst_arm_minutes = std::max(worst_arm_minutes, total / 60.0);
    budgets << " " << arm_name(row.arm) << "=" << row.params;
    seconds << " " << arm_name(row.arm) << "=" << fmt(row.mean_seconds, 3);
  }
  const double gap = ours->median_psnr - mlp->median_psnr;
  const bool pass = rep.budgets_within && gap >= 1.0 && worst_arm_minutes < 10.0;
  return {pass, "interleaved " + fmt(ours->median_psnr, 4) + " dB vs only_mlp " + fmt(mlp->median_psnr, 4) +
                    " dB (gap " + fmt(gap) + "), params" + budgets.str() + ", budgets within " +
                    fmt(100 * rep.tolerance, 2) + "%: " + (rep.budgets_within ? "yes" : "no") +
                    ", mean seconds per run (target " + fmt(cfg.ablate.seconds, 3) + ")" + seconds.str() +
                    ", slowest arm " + fmt(worst_arm_minutes) + " min"};
}

std::size_t block_params(std::size_t c, double ratio) {
  ParameterSet params;
  Rng rng(0);
  INReBlockConfig cfg;
  cfg.in_channels = c;
  cfg.compression_ratio = ratio;
  (void)build_inre_block(cfg, params, "b", rng);
  return param_count(params);
}

Outcome compression_direction() {
  bool pass = true;
  std::ostringstream detail;
  for (std::size_t c : {16u, 32u, 64u}) {
    const std::size_t k = c / 2;
    const std::size_t ce_expected = (c * k + k) + (k * k * 9 + k) + (k * c + c);
    const std::size_t flat_expected = (c * c + c) + (c * c * 9 + c) + (c * c + c);
    const std::size_t ce = block_params(c, 2.0), flat = block_params(c, 1.0);
    pass = pass && ce == ce_expected && flat == flat_expected && ce < flat;
    detail << (c == 16 ? "" : ", ") << "C=" << c << ": " << ce << " < " << flat;
  }
  return {pass, detail.str()};
}

Outcome distillation_direction() {
  const auto train = load_idx(mnist("train-images.idx3-ubyte"), mnist("train-labels.idx1-ubyte")).head(2000);
  const auto test = load_idx(mnist("test-images.idx3-ubyte"), mnist("test-labels.idx1-ubyte"), Split::test).head(1000);

  const RunConfig tcfg = default_config(Command::train_teacher);
  const auto teacher = train_teacher(tcfg.resolved_network(), train, test, tcfg.adam, tcfg.train, 0);

  const RunConfig scfg = default_config(Command::distill);
  const NetworkSpec student = scfg.resolved_network();
  double with = 0.0, without = 0.0;
  std::ostringstream per_seed;
  for (std::uint64_t seed : {0, 1, 2}) {
    DistillConfig on = scfg.distill;
    on.lambda2 = 0.5;
    DistillConfig off = scfg.distill;
    off.lambda2 = 0.0;
    const double a = *distill_run(student, *teacher.network, train, test, on, scfg.adam, scfg.train, seed)
                          .report.last()
                          .accuracy;
    const double b = *distill_run(student, *teacher.network, train, test, off, scfg.adam, scfg.train, seed)
                          .report.last()
                          .accuracy;
    with += a / 3.0;
    without += b / 3.0;
    per_seed << " s" << seed << " " << fmt(a, 4) << "/" << fmt(b, 4);
    std::cerr << "distill seed " << seed << ": lambda2=0.5 " << a << ", lambda2=0 " << b << "\n";
  }
  const double delta_pp = 100.0 * (with - without);
  return {delta_pp >= 0.0, "teacher " + fmt(*teacher.report.last().accuracy, 4) + ", mean " + fmt(with, 4) +
                               " (lambda2=0.5) vs " + fmt(without, 4) + " (lambda2=0), delta " + fmt(delta_pp, 3) +
                               " pp;" + per_seed.str()};
}

Outcome determinism() {
  const fs::path dir = testing::fresh_dir("acc_determinism");
  const std::string image = (testing::data_dir() / "images" / "astronaut64.ppm").string();
  write_file(dir / "fit.ini", "[data]\nimage = " + image + "\n");
  write_file(dir / "ablate.ini", "[data]\nimage = " + image + "\n[ablate]\nmode = compute\nseeds = 0,1\n");
  write_file(dir / "teacher.ini", mnist_ini(256, 128));

  struct Case {
    std::string name, args, csv;
  };
  std::vector<Case> cases = {
      {"fit", "fit --config '" + (dir / "fit.ini").string() + "' --steps 8 --seed 3", "metrics.csv"},
      {"ablate", "ablate --config '" + (dir / "ablate.ini").string() + "' --steps 4", "ablation_metrics.csv"},
      {"train-teacher", "train-teacher --config '" + (dir / "teacher.ini").string() + "' --steps 1 --seed 2",
       "metrics.csv"},
      {"gradcheck", "gradcheck", "gradcheck.csv"},
  };

  std::string failures;
  const std::size_t fixed_cases = cases.size();
  for (std::size_t i = 0; i <= fixed_cases; ++i) {
    if (i == fixed_cases) {
      // distill needs the first teacher run's checkpoint
      write_file(dir / "distill.ini", mnist_ini(256, 128) + "[distill]\nteacher = " +
                                          (dir / "train-teacher_a" / "model.ckpt").string() + "\n");
      cases.push_back({"distill", "distill --config '" + (dir / "distill.ini").string() + "' --steps 1 --seed 5",
                       "metrics.csv"});
    }
    const Case& c = cases[i];
    std::string bytes[2];
    bool ran = true;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = dir / (c.name + (rep == 0 ? "_a" : "_b"));
      const int code = run_cli(c.args + " --out '" + out.string() + "'", dir / (c.name + std::to_string(rep) + ".log"));
      ran = ran && code == 0;
      bytes[rep] = testing::slurp(out / c.csv);
    }
    if (!ran || bytes[0].empty() || bytes[0] != bytes[1]) failures += " " + c.name;
  }
  return {failures.empty(), failures.empty() ? "fit, ablate, train-teacher, distill, gradcheck CSVs byte-identical"
                                             : "differing or failed:" + failures};
}

Outcome stage_plumbing() {
  const fs::path dir = testing::fresh_dir("acc_stages");
  write_file(dir / "teacher.ini", mnist_ini(2000, 1000));
  std::string detail;
  bool pass = true;
  for (const std::vector<std::size_t>& stages : {std::vector<std::size_t>{3, 3, 3, 3}, {2, 3, 5, 2}}) {
    std::string flag;
    for (std::size_t s : stages) flag += (flag.empty() ? "" : ",") + std::to_string(s);
    const fs::path out = dir / ("s" + flag);
    const int code = run_cli("train-teacher --config '" + (dir / "teacher.ini").string() + "' --steps 1 --stages " +
                                 flag + " --out '" + out.string() + "'",
                             dir / ("s" + flag + ".log"));
    bool ok = code == 0;
    if (ok) {
      const auto j = nlohmann::json::parse(testing::slurp(out / "summary.json"));
      std::vector<std::size_t> built;
      for (const auto& st : j.at("network").at("stages")) built.push_back(st.at("blocks").get<std::size_t>());
      ok = j.at("stages").get<std::vector<std::size_t>>() == stages && built == stages && j.at("epochs") == 1 &&
           j.at("status") == "ok";
      detail += (detail.empty() ? "" : ", ") + ("[" + flag + "] acc " + fmt(j.at("final_test_accuracy").get<double>(), 3));
    } else {
      detail += (detail.empty() ? "" : ", ") + ("[" + flag + "] exit " + std::to_string(code));
    }
    pass = pass && ok;
  }
  return {pass, detail};
}

Outcome io_exactness() {
  const fs::path dir = testing::fresh_dir("acc_io");
  bool pass = true;
  std::string detail;

  for (const char* name : {"astronaut64.ppm", "astronaut2.ppm"}) {
    const fs::path src = testing::data_dir() / "images" / name;
    const Image img = load_ppm(src);
    save_ppm(img, dir / name);
    const bool same = testing::slurp(src) == testing::slurp(dir / name) && load_ppm(dir / name).pixels == img.pixels;
    pass = pass && same;
  }
  detail += pass ? "ppm round trip exact" : "ppm round trip differs";

  auto be32 = [](std::uint32_t v) {
    return std::string{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
  };
  const std::string labels = be32(0x801) + be32(1) + "\x04";
  write_file(dir / "labels", labels);
  auto rejects = [&](const std::string& images) {
    write_file(dir / "images", images);
    try {
      (void)load_idx(dir / "images", dir / "labels");
    } catch (const ParseError&) {
      return true;
    }
    return false;
  };
  const bool idx_ok = !rejects(be32(0x803) + be32(1) + be32(2) + be32(2) + std::string(4, '\x10')) &&
                      rejects(be32(0x801) + be32(1) + be32(2) + be32(2) + std::string(4, '\x10')) &&
                      rejects(be32(0x803) + be32(2) + be32(2) + be32(2) + std::string(8, '\x10')) &&
                      rejects(be32(0x803) + be32(1) + be32(2) + be32(2) + std::string(3, '\x10')) &&
                      rejects(be32(0x803) + be32(1));
  const auto train = load_idx(mnist("train-images.idx3-ubyte"), mnist("train-labels.idx1-ubyte"));
  const bool fixture_ok = train.size() == 2000 && train.images[0].height == 28 && train.images[0].width == 28;
  pass = pass && idx_ok && fixture_ok;
  detail += std::string(", idx header checks ") + (idx_ok && fixture_ok ? "ok" : "failed");

  const Image tiny = load_ppm(testing::data_dir() / "images" / "astronaut2.ppm");
  NetworkSpec spec;
  spec.out_height = spec.out_width = 2;
  spec.base_height = spec.base_width = 1;
  spec.upsample_factors = {2};
  spec.channels = {32, 16};
  spec.embed.num_frequencies = 2;
  FitLossConfig loss;
  loss.alpha = 1.0;
  AdamConfig adam;
  adam.steps = 2000;
  adam.lr_schedule = LrSchedule::cosine;
  FitOptions opt;
  opt.eval_every = 2000;
  const std::vector<Image> frames{tiny};
  const FitResult fit = fit_run(spec, frames, loss, adam, 0, opt);
  const double p = *fit.report.last().psnr;
  pass = pass && p >= 60.0;
  detail += ", 2x2 fit " + fmt(p, 4) + " dB (" + std::to_string(param_count(*fit.network)) + " params)";
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"SSIM oracle equivalence", ssim_oracle_equivalence},
      {"fit loss boundary identities", fit_loss_identities},
      {"interleaved beats only-MLP at matched budget and wall-clock", ablation_direction},
      {"compression-expansion block smaller than flat", compression_direction},
      {"stage distillation does not hurt accuracy", distillation_direction},
      {"determinism of metric CSVs", determinism},
      {"stage configuration plumbing", stage_plumbing},
      {"I/O exactness", io_exactness},
  };

  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    if (!r.pass) ++failed;
    std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " " << criteria[i].first << ": " << r.detail
              << " [" << fmt(seconds_since(t0), 3) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
