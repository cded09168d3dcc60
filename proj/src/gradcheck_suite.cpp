#include "inrn/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <map>

#include <cmath>

#include "inrn/losses.hpp"
#include "inrn/optim.hpp"

namespace inrn {
namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

// Weighted sum so that every output coordinate carries a distinct gradient.
Tensor project(const Tensor& y, std::uint64_t salt = 7) {
  Rng rng(salt);
  return sum(y * random_tensor(y.shape(), rng));
}

double check(const std::function<Tensor(std::span<const Tensor>)>& f, std::vector<Tensor> inputs) {
  return grad_check([&](std::span<const Tensor> in) { return project(f(in)); }, inputs);
}

// Values kept clear of the kinks of relu/clamp/sqrt.
Tensor away_from(const Shape& shape, Rng& rng, const std::vector<double>& kinks, double margin) {
  Tensor t(shape);
  for (double& v : t.mutable_data()) {
    double x = 0.0;
    bool ok = false;
    while (!ok) {
      x = rng.uniform(-2.0, 2.0);
      ok = std::all_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(x - k) > margin; });
    }
    v = x;
  }
  return t;
}

using OpCase = std::function<double(Rng&)>;

std::map<std::string, OpCase, std::less<>> op_cases() {
  std::map<std::string, OpCase, std::less<>> c;
  const Shape s{3, 4};
  c["add"] = [s](Rng& r) {
    return std::max(check([](auto in) { return in[0] + in[1]; }, {random_tensor(s, r), random_tensor(s, r)}),
                    check([](auto in) { return in[0] + in[1]; }, {random_tensor(s, r), random_tensor({1}, r)}));
  };
  c["sub"] = [s](Rng& r) {
    return std::max(check([](auto in) { return in[0] - in[1]; }, {random_tensor(s, r), random_tensor(s, r)}),
                    check([](auto in) { return in[0] - in[1]; }, {random_tensor({1}, r), random_tensor(s, r)}));
  };
  c["mul"] = [s](Rng& r) {
    return std::max(check([](auto in) { return in[0] * in[1]; }, {random_tensor(s, r), random_tensor(s, r)}),
                    check([](auto in) { return in[0] * in[1]; }, {random_tensor(s, r), random_tensor({1}, r)}));
  };
  c["div"] = [s](Rng& r) {
    return check([](auto in) { return in[0] / in[1]; }, {random_tensor(s, r), random_tensor(s, r, 0.5, 2.0)});
  };
  c["add_scalar"] = [s](Rng& r) { return check([](auto in) { return in[0] + 0.3; }, {random_tensor(s, r)}); };
  c["mul_scalar"] = [s](Rng& r) { return check([](auto in) { return in[0] * -1.7; }, {random_tensor(s, r)}); };
  c["relu"] = [s](Rng& r) { return check([](auto in) { return relu(in[0]); }, {away_from(s, r, {0.0}, 0.01)}); };
  c["gelu"] = [s](Rng& r) { return check([](auto in) { return gelu(in[0]); }, {random_tensor(s, r, -3, 3)}); };
  c["sine"] = [s](Rng& r) { return check([](auto in) { return sine(in[0]); }, {random_tensor(s, r, -3, 3)}); };
  c["cosine"] = [s](Rng& r) { return check([](auto in) { return cosine(in[0]); }, {random_tensor(s, r, -3, 3)}); };
  c["sqrt"] = [s](Rng& r) { return check([](auto in) { return sqrt(in[0]); }, {random_tensor(s, r, 0.2, 2.0)}); };
  c["clamp"] = [s](Rng& r) {
    return check([](auto in) { return clamp(in[0], -0.5, 0.5); }, {away_from(s, r, {-0.5, 0.5}, 0.01)});
  };
  c["sum"] = [s](Rng& r) { return check([](auto in) { return sum(in[0]) * 1.3; }, {random_tensor(s, r)}); };
  c["mean"] = [s](Rng& r) { return check([](auto in) { return mean(in[0]) * 1.3; }, {random_tensor(s, r)}); };
  c["softmax_rows"] = [s](Rng& r) {
    return check([](auto in) { return softmax_rows(in[0]); }, {random_tensor(s, r, -3, 3)});
  };
  c["log_softmax_rows"] = [s](Rng& r) {
    return check([](auto in) { return log_softmax_rows(in[0]); }, {random_tensor(s, r, -3, 3)});
  };
  c["pick_rows"] = [s](Rng& r) {
    const std::vector<std::size_t> idx{2, 0, 3};
    return check([idx](auto in) { return pick_rows(in[0], idx); }, {random_tensor(s, r)});
  };
  c["matmul"] = [](Rng& r) {
    return check([](auto in) { return matmul(in[0], in[1]); }, {random_tensor({3, 5}, r), random_tensor({5, 2}, r)});
  };
  c["add_rowwise"] = [s](Rng& r) {
    return check([](auto in) { return add_rowwise(in[0], in[1]); }, {random_tensor(s, r), random_tensor({4}, r)});
  };
  c["reshape"] = [s](Rng& r) {
    return check([](auto in) { return reshape(in[0], {2, 6}) * reshape(in[0], {2, 6}); }, {random_tensor(s, r)});
  };
  c["transpose2d"] = [s](Rng& r) {
    return check([](auto in) { return transpose2d(in[0]); }, {random_tensor(s, r)});
  };
  c["permute"] = [](Rng& r) {
    return check([](auto in) { return permute(in[0], {2, 0, 1}); }, {random_tensor({2, 3, 4}, r)});
  };
  c["concat"] = [](Rng& r) {
    return std::max(check([](auto in) { return concat(in, 0); }, {random_tensor({2, 3}, r), random_tensor({1, 3}, r)}),
                    check([](auto in) { return concat(in, 1); }, {random_tensor({2, 3}, r), random_tensor({2, 2}, r)}));
  };
  c["conv2d"] = [](Rng& r) {
    double worst = 0.0;
    // same padding, stride 1
    worst = std::max(worst, check([](auto in) { return conv2d(in[0], in[1], &in[2], Conv2dOptions::same(5, 5, 3, 3, 1)); },
                                  {random_tensor({2, 2, 5, 5}, r), random_tensor({3, 2, 3, 3}, r), random_tensor({3}, r)}));
    // stride 2 with the extra padding row/column at bottom/right
    worst = std::max(worst, check([](auto in) { return conv2d(in[0], in[1], &in[2], Conv2dOptions::same(6, 6, 3, 3, 2)); },
                                  {random_tensor({1, 2, 6, 6}, r), random_tensor({2, 2, 3, 3}, r), random_tensor({2}, r)}));
    // position-wise (1x1) fast path, no bias
    worst = std::max(worst, check([](auto in) { return conv2d(in[0], in[1], nullptr, Conv2dOptions{}); },
                                  {random_tensor({2, 3, 3, 4}, r), random_tensor({2, 3, 1, 1}, r)}));
    return worst;
  };
  c["pixel_shuffle"] = [](Rng& r) {
    return check([](auto in) { return pixel_shuffle(in[0], 2); }, {random_tensor({1, 8, 2, 3}, r)});
  };
  c["pixel_unshuffle"] = [](Rng& r) {
    return check([](auto in) { return pixel_unshuffle(in[0], 2); }, {random_tensor({1, 2, 4, 6}, r)});
  };
  c["global_avg_pool"] = [](Rng& r) {
    return check([](auto in) { return global_avg_pool(in[0]); }, {random_tensor({2, 3, 3, 2}, r)});
  };
  c["resize_nearest"] = [](Rng& r) {
    return std::max(check([](auto in) { return resize_nearest(in[0], 5, 3); }, {random_tensor({1, 2, 3, 4}, r)}),
                    check([](auto in) { return resize_nearest(in[0], 2, 2); }, {random_tensor({1, 2, 4, 5}, r)}));
  };
  return c;
}

NetworkSpec mini_generator(NetworkKind kind) {
  NetworkSpec s;
  s.kind = kind;
  s.seed = 11;
  s.out_height = s.out_width = 8;
  s.base_height = s.base_width = 2;
  s.upsample_factors = {2, 2};
  s.channels = {4, 4, 4};
  s.embed.num_frequencies = 2;
  s.mlp_width = 6;
  s.mlp_depth = 2;
  s.conv_width = 4;
  s.conv_layers = 2;
  return s;
}

NetworkSpec mini_classifier() {
  NetworkSpec s;
  s.kind = NetworkKind::multi_stage_classifier;
  s.seed = 12;
  s.in_channels = 1;
  s.num_classes = 3;
  s.stages = make_stages({1, 1, 1, 1}, 2);
  return s;
}

double check_generator(NetworkKind kind) {
  auto net = build_generator(mini_generator(kind));
  Rng rng(21);
  const Tensor target = random_tensor({1, 8, 8, 3}, rng, 0.0, 1.0);
  auto loss = [&] {
    const Tensor d = net->render(time_coords(1)) - target;
    return mean(d * d);
  };
  return grad_check_parameters(loss, net->parameters(), 1e-5, 12);
}

double check_classifier() {
  auto net = build_multi_stage(mini_classifier());
  Rng rng(22);
  const Tensor x = random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
  const std::vector<std::size_t> labels{1, 2};
  auto loss = [&] {
    const auto out = net->forward(x);
    Tensor l = cross_entropy(out.logits, labels);
    for (const auto& f : out.stages.features) l = l + mean(f * f) * 0.1;
    return l;
  };
  return grad_check_parameters(loss, net->parameters(), 1e-5, 12);
}

double check_fit_loss() {
  Rng rng(31);
  FitLossConfig cfg;
  cfg.ssim_window = 7;
  const Tensor target = random_tensor({8, 8, 3}, rng, 0.0, 1.0);
  double worst = 0.0;
  for (auto mode : {FitLossConfig::L2Mode::norm_over_n, FitLossConfig::L2Mode::mse}) {
    cfg.l2_mode = mode;
    worst = std::max(worst, grad_check([&](std::span<const Tensor> in) { return fit_loss(in[0], target, cfg); },
                                       std::vector<Tensor>{random_tensor({8, 8, 3}, rng, 0.0, 1.0)}));
  }
  return worst;
}

double check_ssim() {
  Rng rng(32);
  FitLossConfig cfg;
  cfg.ssim_window = 5;
  std::vector<Tensor> in{random_tensor({7, 6, 2}, rng, 0.0, 1.0), random_tensor({7, 6, 2}, rng, 0.0, 1.0)};
  return grad_check([&](std::span<const Tensor> v) { return ssim(v[0], v[1], cfg); }, in);
}

double check_cross_entropy() {
  Rng rng(33);
  const std::vector<std::size_t> labels{0, 3, 1};
  return grad_check([&](std::span<const Tensor> v) { return cross_entropy(v[0], labels); },
                    std::vector<Tensor>{random_tensor({3, 4}, rng, -2, 2)});
}

// Student and aligner parameters against a frozen teacher; the teacher must
// receive no gradient at all.
double check_ms_loss(bool teacher_side) {
  auto student = build_multi_stage(mini_classifier());
  NetworkSpec tspec = mini_classifier();
  tspec.seed = 99;
  tspec.stages = make_stages({1, 1, 1, 1}, 3);
  auto teacher = build_multi_stage(tspec);
  Rng rng(34);
  const Tensor x = random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
  const auto s0 = student->forward(x).stages.features;
  const auto t0 = teacher->forward(x).stages.features;
  std::vector<StageDims> sd, td;
  for (const auto& f : s0) sd.push_back(stage_dims(f));
  for (const auto& f : t0) td.push_back(stage_dims(f));
  ParameterSet aligner_params;
  Rng arng(35);
  const auto aligners = make_stage_aligners(aligner_params, sd, td, arng, teacher_side);
  const std::vector<std::size_t> stage_set{1, 2, 3, 4};

  // Teacher forward under the tape: any gradient reaching it is a leak.
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(ms_loss(student->forward(x).stages, teacher->forward(x).stages, aligners, stage_set));
    auto& tp = teacher->parameters();
    for (std::size_t i = 0; i < tp.size(); ++i) {
      const Tensor g_i = gradient(tape, tp[i]);
      for (double g : g_i.data()) {
        if (g != 0.0) throw NumericError("ms_loss leaked a gradient into teacher parameter " + tp[i].name);
      }
    }
  }
  const StageOutputs teacher_out = teacher->forward(x).stages;
  auto loss = [&] { return ms_loss(student->forward(x).stages, teacher_out, aligners, stage_set); };
  return std::max(grad_check_parameters(loss, student->parameters(), 1e-5, 12),
                  grad_check_parameters(loss, aligner_params, 1e-5, 12));
}

double check_final_loss() {
  Rng rng(36);
  const std::vector<std::size_t> labels{2, 0};
  DistillConfig cfg;
  cfg.lambda1 = 0.8;
  cfg.lambda2 = 0.4;
  return grad_check([&](std::span<const Tensor> v) { return final_loss(v[0], labels, v[1], cfg); },
                    std::vector<Tensor>{random_tensor({2, 3}, rng, -2, 2), random_tensor({1}, rng, 0, 1)});
}

GradCheckEntry evaluate(std::string name, std::string category, const std::function<double()>& f, double tol) {
  GradCheckEntry e{std::move(name), std::move(category), 0.0, false, {}};
  try {
    e.max_rel_error = f();
    e.passed = e.max_rel_error <= tol;
  } catch (const std::exception& ex) {
    e.error = ex.what();
    e.passed = false;
  }
  return e;
}

}  // namespace

double op_gradient_error(std::string_view kind, std::uint64_t seed) {
  const auto cases = op_cases();
  auto it = cases.find(kind);
  if (it == cases.end()) throw ContractError("no gradient check case for op '" + std::string(kind) + "'");
  Rng rng(seed);
  return it->second(rng);
}

std::vector<GradCheckEntry> run_gradcheck_suite(double tolerance) {
  std::vector<GradCheckEntry> out;
  const auto cases = op_cases();
  for (std::string_view kind : registered_op_kinds()) {
    auto it = cases.find(kind);
    if (it == cases.end()) {
      out.push_back({std::string(kind), "op", 0.0, false, "no gradient check case registered"});
      continue;
    }
    Rng rng(fnv1a(kind));
    out.push_back(evaluate(std::string(kind), "op", [&] { return it->second(rng); }, tolerance));
  }
  for (NetworkKind kind : {NetworkKind::single_stage_generator, NetworkKind::baseline_only_mlp,
                           NetworkKind::baseline_front_conv, NetworkKind::baseline_post_conv}) {
    out.push_back(evaluate(std::string("network:") + kind_name(kind) + " 8x8", "network",
                           [kind] { return check_generator(kind); }, tolerance));
  }
  out.push_back(evaluate("network:multi_stage_classifier 16x16", "network", check_classifier, tolerance));
  out.push_back(evaluate("loss:fit_loss", "loss", check_fit_loss, tolerance));
  out.push_back(evaluate("loss:ssim", "loss", check_ssim, tolerance));
  out.push_back(evaluate("loss:cross_entropy", "loss", check_cross_entropy, tolerance));
  out.push_back(evaluate("loss:ms_loss", "loss", [] { return check_ms_loss(false); }, tolerance));
  out.push_back(evaluate("loss:ms_loss teacher_transform", "loss", [] { return check_ms_loss(true); }, tolerance));
  out.push_back(evaluate("loss:final_loss", "loss", check_final_loss, tolerance));
  return out;
}

}  // namespace inrn
