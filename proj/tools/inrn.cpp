#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "inrn/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Interleaved INR networks: fitting, ablation, distillation and gradient checks"};
  app.require_subcommand(1, 1);

  inrn::CliOverrides o;
  std::string config, out, stages, fault;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  double alpha = 0, lambda1 = 0, lambda2 = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "run config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--steps", steps, "optimizer steps (fit), reference steps (ablate) or epochs (classifiers)");
    sub->add_option("--stages", stages, "blocks per classifier stage, e.g. 2,3,5,2");
    sub->add_option("--alpha", alpha, "fit loss weight of the L2 term");
    sub->add_option("--lambda1", lambda1, "cross-entropy weight");
    sub->add_option("--lambda2", lambda2, "stage distillation weight");
    sub->add_option("--out", out, "output directory");
    sub->add_flag("--overwrite", o.overwrite, "replace files in a non-empty output directory");
  };

  const std::pair<inrn::Command, const char*> commands[] = {
      {inrn::Command::fit, "fit an image or frame sequence with a generator"},
      {inrn::Command::ablate, "compare the interleaved generator against the baselines at a matched budget"},
      {inrn::Command::train_teacher, "train a multi-stage classifier on the IDX dataset"},
      {inrn::Command::distill, "train a student classifier with stage distillation from a teacher checkpoint"},
      {inrn::Command::gradcheck, "check analytic gradients of every op, loss and network against finite differences"},
  };

  std::vector<std::pair<CLI::App*, inrn::Command>> subs;
  for (auto [cmd, help] : commands) {
    CLI::App* sub = app.add_subcommand(inrn::command_name(cmd), help);
    add_common(sub);
    if (cmd == inrn::Command::gradcheck) {
      sub->add_option("--inject-fault", fault, "scale one op's backward pass (negative control)")->group("");
    }
    subs.emplace_back(sub, cmd);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, std::cout, std::cerr) == 0 ? 0 : inrn::kExitConfig;
  }

  for (auto [sub, cmd] : subs) {
    if (!sub->parsed()) continue;
    try {
      if (sub->count("--config")) o.config = config;
      if (sub->count("--seed")) o.seed = seed;
      if (sub->count("--steps")) o.steps = steps;
      if (sub->count("--stages")) o.stages = inrn::parse_size_list(stages, "--stages");
      if (sub->count("--alpha")) o.alpha = alpha;
      if (sub->count("--lambda1")) o.lambda1 = lambda1;
      if (sub->count("--lambda2")) o.lambda2 = lambda2;
      if (sub->count("--out")) o.out = out;
      if (cmd == inrn::Command::gradcheck && sub->count("--inject-fault")) o.inject_fault = fault;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return inrn::kExitConfig;
    }
    return inrn::run_command(cmd, o, std::cout, std::cerr);
  }
  return inrn::kExitConfig;
}
