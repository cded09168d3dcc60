#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "inrn/config.hpp"

namespace inrn {

/// Command-line values that take precedence over the config file.
struct CliOverrides {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  /// Optimizer steps for fit, reference steps for ablate, epochs for the
  /// classifier commands.
  std::optional<std::size_t> steps;
  std::optional<std::vector<std::size_t>> stages;
  std::optional<double> alpha;
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  std::optional<std::filesystem::path> out;
  bool overwrite = false;
  /// gradcheck only: scale the backward pass of this op kind.
  std::optional<std::string> inject_fault;
};

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,     // an arm failed, a gradient check failed
  kExitConfig = 2,      // bad flags, config, or input files
  kExitDivergence = 3,  // non-finite loss or gradient during training
};

/// Defaults, then the config file, then the flags; validated for the command.
RunConfig resolve_config(Command command, const CliOverrides& overrides);

/// Creates `dir`, refusing a non-empty one unless `overwrite` is set.
void prepare_output_dir(const std::filesystem::path& dir, bool overwrite);

int cmd_fit(const RunConfig& cfg, std::ostream& log);
int cmd_ablate(const RunConfig& cfg, std::ostream& log);
int cmd_train_teacher(const RunConfig& cfg, std::ostream& log);
int cmd_distill(const RunConfig& cfg, std::ostream& log);
int cmd_gradcheck(const RunConfig& cfg, std::ostream& report, std::ostream& log,
                  const std::optional<std::string>& inject_fault = {});

/// Resolves the config and dispatches; every error becomes a message on
/// `log` and a nonzero exit code.
int run_command(Command command, const CliOverrides& overrides, std::ostream& report, std::ostream& log);

}  // namespace inrn
