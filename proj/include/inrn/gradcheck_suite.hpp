#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace inrn {

struct GradCheckEntry {
  std::string name;      // op kind, "network:<kind>" or "loss:<name>"
  std::string category;  // op, network, loss
  double max_rel_error = 0.0;
  bool passed = false;
  std::string error;     // set when the check itself threw
};

inline constexpr double kGradCheckTolerance = 1e-4;

/// Max relative gradient error of one op's check case, inputs drawn from
/// `seed`.
double op_gradient_error(std::string_view kind, std::uint64_t seed);

/// Central-difference check of every registered op (one entry each, in
/// registration order), every network kind on a miniature instance, and
/// every training loss.
std::vector<GradCheckEntry> run_gradcheck_suite(double tolerance = kGradCheckTolerance);

}  // namespace inrn
