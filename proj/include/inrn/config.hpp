#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "inrn/inre.hpp"
#include "inrn/losses.hpp"
#include "inrn/optim.hpp"

namespace inrn {

enum class Command { fit, ablate, train_teacher, distill, gradcheck };

const char* command_name(Command c);
Command parse_command(std::string_view name);

/// Parsed `[section]` / `key = value` text. Keeps line numbers for errors.
class ConfigFile {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };
  using Section = std::map<std::string, Entry>;

  static ConfigFile parse(std::string_view text, const std::string& source = "<config>");
  static ConfigFile load(const std::filesystem::path& path);

  const std::map<std::string, Section>& sections() const noexcept { return sections_; }
  const std::string& source() const noexcept { return source_; }
  /// Directory relative paths in the file are resolved against.
  const std::filesystem::path& base_dir() const noexcept { return base_dir_; }

 private:
  std::map<std::string, Section> sections_;
  std::string source_;
  std::filesystem::path base_dir_;
};

enum class ArmKind { only_mlp, front_conv, post_conv, interleaved };

const char* arm_name(ArmKind a);
ArmKind parse_arm(std::string_view name);

struct AblationConfig {
  enum class Mode {
    compute,    // every arm gets the reference arm's multiply-accumulate budget
    wallclock,  // every arm gets the same number of seconds
  };
  Mode mode = Mode::compute;
  std::vector<ArmKind> arms = {ArmKind::only_mlp, ArmKind::front_conv, ArmKind::post_conv, ArmKind::interleaved};
  /// Steps of the interleaved arm in compute mode; sets the MAC budget.
  std::size_t reference_steps = 300;
  double seconds = 45.0;
  std::size_t pilot_steps = 3;
  /// The pilot keeps stepping until this much time has passed, as well.
  double pilot_seconds = 1.0;
  double tolerance = 0.10;
  std::vector<std::uint64_t> seeds = {0};
  double lr_only_mlp = 3e-4;
  double lr_front_conv = 1e-3;
  double lr_post_conv = 1e-3;
  double lr_interleaved = 6e-3;
  /// Fourier frequencies of the only-MLP arm (0: raw coordinates, SIREN style).
  std::size_t only_mlp_frequencies = 0;

  double lr_for(ArmKind a) const;
};

struct DataPaths {
  std::vector<std::filesystem::path> frames;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::size_t train_limit = 2000;
  std::size_t test_limit = 1000;
};

struct RunConfig {
  Command command = Command::fit;
  std::uint64_t seed = 0;
  NetworkSpec network;
  /// Classifier stage layout; materialized into network.stages.
  std::vector<std::size_t> stage_blocks = {2, 2, 2, 2};
  std::size_t stage_width = 8;
  FitLossConfig loss;
  AdamConfig adam;
  FitOptions fit;
  ClassifierTrainConfig train;
  DistillConfig distill;
  std::filesystem::path teacher_checkpoint;
  DataPaths data;
  AblationConfig ablate;
  std::filesystem::path out = "out";
  bool overwrite = false;

  /// network with stages filled in from stage_blocks / stage_width.
  NetworkSpec resolved_network() const;
  /// Sorted `section.key = value` lines of every result-affecting field.
  std::string canonical() const;
  /// FNV-1a of canonical(), 16 hex digits.
  std::string digest() const;
  /// The [network] section (plus stage layout), parseable back by apply_config.
  std::string network_ini() const;
};

/// Command defaults; every field has one except data paths.
RunConfig default_config(Command command);

/// Applies every entry of `file`; unknown sections or keys and malformed
/// values are ConfigErrors naming the source line.
void apply_config(RunConfig& cfg, const ConfigFile& file);

/// Validates the fields the command uses, including required data paths.
void validate_for_command(const RunConfig& cfg);

std::vector<std::size_t> parse_size_list(std::string_view text, std::string_view what);

}  // namespace inrn
