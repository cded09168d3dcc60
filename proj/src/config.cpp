#include "inrn/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>

namespace inrn {

const char* command_name(Command c) {
  switch (c) {
    case Command::fit: return "fit";
    case Command::ablate: return "ablate";
    case Command::train_teacher: return "train-teacher";
    case Command::distill: return "distill";
    case Command::gradcheck: return "gradcheck";
  }
  return "?";
}

Command parse_command(std::string_view name) {
  for (Command c : {Command::fit, Command::ablate, Command::train_teacher, Command::distill, Command::gradcheck}) {
    if (name == command_name(c)) return c;
  }
  throw ConfigError("unknown command '" + std::string(name) + "'");
}

const char* arm_name(ArmKind a) {
  switch (a) {
    case ArmKind::only_mlp: return "only_mlp";
    case ArmKind::front_conv: return "front_conv";
    case ArmKind::post_conv: return "post_conv";
    case ArmKind::interleaved: return "interleaved";
  }
  return "?";
}

ArmKind parse_arm(std::string_view name) {
  for (ArmKind a : {ArmKind::only_mlp, ArmKind::front_conv, ArmKind::post_conv, ArmKind::interleaved}) {
    if (name == arm_name(a)) return a;
  }
  throw ConfigError("unknown ablation arm '" + std::string(name) + "'");
}

double AblationConfig::lr_for(ArmKind a) const {
  switch (a) {
    case ArmKind::only_mlp: return lr_only_mlp;
    case ArmKind::front_conv: return lr_front_conv;
    case ArmKind::post_conv: return lr_post_conv;
    case ArmKind::interleaved: return lr_interleaved;
  }
  return lr_interleaved;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto piece = trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(const std::string& text, std::string_view what) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ConfigError(std::string(what) + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& text, std::string_view what) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(std::string(what) + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& text, std::string_view what) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(std::string(what) + ": expected true or false, got '" + text + "'");
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::filesystem::path&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  std::string section;
  std::string key;
  Setter set;
  Getter get;
};

std::string qualified(const std::string& s, const std::string& k) { return s + "." + k; }

template <class Ref>
Field real(std::string s, std::string k, Ref ref) {
  const std::string name = qualified(s, k);
  return {s, k, [ref, name](RunConfig& c, const std::string& v, const auto&) { ref(c) = parse_double(v, name); },
          [ref](const RunConfig& c) { return format_double(ref(c)); }};
}

template <class Ref>
Field count(std::string s, std::string k, Ref ref) {
  const std::string name = qualified(s, k);
  return {s, k,
          [ref, name](RunConfig& c, const std::string& v, const auto&) {
            ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(parse_u64(v, name));
          },
          [ref](const RunConfig& c) { return std::to_string(ref(c)); }};
}

template <class Ref>
Field flag(std::string s, std::string k, Ref ref) {
  const std::string name = qualified(s, k);
  return {s, k, [ref, name](RunConfig& c, const std::string& v, const auto&) { ref(c) = parse_bool(v, name); },
          [ref](const RunConfig& c) { return std::string(ref(c) ? "true" : "false"); }};
}

template <class Ref>
Field sizes(std::string s, std::string k, Ref ref) {
  const std::string name = qualified(s, k);
  return {s, k, [ref, name](RunConfig& c, const std::string& v, const auto&) { ref(c) = parse_size_list(v, name); },
          [ref](const RunConfig& c) { return join(ref(c)); }};
}

template <class Ref>
Field path(std::string s, std::string k, Ref ref) {
  return {s, k,
          [ref](RunConfig& c, const std::string& v, const std::filesystem::path& base) {
            const std::filesystem::path p(v);
            ref(c) = p.is_relative() ? base / p : p;
          },
          [ref](const RunConfig& c) { return ref(c).filename().string(); }};
}

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    f.push_back(count("run", "seed", [](auto& c) -> auto& { return c.seed; }));
    f.push_back({"run", "out",
                 [](RunConfig& c, const std::string& v, const std::filesystem::path&) { c.out = v; },
                 nullptr});

    f.push_back({"network", "kind",
                 [](RunConfig& c, const std::string& v, const auto&) { c.network.kind = parse_kind(v); },
                 [](const RunConfig& c) { return std::string(kind_name(c.network.kind)); }});
    f.push_back(count("network", "embed_frequencies", [](auto& c) -> auto& { return c.network.embed.num_frequencies; }));
    f.push_back(real("network", "embed_base", [](auto& c) -> auto& { return c.network.embed.base; }));
    f.push_back(flag("network", "embed_include_input", [](auto& c) -> auto& { return c.network.embed.include_input; }));
    f.push_back(real("network", "compression_ratio", [](auto& c) -> auto& { return c.network.compression_ratio; }));
    f.push_back({"network", "activation",
                 [](RunConfig& c, const std::string& v, const auto&) { c.network.activation = parse_activation(v); },
                 [](const RunConfig& c) { return std::string(activation_name(c.network.activation)); }});
    f.push_back(count("network", "conv_kernel", [](auto& c) -> auto& { return c.network.conv_kernel; }));
    f.push_back(count("network", "out_height", [](auto& c) -> auto& { return c.network.out_height; }));
    f.push_back(count("network", "out_width", [](auto& c) -> auto& { return c.network.out_width; }));
    f.push_back(count("network", "out_channels", [](auto& c) -> auto& { return c.network.out_channels; }));
    f.push_back(count("network", "base_height", [](auto& c) -> auto& { return c.network.base_height; }));
    f.push_back(count("network", "base_width", [](auto& c) -> auto& { return c.network.base_width; }));
    f.push_back(sizes("network", "upsample_factors", [](auto& c) -> auto& { return c.network.upsample_factors; }));
    f.push_back(sizes("network", "channels", [](auto& c) -> auto& { return c.network.channels; }));
    f.push_back(count("network", "in_channels", [](auto& c) -> auto& { return c.network.in_channels; }));
    f.push_back(count("network", "num_classes", [](auto& c) -> auto& { return c.network.num_classes; }));
    f.push_back(sizes("network", "stages", [](auto& c) -> auto& { return c.stage_blocks; }));
    f.push_back(count("network", "stage_width", [](auto& c) -> auto& { return c.stage_width; }));
    f.push_back(flag("network", "residual", [](auto& c) -> auto& { return c.network.residual; }));
    f.push_back(count("network", "mlp_width", [](auto& c) -> auto& { return c.network.mlp_width; }));
    f.push_back(count("network", "mlp_depth", [](auto& c) -> auto& { return c.network.mlp_depth; }));
    f.push_back(count("network", "conv_width", [](auto& c) -> auto& { return c.network.conv_width; }));
    f.push_back(count("network", "conv_layers", [](auto& c) -> auto& { return c.network.conv_layers; }));

    f.push_back(real("loss", "alpha", [](auto& c) -> auto& { return c.loss.alpha; }));
    f.push_back(count("loss", "ssim_window", [](auto& c) -> auto& { return c.loss.ssim_window; }));
    f.push_back(real("loss", "ssim_sigma", [](auto& c) -> auto& { return c.loss.ssim_sigma; }));
    f.push_back(real("loss", "dynamic_range", [](auto& c) -> auto& { return c.loss.dynamic_range; }));
    f.push_back(real("loss", "k1", [](auto& c) -> auto& { return c.loss.k1; }));
    f.push_back(real("loss", "k2", [](auto& c) -> auto& { return c.loss.k2; }));
    f.push_back({"loss", "l2_mode",
                 [](RunConfig& c, const std::string& v, const auto&) {
                   if (v == "norm") c.loss.l2_mode = FitLossConfig::L2Mode::norm_over_n;
                   else if (v == "mse") c.loss.l2_mode = FitLossConfig::L2Mode::mse;
                   else throw ConfigError("loss.l2_mode: expected norm or mse, got '" + v + "'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.loss.l2_mode == FitLossConfig::L2Mode::mse ? "mse" : "norm");
                 }});

    f.push_back(real("optim", "lr", [](auto& c) -> auto& { return c.adam.lr; }));
    f.push_back(real("optim", "beta1", [](auto& c) -> auto& { return c.adam.beta1; }));
    f.push_back(real("optim", "beta2", [](auto& c) -> auto& { return c.adam.beta2; }));
    f.push_back(real("optim", "eps", [](auto& c) -> auto& { return c.adam.eps; }));
    f.push_back(count("optim", "steps", [](auto& c) -> auto& { return c.adam.steps; }));
    f.push_back({"optim", "lr_schedule",
                 [](RunConfig& c, const std::string& v, const auto&) { c.adam.lr_schedule = parse_schedule(v); },
                 [](const RunConfig& c) { return std::string(schedule_name(c.adam.lr_schedule)); }});

    f.push_back(count("fit", "eval_every", [](auto& c) -> auto& { return c.fit.eval_every; }));

    f.push_back(count("train", "epochs", [](auto& c) -> auto& { return c.train.epochs; }));
    f.push_back(count("train", "batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
    f.push_back(count("train", "eval_batch", [](auto& c) -> auto& { return c.train.eval_batch; }));

    f.push_back(real("distill", "lambda1", [](auto& c) -> auto& { return c.distill.lambda1; }));
    f.push_back(real("distill", "lambda2", [](auto& c) -> auto& { return c.distill.lambda2; }));
    f.push_back(sizes("distill", "stage_set", [](auto& c) -> auto& { return c.distill.stage_set; }));
    f.push_back(flag("distill", "teacher_transform", [](auto& c) -> auto& { return c.distill.teacher_transform; }));
    f.push_back(path("distill", "teacher", [](auto& c) -> auto& { return c.teacher_checkpoint; }));

    f.push_back({"data", "image",
                 [](RunConfig& c, const std::string& v, const std::filesystem::path& base) {
                   const std::filesystem::path p(v);
                   c.data.frames = {p.is_relative() ? base / p : p};
                 },
                 nullptr});
    f.push_back({"data", "frames",
                 [](RunConfig& c, const std::string& v, const std::filesystem::path& base) {
                   c.data.frames.clear();
                   for (const auto& item : split_list(v)) {
                     const std::filesystem::path p(item);
                     c.data.frames.push_back(p.is_relative() ? base / p : p);
                   }
                   if (c.data.frames.empty()) throw ConfigError("data.frames: empty list");
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (const auto& p : c.data.frames) out += (out.empty() ? "" : ",") + p.filename().string();
                   return out;
                 }});
    f.push_back(path("data", "train_images", [](auto& c) -> auto& { return c.data.train_images; }));
    f.push_back(path("data", "train_labels", [](auto& c) -> auto& { return c.data.train_labels; }));
    f.push_back(path("data", "test_images", [](auto& c) -> auto& { return c.data.test_images; }));
    f.push_back(path("data", "test_labels", [](auto& c) -> auto& { return c.data.test_labels; }));
    f.push_back(count("data", "train_limit", [](auto& c) -> auto& { return c.data.train_limit; }));
    f.push_back(count("data", "test_limit", [](auto& c) -> auto& { return c.data.test_limit; }));

    f.push_back({"ablate", "mode",
                 [](RunConfig& c, const std::string& v, const auto&) {
                   if (v == "compute") c.ablate.mode = AblationConfig::Mode::compute;
                   else if (v == "wallclock") c.ablate.mode = AblationConfig::Mode::wallclock;
                   else throw ConfigError("ablate.mode: expected compute or wallclock, got '" + v + "'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.ablate.mode == AblationConfig::Mode::compute ? "compute" : "wallclock");
                 }});
    f.push_back({"ablate", "arms",
                 [](RunConfig& c, const std::string& v, const auto&) {
                   c.ablate.arms.clear();
                   for (const auto& item : split_list(v)) c.ablate.arms.push_back(parse_arm(item));
                   if (c.ablate.arms.empty()) throw ConfigError("ablate.arms: empty list");
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (ArmKind a : c.ablate.arms) out += (out.empty() ? "" : ",") + std::string(arm_name(a));
                   return out;
                 }});
    f.push_back(count("ablate", "reference_steps", [](auto& c) -> auto& { return c.ablate.reference_steps; }));
    f.push_back(real("ablate", "seconds", [](auto& c) -> auto& { return c.ablate.seconds; }));
    f.push_back(count("ablate", "pilot_steps", [](auto& c) -> auto& { return c.ablate.pilot_steps; }));
    f.push_back(real("ablate", "pilot_seconds", [](auto& c) -> auto& { return c.ablate.pilot_seconds; }));
    f.push_back(real("ablate", "tolerance", [](auto& c) -> auto& { return c.ablate.tolerance; }));
    f.push_back({"ablate", "seeds",
                 [](RunConfig& c, const std::string& v, const auto&) {
                   c.ablate.seeds.clear();
                   for (std::size_t s : parse_size_list(v, "ablate.seeds")) c.ablate.seeds.push_back(s);
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (auto s : c.ablate.seeds) out += (out.empty() ? "" : ",") + std::to_string(s);
                   return out;
                 }});
    f.push_back(real("ablate", "lr_only_mlp", [](auto& c) -> auto& { return c.ablate.lr_only_mlp; }));
    f.push_back(real("ablate", "lr_front_conv", [](auto& c) -> auto& { return c.ablate.lr_front_conv; }));
    f.push_back(real("ablate", "lr_post_conv", [](auto& c) -> auto& { return c.ablate.lr_post_conv; }));
    f.push_back(real("ablate", "lr_interleaved", [](auto& c) -> auto& { return c.ablate.lr_interleaved; }));
    f.push_back(count("ablate", "only_mlp_frequencies", [](auto& c) -> auto& { return c.ablate.only_mlp_frequencies; }));
    return f;
  }();
  return fields;
}

}  // namespace

std::vector<std::size_t> parse_size_list(std::string_view text, std::string_view what) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(text)) out.push_back(parse_u64(item, what));
  if (out.empty()) throw ConfigError(std::string(what) + ": empty list");
  return out;
}

ConfigFile ConfigFile::parse(std::string_view text, const std::string& source) {
  ConfigFile file;
  file.source_ = source;
  std::string current;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  auto fail = [&](const std::string& what) -> void {
    throw ConfigError(source + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      current = trim(std::string_view(line).substr(1, line.size() - 2));
      if (current.empty()) fail("empty section name");
      file.sections_[current];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    if (current.empty()) fail("key outside of any section");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) fail("empty key");
    auto& section = file.sections_[current];
    if (section.count(key)) fail("duplicate key '" + key + "' in [" + current + "]");
    section[key] = {value, line_no};
  }
  return file;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  ConfigFile file = parse(text, path.string());
  file.base_dir_ = path.parent_path();
  return file;
}

RunConfig default_config(Command command) {
  RunConfig c;
  c.command = command;
  switch (command) {
    case Command::fit:
    case Command::gradcheck:
      break;
    case Command::ablate:
      c.network.compression_ratio = 0.5;
      c.adam.lr_schedule = LrSchedule::cosine;
      c.fit.eval_every = 50;
      break;
    case Command::train_teacher:
      c.network.kind = NetworkKind::multi_stage_classifier;
      c.adam = classifier_adam_defaults();
      c.stage_blocks = {1, 1, 1, 1};
      c.stage_width = 16;
      break;
    case Command::distill:
      c.network.kind = NetworkKind::multi_stage_classifier;
      c.adam = classifier_adam_defaults();
      c.stage_blocks = {1, 1, 2, 1};
      c.stage_width = 8;
      break;
  }
  return c;
}

void apply_config(RunConfig& cfg, const ConfigFile& file) {
  const auto& fields = schema();
  for (const auto& [section, entries] : file.sections()) {
    for (const auto& [key, entry] : entries) {
      auto it = std::find_if(fields.begin(), fields.end(),
                             [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == fields.end()) {
        throw ConfigError(file.source() + ":" + std::to_string(entry.line) + ": unknown key '" + key + "' in [" +
                          section + "]");
      }
      try {
        it->set(cfg, entry.value, file.base_dir());
      } catch (const ConfigError& e) {
        throw ConfigError(file.source() + ":" + std::to_string(entry.line) + ": " + e.what());
      }
    }
  }
}

NetworkSpec RunConfig::resolved_network() const {
  NetworkSpec spec = network;
  spec.seed = seed;
  if (spec.kind == NetworkKind::multi_stage_classifier) {
    if (stage_blocks.size() != 4) {
      throw ConfigError("stage config needs exactly 4 entries, got " + std::to_string(stage_blocks.size()) +
                        " (" + join(stage_blocks) + ")");
    }
    if (std::find(stage_blocks.begin(), stage_blocks.end(), 0) != stage_blocks.end()) {
      throw ConfigError("every stage needs at least one block");
    }
    spec.stages = make_stages(stage_blocks, stage_width);
  }
  return spec;
}

std::string RunConfig::canonical() const {
  std::vector<std::string> lines;
  for (const auto& f : schema()) {
    if (f.get) lines.push_back(qualified(f.section, f.key) + " = " + f.get(*this));
  }
  std::sort(lines.begin(), lines.end());
  std::string out = std::string("command = ") + command_name(command) + "\n";
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::string RunConfig::digest() const { return hex64(fnv1a(canonical())); }

std::string RunConfig::network_ini() const {
  std::string out = "[network]\n";
  for (const auto& f : schema()) {
    if (f.section == "network" && f.get) out += f.key + " = " + f.get(*this) + "\n";
  }
  return out;
}

void validate_for_command(const RunConfig& cfg) {
  auto require = [](const std::filesystem::path& p, const char* key) {
    if (p.empty()) throw ConfigError(std::string("missing required data path ") + key);
  };
  switch (cfg.command) {
    case Command::fit:
    case Command::ablate:
      if (cfg.data.frames.empty()) throw ConfigError("missing required data path data.image (or data.frames)");
      if (cfg.command == Command::ablate && cfg.data.frames.size() != 1) {
        throw ConfigError("ablate fits exactly one image");
      }
      cfg.loss.validate();
      cfg.adam.validate();
      if (cfg.network.kind == NetworkKind::multi_stage_classifier) {
        throw ConfigError("fitting needs an image-producing network kind");
      }
      if (cfg.command == Command::ablate) {
        if (cfg.network.kind != NetworkKind::single_stage_generator) {
          throw ConfigError("ablate: [network] describes the interleaved arm and must be single_stage_generator");
        }
        if (!(cfg.ablate.tolerance > 0.0 && cfg.ablate.tolerance < 1.0)) {
          throw ConfigError("ablate.tolerance must lie in (0,1)");
        }
        if (cfg.ablate.seeds.empty()) throw ConfigError("ablate.seeds: empty list");
        if (!(cfg.ablate.seconds > 0.0)) throw ConfigError("ablate.seconds must be positive");
        if (!(cfg.ablate.pilot_seconds >= 0.0)) throw ConfigError("ablate.pilot_seconds must be non-negative");
        if (cfg.ablate.reference_steps == 0) throw ConfigError("ablate.reference_steps must be >= 1");
      }
      break;
    case Command::distill:
      require(cfg.teacher_checkpoint, "distill.teacher");
      cfg.distill.validate();
      [[fallthrough]];
    case Command::train_teacher:
      require(cfg.data.train_images, "data.train_images");
      require(cfg.data.train_labels, "data.train_labels");
      require(cfg.data.test_images, "data.test_images");
      require(cfg.data.test_labels, "data.test_labels");
      cfg.adam.validate();
      if (cfg.network.kind != NetworkKind::multi_stage_classifier) {
        throw ConfigError("classifier commands need network.kind = multi_stage_classifier");
      }
      (void)cfg.resolved_network();
      if (cfg.train.epochs == 0 || cfg.train.batch_size == 0) throw ConfigError("epochs and batch_size must be >= 1");
      break;
    case Command::gradcheck:
      break;
  }
}

}  // namespace inrn
