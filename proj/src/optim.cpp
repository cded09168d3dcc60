#include "inrn/optim.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>

namespace inrn {

const char* schedule_name(LrSchedule s) { return s == LrSchedule::cosine ? "cosine" : "constant"; }

LrSchedule parse_schedule(std::string_view name) {
  if (name == "constant") return LrSchedule::constant;
  if (name == "cosine") return LrSchedule::cosine;
  throw ConfigError("unknown lr_schedule '" + std::string(name) + "' (constant, cosine)");
}

void AdamConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and non-negative");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("beta1 and beta2 must lie in (0,1)");
  }
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (steps < 1) throw ConfigError("steps must be at least 1");
}

double AdamConfig::lr_at(std::size_t t, std::size_t horizon) const {
  if (lr_schedule == LrSchedule::constant || horizon <= 1) return lr;
  const double progress = static_cast<double>(t - 1) / static_cast<double>(horizon - 1);
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

void adam_step(ParameterSet& params, std::span<const Tensor> grads, AdamState& state, const AdamConfig& cfg,
               std::size_t t, double lr) {
  if (t < 1) throw ContractError("adam_step: t must be >= 1");
  if (grads.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].value.size(), 0.0);
      state.v[i].assign(params[i].value.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state does not match the parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& g = grads[i];
    if (g.size() == 0) continue;
    if (g.shape() != params[i].value.shape()) {
      throw DimensionError("adam_step: gradient of " + params[i].name + " has shape " + shape_string(g.shape()) +
                           ", parameter " + shape_string(params[i].value.shape()));
    }
    for (double x : g.data()) {
      if (!std::isfinite(x)) throw NumericError("non-finite gradient for parameter " + params[i].name);
    }
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const std::size_t n = m.size();
    const bool zero = grads[i].size() == 0;
    const auto g = grads[i].data();
    auto w = params[i].value.mutable_data();
    for (std::size_t k = 0; k < n; ++k) {
      const double gk = zero ? 0.0 : g[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      w[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.eps);
    }
  }
}

Adam::Adam(ParameterSet& params, AdamConfig cfg, std::size_t horizon)
    : params_(params), cfg_(cfg), horizon_(horizon ? horizon : cfg.steps) {
  cfg_.validate();
}

std::vector<Tensor> gradients(const Tape& tape, const ParameterSet& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back(gradient(tape, params[i]));
  return out;
}

void Adam::step(const Tape& tape) { step(gradients(tape, params_)); }

void Adam::step(std::span<const Tensor> grads) {
  const std::size_t t = t_ + 1;
  adam_step(params_, grads, state_, cfg_, t, cfg_.lr_at(t, horizon_));
  t_ = t;
}

void RunReport::add(StepRecord record) {
  if (!records.empty() && record.step <= records.back().step) {
    throw ContractError("report steps must increase: " + std::to_string(record.step) + " after " +
                        std::to_string(records.back().step));
  }
  records.push_back(record);
}

const StepRecord& RunReport::last() const {
  if (records.empty()) throw ContractError("report has no records");
  return records.back();
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void write_fit_csv(const RunReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "step,loss,psnr,ssim\n";
  for (const auto& r : report.records) {
    out << r.step << ',' << format_double(r.loss) << ',' << opt(r.psnr) << ',' << opt(r.ssim) << '\n';
  }
}

void write_epoch_csv(const RunReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "epoch,train_loss,test_accuracy\n";
  for (const auto& r : report.records) {
    out << r.step << ',' << format_double(r.loss) << ',' << opt(r.accuracy) << '\n';
  }
}

Tensor stack_frames(std::span<const Image> frames) {
  if (frames.empty()) throw ContractError("at least one target frame is required");
  const Image& f0 = frames.front();
  Tensor out(Shape{frames.size(), f0.height, f0.width, f0.channels});
  auto o = out.mutable_data();
  const std::size_t n = f0.pixels.size();
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const Image& f = frames[t];
    if (f.height != f0.height || f.width != f0.width || f.channels != f0.channels) {
      throw DimensionError("frame " + std::to_string(t) + " differs in shape from frame 0");
    }
    std::copy(f.pixels.begin(), f.pixels.end(), o.begin() + static_cast<std::ptrdiff_t>(t * n));
  }
  return out;
}

FitResult fit_run(const NetworkSpec& spec, std::span<const Image> targets, const FitLossConfig& loss_cfg,
                  const AdamConfig& adam_cfg, std::uint64_t seed, const FitOptions& options) {
  loss_cfg.validate();
  adam_cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  NetworkSpec seeded = spec;
  seeded.seed = seed;
  FitResult result;
  result.network = build_generator(seeded);
  ImageGenerator& net = *result.network;

  const Tensor target = stack_frames(targets);
  if (target.dim(1) != net.height() || target.dim(2) != net.width() || target.dim(3) != net.channels()) {
    throw DimensionError("target " + shape_string(target.shape()) + " does not match generator output " +
                         std::to_string(net.height()) + "x" + std::to_string(net.width()) + "x" +
                         std::to_string(net.channels()));
  }
  const Tensor times = time_coords(targets.size());
  const bool with_ssim =
      !options.skip_ssim && net.height() >= loss_cfg.ssim_window && net.width() >= loss_cfg.ssim_window;
  const std::size_t every = std::max<std::size_t>(1, options.eval_every);

  RunReport& report = result.report;
  report.seed = seed;
  report.param_count = param_count(net);
  Adam adam(net.parameters(), adam_cfg);

  for (std::size_t step = 1; step <= adam_cfg.steps; ++step) {
    Tape tape;
    double loss_value = 0.0;
    {
      TapeScope scope(tape);
      const Tensor loss = fit_loss(net.render(times), target, loss_cfg);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        report.wall_seconds = seconds_since(start);
        throw DivergenceError("step " + std::to_string(step) + ": non-finite loss", report);
      }
      tape.backward(loss);
    }
    try {
      adam.step(tape);
    } catch (const NumericError& e) {
      report.wall_seconds = seconds_since(start);
      throw DivergenceError("step " + std::to_string(step) + ": " + e.what(), report);
    }
    report.steps_completed = step;
    if (step % every == 0 || step == adam_cfg.steps) {
      const Tensor out = clamp(net.render(times), 0.0, 1.0);
      StepRecord rec{step, loss_value, psnr(out, target, loss_cfg.dynamic_range), std::nullopt, std::nullopt};
      if (with_ssim) rec.ssim = ssim(out, target, loss_cfg).item();
      report.add(rec);
      if (step == adam_cfg.steps) result.reconstruction = out;
    }
  }
  report.wall_seconds = seconds_since(start);
  return result;
}

double evaluate_accuracy(const MultiStageClassifier& net, const LabeledDataset& data, std::size_t batch) {
  if (data.size() == 0) throw ContractError("evaluate_accuracy on an empty dataset");
  batch = std::max<std::size_t>(1, batch);
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += batch) {
    const std::size_t end = std::min(data.size(), begin + batch);
    idx.clear();
    for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
    const Tensor logits = net.forward(data.batch(idx)).logits;
    const std::size_t classes = logits.dim(1);
    const auto l = logits.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (l[r * classes + c] > l[r * classes + best]) best = c;
      if (best == data.labels[idx[r]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

ClassifierResult train_classifier(const NetworkSpec& spec, const MultiStageClassifier* teacher,
                                  const LabeledDataset& train, const LabeledDataset& test,
                                  const DistillConfig& distill_cfg, const AdamConfig& adam_cfg,
                                  const ClassifierTrainConfig& train_cfg, std::uint64_t seed) {
  distill_cfg.validate();
  adam_cfg.validate();
  if (train.size() == 0) throw ContractError("empty training set");
  if (train_cfg.batch_size == 0 || train_cfg.epochs == 0) throw ConfigError("epochs and batch_size must be >= 1");
  const auto start = std::chrono::steady_clock::now();

  NetworkSpec seeded = spec;
  seeded.seed = seed;
  ClassifierResult result;
  result.network = build_multi_stage(seeded);
  MultiStageClassifier& net = *result.network;

  const Rng root(seed);
  Rng order_rng = root.split(1);
  Rng align_rng = root.split(2);

  const bool use_ms = teacher != nullptr && distill_cfg.lambda2 != 0.0;
  ParameterSet aligner_params;
  std::vector<StageAligner> aligners;
  if (use_ms) {
    const std::size_t probe[1] = {0};
    const Tensor x = train.batch(probe);
    const auto s = net.forward(x).stages.features;
    const auto t = teacher->forward(x).stages.features;
    if (s.size() != t.size()) {
      throw ConfigError("stage count mismatch: student " + std::to_string(s.size()) + ", teacher " +
                        std::to_string(t.size()));
    }
    std::vector<StageDims> sd, td;
    for (const auto& f : s) sd.push_back(stage_dims(f));
    for (const auto& f : t) td.push_back(stage_dims(f));
    aligners = make_stage_aligners(aligner_params, sd, td, align_rng, distill_cfg.teacher_transform);
  }

  const std::size_t n = train.size();
  const std::size_t batches = (n + train_cfg.batch_size - 1) / train_cfg.batch_size;
  const std::size_t horizon = batches * train_cfg.epochs;
  Adam student_opt(net.parameters(), adam_cfg, horizon);
  std::optional<Adam> aligner_opt;
  if (use_ms) aligner_opt.emplace(aligner_params, adam_cfg, horizon);

  RunReport& report = result.report;
  report.seed = seed;
  report.param_count = param_count(net);
  std::vector<std::size_t> idx, labels;
  for (std::size_t epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(n, order_rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * train_cfg.batch_size;
      const std::size_t end = std::min(n, begin + train_cfg.batch_size);
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));
      labels.clear();
      for (std::size_t i : idx) labels.push_back(train.labels[i]);
      const Tensor x = train.batch(idx);
      StageOutputs teacher_stages;
      if (use_ms) teacher_stages = teacher->forward(x).stages;

      Tape tape;
      double loss_value = 0.0;
      {
        TapeScope scope(tape);
        const auto out = net.forward(x);
        Tensor loss = cross_entropy(out.logits, labels) * distill_cfg.lambda1;
        if (use_ms) loss = loss + ms_loss(out.stages, teacher_stages, aligners, distill_cfg.stage_set) * distill_cfg.lambda2;
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          throw DivergenceError("epoch " + std::to_string(epoch) + " batch " + std::to_string(b + 1) +
                                    ": non-finite loss",
                                report);
        }
        tape.backward(loss);
      }
      try {
        student_opt.step(tape);
        if (aligner_opt) aligner_opt->step(tape);
      } catch (const NumericError& e) {
        throw DivergenceError("epoch " + std::to_string(epoch) + ": " + e.what(), report);
      }
      loss_sum += loss_value * static_cast<double>(idx.size());
    }
    report.steps_completed = epoch;
    report.add({epoch, loss_sum / static_cast<double>(n), std::nullopt, std::nullopt,
                evaluate_accuracy(net, test, train_cfg.eval_batch)});
  }
  report.wall_seconds = seconds_since(start);
  return result;
}

}  // namespace

ClassifierResult train_teacher(const NetworkSpec& spec, const LabeledDataset& train, const LabeledDataset& test,
                               const AdamConfig& adam_cfg, const ClassifierTrainConfig& train_cfg,
                               std::uint64_t seed) {
  DistillConfig plain;
  plain.lambda1 = 1.0;
  plain.lambda2 = 0.0;
  return train_classifier(spec, nullptr, train, test, plain, adam_cfg, train_cfg, seed);
}

ClassifierResult distill_run(const NetworkSpec& student_spec, const MultiStageClassifier& teacher,
                             const LabeledDataset& train, const LabeledDataset& test, const DistillConfig& distill_cfg,
                             const AdamConfig& adam_cfg, const ClassifierTrainConfig& train_cfg,
                             std::uint64_t seed) {
  return train_classifier(student_spec, &teacher, train, test, distill_cfg, adam_cfg, train_cfg, seed);
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::string serialize(const ParameterSet& params) {
  std::string out = "INRN";
  put_le(out, kCheckpointVersion, 4);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    put_le(out, p.name.size(), 8);
    out += p.name;
    put_le(out, p.value.rank(), 8);
    for (std::size_t d : p.value.shape()) put_le(out, d, 8);
    for (double v : p.value.data()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  }
  return out;
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::filesystem::path& path) : bytes_(bytes), path_(path) {}

  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + i])} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated checkpoint");
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path_.string() + ": " + what + " at byte offset " + std::to_string(pos_));
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t parameter_checksum(const ParameterSet& params) { return fnv1a(serialize(params)); }

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  const std::string bytes = serialize(params);
  auto out = open_out(path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  ByteReader r(bytes, path);
  if (r.str(4) != "INRN") r.fail("bad magic");
  const auto version = r.le(4);
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  std::vector<std::pair<std::string, Tensor>> out;
  while (!r.done()) {
    const auto name_len = r.le(8);
    if (name_len > 4096) r.fail("implausible name length");
    std::string name = r.str(name_len);
    const auto rank = r.le(8);
    if (rank > 8) r.fail("implausible rank");
    Shape shape;
    std::size_t elems = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      shape.push_back(r.le(8));
      elems *= shape.back();
    }
    r.need(elems * 8);
    std::vector<double> values(elems);
    for (auto& v : values) v = std::bit_cast<double>(r.le(8));
    out.emplace_back(std::move(name), Tensor(shape, std::move(values)));
  }
  return out;
}

void load_checkpoint(ParameterSet& params, const std::filesystem::path& path) {
  const auto entries = read_checkpoint(path);
  if (entries.size() != params.size()) {
    throw ConfigError(path.string() + ": checkpoint has " + std::to_string(entries.size()) +
                      " parameters, network has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Parameter& p = params[i];
    if (entries[i].first != p.name || entries[i].second.shape() != p.value.shape()) {
      throw ConfigError(path.string() + ": entry " + std::to_string(i) + " is " + entries[i].first + " " +
                        shape_string(entries[i].second.shape()) + ", network expects " + p.name + " " +
                        shape_string(p.value.shape()));
    }
    p.value = entries[i].second;
  }
}

}  // namespace inrn
