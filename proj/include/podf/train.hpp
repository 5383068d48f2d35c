#pragma once

// Training, evaluation, ablation and inference drivers.
//
// Training log (one row per epoch):
//   # podf-train v1
//   # epoch step loss psnr
//   epoch <e> <global step> <mean L_cr over the epoch> <mean train PSNR>
//
// Ablation report:
//   # podf-ablation v1
//   # group variant count psnr ssim cc sam masked_l1 delta_psnr psnr_<bin>...
//   <group> <variant> ...

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "podf/checkpoint.hpp"
#include "podf/config.hpp"
#include "podf/loss.hpp"
#include "podf/metrics.hpp"
#include "podf/model.hpp"
#include "podf/optim.hpp"
#include "podf/synth.hpp"

namespace podf {

/// The SAR tensor fed to the model for an input selection. With no PolSAR
/// input a 1-channel placeholder is passed; the model never reads it.
inline Tensor select_sar(const SamplePair& s, InputSource src) {
  switch (src) {
    case InputSource::pfsar:
      return s.pfsar;
    case InputSource::bcfsar:
      return s.bcfsar;
    case InputSource::both:
      return concat({s.pfsar, s.bcfsar});
    case InputSource::none:
      return Tensor(Shape{s.cloudy.shape().n(), 1, s.cloudy.shape().h(), s.cloudy.shape().w()});
  }
  return {};
}

/// Concatenates single-sample tensors along the batch axis.
inline Tensor stack_batch(const std::vector<Tensor>& items) {
  if (items.empty()) throw ShapeError("stack_batch: empty batch");
  const Shape s = items.front().shape();
  std::vector<double> values;
  values.reserve(s.numel() * items.size());
  std::size_t n = 0;
  for (const auto& t : items) {
    const Shape ts = t.shape();
    if (ts.c() != s.c() || ts.h() != s.h() || ts.w() != s.w()) {
      throw ShapeError("stack_batch: " + ts.str() + " does not match " + s.str());
    }
    values.insert(values.end(), t.data().begin(), t.data().end());
    n += ts.n();
  }
  return Tensor(Shape{n, s.c(), s.h(), s.w()}, std::move(values));
}

inline Tensor clamp01(const Tensor& t) {
  std::vector<double> v(t.data().begin(), t.data().end());
  for (double& x : v) x = std::clamp(x, 0.0, 1.0);
  return Tensor(t.shape(), std::move(v));
}

inline std::vector<SamplePair> load_split(const std::filesystem::path& data_dir, std::string_view role) {
  if (data_dir.empty()) throw ConfigError("data_dir is not set");
  if (!std::filesystem::is_directory(data_dir)) throw IoError("data directory '" + data_dir.string() + "' does not exist");
  const Manifest m = Manifest::read(data_dir / "manifest.txt");
  std::vector<SamplePair> out;
  for (const auto& r : m.with_role(role)) out.push_back(load_sample(data_dir, r));
  return out;
}

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double psnr = 0.0;
};

inline void write_epoch_header(std::ostream& os) { os << "# podf-train v1\n# epoch step loss psnr\n"; }

inline void write_epoch(std::ostream& os, const EpochLog& e) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "epoch %zu %zu %.9f %.6f\n", e.epoch, e.step, e.loss, e.psnr);
  os << buf;
}

/// Deterministic minibatch Adam training. Batch order in epoch e is a
/// permutation seeded from (seed, e), so training can resume at any
/// global step and reproduce an uninterrupted run bit for bit.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::vector<SamplePair> train_set)
      : cfg_(cfg), data_(std::move(train_set)), model_(Model::build(cfg.model_config(), cfg.seed)),
        adam_(cfg.adam_config()) {
    cfg_.validate();
    if (data_.empty()) throw ConfigError("training set is empty");
  }

  Model& model() { return model_; }
  Adam& adam() { return adam_; }
  std::size_t step_count() const { return step_; }
  std::size_t steps_per_epoch() const { return (data_.size() + cfg_.batch_size - 1) / cfg_.batch_size; }
  std::size_t total_steps() const { return cfg_.steps > 0 ? cfg_.steps : cfg_.epochs * steps_per_epoch(); }

  void resume(const std::filesystem::path& dir) {
    const Checkpoint ck = read_checkpoint(dir);
    if (!(ck.config == model_.config())) throw ConfigError("checkpoint model configuration does not match the run config");
    model_ = restore_model(ck);
    restore_adam(ck, adam_);
    step_ = ck.step;
  }

  /// Sample indices of global step `step`.
  std::vector<std::size_t> batch_indices(std::size_t step) const {
    const std::size_t epoch = step / steps_per_epoch();
    std::vector<std::size_t> order(data_.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg_.seed, epoch + 1));
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t begin = (step % steps_per_epoch()) * cfg_.batch_size;
    const std::size_t end = std::min(begin + cfg_.batch_size, order.size());
    return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
  }

  struct StepResult {
    double loss = 0.0;
    double psnr = 0.0;
  };

  /// One optimizer step; returns the loss and mean PSNR of the batch before
  /// the update.
  StepResult step() {
    std::vector<Tensor> cloudy, sar, clean, mask;
    for (std::size_t i : batch_indices(step_)) {
      cloudy.push_back(data_[i].cloudy);
      sar.push_back(select_sar(data_[i], cfg_.effective_input()));
      clean.push_back(data_[i].clean);
      mask.push_back(data_[i].mask);
    }
    const Tensor target = stack_batch(clean);
    StepResult r;
    try {
      Tensor pred = model_.forward(stack_batch(cloudy), stack_batch(sar), Mode::train);
      Tensor loss = loss_total(pred, target, stack_batch(mask), cfg_.loss_weights());
      r.loss = loss.item();
      r.psnr = std::min(psnr(clamp01(pred), target), kPsnrCap);
      backward(loss);
      adam_.step(model_.params());
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("training step " + std::to_string(step_) + ": " + e.what());
    }
    ++step_;
    return r;
  }

  /// Trains up to total_steps(), logging each epoch and writing a checkpoint
  /// at each epoch end (and after the last step) when `checkpoint_dir` is set.
  std::vector<EpochLog> run(std::ostream* log = nullptr, const std::filesystem::path& checkpoint_dir = {}) {
    std::vector<EpochLog> logs;
    const std::size_t spe = steps_per_epoch();
    double loss_sum = 0.0, psnr_sum = 0.0;
    std::size_t in_epoch = 0;
    while (step_ < total_steps()) {
      const StepResult r = step();
      loss_sum += r.loss;
      psnr_sum += r.psnr;
      ++in_epoch;
      if (step_ % spe == 0 || step_ == total_steps()) {
        EpochLog e{(step_ + spe - 1) / spe, step_, loss_sum / static_cast<double>(in_epoch),
                   psnr_sum / static_cast<double>(in_epoch)};
        logs.push_back(e);
        if (log) {
          write_epoch(*log, e);
          log->flush();
        }
        if (!checkpoint_dir.empty()) save_checkpoint(checkpoint_dir, model_, adam_, step_);
        loss_sum = psnr_sum = 0.0;
        in_epoch = 0;
      }
    }
    return logs;
  }

 private:
  RunConfig cfg_;
  std::vector<SamplePair> data_;
  Model model_;
  Adam adam_;
  std::size_t step_ = 0;
};

struct EvalResult {
  MetricsReport report;
  double masked_l1 = 0.0;  // mean |pred - clean| over cloud pixels and bands
  std::size_t count = 0;

  void write(std::ostream& os) const {
    report.write(os);
    char buf[64];
    std::snprintf(buf, sizeof buf, "masked_l1 %.9f\n", masked_l1);
    os << buf;
  }
  std::string str() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }
};

/// Runs `body(i)` for i in [0, n) on up to `threads` workers; the first
/// exception (by index) is rethrown.
template <typename Body>
void parallel_for(std::size_t n, std::size_t threads, Body body) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t k = std::max<std::size_t>(1, std::min(threads, n));
  if (k == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Eval-mode predictions clamped to [0,1], scored per sample. Workers each
/// own a copy of the model; aggregation is in sample order.
inline EvalResult evaluate(const Model& model, const std::vector<SamplePair>& samples, InputSource input,
                           std::size_t threads = 1) {
  struct Scored {
    SampleMetrics metrics;
    double abs_sum = 0.0;
    double mask_count = 0.0;
  };
  std::vector<Scored> scored(samples.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, samples.size()));
  std::vector<Model> copies;
  for (std::size_t w = 0; w < workers; ++w) copies.push_back(model.clone());
  // Work split: worker w takes samples w, w + workers, ...
  parallel_for(workers, workers, [&](std::size_t w) {
    NoGradGuard guard;
    for (std::size_t i = w; i < samples.size(); i += workers) {
      const SamplePair& s = samples[i];
      const Tensor pred = clamp01(copies[w].forward(s.cloudy, select_sar(s, input), Mode::eval));
      Scored& out = scored[i];
      out.metrics = evaluate_sample(pred, s.clean);
      const std::size_t plane = s.mask.numel();
      const std::size_t bands = pred.shape().c();
      for (std::size_t c = 0; c < bands; ++c) {
        for (std::size_t p = 0; p < plane; ++p) {
          if (s.mask.data()[p] == 0.0) continue;
          out.abs_sum += std::fabs(pred.data()[c * plane + p] - s.clean.data()[c * plane + p]);
          out.mask_count += 1.0;
        }
      }
    }
  });
  EvalResult r;
  double abs_sum = 0.0, mask_count = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    r.report.add(samples[i].coverage_bin, samples[i].land_cover, scored[i].metrics);
    abs_sum += scored[i].abs_sum;
    mask_count += scored[i].mask_count;
  }
  r.masked_l1 = mask_count > 0.0 ? abs_sum / mask_count : 0.0;
  r.count = samples.size();
  return r;
}

/// Trains per `cfg` on the train split of cfg.data_dir, writing checkpoints
/// and the epoch log; returns the epoch records.
inline std::vector<EpochLog> train_run(const RunConfig& cfg, std::ostream* console = nullptr, bool resume = false) {
  cfg.validate();
  if (cfg.checkpoint.empty()) throw ConfigError("checkpoint is not set");
  Trainer trainer(cfg, load_split(cfg.data_dir, "train"));
  const std::filesystem::path ck = cfg.checkpoint;
  if (resume) trainer.resume(ck);
  const std::filesystem::path log_path = cfg.log.empty() ? ck / "train_log.txt" : std::filesystem::path(cfg.log);
  if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
  std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write training log '" + log_path.string() + "'");
  if (!resume) write_epoch_header(log);

  struct Tee : std::streambuf {
    std::streambuf* a;
    std::streambuf* b;
    int overflow(int c) override {
      if (c == EOF) return c;
      a->sputc(static_cast<char>(c));
      if (b) b->sputc(static_cast<char>(c));
      return c;
    }
    int sync() override {
      a->pubsync();
      if (b) b->pubsync();
      return 0;
    }
  } tee;
  tee.a = log.rdbuf();
  tee.b = console ? console->rdbuf() : nullptr;
  std::ostream out(&tee);
  return trainer.run(&out, ck);
}

inline EvalResult eval_run(const RunConfig& cfg, const std::filesystem::path& checkpoint) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  const Model model = restore_model(ck);
  const InputSource input = ck.config.ablations.no_polsar ? InputSource::none : cfg.effective_input();
  if (sar_channels(input) != ck.config.sar_in_channels && input != InputSource::none) {
    throw ConfigError("input '" + std::string(input_name(input)) + "' does not match the checkpoint's " +
                      std::to_string(ck.config.sar_in_channels) + " PolSAR channels");
  }
  return evaluate(model, load_split(cfg.data_dir, "test"), input, cfg.threads);
}

struct AblationVariant {
  std::string group;  // "module" or "input"
  std::string name;
  RunConfig config;
};

/// Full model, one row per module ablation flag, and the PolSAR input rows
/// (none = no PolSAR, pfsar = the full model's input).
inline std::vector<AblationVariant> ablation_variants(const RunConfig& base) {
  std::vector<AblationVariant> v;
  RunConfig full = base;
  full.ablations = {};
  full.input = InputSource::pfsar;
  v.push_back({"module", "full", full});
  auto flag = [&](const char* name, bool Ablations::*member) {
    RunConfig c = full;
    c.ablations.*member = true;
    v.push_back({"module", name, c});
  };
  flag("no_scdf", &Ablations::no_scdf);
  flag("no_gc", &Ablations::no_gc);
  flag("no_mmcf", &Ablations::no_mmcf);
  flag("no_mmrf", &Ablations::no_mmrf);
  flag("no_aspp", &Ablations::no_aspp);
  flag("no_polsar", &Ablations::no_polsar);
  for (InputSource s : {InputSource::none, InputSource::both, InputSource::bcfsar, InputSource::pfsar}) {
    RunConfig c = full;
    c.input = s;
    v.push_back({"input", std::string(input_name(s)), c});
  }
  return v;
}

struct AblationRow {
  std::string group;
  std::string name;
  EvalResult eval;
};

/// Trains and evaluates every variant; variants with identical model and
/// input configuration share one run. Runs fan out over cfg.threads workers,
/// each training single-threaded.
inline std::vector<AblationRow> ablate_run(const RunConfig& cfg, std::ostream* console = nullptr) {
  cfg.validate();
  if (cfg.checkpoint.empty()) throw ConfigError("checkpoint is not set");
  const auto variants = ablation_variants(cfg);
  std::vector<std::size_t> owner(variants.size());
  std::vector<std::size_t> unique;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    owner[i] = i;
    for (std::size_t u : unique) {
      const bool same = variants[i].config.model_config() == variants[u].config.model_config() &&
                        variants[i].config.effective_input() == variants[u].config.effective_input();
      if (same) {
        owner[i] = u;
        break;
      }
    }
    if (owner[i] == i) unique.push_back(i);
  }

  const std::filesystem::path root = cfg.checkpoint;
  const auto train_set = load_split(cfg.data_dir, "train");
  const auto test_set = load_split(cfg.data_dir, "test");
  std::vector<EvalResult> results(variants.size());
  parallel_for(unique.size(), cfg.threads, [&](std::size_t j) {
    const AblationVariant& v = variants[unique[j]];
    const std::filesystem::path dir = root / v.name;
    std::filesystem::create_directories(dir);
    std::ofstream log(dir / "train_log.txt", std::ios::trunc);
    write_epoch_header(log);
    Trainer t(v.config, train_set);
    t.run(&log, dir);
    results[unique[j]] = evaluate(t.model(), test_set, v.config.effective_input());
    std::ofstream rep(dir / "report.txt", std::ios::trunc);
    results[unique[j]].write(rep);
    if (console) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "variant %s psnr %.6f\n", v.name.c_str(), results[unique[j]].report.overall().mean().psnr);
      *console << buf << std::flush;
    }
  });
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < variants.size(); ++i) rows.push_back({variants[i].group, variants[i].name, results[owner[i]]});
  return rows;
}

inline void write_ablation_report(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "# podf-ablation v1\n# group variant count psnr ssim cc sam masked_l1 delta_psnr";
  for (auto b : kCoverageBinNames) os << " psnr_" << b;
  os << '\n';
  double base = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : rows)
    if (r.name == "full") base = r.eval.report.overall().mean().psnr;
  for (const auto& r : rows) {
    const auto o = r.eval.report.overall();
    const SampleMetrics m = o.mean();
    char buf[256];
    std::snprintf(buf, sizeof buf, " %zu %.6f %.6f %.6f %.6f %.9f %.6f", o.count, m.psnr, m.ssim, m.cc, m.sam,
                  r.eval.masked_l1, m.psnr - base);
    os << r.group << ' ' << r.name << buf;
    for (std::size_t b = 0; b < kCoverageBinCount; ++b) {
      std::snprintf(buf, sizeof buf, " %.6f", r.eval.report.bin(b).mean().psnr);
      os << buf;
    }
    os << '\n';
  }
}

/// Predicts the cloud-free image for one (cloudy, sar) pair of tensor files
/// and writes it with the rank of the cloudy input.
inline Tensor infer_run(const std::filesystem::path& checkpoint, const std::filesystem::path& cloudy_path,
                        const std::filesystem::path& sar_path, const std::filesystem::path& out_path) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  Model model = restore_model(ck);
  const std::size_t rank = decode(read_bytes(cloudy_path)).extents.size();
  const Tensor cloudy = read_tensor(cloudy_path);
  Tensor sar;
  if (ck.config.ablations.no_polsar) {
    sar = Tensor(Shape{cloudy.shape().n(), 1, cloudy.shape().h(), cloudy.shape().w()});
  } else {
    if (sar_path.empty()) throw ConfigError("this model needs a PolSAR input (--sar)");
    sar = read_tensor(sar_path);
  }
  NoGradGuard guard;
  const Tensor pred = clamp01(model.forward(cloudy, sar, Mode::eval));
  write_tensor(out_path, pred, std::max<std::size_t>(rank, 3));
  return pred;
}

}  // namespace podf
