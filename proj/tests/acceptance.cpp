// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.
//
//   acceptance [--workdir DIR] [--only N]...

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oracles.hpp"
#include "podf/podf.hpp"

using namespace podf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (std::bit_cast<std::uint64_t>(a.data()[i]) != std::bit_cast<std::uint64_t>(b.data()[i])) return false;
  return true;
}

bool same_params(const Model& a, const Model& b) {
  if (a.params().params().size() != b.params().params().size()) return false;
  for (const auto& [name, t] : a.params().params())
    if (!bit_equal(t, b.params().params().at(name))) return false;
  for (const auto& [name, t] : a.params().buffers())
    if (!bit_equal(t, b.params().buffers().at(name))) return false;
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Byte comparison of every regular file under two directory trees.
bool same_tree(const fs::path& a, const fs::path& b, std::size_t* files) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) return false;
    ++n;
  }
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file() && !fs::exists(a / fs::relative(e.path(), b))) return false;
  *files = n;
  return n > 0;
}

int run_cli(const std::string& args, const fs::path& out) {
  const std::string cmd = std::string(PODF_CLI_PATH) + ' ' + args + " >" + out.string() + " 2>&1";
  return std::system(cmd.c_str());
}

// ---- criteria ------------------------------------------------------------------

Outcome gradient_suite() {
  const std::vector<std::string> required{"conv2d", "conv_transpose2d", "batch_norm", "gated_conv", "rb_gc",
                                          "scdf", "scdf_apply", "filter_normalize", "aspp", "mmcf",
                                          "scru", "mwru", "mmrf", "loss_total"};
  Timer t;
  double worst = 0.0;
  std::string worst_op, failed;
  std::size_t ran = 0;
  for (const auto& c : gradcheck_suite()) {
    const double err = c.run(0);
    ++ran;
    if (err > worst) worst = err, worst_op = c.name;
    if (err > kGradCheckTolerance) failed += ' ' + c.name;
  }
  std::string missing;
  for (const auto& r : required) {
    bool found = false;
    for (const auto& c : gradcheck_suite()) found = found || c.name == r;
    if (!found) missing += ' ' + r;
  }
  const double secs = t.seconds();
  Outcome o;
  o.pass = failed.empty() && missing.empty() && secs <= 120.0;
  o.detail = std::to_string(ran) + " ops, max rel err " + fmt("%.2e", worst) + " (" + worst_op + "), " +
             fmt("%.1f", secs) + " s";
  if (!failed.empty()) o.detail += ", failed:" + failed;
  if (!missing.empty()) o.detail += ", missing:" + missing;
  return o;
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(2024);
  double conv_err = 0.0, dil_err = 0.0, scdf_err = 0.0;
  std::size_t conv_n = 0, dil_n = 0, scdf_n = 0;
  const std::vector<ConvSpec> specs{{3, 4, 3, 3, 1, 1, 1}, {3, 5, 3, 3, 2, 1, 1}, {3, 2, 4, 4, 2, 1, 1},
                                    {3, 4, 1, 1, 1, 0, 1}, {3, 2, 2, 3, 1, 1, 1}};
  for (int rep = 0; rep < 5; ++rep)
    for (const auto& s : specs) {
      const Tensor x = random_tensor(Shape{2, 3, 9, 8}, rng);
      const Tensor w = random_tensor(Shape{s.out_channels, 3, s.kh, s.kw}, rng);
      const Tensor b = random_tensor(Shape{1, s.out_channels, 1, 1}, rng);
      conv_err = std::max(conv_err, max_abs_diff(conv2d(x, w, b, s), oracle::naive_conv(x, w, b, s)));
      ++conv_n;
    }
  for (int rep = 0; rep < 24; ++rep) {
    const std::size_t d = 2 + rep % 6;
    const ConvSpec s{2, 3, 3, 3, 1, d, d};
    const Tensor x = random_tensor(Shape{1, 2, 14, 12}, rng);
    const Tensor w = random_tensor(Shape{3, 2, 3, 3}, rng);
    const Tensor b = random_tensor(Shape{1, 3, 1, 1}, rng);
    dil_err = std::max(dil_err, max_abs_diff(conv2d(x, w, b, s), oracle::naive_conv(x, w, b, s)));
    ++dil_n;
  }
  for (int rep = 0; rep < 24; ++rep) {
    const std::size_t n = 1 + rep % 2, c = 1 + rep % 5, h = 3 + rep % 6, w = 3 + rep % 4;
    const Tensor x = random_tensor(Shape{n, c, h, w}, rng);
    const FilterBank bank{random_tensor(Shape{n, 9, h, w}, rng), random_tensor(Shape{n, c, 3, 3}, rng), 3};
    scdf_err = std::max(scdf_err, max_abs_diff(scdf_apply(x, bank), oracle::naive_scdf(x, bank)));
    ++scdf_n;
  }
  Outcome o;
  o.pass = conv_err <= 1e-12 && dil_err <= 1e-12 && scdf_err <= 1e-12 && conv_n >= 20 && dil_n >= 20 && scdf_n >= 20;
  o.detail = "conv2d " + std::to_string(conv_n) + " @ " + fmt("%.1e", conv_err) + ", dilated " + std::to_string(dil_n) +
             " @ " + fmt("%.1e", dil_err) + ", scdf_apply " + std::to_string(scdf_n) + " @ " + fmt("%.1e", scdf_err);
  return o;
}

template <typename Block>
void materialize(ParamStore& store, const Tensor& x, Block block) {
  NoGradGuard g;
  block(Scope(store, Mode::train, true, 5), x);
}

void fill_matching(ParamStore& store, const std::string& needle, double v) {
  for (auto& [name, t] : store.params())
    if (name.find(needle) != std::string::npos) std::fill(t.mutable_data().begin(), t.mutable_data().end(), v);
}

Outcome identity_invariants() {
  std::mt19937_64 rng(3);
  std::vector<std::string> failed;

  const Tensor x = random_tensor(Shape{2, 4, 6, 5}, rng);
  FilterBank delta{Tensor(Shape{2, 9, 6, 5}), Tensor(Shape{2, 4, 3, 3}), 3};
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < 30; ++p) delta.spatial.mutable_data()[(n * 9 + 4) * 30 + p] = 1.0;
  for (std::size_t nc = 0; nc < 8; ++nc) delta.channel.mutable_data()[nc * 9 + 4] = 1.0;
  if (!bit_equal(scdf_apply(x, delta), x)) failed.push_back("delta-scdf");

  ParamStore gc;
  auto rbgc = [](const Scope& s, const Tensor& t) { return rb_gc(s, t); };
  materialize(gc, x, rbgc);
  fill_matching(gc, "feat.w", 0.0);
  if (!bit_equal(rbgc(Scope(gc, Mode::train), x), x)) failed.push_back("rb_gc");

  ParamStore df;
  auto rbdf = [](const Scope& s, const Tensor& t) { return rb_df(s, t); };
  materialize(df, x, rbdf);
  for (const char* n : {"conv1.w", "conv2.w", "conv3.w"}) fill_matching(df, n, 0.0);
  if (!bit_equal(rbdf(Scope(df, Mode::train), x), x)) failed.push_back("rb_df");

  ParamStore rb;
  auto plain = [](const Scope& s, const Tensor& t) { return residual_block(s, t); };
  materialize(rb, x, plain);
  fill_matching(rb, "conv3.w", 0.0);
  if (!bit_equal(plain(Scope(rb, Mode::train), x), x)) failed.push_back("residual_block");

  Model model = Model::build(ModelConfig{}, 11);
  const Tensor cloudy = random_tensor(Shape{2, 4, 32, 32}, rng, 0.0, 1.0);
  const Tensor sar = random_tensor(Shape{2, 9, 32, 32}, rng, 0.0, 1.0);
  if (!bit_equal(model.forward(cloudy, sar), cloudy)) failed.push_back("model long skip");

  const Tensor target = random_tensor(Shape{2, 4, 32, 32}, rng, 0.0, 1.0);
  if (loss_local(cloudy, target, Tensor(Shape{2, 1, 32, 32})).item() != 0.0) failed.push_back("masked L_l");

  const double s = ssim(target, target).item();
  if (std::fabs(s - 1.0) > 1e-9) failed.push_back("ssim(x,x)");

  Outcome o;
  o.pass = failed.empty();
  o.detail = "delta-scdf, rb_gc, rb_df, residual_block, model long skip, masked L_l, ssim(x,x)=" + fmt("%.12f", s);
  for (const auto& f : failed) o.detail += " [broken: " + f + "]";
  return o;
}

Outcome analytic_metrics() {
  const Shape s{1, 4, 8, 8};
  const double p = psnr(Tensor(s, 0.5), Tensor(s, 1.0));
  const Tensor sm = softmax(Tensor(Shape{1, 1, 1, 2}, std::vector<double>{0.0, std::log(3.0)}), 3);
  std::mt19937_64 rng(4);
  const Tensor t = random_tensor(s, rng, 0.05, 1.0);
  const double a = sam(scale(t, 2.0), t);
  const double sm_err = std::max(std::fabs(sm.data()[0] - 0.25), std::fabs(sm.data()[1] - 0.75));
  Outcome o;
  o.pass = std::fabs(p - 6.0206) <= 1e-3 && sm_err <= 1e-12 && std::fabs(a) <= 1e-9;
  o.detail = "psnr " + fmt("%.6f", p) + " dB, softmax err " + fmt("%.1e", sm_err) + ", sam(2x,x) " + fmt("%.1e", a);
  return o;
}

Outcome overfit() {
  RunConfig cfg;  // desk defaults: patch 32, base 8, lr 7e-5, lambda 10/1
  cfg.steps = 200;
  Timer t;
  const SamplePair sample = make_sample(0, 0, cfg.patch);
  Trainer trainer(cfg, {sample});
  const double initial = trainer.step().loss;
  while (trainer.step_count() < trainer.total_steps()) trainer.step();
  double final_loss = 0.0;
  {
    NoGradGuard g;
    const Tensor pred = trainer.model().forward(sample.cloudy, sample.pfsar, Mode::train);
    final_loss = loss_total(pred, sample.clean, sample.mask, cfg.loss_weights()).item();
  }
  const double secs = t.seconds();
  const double reduction = 1.0 - final_loss / initial;
  Outcome o;
  o.pass = reduction >= 0.9 && secs <= 300.0;
  o.detail = "L_cr " + fmt("%.4f", initial) + " -> " + fmt("%.4f", final_loss) + " (" + fmt("%.1f", 100.0 * reduction) +
             "% reduction, need 90%), " + fmt("%.1f", secs) + " s";
  return o;
}

struct AblationState {
  std::vector<AblationRow> rows;
  double seconds = 0.0;
};

AblationState run_ablation(const fs::path& work) {
  const fs::path data = work / "ablation_data";
  fs::remove_all(data);
  build_dataset(data, 0, 64, 32);
  RunConfig cfg;
  cfg.epochs = 20;
  cfg.data_dir = data.string();
  cfg.checkpoint = (work / "ablation_runs").string();
  cfg.threads = std::max(1u, std::thread::hardware_concurrency());
  Timer t;
  AblationState st;
  st.rows = ablate_run(cfg, &std::cerr);
  st.seconds = t.seconds();
  std::ofstream os(work / "ablation_report.txt", std::ios::trunc);
  write_ablation_report(os, st.rows);
  return st;
}

const AblationRow* find_row(const AblationState& st, const std::string& group, const std::string& name) {
  for (const auto& r : st.rows)
    if (r.group == group && r.name == name) return &r;
  return nullptr;
}

Outcome directional_ablations(const AblationState& st) {
  const AblationRow* full = find_row(st, "module", "full");
  if (!full) return {false, "no full row"};
  const double base = full->eval.report.overall().mean().psnr;
  Outcome o{true, "full " + fmt("%.3f", base) + " dB"};
  for (const char* v : {"no_scdf", "no_gc", "no_mmcf", "no_mmrf", "no_aspp", "no_polsar"}) {
    const AblationRow* r = find_row(st, "module", v);
    if (!r) return {false, std::string("missing row ") + v};
    const double d = r->eval.report.overall().mean().psnr - base;
    o.detail += std::string(", ") + v + ' ' + fmt("%+.3f", d);
    if (d > 0.1) o.pass = false;
    if (std::string(v) == "no_polsar" && d > -0.3) o.pass = false;
  }
  o.detail += " (need all <= +0.1, no_polsar <= -0.3), " + fmt("%.0f", st.seconds) + " s";
  if (st.seconds > 1800.0) o.pass = false;
  return o;
}

Outcome determinism(const fs::path& work) {
  std::vector<std::string> failed;
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    fs::create_directories(dir);
    std::ofstream(dir / "run.cfg") << "seed = 7\npatch = 16\nbase_channels = 4\nepochs = 2\nbatch_size = 2\n"
                                   << "data_dir = " << (dir / "data").string() << '\n'
                                   << "checkpoint = " << (dir / "ck").string() << '\n'
                                   << "report = " << (dir / "report.txt").string() << '\n';
    const fs::path log = dir / "cli.txt";
    if (run_cli("gen-data --seed 7 --count 10 --patch 16 --out " + (dir / "data").string(), log) != 0 ||
        run_cli("train --config " + (dir / "run.cfg").string(), log) != 0 ||
        run_cli("eval --config " + (dir / "run.cfg").string(), log) != 0) {
      failed.push_back(std::string("pipeline ") + run + " exited nonzero");
    }
  }
  std::size_t data_files = 0, ck_files = 0;
  if (!same_tree(root / "a" / "data", root / "b" / "data", &data_files)) failed.push_back("datasets differ");
  if (!same_tree(root / "a" / "ck", root / "b" / "ck", &ck_files)) failed.push_back("checkpoints differ");
  const std::string ra = slurp(root / "a" / "report.txt");
  if (ra.empty() || ra != slurp(root / "b" / "report.txt")) failed.push_back("reports differ");

  // TensorFile round trip, both dtypes' f64 path bit for bit.
  std::mt19937_64 rng(8);
  Tensor t = random_tensor(Shape{2, 3, 4, 5}, rng, -1e6, 1e6);
  t.mutable_data()[0] = -0.0;
  t.mutable_data()[1] = std::numeric_limits<double>::denorm_min();
  write_tensor(root / "t.podf", t);
  const Tensor back = read_tensor(root / "t.podf");
  write_tensor(root / "u.podf", back);
  if (!bit_equal(back, t) || slurp(root / "t.podf") != slurp(root / "u.podf")) failed.push_back("tensor file");

  // Resume at step 3 of 7 against an uninterrupted run.
  RunConfig cfg;
  cfg.patch = 8;
  cfg.base_channels = 4;
  cfg.batch_size = 2;
  cfg.learning_rate = 1e-3;
  cfg.steps = 7;
  std::vector<SamplePair> data;
  for (std::size_t i = 0; i < 5; ++i) data.push_back(make_sample(1, i, 8));
  Trainer full(cfg, data);
  full.run();
  RunConfig part = cfg;
  part.steps = 3;
  Trainer first(part, data);
  first.run();
  save_checkpoint(root / "resume_ck", first.model(), first.adam(), first.step_count());
  Trainer second(cfg, data);
  second.resume(root / "resume_ck");
  second.run();
  if (!same_params(full.model(), second.model())) failed.push_back("resume");

  Outcome o;
  o.pass = failed.empty();
  o.detail = std::to_string(data_files) + " dataset files, " + std::to_string(ck_files) +
             " checkpoint files, report, tensor file, resume at step 3 of 7";
  for (const auto& f : failed) o.detail += " [" + f + "]";
  return o;
}

Outcome coverage_bins(const AblationState& st) {
  const AblationRow* full = find_row(st, "module", "full");
  if (!full) return {false, "no full row"};
  const std::string text = full->eval.str();
  Outcome o{true, "bin psnr"};
  std::vector<double> psnr_by_bin;
  for (std::size_t b = 0; b < kCoverageBinCount; ++b) {
    const auto acc = full->eval.report.bin(b);
    const bool row = text.find("\nbin " + std::string(kCoverageBinNames[b]) + " * ") != std::string::npos;
    if (!row || acc.count == 0) o.pass = false;
    psnr_by_bin.push_back(acc.mean().psnr);
    o.detail += ' ' + std::string(kCoverageBinNames[b]) + ':' + fmt("%.2f", acc.mean().psnr) + "(n=" +
                std::to_string(acc.count) + ')';
  }
  std::size_t inversions = 0;
  for (std::size_t b = 0; b + 1 < psnr_by_bin.size(); ++b) inversions += psnr_by_bin[b + 1] > psnr_by_bin[b];
  if (inversions > 1) o.pass = false;
  o.detail += ", " + std::to_string(inversions) + " inversion(s), 1 tolerated";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "podf_acceptance";
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      only.push_back(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance [--workdir DIR] [--only N]...\n";
      return 2;
    }
  }
  fs::create_directories(work);

  std::optional<AblationState> ablation;
  auto ablation_state = [&]() -> const AblationState& {
    if (!ablation) ablation = run_ablation(work);
    return *ablation;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"oracle equivalence", oracle_equivalence},
      {"identity invariants", identity_invariants},
      {"analytic metric values", analytic_metrics},
      {"overfit single sample", overfit},
      {"directional ablations", [&] { return directional_ablations(ablation_state()); }},
      {"determinism and I/O", [&] { return determinism(work); }},
      {"coverage-bin evaluation", [&] { return coverage_bins(ablation_state()); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
