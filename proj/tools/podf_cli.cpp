// podf: dataset generation, training, evaluation, ablation, inference and
// gradient checks. Failures print one line `error: <category>: <message>`.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "podf/podf.hpp"

namespace fs = std::filesystem;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

podf::RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  podf::RunConfig cfg = path.empty() ? podf::RunConfig{} : podf::RunConfig::read(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw podf::IoError("cannot write '" + path.string() + "'");
  os << text;
}

int cmd_gen_data(std::uint64_t seed, std::size_t count, std::size_t patch, const std::string& out) {
  const podf::Manifest m = podf::build_dataset(out, seed, count, patch);
  std::cout << "# podf-gen-data v1\n# bin train test\n";
  for (std::size_t b = 0; b < podf::kCoverageBinCount; ++b) {
    std::size_t train = 0, test = 0;
    for (const auto& r : m.records) {
      if (r.coverage_bin != b) continue;
      (r.role == "train" ? train : test)++;
    }
    std::cout << "bin " << podf::kCoverageBinNames[b] << ' ' << train << ' ' << test << '\n';
  }
  std::cout << "total " << m.with_role("train").size() << ' ' << m.with_role("test").size() << '\n';
  return 0;
}

int cmd_gradcheck(const std::string& op, std::uint64_t seed) {
  const auto suite = podf::gradcheck_suite();
  std::vector<const podf::GradCheckCase*> selected;
  for (const auto& c : suite)
    if (op.empty() || c.name == op) selected.push_back(&c);
  if (selected.empty()) {
    std::string names;
    for (const auto& c : suite) names += (names.empty() ? "" : ", ") + c.name;
    throw UsageError("unknown op '" + op + "'; valid ops: " + names);
  }
  std::size_t failed = 0;
  for (const auto* c : selected) {
    const double err = c->run(seed);
    const bool ok = err <= podf::kGradCheckTolerance;
    failed += ok ? 0 : 1;
    std::printf("op %s max_rel_err %.3e %s\n", c->name.c_str(), err, ok ? "PASS" : "FAIL");
  }
  if (failed) throw CheckFailed(std::to_string(failed) + " op(s) exceed relative error 1e-4");
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"PODF-CR cloud removal: data, training, evaluation and checks", "podf"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::size_t count = 0, patch = 32;
  std::string out, config, checkpoint, report, in, sar, op;
  std::vector<std::string> overrides;
  bool resume = false;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--seed", seed, "Master seed")->required();
  gen->add_option("--count", count, "Number of samples")->required();
  gen->add_option("--patch", patch, "Patch size (multiple of 4)");
  gen->add_option("--out", out, "Output directory")->required();

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Run config file (key = value)");
    sub->add_option("--set", overrides, "Override a config key: key=value");
  };
  auto* train = app.add_subcommand("train", "Train a model");
  add_config(train);
  train->add_flag("--resume", resume, "Continue from the configured checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_config(eval);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory (default: config checkpoint)");
  eval->add_option("--report", report, "Report path (default: config report)");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the ablation variants");
  add_config(ablate);

  auto* infer = app.add_subcommand("infer", "Predict a cloud-free image");
  infer->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  infer->add_option("--in", in, "Cloudy optical tensor file")->required();
  infer->add_option("--sar", sar, "PolSAR tensor file");
  infer->add_option("--out", out, "Output tensor file")->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad->add_option("--op", op, "Check a single operator");
  grad->add_option("--seed", seed, "Seed for the random inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  if (*gen) return cmd_gen_data(seed, count, patch, out);
  if (*grad) return cmd_gradcheck(op, seed);
  if (*infer) {
    const podf::Tensor pred = podf::infer_run(checkpoint, in, sar, out);
    std::cout << "wrote " << out << ' ' << pred.shape().str() << '\n';
    return 0;
  }

  const podf::RunConfig cfg = load_config(config, overrides);
  if (*train) {
    podf::train_run(cfg, &std::cout, resume);
    return 0;
  }
  if (*eval) {
    const std::string ck = checkpoint.empty() ? cfg.checkpoint : checkpoint;
    if (ck.empty()) throw podf::ConfigError("checkpoint is not set");
    const podf::EvalResult r = podf::eval_run(cfg, ck);
    const std::string text = r.str();
    const std::string path = report.empty() ? cfg.report : report;
    if (!path.empty()) write_text(path, text);
    std::cout << text;
    return 0;
  }
  if (*ablate) {
    const auto rows = podf::ablate_run(cfg, &std::cerr);
    std::ostringstream os;
    podf::write_ablation_report(os, rows);
    if (!cfg.report.empty()) write_text(cfg.report, os.str());
    std::cout << os.str();
    return 0;
  }
  return 0;
}

int fail(const char* category, const std::string& message, int code) {
  std::string line = message;
  for (char& c : line)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "error: " << category << ": " << line << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    return fail("usage", e.what(), 2);
  } catch (const podf::ConfigError& e) {
    return fail("config", e.what(), 3);
  } catch (const podf::IoError& e) {
    return fail("io", e.what(), 4);
  } catch (const podf::FormatError& e) {
    return fail("format", e.what(), 5);
  } catch (const podf::ShapeError& e) {
    return fail("shape", e.what(), 6);
  } catch (const std::domain_error& e) {
    return fail("input", e.what(), 7);
  } catch (const podf::NonFiniteError& e) {
    return fail("numeric", e.what(), 8);
  } catch (const CheckFailed& e) {
    return fail("gradcheck", e.what(), 9);
  } catch (const fs::filesystem_error& e) {
    return fail("io", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 10);
  }
}
