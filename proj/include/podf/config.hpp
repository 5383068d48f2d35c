#pragma once

// Run configuration: a plain `key = value` text file. Lines starting with '#'
// and blank lines are ignored; unknown keys are rejected.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "podf/loss.hpp"
#include "podf/model.hpp"
#include "podf/optim.hpp"
#include "podf/synth.hpp"

namespace podf {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class InputSource { pfsar, bcfsar, both, none };

inline std::string_view input_name(InputSource s) {
  switch (s) {
    case InputSource::pfsar:
      return "pfsar";
    case InputSource::bcfsar:
      return "bcfsar";
    case InputSource::both:
      return "both";
    case InputSource::none:
      return "none";
  }
  return "?";
}

inline InputSource parse_input(std::string_view v) {
  for (InputSource s : {InputSource::pfsar, InputSource::bcfsar, InputSource::both, InputSource::none})
    if (input_name(s) == v) return s;
  throw ConfigError("input must be one of pfsar, bcfsar, both, none (got '" + std::string(v) + "')");
}

inline std::size_t sar_channels(InputSource s) {
  switch (s) {
    case InputSource::pfsar:
      return kPfsarChannels;
    case InputSource::bcfsar:
      return kBcfsarChannels;
    case InputSource::both:
      return kPfsarChannels + kBcfsarChannels;
    case InputSource::none:
      return 0;
  }
  return 0;
}

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t patch = 32;
  std::size_t base_channels = 8;
  std::size_t epochs = 200;
  std::size_t steps = 0;  // > 0 overrides epochs with a fixed optimizer step count
  std::size_t batch_size = 1;
  double learning_rate = 7e-5;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda1 = 10.0;
  double lambda2 = 1.0;
  double clip_norm = 0.0;
  InputSource input = InputSource::pfsar;
  Ablations ablations;
  bool scru_literal = false;
  bool zero_init_output = true;
  std::size_t threads = 1;
  std::string data_dir;
  std::string checkpoint;
  std::string report;
  std::string log;

  InputSource effective_input() const { return ablations.no_polsar ? InputSource::none : input; }

  ModelConfig model_config() const {
    ModelConfig m;
    m.base_channels = base_channels;
    m.patch = patch;
    m.opt_in_channels = kOpticalChannels;
    m.sar_in_channels = sar_channels(effective_input());
    m.ablations = ablations;
    m.ablations.no_polsar = effective_input() == InputSource::none;
    m.scru_literal = scru_literal;
    m.zero_init_output = zero_init_output;
    return m;
  }

  AdamConfig adam_config() const { return {learning_rate, adam_beta1, adam_beta2, adam_eps, clip_norm}; }
  LossWeights loss_weights() const { return {lambda1, lambda2}; }

  void validate() const {
    if (epochs == 0 && steps == 0) throw ConfigError("epochs and steps cannot both be 0");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (threads == 0) throw ConfigError("threads must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
      throw ConfigError("adam betas must lie in [0,1)");
    }
    if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("lambda1 and lambda2 must be non-negative");
    if (clip_norm < 0.0) throw ConfigError("clip_norm must be non-negative");
    try {
      model_config().validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  void set(const std::string& key, const std::string& value);
  std::string str() const;

  static RunConfig parse(std::istream& is) {
    RunConfig c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      try {
        c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    return c;
  }

  static RunConfig read(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config '" + path.string() + "'");
    return parse(is);
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write config '" + path.string() + "'");
    os << str();
  }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": invalid number '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_number;
  const std::map<std::string, std::function<void()>> setters{
      {"seed", [&] { seed = parse_number<std::uint64_t>(key, value); }},
      {"patch", [&] { patch = parse_number<std::size_t>(key, value); }},
      {"base_channels", [&] { base_channels = parse_number<std::size_t>(key, value); }},
      {"epochs", [&] { epochs = parse_number<std::size_t>(key, value); }},
      {"steps", [&] { steps = parse_number<std::size_t>(key, value); }},
      {"batch_size", [&] { batch_size = parse_number<std::size_t>(key, value); }},
      {"learning_rate", [&] { learning_rate = parse_number<double>(key, value); }},
      {"adam_beta1", [&] { adam_beta1 = parse_number<double>(key, value); }},
      {"adam_beta2", [&] { adam_beta2 = parse_number<double>(key, value); }},
      {"adam_eps", [&] { adam_eps = parse_number<double>(key, value); }},
      {"lambda1", [&] { lambda1 = parse_number<double>(key, value); }},
      {"lambda2", [&] { lambda2 = parse_number<double>(key, value); }},
      {"clip_norm", [&] { clip_norm = parse_number<double>(key, value); }},
      {"input", [&] { input = parse_input(value); }},
      {"no_scdf", [&] { ablations.no_scdf = parse_bool(key, value); }},
      {"no_gc", [&] { ablations.no_gc = parse_bool(key, value); }},
      {"no_mmcf", [&] { ablations.no_mmcf = parse_bool(key, value); }},
      {"no_mmrf", [&] { ablations.no_mmrf = parse_bool(key, value); }},
      {"no_aspp", [&] { ablations.no_aspp = parse_bool(key, value); }},
      {"no_polsar", [&] { ablations.no_polsar = parse_bool(key, value); }},
      {"scru_literal", [&] { scru_literal = parse_bool(key, value); }},
      {"zero_init_output", [&] { zero_init_output = parse_bool(key, value); }},
      {"threads", [&] { threads = parse_number<std::size_t>(key, value); }},
      {"data_dir", [&] { data_dir = value; }},
      {"checkpoint", [&] { checkpoint = value; }},
      {"report", [&] { report = value; }},
      {"log", [&] { log = value; }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown key '" + key + "'");
  it->second();
}

inline std::string RunConfig::str() const {
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "# podf run config\n"
     << "seed = " << seed << '\n'
     << "patch = " << patch << '\n'
     << "base_channels = " << base_channels << '\n'
     << "epochs = " << epochs << '\n'
     << "steps = " << steps << '\n'
     << "batch_size = " << batch_size << '\n'
     << "learning_rate = " << detail::format_double(learning_rate) << '\n'
     << "adam_beta1 = " << detail::format_double(adam_beta1) << '\n'
     << "adam_beta2 = " << detail::format_double(adam_beta2) << '\n'
     << "adam_eps = " << detail::format_double(adam_eps) << '\n'
     << "lambda1 = " << detail::format_double(lambda1) << '\n'
     << "lambda2 = " << detail::format_double(lambda2) << '\n'
     << "clip_norm = " << detail::format_double(clip_norm) << '\n'
     << "input = " << input_name(input) << '\n'
     << "no_scdf = " << b(ablations.no_scdf) << '\n'
     << "no_gc = " << b(ablations.no_gc) << '\n'
     << "no_mmcf = " << b(ablations.no_mmcf) << '\n'
     << "no_mmrf = " << b(ablations.no_mmrf) << '\n'
     << "no_aspp = " << b(ablations.no_aspp) << '\n'
     << "no_polsar = " << b(ablations.no_polsar) << '\n'
     << "scru_literal = " << b(scru_literal) << '\n'
     << "zero_init_output = " << b(zero_init_output) << '\n'
     << "threads = " << threads << '\n'
     << "data_dir = " << data_dir << '\n'
     << "checkpoint = " << checkpoint << '\n'
     << "report = " << report << '\n'
     << "log = " << log << '\n';
  return os.str();
}

}  // namespace podf
