#pragma once

// Checkpoint directory:
//   checkpoint.txt      index (format below)
//   <kind>.<name>.podf  one f64 tensor file per entry
//
//   # podf-checkpoint v1
//   step <global optimizer steps>
//   adam_steps <n>
//   <model config key> <value>          (see kModelKeys)
//   entry <kind> <name> <NxCxHxW>       kind = param | buffer | adam_m | adam_v

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "podf/config.hpp"
#include "podf/model.hpp"
#include "podf/optim.hpp"
#include "podf/tensor_file.hpp"

namespace podf {

struct Checkpoint {
  ModelConfig config;
  std::size_t step = 0;
  std::size_t adam_steps = 0;
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> buffers;
  std::map<std::string, Tensor> adam_m;
  std::map<std::string, Tensor> adam_v;
};

namespace detail {

inline std::string shape_token(const Shape& s) {
  return std::to_string(s.n()) + 'x' + std::to_string(s.c()) + 'x' + std::to_string(s.h()) + 'x' + std::to_string(s.w());
}

inline Shape parse_shape_token(const std::string& t) {
  Shape s{1, 1, 1, 1};
  std::istringstream is(t);
  std::string part;
  std::size_t i = 0;
  while (std::getline(is, part, 'x')) {
    if (i == 4) throw FormatError("bad shape '" + t + "'");
    s.dims[i++] = std::stoul(part);
  }
  if (i != 4) throw FormatError("bad shape '" + t + "'");
  return s;
}

inline std::vector<std::pair<std::string, bool*>> model_flag_keys(ModelConfig& c) {
  return {{"no_scdf", &c.ablations.no_scdf}, {"no_gc", &c.ablations.no_gc},         {"no_mmcf", &c.ablations.no_mmcf},
          {"no_mmrf", &c.ablations.no_mmrf}, {"no_aspp", &c.ablations.no_aspp},     {"no_polsar", &c.ablations.no_polsar},
          {"scru_literal", &c.scru_literal}, {"zero_init_output", &c.zero_init_output}};
}

inline std::vector<std::pair<std::string, std::size_t*>> model_size_keys(ModelConfig& c) {
  return {{"base_channels", &c.base_channels},
          {"opt_in_channels", &c.opt_in_channels},
          {"sar_in_channels", &c.sar_in_channels},
          {"patch", &c.patch}};
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const Model& model, Adam& adam, std::size_t step) {
  std::filesystem::create_directories(dir);
  std::ostringstream idx;
  idx << "# podf-checkpoint v1\nstep " << step << "\nadam_steps " << adam.steps() << '\n';
  ModelConfig cfg = model.config();
  for (auto& [k, v] : detail::model_size_keys(cfg)) idx << k << ' ' << *v << '\n';
  for (auto& [k, v] : detail::model_flag_keys(cfg)) idx << k << ' ' << (*v ? 1 : 0) << '\n';

  auto emit = [&](const std::string& kind, const std::string& name, const Tensor& t) {
    idx << "entry " << kind << ' ' << name << ' ' << detail::shape_token(t.shape()) << '\n';
    write_tensor(dir / (kind + '.' + name + ".podf"), t);
  };
  for (const auto& [name, t] : model.params().params()) emit("param", name, t);
  for (const auto& [name, t] : model.params().buffers()) emit("buffer", name, t);
  for (const auto& [name, t] : model.params().params()) {
    auto m = adam.first_moments().find(name);
    if (m == adam.first_moments().end()) continue;
    emit("adam_m", name, Tensor(t.shape(), m->second));
    emit("adam_v", name, Tensor(t.shape(), adam.second_moments().at(name)));
  }
  std::ofstream os(dir / "checkpoint.txt", std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint index in '" + dir.string() + "'");
  os << idx.str();
}

inline Checkpoint read_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "checkpoint.txt");
  if (!is) throw IoError("no checkpoint at '" + dir.string() + "'");
  Checkpoint ck;
  auto sizes = detail::model_size_keys(ck.config);
  auto flags = detail::model_flag_keys(ck.config);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "step") {
      ls >> ck.step;
    } else if (key == "adam_steps") {
      ls >> ck.adam_steps;
    } else if (key == "entry") {
      std::string kind, name, shape;
      ls >> kind >> name >> shape;
      if (!ls) throw FormatError("malformed checkpoint entry: " + line);
      Tensor t = read_tensor(dir / (kind + '.' + name + ".podf"));
      if (t.shape() != detail::parse_shape_token(shape)) {
        throw FormatError("checkpoint entry '" + name + "' has shape " + t.shape().str() + ", index says " + shape);
      }
      if (kind == "param") {
        ck.params[name] = t;
      } else if (kind == "buffer") {
        ck.buffers[name] = t;
      } else if (kind == "adam_m") {
        ck.adam_m[name] = t;
      } else if (kind == "adam_v") {
        ck.adam_v[name] = t;
      } else {
        throw FormatError("unknown checkpoint entry kind '" + kind + "'");
      }
      continue;
    } else {
      bool known = false;
      for (auto& [k, v] : sizes) {
        if (k == key) {
          ls >> *v;
          known = true;
        }
      }
      for (auto& [k, v] : flags) {
        if (k == key) {
          int b = 0;
          ls >> b;
          *v = b != 0;
          known = true;
        }
      }
      if (!known) throw FormatError("unknown checkpoint key '" + key + "'");
    }
    if (!ls) throw FormatError("malformed checkpoint line: " + line);
  }
  return ck;
}

/// Rebuilds the model of a checkpoint; every parameter and buffer must be
/// present with the shape the configuration implies.
inline Model restore_model(const Checkpoint& ck) {
  Model m = Model::build(ck.config, 0);
  auto copy = [](std::map<std::string, Tensor>& dst, const std::map<std::string, Tensor>& src, const char* what) {
    if (dst.size() != src.size()) {
      throw FormatError(std::string("checkpoint has ") + std::to_string(src.size()) + ' ' + what + "s, model expects " +
                        std::to_string(dst.size()));
    }
    for (auto& [name, t] : dst) {
      auto it = src.find(name);
      if (it == src.end()) throw FormatError(std::string("checkpoint lacks ") + what + " '" + name + "'");
      if (it->second.shape() != t.shape()) throw FormatError(std::string(what) + " '" + name + "' has the wrong shape");
      std::copy(it->second.data().begin(), it->second.data().end(), t.mutable_data().begin());
    }
  };
  copy(m.params().params(), ck.params, "parameter");
  copy(m.params().buffers(), ck.buffers, "buffer");
  return m;
}

inline void restore_adam(const Checkpoint& ck, Adam& adam) {
  adam.first_moments().clear();
  adam.second_moments().clear();
  for (const auto& [name, t] : ck.adam_m) adam.first_moments()[name].assign(t.data().begin(), t.data().end());
  for (const auto& [name, t] : ck.adam_v) adam.second_moments()[name].assign(t.data().begin(), t.data().end());
  adam.set_steps(ck.adam_steps);
}

}  // namespace podf
