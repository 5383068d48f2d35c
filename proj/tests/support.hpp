#pragma once

// Shared helpers for the unit tests.

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "podf/params.hpp"

namespace podf::test {

inline void fill_all(ParamStore& store, const std::string& needle, double v) {
  for (auto& [name, t] : store.params())
    if (name.find(needle) != std::string::npos) std::fill(t.mutable_data().begin(), t.mutable_data().end(), v);
}

inline void expect_bit_equal(const Tensor& a, const Tensor& b) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]) << "element " << i;
}

// Materializes the block's parameters, then runs it once more with autograd.
template <typename Block>
Tensor build_and_run(ParamStore& store, const Tensor& x, Block block, std::uint64_t seed = 1) {
  {
    NoGradGuard g;
    block(Scope(store, Mode::train, true, seed), x);
  }
  return block(Scope(store, Mode::train), x);
}

// Fresh, empty directory under the test temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(::testing::TempDir()) / ("podf_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace podf::test
