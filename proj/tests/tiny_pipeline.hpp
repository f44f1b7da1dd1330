#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "concausal/pipeline.hpp"

// A pipeline small enough to run inside a unit test in a few seconds.
inline concausal::PipelineConfig tiny_config(const std::filesystem::path& dir, std::uint64_t seed = 3) {
  concausal::PipelineConfig c;
  c.seed = seed;
  c.data.train_count = 240;
  c.data.test_count = 60;
  c.train.epochs = 2;
  c.ae.epochs = 1;
  c.passes = 2;
  c.level_cap = 4;
  c.artifact_dir = dir;
  return c;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("concausal_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}
