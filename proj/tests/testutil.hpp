#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "pplus/model.hpp"
#include "pplus/vocab.hpp"

#ifndef PPLUS_DATA_DIR
#define PPLUS_DATA_DIR "data"
#endif

namespace pplus::test {

inline std::string data_path(const std::string& name) {
  return std::string(PPLUS_DATA_DIR) + "/" + name;
}

inline Vocabulary toy_vocab() { return Vocabulary::load_file(data_path("vocabulary.txt")); }

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

inline Model micro_model(uint64_t seed = 1) {
  ModelConfig cfg;
  cfg.unet = UNetConfig::micro5();
  return Model::build(toy_vocab(), cfg, seed);
}

inline Model reference_model(uint64_t seed = 1) {
  ModelConfig cfg;
  cfg.unet = UNetConfig::reference16();
  return Model::build(toy_vocab(), cfg, seed);
}

}  // namespace pplus::test
