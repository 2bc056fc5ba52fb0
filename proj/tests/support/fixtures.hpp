#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lbi/model.hpp"

namespace fixture {

// Small enough that exhaustive finite differences stay cheap.
lbi::ModelConfig tiny_config(const std::string& backend, uint64_t seed = 1);

// The acceptance-scale shape: D=64, L=128, K=4, r=8.
lbi::ModelConfig toy_config(const std::string& backend, uint64_t seed = 1);

// Random token windows plus next-token targets in [0, vocab).
std::pair<std::vector<int32_t>, std::vector<int32_t>> random_batch(
    const lbi::ModelConfig& cfg, int64_t B, uint64_t seed);

// Deterministic word-soup corpus of at least min_bytes bytes.
void write_corpus(const std::string& path, int64_t min_bytes,
                  uint64_t seed = 7);

}  // namespace fixture
