#include "fixtures.hpp"

#include <fstream>

#include "lbi/errors.hpp"
#include "lbi/tensor.hpp"

namespace fixture {

using lbi::ModelConfig;
using lbi::RngState;

ModelConfig tiny_config(const std::string& backend, uint64_t seed) {
  ModelConfig cfg;
  cfg.vocab_size = 61;
  cfg.D = 16;
  cfg.L = 8;
  cfg.r = 4;
  cfg.K = 3;
  cfg.layers_per_region = 1;
  cfg.backend = backend;
  cfg.H = 2;
  cfg.N = 4;
  cfg.X = 32;
  cfg.seed = seed;
  return cfg;
}

ModelConfig toy_config(const std::string& backend, uint64_t seed) {
  ModelConfig cfg;
  cfg.vocab_size = 256;
  cfg.D = 64;
  cfg.L = 128;
  cfg.r = 8;
  cfg.K = 4;
  cfg.layers_per_region = 2;
  cfg.backend = backend;
  cfg.H = 4;
  cfg.N = 8;
  cfg.X = 256;
  cfg.seed = seed;
  return cfg;
}

std::pair<std::vector<int32_t>, std::vector<int32_t>> random_batch(
    const ModelConfig& cfg, int64_t B, uint64_t seed) {
  RngState rng{seed, 0};
  const int64_t n = B * cfg.L;
  std::vector<int32_t> toks(static_cast<size_t>(n));
  std::vector<int32_t> tgts(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    toks[static_cast<size_t>(i)] =
        static_cast<int32_t>(rng.next_below(cfg.vocab_size));
  for (int64_t i = 0; i < n; ++i)
    tgts[static_cast<size_t>(i)] =
        static_cast<int32_t>(rng.next_below(cfg.vocab_size));
  return {std::move(toks), std::move(tgts)};
}

namespace {

const char* kWords[] = {
    "the",     "quick",   "river",   "stone",    "light",   "wind",
    "meadow",  "harbor",  "lantern", "forest",   "echo",    "silver",
    "thread",  "garden",  "winter",  "summer",   "autumn",  "spring",
    "mountain","valley",  "shadow",  "morning",  "evening", "night",
    "bridge",  "tower",   "castle",  "village",  "road",    "path",
    "letter",  "story",   "song",    "voice",    "dream",   "memory",
    "ocean",   "island",  "sail",    "anchor",   "compass", "chart",
    "ember",   "flame",   "candle",  "mirror",   "window",  "door",
    "copper",  "iron",    "marble",  "granite",  "willow",  "cedar",
    "falcon",  "sparrow", "heron",   "otter",    "badger",  "fox",
    "orchard", "harvest", "mill",    "baker",    "weaver",  "smith",
    "north",   "south",   "east",    "west",     "upper",   "lower",
    "quiet",   "bright",  "heavy",   "gentle",   "distant", "near",
    "first",   "second",  "third",   "final",    "hidden",  "open",
    "walks",   "turns",   "carries", "holds",    "follows", "leads",
    "rises",   "settles", "drifts",  "gathers",  "scatters","returns",
    "under",   "over",    "beside",  "beyond",   "within",  "around",
    "because", "while",   "until",   "before",   "after",   "during",
};

constexpr size_t kWordCount = sizeof(kWords) / sizeof(kWords[0]);

}  // namespace

void write_corpus(const std::string& path, int64_t min_bytes, uint64_t seed) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw lbi::DataError("cannot open corpus for writing: " + path);
  RngState rng{seed, 0};
  int64_t written = 0;
  int words_in_sentence = 0;
  while (written < min_bytes) {
    const char* w = kWords[static_cast<size_t>(
        rng.next_below(static_cast<int64_t>(kWordCount)))];
    out << w;
    written += static_cast<int64_t>(std::string(w).size());
    ++words_in_sentence;
    if (words_in_sentence >= 8 + static_cast<int>(rng.next_below(8))) {
      out << ".\n";
      written += 2;
      words_in_sentence = 0;
    } else {
      out << ' ';
      written += 1;
    }
  }
  out << '\n';
  if (!out) throw lbi::DataError("failed writing corpus: " + path);
}

}  // namespace fixture
