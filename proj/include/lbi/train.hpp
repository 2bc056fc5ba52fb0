#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lbi/backward.hpp"
#include "lbi/model.hpp"

namespace lbi::train {

struct TrainConfig {
  ModelConfig model;
  int64_t steps = 200;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  int64_t warmup_steps = 100;  // linear ramp, constant afterwards
  int64_t eval_every = 50;     // 0 disables periodic held-out evals
  int64_t eval_tokens = 8192;
  std::vector<uint64_t> seeds = {1};
  std::string backward = "lbi";  // lbi | oracle
  Schedule schedule = Schedule::ThreePhase;
  int64_t chunk = 0;  // 0 means all basis columns in one rebuild
  int64_t workers = 1;
  int64_t batch_size = 4;
  std::string data;  // byte corpus path
  int64_t spectra_every = 100;  // 0 disables; step 0 is never logged
  std::string dtype = "f64";    // f64 | f32
  std::string out_dir;          // empty runs without file output

  void validate() const;
  BackwardPlan plan() const;
  Dtype parsed_dtype() const;
};

TrainConfig config_from_json(const std::string& text);
TrainConfig config_from_file(const std::string& path);

// Reads the file as raw bytes (token ids 0..255) and splits it
// deterministically: the trailing 5 percent is held out. Empty file throws.
std::pair<std::vector<int32_t>, std::vector<int32_t>> ingest_text(
    const std::string& path);

// One batch of windows: tokens[p..p+L), targets[p+1..p+L]. Starts are drawn
// from rng, so a fixed (seed, counter) pair fixes the batch.
std::pair<std::vector<int32_t>, std::vector<int32_t>> sample_batch(
    const std::vector<int32_t>& stream, int64_t L, int64_t B, RngState& rng);

struct RunMetrics {
  uint64_t seed = 0;
  int64_t steps_run = 0;
  std::vector<double> train_ce;                      // per step
  std::vector<std::pair<int64_t, double>> val_ce;    // (step, ce)
  double initial_train_ce = 0.0;
  double final_train_ce = 0.0;
  double final_val_ce = 0.0;  // NaN when there is no held-out data
  double wall_seconds = 0.0;
  bool diverged = false;
  int64_t diverged_step = -1;
  bool retried = false;  // one retry at half the learning rate
  ParamCounts counts;
};

// Trains one model for one seed; on divergence retries once at lr/2.
// out_model receives the final weights when given.
RunMetrics train_single(const TrainConfig& cfg, uint64_t seed,
                        const std::vector<int32_t>& train_tokens,
                        const std::vector<int32_t>& val_tokens,
                        Model* out_model = nullptr, bool dense = false);

// Runs every seed in cfg.seeds over cfg.data. With a nonempty out_dir writes
// metrics.csv (step,split,ce,seed), spectra.csv, and one checkpoint per seed.
std::vector<RunMetrics> train(const TrainConfig& cfg);

enum class SweepAxis : uint8_t { Rank, RegionSize, Backend };

SweepAxis parse_sweep_axis(const std::string& name);

struct SweepRow {
  std::string label;
  ModelConfig cfg;
  ParamCounts counts;
  RunMetrics metrics;
};

// Rank sweeps r over {16, 32, 64}; RegionSize sweeps layers-per-region over
// {1, 2, 3, 4} at fixed total depth (the last region absorbs the remainder);
// Backend sweeps the four layer stacks. One row per (point, seed).
std::vector<SweepRow> sweep(SweepAxis axis, const TrainConfig& base,
                            const std::string& csv_path = "");

struct DenseComparison {
  uint64_t seed = 0;
  RunMetrics bounded;
  RunMetrics dense;
  double gap = 0.0;  // bounded final CE minus dense final CE
};

// Trains the bounded-interface model and the plain residual stack on the
// same data and seeds and reports the per-seed quality gap.
std::vector<DenseComparison> compare_dense(const TrainConfig& cfg,
                                           const std::string& csv_path = "");

}  // namespace lbi::train
