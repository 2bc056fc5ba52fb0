#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "lbi/autodiff.hpp"
#include "lbi/executor.hpp"
#include "lbi/model.hpp"
#include "lbi/scan.hpp"

namespace lbi {

enum class Schedule : uint8_t { ThreePhase, Streaming };

Schedule parse_schedule(const std::string& name);

struct BackwardPlan {
  // basis rows propagated per region rebuild; 0 selects r (full reuse)
  int64_t chunk = 0;
  int64_t workers = 1;
  Schedule schedule = Schedule::ThreePhase;
  // chains shorter than this route to the sequential scan kernel
  int64_t scan_seq_threshold = 4;
};

// Test instrumentation: every region-scoped read performed inside a backward
// task is logged as (task region, resource region). Cross-region pairs would
// indicate a broken independence contract.
struct AccessLog {
  void note(int64_t task, int64_t resource);
  std::vector<std::pair<int64_t, int64_t>> entries() const;
  int64_t cross_region_count() const;

 private:
  mutable std::mutex mu_;
  std::vector<std::pair<int64_t, int64_t>> entries_;
};

struct InterfaceJacobian {
  int64_t region = 0;
  // [B, r, r] with J[b, i, j] = d m_out[b, i] / d m_in[b, j]
  Tensor J;
};

struct HeadAdjoints {
  double loss = 0.0;
  Tensor mbar_K;  // [B, r], loss gradient at the terminal boundary
  Tensor canvas;  // [B, L, D], head-path canvas contribution
  std::map<std::string, Tensor> grads;  // head.dec.* and head.proj
};

struct LbiGradients {
  std::vector<Tensor> interface_adjoints;  // mbar_0..mbar_K, each [B, r]
  std::map<std::string, Tensor> parameter_gradients;
  std::vector<InterfaceJacobian> jacobians;
  // stats of the first batch element's scan (all batch elements share the
  // same tree shape)
  scan::ScanStats scan_stats;
};

struct PhaseSpan {
  int64_t region = 0;
  double start_ms = 0.0;
  double end_ms = 0.0;
};

struct OverlapReport {
  std::vector<PhaseSpan> forward;   // per-region forward spans
  std::vector<PhaseSpan> jacobian;  // per-region materialization spans
  double forward_end_ms = 0.0;      // full forward, loss head included

  // true when some Jacobian task started before the forward pass finished
  bool overlapped() const;
};

// Rebuilds region k detached from the global graph, checks the replayed
// boundary value bitwise against the cache, then sweeps the r basis
// cotangents in ceil(r/chunk) chunks. Each basis row is replicated across the
// batch, so one sweep fills row i of every per-batch-element Jacobian.
InterfaceJacobian materialize_jacobian(const Model& model,
                                       const ForwardCache& cache,
                                       const BackwardPlan& plan,
                                       AccessLog* log = nullptr);

// Phase 1: one independent task per region, disjoint output slots.
std::vector<InterfaceJacobian> phase1_all(const Model& model,
                                          const std::vector<ForwardCache>& caches,
                                          const BackwardPlan& plan, Executor& ex,
                                          AccessLog* log = nullptr);

// Phase 2: per batch element, suffix-scan the transposed Jacobians and apply
// the products to the terminal adjoint. Returns mbar_0..mbar_K.
std::vector<Tensor> transport_adjoints(const std::vector<InterfaceJacobian>& js,
                                       const Tensor& mbar_K, Executor& ex,
                                       int64_t seq_threshold,
                                       scan::ScanStats* stats = nullptr);

// Phase 3: rebuilds region k, seeds reverse mode with mbar_{k+1}, returns the
// region's parameter gradients. The canvas contribution is written to
// canvas_out when given.
std::map<std::string, Tensor> phase3_region_backward(const Model& model,
                                                     const ForwardCache& cache,
                                                     const Tensor& mbar_next,
                                                     Tensor* canvas_out = nullptr,
                                                     AccessLog* log = nullptr);

// Loss-head sweep over the recorded graph, cut at the terminal boundary and
// at the canvas: yields mbar_K, the head parameter gradients and the head's
// canvas contribution.
HeadAdjoints head_backward(const Model& model, const ForwardOutputs& fwd);

// Full pipeline on a completed forward: head sweep, Phase 1, Phase 2,
// Phase 3, then deterministic canvas accumulation (head path, regions in
// ascending order, interface init) and the embedding scatter.
LbiGradients lbi_backward(const Model& model, const ForwardOutputs& fwd,
                          const BackwardPlan& plan, AccessLog* log = nullptr);

// Algorithm variant that owns the forward pass: region k's Jacobian task is
// launched as soon as region k's cache exists, while the forward continues
// with later regions. Gradients are bitwise equal to the three-phase
// schedule; with a single worker the Jacobian tasks run at the sync point in
// region order, which is exactly the three-phase ordering.
LbiGradients streaming_backward(const Model& model,
                                const std::vector<int32_t>& tokens, int64_t B,
                                const std::vector<int32_t>& targets,
                                const BackwardPlan& plan,
                                OverlapReport* report = nullptr,
                                double* loss_out = nullptr,
                                AccessLog* log = nullptr);

// Reference gradients: one reverse sweep over the full recorded graph.
std::map<std::string, Tensor> oracle_gradients(const ForwardOutputs& fwd);

struct ParityRow {
  int64_t trial = 0;
  std::string backend;
  double max_abs = 0.0;
  double rel_l2 = 0.0;
  double cosine = 1.0;
};

struct ParityResult {
  std::vector<ParityRow> rows;
  double worst_max_abs = 0.0;
  double worst_rel_l2 = 0.0;
  double worst_cosine = 1.0;
};

// n_inits x n_batches trials of lbi_backward vs the oracle on freshly seeded
// models and batches. When csv_path is nonempty the per-trial rows are also
// written as trial,backend,max_abs,rel_l2,cosine.
ParityResult parity_suite(const ModelConfig& cfg, Dtype dtype, int64_t n_inits,
                          int64_t n_batches, int64_t B, const BackwardPlan& plan,
                          const std::string& csv_path = "");

}  // namespace lbi
