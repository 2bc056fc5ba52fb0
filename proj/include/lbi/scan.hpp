#pragma once

#include <string>
#include <vector>

#include "lbi/executor.hpp"
#include "lbi/tensor.hpp"

namespace lbi::scan {

// Suffix products of transposed interface Jacobians:
//   P[K] = I,  P[k] = J[k]^T * P[k+1].
// The terminal adjoint is transported as mbar[k] = P[k] * mbar[K].
struct SuffixProducts {
  std::vector<Tensor> P;  // K + 1 matrices, each r x r
};

struct ScanStats {
  int64_t combines = 0;        // matrix multiplies performed
  int depth = 0;               // sequential combine levels
  bool routed_sequential = false;
};

// Right fold, one multiply per step. This is the reference the parallel scan
// is checked against.
SuffixProducts suffix_scan_sequential(const std::vector<Tensor>& J);

// Minimum-depth balanced combination tree (ceil(log2 K) levels). The tree
// shape is fixed by K alone, every tree node writes its own slot, and levels
// are barriers, so results are bitwise identical for any worker count.
// Sequences shorter than seq_threshold route to the sequential kernel.
SuffixProducts suffix_scan_parallel(const std::vector<Tensor>& J, Executor& ex,
                                    ScanStats* stats = nullptr,
                                    int64_t seq_threshold = 4);

// mbar[k] = P[k] * mbar_K for every k; mbar_K is a length-r vector.
std::vector<Tensor> apply_adjoints(const SuffixProducts& P, const Tensor& mbar_K);

// Binary trace of a scan instance: all J[k] followed by all P[k], row-major
// binary64, with a versioned header.
void write_trace(const std::string& path, const std::vector<Tensor>& J,
                 const SuffixProducts& P);

struct Trace {
  std::vector<Tensor> J;
  SuffixProducts P;
};

Trace read_trace(const std::string& path);

}  // namespace lbi::scan
