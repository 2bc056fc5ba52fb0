#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lbi/tensor.hpp"

namespace lbi::diag {

struct SpectralResult {
  double value = 0.0;
  bool converged = false;
  int64_t iters = 0;
};

// Largest singular value of a square matrix by power iteration on M^T M.
// Deterministic: fixed start vector, fixed summation order.
SpectralResult spectral_norm(const Tensor& m, int64_t max_iters = 1000,
                             double tol = 1e-10);

struct SuffixNorms {
  std::vector<double> local;   // ||J_k||_2 for k = 0..K-1
  std::vector<double> suffix;  // ||P_k||_2 for k = 0..K (P_K = I)
};

// j holds K square [r, r] factors ordered by region
SuffixNorms suffix_norms(const std::vector<Tensor>& j);

// sqrt(sum of squares / r) for an [r, r] matrix: the per-row RMS scale
double frobenius_rms(const Tensor& m);

struct SpectraRecord {
  int64_t step = 0;
  uint64_t seed = 0;
  std::vector<double> local_spec;   // per region
  std::vector<double> suffix_spec;  // ||P_k||_2 at the region's inlet
  std::vector<double> frob_rms;     // per region
};

SpectraRecord compute_spectra(int64_t step, uint64_t seed,
                              const std::vector<Tensor>& j);

// CSV with header step,seed,region,local_spec,suffix_spec,frob_rms and one
// row per (step, region), sorted by that pair.
void emit_spectra(const std::string& path,
                  const std::vector<SpectraRecord>& records);

}  // namespace lbi::diag
