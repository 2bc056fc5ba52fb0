#include "lbi/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "lbi/errors.hpp"
#include "lbi/scan.hpp"

namespace lbi::diag {

namespace {

void require_matrix(const Tensor& m, const char* what) {
  if (m.shape.size() != 2)
    throw DimensionError(std::string(what) + " expects a rank-2 tensor");
}

// y = M v with fixed ascending-index accumulation
std::vector<double> matvec(const Tensor& m, const std::vector<double>& v) {
  const int64_t rows = m.shape[0];
  const int64_t cols = m.shape[1];
  std::vector<double> y(static_cast<size_t>(rows), 0.0);
  for (int64_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < cols; ++j)
      acc += m.data[static_cast<size_t>(i * cols + j)] * v[static_cast<size_t>(j)];
    y[static_cast<size_t>(i)] = acc;
  }
  return y;
}

// y = M^T w
std::vector<double> matvec_t(const Tensor& m, const std::vector<double>& w) {
  const int64_t rows = m.shape[0];
  const int64_t cols = m.shape[1];
  std::vector<double> y(static_cast<size_t>(cols), 0.0);
  for (int64_t j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (int64_t i = 0; i < rows; ++i)
      acc += m.data[static_cast<size_t>(i * cols + j)] * w[static_cast<size_t>(i)];
    y[static_cast<size_t>(j)] = acc;
  }
  return y;
}

double norm2(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

SpectralResult spectral_norm(const Tensor& m, int64_t max_iters, double tol) {
  require_matrix(m, "spectral_norm");
  if (m.shape[0] != m.shape[1])
    throw DimensionError("spectral_norm expects a square matrix");
  if (max_iters < 1) throw ArgumentError("max_iters must be positive");

  bool all_zero = true;
  for (double x : m.data) {
    if (x != 0.0) {
      all_zero = false;
      break;
    }
  }
  if (all_zero) return {0.0, true, 0};

  const int64_t cols = m.shape[1];
  RngState rng{42, 0};
  std::vector<double> v(static_cast<size_t>(cols));
  for (double& x : v) x = rng.next_normal();
  const double vn = norm2(v);
  for (double& x : v) x /= vn;

  SpectralResult out;
  double prev = 0.0;
  for (int64_t it = 1; it <= max_iters; ++it) {
    out.iters = it;
    std::vector<double> w = matvec(m, v);
    const double est = norm2(w);  // sqrt(v^T M^T M v) for unit v
    std::vector<double> u = matvec_t(m, w);
    const double un = norm2(u);
    if (un == 0.0) {
      // start vector landed in the null space; one deterministic restart
      if (it == 1) {
        for (double& x : v) x = rng.next_normal();
        const double rn = norm2(v);
        for (double& x : v) x /= rn;
        continue;
      }
      out.value = est;
      out.converged = true;
      return out;
    }
    for (size_t j = 0; j < u.size(); ++j) v[j] = u[j] / un;
    if (std::abs(est - prev) <= tol * std::max(1.0, est)) {
      out.value = est;
      out.converged = true;
      return out;
    }
    prev = est;
  }
  out.value = prev;
  out.converged = false;
  return out;
}

SuffixNorms suffix_norms(const std::vector<Tensor>& j) {
  if (j.empty()) throw ArgumentError("suffix_norms needs at least one factor");
  for (const Tensor& f : j) {
    require_matrix(f, "suffix_norms");
    if (f.shape[0] != f.shape[1])
      throw DimensionError("suffix_norms expects square factors");
  }
  const scan::SuffixProducts p = scan::suffix_scan_sequential(j);
  SuffixNorms out;
  out.local.reserve(j.size());
  for (const Tensor& f : j) out.local.push_back(spectral_norm(f).value);
  out.suffix.reserve(p.P.size());
  for (const Tensor& pk : p.P) out.suffix.push_back(spectral_norm(pk).value);
  return out;
}

double frobenius_rms(const Tensor& m) {
  require_matrix(m, "frobenius_rms");
  if (m.shape[0] != m.shape[1])
    throw DimensionError("frobenius_rms expects a square matrix");
  double acc = 0.0;
  for (double x : m.data) acc += x * x;
  return std::sqrt(acc / static_cast<double>(m.shape[0]));
}

SpectraRecord compute_spectra(int64_t step, uint64_t seed,
                              const std::vector<Tensor>& j) {
  SpectraRecord rec;
  rec.step = step;
  rec.seed = seed;
  const SuffixNorms norms = suffix_norms(j);
  rec.local_spec = norms.local;
  rec.suffix_spec.assign(norms.suffix.begin(),
                         norms.suffix.begin() +
                             static_cast<std::ptrdiff_t>(j.size()));
  rec.frob_rms.reserve(j.size());
  for (const Tensor& f : j) rec.frob_rms.push_back(frobenius_rms(f));
  return rec;
}

void emit_spectra(const std::string& path,
                  const std::vector<SpectraRecord>& records) {
  std::vector<const SpectraRecord*> order;
  order.reserve(records.size());
  for (const SpectraRecord& r : records) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(),
                   [](const SpectraRecord* a, const SpectraRecord* b) {
                     return a->step < b->step;
                   });

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open spectra file: " + path);
  out << "step,seed,region,local_spec,suffix_spec,frob_rms\n";
  char buf[3 * 32 + 8];
  for (const SpectraRecord* r : order) {
    const size_t k_count = r->local_spec.size();
    if (r->suffix_spec.size() != k_count || r->frob_rms.size() != k_count)
      throw ArgumentError("spectra record field lengths disagree");
    for (size_t k = 0; k < k_count; ++k) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", r->local_spec[k],
                    r->suffix_spec[k], r->frob_rms[k]);
      out << r->step << ',' << r->seed << ',' << k << ',' << buf << '\n';
    }
  }
  if (!out) throw DataError("failed writing spectra file: " + path);
}

}  // namespace lbi::diag
