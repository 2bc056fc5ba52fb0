#include "lbi/scan.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>

#include "lbi/errors.hpp"

namespace lbi::scan {

namespace {

int64_t check_chain(const std::vector<Tensor>& J) {
  if (J.empty()) return 0;
  const int64_t r = J[0].shape.empty() ? 0 : J[0].shape[0];
  for (const Tensor& j : J) {
    if (j.rank() != 2 || j.shape[0] != j.shape[1] || j.shape[0] != r)
      throw DimensionError("interface Jacobians must all be r x r");
  }
  if (r < 1) throw DimensionError("interface rank must be positive");
  return r;
}

}  // namespace

SuffixProducts suffix_scan_sequential(const std::vector<Tensor>& J) {
  const int64_t K = static_cast<int64_t>(J.size());
  if (K == 0) return SuffixProducts{{Tensor::identity(1)}};
  const int64_t r = check_chain(J);
  SuffixProducts out;
  out.P.assign(static_cast<size_t>(K + 1), Tensor());
  out.P[static_cast<size_t>(K)] = Tensor::identity(r, J[0].dtype);
  for (int64_t k = K - 1; k >= 0; --k)
    out.P[static_cast<size_t>(k)] =
        matmul(transpose2d(J[static_cast<size_t>(k)]), out.P[static_cast<size_t>(k + 1)]);
  return out;
}

SuffixProducts suffix_scan_parallel(const std::vector<Tensor>& J, Executor& ex,
                                    ScanStats* stats, int64_t seq_threshold) {
  const int64_t K = static_cast<int64_t>(J.size());
  if (stats) *stats = ScanStats{};
  if (K == 0) return suffix_scan_sequential(J);
  if (K == 1) {
    // single boundary: the only suffix product is the bare transpose, so
    // zero combine levels regardless of routing
    const int64_t r = check_chain(J);
    SuffixProducts out;
    out.P.assign(2, Tensor());
    out.P[0] = transpose2d(J[0]);
    out.P[1] = Tensor::identity(r, J[0].dtype);
    return out;
  }
  if (K < seq_threshold) {
    if (stats) {
      stats->routed_sequential = true;
      stats->combines = K;
      stats->depth = static_cast<int>(K);
    }
    return suffix_scan_sequential(J);
  }
  const int64_t r = check_chain(J);

  // Work on the reversed sequence with a flipped combine so the suffix scan
  // becomes an inclusive left-to-right scan: x[i] accumulates
  // B[i] * B[i-1] * ... * B[0] with B[i] = J[K-1-i]^T.
  std::vector<Tensor> x(static_cast<size_t>(K));
  for (int64_t i = 0; i < K; ++i)
    x[static_cast<size_t>(i)] = transpose2d(J[static_cast<size_t>(K - 1 - i)]);

  ScanStats st;
  for (int64_t half = 1; half < K; half *= 2) {
    // Block [s, s+2*half): every index in the right half combines with the
    // completed left-half product sitting at s+half-1. Leaders are never
    // written at their own level and each task owns one slot, which is what
    // makes the result independent of the worker count.
    std::vector<std::function<void()>> tasks;
    for (int64_t s = 0; s < K; s += 2 * half) {
      const int64_t mid = s + half;
      if (mid >= K) continue;
      const int64_t end = std::min(s + 2 * half, K);
      for (int64_t i = mid; i < end; ++i) {
        tasks.push_back([&x, i, mid] {
          x[static_cast<size_t>(i)] =
              matmul(x[static_cast<size_t>(i)], x[static_cast<size_t>(mid - 1)]);
        });
      }
    }
    st.combines += static_cast<int64_t>(tasks.size());
    st.depth += 1;
    ex.run_all(tasks);
  }

  SuffixProducts out;
  out.P.assign(static_cast<size_t>(K + 1), Tensor());
  out.P[static_cast<size_t>(K)] = Tensor::identity(r, J[0].dtype);
  for (int64_t k = 0; k < K; ++k)
    out.P[static_cast<size_t>(k)] = std::move(x[static_cast<size_t>(K - 1 - k)]);
  if (stats) *stats = st;
  return out;
}

std::vector<Tensor> apply_adjoints(const SuffixProducts& P, const Tensor& mbar_K) {
  if (P.P.empty()) throw ArgumentError("empty suffix products");
  const int64_t r = P.P[0].shape[0];
  if (mbar_K.numel() != r)
    throw DimensionError("terminal adjoint length does not match interface rank");
  std::vector<Tensor> out;
  out.reserve(P.P.size());
  for (const Tensor& p : P.P) {
    Tensor m({r}, promote(p.dtype, mbar_K.dtype));
    for (int64_t i = 0; i < r; ++i) {
      const double* row = p.data.data() + i * r;
      double acc = 0.0;
      for (int64_t j = 0; j < r; ++j) acc += row[j] * mbar_K.data[static_cast<size_t>(j)];
      m.data[static_cast<size_t>(i)] = acc;
    }
    apply_dtype(m);
    out.push_back(std::move(m));
  }
  return out;
}

namespace {
constexpr char kTraceMagic[8] = {'L', 'B', 'I', 'S', 'C', 'A', 'N', '1'};
}

void write_trace(const std::string& path, const std::vector<Tensor>& J,
                 const SuffixProducts& P) {
  if (P.P.size() != J.size() + 1)
    throw ArgumentError("trace needs K Jacobians and K+1 products");
  const int64_t K = static_cast<int64_t>(J.size());
  const int64_t r = K > 0 ? J[0].shape[0] : P.P[0].shape[0];
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  uint32_t version = 1, k32 = static_cast<uint32_t>(K), r32 = static_cast<uint32_t>(r);
  std::fwrite(kTraceMagic, 1, 8, f);
  std::fwrite(&version, sizeof version, 1, f);
  std::fwrite(&k32, sizeof k32, 1, f);
  std::fwrite(&r32, sizeof r32, 1, f);
  for (const Tensor& j : J) std::fwrite(j.data.data(), sizeof(double), j.data.size(), f);
  for (const Tensor& p : P.P) std::fwrite(p.data.data(), sizeof(double), p.data.size(), f);
  std::fclose(f);
}

Trace read_trace(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open '" + path + "'");
  char magic[8];
  uint32_t version = 0, k32 = 0, r32 = 0;
  bool ok = std::fread(magic, 1, 8, f) == 8 && std::memcmp(magic, kTraceMagic, 8) == 0 &&
            std::fread(&version, sizeof version, 1, f) == 1 && version == 1 &&
            std::fread(&k32, sizeof k32, 1, f) == 1 &&
            std::fread(&r32, sizeof r32, 1, f) == 1;
  if (!ok) {
    std::fclose(f);
    throw DataError("'" + path + "' is not a scan trace");
  }
  Trace tr;
  const int64_t K = k32, r = r32;
  auto read_mat = [&]() {
    Tensor t({r, r});
    if (std::fread(t.data.data(), sizeof(double), t.data.size(), f) != t.data.size()) {
      std::fclose(f);
      throw DataError("truncated scan trace");
    }
    return t;
  };
  for (int64_t k = 0; k < K; ++k) tr.J.push_back(read_mat());
  for (int64_t k = 0; k <= K; ++k) tr.P.P.push_back(read_mat());
  std::fclose(f);
  return tr;
}

}  // namespace lbi::scan
