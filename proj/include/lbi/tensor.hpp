#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "lbi/errors.hpp"

namespace lbi {

enum class Dtype : uint8_t { F64 = 0, F32 = 1 };

// Dense row-major tensor. Storage is always binary64; a tensor marked F32 has
// every kernel result rounded element-wise to binary32 before it is stored,
// which is how the 32-bit parity mode is realized without a second code path.
// Accumulations inside a kernel stay in binary64.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;
  Dtype dtype = Dtype::F64;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s, Dtype dt = Dtype::F64);

  static Tensor zeros(std::vector<int64_t> shape, Dtype dt = Dtype::F64);
  static Tensor full(std::vector<int64_t> shape, double v, Dtype dt = Dtype::F64);
  static Tensor from(std::vector<int64_t> shape, std::vector<double> values,
                     Dtype dt = Dtype::F64);
  static Tensor scalar(double v, Dtype dt = Dtype::F64);
  static Tensor identity(int64_t n, Dtype dt = Dtype::F64);

  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int64_t numel() const;
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;

  double& operator()(int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator()(int64_t i) const { return data[static_cast<size_t>(i)]; }
  double& operator()(int64_t i, int64_t j);
  double operator()(int64_t i, int64_t j) const;
  double& operator()(int64_t i, int64_t j, int64_t k);
  double operator()(int64_t i, int64_t j, int64_t k) const;
  double& operator()(int64_t i, int64_t j, int64_t k, int64_t l);
  double operator()(int64_t i, int64_t j, int64_t k, int64_t l) const;

  bool all_finite() const;
};

// Result precision of a kernel over two operands: stays in 32-bit mode only
// when both operands are in it.
Dtype promote(Dtype a, Dtype b);

// Rounds every element to binary32 when the tensor is in 32-bit mode.
void apply_dtype(Tensor& t);

bool bitwise_equal(const Tensor& a, const Tensor& b);

// Counter-based generator: the (seed, counter) pair fully determines the
// stream, independent of platform and call-site history. Normal deviates use
// a 12-uniform sum so the stream never touches libm transcendentals, whose
// last-bit behavior differs across platforms.
struct RngState {
  uint64_t seed = 0;
  uint64_t counter = 0;

  uint64_t next_u64();
  double next_uniform();            // [0, 1)
  double next_normal();             // approximately N(0, 1)
  int64_t next_below(int64_t n);    // uniform in [0, n)

  Tensor uniform(std::vector<int64_t> shape, double lo, double hi,
                 Dtype dt = Dtype::F64);
  Tensor normal(std::vector<int64_t> shape, double mean, double stddev,
                Dtype dt = Dtype::F64);
};

// --- kernels ---------------------------------------------------------------
// Every kernel is pure: fresh output, no hidden state, identical bits for
// identical inputs. All reductions run in a fixed ascending index order.

// a: [.., m, k] (leading axes flattened to rows), b: [k, n] -> [.., m, n].
// Inner sum runs over ascending k for every output element.
Tensor matmul(const Tensor& a, const Tensor& b);

// Gradient helpers with their own fixed reduction orders:
// matmul_nt(g, b)[i, t] = sum_j g[i, j] * b[t, j]
// matmul_tn(a, g)[t, j] = sum_i a[i, t] * g[i, j]
Tensor matmul_nt(const Tensor& g, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& g);

// Batched matmul: a [G, m, k], b [G, k, n] (or [G, n, k] when transpose_b).
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
// bmm_tn(x, y)[g] = x[g]^T * y[g], x [G, m, k], y [G, m, n] -> [G, k, n].
Tensor bmm_tn(const Tensor& x, const Tensor& y);

// Normalizes the last axis to zero mean and unit variance (population
// variance, no learned affine): y = (x - mean) / sqrt(var + eps).
Tensor layer_norm(const Tensor& x, double eps);

// [L, D] -> [D] or [B, L, D] -> [B, D]; mean over the sequence axis.
Tensor mean_pool(const Tensor& x);

// Elementwise ops. add/mul accept equal shapes or a single-element tensor on
// either side; anything else is a dimension error.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Row-wise softmax with max subtraction; x: [L, L] (or any [rows, cols]).
Tensor softmax_rows(const Tensor& x);

// Causal row-wise softmax on [G, L, L]: row i distributes mass over j <= i.
Tensor causal_softmax(const Tensor& x);

// x [.., D] + v [D], broadcast over leading axes.
Tensor add_rowvec(const Tensor& x, const Tensor& v);

// x [B, L, D] + v [B, D], broadcast over the sequence axis.
Tensor add_seq_broadcast(const Tensor& x, const Tensor& v);

// out[b, l, d, n] = a[b, l, d] * w[d, n].
Tensor chan_state_mul(const Tensor& a, const Tensor& w);

// out[b, l, d] = sum_n h[b, l, d, n] * w[d, n].
Tensor chan_state_contract(const Tensor& h, const Tensor& w);

// Diagonal linear recurrence over the sequence axis:
// h[b, 0] = u[b, 0]; h[b, t] = s[b, t] * h[b, t-1] + u[b, t].
Tensor linear_recurrence(const Tensor& s, const Tensor& u);

// [B, L, D] -> [B*H, L, D/H] and back.
Tensor split_heads(const Tensor& x, int64_t H);
Tensor merge_heads(const Tensor& x, int64_t H);

// table [V, D], ids of length B*L with values in [0, V) -> [B, L, D].
Tensor embed_rows(const Tensor& table, const std::vector<int32_t>& ids,
                  int64_t B, int64_t L);

Tensor sum_all(const Tensor& x);  // -> [1]
Tensor transpose2d(const Tensor& m);

double frobenius_norm(const Tensor& m);

}  // namespace lbi
