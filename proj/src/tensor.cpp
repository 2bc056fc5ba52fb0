#include "lbi/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace lbi {

namespace {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw DimensionError("negative dimension");
    n *= d;
  }
  return n;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> s, Dtype dt) : shape(std::move(s)), dtype(dt) {
  data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
}

Tensor Tensor::zeros(std::vector<int64_t> shape, Dtype dt) {
  return Tensor(std::move(shape), dt);
}

Tensor Tensor::full(std::vector<int64_t> shape, double v, Dtype dt) {
  Tensor t(std::move(shape), dt);
  for (double& x : t.data) x = v;
  apply_dtype(t);
  return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<double> values, Dtype dt) {
  Tensor t;
  t.shape = std::move(shape);
  t.dtype = dt;
  if (shape_numel(t.shape) != static_cast<int64_t>(values.size()))
    throw DimensionError("value count does not match shape");
  t.data = std::move(values);
  apply_dtype(t);
  return t;
}

Tensor Tensor::scalar(double v, Dtype dt) { return from({1}, {v}, dt); }

Tensor Tensor::identity(int64_t n, Dtype dt) {
  Tensor t({n, n}, dt);
  for (int64_t i = 0; i < n; ++i) t.data[static_cast<size_t>(i * n + i)] = 1.0;
  return t;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

double& Tensor::operator()(int64_t i, int64_t j) {
  return data[static_cast<size_t>(i * shape[1] + j)];
}
double Tensor::operator()(int64_t i, int64_t j) const {
  return data[static_cast<size_t>(i * shape[1] + j)];
}
double& Tensor::operator()(int64_t i, int64_t j, int64_t k) {
  return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
}
double Tensor::operator()(int64_t i, int64_t j, int64_t k) const {
  return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
}
double& Tensor::operator()(int64_t i, int64_t j, int64_t k, int64_t l) {
  return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
}
double Tensor::operator()(int64_t i, int64_t j, int64_t k, int64_t l) const {
  return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

Dtype promote(Dtype a, Dtype b) {
  return (a == Dtype::F32 && b == Dtype::F32) ? Dtype::F32 : Dtype::F64;
}

void apply_dtype(Tensor& t) {
  if (t.dtype != Dtype::F32) return;
  for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  if (a.data.empty()) return true;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

// --- rng ---------------------------------------------------------------

uint64_t RngState::next_u64() {
  ++counter;
  uint64_t z = seed + counter * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double RngState::next_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngState::next_normal() {
  double s = 0.0;
  for (int i = 0; i < 12; ++i) s += next_uniform();
  return s - 6.0;
}

int64_t RngState::next_below(int64_t n) {
  if (n <= 0) throw ArgumentError("next_below needs a positive bound");
  return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
}

Tensor RngState::uniform(std::vector<int64_t> shape, double lo, double hi, Dtype dt) {
  Tensor t(std::move(shape), dt);
  for (double& v : t.data) v = lo + (hi - lo) * next_uniform();
  apply_dtype(t);
  return t;
}

Tensor RngState::normal(std::vector<int64_t> shape, double mean, double stddev, Dtype dt) {
  Tensor t(std::move(shape), dt);
  for (double& v : t.data) v = mean + stddev * next_normal();
  apply_dtype(t);
  return t;
}

// --- kernels -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() >= 2 && b.rank() == 2, "matmul expects [.., m, k] x [k, n]");
  const int64_t k = a.shape.back();
  require(b.shape[0] == k, "matmul inner dimensions differ: " + a.shape_str() +
                               " x " + b.shape_str());
  const int64_t n = b.shape[1];
  const int64_t rows = k == 0 ? 0 : a.numel() / k;
  std::vector<int64_t> out_shape(a.shape.begin(), a.shape.end() - 1);
  out_shape.push_back(n);
  Tensor c(std::move(out_shape), promote(a.dtype, b.dtype));
  // Row-major accumulation over ascending t: the per-element sum order is the
  // same as the naive i-j-k triple loop, so results match it bitwise.
  for (int64_t i = 0; i < rows; ++i) {
    double* crow = c.data.data() + i * n;
    const double* arow = a.data.data() + i * k;
    for (int64_t t = 0; t < k; ++t) {
      const double av = arow[t];
      const double* brow = b.data.data() + t * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  apply_dtype(c);
  return c;
}

Tensor matmul_nt(const Tensor& g, const Tensor& b) {
  require(g.rank() >= 2 && b.rank() == 2, "matmul_nt expects [.., m, n] x [k, n]");
  const int64_t n = g.shape.back();
  require(b.shape[1] == n, "matmul_nt inner dimensions differ");
  const int64_t k = b.shape[0];
  const int64_t rows = n == 0 ? 0 : g.numel() / n;
  std::vector<int64_t> out_shape(g.shape.begin(), g.shape.end() - 1);
  out_shape.push_back(k);
  Tensor out(std::move(out_shape), promote(g.dtype, b.dtype));
  for (int64_t i = 0; i < rows; ++i) {
    const double* grow = g.data.data() + i * n;
    double* orow = out.data.data() + i * k;
    for (int64_t t = 0; t < k; ++t) {
      const double* brow = b.data.data() + t * n;
      double acc = 0.0;
      for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      orow[t] = acc;
    }
  }
  apply_dtype(out);
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& g) {
  require(a.rank() >= 2 && g.rank() >= 2, "matmul_tn expects [.., m, k] x [.., m, n]");
  const int64_t k = a.shape.back();
  const int64_t n = g.shape.back();
  const int64_t rows = k == 0 ? 0 : a.numel() / k;
  require(n == 0 ? rows == 0 : g.numel() / n == rows, "matmul_tn row counts differ");
  Tensor out({k, n}, promote(a.dtype, g.dtype));
  // Ascending i for every (t, j): deterministic accumulation over rows.
  for (int64_t i = 0; i < rows; ++i) {
    const double* arow = a.data.data() + i * k;
    const double* grow = g.data.data() + i * n;
    for (int64_t t = 0; t < k; ++t) {
      const double av = arow[t];
      double* orow = out.data.data() + t * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
  apply_dtype(out);
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require(a.rank() == 3 && b.rank() == 3, "bmm expects rank-3 operands");
  require(a.shape[0] == b.shape[0], "bmm batch dimensions differ");
  const int64_t G = a.shape[0], m = a.shape[1], k = a.shape[2];
  const int64_t bk = transpose_b ? b.shape[2] : b.shape[1];
  const int64_t n = transpose_b ? b.shape[1] : b.shape[2];
  require(bk == k, "bmm inner dimensions differ");
  Tensor c({G, m, n}, promote(a.dtype, b.dtype));
  for (int64_t g = 0; g < G; ++g) {
    const double* ag = a.data.data() + g * m * k;
    const double* bg = b.data.data() + g * (transpose_b ? n * k : k * n);
    double* cg = c.data.data() + g * m * n;
    if (!transpose_b) {
      for (int64_t i = 0; i < m; ++i)
        for (int64_t t = 0; t < k; ++t) {
          const double av = ag[i * k + t];
          const double* brow = bg + t * n;
          double* crow = cg + i * n;
          for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    } else {
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          const double* arow = ag + i * k;
          const double* brow = bg + j * k;
          double acc = 0.0;
          for (int64_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
          cg[i * n + j] = acc;
        }
    }
  }
  apply_dtype(c);
  return c;
}

Tensor bmm_tn(const Tensor& x, const Tensor& y) {
  require(x.rank() == 3 && y.rank() == 3 && x.shape[0] == y.shape[0] &&
              x.shape[1] == y.shape[1],
          "bmm_tn expects [G, m, k] x [G, m, n]");
  const int64_t G = x.shape[0], m = x.shape[1], k = x.shape[2], n = y.shape[2];
  Tensor out({G, k, n}, promote(x.dtype, y.dtype));
  for (int64_t g = 0; g < G; ++g) {
    const double* xg = x.data.data() + g * m * k;
    const double* yg = y.data.data() + g * m * n;
    double* og = out.data.data() + g * k * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t t = 0; t < k; ++t) {
        const double xv = xg[i * k + t];
        const double* yrow = yg + i * n;
        double* orow = og + t * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += xv * yrow[j];
      }
  }
  apply_dtype(out);
  return out;
}

Tensor layer_norm(const Tensor& x, double eps) {
  if (eps <= 0.0) throw ArgumentError("layer_norm eps must be positive");
  require(x.rank() >= 1 && x.shape.back() >= 1, "layer_norm needs a non-empty last axis");
  const int64_t d = x.shape.back();
  const int64_t rows = x.numel() / d;
  Tensor y(x.shape, x.dtype);
  for (int64_t i = 0; i < rows; ++i) {
    const double* xr = x.data.data() + i * d;
    double* yr = y.data.data() + i * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * inv;
  }
  apply_dtype(y);
  return y;
}

Tensor mean_pool(const Tensor& x) {
  require(x.rank() == 2 || x.rank() == 3, "mean_pool expects [L, D] or [B, L, D]");
  const bool batched = x.rank() == 3;
  const int64_t B = batched ? x.shape[0] : 1;
  const int64_t L = batched ? x.shape[1] : x.shape[0];
  const int64_t D = x.shape.back();
  if (L == 0) throw DataError("mean_pool over an empty sequence");
  Tensor out(batched ? std::vector<int64_t>{B, D} : std::vector<int64_t>{D}, x.dtype);
  for (int64_t b = 0; b < B; ++b) {
    double* orow = out.data.data() + b * D;
    for (int64_t l = 0; l < L; ++l) {
      const double* xr = x.data.data() + (b * L + l) * D;
      for (int64_t j = 0; j < D; ++j) orow[j] += xr[j];
    }
    for (int64_t j = 0; j < D; ++j) orow[j] /= static_cast<double>(L);
  }
  apply_dtype(out);
  return out;
}

namespace {

// add/mul broadcast rule: equal shapes, or one side a single element.
enum class BcKind { Same, ScalarLeft, ScalarRight };

BcKind broadcast_kind(const Tensor& a, const Tensor& b, const char* opname) {
  if (a.shape == b.shape) return BcKind::Same;
  if (a.numel() == 1) return BcKind::ScalarLeft;
  if (b.numel() == 1) return BcKind::ScalarRight;
  throw DimensionError(std::string(opname) + ": shapes " + a.shape_str() + " and " +
                       b.shape_str() + " do not broadcast");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const BcKind kind = broadcast_kind(a, b, "add");
  const Tensor& big = kind == BcKind::ScalarLeft ? b : a;
  Tensor out(big.shape, promote(a.dtype, b.dtype));
  const int64_t n = big.numel();
  switch (kind) {
    case BcKind::Same:
      for (int64_t i = 0; i < n; ++i) out.data[i] = a.data[i] + b.data[i];
      break;
    case BcKind::ScalarLeft:
      for (int64_t i = 0; i < n; ++i) out.data[i] = a.data[0] + b.data[i];
      break;
    case BcKind::ScalarRight:
      for (int64_t i = 0; i < n; ++i) out.data[i] = a.data[i] + b.data[0];
      break;
  }
  apply_dtype(out);
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const BcKind kind = broadcast_kind(a, b, "mul");
  const Tensor& big = kind == BcKind::ScalarLeft ? b : a;
  Tensor out(big.shape, promote(a.dtype, b.dtype));
  const int64_t n = big.numel();
  switch (kind) {
    case BcKind::Same:
      for (int64_t i = 0; i < n; ++i) out.data[i] = a.data[i] * b.data[i];
      break;
    case BcKind::ScalarLeft:
      for (int64_t i = 0; i < n; ++i) out.data[i] = a.data[0] * b.data[i];
      break;
    case BcKind::ScalarRight:
      for (int64_t i = 0; i < n; ++i) out.data[i] = a.data[i] * b.data[0];
      break;
  }
  apply_dtype(out);
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape, a.dtype);
  for (int64_t i = 0; i < a.numel(); ++i) out.data[i] = a.data[i] * c;
  apply_dtype(out);
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out(x.shape, x.dtype);
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double v = x.data[i];
    out.data[i] = v / (1.0 + std::exp(-v));
  }
  apply_dtype(out);
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape, x.dtype);
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double v = x.data[i];
    out.data[i] = 0.5 * v * (1.0 + std::erf(v * 0.7071067811865475244));
  }
  apply_dtype(out);
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape, x.dtype);
  for (int64_t i = 0; i < x.numel(); ++i) out.data[i] = 1.0 / (1.0 + std::exp(-x.data[i]));
  apply_dtype(out);
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require(x.rank() == 2, "softmax_rows expects a rank-2 tensor");
  const int64_t rows = x.shape[0], cols = x.shape[1];
  require(cols >= 1, "softmax_rows needs non-empty rows");
  Tensor y(x.shape, x.dtype);
  for (int64_t i = 0; i < rows; ++i) {
    const double* xr = x.data.data() + i * cols;
    double* yr = y.data.data() + i * cols;
    double mx = xr[0];
    for (int64_t j = 1; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
    double sum = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (int64_t j = 0; j < cols; ++j) yr[j] /= sum;
  }
  apply_dtype(y);
  return y;
}

Tensor causal_softmax(const Tensor& x) {
  require(x.rank() == 3 && x.shape[1] == x.shape[2], "causal_softmax expects [G, L, L]");
  const int64_t G = x.shape[0], L = x.shape[1];
  Tensor y(x.shape, x.dtype);
  for (int64_t g = 0; g < G; ++g)
    for (int64_t i = 0; i < L; ++i) {
      const double* xr = x.data.data() + (g * L + i) * L;
      double* yr = y.data.data() + (g * L + i) * L;
      double mx = xr[0];
      for (int64_t j = 1; j <= i; ++j) mx = xr[j] > mx ? xr[j] : mx;
      double sum = 0.0;
      for (int64_t j = 0; j <= i; ++j) {
        yr[j] = std::exp(xr[j] - mx);
        sum += yr[j];
      }
      for (int64_t j = 0; j <= i; ++j) yr[j] /= sum;
      // j > i stays exactly zero.
    }
  apply_dtype(y);
  return y;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  require(v.rank() == 1 && x.rank() >= 1 && x.shape.back() == v.shape[0],
          "add_rowvec expects [.., D] + [D]");
  const int64_t d = v.shape[0];
  const int64_t rows = x.numel() / d;
  Tensor out(x.shape, promote(x.dtype, v.dtype));
  for (int64_t i = 0; i < rows; ++i) {
    const double* xr = x.data.data() + i * d;
    double* orow = out.data.data() + i * d;
    for (int64_t j = 0; j < d; ++j) orow[j] = xr[j] + v.data[j];
  }
  apply_dtype(out);
  return out;
}

Tensor add_seq_broadcast(const Tensor& x, const Tensor& v) {
  require(x.rank() == 3 && v.rank() == 2 && x.shape[0] == v.shape[0] &&
              x.shape[2] == v.shape[1],
          "add_seq_broadcast expects [B, L, D] + [B, D]");
  const int64_t B = x.shape[0], L = x.shape[1], D = x.shape[2];
  Tensor out(x.shape, promote(x.dtype, v.dtype));
  for (int64_t b = 0; b < B; ++b) {
    const double* vrow = v.data.data() + b * D;
    for (int64_t l = 0; l < L; ++l) {
      const double* xr = x.data.data() + (b * L + l) * D;
      double* orow = out.data.data() + (b * L + l) * D;
      for (int64_t j = 0; j < D; ++j) orow[j] = xr[j] + vrow[j];
    }
  }
  apply_dtype(out);
  return out;
}

Tensor chan_state_mul(const Tensor& a, const Tensor& w) {
  require(a.rank() == 3 && w.rank() == 2 && a.shape[2] == w.shape[0],
          "chan_state_mul expects [B, L, D] x [D, N]");
  const int64_t B = a.shape[0], L = a.shape[1], D = a.shape[2], N = w.shape[1];
  Tensor out({B, L, D, N}, promote(a.dtype, w.dtype));
  for (int64_t bl = 0; bl < B * L; ++bl)
    for (int64_t d = 0; d < D; ++d) {
      const double av = a.data[bl * D + d];
      const double* wrow = w.data.data() + d * N;
      double* orow = out.data.data() + (bl * D + d) * N;
      for (int64_t n = 0; n < N; ++n) orow[n] = av * wrow[n];
    }
  apply_dtype(out);
  return out;
}

Tensor chan_state_contract(const Tensor& h, const Tensor& w) {
  require(h.rank() == 4 && w.rank() == 2 && h.shape[2] == w.shape[0] &&
              h.shape[3] == w.shape[1],
          "chan_state_contract expects [B, L, D, N] x [D, N]");
  const int64_t B = h.shape[0], L = h.shape[1], D = h.shape[2], N = h.shape[3];
  Tensor out({B, L, D}, promote(h.dtype, w.dtype));
  for (int64_t bl = 0; bl < B * L; ++bl)
    for (int64_t d = 0; d < D; ++d) {
      const double* hrow = h.data.data() + (bl * D + d) * N;
      const double* wrow = w.data.data() + d * N;
      double acc = 0.0;
      for (int64_t n = 0; n < N; ++n) acc += hrow[n] * wrow[n];
      out.data[bl * D + d] = acc;
    }
  apply_dtype(out);
  return out;
}

Tensor linear_recurrence(const Tensor& s, const Tensor& u) {
  require(s.rank() == 4 && s.shape == u.shape,
          "linear_recurrence expects matching [B, L, D, N] operands");
  const int64_t B = s.shape[0], L = s.shape[1], lane = s.shape[2] * s.shape[3];
  Tensor h(s.shape, promote(s.dtype, u.dtype));
  for (int64_t b = 0; b < B; ++b) {
    const int64_t base = b * L * lane;
    for (int64_t j = 0; j < lane; ++j) h.data[base + j] = u.data[base + j];
    for (int64_t t = 1; t < L; ++t) {
      const int64_t off = base + t * lane;
      const int64_t prev = off - lane;
      for (int64_t j = 0; j < lane; ++j)
        h.data[off + j] = s.data[off + j] * h.data[prev + j] + u.data[off + j];
    }
  }
  apply_dtype(h);
  return h;
}

Tensor split_heads(const Tensor& x, int64_t H) {
  require(x.rank() == 3, "split_heads expects [B, L, D]");
  const int64_t B = x.shape[0], L = x.shape[1], D = x.shape[2];
  if (H <= 0 || D % H != 0) throw DimensionError("head count must divide D");
  const int64_t dh = D / H;
  Tensor out({B * H, L, dh}, x.dtype);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t l = 0; l < L; ++l) {
        const double* src = x.data.data() + (b * L + l) * D + h * dh;
        double* dst = out.data.data() + ((b * H + h) * L + l) * dh;
        for (int64_t t = 0; t < dh; ++t) dst[t] = src[t];
      }
  return out;
}

Tensor merge_heads(const Tensor& x, int64_t H) {
  require(x.rank() == 3, "merge_heads expects [B*H, L, dh]");
  const int64_t BH = x.shape[0], L = x.shape[1], dh = x.shape[2];
  if (H <= 0 || BH % H != 0) throw DimensionError("head count must divide batch axis");
  const int64_t B = BH / H, D = dh * H;
  Tensor out({B, L, D}, x.dtype);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t l = 0; l < L; ++l) {
        const double* src = x.data.data() + ((b * H + h) * L + l) * dh;
        double* dst = out.data.data() + (b * L + l) * D + h * dh;
        for (int64_t t = 0; t < dh; ++t) dst[t] = src[t];
      }
  return out;
}

Tensor embed_rows(const Tensor& table, const std::vector<int32_t>& ids, int64_t B,
                  int64_t L) {
  require(table.rank() == 2, "embedding table must be [V, D]");
  if (static_cast<int64_t>(ids.size()) != B * L)
    throw DimensionError("token count does not match batch shape");
  const int64_t V = table.shape[0], D = table.shape[1];
  Tensor out({B, L, D}, table.dtype);
  for (int64_t i = 0; i < B * L; ++i) {
    const int32_t id = ids[static_cast<size_t>(i)];
    if (id < 0 || id >= V)
      throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary");
    const double* src = table.data.data() + static_cast<int64_t>(id) * D;
    double* dst = out.data.data() + i * D;
    for (int64_t j = 0; j < D; ++j) dst[j] = src[j];
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.data[i];
  return Tensor::from({1}, {acc}, x.dtype);
}

Tensor transpose2d(const Tensor& m) {
  require(m.rank() == 2, "transpose2d expects a rank-2 tensor");
  Tensor out({m.shape[1], m.shape[0]}, m.dtype);
  for (int64_t i = 0; i < m.shape[0]; ++i)
    for (int64_t j = 0; j < m.shape[1]; ++j) out(j, i) = m(i, j);
  return out;
}

double frobenius_norm(const Tensor& m) {
  double acc = 0.0;
  for (int64_t i = 0; i < m.numel(); ++i) acc += m.data[i] * m.data[i];
  return std::sqrt(acc);
}

}  // namespace lbi
