#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lbi/diagnostics.hpp"
#include "lbi/errors.hpp"
#include "support/oracles.hpp"

using namespace lbi;
using namespace lbi::diag;

namespace {

Tensor diag_matrix(const std::vector<double>& d) {
  const int64_t n = static_cast<int64_t>(d.size());
  Tensor m = Tensor::zeros({n, n});
  for (int64_t i = 0; i < n; ++i) m(i, i) = d[size_t(i)];
  return m;
}

}  // namespace

TEST_CASE("spectral norm of fixed matrices") {
  const SpectralResult id = spectral_norm(Tensor::identity(5));
  CHECK(id.converged);
  CHECK(id.value == doctest::Approx(1.0).epsilon(1e-10));

  const SpectralResult d = spectral_norm(diag_matrix({3.0, -1.0, 0.5}));
  CHECK(d.converged);
  CHECK(d.value == doctest::Approx(3.0).epsilon(1e-10));

  const SpectralResult z = spectral_norm(Tensor::zeros({4, 4}));
  CHECK(z.converged);
  CHECK(z.value == 0.0);
  CHECK(z.iters == 0);

  // scaling is exact up to rounding
  Tensor s = diag_matrix({2.0, 1.0});
  const double a = spectral_norm(s).value;
  for (double& v : s.data) v *= 10.0;
  CHECK(spectral_norm(s).value == doctest::Approx(10.0 * a).epsilon(1e-12));
}

TEST_CASE("spectral norm matches the jacobi svd oracle") {
  for (int64_t n : {int64_t(2), int64_t(7), int64_t(16), int64_t(33),
                    int64_t(64)}) {
    CAPTURE(n);
    RngState rng{uint64_t(1000 + n), 0};
    const Tensor m = rng.normal({n, n}, 0.0, 1.0 / std::sqrt(double(n)));
    const SpectralResult pi = spectral_norm(m);
    const std::vector<double> sv = oracle::svd_singular_values(m);
    REQUIRE_FALSE(sv.empty());
    CHECK(pi.converged);
    CHECK(std::abs(pi.value - sv[0]) <= 1e-8 * std::max(1.0, sv[0]));
  }
}

TEST_CASE("spectral norm is deterministic") {
  RngState rng{77, 0};
  const Tensor m = rng.normal({12, 12}, 0.0, 0.3);
  const SpectralResult a = spectral_norm(m);
  const SpectralResult b = spectral_norm(m);
  CHECK(a.value == b.value);
  CHECK(a.iters == b.iters);
}

TEST_CASE("spectral norm handles a null-space start") {
  // start vector components along the kernel must not trap the iteration:
  // M kills everything except coordinate 0
  Tensor m = Tensor::zeros({3, 3});
  m(0, 0) = 2.0;
  const SpectralResult r = spectral_norm(m);
  CHECK(r.converged);
  CHECK(r.value == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("frobenius rms") {
  CHECK(frobenius_rms(Tensor::identity(4)) == doctest::Approx(1.0));
  CHECK(frobenius_rms(Tensor::zeros({3, 3})) == 0.0);

  RngState rng{88, 0};
  const Tensor m = rng.normal({9, 9}, 0.0, 1.0);
  // sqrt(mean of squared singular values) equals the normalized frobenius
  const std::vector<double> sv = oracle::svd_singular_values(m);
  double acc = 0.0;
  for (double s : sv) acc += s * s;
  const double want = std::sqrt(acc / 9.0);
  CHECK(frobenius_rms(m) == doctest::Approx(want).epsilon(1e-10));
  // rms over rows is never above the spectral norm
  CHECK(frobenius_rms(m) <= spectral_norm(m).value + 1e-12);

  CHECK_THROWS_AS(frobenius_rms(Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("suffix norms fold the chain from the tail") {
  std::vector<Tensor> id_chain(4, Tensor::identity(3));
  const SuffixNorms ones = suffix_norms(id_chain);
  REQUIRE(ones.local.size() == 4);
  REQUIRE(ones.suffix.size() == 5);
  for (double v : ones.local) CHECK(v == doctest::Approx(1.0).epsilon(1e-10));
  for (double v : ones.suffix) CHECK(v == doctest::Approx(1.0).epsilon(1e-10));

  // two diagonal factors compose by plain multiplication
  std::vector<Tensor> chain = {diag_matrix({2.0, 0.5}),
                               diag_matrix({3.0, 0.25})};
  const SuffixNorms sn = suffix_norms(chain);
  CHECK(sn.suffix[2] == doctest::Approx(1.0).epsilon(1e-10));   // identity
  CHECK(sn.suffix[1] == doctest::Approx(3.0).epsilon(1e-10));   // J_1^T
  CHECK(sn.suffix[0] == doctest::Approx(6.0).epsilon(1e-10));   // J_0^T J_1^T
  CHECK(sn.local[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(sn.local[1] == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("suffix norms are submultiplicative") {
  RngState rng{99, 0};
  std::vector<Tensor> chain;
  for (int k = 0; k < 6; ++k)
    chain.push_back(rng.normal({8, 8}, 0.0, 1.0 / std::sqrt(8.0)));
  const SuffixNorms sn = suffix_norms(chain);
  for (size_t k = 0; k < chain.size(); ++k) {
    double bound = 1.0;
    for (size_t j = k; j < chain.size(); ++j) bound *= sn.local[j];
    CHECK(sn.suffix[k] <= bound * (1.0 + 1e-9));
  }
}

TEST_CASE("spectra records carry one entry per region") {
  RngState rng{111, 0};
  std::vector<Tensor> chain;
  for (int k = 0; k < 3; ++k) chain.push_back(rng.normal({4, 4}, 0.0, 0.5));
  const SpectraRecord rec = compute_spectra(7, 42, chain);
  CHECK(rec.step == 7);
  CHECK(rec.seed == 42);
  REQUIRE(rec.local_spec.size() == 3);
  REQUIRE(rec.suffix_spec.size() == 3);
  REQUIRE(rec.frob_rms.size() == 3);
  for (size_t k = 0; k < 3; ++k) {
    CHECK(rec.frob_rms[k] <= rec.local_spec[k] + 1e-12);
    CHECK(rec.local_spec[k] > 0.0);
  }
}

TEST_CASE("spectra csv shape and round trip") {
  RngState rng{222, 0};
  std::vector<SpectraRecord> recs;
  recs.push_back(compute_spectra(100, 1, {rng.normal({3, 3}, 0.0, 1.0)}));
  recs.push_back(compute_spectra(0, 1, {rng.normal({3, 3}, 0.0, 1.0)}));

  const std::string path = "spectra_roundtrip_test.csv";
  emit_spectra(path, recs);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,seed,region,local_spec,suffix_spec,frob_rms");

  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');)
      cells.push_back(cell);
    REQUIRE(cells.size() == 6);
    rows.push_back(cells);
  }
  in.close();
  std::remove(path.c_str());

  REQUIRE(rows.size() == 2);
  // sorted by (step, region) regardless of insertion order
  CHECK(rows[0][0] == "0");
  CHECK(rows[1][0] == "100");
  // 17 significant digits survive the round trip bit for bit
  CHECK(std::stod(rows[1][3]) == recs[0].local_spec[0]);
  CHECK(std::stod(rows[1][4]) == recs[0].suffix_spec[0]);
  CHECK(std::stod(rows[1][5]) == recs[0].frob_rms[0]);
}

TEST_CASE("diagnostics reject non-square inputs") {
  CHECK_THROWS_AS(spectral_norm(Tensor::zeros({2, 3})), DimensionError);
  CHECK_THROWS_AS(suffix_norms({Tensor::zeros({2, 3})}), DimensionError);
  std::vector<Tensor> mixed = {Tensor::identity(2), Tensor::identity(3)};
  CHECK_THROWS_AS(suffix_norms(mixed), DimensionError);
}
