#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "lbi/autodiff.hpp"
#include "lbi/tensor.hpp"

using namespace lbi;

namespace {

// scalar loss as a function of a single input leaf; every other operand is
// baked into the closure as a constant leaf
using LossBody = std::function<NodeId(Tape&, NodeId)>;

double eval_loss(const LossBody& body, const Tensor& x) {
  Tape t;
  const NodeId xin = t.input(x);
  const NodeId loss = body(t, xin);
  return t.val(loss)(0);
}

Tensor ad_grad(const LossBody& body, const Tensor& x) {
  Tape t;
  const NodeId xin = t.input(x);
  const NodeId loss = body(t, xin);
  const Gradients g = backward(t, loss, Tensor::full({1}, 1.0));
  auto it = g.by_id.find(xin);
  return it == g.by_id.end() ? Tensor::zeros(x.shape) : it->second;
}

Tensor fd_grad(const LossBody& body, const Tensor& x, double h = 1e-5) {
  Tensor g = Tensor::zeros(x.shape);
  Tensor probe = x;
  for (size_t i = 0; i < probe.data.size(); ++i) {
    const double keep = probe.data[i];
    probe.data[i] = keep + h;
    const double up = eval_loss(body, probe);
    probe.data[i] = keep - h;
    const double down = eval_loss(body, probe);
    probe.data[i] = keep;
    g.data[i] = (up - down) / (2.0 * h);
  }
  return g;
}

void check_grad(const LossBody& body, const Tensor& x, double tol = 1e-6) {
  const Tensor got = ad_grad(body, x);
  const Tensor want = fd_grad(body, x);
  REQUIRE(got.same_shape(want));
  for (size_t i = 0; i < got.data.size(); ++i)
    CHECK(std::abs(got.data[i] - want.data[i]) < tol);
}

}  // namespace

TEST_CASE("identity tape replays bitwise") {
  RngState rng{1, 0};
  Tensor x = rng.normal({3, 3}, 0.0, 1.0);
  Tape t;
  const NodeId id = t.input(x);
  t.mark_output(id);
  const std::vector<Tensor> replayed = t.replay();
  REQUIRE(replayed.size() == 1);
  CHECK(bitwise_equal(replayed[0], x));
}

TEST_CASE("sum of squares has gradient 2x") {
  Tensor x = Tensor::from({1}, {3.0});
  Tape t;
  const NodeId xin = t.input(x);
  const NodeId loss = t.sum(t.mul(xin, xin));
  CHECK(t.val(loss)(0) == 9.0);
  const Gradients g = backward(t, loss, Tensor::full({1}, 1.0));
  CHECK(g.by_id.at(xin)(0) == 6.0);
}

TEST_CASE("matmul chain replay is bitwise") {
  RngState rng{2, 0};
  Tensor a = rng.normal({4, 5}, 0.0, 1.0);
  Tensor b = rng.normal({5, 6}, 0.0, 1.0);
  Tensor c = rng.normal({6, 2}, 0.0, 1.0);
  Tape t;
  const NodeId out = t.matmul(t.matmul(t.input(a), t.input(b)), t.input(c));
  t.mark_output(out);
  const Tensor expect = matmul(matmul(a, b), c);
  CHECK(bitwise_equal(t.val(out), expect));
  CHECK(bitwise_equal(t.replay()[0], expect));
}

TEST_CASE("two recordings of one program are identical") {
  RngState rng{3, 0};
  Tensor x = rng.normal({3, 4}, 0.0, 1.0);
  auto build = [&](Tape& t) {
    return t.silu(t.layer_norm(t.input(x), 1e-5));
  };
  Tape t1, t2;
  const NodeId o1 = build(t1);
  const NodeId o2 = build(t2);
  REQUIRE(t1.size() == t2.size());
  CHECK(bitwise_equal(t1.val(o1), t2.val(o2)));
}

TEST_CASE("gradients match finite differences per kernel") {
  RngState rng{4, 0};

  SUBCASE("matmul wrt left") {
    Tensor w = rng.normal({5, 3}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) { return t.sum(t.matmul(x, t.input(w))); },
        rng.normal({4, 5}, 0.0, 1.0));
  }
  SUBCASE("matmul wrt right") {
    Tensor a = rng.normal({4, 5}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) { return t.sum(t.matmul(t.input(a), x)); },
        rng.normal({5, 3}, 0.0, 1.0));
  }
  SUBCASE("bmm both operands") {
    Tensor b = rng.normal({2, 4, 3}, 0.0, 1.0);
    check_grad([&](Tape& t, NodeId x) { return t.sum(t.bmm(x, t.input(b))); },
               rng.normal({2, 3, 4}, 0.0, 1.0));
    Tensor a = rng.normal({2, 3, 4}, 0.0, 1.0);
    check_grad([&](Tape& t, NodeId x) { return t.sum(t.bmm(t.input(a), x)); },
               rng.normal({2, 4, 3}, 0.0, 1.0));
  }
  SUBCASE("bmm with transposed second operand") {
    Tensor b = rng.normal({2, 5, 4}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) { return t.sum(t.bmm(x, t.input(b), true)); },
        rng.normal({2, 3, 4}, 0.0, 1.0));
  }
  SUBCASE("pointwise chain") {
    Tensor c = rng.normal({3, 4}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.silu(x), t.input(c)));
        },
        rng.normal({3, 4}, 0.0, 1.0));
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.gelu(x), t.input(c)));
        },
        rng.normal({3, 4}, 0.0, 1.0));
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.sigmoid(x), t.input(c)));
        },
        rng.normal({3, 4}, 0.0, 1.0));
    check_grad([&](Tape& t, NodeId x) { return t.sum(t.scale(x, -2.5)); },
               rng.normal({3, 4}, 0.0, 1.0));
  }
  SUBCASE("layer norm") {
    Tensor c = rng.normal({2, 3, 6}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.layer_norm(x, 1e-5), t.input(c)));
        },
        rng.normal({2, 3, 6}, 1.0, 2.0));
  }
  SUBCASE("mean pool") {
    Tensor c = rng.normal({2, 4}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.mean_pool(x), t.input(c)));
        },
        rng.normal({2, 5, 4}, 0.0, 1.0));
  }
  SUBCASE("causal softmax") {
    Tensor c = rng.normal({2, 4, 4}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.causal_softmax(x), t.input(c)));
        },
        rng.normal({2, 4, 4}, 0.0, 1.0));
  }
  SUBCASE("head split and merge") {
    Tensor c = rng.normal({4, 3, 2}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.split_heads(x, 2), t.input(c)));
        },
        rng.normal({2, 3, 4}, 0.0, 1.0));
    Tensor c2 = rng.normal({2, 3, 4}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.merge_heads(x, 2), t.input(c2)));
        },
        rng.normal({4, 3, 2}, 0.0, 1.0));
  }
  SUBCASE("broadcast adds") {
    Tensor v = rng.normal({4}, 0.0, 1.0);
    Tensor c = rng.normal({3, 4}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.add_rowvec(x, t.input(v)), t.input(c)));
        },
        rng.normal({3, 4}, 0.0, 1.0));
    Tensor base = rng.normal({3, 4}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.add_rowvec(t.input(base), x), t.input(c)));
        },
        rng.normal({4}, 0.0, 1.0));

    Tensor seq = rng.normal({2, 3, 4}, 0.0, 1.0);
    Tensor c3 = rng.normal({2, 3, 4}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.add_seq_broadcast(t.input(seq), x), t.input(c3)));
        },
        rng.normal({2, 4}, 0.0, 1.0));
  }
  SUBCASE("channel state expansion") {
    Tensor w = rng.normal({3, 2}, 0.0, 1.0);
    Tensor c = rng.normal({1, 4, 3, 2}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.chan_state_mul(x, t.input(w)), t.input(c)));
        },
        rng.normal({1, 4, 3}, 0.0, 1.0));
    Tensor a = rng.normal({1, 4, 3}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.chan_state_mul(t.input(a), x), t.input(c)));
        },
        rng.normal({3, 2}, 0.0, 1.0));
  }
  SUBCASE("channel state contraction") {
    Tensor w = rng.normal({3, 2}, 0.0, 1.0);
    Tensor c = rng.normal({1, 4, 3}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.chan_state_contract(x, t.input(w)), t.input(c)));
        },
        rng.normal({1, 4, 3, 2}, 0.0, 1.0));
    Tensor h = rng.normal({1, 4, 3, 2}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.chan_state_contract(t.input(h), x), t.input(c)));
        },
        rng.normal({3, 2}, 0.0, 1.0));
  }
  SUBCASE("linear recurrence") {
    Tensor u = rng.normal({1, 5, 2, 2}, 0.0, 1.0);
    Tensor c = rng.normal({1, 5, 2, 2}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.linear_recurrence(x, t.input(u)), t.input(c)));
        },
        rng.uniform({1, 5, 2, 2}, 0.1, 0.9));
    Tensor s = rng.uniform({1, 5, 2, 2}, 0.1, 0.9);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.linear_recurrence(t.input(s), x), t.input(c)));
        },
        rng.normal({1, 5, 2, 2}, 0.0, 1.0));
  }
  SUBCASE("embedding table") {
    auto ids = std::make_shared<const std::vector<int32_t>>(
        std::vector<int32_t>{2, 0, 1, 2});
    Tensor c = rng.normal({2, 2, 3}, 0.0, 1.0);
    check_grad(
        [&](Tape& t, NodeId x) {
          return t.sum(t.mul(t.embed(x, ids, 2, 2), t.input(c)));
        },
        rng.normal({4, 3}, 0.0, 1.0));
  }
  SUBCASE("cross entropy") {
    auto targets = std::make_shared<const std::vector<int32_t>>(
        std::vector<int32_t>{1, 3, 0, 2});
    check_grad(
        [&](Tape& t, NodeId x) { return t.cross_entropy(x, targets); },
        rng.normal({2, 2, 4}, 0.0, 1.0));
  }
}

TEST_CASE("vjp of a linear map returns matrix rows") {
  RngState rng{5, 0};
  Tensor a = rng.normal({4, 4}, 0.0, 1.0);
  Tensor m = rng.normal({4, 1}, 0.0, 1.0);
  Tape t;
  const NodeId min = t.input(m);
  const NodeId out = t.matmul(t.input(a), min);
  for (int64_t j = 0; j < 4; ++j) {
    Tensor e = Tensor::zeros({4, 1});
    e(j, 0) = 1.0;
    const auto g = vjp(t, out, e, {min});
    const Tensor& row = g.at(min);
    for (int64_t i = 0; i < 4; ++i)
      CHECK(row(i, 0) == doctest::Approx(a(j, i)).epsilon(1e-14));
  }
}

TEST_CASE("vjp is linear in the cotangent") {
  RngState rng{6, 0};
  Tensor x = rng.normal({3, 3}, 0.0, 1.0);
  Tape t;
  const NodeId xin = t.input(x);
  const NodeId out = t.silu(t.matmul(xin, t.input(rng.normal({3, 3}, 0.0, 1.0))));
  Tensor u = rng.normal({3, 3}, 0.0, 1.0);
  Tensor v = rng.normal({3, 3}, 0.0, 1.0);
  const double a = 1.7, b = -0.4;
  Tensor combo = add(scale(u, a), scale(v, b));

  const Tensor gu = vjp(t, out, u, {xin}).at(xin);
  const Tensor gv = vjp(t, out, v, {xin}).at(xin);
  const Tensor gc = vjp(t, out, combo, {xin}).at(xin);
  for (size_t i = 0; i < gc.data.size(); ++i)
    CHECK(std::abs(gc.data[i] - (a * gu.data[i] + b * gv.data[i])) < 1e-10);
}

TEST_CASE("vjp with zero cotangent is zero") {
  RngState rng{7, 0};
  Tensor x = rng.normal({2, 3}, 0.0, 1.0);
  Tape t;
  const NodeId xin = t.input(x);
  const NodeId out = t.gelu(xin);
  const auto g = vjp(t, out, Tensor::zeros({2, 3}), {xin});
  for (double vv : g.at(xin).data) CHECK(vv == 0.0);
}

TEST_CASE("finite difference jacobian oracles") {
  auto ident = [](const Tensor& m) { return m; };
  Tensor x = Tensor::from({3}, {0.3, -0.7, 1.1});
  Tensor j = finite_difference_jacobian(ident, x);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t k = 0; k < 3; ++k)
      CHECK(std::abs(j(i, k) - (i == k ? 1.0 : 0.0)) < 1e-10);

  RngState rng{8, 0};
  Tensor a = rng.normal({3, 3}, 0.0, 1.0);
  auto linear = [&](const Tensor& m) {
    Tensor col({3, 1});
    for (int64_t i = 0; i < 3; ++i) col(i, 0) = m(i);
    Tensor out = matmul(a, col);
    Tensor flat({3});
    for (int64_t i = 0; i < 3; ++i) flat(i) = out(i, 0);
    return flat;
  };
  Tensor ja = finite_difference_jacobian(linear, x);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t k = 0; k < 3; ++k)
      CHECK(std::abs(ja(i, k) - a(i, k)) < 1e-8);
}

TEST_CASE("stop nodes cut the upstream flow") {
  RngState rng{9, 0};
  Tensor x = rng.normal({3, 3}, 0.0, 1.0);
  Tape t;
  const NodeId xin = t.input(x, "x");
  const NodeId mid = t.silu(xin);
  const NodeId loss = t.sum(mid);
  BackwardOptions opts;
  opts.stop = {mid};
  const Gradients g = backward(t, loss, Tensor::full({1}, 1.0), opts);
  auto it = g.by_name.find("x");
  const bool zero_or_absent =
      it == g.by_name.end() ||
      std::all_of(it->second.data.begin(), it->second.data.end(),
                  [](double vv) { return vv == 0.0; });
  CHECK(zero_or_absent);
}

TEST_CASE("wanted interior nodes get their adjoints collected") {
  RngState rng{10, 0};
  Tensor x = rng.normal({2, 2}, 0.0, 1.0);
  Tape t;
  const NodeId xin = t.input(x);
  const NodeId mid = t.silu(xin);
  const NodeId loss = t.sum(t.mul(mid, mid));
  BackwardOptions opts;
  opts.wanted = {mid};
  const Gradients g = backward(t, loss, Tensor::full({1}, 1.0), opts);
  REQUIRE(g.by_id.count(mid) == 1);
  // d(sum m^2)/dm = 2m
  const Tensor& adj = g.by_id.at(mid);
  const Tensor& mval = t.val(mid);
  for (size_t i = 0; i < adj.data.size(); ++i)
    CHECK(adj.data[i] == doctest::Approx(2.0 * mval.data[i]).epsilon(1e-12));
}

TEST_CASE("record evaluates programs over fresh leaves") {
  RngState rng{11, 0};
  Tensor a = rng.normal({2, 3}, 0.0, 1.0);
  Tensor b = rng.normal({3, 2}, 0.0, 1.0);
  Recording rec = record(
      [](Tape& t, const std::vector<NodeId>& in) {
        return std::vector<NodeId>{t.matmul(in[0], in[1])};
      },
      {a, b});
  REQUIRE(rec.outputs.size() == 1);
  CHECK(bitwise_equal(rec.tape.val(rec.outputs[0]), matmul(a, b)));
}

TEST_CASE("gradient comparison report") {
  std::map<std::string, Tensor> g1, g2;
  g1.emplace("w", Tensor::from({2}, {1.0, 2.0}));
  g2.emplace("w", Tensor::from({2}, {1.0, 2.0}));
  GradientReport same = compare_gradients(g1, g2);
  CHECK(same.max_abs_error == 0.0);
  CHECK(same.rel_l2_error == 0.0);
  CHECK(same.cosine_similarity == doctest::Approx(1.0));

  std::map<std::string, Tensor> g3;
  g3.emplace("w", Tensor::from({2}, {-1.0, -2.0}));
  GradientReport flipped = compare_gradients(g3, g2);
  CHECK(flipped.cosine_similarity == doctest::Approx(-1.0));

  std::map<std::string, Tensor> extra = g2;
  extra.emplace("b", Tensor::zeros({1}));
  CHECK_THROWS_AS(compare_gradients(g1, extra), ArgumentError);
}

TEST_CASE("gradient report csv has header and summary") {
  std::map<std::string, Tensor> g1, g2;
  g1.emplace("w", Tensor::from({2}, {1.0, 2.0}));
  g2.emplace("w", Tensor::from({2}, {1.0, 2.5}));
  const GradientReport rep = compare_gradients(g1, g2);
  const std::string path = "report_test.csv";
  write_gradient_report_csv(rep, path);
  std::FILE* f = std::fopen(path.c_str(), "rb");
  REQUIRE(f != nullptr);
  char line[256];
  REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
  CHECK(std::string(line).rfind("param,max_abs,rel_l2", 0) == 0);
  int rows = 0;
  while (std::fgets(line, sizeof line, f) != nullptr) ++rows;
  std::fclose(f);
  std::remove(path.c_str());
  CHECK(rows == 2);  // one parameter plus the summary
}
