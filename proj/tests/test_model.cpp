#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>

#include "lbi/model.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace lbi;

TEST_CASE("config validation rejects bad shapes") {
  ModelConfig cfg = fixture::tiny_config("mlp");
  CHECK_NOTHROW(cfg.validate());

  ModelConfig bad = cfg;
  bad.r = bad.D + 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.backend = "unknown";
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.backend = "attention";
  bad.H = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.backend = "hybrid";
  bad.schedule = {"mlp"};  // K = 3 needs 3 entries
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.schedule = {"mlp", "mlp", "mlp"};  // schedule without hybrid
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("hybrid default pattern places attention every fourth region") {
  ModelConfig cfg = fixture::tiny_config("hybrid");
  cfg.K = 8;
  cfg.D = 16;
  cfg.H = 2;
  for (int64_t k = 0; k < 8; ++k) {
    const RegionKind want =
        ((k + 1) % 4 == 0) ? RegionKind::Attention : RegionKind::DiagSsm;
    CHECK(cfg.region_kind(k) == want);
  }

  cfg.schedule = {"mlp", "attention", "diag_ssm", "mlp",
                  "mlp", "mlp",       "mlp",      "mlp"};
  CHECK(cfg.region_kind(0) == RegionKind::Mlp);
  CHECK(cfg.region_kind(1) == RegionKind::Attention);
  CHECK(cfg.region_kind(2) == RegionKind::DiagSsm);
}

TEST_CASE("final region truncation changes only the last region") {
  ModelConfig cfg = fixture::tiny_config("mlp");
  cfg.K = 3;
  cfg.layers_per_region = 3;
  cfg.final_region_layers = 1;
  CHECK(cfg.region_layers(0) == 3);
  CHECK(cfg.region_layers(1) == 3);
  CHECK(cfg.region_layers(2) == 1);
  CHECK(cfg.total_layers() == 7);

  cfg.final_region_layers = 0;
  CHECK(cfg.region_layers(2) == 3);
  CHECK(cfg.total_layers() == 9);
}

TEST_CASE("initialization is seed-deterministic") {
  const ModelConfig cfg = fixture::tiny_config("hybrid");
  const Model a = init_model(cfg, Dtype::F64, 42);
  const Model b = init_model(cfg, Dtype::F64, 42);
  const Model c = init_model(cfg, Dtype::F64, 43);
  REQUIRE(a.params.size() == b.params.size());
  for (const auto& [name, t] : a.params) {
    CHECK(bitwise_equal(t, b.params.at(name)));
  }
  bool any_diff = false;
  for (const auto& [name, t] : a.params)
    if (!bitwise_equal(t, c.params.at(name))) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("parameter accounting is exact and dense has no interface") {
  for (const char* backend : {"mlp", "attention", "diag_ssm", "hybrid"}) {
    const ModelConfig cfg = fixture::tiny_config(backend);
    const Model m = init_model(cfg, Dtype::F64, 1);
    const ParamCounts pc = count_params(m);
    CHECK(pc.backend_n + pc.interface_n + pc.embed_head_n == pc.total);

    int64_t flat = 0;
    for (const auto& [name, t] : m.params) flat += t.numel();
    CHECK(flat == pc.total);

    const Model d = init_model(cfg, Dtype::F64, 1, true);
    const ParamCounts dc = count_params(d);
    CHECK(dc.interface_n == 0);
    CHECK(dc.backend_n == pc.backend_n);  // same layer stack
  }
}

TEST_CASE("rank changes leave the backend parameter count alone") {
  ModelConfig a = fixture::tiny_config("diag_ssm");
  ModelConfig b = a;
  b.r = 8;
  const ParamCounts ca = count_params_for(a);
  const ParamCounts cb = count_params_for(b);
  CHECK(ca.backend_n == cb.backend_n);
  CHECK(ca.embed_head_n == cb.embed_head_n);
  CHECK(ca.interface_n != cb.interface_n);
}

TEST_CASE("forward produces the interface chain and caches") {
  const ModelConfig cfg = fixture::tiny_config("hybrid");
  const Model m = init_model(cfg, Dtype::F64, 7);
  auto [toks, tgts] = fixture::random_batch(cfg, 2, 99);
  const ForwardOutputs fwd = model_forward(m, toks, 2, &tgts);

  CHECK(fwd.has_loss);
  CHECK(std::isfinite(fwd.loss));
  REQUIRE(fwd.m_ids.size() == size_t(cfg.K + 1));
  REQUIRE(fwd.chain.size() == size_t(cfg.K + 1));
  REQUIRE(fwd.caches.size() == size_t(cfg.K));
  for (int64_t k = 0; k < cfg.K; ++k) {
    CHECK(fwd.caches[size_t(k)].region == k);
    CHECK(bitwise_equal(fwd.caches[size_t(k)].m_in, fwd.chain[size_t(k)]));
    CHECK(bitwise_equal(fwd.caches[size_t(k)].m_out_expected,
                        fwd.chain[size_t(k + 1)]));
  }
  CHECK(fwd.chain[0].shape == std::vector<int64_t>({2, cfg.r}));
}

TEST_CASE("interface init matches the standalone helpers bitwise") {
  const ModelConfig cfg = fixture::tiny_config("mlp");
  const Model m = init_model(cfg, Dtype::F64, 3);
  auto [toks, tgts] = fixture::random_batch(cfg, 2, 5);
  const ForwardOutputs fwd = model_forward(m, toks, 2, &tgts);
  const Tensor xe = embed_tokens(m, toks, 2);
  CHECK(bitwise_equal(xe, *fwd.x_embed));
  CHECK(bitwise_equal(init_interface(m, xe), fwd.chain[0]));
}

TEST_CASE("region_forward reproduces the recorded transition bitwise") {
  const ModelConfig cfg = fixture::tiny_config("diag_ssm");
  const Model m = init_model(cfg, Dtype::F64, 11);
  auto [toks, tgts] = fixture::random_batch(cfg, 2, 13);
  const ForwardOutputs fwd = model_forward(m, toks, 2, &tgts);
  for (int64_t k = 0; k < cfg.K; ++k) {
    auto [m_out, cache] =
        region_forward(m, k, fwd.chain[size_t(k)], fwd.x_embed);
    CHECK(bitwise_equal(m_out, fwd.chain[size_t(k + 1)]));
    CHECK(bitwise_equal(cache.m_out_expected, m_out));
  }
}

TEST_CASE("zero output head gives exactly uniform cross entropy") {
  const ModelConfig cfg = fixture::tiny_config("mlp");
  Model m = init_model(cfg, Dtype::F64, 17);
  Tensor& proj = m.params.at("head.proj");
  for (double& v : proj.data) v = 0.0;
  auto [toks, tgts] = fixture::random_batch(cfg, 2, 19);
  const ForwardOutputs fwd = model_forward(m, toks, 2, &tgts);
  CHECK(std::abs(fwd.loss - std::log(double(cfg.vocab_size))) < 1e-12);
}

TEST_CASE("fresh models start near the uniform loss") {
  const ModelConfig cfg = fixture::tiny_config("hybrid");
  const Model m = init_model(cfg, Dtype::F64, 23);
  auto [toks, tgts] = fixture::random_batch(cfg, 2, 29);
  const ForwardOutputs fwd = model_forward(m, toks, 2, &tgts);
  CHECK(std::abs(fwd.loss - std::log(double(cfg.vocab_size))) < 0.2);
}

TEST_CASE("zero interface weight collapses the chain to layer norm") {
  const ModelConfig cfg = fixture::tiny_config("diag_ssm");
  Model m = init_model(cfg, Dtype::F64, 31);
  for (int64_t k = 0; k < cfg.K; ++k) {
    Tensor& alpha = m.params.at("region" + std::to_string(k) + ".alpha");
    alpha(0) = 0.0;
  }
  auto [toks, tgts] = fixture::random_batch(cfg, 2, 37);
  const ForwardOutputs fwd = model_forward(m, toks, 2, &tgts);
  for (int64_t k = 0; k < cfg.K; ++k)
    CHECK(bitwise_equal(fwd.chain[size_t(k + 1)],
                        layer_norm(fwd.chain[size_t(k)], cfg.eps)));
}

TEST_CASE("zeroed mlp layer maps every input to zero") {
  const ModelConfig cfg = fixture::tiny_config("mlp");
  Model m = init_model(cfg, Dtype::F64, 41);
  for (const char* suffix : {".w1", ".b1", ".w2", ".b2"}) {
    Tensor& t = m.params.at(std::string("region0.layer0.mlp") + suffix);
    for (double& v : t.data) v = 0.0;
  }
  auto [toks, tgts] = fixture::random_batch(cfg, 2, 43);
  const Tensor xe = embed_tokens(m, toks, 2);
  auto xe_ptr = std::make_shared<const Tensor>(xe);
  const Tensor m0 = init_interface(m, xe);

  Tape t;
  const RegionGraph rg =
      build_region(t, m, 0, t.input(m0), t.input(*xe_ptr));
  for (double v : t.val(rg.phi_out).data) CHECK(v == 0.0);
}

TEST_CASE("zero decay makes the ssm layer strictly local") {
  const ModelConfig cfg = fixture::tiny_config("diag_ssm");
  Model m = init_model(cfg, Dtype::F64, 47);
  Tensor& a = m.params.at("region0.layer0.ssm.a");
  for (double& v : a.data) v = -1e9;  // sigmoid underflows to exactly 0

  RngState rng{53, 0};
  Tensor xe1 = rng.normal({1, cfg.L, cfg.D}, 0.0, 1.0);
  Tensor xe2 = xe1;
  xe2(0, 0, 0) += 10.0;  // only position 0 differs
  const Tensor m0 = Tensor::zeros({1, cfg.r});

  Tape t1, t2;
  const RegionGraph g1 = build_region(t1, m, 0, t1.input(m0), t1.input(xe1));
  const RegionGraph g2 = build_region(t2, m, 0, t2.input(m0), t2.input(xe2));
  const Tensor& y1 = t1.val(g1.phi_out);
  const Tensor& y2 = t2.val(g2.phi_out);
  for (int64_t l = 1; l < cfg.L; ++l)
    for (int64_t d = 0; d < cfg.D; ++d) CHECK(y1(0, l, d) == y2(0, l, d));
}

TEST_CASE("checkpoints round trip bitwise") {
  const ModelConfig cfg = fixture::tiny_config("hybrid", 5);
  const Model m = init_model(cfg, Dtype::F32, 5);
  const std::string path = "model_roundtrip_test.ckpt";
  save_checkpoint(path, m);
  const Model back = load_checkpoint(path);
  std::remove(path.c_str());

  CHECK(back.dtype == Dtype::F32);
  CHECK(back.dense == false);
  CHECK(back.cfg.backend == cfg.backend);
  CHECK(back.cfg.D == cfg.D);
  CHECK(back.cfg.K == cfg.K);
  REQUIRE(back.params.size() == m.params.size());
  for (const auto& [name, t] : m.params)
    CHECK(bitwise_equal(t, back.params.at(name)));
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string path = "model_corrupt_test.ckpt";
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(path), DataError);

  const ModelConfig cfg = fixture::tiny_config("mlp");
  const Model m = init_model(cfg, Dtype::F64, 1);
  save_checkpoint(path, m);
  // truncate the tail
  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  in.close();
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  std::remove(path.c_str());
}

TEST_CASE("config json round trips") {
  ModelConfig cfg = fixture::tiny_config("hybrid", 9);
  cfg.schedule = {"mlp", "attention", "diag_ssm"};
  const ModelConfig back = config_from_json_text(config_json_text(cfg));
  CHECK(back.vocab_size == cfg.vocab_size);
  CHECK(back.D == cfg.D);
  CHECK(back.L == cfg.L);
  CHECK(back.r == cfg.r);
  CHECK(back.K == cfg.K);
  CHECK(back.backend == cfg.backend);
  CHECK(back.schedule == cfg.schedule);
  CHECK(back.eps == cfg.eps);
  CHECK(back.seed == cfg.seed);
  CHECK_THROWS_AS(config_from_json_text("{"), DataError);
}

TEST_CASE("separator audit passes every shipped backend") {
  for (const char* backend : {"mlp", "attention", "diag_ssm", "hybrid"}) {
    const ModelConfig cfg = fixture::tiny_config(backend);
    const Model m = init_model(cfg, Dtype::F64, 61);
    CHECK(separator_audit(m));
  }
}

TEST_CASE("separator audit flags the bypass edge") {
  const ModelConfig cfg = fixture::tiny_config("mlp");
  const Model m = init_model(cfg, Dtype::F64, 67);
  ForwardOptions opts;
  opts.bypass_region = 0;
  CHECK_FALSE(separator_audit(m, opts));
}

TEST_CASE("dense models run the plain residual stack") {
  const ModelConfig cfg = fixture::tiny_config("mlp");
  const Model d = init_model(cfg, Dtype::F64, 71, true);
  auto [toks, tgts] = fixture::random_batch(cfg, 2, 73);
  const ForwardOutputs fwd = model_forward(d, toks, 2, &tgts);
  CHECK(fwd.has_loss);
  CHECK(std::isfinite(fwd.loss));
  CHECK(fwd.caches.empty());
  CHECK(fwd.m_ids.empty());
}
