#include "lbi/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lbi/errors.hpp"

namespace lbi {

RegionKind parse_region_kind(const std::string& name) {
  if (name == "mlp") return RegionKind::Mlp;
  if (name == "attention") return RegionKind::Attention;
  if (name == "diag_ssm") return RegionKind::DiagSsm;
  throw ConfigError("unknown backend kind: " + name);
}

const char* region_kind_name(RegionKind kind) {
  switch (kind) {
    case RegionKind::Mlp: return "mlp";
    case RegionKind::Attention: return "attention";
    case RegionKind::DiagSsm: return "diag_ssm";
  }
  throw ConfigError("unknown backend kind");
}

void ModelConfig::validate() const {
  if (vocab_size < 1) throw ConfigError("vocab_size must be positive");
  if (D < 1 || L < 1 || X < 1) throw ConfigError("D, L and X must be positive");
  if (r < 1) throw ConfigError("interface rank must be at least 1");
  if (K < 1) throw ConfigError("region count must be at least 1");
  if (r > D) throw ConfigError("interface rank cannot exceed model width");
  if (layers_per_region < 1)
    throw ConfigError("layers_per_region must be at least 1");
  if (final_region_layers < 0 || final_region_layers > layers_per_region)
    throw ConfigError("final_region_layers must lie in [0, layers_per_region]");
  if (backend != "hybrid") {
    parse_region_kind(backend);
    if (!schedule.empty())
      throw ConfigError("schedule is only valid with the hybrid backend");
  } else if (!schedule.empty()) {
    if (static_cast<int64_t>(schedule.size()) != K)
      throw ConfigError("hybrid schedule must list exactly K kinds");
    for (const auto& s : schedule) parse_region_kind(s);
  }
  bool wants_attention = backend == "attention" || backend == "hybrid";
  for (const auto& s : schedule) wants_attention |= (s == "attention");
  if (wants_attention) {
    if (H < 1) throw ConfigError("attention needs at least one head");
    if (D % H != 0) throw ConfigError("model width must divide evenly into heads");
  }
  if ((backend == "diag_ssm" || backend == "hybrid") && N < 1)
    throw ConfigError("ssm state size must be at least 1");
}

RegionKind ModelConfig::region_kind(int64_t k) const {
  if (k < 0 || k >= K) throw ArgumentError("region index out of range");
  if (backend != "hybrid") return parse_region_kind(backend);
  if (!schedule.empty()) return parse_region_kind(schedule[static_cast<size_t>(k)]);
  // default hybrid pattern: attention every fourth region, recurrence elsewhere
  return ((k + 1) % 4 == 0) ? RegionKind::Attention : RegionKind::DiagSsm;
}

int64_t ModelConfig::region_layers(int64_t k) const {
  if (k < 0 || k >= K) throw ArgumentError("region index out of range");
  if (k == K - 1 && final_region_layers > 0) return final_region_layers;
  return layers_per_region;
}

int64_t ModelConfig::total_layers() const {
  int64_t n = 0;
  for (int64_t k = 0; k < K; ++k) n += region_layers(k);
  return n;
}

namespace {

enum class InitKind : uint8_t { Normal, Zero, Const };

struct ParamSpec {
  std::string name;
  std::vector<int64_t> shape;
  InitKind init;
  double value;  // stddev for Normal, literal for Const
};

std::string region_prefix(int64_t k) { return "region" + std::to_string(k); }

double inv_sqrt(int64_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

template <class F>
void emit_mlp2(const std::string& prefix, int64_t in, int64_t hidden,
               int64_t out, F&& fn) {
  fn(ParamSpec{prefix + ".w1", {in, hidden}, InitKind::Normal, inv_sqrt(in)});
  fn(ParamSpec{prefix + ".b1", {hidden}, InitKind::Zero, 0.0});
  fn(ParamSpec{prefix + ".w2", {hidden, out}, InitKind::Normal, inv_sqrt(hidden)});
  fn(ParamSpec{prefix + ".b2", {out}, InitKind::Zero, 0.0});
}

template <class F>
void emit_layer(const ModelConfig& cfg, const std::string& prefix,
                RegionKind kind, F&& fn) {
  const double sd = inv_sqrt(cfg.D);
  switch (kind) {
    case RegionKind::Mlp:
      break;
    case RegionKind::Attention:
      fn(ParamSpec{prefix + ".attn.wq", {cfg.D, cfg.D}, InitKind::Normal, sd});
      fn(ParamSpec{prefix + ".attn.wk", {cfg.D, cfg.D}, InitKind::Normal, sd});
      fn(ParamSpec{prefix + ".attn.wv", {cfg.D, cfg.D}, InitKind::Normal, sd});
      fn(ParamSpec{prefix + ".attn.wo", {cfg.D, cfg.D}, InitKind::Normal, sd});
      break;
    case RegionKind::DiagSsm:
      fn(ParamSpec{prefix + ".ssm.wg", {cfg.D, cfg.D}, InitKind::Normal, sd});
      fn(ParamSpec{prefix + ".ssm.bg", {cfg.D}, InitKind::Zero, 0.0});
      fn(ParamSpec{prefix + ".ssm.a", {cfg.D, cfg.N}, InitKind::Normal, 1.0});
      fn(ParamSpec{prefix + ".ssm.b", {cfg.D, cfg.N}, InitKind::Normal, 1.0});
      fn(ParamSpec{prefix + ".ssm.c", {cfg.D, cfg.N}, InitKind::Normal,
                   inv_sqrt(cfg.N)});
      break;
  }
  emit_mlp2(prefix + ".mlp", cfg.D, cfg.X, cfg.D, fn);
}

// Single source of truth for parameter names, shapes and init scales. The
// emission order is fixed so a seeded init always consumes the RNG stream
// the same way.
template <class F>
void for_each_param(const ModelConfig& cfg, bool dense, F&& fn) {
  fn(ParamSpec{"embed.table", {cfg.vocab_size, cfg.D}, InitKind::Normal, 1.0});
  if (!dense) {
    fn(ParamSpec{"m0.proj", {cfg.D, cfg.r}, InitKind::Normal, inv_sqrt(cfg.D)});
    for (int64_t k = 0; k < cfg.K; ++k) {
      const std::string rp = region_prefix(k);
      emit_mlp2(rp + ".enc", cfg.D, cfg.D, cfg.r, fn);
      emit_mlp2(rp + ".dec", cfg.r, cfg.D, cfg.D, fn);
      fn(ParamSpec{rp + ".alpha", {1}, InitKind::Const, 0.1});
      for (int64_t i = 0; i < cfg.region_layers(k); ++i)
        emit_layer(cfg, rp + ".layer" + std::to_string(i), cfg.region_kind(k), fn);
    }
    emit_mlp2("head.dec", cfg.r, cfg.D, cfg.D, fn);
  } else {
    int64_t li = 0;
    for (int64_t k = 0; k < cfg.K; ++k)
      for (int64_t i = 0; i < cfg.region_layers(k); ++i)
        emit_layer(cfg, "layer" + std::to_string(li++), cfg.region_kind(k), fn);
  }
  fn(ParamSpec{"head.proj", {cfg.D, cfg.vocab_size}, InitKind::Normal, 0.02});
}

// 0 = backend layers, 1 = interface, 2 = embedding/head
int param_class(const std::string& name) {
  if (name == "embed.table" || name == "head.proj") return 2;
  if (name.rfind("layer", 0) == 0) return 0;  // dense stack
  if (name.find(".layer") != std::string::npos) return 0;
  return 1;  // enc/dec/alpha, m0.proj, head.dec
}

int64_t spec_numel(const ParamSpec& s) {
  int64_t n = 1;
  for (int64_t d : s.shape) n *= d;
  return n;
}

}  // namespace

Model init_model(const ModelConfig& cfg, Dtype dtype, uint64_t seed, bool dense) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.dtype = dtype;
  m.dense = dense;
  RngState rng{seed, 0};
  for_each_param(cfg, dense, [&](const ParamSpec& s) {
    Tensor t;
    switch (s.init) {
      case InitKind::Normal:
        t = rng.normal(s.shape, 0.0, s.value, dtype);
        break;
      case InitKind::Zero:
        t = Tensor::zeros(s.shape, dtype);
        break;
      case InitKind::Const:
        t = Tensor::full(s.shape, s.value, dtype);
        break;
    }
    m.params.emplace(s.name, std::move(t));
  });
  return m;
}

ParamCounts count_params(const Model& model) {
  ParamCounts c;
  for (const auto& [name, t] : model.params) {
    const int64_t n = t.numel();
    switch (param_class(name)) {
      case 0: c.backend_n += n; break;
      case 1: c.interface_n += n; break;
      default: c.embed_head_n += n; break;
    }
    c.total += n;
  }
  return c;
}

ParamCounts count_params_for(const ModelConfig& cfg, bool dense) {
  cfg.validate();
  ParamCounts c;
  for_each_param(cfg, dense, [&](const ParamSpec& s) {
    const int64_t n = spec_numel(s);
    switch (param_class(s.name)) {
      case 0: c.backend_n += n; break;
      case 1: c.interface_n += n; break;
      default: c.embed_head_n += n; break;
    }
    c.total += n;
  });
  return c;
}

namespace {

NodeId pin(Tape& t, const Model& m, const std::string& name) {
  auto it = m.params.find(name);
  if (it == m.params.end()) throw ArgumentError("unknown parameter: " + name);
  return t.input(it->second, name);
}

NodeId mlp2(Tape& t, const Model& m, const std::string& prefix, NodeId x) {
  NodeId h = t.add_rowvec(t.matmul(x, pin(t, m, prefix + ".w1")),
                          pin(t, m, prefix + ".b1"));
  h = t.silu(h);
  return t.add_rowvec(t.matmul(h, pin(t, m, prefix + ".w2")),
                      pin(t, m, prefix + ".b2"));
}

NodeId phi_layer(Tape& t, const Model& m, const std::string& prefix,
                 RegionKind kind, NodeId x) {
  const double eps = m.cfg.eps;
  switch (kind) {
    case RegionKind::Mlp:
      // deliberately residual-free: zero weights give exactly zero output
      return mlp2(t, m, prefix + ".mlp", t.layer_norm(x, eps));
    case RegionKind::Attention: {
      NodeId xn = t.layer_norm(x, eps);
      NodeId q = t.matmul(xn, pin(t, m, prefix + ".attn.wq"));
      NodeId k = t.matmul(xn, pin(t, m, prefix + ".attn.wk"));
      NodeId v = t.matmul(xn, pin(t, m, prefix + ".attn.wv"));
      const int64_t H = m.cfg.H;
      const double dh = static_cast<double>(m.cfg.D / H);
      NodeId qh = t.split_heads(q, H);
      NodeId kh = t.split_heads(k, H);
      NodeId vh = t.split_heads(v, H);
      NodeId scores = t.scale(t.bmm(qh, kh, true), 1.0 / std::sqrt(dh));
      NodeId p = t.causal_softmax(scores);
      NodeId ctx = t.merge_heads(t.bmm(p, vh), H);
      NodeId attn = t.matmul(ctx, pin(t, m, prefix + ".attn.wo"));
      NodeId h1 = t.add(x, attn);
      return t.add(h1, mlp2(t, m, prefix + ".mlp", t.layer_norm(h1, eps)));
    }
    case RegionKind::DiagSsm: {
      NodeId xn = t.layer_norm(x, eps);
      NodeId g = t.sigmoid(t.add_rowvec(t.matmul(xn, pin(t, m, prefix + ".ssm.wg")),
                                        pin(t, m, prefix + ".ssm.bg")));
      NodeId decay = t.sigmoid(pin(t, m, prefix + ".ssm.a"));
      NodeId s = t.chan_state_mul(g, decay);
      NodeId u = t.chan_state_mul(xn, pin(t, m, prefix + ".ssm.b"));
      NodeId h = t.linear_recurrence(s, u);
      NodeId mix = t.chan_state_contract(h, pin(t, m, prefix + ".ssm.c"));
      NodeId h1 = t.add(x, mix);
      return t.add(h1, mlp2(t, m, prefix + ".mlp", t.layer_norm(h1, eps)));
    }
  }
  throw ConfigError("unknown backend kind");
}

}  // namespace

RegionGraph build_region(Tape& t, const Model& model, int64_t k, NodeId m_in,
                         NodeId x_embed, NodeId bypass_in) {
  const std::string rp = region_prefix(k);
  RegionGraph g;
  g.m_in = m_in;
  g.x_embed = x_embed;
  NodeId dec = mlp2(t, model, rp + ".dec", m_in);
  NodeId x = t.add_seq_broadcast(x_embed, dec);
  if (bypass_in >= 0) x = t.add(x, bypass_in);
  const RegionKind kind = model.cfg.region_kind(k);
  for (int64_t i = 0; i < model.cfg.region_layers(k); ++i)
    x = phi_layer(t, model, rp + ".layer" + std::to_string(i), kind, x);
  g.phi_out = x;
  NodeId pooled = t.mean_pool(x);
  NodeId enc = mlp2(t, model, rp + ".enc", pooled);
  NodeId pre = t.add(m_in, t.mul(enc, pin(t, model, rp + ".alpha")));
  g.m_out = t.layer_norm(pre, model.cfg.eps);
  return g;
}

NodeId build_m0(Tape& t, const Model& model, NodeId x_embed) {
  return t.matmul(t.mean_pool(x_embed), pin(t, model, "m0.proj"));
}

NodeId build_head(Tape& t, const Model& model, NodeId m_K, NodeId x_embed) {
  NodeId dec = mlp2(t, model, "head.dec", m_K);
  NodeId hx = t.add_seq_broadcast(x_embed, dec);
  return t.matmul(t.layer_norm(hx, model.cfg.eps), pin(t, model, "head.proj"));
}

ForwardOutputs model_forward(const Model& model,
                             const std::vector<int32_t>& tokens, int64_t B,
                             const std::vector<int32_t>* targets,
                             const ForwardOptions& opts) {
  model.cfg.validate();
  const int64_t L = model.cfg.L;
  if (B < 1) throw ArgumentError("batch size must be positive");
  if (tokens.size() != static_cast<size_t>(B * L))
    throw ArgumentError("token count must equal batch size times sequence length");
  if (targets && targets->size() != tokens.size())
    throw ArgumentError("targets must match tokens in length");
  if (opts.bypass_region >= 0 &&
      (model.dense || opts.bypass_region + 1 >= model.cfg.K))
    throw ArgumentError("bypass fixture needs a following region");

  ForwardOutputs out;
  out.tokens = tokens;
  out.B = B;
  out.L = L;
  Tape& t = out.tape;
  auto ids = std::make_shared<const std::vector<int32_t>>(tokens);
  NodeId table = pin(t, model, "embed.table");
  NodeId xe = t.embed(table, ids, B, L);
  out.x_embed_id = xe;
  out.x_embed = std::make_shared<const Tensor>(t.val(xe));

  if (!model.dense) {
    NodeId m = build_m0(t, model, xe);
    out.m_ids.push_back(m);
    out.chain.push_back(t.val(m));
    NodeId prev_phi = -1;
    for (int64_t k = 0; k < model.cfg.K; ++k) {
      NodeId bypass = (opts.bypass_region >= 0 && k == opts.bypass_region + 1)
                          ? prev_phi
                          : -1;
      RegionGraph g = build_region(t, model, k, m, xe, bypass);
      out.caches.push_back(ForwardCache{k, t.val(m), out.x_embed, t.val(g.m_out)});
      if (k == opts.bypass_region) prev_phi = g.phi_out;
      m = g.m_out;
      out.m_ids.push_back(m);
      out.chain.push_back(t.val(m));
    }
    out.logits_id = build_head(t, model, m, xe);
  } else {
    NodeId x = xe;
    int64_t li = 0;
    for (int64_t k = 0; k < model.cfg.K; ++k) {
      const RegionKind kind = model.cfg.region_kind(k);
      for (int64_t i = 0; i < model.cfg.region_layers(k); ++i) {
        const std::string prefix = "layer" + std::to_string(li++);
        if (kind == RegionKind::Mlp) {
          // the dense baseline uses standard residual wiring
          x = t.add(x, mlp2(t, model, prefix + ".mlp",
                            t.layer_norm(x, model.cfg.eps)));
        } else {
          x = phi_layer(t, model, prefix, kind, x);
        }
      }
    }
    out.logits_id = t.matmul(t.layer_norm(x, model.cfg.eps),
                             pin(t, model, "head.proj"));
  }

  if (targets) {
    auto tg = std::make_shared<const std::vector<int32_t>>(*targets);
    out.loss_id = t.cross_entropy(out.logits_id, tg);
    out.loss = t.val(out.loss_id).data[0];
    out.has_loss = true;
  }
  return out;
}

Tensor embed_tokens(const Model& model, const std::vector<int32_t>& tokens,
                    int64_t B) {
  const int64_t L = model.cfg.L;
  if (B < 1 || tokens.size() != static_cast<size_t>(B * L))
    throw ArgumentError("token count must equal batch size times sequence length");
  return embed_rows(model.params.at("embed.table"), tokens, B, L);
}

Tensor init_interface(const Model& model, const Tensor& x_embed) {
  return matmul(mean_pool(x_embed), model.params.at("m0.proj"));
}

std::pair<Tensor, ForwardCache> region_forward(
    const Model& model, int64_t k, const Tensor& m_k,
    const std::shared_ptr<const Tensor>& x_embed) {
  if (model.dense) throw ArgumentError("dense models have no interface regions");
  if (k < 0 || k >= model.cfg.K) throw ArgumentError("region index out of range");
  if (m_k.rank() != 2 || m_k.shape[1] != model.cfg.r)
    throw DimensionError("interface state must be [B, r], got " + m_k.shape_str());
  if (!x_embed || x_embed->rank() != 3 || x_embed->shape[0] != m_k.shape[0] ||
      x_embed->shape[1] != model.cfg.L || x_embed->shape[2] != model.cfg.D)
    throw DimensionError("canvas must be [B, L, D] matching the interface batch");
  Tape t;
  NodeId mi = t.input(m_k);
  NodeId xe = t.input(*x_embed);
  RegionGraph g = build_region(t, model, k, mi, xe);
  ForwardCache cache{k, m_k, x_embed, t.val(g.m_out)};
  return {t.val(g.m_out), std::move(cache)};
}

namespace {

bool all_zero(const Tensor& t) {
  for (double v : t.data)
    if (v != 0.0) return false;
  return true;
}

}  // namespace

bool separator_audit(const Model& model, const ForwardOptions& opts) {
  if (model.dense) throw ArgumentError("the audit applies to interface models");
  const ModelConfig& cfg = model.cfg;
  const int64_t B = 2;
  RngState rng{cfg.seed ^ 0x5eedULL, 0};
  std::vector<int32_t> tokens(static_cast<size_t>(B * cfg.L));
  std::vector<int32_t> targets(tokens.size());
  for (auto& v : tokens) v = static_cast<int32_t>(rng.next_below(cfg.vocab_size));
  for (auto& v : targets) v = static_cast<int32_t>(rng.next_below(cfg.vocab_size));

  ForwardOutputs base = model_forward(model, tokens, B, &targets, opts);

  // Perturbing region j must leave the canvas and every boundary up to j
  // bitwise untouched.
  for (int64_t j = 0; j < cfg.K; ++j) {
    Model pert = model;
    const std::string prefix = region_prefix(j) + ".";
    for (auto& [name, tensor] : pert.params) {
      if (name.rfind(prefix, 0) != 0) continue;
      for (double& v : tensor.data) v += 1e-3;
      apply_dtype(tensor);
    }
    ForwardOutputs got = model_forward(pert, tokens, B, &targets, opts);
    if (!bitwise_equal(*got.x_embed, *base.x_embed)) return false;
    for (int64_t k = 0; k <= j; ++k)
      if (!bitwise_equal(got.chain[static_cast<size_t>(k)],
                         base.chain[static_cast<size_t>(k)]))
        return false;
  }

  // Cutting the adjoint at boundary k must zero every gradient upstream of k.
  // Any extra inter-region edge shows up here as nonzero leakage.
  const Tensor seed = Tensor::full({1}, 1.0);
  for (int64_t k = 1; k <= cfg.K; ++k) {
    BackwardOptions bo;
    bo.stop = {base.m_ids[static_cast<size_t>(k)]};
    Gradients g = backward(base.tape, base.loss_id, seed, bo);
    if (!all_zero(g.by_name.at("m0.proj"))) return false;
    for (int64_t j = 0; j < k; ++j) {
      const std::string prefix = region_prefix(j) + ".";
      for (const auto& [name, grad] : g.by_name) {
        if (name.rfind(prefix, 0) != 0) continue;
        if (!all_zero(grad)) return false;
      }
    }
  }
  return true;
}

namespace {

using nlohmann::json;

json config_to_json(const ModelConfig& cfg) {
  json j;
  j["vocab_size"] = cfg.vocab_size;
  j["D"] = cfg.D;
  j["L"] = cfg.L;
  j["r"] = cfg.r;
  j["K"] = cfg.K;
  j["layers_per_region"] = cfg.layers_per_region;
  j["final_region_layers"] = cfg.final_region_layers;
  j["backend"] = cfg.backend;
  j["schedule"] = cfg.schedule;
  j["H"] = cfg.H;
  j["N"] = cfg.N;
  j["X"] = cfg.X;
  j["eps"] = cfg.eps;
  j["seed"] = cfg.seed;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int64_t>();
  cfg.D = j.at("D").get<int64_t>();
  cfg.L = j.at("L").get<int64_t>();
  cfg.r = j.at("r").get<int64_t>();
  cfg.K = j.at("K").get<int64_t>();
  cfg.layers_per_region = j.at("layers_per_region").get<int64_t>();
  cfg.final_region_layers = j.value("final_region_layers", int64_t{0});
  cfg.backend = j.at("backend").get<std::string>();
  cfg.schedule = j.value("schedule", std::vector<std::string>{});
  cfg.H = j.at("H").get<int64_t>();
  cfg.N = j.at("N").get<int64_t>();
  cfg.X = j.at("X").get<int64_t>();
  cfg.eps = j.at("eps").get<double>();
  cfg.seed = j.at("seed").get<uint64_t>();
  return cfg;
}

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

constexpr char kMagic[4] = {'L', 'B', 'I', 'C'};
constexpr uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  const uint8_t dt = model.dtype == Dtype::F32 ? 1 : 0;
  const uint8_t dn = model.dense ? 1 : 0;
  const uint16_t reserved = 0;
  write_pod(os, dt);
  write_pod(os, dn);
  write_pod(os, reserved);
  const std::string cfg = config_to_json(model.cfg).dump();
  write_pod(os, static_cast<uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_pod(os, static_cast<uint64_t>(model.params.size()));
  // std::map iterates in name order, so the layout is deterministic
  for (const auto& [name, t] : model.params) {
    write_pod(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape) write_pod(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  uint32_t version = 0;
  read_pod(is, version);
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  uint8_t dt = 0, dn = 0;
  uint16_t reserved = 0;
  read_pod(is, dt);
  read_pod(is, dn);
  read_pod(is, reserved);
  uint32_t cfg_len = 0;
  read_pod(is, cfg_len);
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), cfg_len);
  uint64_t n_params = 0;
  read_pod(is, n_params);
  if (!is) throw DataError("truncated checkpoint header: " + path);

  Model model;
  try {
    model.cfg = config_from_json(json::parse(cfg_text));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad checkpoint config: ") + e.what());
  }
  model.dtype = dt == 1 ? Dtype::F32 : Dtype::F64;
  model.dense = dn == 1;
  for (uint64_t i = 0; i < n_params; ++i) {
    uint32_t name_len = 0;
    read_pod(is, name_len);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t rank = 0;
    read_pod(is, rank);
    std::vector<int64_t> shape(rank);
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      uint64_t dim = 0;
      read_pod(is, dim);
      shape[d] = static_cast<int64_t>(dim);
      numel *= shape[d];
    }
    Tensor t(shape, model.dtype);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!is) throw DataError("truncated checkpoint tensor: " + name);
    model.params.emplace(std::move(name), std::move(t));
  }
  model.cfg.validate();
  return model;
}

std::string config_json_text(const ModelConfig& cfg) {
  return config_to_json(cfg).dump();
}

ModelConfig config_from_json_text(const std::string& text) {
  try {
    return config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad model config: ") + e.what());
  }
}

}  // namespace lbi
