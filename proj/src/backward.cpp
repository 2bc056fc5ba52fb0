#include "lbi/backward.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>

#include "lbi/errors.hpp"

namespace lbi {

Schedule parse_schedule(const std::string& name) {
  if (name == "three-phase" || name == "three_phase") return Schedule::ThreePhase;
  if (name == "streaming") return Schedule::Streaming;
  throw ConfigError("unknown schedule: " + name);
}

void AccessLog::note(int64_t task, int64_t resource) {
  std::lock_guard<std::mutex> lock(mu_);
  entries_.emplace_back(task, resource);
}

std::vector<std::pair<int64_t, int64_t>> AccessLog::entries() const {
  std::lock_guard<std::mutex> lock(mu_);
  return entries_;
}

int64_t AccessLog::cross_region_count() const {
  std::lock_guard<std::mutex> lock(mu_);
  int64_t n = 0;
  for (const auto& [task, resource] : entries_)
    if (task != resource) ++n;
  return n;
}

bool OverlapReport::overlapped() const {
  for (const auto& s : jacobian)
    if (s.end_ms > 0.0 && s.start_ms < forward_end_ms) return true;
  return false;
}

namespace {

std::vector<std::pair<std::string, NodeId>> named_leaves(const Tape& t,
                                                         const std::string& prefix) {
  std::vector<std::pair<std::string, NodeId>> out;
  for (NodeId i = 0; i < static_cast<NodeId>(t.size()); ++i) {
    const Node& n = t.node(i);
    if (n.op != Op::Input || n.name.empty()) continue;
    if (!prefix.empty() && n.name.rfind(prefix, 0) != 0) continue;
    out.emplace_back(n.name, i);
  }
  return out;
}

int64_t effective_chunk(const BackwardPlan& plan, int64_t r) {
  const int64_t c = plan.chunk <= 0 ? r : plan.chunk;
  if (c < 1 || c > r)
    throw ArgumentError("chunk size must lie in [1, r]");
  return c;
}

// Shared head sweep: cut the adjoint at the terminal boundary and at the
// canvas, then read off mbar_K, the canvas contribution and the head
// parameter gradients. Works on the recorded full graph and on the
// streaming schedule's standalone head graph alike.
HeadAdjoints head_sweep(const Tape& t, NodeId loss, NodeId m_K, NodeId x_embed) {
  BackwardOptions bo;
  bo.stop = {m_K, x_embed};
  bo.wanted = {m_K, x_embed};
  const auto heads = named_leaves(t, "head.");
  for (const auto& [name, id] : heads) bo.wanted.push_back(id);
  Gradients g = backward(t, loss, Tensor::full({1}, 1.0, t.val(loss).dtype), bo);
  HeadAdjoints out;
  out.loss = t.val(loss).data[0];
  out.mbar_K = std::move(g.by_id.at(m_K));
  out.canvas = std::move(g.by_id.at(x_embed));
  for (const auto& [name, id] : heads)
    out.grads[name] = std::move(g.by_name.at(name));
  return out;
}

}  // namespace

InterfaceJacobian materialize_jacobian(const Model& model,
                                       const ForwardCache& cache,
                                       const BackwardPlan& plan, AccessLog* log) {
  const int64_t r = model.cfg.r;
  const int64_t B = cache.m_in.shape[0];
  const int64_t c = effective_chunk(plan, r);
  if (log) log->note(cache.region, cache.region);

  InterfaceJacobian out;
  out.region = cache.region;
  out.J = Tensor::zeros({B, r, r}, cache.m_out_expected.dtype);
  for (int64_t j0 = 0; j0 < r; j0 += c) {
    Tape t;
    NodeId mi = t.input(cache.m_in);
    NodeId xe = t.input(*cache.x_embed);
    RegionGraph g = build_region(t, model, cache.region, mi, xe);
    if (!bitwise_equal(t.val(g.m_out), cache.m_out_expected))
      throw IntegrityError("replayed boundary value differs for region " +
                           std::to_string(cache.region));
    const int64_t j1 = std::min(j0 + c, r);
    for (int64_t i = j0; i < j1; ++i) {
      // Basis cotangent row i replicated across the batch: the transition is
      // batch diagonal, so one sweep fills row i of every per-element Jacobian.
      Tensor e = Tensor::zeros({B, r}, out.J.dtype);
      for (int64_t b = 0; b < B; ++b) e(b, i) = 1.0;
      auto grads = vjp(t, g.m_out, e, {mi});
      const Tensor& gm = grads.at(mi);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < r; ++j) out.J(b, i, j) = gm(b, j);
    }
  }
  return out;
}

std::vector<InterfaceJacobian> phase1_all(const Model& model,
                                          const std::vector<ForwardCache>& caches,
                                          const BackwardPlan& plan, Executor& ex,
                                          AccessLog* log) {
  std::vector<InterfaceJacobian> out(caches.size());
  std::vector<std::function<void()>> tasks;
  tasks.reserve(caches.size());
  for (size_t k = 0; k < caches.size(); ++k)
    tasks.emplace_back([&, k] {
      out[k] = materialize_jacobian(model, caches[k], plan, log);
    });
  ex.run_all(tasks);
  return out;
}

std::vector<Tensor> transport_adjoints(const std::vector<InterfaceJacobian>& js,
                                       const Tensor& mbar_K, Executor& ex,
                                       int64_t seq_threshold,
                                       scan::ScanStats* stats) {
  if (mbar_K.rank() != 2)
    throw DimensionError("terminal adjoint must be [B, r], got " +
                         mbar_K.shape_str());
  const int64_t B = mbar_K.shape[0];
  const int64_t r = mbar_K.shape[1];
  const int64_t K = static_cast<int64_t>(js.size());
  for (int64_t k = 0; k < K; ++k)
    if (js[static_cast<size_t>(k)].region != k)
      throw ArgumentError("jacobians must be ordered by region");

  std::vector<Tensor> mbar(static_cast<size_t>(K) + 1,
                           Tensor::zeros({B, r}, mbar_K.dtype));
  for (int64_t b = 0; b < B; ++b) {
    std::vector<Tensor> chain;
    chain.reserve(static_cast<size_t>(K));
    for (int64_t k = 0; k < K; ++k) {
      const Tensor& J = js[static_cast<size_t>(k)].J;
      Tensor jb({r, r}, J.dtype);
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < r; ++j) jb(i, j) = J(b, i, j);
      chain.push_back(std::move(jb));
    }
    scan::ScanStats st;
    auto P = scan::suffix_scan_parallel(chain, ex, &st, seq_threshold);
    if (b == 0 && stats) *stats = st;
    Tensor row({r}, mbar_K.dtype);
    for (int64_t j = 0; j < r; ++j) row.data[static_cast<size_t>(j)] = mbar_K(b, j);
    auto adj = scan::apply_adjoints(P, row);
    for (int64_t k = 0; k <= K; ++k)
      for (int64_t j = 0; j < r; ++j)
        mbar[static_cast<size_t>(k)](b, j) = adj[static_cast<size_t>(k)].data[static_cast<size_t>(j)];
  }
  return mbar;
}

std::map<std::string, Tensor> phase3_region_backward(const Model& model,
                                                     const ForwardCache& cache,
                                                     const Tensor& mbar_next,
                                                     Tensor* canvas_out,
                                                     AccessLog* log) {
  if (log) log->note(cache.region, cache.region);
  Tape t;
  NodeId mi = t.input(cache.m_in);
  NodeId xe = t.input(*cache.x_embed);
  RegionGraph g = build_region(t, model, cache.region, mi, xe);
  if (!bitwise_equal(t.val(g.m_out), cache.m_out_expected))
    throw IntegrityError("replayed boundary value differs for region " +
                         std::to_string(cache.region));
  BackwardOptions bo;
  const auto leaves = named_leaves(t, "");
  bo.wanted.reserve(leaves.size() + 1);
  for (const auto& [name, id] : leaves) bo.wanted.push_back(id);
  bo.wanted.push_back(xe);
  Gradients grads = backward(t, g.m_out, mbar_next, bo);
  if (canvas_out) *canvas_out = std::move(grads.by_id.at(xe));
  return std::move(grads.by_name);
}

HeadAdjoints head_backward(const Model& model, const ForwardOutputs& fwd) {
  if (model.dense) throw ArgumentError("dense models have no interface head path");
  if (!fwd.has_loss) throw ArgumentError("head sweep needs a recorded loss");
  return head_sweep(fwd.tape, fwd.loss_id, fwd.m_ids.back(), fwd.x_embed_id);
}

namespace {

LbiGradients assemble(const Model& model, const std::vector<ForwardCache>& caches,
                      HeadAdjoints head, const std::vector<int32_t>& tokens,
                      int64_t B, const BackwardPlan& plan,
                      std::vector<InterfaceJacobian> jacobians, Executor& ex,
                      AccessLog* log) {
  const int64_t K = static_cast<int64_t>(caches.size());
  LbiGradients out;
  out.jacobians = std::move(jacobians);
  out.interface_adjoints = transport_adjoints(
      out.jacobians, head.mbar_K, ex, plan.scan_seq_threshold, &out.scan_stats);
  for (int64_t k = 0; k <= K; ++k)
    if (!out.interface_adjoints[static_cast<size_t>(k)].all_finite())
      throw NumericError("non-finite interface adjoint at boundary " +
                         std::to_string(k));

  std::vector<std::map<std::string, Tensor>> region_grads(static_cast<size_t>(K));
  std::vector<Tensor> canvas_parts(static_cast<size_t>(K));
  std::vector<std::function<void()>> tasks;
  tasks.reserve(static_cast<size_t>(K));
  for (int64_t k = 0; k < K; ++k)
    tasks.emplace_back([&, k] {
      region_grads[static_cast<size_t>(k)] = phase3_region_backward(
          model, caches[static_cast<size_t>(k)],
          out.interface_adjoints[static_cast<size_t>(k) + 1],
          &canvas_parts[static_cast<size_t>(k)], log);
    });
  ex.run_all(tasks);

  // Canvas accumulation order is pinned: head path first, then regions in
  // ascending index order, then the interface init path.
  Tensor canvas = std::move(head.canvas);
  for (int64_t k = 0; k < K; ++k)
    canvas = add(canvas, canvas_parts[static_cast<size_t>(k)]);

  {
    Tape t;
    NodeId xe = t.input(*caches[0].x_embed);
    NodeId m0 = build_m0(t, model, xe);
    BackwardOptions bo;
    const auto leaves = named_leaves(t, "");
    for (const auto& [name, id] : leaves) bo.wanted.push_back(id);
    bo.wanted.push_back(xe);
    Gradients g = backward(t, m0, out.interface_adjoints[0], bo);
    Tensor& proj = g.by_name.at("m0.proj");
    if (!proj.all_finite())
      throw NumericError("non-finite gradient on the interface init path");
    out.parameter_gradients["m0.proj"] = std::move(proj);
    canvas = add(canvas, g.by_id.at(xe));
  }

  {
    // embedding scatter, ascending position order
    const Tensor& table = model.params.at("embed.table");
    Tensor tg = Tensor::zeros(table.shape, table.dtype);
    const int64_t D = model.cfg.D;
    const int64_t positions = B * model.cfg.L;
    for (int64_t p = 0; p < positions; ++p) {
      const int64_t row = tokens[static_cast<size_t>(p)];
      for (int64_t d = 0; d < D; ++d)
        tg.data[static_cast<size_t>(row * D + d)] +=
            canvas.data[static_cast<size_t>(p * D + d)];
    }
    apply_dtype(tg);
    if (!tg.all_finite())
      throw NumericError("non-finite gradient on the embedding path");
    out.parameter_gradients["embed.table"] = std::move(tg);
  }

  for (auto& [name, g] : head.grads) {
    if (!g.all_finite())
      throw NumericError("non-finite gradient on the loss head: " + name);
    out.parameter_gradients[name] = std::move(g);
  }
  for (int64_t k = 0; k < K; ++k)
    for (auto& [name, g] : region_grads[static_cast<size_t>(k)]) {
      if (!g.all_finite())
        throw NumericError("non-finite gradient in region " + std::to_string(k) +
                           ": " + name);
      out.parameter_gradients[name] = std::move(g);
    }
  return out;
}

}  // namespace

LbiGradients lbi_backward(const Model& model, const ForwardOutputs& fwd,
                          const BackwardPlan& plan, AccessLog* log) {
  if (model.dense)
    throw ArgumentError("the interface pipeline applies to interface models");
  if (!fwd.has_loss) throw ArgumentError("backward needs a recorded loss");
  if (plan.workers < 1) throw ArgumentError("worker count must be positive");
  auto ex = make_executor(static_cast<int>(plan.workers));
  HeadAdjoints head = head_backward(model, fwd);
  auto js = phase1_all(model, fwd.caches, plan, *ex, log);
  return assemble(model, fwd.caches, std::move(head), fwd.tokens, fwd.B, plan,
                  std::move(js), *ex, log);
}

LbiGradients streaming_backward(const Model& model,
                                const std::vector<int32_t>& tokens, int64_t B,
                                const std::vector<int32_t>& targets,
                                const BackwardPlan& plan, OverlapReport* report,
                                double* loss_out, AccessLog* log) {
  if (model.dense)
    throw ArgumentError("the interface pipeline applies to interface models");
  if (targets.size() != tokens.size())
    throw ArgumentError("targets must match tokens in length");
  if (plan.workers < 1) throw ArgumentError("worker count must be positive");
  const int64_t K = model.cfg.K;

  const auto t0 = std::chrono::steady_clock::now();
  auto ms = [t0] {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - t0)
        .count();
  };

  auto x_embed = std::make_shared<const Tensor>(embed_tokens(model, tokens, B));
  Tensor m = init_interface(model, *x_embed);

  std::vector<ForwardCache> caches(static_cast<size_t>(K));
  std::vector<InterfaceJacobian> js(static_cast<size_t>(K));
  std::vector<PhaseSpan> fwd_spans(static_cast<size_t>(K));
  std::vector<PhaseSpan> jac_spans(static_cast<size_t>(K));
  std::unique_ptr<ThreadPool> pool;
  if (plan.workers > 1) pool = std::make_unique<ThreadPool>(static_cast<int>(plan.workers));
  std::vector<std::future<void>> pending;

  for (int64_t k = 0; k < K; ++k) {
    auto& span = fwd_spans[static_cast<size_t>(k)];
    span.region = k;
    span.start_ms = ms();
    auto [m_next, cache] = region_forward(model, k, m, x_embed);
    caches[static_cast<size_t>(k)] = std::move(cache);
    span.end_ms = ms();
    if (pool) {
      // launch the Jacobian build for region k while the forward continues
      pending.push_back(pool->submit([&, k, ms] {
        auto& jspan = jac_spans[static_cast<size_t>(k)];
        jspan.region = k;
        jspan.start_ms = ms();
        js[static_cast<size_t>(k)] =
            materialize_jacobian(model, caches[static_cast<size_t>(k)], plan, log);
        jspan.end_ms = ms();
      }));
    }
    m = std::move(m_next);
  }

  // loss head on its own graph; boundary value and canvas enter as leaves
  Tape ht;
  NodeId mi = ht.input(m);
  NodeId xe = ht.input(*x_embed);
  NodeId logits = build_head(ht, model, mi, xe);
  auto tg = std::make_shared<const std::vector<int32_t>>(targets);
  NodeId loss = ht.cross_entropy(logits, tg);
  const double forward_end = ms();

  HeadAdjoints head = head_sweep(ht, loss, mi, xe);

  if (pool) {
    for (auto& f : pending) f.get();
    pool.reset();
  } else {
    // single worker: materialize at the sync point in region order, which is
    // the three-phase ordering
    for (int64_t k = 0; k < K; ++k) {
      auto& jspan = jac_spans[static_cast<size_t>(k)];
      jspan.region = k;
      jspan.start_ms = ms();
      js[static_cast<size_t>(k)] =
          materialize_jacobian(model, caches[static_cast<size_t>(k)], plan, log);
      jspan.end_ms = ms();
    }
  }

  if (report) {
    report->forward = std::move(fwd_spans);
    report->jacobian = std::move(jac_spans);
    report->forward_end_ms = forward_end;
  }
  if (loss_out) *loss_out = head.loss;

  auto ex = make_executor(static_cast<int>(plan.workers));
  return assemble(model, caches, std::move(head), tokens, B, plan, std::move(js),
                  *ex, log);
}

std::map<std::string, Tensor> oracle_gradients(const ForwardOutputs& fwd) {
  if (!fwd.has_loss) throw ArgumentError("oracle backward needs a recorded loss");
  Gradients g = backward(fwd.tape, fwd.loss_id,
                         Tensor::full({1}, 1.0, fwd.tape.val(fwd.loss_id).dtype));
  return std::move(g.by_name);
}

ParityResult parity_suite(const ModelConfig& cfg, Dtype dtype, int64_t n_inits,
                          int64_t n_batches, int64_t B, const BackwardPlan& plan,
                          const std::string& csv_path) {
  cfg.validate();
  if (n_inits < 1 || n_batches < 1 || B < 1)
    throw ArgumentError("parity suite needs positive trial counts");
  ParityResult res;
  int64_t trial = 0;
  for (int64_t i = 0; i < n_inits; ++i) {
    Model model = init_model(cfg, dtype, cfg.seed + 1000 + static_cast<uint64_t>(i));
    for (int64_t j = 0; j < n_batches; ++j) {
      RngState rng{cfg.seed + 777,
                   static_cast<uint64_t>(i * n_batches + j) << 32};
      std::vector<int32_t> tokens(static_cast<size_t>(B * cfg.L));
      std::vector<int32_t> targets(tokens.size());
      for (auto& v : tokens)
        v = static_cast<int32_t>(rng.next_below(cfg.vocab_size));
      for (auto& v : targets)
        v = static_cast<int32_t>(rng.next_below(cfg.vocab_size));
      ForwardOutputs fwd = model_forward(model, tokens, B, &targets);
      auto oracle = oracle_gradients(fwd);
      auto lbi = lbi_backward(model, fwd, plan);
      GradientReport rep = compare_gradients(lbi.parameter_gradients, oracle);
      res.rows.push_back(ParityRow{trial, cfg.backend, rep.max_abs_error,
                                   rep.rel_l2_error, rep.cosine_similarity});
      res.worst_max_abs = std::max(res.worst_max_abs, rep.max_abs_error);
      res.worst_rel_l2 = std::max(res.worst_rel_l2, rep.rel_l2_error);
      res.worst_cosine = std::min(res.worst_cosine, rep.cosine_similarity);
      ++trial;
    }
  }
  if (!csv_path.empty()) {
    std::ofstream os(csv_path, std::ios::trunc);
    if (!os) throw DataError("cannot open parity report: " + csv_path);
    os << "trial,backend,max_abs,rel_l2,cosine\n";
    char buf[128];
    for (const auto& row : res.rows) {
      std::snprintf(buf, sizeof(buf), "%lld,%s,%.17g,%.17g,%.17g",
                    static_cast<long long>(row.trial), row.backend.c_str(),
                    row.max_abs, row.rel_l2, row.cosine);
      os << buf << "\n";
    }
    if (!os) throw DataError("parity report write failed: " + csv_path);
  }
  return res;
}

}  // namespace lbi
