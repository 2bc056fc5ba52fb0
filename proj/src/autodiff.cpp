#include "lbi/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "lbi/errors.hpp"

namespace lbi {

namespace {

Tensor grad_like(const Tensor& v) { return Tensor::zeros(v.shape, v.dtype); }

// Evaluates a node from its operand values. The same routine backs recording
// and replay, so a replayed tape runs exactly the forward code that built it.
void eval_node(Node& n, const Tensor* a, const Tensor* b) {
  switch (n.op) {
    case Op::Input:
      return;
    case Op::MatMul:
      n.value = matmul(*a, *b);
      return;
    case Op::Bmm:
      n.value = bmm(*a, *b, n.scalar_flag != 0);
      return;
    case Op::Add:
      n.value = add(*a, *b);
      return;
    case Op::Mul:
      n.value = mul(*a, *b);
      return;
    case Op::Scale:
      n.value = scale(*a, n.scalar);
      return;
    case Op::SiLU:
      n.value = silu(*a);
      return;
    case Op::GeLU:
      n.value = gelu(*a);
      return;
    case Op::Sigmoid:
      n.value = sigmoid(*a);
      return;
    case Op::LayerNorm:
      n.value = layer_norm(*a, n.scalar);
      return;
    case Op::MeanPool:
      n.value = mean_pool(*a);
      return;
    case Op::SoftmaxCausal:
      n.value = causal_softmax(*a);
      return;
    case Op::SplitHeads:
      n.value = split_heads(*a, n.heads);
      return;
    case Op::MergeHeads:
      n.value = merge_heads(*a, n.heads);
      return;
    case Op::AddRowVec:
      n.value = add_rowvec(*a, *b);
      return;
    case Op::AddSeqBroadcast:
      n.value = add_seq_broadcast(*a, *b);
      return;
    case Op::ChanStateMul:
      n.value = chan_state_mul(*a, *b);
      return;
    case Op::ChanStateContract:
      n.value = chan_state_contract(*a, *b);
      return;
    case Op::LinearRecurrence:
      n.value = linear_recurrence(*a, *b);
      return;
    case Op::Embed:
      n.value = embed_rows(*a, *n.ids, n.heads, n.scalar_flag);
      return;
    case Op::CrossEntropy: {
      const Tensor& logits = *a;
      const int64_t B = logits.shape[0], L = logits.shape[1], V = logits.shape[2];
      const auto& tg = *n.ids;
      Tensor probs(logits.shape, logits.dtype);
      double loss = 0.0;
      for (int64_t i = 0; i < B * L; ++i) {
        const double* z = logits.data.data() + i * V;
        double* p = probs.data.data() + i * V;
        double mx = z[0];
        for (int64_t v = 1; v < V; ++v) mx = z[v] > mx ? z[v] : mx;
        double sum = 0.0;
        for (int64_t v = 0; v < V; ++v) {
          p[v] = std::exp(z[v] - mx);
          sum += p[v];
        }
        for (int64_t v = 0; v < V; ++v) p[v] /= sum;
        const int32_t t = tg[static_cast<size_t>(i)];
        if (t < 0 || t >= V) throw ArgumentError("target id outside vocabulary");
        loss -= z[t] - mx - std::log(sum);
      }
      loss /= static_cast<double>(B * L);
      apply_dtype(probs);
      n.saved = std::move(probs);
      n.value = Tensor::from({1}, {loss}, logits.dtype);
      return;
    }
    case Op::Sum:
      n.value = sum_all(*a);
      return;
  }
  throw ArgumentError("unknown op");
}

}  // namespace

NodeId Tape::check(NodeId id) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
    throw ArgumentError("node id outside tape");
  return id;
}

NodeId Tape::push(Node n) {
  const Tensor* a = n.a >= 0 ? &nodes_[static_cast<size_t>(n.a)].value : nullptr;
  const Tensor* b = n.b >= 0 ? &nodes_[static_cast<size_t>(n.b)].value : nullptr;
  eval_node(n, a, b);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::input(Tensor value, std::string param_name) {
  Node n;
  n.op = Op::Input;
  n.value = std::move(value);
  n.name = std::move(param_name);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

namespace {

Node make_node(Op op, NodeId a, NodeId b = -1) {
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  return n;
}

}  // namespace

NodeId Tape::matmul(NodeId a, NodeId b) {
  return push(make_node(Op::MatMul, check(a), check(b)));
}
NodeId Tape::bmm(NodeId a, NodeId b, bool transpose_b) {
  Node n = make_node(Op::Bmm, check(a), check(b));
  n.scalar_flag = transpose_b ? 1 : 0;
  return push(std::move(n));
}
NodeId Tape::add(NodeId a, NodeId b) {
  return push(make_node(Op::Add, check(a), check(b)));
}
NodeId Tape::mul(NodeId a, NodeId b) {
  return push(make_node(Op::Mul, check(a), check(b)));
}
NodeId Tape::scale(NodeId a, double c) {
  Node n = make_node(Op::Scale, check(a));
  n.scalar = c;
  return push(std::move(n));
}
NodeId Tape::silu(NodeId a) { return push(make_node(Op::SiLU, check(a))); }
NodeId Tape::gelu(NodeId a) { return push(make_node(Op::GeLU, check(a))); }
NodeId Tape::sigmoid(NodeId a) { return push(make_node(Op::Sigmoid, check(a))); }
NodeId Tape::layer_norm(NodeId a, double eps) {
  Node n = make_node(Op::LayerNorm, check(a));
  n.scalar = eps;
  return push(std::move(n));
}
NodeId Tape::mean_pool(NodeId a) { return push(make_node(Op::MeanPool, check(a))); }
NodeId Tape::causal_softmax(NodeId a) {
  return push(make_node(Op::SoftmaxCausal, check(a)));
}
NodeId Tape::split_heads(NodeId a, int64_t H) {
  Node n = make_node(Op::SplitHeads, check(a));
  n.heads = H;
  return push(std::move(n));
}
NodeId Tape::merge_heads(NodeId a, int64_t H) {
  Node n = make_node(Op::MergeHeads, check(a));
  n.heads = H;
  return push(std::move(n));
}
NodeId Tape::add_rowvec(NodeId a, NodeId v) {
  return push(make_node(Op::AddRowVec, check(a), check(v)));
}
NodeId Tape::add_seq_broadcast(NodeId a, NodeId v) {
  return push(make_node(Op::AddSeqBroadcast, check(a), check(v)));
}
NodeId Tape::chan_state_mul(NodeId a, NodeId w) {
  return push(make_node(Op::ChanStateMul, check(a), check(w)));
}
NodeId Tape::chan_state_contract(NodeId h, NodeId w) {
  return push(make_node(Op::ChanStateContract, check(h), check(w)));
}
NodeId Tape::linear_recurrence(NodeId s, NodeId u) {
  return push(make_node(Op::LinearRecurrence, check(s), check(u)));
}
NodeId Tape::embed(NodeId table, std::shared_ptr<const std::vector<int32_t>> ids,
                   int64_t B, int64_t L) {
  if (!ids) throw ArgumentError("embed needs token ids");
  Node n = make_node(Op::Embed, check(table));
  n.heads = B;
  n.scalar_flag = L;
  n.ids = std::move(ids);
  return push(std::move(n));
}
NodeId Tape::cross_entropy(NodeId logits,
                           std::shared_ptr<const std::vector<int32_t>> targets) {
  if (!targets) throw ArgumentError("cross_entropy needs targets");
  const Tensor& lv = val(logits);
  if (lv.rank() != 3) throw DimensionError("cross_entropy expects [B, L, V] logits");
  if (static_cast<int64_t>(targets->size()) != lv.shape[0] * lv.shape[1])
    throw DimensionError("target count does not match logits shape");
  Node n = make_node(Op::CrossEntropy, check(logits));
  n.ids = std::move(targets);
  return push(std::move(n));
}
NodeId Tape::sum(NodeId a) { return push(make_node(Op::Sum, check(a))); }

const Tensor& Tape::val(NodeId id) const { return nodes_[static_cast<size_t>(check(id))].value; }
const Node& Tape::node(NodeId id) const { return nodes_[static_cast<size_t>(check(id))]; }

std::vector<Tensor> Tape::replay() const {
  std::vector<Tensor> vals(nodes_.size());
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::Input) {
      vals[i] = nodes_[i].value;
      continue;
    }
    Node tmp = nodes_[i];
    const Tensor* a = tmp.a >= 0 ? &vals[static_cast<size_t>(tmp.a)] : nullptr;
    const Tensor* b = tmp.b >= 0 ? &vals[static_cast<size_t>(tmp.b)] : nullptr;
    eval_node(tmp, a, b);
    vals[i] = std::move(tmp.value);
  }
  std::vector<Tensor> out;
  out.reserve(outputs_.size());
  for (NodeId id : outputs_) out.push_back(vals[static_cast<size_t>(id)]);
  return out;
}

// --- backward ------------------------------------------------------------

namespace {

// Sums g into a single-element tensor, ascending index order.
Tensor reduce_to_scalar(const Tensor& g, const Tensor& like) {
  double acc = 0.0;
  for (int64_t i = 0; i < g.numel(); ++i) acc += g.data[i];
  Tensor out = Tensor::zeros(like.shape, like.dtype);
  out.data[0] = acc;
  apply_dtype(out);
  return out;
}

Tensor mul_grad_for(const Tensor& g, const Tensor& self, const Tensor& other) {
  if (self.numel() == 1 && g.numel() != 1) {
    double acc = 0.0;
    for (int64_t i = 0; i < g.numel(); ++i) acc += g.data[i] * other.data[i];
    Tensor out = Tensor::zeros(self.shape, self.dtype);
    out.data[0] = acc;
    apply_dtype(out);
    return out;
  }
  if (other.numel() == 1 && g.numel() != 1) {
    Tensor out(g.shape, self.dtype);
    for (int64_t i = 0; i < g.numel(); ++i) out.data[i] = g.data[i] * other.data[0];
    apply_dtype(out);
    return out;
  }
  return mul(g, other);
}

}  // namespace

Gradients backward(const Tape& tape, NodeId root, const Tensor& seed,
                   const BackwardOptions& opts) {
  const size_t n = tape.size();
  if (root < 0 || static_cast<size_t>(root) >= n)
    throw ArgumentError("backward root outside tape");
  if (seed.shape != tape.val(root).shape)
    throw DimensionError("seed shape " + seed.shape_str() + " does not match root " +
                         tape.val(root).shape_str());

  // Relevance: nodes from which a wanted node is reachable along input edges.
  std::vector<char> relevant(n, 1);
  if (!opts.wanted.empty()) {
    std::fill(relevant.begin(), relevant.end(), 0);
    for (NodeId w : opts.wanted) relevant[static_cast<size_t>(w)] = 1;
    for (size_t i = 0; i < n; ++i) {
      if (relevant[i]) continue;
      const Node& nd = tape.node(static_cast<NodeId>(i));
      if ((nd.a >= 0 && relevant[static_cast<size_t>(nd.a)]) ||
          (nd.b >= 0 && relevant[static_cast<size_t>(nd.b)]))
        relevant[i] = 1;
    }
  }
  std::vector<char> stopped(n, 0);
  for (NodeId s : opts.stop) stopped[static_cast<size_t>(s)] = 1;

  std::vector<Tensor> adj(n);
  std::vector<char> has(n, 0);
  auto accum = [&](NodeId j, Tensor&& c) {
    const size_t k = static_cast<size_t>(j);
    if (!relevant[k]) return;
    if (!has[k]) {
      adj[k] = std::move(c);
      has[k] = 1;
    } else {
      adj[k] = add(adj[k], c);
    }
  };

  if (relevant[static_cast<size_t>(root)]) {
    Tensor s = seed;
    accum(root, std::move(s));
  }

  for (NodeId i = root; i >= 0; --i) {
    const size_t k = static_cast<size_t>(i);
    if (!has[k]) continue;
    const Node& nd = tape.node(i);
    if (nd.op == Op::Input || stopped[k]) continue;
    const Tensor& g = adj[k];
    const Tensor* av = nd.a >= 0 ? &tape.val(nd.a) : nullptr;
    const Tensor* bv = nd.b >= 0 ? &tape.val(nd.b) : nullptr;

    switch (nd.op) {
      case Op::Input:
        break;
      case Op::MatMul:
        accum(nd.a, matmul_nt(g, *bv));
        accum(nd.b, matmul_tn(*av, g));
        break;
      case Op::Bmm:
        if (nd.scalar_flag == 0) {
          accum(nd.a, bmm(g, *bv, true));
          accum(nd.b, bmm_tn(*av, g));
        } else {
          accum(nd.a, bmm(g, *bv, false));
          accum(nd.b, bmm_tn(g, *av));
        }
        break;
      case Op::Add: {
        if (av->numel() == 1 && g.numel() != 1)
          accum(nd.a, reduce_to_scalar(g, *av));
        else
          accum(nd.a, Tensor(g));
        if (bv->numel() == 1 && g.numel() != 1)
          accum(nd.b, reduce_to_scalar(g, *bv));
        else
          accum(nd.b, Tensor(g));
        break;
      }
      case Op::Mul:
        accum(nd.a, mul_grad_for(g, *av, *bv));
        accum(nd.b, mul_grad_for(g, *bv, *av));
        break;
      case Op::Scale:
        accum(nd.a, scale(g, nd.scalar));
        break;
      case Op::SiLU: {
        Tensor d(av->shape, av->dtype);
        for (int64_t t = 0; t < av->numel(); ++t) {
          const double x = av->data[t];
          const double s = 1.0 / (1.0 + std::exp(-x));
          d.data[t] = g.data[t] * s * (1.0 + x * (1.0 - s));
        }
        apply_dtype(d);
        accum(nd.a, std::move(d));
        break;
      }
      case Op::GeLU: {
        Tensor d(av->shape, av->dtype);
        for (int64_t t = 0; t < av->numel(); ++t) {
          const double x = av->data[t];
          const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
          const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
          d.data[t] = g.data[t] * (cdf + x * pdf);
        }
        apply_dtype(d);
        accum(nd.a, std::move(d));
        break;
      }
      case Op::Sigmoid: {
        Tensor d(av->shape, av->dtype);
        for (int64_t t = 0; t < av->numel(); ++t) {
          const double y = nd.value.data[t];
          d.data[t] = g.data[t] * y * (1.0 - y);
        }
        apply_dtype(d);
        accum(nd.a, std::move(d));
        break;
      }
      case Op::LayerNorm: {
        const int64_t d = av->shape.back();
        const int64_t rows = av->numel() / d;
        const double eps = nd.scalar;
        Tensor out(av->shape, av->dtype);
        for (int64_t rrow = 0; rrow < rows; ++rrow) {
          const double* x = av->data.data() + rrow * d;
          const double* gr = g.data.data() + rrow * d;
          double* orow = out.data.data() + rrow * d;
          double mean = 0.0;
          for (int64_t j = 0; j < d; ++j) mean += x[j];
          mean /= static_cast<double>(d);
          double var = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            const double c = x[j] - mean;
            var += c * c;
          }
          var /= static_cast<double>(d);
          const double inv = 1.0 / std::sqrt(var + eps);
          double m1 = 0.0, m2 = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            const double y = (x[j] - mean) * inv;
            m1 += gr[j];
            m2 += gr[j] * y;
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (int64_t j = 0; j < d; ++j) {
            const double y = (x[j] - mean) * inv;
            orow[j] = inv * (gr[j] - m1 - y * m2);
          }
        }
        apply_dtype(out);
        accum(nd.a, std::move(out));
        break;
      }
      case Op::MeanPool: {
        const bool batched = av->rank() == 3;
        const int64_t B = batched ? av->shape[0] : 1;
        const int64_t L = batched ? av->shape[1] : av->shape[0];
        const int64_t D = av->shape.back();
        Tensor out(av->shape, av->dtype);
        for (int64_t b = 0; b < B; ++b) {
          const double* gr = g.data.data() + b * D;
          for (int64_t l = 0; l < L; ++l) {
            double* orow = out.data.data() + (b * L + l) * D;
            for (int64_t j = 0; j < D; ++j) orow[j] = gr[j] / static_cast<double>(L);
          }
        }
        apply_dtype(out);
        accum(nd.a, std::move(out));
        break;
      }
      case Op::SoftmaxCausal: {
        const int64_t G = av->shape[0], L = av->shape[1];
        const Tensor& p = nd.value;
        Tensor out(av->shape, av->dtype);
        for (int64_t gg = 0; gg < G; ++gg)
          for (int64_t i2 = 0; i2 < L; ++i2) {
            const double* pr = p.data.data() + (gg * L + i2) * L;
            const double* gr = g.data.data() + (gg * L + i2) * L;
            double* orow = out.data.data() + (gg * L + i2) * L;
            double s = 0.0;
            for (int64_t j = 0; j <= i2; ++j) s += gr[j] * pr[j];
            for (int64_t j = 0; j <= i2; ++j) orow[j] = pr[j] * (gr[j] - s);
          }
        apply_dtype(out);
        accum(nd.a, std::move(out));
        break;
      }
      case Op::SplitHeads:
        accum(nd.a, merge_heads(g, nd.heads));
        break;
      case Op::MergeHeads:
        accum(nd.a, split_heads(g, nd.heads));
        break;
      case Op::AddRowVec: {
        accum(nd.a, Tensor(g));
        const int64_t d = bv->shape[0];
        const int64_t rows = g.numel() / d;
        Tensor vb(bv->shape, bv->dtype);
        for (int64_t rrow = 0; rrow < rows; ++rrow) {
          const double* gr = g.data.data() + rrow * d;
          for (int64_t j = 0; j < d; ++j) vb.data[j] += gr[j];
        }
        apply_dtype(vb);
        accum(nd.b, std::move(vb));
        break;
      }
      case Op::AddSeqBroadcast: {
        accum(nd.a, Tensor(g));
        const int64_t B = av->shape[0], L = av->shape[1], D = av->shape[2];
        Tensor vb(bv->shape, bv->dtype);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t l = 0; l < L; ++l) {
            const double* gr = g.data.data() + (b * L + l) * D;
            double* vrow = vb.data.data() + b * D;
            for (int64_t j = 0; j < D; ++j) vrow[j] += gr[j];
          }
        apply_dtype(vb);
        accum(nd.b, std::move(vb));
        break;
      }
      case Op::ChanStateMul: {
        const int64_t BL = av->shape[0] * av->shape[1];
        const int64_t D = av->shape[2], N = bv->shape[1];
        Tensor ga(av->shape, av->dtype);
        Tensor gw(bv->shape, bv->dtype);
        for (int64_t bl = 0; bl < BL; ++bl)
          for (int64_t d = 0; d < D; ++d) {
            const double* gr = g.data.data() + (bl * D + d) * N;
            const double* wrow = bv->data.data() + d * N;
            double* gwrow = gw.data.data() + d * N;
            const double aval = av->data[bl * D + d];
            double acc = 0.0;
            for (int64_t t = 0; t < N; ++t) {
              acc += gr[t] * wrow[t];
              gwrow[t] += gr[t] * aval;
            }
            ga.data[bl * D + d] = acc;
          }
        apply_dtype(ga);
        apply_dtype(gw);
        accum(nd.a, std::move(ga));
        accum(nd.b, std::move(gw));
        break;
      }
      case Op::ChanStateContract: {
        const int64_t BL = av->shape[0] * av->shape[1];
        const int64_t D = av->shape[2], N = av->shape[3];
        Tensor gh(av->shape, av->dtype);
        Tensor gw(bv->shape, bv->dtype);
        for (int64_t bl = 0; bl < BL; ++bl)
          for (int64_t d = 0; d < D; ++d) {
            const double gval = g.data[bl * D + d];
            const double* hrow = av->data.data() + (bl * D + d) * N;
            const double* wrow = bv->data.data() + d * N;
            double* ghrow = gh.data.data() + (bl * D + d) * N;
            double* gwrow = gw.data.data() + d * N;
            for (int64_t t = 0; t < N; ++t) {
              ghrow[t] = gval * wrow[t];
              gwrow[t] += gval * hrow[t];
            }
          }
        apply_dtype(gh);
        apply_dtype(gw);
        accum(nd.a, std::move(gh));
        accum(nd.b, std::move(gw));
        break;
      }
      case Op::LinearRecurrence: {
        // h_t = s_t h_{t-1} + u_t. Running adjoint: e_t = g_t + s_{t+1} e_{t+1}.
        const Tensor& h = nd.value;
        const int64_t B = av->shape[0], L = av->shape[1];
        const int64_t lane = av->shape[2] * av->shape[3];
        Tensor gs(av->shape, av->dtype);
        Tensor gu(bv->shape, bv->dtype);
        std::vector<double> run(static_cast<size_t>(lane));
        for (int64_t b = 0; b < B; ++b) {
          const int64_t base = b * L * lane;
          for (int64_t j = 0; j < lane; ++j) run[static_cast<size_t>(j)] = 0.0;
          for (int64_t t = L - 1; t >= 0; --t) {
            const int64_t off = base + t * lane;
            for (int64_t j = 0; j < lane; ++j) {
              const double e = g.data[off + j] +
                               (t + 1 < L ? av->data[off + lane + j] *
                                                run[static_cast<size_t>(j)]
                                          : 0.0);
              gu.data[off + j] = e;
              gs.data[off + j] = t > 0 ? e * h.data[off - lane + j] : 0.0;
              run[static_cast<size_t>(j)] = e;
            }
          }
        }
        apply_dtype(gs);
        apply_dtype(gu);
        accum(nd.a, std::move(gs));
        accum(nd.b, std::move(gu));
        break;
      }
      case Op::Embed: {
        const int64_t V = av->shape[0], D = av->shape[1];
        const int64_t rows = nd.heads * nd.scalar_flag;
        Tensor gt({V, D}, av->dtype);
        for (int64_t i2 = 0; i2 < rows; ++i2) {
          const int64_t id = (*nd.ids)[static_cast<size_t>(i2)];
          const double* gr = g.data.data() + i2 * D;
          double* trow = gt.data.data() + id * D;
          for (int64_t j = 0; j < D; ++j) trow[j] += gr[j];
        }
        apply_dtype(gt);
        accum(nd.a, std::move(gt));
        break;
      }
      case Op::CrossEntropy: {
        const Tensor& p = nd.saved;
        const int64_t B = av->shape[0], L = av->shape[1], V = av->shape[2];
        const double w = g.data[0] / static_cast<double>(B * L);
        Tensor gl(av->shape, av->dtype);
        for (int64_t i2 = 0; i2 < B * L; ++i2) {
          const double* pr = p.data.data() + i2 * V;
          double* gr = gl.data.data() + i2 * V;
          const int32_t t = (*nd.ids)[static_cast<size_t>(i2)];
          for (int64_t v = 0; v < V; ++v) gr[v] = w * pr[v];
          gr[t] -= w;
        }
        apply_dtype(gl);
        accum(nd.a, std::move(gl));
        break;
      }
      case Op::Sum: {
        Tensor out(av->shape, av->dtype);
        for (int64_t t = 0; t < av->numel(); ++t) out.data[t] = g.data[0];
        apply_dtype(out);
        accum(nd.a, std::move(out));
        break;
      }
    }
  }

  Gradients out;
  // Adjoints of explicitly wanted interior nodes are part of the result, not
  // just leaf gradients (used e.g. to read the canvas adjoint off an
  // embedding-output node).
  for (NodeId w : opts.wanted) {
    const size_t k = static_cast<size_t>(w);
    if (has[k]) out.by_id.emplace(w, adj[k]);
  }
  for (size_t i = 0; i < n; ++i) {
    const Node& nd = tape.node(static_cast<NodeId>(i));
    if (nd.op != Op::Input) continue;
    if (has[i]) out.by_id.emplace(static_cast<NodeId>(i), adj[i]);
    if (opts.collect_named && !nd.name.empty())
      out.by_name[nd.name] = has[i] ? std::move(adj[i]) : grad_like(nd.value);
  }
  return out;
}

std::unordered_map<NodeId, Tensor> vjp(const Tape& tape, NodeId root,
                                       const Tensor& cotangent,
                                       const std::vector<NodeId>& wrt) {
  BackwardOptions opts;
  opts.wanted = wrt;
  opts.collect_named = false;
  Gradients g = backward(tape, root, cotangent, opts);
  std::unordered_map<NodeId, Tensor> out;
  for (NodeId id : wrt) {
    auto it = g.by_id.find(id);
    out.emplace(id, it != g.by_id.end() ? std::move(it->second)
                                        : Tensor::zeros(tape.val(id).shape,
                                                        tape.val(id).dtype));
  }
  return out;
}

Tensor finite_difference_jacobian(const std::function<Tensor(const Tensor&)>& f,
                                  const Tensor& x, double h) {
  if (h <= 0.0) throw ArgumentError("finite difference step must be positive");
  const int64_t in_n = x.numel();
  Tensor probe = f(x);
  const int64_t out_n = probe.numel();
  Tensor jac({out_n, in_n});
  for (int64_t j = 0; j < in_n; ++j) {
    Tensor xp = x;
    Tensor xm = x;
    xp.data[static_cast<size_t>(j)] += h;
    xm.data[static_cast<size_t>(j)] -= h;
    const Tensor fp = f(xp);
    const Tensor fm = f(xm);
    if (fp.numel() != out_n || fm.numel() != out_n)
      throw DimensionError("function output size changed under perturbation");
    for (int64_t i = 0; i < out_n; ++i)
      jac(i, j) = (fp.data[static_cast<size_t>(i)] - fm.data[static_cast<size_t>(i)]) /
                  (2.0 * h);
  }
  return jac;
}

GradientReport compare_gradients(const std::map<std::string, Tensor>& test,
                                 const std::map<std::string, Tensor>& reference) {
  if (test.size() != reference.size())
    throw ArgumentError("gradient maps have different parameter sets");
  GradientReport rep;
  double dot = 0.0, n2t = 0.0, n2r = 0.0, diff2 = 0.0;
  auto it = test.begin();
  auto ir = reference.begin();
  for (; it != test.end(); ++it, ++ir) {
    if (it->first != ir->first)
      throw ArgumentError("gradient maps disagree on parameter '" + it->first + "'");
    const Tensor& a = it->second;
    const Tensor& b = ir->second;
    if (a.shape != b.shape)
      throw DimensionError("gradient shapes differ for '" + it->first + "'");
    ParamDelta pd;
    double pdiff2 = 0.0, pref2 = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
      const double d = a.data[i] - b.data[i];
      const double ad = std::abs(d);
      pd.max_abs = ad > pd.max_abs ? ad : pd.max_abs;
      pdiff2 += d * d;
      pref2 += b.data[i] * b.data[i];
      dot += a.data[i] * b.data[i];
      n2t += a.data[i] * a.data[i];
      n2r += b.data[i] * b.data[i];
      diff2 += d * d;
    }
    pd.rel_l2 = pref2 > 0.0 ? std::sqrt(pdiff2 / pref2)
                            : (pdiff2 > 0.0 ? std::numeric_limits<double>::infinity()
                                            : 0.0);
    rep.max_abs_error = pd.max_abs > rep.max_abs_error ? pd.max_abs : rep.max_abs_error;
    rep.per_parameter.emplace(it->first, pd);
  }
  rep.rel_l2_error =
      n2r > 0.0 ? std::sqrt(diff2 / n2r)
                : (diff2 > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  if (n2t > 0.0 && n2r > 0.0) {
    double c = dot / (std::sqrt(n2t) * std::sqrt(n2r));
    rep.cosine_similarity = std::min(1.0, std::max(-1.0, c));
  } else {
    rep.cosine_similarity = (n2t == 0.0 && n2r == 0.0) ? 1.0 : 0.0;
  }
  return rep;
}

void write_gradient_report_csv(const GradientReport& report, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  std::fprintf(f, "param,max_abs,rel_l2\n");
  for (const auto& [name, pd] : report.per_parameter)
    std::fprintf(f, "%s,%.17g,%.17g\n", name.c_str(), pd.max_abs, pd.rel_l2);
  std::fprintf(f, "summary,%.17g,%.17g\n", report.max_abs_error, report.rel_l2_error);
  std::fclose(f);
}

Recording record(const Program& f, const std::vector<Tensor>& inputs) {
  Recording rec;
  rec.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) rec.inputs.push_back(rec.tape.input(t));
  rec.outputs = f(rec.tape, rec.inputs);
  for (NodeId id : rec.outputs) rec.tape.mark_output(id);
  return rec;
}

}  // namespace lbi
