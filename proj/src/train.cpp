#include "lbi/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "lbi/diagnostics.hpp"
#include "lbi/errors.hpp"
#include "lbi/executor.hpp"

namespace lbi::train {

namespace {

using nlohmann::json;

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// first batch element of each region's [B, r, r] Jacobian
std::vector<Tensor> first_element_jacobians(
    const std::vector<InterfaceJacobian>& js) {
  std::vector<Tensor> out;
  out.reserve(js.size());
  for (const InterfaceJacobian& ij : js) {
    const int64_t r = ij.J.shape[1];
    Tensor m = Tensor::zeros({r, r}, ij.J.dtype);
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < r; ++j) m(i, j) = ij.J(0, i, j);
    out.push_back(std::move(m));
  }
  return out;
}

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

void adam_step(Model& model, const std::map<std::string, Tensor>& grads,
               AdamState& st, const TrainConfig& cfg, double lr, int64_t t) {
  double sq = 0.0;
  for (const auto& [name, p] : model.params) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    for (double g : it->second.data) sq += g * g;
    (void)p;
  }
  const double gnorm = std::sqrt(sq);
  const double clip_scale =
      (cfg.grad_clip > 0.0 && gnorm > cfg.grad_clip) ? cfg.grad_clip / gnorm
                                                     : 1.0;
  const double warm =
      cfg.warmup_steps > 0
          ? std::min(1.0, static_cast<double>(t) /
                              static_cast<double>(cfg.warmup_steps))
          : 1.0;
  const double lr_t = lr * warm;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));

  for (auto& [name, p] : model.params) {
    auto it = grads.find(name);
    Tensor& m = st.m.at(name);
    Tensor& v = st.v.at(name);
    const size_t n = p.data.size();
    for (size_t i = 0; i < n; ++i) {
      const double g =
          (it == grads.end() ? 0.0 : it->second.data[i]) * clip_scale;
      m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g;
      v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= lr_t * (mhat / (std::sqrt(vhat) + cfg.adam_eps) +
                           cfg.weight_decay * p.data[i]);
    }
    apply_dtype(p);
  }
}

double eval_ce(const Model& model, const std::vector<int32_t>& val,
               int64_t batch_size, int64_t eval_tokens) {
  const int64_t L = model.cfg.L;
  const int64_t n = static_cast<int64_t>(val.size());
  const int64_t max_w = n > L ? (n - 1) / L : 0;
  const int64_t want =
      std::min(max_w, std::max<int64_t>(1, (eval_tokens + L - 1) / L));
  if (max_w == 0) return std::numeric_limits<double>::quiet_NaN();

  double sum = 0.0;
  int64_t done = 0;
  while (done < want) {
    const int64_t b = std::min(batch_size, want - done);
    std::vector<int32_t> toks(static_cast<size_t>(b * L));
    std::vector<int32_t> tgts(static_cast<size_t>(b * L));
    for (int64_t w = 0; w < b; ++w) {
      const int64_t base = (done + w) * L;
      for (int64_t i = 0; i < L; ++i) {
        toks[static_cast<size_t>(w * L + i)] = val[static_cast<size_t>(base + i)];
        tgts[static_cast<size_t>(w * L + i)] =
            val[static_cast<size_t>(base + i + 1)];
      }
    }
    ForwardOutputs fwd = model_forward(model, toks, b, &tgts);
    sum += fwd.loss * static_cast<double>(b);
    done += b;
  }
  return sum / static_cast<double>(want);
}

// One full run at a fixed learning rate. Returns early with the diverged
// flag set when a non-finite loss or gradient shows up.
RunMetrics run_once(const TrainConfig& cfg, uint64_t seed, double lr,
                    const std::vector<int32_t>& train_tokens,
                    const std::vector<int32_t>& val_tokens, bool dense,
                    Model* out_model,
                    std::vector<diag::SpectraRecord>* spectra) {
  RunMetrics met;
  met.seed = seed;
  met.final_val_ce = std::numeric_limits<double>::quiet_NaN();
  const double t0 = now_seconds();

  ModelConfig mc = cfg.model;
  mc.seed = seed;
  Model model = init_model(mc, cfg.parsed_dtype(), seed, dense);
  met.counts = count_params(model);

  AdamState st;
  for (const auto& [name, p] : model.params) {
    st.m.emplace(name, Tensor::zeros(p.shape, Dtype::F64));
    st.v.emplace(name, Tensor::zeros(p.shape, Dtype::F64));
  }

  const BackwardPlan plan = cfg.plan();
  const bool use_oracle = dense || cfg.backward == "oracle";
  const int64_t L = mc.L;
  if (static_cast<int64_t>(train_tokens.size()) < L + 1)
    throw DataError("training stream shorter than one window");

  for (int64_t step = 0; step < cfg.steps; ++step) {
    RngState rng{seed + 0xB47C0ULL, static_cast<uint64_t>(step) << 32};
    auto [toks, tgts] = sample_batch(train_tokens, L, cfg.batch_size, rng);

    double loss = 0.0;
    std::map<std::string, Tensor> grads;
    std::vector<InterfaceJacobian> jacobians;
    const bool want_spectra = spectra != nullptr && !dense &&
                              cfg.spectra_every > 0 && step > 0 &&
                              step % cfg.spectra_every == 0;
    try {
      if (!use_oracle && cfg.schedule == Schedule::Streaming) {
        LbiGradients lg = streaming_backward(model, toks, cfg.batch_size,
                                             tgts, plan, nullptr, &loss);
        grads = std::move(lg.parameter_gradients);
        jacobians = std::move(lg.jacobians);
      } else {
        ForwardOutputs fwd =
            model_forward(model, toks, cfg.batch_size, &tgts);
        loss = fwd.loss;
        if (!std::isfinite(loss)) throw NumericError("non-finite loss");
        if (use_oracle) {
          grads = oracle_gradients(fwd);
          if (want_spectra) {
            auto ex = make_executor(1);
            jacobians = phase1_all(model, fwd.caches, plan, *ex);
          }
        } else {
          LbiGradients lg = lbi_backward(model, fwd, plan);
          grads = std::move(lg.parameter_gradients);
          jacobians = std::move(lg.jacobians);
        }
      }
    } catch (const NumericError&) {
      met.diverged = true;
      met.diverged_step = step;
      break;
    }

    met.train_ce.push_back(loss);
    met.steps_run = step + 1;
    if (want_spectra && !jacobians.empty())
      spectra->push_back(diag::compute_spectra(
          step, seed, first_element_jacobians(jacobians)));

    adam_step(model, grads, st, cfg, lr, step + 1);

    const bool last = step + 1 == cfg.steps;
    if ((cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) || last) {
      const double ce =
          eval_ce(model, val_tokens, cfg.batch_size, cfg.eval_tokens);
      if (std::isfinite(ce)) {
        met.val_ce.emplace_back(step + 1, ce);
        met.final_val_ce = ce;
      }
    }
  }

  if (!met.train_ce.empty()) {
    met.initial_train_ce = met.train_ce.front();
    met.final_train_ce = met.train_ce.back();
  }
  met.wall_seconds = now_seconds() - t0;
  if (out_model != nullptr) *out_model = std::move(model);
  return met;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<RunMetrics>& runs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open metrics file: " + path);
  out << "step,split,ce,seed\n";
  for (const RunMetrics& met : runs) {
    for (size_t i = 0; i < met.train_ce.size(); ++i)
      out << i << ",train," << fmt17(met.train_ce[i]) << ',' << met.seed
          << '\n';
    for (const auto& [step, ce] : met.val_ce)
      out << step << ",val," << fmt17(ce) << ',' << met.seed << '\n';
  }
  if (!out) throw DataError("failed writing metrics file: " + path);
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (steps < 1) throw ConfigError("steps must be positive");
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("betas must lie in [0, 1)");
  if (adam_eps <= 0.0) throw ConfigError("adam_eps must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be nonnegative");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be nonnegative");
  if (eval_every < 0) throw ConfigError("eval_every must be nonnegative");
  if (eval_tokens < 1) throw ConfigError("eval_tokens must be positive");
  if (seeds.empty()) throw ConfigError("need at least one seed");
  if (backward != "lbi" && backward != "oracle")
    throw ConfigError("backward must be lbi or oracle");
  if (chunk < 0) throw ConfigError("chunk must be nonnegative");
  if (workers < 1) throw ConfigError("workers must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (spectra_every < 0) throw ConfigError("spectra_every must be nonnegative");
  if (dtype != "f64" && dtype != "f32")
    throw ConfigError("dtype must be f64 or f32");
}

BackwardPlan TrainConfig::plan() const {
  BackwardPlan p;
  p.chunk = chunk;
  p.workers = workers;
  p.schedule = schedule;
  return p;
}

Dtype TrainConfig::parsed_dtype() const {
  return dtype == "f32" ? Dtype::F32 : Dtype::F64;
}

TrainConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
  TrainConfig cfg;
  try {
    if (j.contains("model")) {
      // partial model blocks are filled from the defaults
      json base = json::parse(config_json_text(ModelConfig{}));
      base.update(j.at("model"));
      cfg.model = config_from_json_text(base.dump());
    }
    cfg.steps = j.value("steps", cfg.steps);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.grad_clip = j.value("grad_clip", cfg.grad_clip);
    cfg.warmup_steps = j.value("warmup_steps", cfg.warmup_steps);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    cfg.eval_tokens = j.value("eval_tokens", cfg.eval_tokens);
    cfg.seeds = j.value("seeds", cfg.seeds);
    cfg.backward = j.value("backward", cfg.backward);
    if (j.contains("schedule"))
      cfg.schedule = parse_schedule(j.at("schedule").get<std::string>());
    cfg.chunk = j.value("chunk", cfg.chunk);
    cfg.workers = j.value("workers", cfg.workers);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.data = j.value("data", cfg.data);
    cfg.spectra_every = j.value("spectra_every", cfg.spectra_every);
    cfg.dtype = j.value("dtype", cfg.dtype);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

TrainConfig config_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::pair<std::vector<int32_t>, std::vector<int32_t>> ingest_text(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus: " + path);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  if (raw.empty()) throw DataError("corpus is empty: " + path);

  const int64_t n = static_cast<int64_t>(raw.size());
  const int64_t val_n = n / 20;
  const int64_t train_n = n - val_n;
  std::vector<int32_t> train_tokens(static_cast<size_t>(train_n));
  std::vector<int32_t> val_tokens(static_cast<size_t>(val_n));
  for (int64_t i = 0; i < train_n; ++i)
    train_tokens[static_cast<size_t>(i)] =
        static_cast<int32_t>(static_cast<unsigned char>(raw[static_cast<size_t>(i)]));
  for (int64_t i = 0; i < val_n; ++i)
    val_tokens[static_cast<size_t>(i)] = static_cast<int32_t>(
        static_cast<unsigned char>(raw[static_cast<size_t>(train_n + i)]));
  return {std::move(train_tokens), std::move(val_tokens)};
}

std::pair<std::vector<int32_t>, std::vector<int32_t>> sample_batch(
    const std::vector<int32_t>& stream, int64_t L, int64_t B, RngState& rng) {
  const int64_t n = static_cast<int64_t>(stream.size());
  if (n < L + 1) throw DataError("stream shorter than one window");
  std::vector<int32_t> toks(static_cast<size_t>(B * L));
  std::vector<int32_t> tgts(static_cast<size_t>(B * L));
  for (int64_t b = 0; b < B; ++b) {
    const int64_t start = rng.next_below(n - L);
    for (int64_t i = 0; i < L; ++i) {
      toks[static_cast<size_t>(b * L + i)] =
          stream[static_cast<size_t>(start + i)];
      tgts[static_cast<size_t>(b * L + i)] =
          stream[static_cast<size_t>(start + i + 1)];
    }
  }
  return {std::move(toks), std::move(tgts)};
}

RunMetrics train_single(const TrainConfig& cfg, uint64_t seed,
                        const std::vector<int32_t>& train_tokens,
                        const std::vector<int32_t>& val_tokens,
                        Model* out_model, bool dense) {
  cfg.validate();
  std::vector<diag::SpectraRecord> spectra;
  RunMetrics met = run_once(cfg, seed, cfg.lr, train_tokens, val_tokens, dense,
                            out_model, &spectra);
  if (met.diverged) {
    const int64_t first_failure = met.diverged_step;
    std::vector<diag::SpectraRecord> retry_spectra;
    met = run_once(cfg, seed, cfg.lr * 0.5, train_tokens, val_tokens, dense,
                   out_model, &retry_spectra);
    met.retried = true;
    if (met.diverged_step < 0) met.diverged_step = first_failure;
  }
  return met;
}

std::vector<RunMetrics> train(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.data.empty()) throw ConfigError("train needs a data path");
  auto [train_tokens, val_tokens] = ingest_text(cfg.data);

  const bool emit = !cfg.out_dir.empty();
  if (emit) std::filesystem::create_directories(cfg.out_dir);

  std::vector<RunMetrics> runs;
  std::vector<diag::SpectraRecord> spectra;
  for (uint64_t seed : cfg.seeds) {
    Model model;
    std::vector<diag::SpectraRecord> seed_spectra;
    RunMetrics met = run_once(cfg, seed, cfg.lr, train_tokens, val_tokens,
                              false, &model, &seed_spectra);
    if (met.diverged) {
      const int64_t first_failure = met.diverged_step;
      seed_spectra.clear();
      met = run_once(cfg, seed, cfg.lr * 0.5, train_tokens, val_tokens, false,
                     &model, &seed_spectra);
      met.retried = true;
      if (met.diverged_step < 0) met.diverged_step = first_failure;
    }
    spectra.insert(spectra.end(), seed_spectra.begin(), seed_spectra.end());
    if (emit && !met.diverged)
      save_checkpoint(cfg.out_dir + "/model_seed" + std::to_string(seed) +
                          ".ckpt",
                      model);
    runs.push_back(std::move(met));
  }

  if (emit) {
    write_metrics_csv(cfg.out_dir + "/metrics.csv", runs);
    if (!spectra.empty())
      diag::emit_spectra(cfg.out_dir + "/spectra.csv", spectra);
  }
  return runs;
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "rank") return SweepAxis::Rank;
  if (name == "region-size" || name == "region_size")
    return SweepAxis::RegionSize;
  if (name == "backend") return SweepAxis::Backend;
  throw ArgumentError("unknown sweep axis: " + name);
}

std::vector<SweepRow> sweep(SweepAxis axis, const TrainConfig& base,
                            const std::string& csv_path) {
  base.validate();
  if (base.data.empty()) throw ConfigError("sweep needs a data path");
  auto [train_tokens, val_tokens] = ingest_text(base.data);

  std::vector<std::pair<std::string, ModelConfig>> points;
  if (axis == SweepAxis::Rank) {
    for (int64_t r : {16, 32, 64}) {
      ModelConfig mc = base.model;
      mc.r = r;
      points.emplace_back("r=" + std::to_string(r), mc);
    }
  } else if (axis == SweepAxis::RegionSize) {
    if (base.model.final_region_layers != 0)
      throw ConfigError("region-size sweep needs a uniform base depth");
    const int64_t total = base.model.K * base.model.layers_per_region;
    for (int64_t s : {1, 2, 3, 4}) {
      ModelConfig mc = base.model;
      mc.layers_per_region = s;
      mc.K = (total + s - 1) / s;
      const int64_t rem = total - s * (mc.K - 1);
      mc.final_region_layers = rem == s ? 0 : rem;
      if (!mc.schedule.empty()) mc.schedule.clear();
      points.emplace_back("s=" + std::to_string(s), mc);
    }
  } else {
    for (const char* b : {"mlp", "attention", "diag_ssm", "hybrid"}) {
      ModelConfig mc = base.model;
      mc.backend = b;
      mc.schedule.clear();
      points.emplace_back(std::string("backend=") + b, mc);
    }
  }

  std::vector<SweepRow> rows;
  for (const auto& [label, mc] : points) {
    TrainConfig cfg = base;
    cfg.model = mc;
    for (uint64_t seed : cfg.seeds) {
      SweepRow row;
      row.label = label;
      row.cfg = mc;
      row.metrics = train_single(cfg, seed, train_tokens, val_tokens);
      row.counts = row.metrics.counts;
      rows.push_back(std::move(row));
    }
  }

  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw DataError("cannot open sweep file: " + csv_path);
    out << "label,backend,r,K,layers_per_region,final_region_layers,seed,"
           "backend_params,interface_params,embed_head_params,total_params,"
           "final_train_ce,final_val_ce\n";
    for (const SweepRow& row : rows) {
      out << row.label << ',' << row.cfg.backend << ',' << row.cfg.r << ','
          << row.cfg.K << ',' << row.cfg.layers_per_region << ','
          << row.cfg.final_region_layers << ',' << row.metrics.seed << ','
          << row.counts.backend_n << ',' << row.counts.interface_n << ','
          << row.counts.embed_head_n << ',' << row.counts.total << ','
          << fmt17(row.metrics.final_train_ce) << ','
          << fmt17(row.metrics.final_val_ce) << '\n';
    }
    if (!out) throw DataError("failed writing sweep file: " + csv_path);
  }
  return rows;
}

std::vector<DenseComparison> compare_dense(const TrainConfig& cfg,
                                           const std::string& csv_path) {
  cfg.validate();
  if (cfg.data.empty()) throw ConfigError("compare-dense needs a data path");
  auto [train_tokens, val_tokens] = ingest_text(cfg.data);

  std::vector<DenseComparison> out;
  for (uint64_t seed : cfg.seeds) {
    DenseComparison cmp;
    cmp.seed = seed;
    cmp.bounded = train_single(cfg, seed, train_tokens, val_tokens);
    cmp.dense =
        train_single(cfg, seed, train_tokens, val_tokens, nullptr, true);
    const double a = std::isfinite(cmp.bounded.final_val_ce)
                         ? cmp.bounded.final_val_ce
                         : cmp.bounded.final_train_ce;
    const double b = std::isfinite(cmp.dense.final_val_ce)
                         ? cmp.dense.final_val_ce
                         : cmp.dense.final_train_ce;
    cmp.gap = a - b;
    out.push_back(std::move(cmp));
  }

  if (!csv_path.empty()) {
    std::ofstream f(csv_path, std::ios::trunc);
    if (!f) throw DataError("cannot open comparison file: " + csv_path);
    f << "seed,bounded_ce,dense_ce,gap,bounded_params,dense_params\n";
    for (const DenseComparison& cmp : out) {
      const double a = std::isfinite(cmp.bounded.final_val_ce)
                           ? cmp.bounded.final_val_ce
                           : cmp.bounded.final_train_ce;
      const double b = std::isfinite(cmp.dense.final_val_ce)
                           ? cmp.dense.final_val_ce
                           : cmp.dense.final_train_ce;
      f << cmp.seed << ',' << fmt17(a) << ',' << fmt17(b) << ','
        << fmt17(cmp.gap) << ',' << cmp.bounded.counts.total << ','
        << cmp.dense.counts.total << '\n';
    }
    if (!f) throw DataError("failed writing comparison file: " + csv_path);
  }
  return out;
}

}  // namespace lbi::train
