#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "lbi/backward.hpp"
#include "lbi/costmodel.hpp"
#include "lbi/diagnostics.hpp"
#include "lbi/errors.hpp"
#include "lbi/executor.hpp"
#include "lbi/model.hpp"
#include "lbi/scan.hpp"
#include "lbi/train.hpp"

namespace {

using namespace lbi;

struct PlanFlags {
  int64_t chunk = 0;
  std::string schedule = "three-phase";
  int64_t workers = 1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--chunk", chunk,
                    "basis columns per Jacobian rebuild (0 = all)");
    cmd->add_option("--schedule", schedule, "three-phase | streaming");
    cmd->add_option("--workers", workers, "worker threads for phases 1 and 3");
  }

  void apply(train::TrainConfig& cfg) const {
    cfg.chunk = chunk;
    cfg.schedule = parse_schedule(schedule);
    cfg.workers = workers;
  }

  BackwardPlan plan() const {
    BackwardPlan p;
    p.chunk = chunk;
    p.schedule = parse_schedule(schedule);
    p.workers = workers;
    return p;
  }
};

void print_run(const train::RunMetrics& met) {
  std::printf("seed %" PRIu64 ": steps %" PRId64 ", train ce %.6f -> %.6f",
              met.seed, met.steps_run, met.initial_train_ce,
              met.final_train_ce);
  if (std::isfinite(met.final_val_ce))
    std::printf(", val ce %.6f", met.final_val_ce);
  if (met.diverged)
    std::printf(", DIVERGED at step %" PRId64, met.diverged_step);
  if (met.retried) std::printf(" (retried at half lr)");
  std::printf(", %.1fs\n", met.wall_seconds);
}

int cmd_train(const std::string& config_path, const PlanFlags& flags,
              const std::string& data_override,
              const std::string& out_override) {
  train::TrainConfig cfg = train::config_from_file(config_path);
  flags.apply(cfg);
  if (!data_override.empty()) cfg.data = data_override;
  if (!out_override.empty()) cfg.out_dir = out_override;
  const std::vector<train::RunMetrics> runs = train::train(cfg);
  for (const train::RunMetrics& met : runs) print_run(met);
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& axis,
              const std::string& csv, const PlanFlags& flags) {
  train::TrainConfig cfg = train::config_from_file(config_path);
  flags.apply(cfg);
  const auto rows = train::sweep(train::parse_sweep_axis(axis), cfg, csv);
  std::printf("%-14s %-10s %10s %12s %12s %10s\n", "point", "backend",
              "backend_n", "interface_n", "total_n", "final_ce");
  for (const train::SweepRow& row : rows) {
    const double ce = std::isfinite(row.metrics.final_val_ce)
                          ? row.metrics.final_val_ce
                          : row.metrics.final_train_ce;
    std::printf("%-14s %-10s %10" PRId64 " %12" PRId64 " %12" PRId64
                " %10.4f\n",
                row.label.c_str(), row.cfg.backend.c_str(),
                row.counts.backend_n, row.counts.interface_n,
                row.counts.total, ce);
  }
  if (!csv.empty()) std::printf("wrote %s\n", csv.c_str());
  return 0;
}

int cmd_compare_dense(const std::string& config_path, const std::string& csv,
                      const PlanFlags& flags) {
  train::TrainConfig cfg = train::config_from_file(config_path);
  flags.apply(cfg);
  const auto pairs = train::compare_dense(cfg, csv);
  for (const train::DenseComparison& cmp : pairs) {
    std::printf("seed %" PRIu64 ": bounded ", cmp.seed);
    std::printf("%.6f (params %" PRId64 "), dense %.6f (params %" PRId64
                "), gap %+.6f\n",
                std::isfinite(cmp.bounded.final_val_ce)
                    ? cmp.bounded.final_val_ce
                    : cmp.bounded.final_train_ce,
                cmp.bounded.counts.total,
                std::isfinite(cmp.dense.final_val_ce)
                    ? cmp.dense.final_val_ce
                    : cmp.dense.final_train_ce,
                cmp.dense.counts.total, cmp.gap);
  }
  if (!csv.empty()) std::printf("wrote %s\n", csv.c_str());
  return 0;
}

int cmd_parity(const ModelConfig& mc, const std::string& dtype_name,
               int64_t inits, int64_t batches, int64_t batch_size,
               const PlanFlags& flags, const std::string& csv) {
  const Dtype dt = dtype_name == "f32" ? Dtype::F32 : Dtype::F64;
  const ParityResult res =
      parity_suite(mc, dt, inits, batches, batch_size, flags.plan(), csv);
  std::printf("%" PRId64 " trials on backend %s (%s)\n",
              static_cast<int64_t>(res.rows.size()), mc.backend.c_str(),
              dtype_name.c_str());
  std::printf("worst max_abs %.3e, worst rel_l2 %.3e, worst cosine %.17f\n",
              res.worst_max_abs, res.worst_rel_l2, res.worst_cosine);
  if (!csv.empty()) std::printf("wrote %s\n", csv.c_str());
  return 0;
}

int cmd_spectra(const std::string& ckpt, const std::string& data,
                const std::string& out, int64_t batch_size) {
  Model model = load_checkpoint(ckpt);
  if (model.dense)
    throw ArgumentError("dense checkpoints have no interface chain");
  auto [train_tokens, val_tokens] = train::ingest_text(data);
  (void)val_tokens;
  RngState rng{model.cfg.seed + 0xB47C0ULL, 0};
  auto [toks, tgts] =
      train::sample_batch(train_tokens, model.cfg.L, batch_size, rng);
  ForwardOutputs fwd = model_forward(model, toks, batch_size, &tgts);

  BackwardPlan plan;
  auto ex = make_executor(1);
  const std::vector<InterfaceJacobian> js =
      phase1_all(model, fwd.caches, plan, *ex);
  std::vector<Tensor> first;
  first.reserve(js.size());
  for (const InterfaceJacobian& ij : js) {
    const int64_t r = ij.J.shape[1];
    Tensor m = Tensor::zeros({r, r}, ij.J.dtype);
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < r; ++j) m(i, j) = ij.J(0, i, j);
    first.push_back(std::move(m));
  }
  const diag::SpectraRecord rec =
      diag::compute_spectra(0, model.cfg.seed, first);
  diag::emit_spectra(out, {rec});
  std::printf("loss %.6f, %zu regions, wrote %s\n", fwd.loss, first.size(),
              out.c_str());
  return 0;
}

int cmd_costmodel(int64_t B, int64_t L, int64_t D, int64_t N, int64_t H,
                  int64_t X, int64_t r, int64_t K, int64_t c,
                  const std::string& dtype_name, double roofline,
                  const std::string& csv) {
  const double bytes = dtype_name == "f32" ? cost::kBytesF32 : cost::kBytesBf16;
  if (c <= 0) c = r;

  cost::RegionCostSpec ssm{B, L, D, N, H, X, cost::RegionType::Ssm};
  cost::RegionCostSpec tr{B, L, D, N, H, X, cost::RegionType::Transformer};

  std::printf("per-region cost at %s (%g bytes/elem), roofline %g ops/byte\n",
              dtype_name.c_str(), bytes, roofline);
  std::printf("%-12s %12s %12s %9s %9s %9s %9s %6s\n", "kind", "flops",
              "elements", "I_fwd", "I_c", "I_r", "W_J", "c_min");
  for (const cost::RegionCostSpec& spec : {ssm, tr}) {
    const cost::ForwardCost fc = cost::forward_cost(spec);
    const double i_fwd = cost::forward_intensity(spec, bytes);
    const double i_c = cost::effective_intensity(spec, r, std::min(c, r), bytes);
    const cost::JacobianCost jc = cost::jacobian_cost(spec, r, bytes);
    const int64_t cmin = cost::min_compute_bound_chunk(spec, roofline, bytes);
    std::printf("%-12s %12.4g %12.4g %9.4g %9.4g %9.4g %9.3g %6" PRId64 "\n",
                spec.kind == cost::RegionType::Ssm ? "ssm" : "transformer",
                fc.flops, fc.elements, i_fwd, i_c, jc.intensity, jc.work,
                cmin);
  }

  const double d = static_cast<double>(B) * static_cast<double>(L) *
                   static_cast<double>(D);
  const auto rows = cost::transport_table(d, r, K);
  std::printf("\ntransport primitives at d = %.4g, r = %" PRId64
              ", K = %" PRId64 "\n",
              d, r, K);
  std::printf("%-16s %12s %12s %10s %5s  %s\n", "regime", "flops", "span",
              "intensity", "mat", "operator");
  for (const cost::TransportRow& row : rows)
    std::printf("%-16s %12.4g %12.4g %10.4g %5s  %s\n", row.regime.c_str(),
                row.flops, row.span, row.intensity,
                row.materializes_jacobian ? "yes" : "no", row.op.c_str());

  const cost::ScanCost sc = cost::scan_cost(K, r);
  std::printf("\nscan work %.4g flops, span %.4g (%" PRId64
              " combine levels), payload %" PRId64 " bytes\n",
              sc.work, sc.span, cost::ceil_log2(K),
              cost::payload_bytes(K, r, static_cast<int64_t>(bytes)));

  const std::vector<cost::RegionCostSpec> chain(static_cast<size_t>(K), ssm);
  const cost::SpanDecomposition dec = cost::span_decomposition(chain, r);
  std::printf("uniform ssm chain: work %.4g (jacobians %.4g, scan %.4g, "
              "local %.4g), span %.4g, overhead %.2fx\n",
              dec.total_work, dec.phase1.work, dec.phase2.work,
              dec.phase3.work, dec.total_span, dec.overhead_factor);

  if (!csv.empty()) {
    std::ofstream out(csv, std::ios::trunc);
    if (!out) throw DataError("cannot open csv: " + csv);
    out << "kind,flops,elements,i_fwd,i_eff_c,i_jacobian,w_jacobian,c_min\n";
    char buf[256];
    for (const cost::RegionCostSpec& spec : {ssm, tr}) {
      const cost::ForwardCost fc = cost::forward_cost(spec);
      const cost::JacobianCost jc = cost::jacobian_cost(spec, r, bytes);
      std::snprintf(buf, sizeof buf,
                    "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%" PRId64 "\n",
                    spec.kind == cost::RegionType::Ssm ? "ssm" : "transformer",
                    fc.flops, fc.elements, cost::forward_intensity(spec, bytes),
                    cost::effective_intensity(spec, r, std::min(c, r), bytes),
                    jc.intensity, jc.work,
                    cost::min_compute_bound_chunk(spec, roofline, bytes));
      out << buf;
    }
    out << "regime,flops,span,intensity,materializes_jacobian\n";
    for (const cost::TransportRow& row : rows) {
      std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%d\n",
                    row.regime.c_str(), row.flops, row.span, row.intensity,
                    row.materializes_jacobian ? 1 : 0);
      out << buf;
    }
    if (!out) throw DataError("failed writing csv: " + csv);
    std::printf("wrote %s\n", csv.c_str());
  }
  return 0;
}

int cmd_scan_bench(int64_t K, int64_t r, int64_t trials, int64_t workers,
                   int64_t seq_threshold, const std::string& trace_path) {
  auto ex = make_executor(workers);
  RngState rng{20240 + static_cast<uint64_t>(K), 0};
  double worst = 0.0;
  scan::ScanStats last{};
  std::vector<Tensor> last_j;
  scan::SuffixProducts last_p;
  for (int64_t t = 0; t < trials; ++t) {
    std::vector<Tensor> j;
    j.reserve(static_cast<size_t>(K));
    for (int64_t k = 0; k < K; ++k)
      j.push_back(rng.normal({r, r}, 0.0, 1.0 / std::sqrt(double(r))));
    const scan::SuffixProducts ps = scan::suffix_scan_sequential(j);
    scan::ScanStats stats;
    const scan::SuffixProducts pp =
        scan::suffix_scan_parallel(j, *ex, &stats, seq_threshold);
    for (size_t k = 0; k < ps.P.size(); ++k) {
      Tensor diff = ps.P[k];
      for (size_t i = 0; i < diff.data.size(); ++i)
        diff.data[i] -= pp.P[k].data[i];
      const double denom = frobenius_norm(ps.P[k]);
      const double rel =
          denom > 0 ? frobenius_norm(diff) / denom : frobenius_norm(diff);
      if (rel > worst) worst = rel;
    }
    last = stats;
    last_j = j;
    last_p = pp;
  }
  std::printf("K=%" PRId64 " r=%" PRId64 " trials=%" PRId64
              ": worst rel frobenius %.3e, depth %d, combines %" PRId64
              "%s\n",
              K, r, trials, worst, last.depth, last.combines,
              last.routed_sequential ? " (sequential route)" : "");
  if (!trace_path.empty() && !last_j.empty()) {
    scan::write_trace(trace_path, last_j, last_p);
    std::printf("wrote %s\n", trace_path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bounded-interface backpropagation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string data_override;
  std::string out_override;
  std::string axis = "rank";
  std::string csv;
  PlanFlags train_flags, sweep_flags, dense_flags, parity_flags;

  CLI::App* c_train = app.add_subcommand("train", "train from a JSON config");
  c_train->add_option("--config", config_path, "JSON config path")
      ->required();
  c_train->add_option("--data", data_override, "override corpus path");
  c_train->add_option("--out-dir", out_override, "override output directory");
  train_flags.attach(c_train);

  CLI::App* c_sweep =
      app.add_subcommand("sweep", "rank / region-size / backend sweep");
  c_sweep->add_option("--config", config_path, "JSON config path")->required();
  c_sweep->add_option("--axis", axis, "rank | region-size | backend");
  c_sweep->add_option("--csv", csv, "output table path");
  sweep_flags.attach(c_sweep);

  CLI::App* c_dense = app.add_subcommand(
      "compare-dense", "bounded-interface vs plain residual stack");
  c_dense->add_option("--config", config_path, "JSON config path")->required();
  c_dense->add_option("--csv", csv, "output table path");
  dense_flags.attach(c_dense);

  ModelConfig parity_cfg;
  std::string parity_dtype = "f64";
  int64_t parity_inits = 20;
  int64_t parity_batches = 5;
  int64_t parity_batch_size = 2;
  CLI::App* c_parity =
      app.add_subcommand("parity", "scan backward vs full-graph oracle");
  c_parity->add_option("--backend", parity_cfg.backend,
                       "mlp | attention | diag_ssm | hybrid");
  c_parity->add_option("--D", parity_cfg.D, "model width");
  c_parity->add_option("--L", parity_cfg.L, "sequence length");
  c_parity->add_option("--K", parity_cfg.K, "region count");
  c_parity->add_option("--r", parity_cfg.r, "interface rank");
  c_parity->add_option("--layers", parity_cfg.layers_per_region,
                       "layers per region");
  c_parity->add_option("--H", parity_cfg.H, "attention heads");
  c_parity->add_option("--N", parity_cfg.N, "ssm state size");
  c_parity->add_option("--X", parity_cfg.X, "mlp hidden width");
  c_parity->add_option("--seed", parity_cfg.seed, "base seed");
  c_parity->add_option("--dtype", parity_dtype, "f64 | f32");
  c_parity->add_option("--inits", parity_inits, "model initializations");
  c_parity->add_option("--batches", parity_batches, "batches per init");
  c_parity->add_option("--batch-size", parity_batch_size, "batch size");
  c_parity->add_option("--csv", csv, "per-trial report path");
  parity_flags.attach(c_parity);

  std::string ckpt;
  std::string spectra_data;
  std::string spectra_out = "spectra.csv";
  int64_t spectra_batch = 2;
  CLI::App* c_spectra = app.add_subcommand(
      "spectra", "interface spectra of a checkpoint on one batch");
  c_spectra->add_option("--checkpoint", ckpt, "checkpoint path")->required();
  c_spectra->add_option("--data", spectra_data, "corpus path")->required();
  c_spectra->add_option("--out", spectra_out, "output csv path");
  c_spectra->add_option("--batch-size", spectra_batch, "batch size");

  int64_t cm_B = 8, cm_L = 2048, cm_D = 768, cm_N = 16, cm_H = 12,
          cm_X = 3072, cm_r = 64, cm_K = 16, cm_c = 0;
  std::string cm_dtype = "bf16";
  double cm_roofline = cost::kRooflineOpsPerByte;
  CLI::App* c_cost =
      app.add_subcommand("costmodel", "analytical work, span and intensity");
  c_cost->add_option("--B", cm_B, "batch");
  c_cost->add_option("--L", cm_L, "sequence length");
  c_cost->add_option("--D", cm_D, "width");
  c_cost->add_option("--N", cm_N, "ssm state");
  c_cost->add_option("--H", cm_H, "heads");
  c_cost->add_option("--X", cm_X, "mlp width");
  c_cost->add_option("--r", cm_r, "interface rank");
  c_cost->add_option("--K", cm_K, "region count");
  c_cost->add_option("--c", cm_c, "chunk size (0 = r)");
  c_cost->add_option("--dtype", cm_dtype, "bf16 | f32");
  c_cost->add_option("--roofline", cm_roofline, "ops/byte threshold");
  c_cost->add_option("--csv", csv, "also write tables as csv");

  int64_t sb_K = 16, sb_r = 64, sb_trials = 10, sb_workers = 1,
          sb_threshold = 4;
  std::string sb_trace;
  CLI::App* c_scan =
      app.add_subcommand("scan-bench", "suffix scan check and trace dump");
  c_scan->add_option("--K", sb_K, "factors");
  c_scan->add_option("--r", sb_r, "interface rank");
  c_scan->add_option("--trials", sb_trials, "random instances");
  c_scan->add_option("--workers", sb_workers, "worker threads");
  c_scan->add_option("--seq-threshold", sb_threshold,
                     "route below this K to the sequential kernel");
  c_scan->add_option("--trace", sb_trace, "binary trace output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_train->parsed())
      return cmd_train(config_path, train_flags, data_override, out_override);
    if (c_sweep->parsed())
      return cmd_sweep(config_path, axis, csv, sweep_flags);
    if (c_dense->parsed())
      return cmd_compare_dense(config_path, csv, dense_flags);
    if (c_parity->parsed())
      return cmd_parity(parity_cfg, parity_dtype, parity_inits,
                        parity_batches, parity_batch_size, parity_flags, csv);
    if (c_spectra->parsed())
      return cmd_spectra(ckpt, spectra_data, spectra_out, spectra_batch);
    if (c_cost->parsed())
      return cmd_costmodel(cm_B, cm_L, cm_D, cm_N, cm_H, cm_X, cm_r, cm_K,
                           cm_c, cm_dtype, cm_roofline, csv);
    if (c_scan->parsed())
      return cmd_scan_bench(sb_K, sb_r, sb_trials, sb_workers, sb_threshold,
                            sb_trace);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
