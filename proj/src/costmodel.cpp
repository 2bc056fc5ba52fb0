#include "lbi/costmodel.hpp"

#include <cmath>

#include "lbi/errors.hpp"

namespace lbi::cost {

RegionType parse_region_type(const std::string& name) {
  if (name == "ssm") return RegionType::Ssm;
  if (name == "transformer") return RegionType::Transformer;
  throw ArgumentError("unknown region type: " + name);
}

void RegionCostSpec::validate() const {
  if (B < 1 || L < 1 || D < 1) throw ArgumentError("B, L, D must be positive");
  if (kind == RegionType::Ssm && N < 1)
    throw ArgumentError("ssm state size N must be positive");
  if (kind == RegionType::Transformer) {
    if (H < 1 || X < 1) throw ArgumentError("H and X must be positive");
    if (D % H != 0) throw ArgumentError("D must be divisible by H");
  }
}

ForwardCost forward_cost(const RegionCostSpec& spec) {
  spec.validate();
  const double B = static_cast<double>(spec.B);
  const double L = static_cast<double>(spec.L);
  const double D = static_cast<double>(spec.D);
  ForwardCost out;
  if (spec.kind == RegionType::Ssm) {
    const double N = static_cast<double>(spec.N);
    out.flops = B * L * D * N;
    out.elements = B * L * (D + N);
  } else {
    const double H = static_cast<double>(spec.H);
    const double X = static_cast<double>(spec.X);
    out.flops = B * L * D * D + B * L * L * D + B * L * D * X;
    out.elements = B * L * D + B * H * L * L + B * L * X;
  }
  return out;
}

double forward_intensity(const RegionCostSpec& spec, double bytes_per_elem) {
  if (bytes_per_elem <= 0.0) throw ArgumentError("bytes_per_elem must be positive");
  const ForwardCost fc = forward_cost(spec);
  return fc.flops / (fc.elements * bytes_per_elem);
}

JacobianCost jacobian_cost(const RegionCostSpec& spec, int64_t r,
                           double bytes_per_elem) {
  if (r < 1) throw ArgumentError("interface rank must be positive");
  if (bytes_per_elem <= 0.0) throw ArgumentError("bytes_per_elem must be positive");
  const ForwardCost fc = forward_cost(spec);
  JacobianCost out;
  out.work = static_cast<double>(r) * fc.flops;
  // all r basis columns reuse one pass over the activations
  out.intensity = out.work / (fc.elements * bytes_per_elem);
  return out;
}

double effective_intensity(const RegionCostSpec& spec, int64_t r, int64_t c,
                           double bytes_per_elem) {
  if (c < 1 || c > r) throw ArgumentError("chunk must satisfy 1 <= c <= r");
  const ForwardCost fc = forward_cost(spec);
  return static_cast<double>(c) * fc.flops / (fc.elements * bytes_per_elem);
}

int64_t min_compute_bound_chunk(const RegionCostSpec& spec, double roofline,
                                double bytes_per_elem) {
  if (roofline <= 0.0) throw ArgumentError("roofline must be positive");
  const double base = forward_intensity(spec, bytes_per_elem);
  return static_cast<int64_t>(std::ceil(roofline / base));
}

int64_t ceil_log2(int64_t K) {
  if (K < 1) throw ArgumentError("K must be positive");
  int64_t levels = 0;
  int64_t reach = 1;
  while (reach < K) {
    reach *= 2;
    ++levels;
  }
  return levels;
}

ScanCost scan_cost(int64_t K, int64_t r) {
  if (K < 1 || r < 1) throw ArgumentError("K and r must be positive");
  const double r3 = static_cast<double>(r) * static_cast<double>(r) *
                    static_cast<double>(r);
  ScanCost out;
  out.work = static_cast<double>(K) * r3;
  out.span = r3 * static_cast<double>(ceil_log2(K));
  return out;
}

std::array<TransportRow, 3> transport_table(double d, int64_t r, int64_t K) {
  if (d < 1.0) throw ArgumentError("activation dimension must be positive");
  if (r < 1 || K < 1) throw ArgumentError("r and K must be positive");
  const double r3 = static_cast<double>(r) * static_cast<double>(r) *
                    static_cast<double>(r);
  const double levels = static_cast<double>(ceil_log2(K));

  TransportRow seq;
  seq.regime = "sequential_bp";
  seq.flops = d * d;
  seq.span = static_cast<double>(K) * d * d;
  seq.op = "vector-Jacobian product against the full state";
  seq.intensity = 1.0;
  seq.materializes_jacobian = false;

  TransportRow full;
  full.regime = "full_rank_scan";
  full.flops = d * d * d;
  full.span = d * d * d * levels;
  full.op = "dense Jacobian composition over the full state";
  full.intensity = d;
  full.materializes_jacobian = true;

  TransportRow lbi;
  lbi.regime = "lbi_scan";
  lbi.flops = r3;
  lbi.span = r3 * levels;
  lbi.op = "dense Jacobian composition over the interface";
  lbi.intensity = static_cast<double>(r);
  lbi.materializes_jacobian = true;

  return {seq, full, lbi};
}

SpanDecomposition span_decomposition(const std::vector<RegionCostSpec>& specs,
                                     int64_t r) {
  if (specs.empty()) throw ArgumentError("need at least one region");
  if (r < 1) throw ArgumentError("interface rank must be positive");
  const int64_t K = static_cast<int64_t>(specs.size());

  SpanDecomposition out;
  double sum_f = 0.0;
  double max_f = 0.0;
  for (const RegionCostSpec& spec : specs) {
    const double f = forward_cost(spec).flops;
    sum_f += f;
    if (f > max_f) max_f = f;
  }
  const double rd = static_cast<double>(r);

  out.phase1.work = rd * sum_f;
  out.phase1.span = rd * max_f;
  const ScanCost sc = scan_cost(K, r);
  out.phase2.work = sc.work;
  out.phase2.span = sc.span;
  // region-local backward costs one more forward-sized pass per region
  out.phase3.work = sum_f;
  out.phase3.span = max_f;

  out.total_work = out.phase1.work + out.phase2.work + out.phase3.work;
  out.total_span = out.phase1.span + out.phase2.span + out.phase3.span;
  out.overhead_factor = out.total_work / sum_f;
  return out;
}

int64_t payload_bytes(int64_t K, int64_t r, int64_t bytes_per_elem) {
  if (K < 1 || r < 1 || bytes_per_elem < 1)
    throw ArgumentError("K, r, bytes_per_elem must be positive");
  return K * r * r * bytes_per_elem;
}

}  // namespace lbi::cost
