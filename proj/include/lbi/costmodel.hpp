#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace lbi::cost {

// Leading-order counts with unit constants. FLOPs are scalar operations,
// memory traffic is counted in elements and converted to bytes only where a
// byte figure is needed.
enum class RegionType : uint8_t { Ssm, Transformer };

RegionType parse_region_type(const std::string& name);

struct RegionCostSpec {
  int64_t B = 1;  // batch
  int64_t L = 1;  // sequence length
  int64_t D = 1;  // width
  int64_t N = 1;  // ssm state
  int64_t H = 1;  // heads
  int64_t X = 1;  // mlp width
  RegionType kind = RegionType::Ssm;

  void validate() const;
};

// accelerator balance point this model compares intensities against
inline constexpr double kRooflineOpsPerByte = 295.0;
inline constexpr double kBytesBf16 = 2.0;
inline constexpr double kBytesF32 = 4.0;

struct ForwardCost {
  double flops = 0.0;
  double elements = 0.0;  // activation + state traffic
};

ForwardCost forward_cost(const RegionCostSpec& spec);

// flops per byte of the plain forward pass
double forward_intensity(const RegionCostSpec& spec,
                         double bytes_per_elem = kBytesBf16);

struct JacobianCost {
  double work = 0.0;       // r times the forward flops
  double intensity = 0.0;  // flops per byte at full basis reuse
};

JacobianCost jacobian_cost(const RegionCostSpec& spec, int64_t r,
                           double bytes_per_elem = kBytesBf16);

// intensity when c of the r basis columns share one activation fetch
double effective_intensity(const RegionCostSpec& spec, int64_t r, int64_t c,
                           double bytes_per_elem = kBytesBf16);

// smallest chunk whose effective intensity reaches the roofline threshold
int64_t min_compute_bound_chunk(const RegionCostSpec& spec,
                                double roofline = kRooflineOpsPerByte,
                                double bytes_per_elem = kBytesBf16);

struct ScanCost {
  double work = 0.0;  // K * r^3
  double span = 0.0;  // r^3 * ceil(log2 K)
};

ScanCost scan_cost(int64_t K, int64_t r);

int64_t ceil_log2(int64_t K);

struct TransportRow {
  std::string regime;  // sequential_bp | full_rank_scan | lbi_scan
  double flops = 0.0;  // per combine step
  double span = 0.0;
  std::string op;
  double intensity = 0.0;
  bool materializes_jacobian = false;
};

// d is the flattened activation dimension (B*L*D); rows compare one
// sequential transport step against full-rank and low-rank scan combines.
std::array<TransportRow, 3> transport_table(double d, int64_t r, int64_t K);

struct PhaseCost {
  double work = 0.0;
  double span = 0.0;
};

struct SpanDecomposition {
  PhaseCost phase1;  // Jacobian construction
  PhaseCost phase2;  // adjoint scan
  PhaseCost phase3;  // region-local backward
  double total_work = 0.0;
  double total_span = 0.0;
  // total work divided by the standard sequential backward's work
  double overhead_factor = 0.0;
};

SpanDecomposition span_decomposition(const std::vector<RegionCostSpec>& specs,
                                     int64_t r);

int64_t payload_bytes(int64_t K, int64_t r, int64_t bytes_per_elem);

}  // namespace lbi::cost
