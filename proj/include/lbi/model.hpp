#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lbi/autodiff.hpp"
#include "lbi/tensor.hpp"

namespace lbi {

enum class RegionKind : uint8_t { Mlp, Attention, DiagSsm };

RegionKind parse_region_kind(const std::string& name);
const char* region_kind_name(RegionKind kind);

// Static description of the bounded-interface model. The interface state has
// rank r; the token canvas is [B, L, D]; the chain has K regions of
// layers_per_region stacked backend layers each.
struct ModelConfig {
  int64_t vocab_size = 256;
  int64_t D = 64;   // model width
  int64_t L = 128;  // sequence length
  int64_t r = 8;    // interface rank
  int64_t K = 4;    // region count
  int64_t layers_per_region = 2;
  // 0 keeps layers_per_region; sweeps over region size set this so a fixed
  // total depth can end in a shorter final region.
  int64_t final_region_layers = 0;
  // one of: mlp, attention, diag_ssm, hybrid
  std::string backend = "mlp";
  // only read when backend == "hybrid"; empty selects the default pattern
  // (attention every fourth region, diag_ssm elsewhere); otherwise it must
  // list exactly K kinds.
  std::vector<std::string> schedule;
  int64_t H = 4;    // attention heads
  int64_t N = 8;    // ssm state size per channel
  int64_t X = 256;  // mlp hidden width
  double eps = 1e-5;
  uint64_t seed = 1;

  void validate() const;
  RegionKind region_kind(int64_t k) const;
  int64_t region_layers(int64_t k) const;
  int64_t total_layers() const;
};

using ParamStore = std::map<std::string, Tensor>;

struct Model {
  ModelConfig cfg;
  Dtype dtype = Dtype::F64;
  // dense = true is the no-interface baseline: the same layer stack with
  // plain residual wiring and no encoder/decoder/interface parameters.
  bool dense = false;
  ParamStore params;
};

Model init_model(const ModelConfig& cfg, Dtype dtype, uint64_t seed,
                 bool dense = false);

struct ParamCounts {
  int64_t backend_n = 0;    // region layer stacks
  int64_t interface_n = 0;  // enc/dec/alpha per region, m0 projection, head decoder
  int64_t embed_head_n = 0; // token table and vocab projection
  int64_t total = 0;
};

ParamCounts count_params(const Model& model);
ParamCounts count_params_for(const ModelConfig& cfg, bool dense = false);

// Everything needed to re-execute region k detached from the full graph.
// Replaying from here must reproduce m_out_expected bitwise.
struct ForwardCache {
  int64_t region = 0;
  Tensor m_in;
  std::shared_ptr<const Tensor> x_embed;
  Tensor m_out_expected;
};

struct ForwardOptions {
  // Test fixture only: when >= 0, region bypass_region's layer-stack output
  // is added to region bypass_region+1's input. This deliberately violates
  // the bounded-interface property so the audit has a true negative.
  int64_t bypass_region = -1;
};

struct ForwardOutputs {
  Tape tape;
  double loss = 0;
  bool has_loss = false;
  NodeId loss_id = -1;
  NodeId logits_id = -1;
  NodeId x_embed_id = -1;
  std::vector<NodeId> m_ids;    // m_0..m_K
  std::vector<Tensor> chain;    // m_0..m_K values
  std::vector<ForwardCache> caches;
  std::shared_ptr<const Tensor> x_embed;
  std::vector<int32_t> tokens;
  int64_t B = 0;
  int64_t L = 0;
};

// tokens has B*cfg.L entries; targets, when given, has the same length and
// holds the next-token ids. Loss is mean cross entropy over all B*L positions.
ForwardOutputs model_forward(const Model& model,
                             const std::vector<int32_t>& tokens, int64_t B,
                             const std::vector<int32_t>* targets = nullptr,
                             const ForwardOptions& opts = {});

Tensor embed_tokens(const Model& model, const std::vector<int32_t>& tokens,
                    int64_t B);
Tensor init_interface(const Model& model, const Tensor& x_embed);

// Single-region step on a scratch tape (used by tests and the backward
// module's recomputation path).
std::pair<Tensor, ForwardCache> region_forward(
    const Model& model, int64_t k, const Tensor& m_k,
    const std::shared_ptr<const Tensor>& x_embed);

// Graph builders shared between forward and the recomputation paths. All
// parameters enter the tape as named leaves so gradients can be collected
// by name.
struct RegionGraph {
  NodeId m_in = -1;
  NodeId x_embed = -1;
  NodeId phi_out = -1;  // layer-stack output before pooling
  NodeId m_out = -1;
};

RegionGraph build_region(Tape& t, const Model& model, int64_t k, NodeId m_in,
                         NodeId x_embed, NodeId bypass_in = -1);
NodeId build_m0(Tape& t, const Model& model, NodeId x_embed);
NodeId build_head(Tape& t, const Model& model, NodeId m_K, NodeId x_embed);

// Structural check of the bounded-interface property: parameter perturbations
// in region j must leave m_0..m_j and the canvas bitwise unchanged, and
// cutting the adjoint at boundary k must zero every gradient upstream of k.
bool separator_audit(const Model& model, const ForwardOptions& opts = {});

void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

// JSON round trip for the config block, shared by checkpoints and the
// training config file.
std::string config_json_text(const ModelConfig& cfg);
ModelConfig config_from_json_text(const std::string& text);

}  // namespace lbi
