#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "lbi/tensor.hpp"

namespace lbi {

using NodeId = int32_t;

enum class Op : uint8_t {
  Input,
  MatMul,
  Bmm,       // scalar_flag != 0 means the second operand is transposed
  Add,
  Mul,
  Scale,     // scalar holds the factor
  SiLU,
  GeLU,
  Sigmoid,
  LayerNorm,  // scalar holds eps
  MeanPool,
  SoftmaxCausal,
  SplitHeads,  // heads holds H
  MergeHeads,
  AddRowVec,
  AddSeqBroadcast,
  ChanStateMul,
  ChanStateContract,
  LinearRecurrence,
  Embed,         // ids holds tokens, heads holds B, scalar_flag holds L
  CrossEntropy,  // ids holds next-token targets; saved holds probabilities
  Sum,
};

struct Node {
  Op op = Op::Input;
  NodeId a = -1;
  NodeId b = -1;
  Tensor value;
  double scalar = 0.0;
  int64_t heads = 0;
  int64_t scalar_flag = 0;
  std::shared_ptr<const std::vector<int32_t>> ids;
  Tensor saved;
  std::string name;  // parameter name for Input leaves, "" otherwise
};

// Append-only record of a computation. Each method validates its operands,
// evaluates the kernel eagerly, and stores the result, so recorded values
// always equal eager evaluation. Node ids are topologically ordered by
// construction.
class Tape {
 public:
  NodeId input(Tensor value, std::string param_name = "");
  NodeId matmul(NodeId a, NodeId b);
  NodeId bmm(NodeId a, NodeId b, bool transpose_b = false);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId silu(NodeId a);
  NodeId gelu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId layer_norm(NodeId a, double eps);
  NodeId mean_pool(NodeId a);
  NodeId causal_softmax(NodeId a);
  NodeId split_heads(NodeId a, int64_t H);
  NodeId merge_heads(NodeId a, int64_t H);
  NodeId add_rowvec(NodeId a, NodeId v);
  NodeId add_seq_broadcast(NodeId a, NodeId v);
  NodeId chan_state_mul(NodeId a, NodeId w);
  NodeId chan_state_contract(NodeId h, NodeId w);
  NodeId linear_recurrence(NodeId s, NodeId u);
  NodeId embed(NodeId table, std::shared_ptr<const std::vector<int32_t>> ids,
               int64_t B, int64_t L);
  NodeId cross_entropy(NodeId logits,
                       std::shared_ptr<const std::vector<int32_t>> targets);
  NodeId sum(NodeId a);

  const Tensor& val(NodeId id) const;
  const Node& node(NodeId id) const;
  size_t size() const { return nodes_.size(); }

  void mark_output(NodeId id) { outputs_.push_back(id); }
  const std::vector<NodeId>& outputs() const { return outputs_; }

  // Re-executes every non-leaf node from the stored leaf values and returns
  // the recomputed output tensors. Kernels are pure, so this reproduces the
  // recorded values bitwise.
  std::vector<Tensor> replay() const;

 private:
  NodeId push(Node n);
  NodeId check(NodeId id) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> outputs_;
};

struct BackwardOptions {
  // Restrict adjoint propagation to ancestors of these nodes. Empty means
  // propagate everywhere.
  std::vector<NodeId> wanted;
  // Treat these nodes as constants: their adjoint is not pushed upstream.
  std::vector<NodeId> stop;
  // Collect gradients for named parameter leaves into Gradients::by_name.
  bool collect_named = true;
};

struct Gradients {
  std::map<std::string, Tensor> by_name;
  std::unordered_map<NodeId, Tensor> by_id;  // adjoints of Input leaves
};

// Reverse-mode sweep from `root` seeded with `seed` (same shape as the root
// value). Nodes are visited in strictly descending id order and every adjoint
// accumulation happens in that fixed order, so repeated sweeps are bitwise
// identical.
Gradients backward(const Tape& tape, NodeId root, const Tensor& seed,
                   const BackwardOptions& opts = {});

// cotangent^T times the Jacobian of `root` with respect to the selected input
// leaves. Parameter gradients are skipped: propagation is restricted to
// ancestors of `wrt`.
std::unordered_map<NodeId, Tensor> vjp(const Tape& tape, NodeId root,
                                       const Tensor& cotangent,
                                       const std::vector<NodeId>& wrt);

// Central finite differences, one column per input element:
// out[i][j] = (f(x + h e_j) - f(x - h e_j))_i / (2h).
Tensor finite_difference_jacobian(const std::function<Tensor(const Tensor&)>& f,
                                  const Tensor& x, double h = 1e-5);

struct ParamDelta {
  double max_abs = 0.0;
  double rel_l2 = 0.0;
};

struct GradientReport {
  double max_abs_error = 0.0;
  double rel_l2_error = 0.0;
  double cosine_similarity = 1.0;
  std::map<std::string, ParamDelta> per_parameter;
};

// Compares two gradient maps over the canonical flattening (parameters in
// sorted name order, elements row-major). Key mismatch is an argument error.
GradientReport compare_gradients(const std::map<std::string, Tensor>& test,
                                 const std::map<std::string, Tensor>& reference);

// CSV with header param,max_abs,rel_l2; one row per parameter plus a summary
// row. Values are printed with 17 significant digits.
void write_gradient_report_csv(const GradientReport& report, const std::string& path);

// Records f over fresh input leaves. Outputs are marked on the tape.
using Program =
    std::function<std::vector<NodeId>(Tape&, const std::vector<NodeId>&)>;

struct Recording {
  Tape tape;
  std::vector<NodeId> inputs;
  std::vector<NodeId> outputs;
};

Recording record(const Program& f, const std::vector<Tensor>& inputs);

}  // namespace lbi
