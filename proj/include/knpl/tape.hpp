#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "knpl/tensor.hpp"

namespace knpl::ad {

using NodeId = std::int32_t;

enum class OpKind : std::uint8_t {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Mul,
    Scale,
    AddBias,
    Silu,
    Sigmoid,
    RmsNorm,
    SoftmaxRows,
    CrossEntropy,
    GatherRows,
    Sum,
    Mean,
    SliceCols,
    ConcatCols,
    ConcatRows,
    Pick,
    OverrideRow,
    HookApply,
};

// Per-column activation patch used by forward hooks. Zero mode writes an
// exact 0.0 (not a multiply, which would produce -0.0 for negative inputs).
struct ColPatch {
    Index col = 0;
    bool zero = false;
    double factor = 1.0;
};

struct ScaleParams { double factor = 1.0; };
struct RmsNormParams { double eps = 1e-6; };
struct CrossEntropyParams {
    std::vector<int> targets; // one per row of the logits
    std::vector<double> mask; // 0/1 per row; loss averaged over mask==1 rows
};
struct GatherRowsParams { std::vector<Index> rows; };
struct SliceColsParams { Index start = 0; Index count = 0; };
struct PickParams { Index row = 0; Index col = 0; };
struct OverrideRowParams { Index row = 0; };
struct HookApplyParams { std::vector<ColPatch> patches; };

using OpParams = std::variant<std::monostate, ScaleParams, RmsNormParams,
                              CrossEntropyParams, GatherRowsParams, SliceColsParams,
                              PickParams, OverrideRowParams, HookApplyParams>;

struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<NodeId> inputs;
    OpParams params;
    Tensor value;
    Tensor saved; // op-specific intermediate (softmax probs, inverse rms)
    bool requires_grad = false;
};

// Recording tape for reverse-mode differentiation. Single-threaded while
// recording; independent tapes may run concurrently. Node values are
// immutable once appended, and replay_verify() recomputes every non-leaf
// node from its inputs to confirm the recording is reproducible bit-for-bit.
class Tape {
public:
    NodeId leaf(Tensor value, bool requires_grad = false);
    NodeId constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value(NodeId id) const { return node(id).value; }
    const Node& node(NodeId id) const;
    std::size_t size() const { return nodes_.size(); }

    // Lets interior nodes participate as differentiation targets.
    void mark_requires_grad(NodeId id);

    // Reverse-mode gradients of a scalar output w.r.t. each node in wrt
    // (leaves or interior nodes). Nodes unreachable from the output get
    // zero gradients of their own shape.
    std::vector<Tensor> grad(NodeId output, std::span<const NodeId> wrt) const;

    // Recomputes every non-leaf node from its inputs and checks bit
    // equality with the recorded values.
    bool replay_matches() const;

    NodeId append(OpKind kind, std::vector<NodeId> inputs, OpParams params);

private:
    std::vector<Node> nodes_;
};

// --- operation builders ---------------------------------------------------

NodeId matmul(Tape& t, NodeId a, NodeId b);
NodeId transpose(Tape& t, NodeId a);
NodeId add(Tape& t, NodeId a, NodeId b);
NodeId mul(Tape& t, NodeId a, NodeId b);
NodeId scale(Tape& t, NodeId a, double factor);
NodeId add_bias(Tape& t, NodeId a, NodeId bias);
NodeId silu(Tape& t, NodeId a);
NodeId sigmoid(Tape& t, NodeId a);
NodeId rms_norm(Tape& t, NodeId a, NodeId gain, double eps = 1e-6);
NodeId softmax_rows(Tape& t, NodeId a);
NodeId cross_entropy(Tape& t, NodeId logits, std::vector<int> targets, std::vector<double> mask);
NodeId embedding_lookup(Tape& t, NodeId table, const std::vector<int>& ids);
NodeId gather_rows(Tape& t, NodeId a, std::vector<Index> rows);
NodeId sum(Tape& t, NodeId a);
NodeId mean(Tape& t, NodeId a);
NodeId slice_cols(Tape& t, NodeId a, Index start, Index count);
NodeId concat_cols(Tape& t, std::span<const NodeId> parts);
NodeId concat_rows(Tape& t, std::span<const NodeId> parts);
NodeId pick(Tape& t, NodeId a, Index row, Index col);
NodeId override_row(Tape& t, NodeId a, Index row, NodeId values);
NodeId hook_apply(Tape& t, NodeId a, std::vector<ColPatch> patches);

// Convenience for tests and callers holding the tensors directly.
double silu_value(double x);
double sigmoid_value(double x);

} // namespace knpl::ad
