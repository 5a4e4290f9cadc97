#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "knpl/tape.hpp"

namespace knpl::model {

using ad::Index;
using ad::NodeId;
using ad::Tape;
using ad::Tensor;

inline constexpr double kRmsEps = 1e-6;
inline constexpr double kMaskedScore = -1e9;

// Token id that terminates greedy decoding; the tokenizer reserves id 1 for
// its end-of-answer marker.
inline constexpr int kEndToken = 1;

struct ModelConfig {
    int n_layers = 2;
    int d_model = 64;
    int d_ff = 128;
    int n_heads = 4;
    int vocab_size = 0;
    int max_seq_len = 160;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;
};

enum class HookMode { Observe, Scale, Zero };

// One intervention: a set of (layer, neuron) targets sharing a mode. The
// hook point is the post-SiLU FFN intermediate, before the down projection.
struct HookSpec {
    HookMode mode = HookMode::Observe;
    double factor = 1.0; // Scale only
    std::vector<std::pair<int, int>> targets;

    static HookSpec observe(std::vector<std::pair<int, int>> targets);
    static HookSpec scale(double factor, std::vector<std::pair<int, int>> targets);
    static HookSpec zero(std::vector<std::pair<int, int>> targets);
};

struct LayerWeights {
    Tensor attn_gain, wq, wk, wv, wo;
    Tensor ffn_gain, w1, w2;
};

struct Model {
    ModelConfig config;
    Tensor tok_embed; // vocab x d_model
    Tensor pos_embed; // max_seq_len x d_model
    Tensor final_gain;
    Tensor head; // d_model x vocab (untied)
    std::vector<LayerWeights> layers;

    static Model init(const ModelConfig& config, std::uint64_t seed);

    // Stable name -> tensor enumeration; defines checkpoint and optimizer
    // slot order.
    std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
    std::vector<std::pair<std::string, Tensor*>> named_tensors();
};

struct LayerTrace {
    Tensor ffn_input;  // post-norm FFN input, rows x d_model
    Tensor ffn;        // post-SiLU intermediate after hooks, rows x d_ff
    Tensor post_attn;  // residual entering the FFN block
    Tensor out;        // residual leaving the layer
    Tensor keys;       // rows x d_model, head-concatenated layout
    Tensor values;     // rows x d_model
    Tensor attn;       // (n_heads * rows) x rows attention probabilities
};

struct ForwardTrace {
    std::vector<LayerTrace> layers; // only when captured
    Tensor logits;                  // rows x vocab
    int top_token = -1;             // argmax at the final row, ties -> lowest id
};

// Several sequences packed as row blocks of one forward pass. Attention is
// masked to be causal within a block and zero across blocks, so packing is
// exact, not an approximation.
struct PackedBatch {
    std::vector<int> tokens;
    std::vector<int> positions;
    std::vector<Index> starts; // first row of each block, ascending, starts[0] == 0
};

PackedBatch pack_sequences(const std::vector<std::vector<int>>& seqs);

// Node ids of the weight leaves, in named_tensors order.
struct TapedWeights {
    std::vector<NodeId> ids;
    ModelConfig config;

    NodeId tok_embed() const { return ids[0]; }
    NodeId pos_embed() const { return ids[1]; }
    NodeId final_gain() const;
    NodeId head() const;
    NodeId layer(int l, int slot) const; // slot order: attn_gain, wq, wk, wv, wo, ffn_gain, w1, w2
};

TapedWeights weights_as_leaves(Tape& t, const Model& m, bool requires_grad);

struct TapedForward {
    std::vector<NodeId> ffn;       // per layer, post-SiLU after hooks
    std::vector<NodeId> ffn_input; // per layer, post-norm FFN input
    std::vector<NodeId> post_attn; // per layer
    std::vector<NodeId> out;       // per layer
    std::vector<NodeId> keys, values, attn;
    NodeId logits = -1;
};

// One forward implementation serves training (weights as gradient leaves),
// inference, and tracing; every caller sees identical arithmetic.
TapedForward build_forward(Tape& t, const TapedWeights& w, const PackedBatch& batch,
                           const std::vector<HookSpec>& hooks);

ForwardTrace forward_with_hooks(const Model& m, const std::vector<int>& tokens,
                                const std::vector<HookSpec>& hooks, bool capture);

struct GreedyResult {
    std::vector<int> tokens; // generated tokens; includes the end marker when produced
    std::vector<ForwardTrace> steps;
    bool hit_end = false;
};

GreedyResult generate_greedy(const Model& m, const std::vector<int>& prompt, int max_new,
                             const std::vector<HookSpec>& hooks, bool capture);

// Down-projected FFN output recomputed from an explicit input, for external
// cross-checks against a captured trace.
Tensor ffn_forward(const Tensor& h, const Tensor& w1, const Tensor& w2);

// Softmax over one logits row; same max-shifted arithmetic as the taped op.
std::vector<double> softmax_row(const Tensor& logits, Index row);

int argmax_lowest(const Tensor& logits, Index row);

// Recomputes the network tail after replacing the layer's post-SiLU vector
// at position p. Rows before p are reused from the base trace (causality
// makes them exact); rows p..end are recomputed because they attend to p.
// Returns the logits block for those rows, (rows - p) x vocab; the last row
// is the final position. With p at the end this touches one row per layer.
NodeId build_resume_tail(Tape& t, const Model& m, const ForwardTrace& base, int layer, Index p,
                         NodeId h_row);

} // namespace knpl::model
