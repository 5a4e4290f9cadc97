#include "knpl/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "knpl/error.hpp"
#include "knpl/rng.hpp"

namespace knpl::model {

using ad::Mat;

void ModelConfig::validate() const {
    if (n_layers <= 0 || d_model <= 0 || d_ff <= 0 || n_heads <= 0 || vocab_size <= 0 ||
        max_seq_len <= 0) {
        raise(ErrorKind::Config, "model config: all dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        raise(ErrorKind::Config, "model config: d_model " + std::to_string(d_model) +
                                     " not divisible by n_heads " + std::to_string(n_heads));
    }
}

HookSpec HookSpec::observe(std::vector<std::pair<int, int>> targets) {
    return HookSpec{HookMode::Observe, 1.0, std::move(targets)};
}

HookSpec HookSpec::scale(double factor, std::vector<std::pair<int, int>> targets) {
    return HookSpec{HookMode::Scale, factor, std::move(targets)};
}

HookSpec HookSpec::zero(std::vector<std::pair<int, int>> targets) {
    return HookSpec{HookMode::Zero, 0.0, std::move(targets)};
}

namespace {

Tensor gauss_matrix(std::uint64_t seed, Index rows, Index cols, double stddev) {
    Rng rng(seed);
    Mat m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            m(r, c) = rng.gauss(0.0, stddev);
        }
    }
    return Tensor::matrix(std::move(m));
}

Tensor ones_row(Index cols) {
    return Tensor::matrix(Mat::Ones(1, cols));
}

} // namespace

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    const auto d = static_cast<Index>(config.d_model);
    const auto ff = static_cast<Index>(config.d_ff);
    const auto v = static_cast<Index>(config.vocab_size);
    const double proj = 1.0 / std::sqrt(static_cast<double>(config.d_model));
    const double down = 1.0 / std::sqrt(static_cast<double>(config.d_ff));

    m.tok_embed = gauss_matrix(derive_seed(seed, "tok_embed"), v, d, 0.02);
    m.pos_embed = gauss_matrix(derive_seed(seed, "pos_embed"),
                               static_cast<Index>(config.max_seq_len), d, 0.02);
    m.final_gain = ones_row(d);
    m.head = gauss_matrix(derive_seed(seed, "head"), d, v, proj);
    for (int l = 0; l < config.n_layers; ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        LayerWeights lw;
        lw.attn_gain = ones_row(d);
        lw.wq = gauss_matrix(derive_seed(seed, prefix + "wq"), d, d, proj);
        lw.wk = gauss_matrix(derive_seed(seed, prefix + "wk"), d, d, proj);
        lw.wv = gauss_matrix(derive_seed(seed, prefix + "wv"), d, d, proj);
        lw.wo = gauss_matrix(derive_seed(seed, prefix + "wo"), d, d, proj);
        lw.ffn_gain = ones_row(d);
        lw.w1 = gauss_matrix(derive_seed(seed, prefix + "w1"), d, ff, proj);
        lw.w2 = gauss_matrix(derive_seed(seed, prefix + "w2"), ff, d, down);
        m.layers.push_back(std::move(lw));
    }
    return m;
}

namespace {

template <typename ModelT, typename TensorPtr>
std::vector<std::pair<std::string, TensorPtr>> enumerate_tensors(ModelT& m) {
    std::vector<std::pair<std::string, TensorPtr>> out;
    out.emplace_back("tok_embed", &m.tok_embed);
    out.emplace_back("pos_embed", &m.pos_embed);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        auto& lw = m.layers[l];
        out.emplace_back(p + "attn_gain", &lw.attn_gain);
        out.emplace_back(p + "wq", &lw.wq);
        out.emplace_back(p + "wk", &lw.wk);
        out.emplace_back(p + "wv", &lw.wv);
        out.emplace_back(p + "wo", &lw.wo);
        out.emplace_back(p + "ffn_gain", &lw.ffn_gain);
        out.emplace_back(p + "w1", &lw.w1);
        out.emplace_back(p + "w2", &lw.w2);
    }
    out.emplace_back("final_gain", &m.final_gain);
    out.emplace_back("head", &m.head);
    return out;
}

} // namespace

std::vector<std::pair<std::string, const Tensor*>> Model::named_tensors() const {
    return enumerate_tensors<const Model, const Tensor*>(*this);
}

std::vector<std::pair<std::string, Tensor*>> Model::named_tensors() {
    return enumerate_tensors<Model, Tensor*>(*this);
}

PackedBatch pack_sequences(const std::vector<std::vector<int>>& seqs) {
    if (seqs.empty()) {
        raise(ErrorKind::Shape, "pack_sequences: no sequences");
    }
    PackedBatch b;
    for (const auto& s : seqs) {
        if (s.empty()) {
            raise(ErrorKind::Shape, "pack_sequences: empty sequence");
        }
        b.starts.push_back(static_cast<Index>(b.tokens.size()));
        for (std::size_t i = 0; i < s.size(); ++i) {
            b.tokens.push_back(s[i]);
            b.positions.push_back(static_cast<int>(i));
        }
    }
    return b;
}

NodeId TapedWeights::final_gain() const { return ids[ids.size() - 2]; }
NodeId TapedWeights::head() const { return ids[ids.size() - 1]; }

NodeId TapedWeights::layer(int l, int slot) const {
    return ids[2 + static_cast<std::size_t>(l) * 8 + static_cast<std::size_t>(slot)];
}

TapedWeights weights_as_leaves(Tape& t, const Model& m, bool requires_grad) {
    TapedWeights w;
    w.config = m.config;
    for (const auto& [name, tensor] : m.named_tensors()) {
        (void)name;
        w.ids.push_back(t.leaf(*tensor, requires_grad));
    }
    return w;
}

namespace {

enum Slot { kAttnGain = 0, kWq, kWk, kWv, kWo, kFfnGain, kW1, kW2 };

std::vector<std::vector<ad::ColPatch>> hook_patches(const ModelConfig& cfg,
                                                    const std::vector<HookSpec>& hooks) {
    std::vector<std::vector<ad::ColPatch>> per_layer(static_cast<std::size_t>(cfg.n_layers));
    std::set<std::pair<int, int>> touched;
    for (const HookSpec& spec : hooks) {
        for (const auto& [l, i] : spec.targets) {
            if (l < 0 || l >= cfg.n_layers || i < 0 || i >= cfg.d_ff) {
                raise(ErrorKind::Config, "hook target (" + std::to_string(l) + ", " +
                                             std::to_string(i) + ") outside " +
                                             std::to_string(cfg.n_layers) + " layers x " +
                                             std::to_string(cfg.d_ff) + " neurons");
            }
            if (spec.mode == HookMode::Observe) continue;
            if (!std::isfinite(spec.factor)) {
                raise(ErrorKind::Config, "hook scale factor must be finite");
            }
            if (!touched.insert({l, i}).second) {
                raise(ErrorKind::Conflict, "neuron (" + std::to_string(l) + ", " +
                                               std::to_string(i) +
                                               ") targeted by more than one intervention");
            }
            ad::ColPatch patch;
            patch.col = static_cast<Index>(i);
            patch.zero = spec.mode == HookMode::Zero;
            patch.factor = spec.factor;
            per_layer[static_cast<std::size_t>(l)].push_back(patch);
        }
    }
    return per_layer;
}

Tensor causal_mask(Index rows) {
    Mat mask(rows, rows);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < rows; ++j) {
            mask(i, j) = j <= i ? 0.0 : kMaskedScore;
        }
    }
    return Tensor::matrix(std::move(mask));
}

void validate_batch(const ModelConfig& cfg, const PackedBatch& batch) {
    if (batch.tokens.empty() || batch.tokens.size() != batch.positions.size()) {
        raise(ErrorKind::Shape, "forward: empty batch or token/position length mismatch");
    }
    if (batch.starts.empty() || batch.starts[0] != 0) {
        raise(ErrorKind::Shape, "forward: block starts must begin at row 0");
    }
    for (std::size_t b = 1; b < batch.starts.size(); ++b) {
        if (batch.starts[b] <= batch.starts[b - 1] ||
            batch.starts[b] >= static_cast<Index>(batch.tokens.size())) {
            raise(ErrorKind::Shape, "forward: block starts must be ascending and in range");
        }
    }
    for (int tok : batch.tokens) {
        if (tok < 0 || tok >= cfg.vocab_size) {
            raise(ErrorKind::Config, "forward: token id " + std::to_string(tok) +
                                         " outside vocabulary of " +
                                         std::to_string(cfg.vocab_size));
        }
    }
    for (int p : batch.positions) {
        if (p < 0 || p >= cfg.max_seq_len) {
            raise(ErrorKind::Length, "forward: position " + std::to_string(p) +
                                         " outside max sequence length " +
                                         std::to_string(cfg.max_seq_len));
        }
    }
}

// Multi-head attention over already-normed input; returns the residual
// contribution. Rows attend within their block only, and cross-block
// attention probabilities are exactly zero, so attention runs per block
// instead of materializing a rows x rows score matrix.
NodeId attention_block(Tape& t, const TapedWeights& w, int layer, NodeId normed,
                       const std::vector<Index>& starts, Index total_rows,
                       std::map<Index, NodeId>& mask_cache, std::vector<NodeId>* keys_out,
                       std::vector<NodeId>* values_out, std::vector<NodeId>* attn_out) {
    const ModelConfig& cfg = w.config;
    const auto dh = static_cast<Index>(cfg.head_dim());
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));

    const NodeId q = matmul(t, normed, w.layer(layer, kWq));
    const NodeId k = matmul(t, normed, w.layer(layer, kWk));
    const NodeId v = matmul(t, normed, w.layer(layer, kWv));
    if (keys_out) keys_out->push_back(k);
    if (values_out) values_out->push_back(v);

    const bool single = starts.size() == 1;
    std::vector<NodeId> block_outs;
    std::vector<NodeId> probs_per_head; // single-block captures only
    for (std::size_t b = 0; b < starts.size(); ++b) {
        const Index lo = starts[b];
        const Index hi = b + 1 < starts.size() ? starts[b + 1] : total_rows;
        NodeId qb = q, kb = k, vb = v;
        if (!single) {
            std::vector<Index> rows;
            rows.reserve(static_cast<std::size_t>(hi - lo));
            for (Index r = lo; r < hi; ++r) rows.push_back(r);
            qb = gather_rows(t, q, rows);
            kb = gather_rows(t, k, rows);
            vb = gather_rows(t, v, rows);
        }
        auto mask_it = mask_cache.find(hi - lo);
        if (mask_it == mask_cache.end()) {
            mask_it = mask_cache.emplace(hi - lo, t.constant(causal_mask(hi - lo))).first;
        }
        std::vector<NodeId> heads;
        for (int h = 0; h < cfg.n_heads; ++h) {
            const Index off = static_cast<Index>(h) * dh;
            const NodeId qh = slice_cols(t, qb, off, dh);
            const NodeId kh = slice_cols(t, kb, off, dh);
            const NodeId vh = slice_cols(t, vb, off, dh);
            NodeId scores = scale(t, matmul(t, qh, transpose(t, kh)), inv_sqrt_dh);
            scores = add(t, scores, mask_it->second);
            const NodeId probs = softmax_rows(t, scores);
            if (single) probs_per_head.push_back(probs);
            heads.push_back(matmul(t, probs, vh));
        }
        block_outs.push_back(concat_cols(t, heads));
    }
    if (attn_out && single) attn_out->push_back(concat_rows(t, probs_per_head));
    const NodeId merged = single ? block_outs[0] : concat_rows(t, block_outs);
    return matmul(t, merged, w.layer(layer, kWo));
}

} // namespace

TapedForward build_forward(Tape& t, const TapedWeights& w, const PackedBatch& batch,
                           const std::vector<HookSpec>& hooks) {
    const ModelConfig& cfg = w.config;
    cfg.validate();
    validate_batch(cfg, batch);
    const auto patches = hook_patches(cfg, hooks);

    TapedForward f;
    const NodeId tok = embedding_lookup(t, w.tok_embed(), batch.tokens);
    const NodeId pos = embedding_lookup(t, w.pos_embed(), batch.positions);
    NodeId x = add(t, tok, pos);
    const auto total_rows = static_cast<Index>(batch.tokens.size());
    std::map<Index, NodeId> mask_cache;

    for (int l = 0; l < cfg.n_layers; ++l) {
        const NodeId normed = rms_norm(t, x, w.layer(l, kAttnGain), kRmsEps);
        const NodeId att = attention_block(t, w, l, normed, batch.starts, total_rows, mask_cache,
                                           &f.keys, &f.values, &f.attn);
        x = add(t, x, att);
        f.post_attn.push_back(x);

        const NodeId ffn_in = rms_norm(t, x, w.layer(l, kFfnGain), kRmsEps);
        f.ffn_input.push_back(ffn_in);
        NodeId h = silu(t, matmul(t, ffn_in, w.layer(l, kW1)));
        const auto& layer_patches = patches[static_cast<std::size_t>(l)];
        if (!layer_patches.empty()) {
            h = hook_apply(t, h, layer_patches);
        }
        f.ffn.push_back(h);
        x = add(t, x, matmul(t, h, w.layer(l, kW2)));
        f.out.push_back(x);
    }

    const NodeId final_norm = rms_norm(t, x, w.final_gain(), kRmsEps);
    f.logits = matmul(t, final_norm, w.head());
    return f;
}

ForwardTrace forward_with_hooks(const Model& m, const std::vector<int>& tokens,
                                const std::vector<HookSpec>& hooks, bool capture) {
    if (static_cast<int>(tokens.size()) > m.config.max_seq_len) {
        raise(ErrorKind::Length, "forward: sequence of " + std::to_string(tokens.size()) +
                                     " exceeds max length " +
                                     std::to_string(m.config.max_seq_len));
    }
    Tape t;
    const TapedWeights w = weights_as_leaves(t, m, false);
    PackedBatch batch;
    batch.tokens = tokens;
    batch.positions.resize(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) batch.positions[i] = static_cast<int>(i);
    batch.starts = {0};

    const TapedForward f = build_forward(t, w, batch, hooks);
    ForwardTrace trace;
    trace.logits = t.value(f.logits);
    trace.top_token = argmax_lowest(trace.logits, trace.logits.rows() - 1);
    if (capture) {
        for (int l = 0; l < m.config.n_layers; ++l) {
            const auto li = static_cast<std::size_t>(l);
            LayerTrace lt;
            lt.ffn_input = t.value(f.ffn_input[li]);
            lt.ffn = t.value(f.ffn[li]);
            lt.post_attn = t.value(f.post_attn[li]);
            lt.out = t.value(f.out[li]);
            lt.keys = t.value(f.keys[li]);
            lt.values = t.value(f.values[li]);
            lt.attn = t.value(f.attn[li]);
            trace.layers.push_back(std::move(lt));
        }
    }
    return trace;
}

GreedyResult generate_greedy(const Model& m, const std::vector<int>& prompt, int max_new,
                             const std::vector<HookSpec>& hooks, bool capture) {
    if (max_new < 1) {
        raise(ErrorKind::Config, "generate: max_new must be >= 1");
    }
    if (prompt.empty()) {
        raise(ErrorKind::Shape, "generate: empty prompt");
    }
    if (static_cast<int>(prompt.size()) + max_new > m.config.max_seq_len) {
        raise(ErrorKind::Length, "generate: prompt of " + std::to_string(prompt.size()) +
                                     " plus " + std::to_string(max_new) +
                                     " new tokens exceeds max length " +
                                     std::to_string(m.config.max_seq_len));
    }

    GreedyResult r;
    std::vector<int> seq = prompt;
    for (int step = 0; step < max_new; ++step) {
        ForwardTrace trace = forward_with_hooks(m, seq, hooks, capture);
        const int next = trace.top_token;
        r.steps.push_back(std::move(trace));
        r.tokens.push_back(next);
        seq.push_back(next);
        if (next == kEndToken) {
            r.hit_end = true;
            break;
        }
    }
    return r;
}

Tensor ffn_forward(const Tensor& h, const Tensor& w1, const Tensor& w2) {
    if (h.cols() != w1.rows() || w1.cols() != w2.rows()) {
        raise(ErrorKind::Shape, "ffn_forward: " + h.shape_string() + " x " + w1.shape_string() +
                                    " x " + w2.shape_string());
    }
    Tape t;
    const NodeId out =
        matmul(t, silu(t, matmul(t, t.constant(h), t.constant(w1))), t.constant(w2));
    return t.value(out);
}

std::vector<double> softmax_row(const Tensor& logits, Index row) {
    if (row < 0 || row >= logits.rows()) {
        raise(ErrorKind::Shape, "softmax_row: row " + std::to_string(row) + " outside " +
                                    logits.shape_string());
    }
    const Mat& x = logits.mat();
    const double m = x.row(row).maxCoeff();
    Eigen::RowVectorXd e = (x.row(row).array() - m).exp().matrix();
    const double z = e.sum();
    std::vector<double> out(static_cast<std::size_t>(x.cols()));
    for (Index c = 0; c < x.cols(); ++c) {
        out[static_cast<std::size_t>(c)] = e(c) / z;
    }
    return out;
}

int argmax_lowest(const Tensor& logits, Index row) {
    if (row < 0 || row >= logits.rows()) {
        raise(ErrorKind::Shape, "argmax: row " + std::to_string(row) + " outside " +
                                    logits.shape_string());
    }
    const Mat& x = logits.mat();
    Index best = 0;
    for (Index c = 1; c < x.cols(); ++c) {
        if (x(row, c) > x(row, best)) best = c;
    }
    return static_cast<int>(best);
}

NodeId build_resume_tail(Tape& t, const Model& m, const ForwardTrace& base, int layer, Index p,
                         NodeId h_row) {
    const ModelConfig& cfg = m.config;
    if (layer < 0 || layer >= cfg.n_layers) {
        raise(ErrorKind::Config, "resume: layer " + std::to_string(layer) + " outside " +
                                     std::to_string(cfg.n_layers));
    }
    if (static_cast<int>(base.layers.size()) != cfg.n_layers) {
        raise(ErrorKind::Config, "resume: base trace was not captured");
    }
    const Index rows = base.logits.rows();
    if (p < 0 || p >= rows) {
        raise(ErrorKind::Shape, "resume: position " + std::to_string(p) + " outside " +
                                    std::to_string(rows) + " rows");
    }
    if (t.value(h_row).rows() != 1 || t.value(h_row).cols() != cfg.d_ff) {
        raise(ErrorKind::Shape, "resume: replacement must be 1 x d_ff");
    }

    const auto dh = static_cast<Index>(cfg.head_dim());
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    const Index nsuf = rows - p;

    Tape& tape = t;
    Mat base_row = base.layers[static_cast<std::size_t>(layer)].post_attn.mat().row(p);
    NodeId w2 = tape.constant(m.layers[static_cast<std::size_t>(layer)].w2);
    NodeId row_p = add(tape, tape.constant(Tensor::matrix(std::move(base_row))),
                       matmul(tape, h_row, w2));

    // The clamp only alters the FFN output at p; later rows of this layer's
    // output are untouched (row-wise FFN), so reuse the cached trace there.
    NodeId block = row_p;
    if (nsuf > 1) {
        Mat rest = base.layers[static_cast<std::size_t>(layer)].out.mat().bottomRows(nsuf - 1);
        const std::vector<NodeId> parts{row_p, tape.constant(Tensor::matrix(std::move(rest)))};
        block = concat_rows(tape, parts);
    }

    for (int l = layer + 1; l < cfg.n_layers; ++l) {
        const auto li = static_cast<std::size_t>(l);
        const LayerWeights& lw = m.layers[li];
        const LayerTrace& lt = base.layers[li];

        const NodeId normed =
            rms_norm(tape, block, tape.constant(lw.attn_gain), kRmsEps);
        const NodeId q = matmul(tape, normed, tape.constant(lw.wq));
        const NodeId k_new = matmul(tape, normed, tape.constant(lw.wk));
        const NodeId v_new = matmul(tape, normed, tape.constant(lw.wv));

        NodeId k_all = k_new;
        NodeId v_all = v_new;
        if (p > 0) {
            const NodeId k_prefix = tape.constant(Tensor::matrix(lt.keys.mat().topRows(p)));
            const NodeId v_prefix = tape.constant(Tensor::matrix(lt.values.mat().topRows(p)));
            const std::vector<NodeId> ks{k_prefix, k_new};
            const std::vector<NodeId> vs{v_prefix, v_new};
            k_all = concat_rows(tape, ks);
            v_all = concat_rows(tape, vs);
        }

        // Suffix row i sits at global position p + i and may attend up to it.
        NodeId mask = -1;
        if (nsuf > 1) {
            Mat mvals(nsuf, rows);
            for (Index i = 0; i < nsuf; ++i)
                for (Index j = 0; j < rows; ++j)
                    mvals(i, j) = j <= p + i ? 0.0 : kMaskedScore;
            mask = tape.constant(Tensor::matrix(std::move(mvals)));
        }

        std::vector<NodeId> heads;
        for (int h = 0; h < cfg.n_heads; ++h) {
            const Index off = static_cast<Index>(h) * dh;
            const NodeId qh = slice_cols(tape, q, off, dh);
            const NodeId kh = slice_cols(tape, k_all, off, dh);
            const NodeId vh = slice_cols(tape, v_all, off, dh);
            NodeId scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt_dh);
            if (mask != -1) scores = add(tape, scores, mask);
            heads.push_back(matmul(tape, softmax_rows(tape, scores), vh));
        }
        const NodeId att = matmul(tape, concat_cols(tape, heads), tape.constant(lw.wo));
        block = add(tape, block, att);

        const NodeId ffn_in = rms_norm(tape, block, tape.constant(lw.ffn_gain), kRmsEps);
        const NodeId h = silu(tape, matmul(tape, ffn_in, tape.constant(lw.w1)));
        block = add(tape, block, matmul(tape, h, tape.constant(lw.w2)));
    }

    const NodeId final_norm = rms_norm(tape, block, tape.constant(m.final_gain), kRmsEps);
    return matmul(tape, final_norm, tape.constant(m.head));
}

} // namespace knpl::model
