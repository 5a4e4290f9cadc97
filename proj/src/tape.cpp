#include "knpl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <unordered_map>

#include "knpl/error.hpp"

namespace knpl::ad {

namespace {

const char* op_name(OpKind k) {
    switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Silu: return "silu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::RmsNorm: return "rms_norm";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::ConcatRows: return "concat_rows";
    case OpKind::Pick: return "pick";
    case OpKind::OverrideRow: return "override_row";
    case OpKind::HookApply: return "hook_apply";
    }
    return "unknown";
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct Computed {
    Tensor value;
    Tensor saved;
};

Computed compute_node(OpKind kind, const OpParams& params, const std::vector<const Tensor*>& in) {
    switch (kind) {
    case OpKind::MatMul: {
        const Mat& a = in[0]->mat();
        const Mat& b = in[1]->mat();
        Mat out = a * b;
        return {Tensor::matrix(std::move(out)), Tensor{}};
    }
    case OpKind::Transpose: {
        Mat out = in[0]->mat().transpose();
        return {Tensor::matrix(std::move(out)), Tensor{}};
    }
    case OpKind::Add: {
        Mat out = in[0]->mat() + in[1]->mat();
        return {in[0]->with_same_shape(std::move(out)), Tensor{}};
    }
    case OpKind::Mul: {
        Mat out = in[0]->mat().cwiseProduct(in[1]->mat());
        return {in[0]->with_same_shape(std::move(out)), Tensor{}};
    }
    case OpKind::Scale: {
        const double f = std::get<ScaleParams>(params).factor;
        Mat out = in[0]->mat() * f;
        return {in[0]->with_same_shape(std::move(out)), Tensor{}};
    }
    case OpKind::AddBias: {
        Mat out = in[0]->mat();
        out.rowwise() += in[1]->mat().row(0);
        return {in[0]->with_same_shape(std::move(out)), Tensor{}};
    }
    case OpKind::Silu: {
        const Mat& x = in[0]->mat();
        Mat out(x.rows(), x.cols());
        for (Index r = 0; r < x.rows(); ++r) {
            for (Index c = 0; c < x.cols(); ++c) {
                out(r, c) = x(r, c) * stable_sigmoid(x(r, c));
            }
        }
        return {in[0]->with_same_shape(std::move(out)), Tensor{}};
    }
    case OpKind::Sigmoid: {
        const Mat& x = in[0]->mat();
        Mat out(x.rows(), x.cols());
        for (Index r = 0; r < x.rows(); ++r) {
            for (Index c = 0; c < x.cols(); ++c) {
                out(r, c) = stable_sigmoid(x(r, c));
            }
        }
        return {in[0]->with_same_shape(std::move(out)), Tensor{}};
    }
    case OpKind::RmsNorm: {
        const Mat& x = in[0]->mat();
        const Mat& g = in[1]->mat();
        const double eps = std::get<RmsNormParams>(params).eps;
        const double n = static_cast<double>(x.cols());
        Mat out(x.rows(), x.cols());
        Mat inv_rms(1, x.rows());
        for (Index r = 0; r < x.rows(); ++r) {
            const double ms = x.row(r).squaredNorm() / n;
            const double inv = 1.0 / std::sqrt(ms + eps);
            inv_rms(0, r) = inv;
            out.row(r) = (x.row(r) * inv).cwiseProduct(g.row(0));
        }
        return {in[0]->with_same_shape(std::move(out)), Tensor::matrix(std::move(inv_rms))};
    }
    case OpKind::SoftmaxRows: {
        const Mat& x = in[0]->mat();
        Mat out(x.rows(), x.cols());
        for (Index r = 0; r < x.rows(); ++r) {
            const double m = x.row(r).maxCoeff();
            Eigen::RowVectorXd e = (x.row(r).array() - m).exp().matrix();
            out.row(r) = e / e.sum();
        }
        return {in[0]->with_same_shape(std::move(out)), Tensor{}};
    }
    case OpKind::CrossEntropy: {
        const Mat& x = in[0]->mat();
        const auto& p = std::get<CrossEntropyParams>(params);
        Mat probs(x.rows(), x.cols());
        double total = 0.0;
        double count = 0.0;
        for (Index r = 0; r < x.rows(); ++r) {
            const double m = x.row(r).maxCoeff();
            Eigen::RowVectorXd e = (x.row(r).array() - m).exp().matrix();
            const double z = e.sum();
            probs.row(r) = e / z;
            if (p.mask[static_cast<std::size_t>(r)] != 0.0) {
                const int tgt = p.targets[static_cast<std::size_t>(r)];
                const double logp = x(r, tgt) - m - std::log(z);
                total -= logp;
                count += 1.0;
            }
        }
        return {Tensor::scalar(total / count), Tensor::matrix(std::move(probs))};
    }
    case OpKind::GatherRows: {
        const Mat& x = in[0]->mat();
        const auto& rows = std::get<GatherRowsParams>(params).rows;
        Mat out(static_cast<Index>(rows.size()), x.cols());
        for (std::size_t k = 0; k < rows.size(); ++k) {
            out.row(static_cast<Index>(k)) = x.row(rows[k]);
        }
        return {Tensor::matrix(std::move(out)), Tensor{}};
    }
    case OpKind::Sum:
        return {Tensor::scalar(in[0]->mat().sum()), Tensor{}};
    case OpKind::Mean:
        return {Tensor::scalar(in[0]->mat().mean()), Tensor{}};
    case OpKind::SliceCols: {
        const auto& p = std::get<SliceColsParams>(params);
        Mat out = in[0]->mat().middleCols(p.start, p.count);
        if (in[0]->rank() == 1) {
            return {Tensor::of_shape({p.count}, std::move(out)), Tensor{}};
        }
        return {Tensor::matrix(std::move(out)), Tensor{}};
    }
    case OpKind::ConcatCols: {
        Index cols = 0;
        for (const Tensor* t : in) cols += t->cols();
        Mat out(in[0]->rows(), cols);
        Index at = 0;
        for (const Tensor* t : in) {
            out.middleCols(at, t->cols()) = t->mat();
            at += t->cols();
        }
        return {Tensor::matrix(std::move(out)), Tensor{}};
    }
    case OpKind::ConcatRows: {
        Index rows = 0;
        for (const Tensor* t : in) rows += t->rows();
        Mat out(rows, in[0]->cols());
        Index at = 0;
        for (const Tensor* t : in) {
            out.middleRows(at, t->rows()) = t->mat();
            at += t->rows();
        }
        return {Tensor::matrix(std::move(out)), Tensor{}};
    }
    case OpKind::Pick: {
        const auto& p = std::get<PickParams>(params);
        return {Tensor::scalar(in[0]->mat()(p.row, p.col)), Tensor{}};
    }
    case OpKind::OverrideRow: {
        const auto& p = std::get<OverrideRowParams>(params);
        Mat out = in[0]->mat();
        out.row(p.row) = in[1]->mat().row(0);
        return {Tensor::matrix(std::move(out)), Tensor{}};
    }
    case OpKind::HookApply: {
        const auto& patches = std::get<HookApplyParams>(params).patches;
        Mat out = in[0]->mat();
        for (const ColPatch& p : patches) {
            if (p.zero) {
                out.col(p.col).setZero();
            } else {
                out.col(p.col) *= p.factor;
            }
        }
        return {in[0]->with_same_shape(std::move(out)), Tensor{}};
    }
    case OpKind::Leaf:
        break;
    }
    raise(ErrorKind::Graph, "compute_node: leaf nodes are not recomputable");
}

} // namespace

NodeId Tape::leaf(Tensor value, bool requires_grad) {
    if (!value.all_finite()) {
        raise(ErrorKind::NumericDomain, "leaf: non-finite value");
    }
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

const Node& Tape::node(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
        raise(ErrorKind::Graph, "node id " + std::to_string(id) + " not on tape of size " +
                                    std::to_string(nodes_.size()));
    }
    return nodes_[static_cast<std::size_t>(id)];
}

void Tape::mark_requires_grad(NodeId id) {
    node(id); // range check
    nodes_[static_cast<std::size_t>(id)].requires_grad = true;
}

NodeId Tape::append(OpKind kind, std::vector<NodeId> inputs, OpParams params) {
    std::vector<const Tensor*> in;
    in.reserve(inputs.size());
    for (NodeId id : inputs) {
        in.push_back(&node(id).value);
    }
    Computed c = compute_node(kind, params, in);
    if (!c.value.all_finite()) {
        raise(ErrorKind::NumericDomain, std::string(op_name(kind)) + ": non-finite output");
    }
    Node n;
    n.kind = kind;
    n.inputs = std::move(inputs);
    n.params = std::move(params);
    n.value = std::move(c.value);
    n.saved = std::move(c.saved);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

bool Tape::replay_matches() const {
    for (const Node& n : nodes_) {
        if (n.kind == OpKind::Leaf) continue;
        std::vector<const Tensor*> in;
        in.reserve(n.inputs.size());
        for (NodeId id : n.inputs) {
            in.push_back(&nodes_[static_cast<std::size_t>(id)].value);
        }
        Computed c = compute_node(n.kind, n.params, in);
        if (!c.value.bit_equal(n.value)) return false;
    }
    return true;
}

std::vector<Tensor> Tape::grad(NodeId output, std::span<const NodeId> wrt) const {
    const Node& out_node = node(output);
    if (!out_node.value.is_scalar()) {
        raise(ErrorKind::Graph, "grad: output must be scalar, got shape " +
                                    out_node.value.shape_string());
    }
    for (NodeId id : wrt) {
        node(id); // range check
    }

    // A node is active when gradient should flow into it: it is a wrt
    // target, was marked requires-grad, or feeds one that is.
    std::vector<char> active(nodes_.size(), 0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].requires_grad) active[i] = 1;
    }
    for (NodeId id : wrt) {
        active[static_cast<std::size_t>(id)] = 1;
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (active[i]) continue;
        for (NodeId in : nodes_[i].inputs) {
            if (active[static_cast<std::size_t>(in)]) {
                active[i] = 1;
                break;
            }
        }
    }

    std::vector<Mat> adj(nodes_.size());
    std::vector<char> has_adj(nodes_.size(), 0);
    auto accumulate = [&](NodeId id, const Mat& m) {
        const auto i = static_cast<std::size_t>(id);
        if (!active[i]) return;
        if (!has_adj[i]) {
            adj[i] = m;
            has_adj[i] = 1;
        } else {
            adj[i] += m;
        }
    };

    const auto out_idx = static_cast<std::size_t>(output);
    adj[out_idx] = Mat::Ones(1, 1);
    has_adj[out_idx] = 1;

    for (std::size_t k = out_idx + 1; k-- > 0;) {
        const Node& n = nodes_[k];
        if (!has_adj[k] || n.kind == OpKind::Leaf) continue;
        bool any_active_input = false;
        for (NodeId in : n.inputs) {
            if (active[static_cast<std::size_t>(in)]) {
                any_active_input = true;
                break;
            }
        }
        if (!any_active_input) continue;

        const Mat& g = adj[k];
        switch (n.kind) {
        case OpKind::MatMul: {
            const Mat& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value.mat();
            const Mat& b = nodes_[static_cast<std::size_t>(n.inputs[1])].value.mat();
            accumulate(n.inputs[0], g * b.transpose());
            accumulate(n.inputs[1], a.transpose() * g);
            break;
        }
        case OpKind::Transpose:
            accumulate(n.inputs[0], g.transpose());
            break;
        case OpKind::Add:
            accumulate(n.inputs[0], g);
            accumulate(n.inputs[1], g);
            break;
        case OpKind::Mul: {
            const Mat& a = nodes_[static_cast<std::size_t>(n.inputs[0])].value.mat();
            const Mat& b = nodes_[static_cast<std::size_t>(n.inputs[1])].value.mat();
            accumulate(n.inputs[0], g.cwiseProduct(b));
            accumulate(n.inputs[1], g.cwiseProduct(a));
            break;
        }
        case OpKind::Scale:
            accumulate(n.inputs[0], Mat(g * std::get<ScaleParams>(n.params).factor));
            break;
        case OpKind::AddBias: {
            accumulate(n.inputs[0], g);
            Mat db = g.colwise().sum();
            accumulate(n.inputs[1], db);
            break;
        }
        case OpKind::Silu: {
            const Mat& x = nodes_[static_cast<std::size_t>(n.inputs[0])].value.mat();
            Mat d(x.rows(), x.cols());
            for (Index r = 0; r < x.rows(); ++r) {
                for (Index c = 0; c < x.cols(); ++c) {
                    const double s = stable_sigmoid(x(r, c));
                    d(r, c) = s * (1.0 + x(r, c) * (1.0 - s));
                }
            }
            accumulate(n.inputs[0], g.cwiseProduct(d));
            break;
        }
        case OpKind::Sigmoid: {
            const Mat& y = n.value.mat();
            Mat d = y.cwiseProduct(Mat(Mat::Ones(y.rows(), y.cols()) - y));
            accumulate(n.inputs[0], g.cwiseProduct(d));
            break;
        }
        case OpKind::RmsNorm: {
            const Mat& x = nodes_[static_cast<std::size_t>(n.inputs[0])].value.mat();
            const Mat& gain = nodes_[static_cast<std::size_t>(n.inputs[1])].value.mat();
            const Mat& inv_rms = n.saved.mat();
            const double cols = static_cast<double>(x.cols());
            Mat dx(x.rows(), x.cols());
            Mat dg = Mat::Zero(1, x.cols());
            for (Index r = 0; r < x.rows(); ++r) {
                const double inv = inv_rms(0, r);
                Eigen::RowVectorXd u = g.row(r).cwiseProduct(gain.row(0));
                const double dot = u.dot(x.row(r));
                dx.row(r) = u * inv - x.row(r) * (dot * inv * inv * inv / cols);
                dg.row(0) += g.row(r).cwiseProduct(x.row(r)) * inv;
            }
            accumulate(n.inputs[0], dx);
            accumulate(n.inputs[1], dg);
            break;
        }
        case OpKind::SoftmaxRows: {
            const Mat& y = n.value.mat();
            Mat dx(y.rows(), y.cols());
            for (Index r = 0; r < y.rows(); ++r) {
                const double dot = g.row(r).dot(y.row(r));
                dx.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
            }
            accumulate(n.inputs[0], dx);
            break;
        }
        case OpKind::CrossEntropy: {
            const auto& p = std::get<CrossEntropyParams>(n.params);
            const Mat& probs = n.saved.mat();
            double count = 0.0;
            for (double m : p.mask) count += (m != 0.0) ? 1.0 : 0.0;
            const double gs = g(0, 0);
            Mat dx = Mat::Zero(probs.rows(), probs.cols());
            for (Index r = 0; r < probs.rows(); ++r) {
                if (p.mask[static_cast<std::size_t>(r)] == 0.0) continue;
                dx.row(r) = probs.row(r) * (gs / count);
                dx(r, p.targets[static_cast<std::size_t>(r)]) -= gs / count;
            }
            accumulate(n.inputs[0], dx);
            break;
        }
        case OpKind::GatherRows: {
            const auto& rows = std::get<GatherRowsParams>(n.params).rows;
            const Mat& x = nodes_[static_cast<std::size_t>(n.inputs[0])].value.mat();
            Mat dx = Mat::Zero(x.rows(), x.cols());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                dx.row(rows[i]) += g.row(static_cast<Index>(i));
            }
            accumulate(n.inputs[0], dx);
            break;
        }
        case OpKind::Sum: {
            const Mat& x = nodes_[static_cast<std::size_t>(n.inputs[0])].value.mat();
            accumulate(n.inputs[0], Mat(Mat::Constant(x.rows(), x.cols(), g(0, 0))));
            break;
        }
        case OpKind::Mean: {
            const Mat& x = nodes_[static_cast<std::size_t>(n.inputs[0])].value.mat();
            const double scale = g(0, 0) / static_cast<double>(x.size());
            accumulate(n.inputs[0], Mat(Mat::Constant(x.rows(), x.cols(), scale)));
            break;
        }
        case OpKind::SliceCols: {
            const auto& p = std::get<SliceColsParams>(n.params);
            const Mat& x = nodes_[static_cast<std::size_t>(n.inputs[0])].value.mat();
            Mat dx = Mat::Zero(x.rows(), x.cols());
            dx.middleCols(p.start, p.count) = g;
            accumulate(n.inputs[0], dx);
            break;
        }
        case OpKind::ConcatCols: {
            Index at = 0;
            for (NodeId in : n.inputs) {
                const Index w = nodes_[static_cast<std::size_t>(in)].value.cols();
                accumulate(in, Mat(g.middleCols(at, w)));
                at += w;
            }
            break;
        }
        case OpKind::ConcatRows: {
            Index at = 0;
            for (NodeId in : n.inputs) {
                const Index h = nodes_[static_cast<std::size_t>(in)].value.rows();
                accumulate(in, Mat(g.middleRows(at, h)));
                at += h;
            }
            break;
        }
        case OpKind::Pick: {
            const auto& p = std::get<PickParams>(n.params);
            const Mat& x = nodes_[static_cast<std::size_t>(n.inputs[0])].value.mat();
            Mat dx = Mat::Zero(x.rows(), x.cols());
            dx(p.row, p.col) = g(0, 0);
            accumulate(n.inputs[0], dx);
            break;
        }
        case OpKind::OverrideRow: {
            const auto& p = std::get<OverrideRowParams>(n.params);
            Mat dx = g;
            dx.row(p.row).setZero();
            accumulate(n.inputs[0], dx);
            accumulate(n.inputs[1], Mat(g.row(p.row)));
            break;
        }
        case OpKind::HookApply: {
            const auto& patches = std::get<HookApplyParams>(n.params).patches;
            Mat dx = g;
            for (const ColPatch& p : patches) {
                if (p.zero) {
                    dx.col(p.col).setZero();
                } else {
                    dx.col(p.col) *= p.factor;
                }
            }
            accumulate(n.inputs[0], dx);
            break;
        }
        case OpKind::Leaf:
            break;
        }
    }

    std::vector<Tensor> out;
    out.reserve(wrt.size());
    for (NodeId id : wrt) {
        const auto i = static_cast<std::size_t>(id);
        const Tensor& v = nodes_[i].value;
        if (has_adj[i]) {
            out.push_back(v.with_same_shape(Mat(adj[i])));
        } else {
            out.push_back(v.with_same_shape(Mat(Mat::Zero(v.rows(), v.cols()))));
        }
    }
    return out;
}

// --- builders ---------------------------------------------------------------

namespace {

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() == 0) {
        raise(ErrorKind::Shape, std::string(op) + ": scalar input not allowed");
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        raise(ErrorKind::Shape, std::string(op) + ": shape mismatch " + a.shape_string() +
                                    " vs " + b.shape_string());
    }
}

} // namespace

NodeId matmul(Tape& t, NodeId a, NodeId b) {
    const Tensor& ta = t.value(a);
    const Tensor& tb = t.value(b);
    if (ta.cols() != tb.rows()) {
        raise(ErrorKind::Shape, "matmul: inner dimensions " + ta.shape_string() + " vs " +
                                    tb.shape_string());
    }
    return t.append(OpKind::MatMul, {a, b}, std::monostate{});
}

NodeId transpose(Tape& t, NodeId a) {
    return t.append(OpKind::Transpose, {a}, std::monostate{});
}

NodeId add(Tape& t, NodeId a, NodeId b) {
    require_same_shape(t.value(a), t.value(b), "add");
    return t.append(OpKind::Add, {a, b}, std::monostate{});
}

NodeId mul(Tape& t, NodeId a, NodeId b) {
    require_same_shape(t.value(a), t.value(b), "mul");
    return t.append(OpKind::Mul, {a, b}, std::monostate{});
}

NodeId scale(Tape& t, NodeId a, double factor) {
    if (!std::isfinite(factor)) {
        raise(ErrorKind::NumericDomain, "scale: non-finite factor");
    }
    return t.append(OpKind::Scale, {a}, ScaleParams{factor});
}

NodeId add_bias(Tape& t, NodeId a, NodeId bias) {
    const Tensor& tb = t.value(bias);
    if (tb.rows() != 1 || tb.cols() != t.value(a).cols()) {
        raise(ErrorKind::Shape, "add_bias: bias shape " + tb.shape_string() +
                                    " does not broadcast over " + t.value(a).shape_string());
    }
    return t.append(OpKind::AddBias, {a, bias}, std::monostate{});
}

NodeId silu(Tape& t, NodeId a) {
    return t.append(OpKind::Silu, {a}, std::monostate{});
}

NodeId sigmoid(Tape& t, NodeId a) {
    return t.append(OpKind::Sigmoid, {a}, std::monostate{});
}

NodeId rms_norm(Tape& t, NodeId a, NodeId gain, double eps) {
    const Tensor& tg = t.value(gain);
    require_rank2(t.value(a), "rms_norm");
    if (tg.rows() != 1 || tg.cols() != t.value(a).cols()) {
        raise(ErrorKind::Shape, "rms_norm: gain shape " + tg.shape_string() +
                                    " does not match feature width of " +
                                    t.value(a).shape_string());
    }
    if (!(eps > 0.0)) {
        raise(ErrorKind::NumericDomain, "rms_norm: eps must be positive");
    }
    return t.append(OpKind::RmsNorm, {a, gain}, RmsNormParams{eps});
}

NodeId softmax_rows(Tape& t, NodeId a) {
    require_rank2(t.value(a), "softmax_rows");
    return t.append(OpKind::SoftmaxRows, {a}, std::monostate{});
}

NodeId cross_entropy(Tape& t, NodeId logits, std::vector<int> targets, std::vector<double> mask) {
    const Tensor& tl = t.value(logits);
    const auto rows = static_cast<std::size_t>(tl.rows());
    if (targets.size() != rows || mask.size() != rows) {
        raise(ErrorKind::Shape, "cross_entropy: targets/mask length must equal logit rows");
    }
    double count = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const int tgt = targets[r];
        if (tgt < 0 || tgt >= tl.cols()) {
            raise(ErrorKind::Shape, "cross_entropy: target " + std::to_string(tgt) +
                                        " outside vocab of " + std::to_string(tl.cols()));
        }
        if (mask[r] != 0.0) count += 1.0;
    }
    if (count == 0.0) {
        raise(ErrorKind::Shape, "cross_entropy: mask selects no rows");
    }
    return t.append(OpKind::CrossEntropy, {logits},
                    CrossEntropyParams{std::move(targets), std::move(mask)});
}

NodeId embedding_lookup(Tape& t, NodeId table, const std::vector<int>& ids) {
    const Tensor& tt = t.value(table);
    std::vector<Index> rows;
    rows.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || id >= tt.rows()) {
            raise(ErrorKind::Shape, "embedding_lookup: id " + std::to_string(id) +
                                        " outside table of " + std::to_string(tt.rows()));
        }
        rows.push_back(static_cast<Index>(id));
    }
    return t.append(OpKind::GatherRows, {table}, GatherRowsParams{std::move(rows)});
}

NodeId gather_rows(Tape& t, NodeId a, std::vector<Index> rows) {
    const Tensor& ta = t.value(a);
    for (Index r : rows) {
        if (r < 0 || r >= ta.rows()) {
            raise(ErrorKind::Shape, "gather_rows: row " + std::to_string(r) + " outside " +
                                        ta.shape_string());
        }
    }
    return t.append(OpKind::GatherRows, {a}, GatherRowsParams{std::move(rows)});
}

NodeId sum(Tape& t, NodeId a) {
    return t.append(OpKind::Sum, {a}, std::monostate{});
}

NodeId mean(Tape& t, NodeId a) {
    return t.append(OpKind::Mean, {a}, std::monostate{});
}

NodeId slice_cols(Tape& t, NodeId a, Index start, Index count) {
    const Tensor& ta = t.value(a);
    if (start < 0 || count <= 0 || start + count > ta.cols()) {
        raise(ErrorKind::Shape, "slice_cols: [" + std::to_string(start) + ", " +
                                    std::to_string(start + count) + ") outside " +
                                    ta.shape_string());
    }
    return t.append(OpKind::SliceCols, {a}, SliceColsParams{start, count});
}

NodeId concat_cols(Tape& t, std::span<const NodeId> parts) {
    if (parts.empty()) {
        raise(ErrorKind::Shape, "concat_cols: no inputs");
    }
    const Index rows = t.value(parts[0]).rows();
    for (NodeId id : parts) {
        if (t.value(id).rows() != rows) {
            raise(ErrorKind::Shape, "concat_cols: row mismatch");
        }
    }
    return t.append(OpKind::ConcatCols, {parts.begin(), parts.end()}, std::monostate{});
}

NodeId concat_rows(Tape& t, std::span<const NodeId> parts) {
    if (parts.empty()) {
        raise(ErrorKind::Shape, "concat_rows: no inputs");
    }
    const Index cols = t.value(parts[0]).cols();
    for (NodeId id : parts) {
        if (t.value(id).cols() != cols) {
            raise(ErrorKind::Shape, "concat_rows: column mismatch");
        }
    }
    return t.append(OpKind::ConcatRows, {parts.begin(), parts.end()}, std::monostate{});
}

NodeId pick(Tape& t, NodeId a, Index row, Index col) {
    const Tensor& ta = t.value(a);
    if (row < 0 || row >= ta.rows() || col < 0 || col >= ta.cols()) {
        raise(ErrorKind::Shape, "pick: (" + std::to_string(row) + ", " + std::to_string(col) +
                                    ") outside " + ta.shape_string());
    }
    return t.append(OpKind::Pick, {a}, PickParams{row, col});
}

NodeId override_row(Tape& t, NodeId a, Index row, NodeId values) {
    const Tensor& ta = t.value(a);
    const Tensor& tv = t.value(values);
    if (row < 0 || row >= ta.rows()) {
        raise(ErrorKind::Shape, "override_row: row " + std::to_string(row) + " outside " +
                                    ta.shape_string());
    }
    if (tv.rows() != 1 || tv.cols() != ta.cols()) {
        raise(ErrorKind::Shape, "override_row: values shape " + tv.shape_string() +
                                    " does not match row width of " + ta.shape_string());
    }
    return t.append(OpKind::OverrideRow, {a, values}, OverrideRowParams{row});
}

NodeId hook_apply(Tape& t, NodeId a, std::vector<ColPatch> patches) {
    const Tensor& ta = t.value(a);
    for (const ColPatch& p : patches) {
        if (p.col < 0 || p.col >= ta.cols()) {
            raise(ErrorKind::Shape, "hook_apply: column " + std::to_string(p.col) +
                                        " outside " + ta.shape_string());
        }
        if (!std::isfinite(p.factor)) {
            raise(ErrorKind::NumericDomain, "hook_apply: non-finite factor");
        }
    }
    return t.append(OpKind::HookApply, {a}, HookApplyParams{std::move(patches)});
}

double sigmoid_value(double x) { return stable_sigmoid(x); }
double silu_value(double x) { return x * stable_sigmoid(x); }

} // namespace knpl::ad
