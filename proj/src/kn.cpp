#include "knpl/kn.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "knpl/error.hpp"
#include "knpl/rng.hpp"

namespace knpl::kn {

namespace {

using ad::NodeId;
using ad::Tape;
using ad::Tensor;
using nlohmann::json;

std::string f17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void AttributionConfig::validate() const {
    if (riemann_steps < 1) raise(ErrorKind::Config, "riemann_steps must be at least 1");
    if (coarse_threshold_ratio <= 0.0 || coarse_threshold_ratio >= 1.0)
        raise(ErrorKind::Config, "coarse_threshold_ratio must lie strictly inside (0, 1)");
    if (share_fraction <= 0.0 || share_fraction > 1.0)
        raise(ErrorKind::Config, "share_fraction must lie in (0, 1]");
    if (baseline < 0.0 || baseline >= 1.0)
        raise(ErrorKind::Config, "baseline must lie in [0, 1)");
}

std::uint64_t config_hash(const AttributionConfig& cfg) {
    std::string canon = "baseline=" + f17(cfg.baseline) +
                        ";coarse_threshold_ratio=" + f17(cfg.coarse_threshold_ratio) +
                        ";riemann_steps=" + std::to_string(cfg.riemann_steps) +
                        ";share_fraction=" + f17(cfg.share_fraction);
    return fnv1a64(canon);
}

double integrate_scalar_attribution(double w_bar, int n_steps, double baseline,
                                    const std::function<double(double)>& grad_at) {
    if (n_steps < 1) raise(ErrorKind::Config, "riemann_steps must be at least 1");
    if (baseline < 0.0 || baseline >= 1.0)
        raise(ErrorKind::Config, "baseline must lie in [0, 1)");
    if (!std::isfinite(w_bar))
        raise(ErrorKind::NumericDomain, "activation is not finite");
    const auto n = static_cast<double>(n_steps);
    double sum = 0.0;
    for (int j = 1; j <= n_steps; ++j) {
        const double alpha = baseline + (1.0 - baseline) * (static_cast<double>(j) / n);
        sum += grad_at(alpha * w_bar);
    }
    return w_bar * (1.0 - baseline) / n * sum;
}

Mat attribution_map(const model::Model& m, const std::vector<int>& tokens, int target_token,
                    Index position, const AttributionConfig& cfg) {
    cfg.validate();
    if (target_token < 0 || target_token >= m.config.vocab_size)
        raise(ErrorKind::Config,
              "target token " + std::to_string(target_token) + " outside the vocabulary");

    const model::ForwardTrace base = model::forward_with_hooks(m, tokens, {}, true);
    const Index rows = base.logits.rows();
    if (position < 0 || position >= rows)
        raise(ErrorKind::Shape, "attribution position " + std::to_string(position) +
                                    " outside " + std::to_string(rows) + " rows");

    const int n_steps = cfg.riemann_steps;
    const double b = cfg.baseline;
    Mat out(m.config.n_layers, m.config.d_ff);
    for (int l = 0; l < m.config.n_layers; ++l) {
        const Mat w_bar = base.layers[static_cast<std::size_t>(l)].ffn.mat().row(position);
        if (!w_bar.allFinite())
            raise(ErrorKind::NumericDomain, "activation at the clamp position is not finite");

        Mat grad_sum = Mat::Zero(1, w_bar.cols());
        for (int j = 1; j <= n_steps; ++j) {
            const double alpha =
                b + (1.0 - b) * (static_cast<double>(j) / static_cast<double>(n_steps));
            Tape t;
            const NodeId h = t.leaf(Tensor::matrix(alpha * w_bar), true);
            const NodeId logits = model::build_resume_tail(t, m, base, l, position, h);
            const NodeId probs = softmax_rows(t, logits);
            const NodeId p_target =
                pick(t, probs, t.value(logits).rows() - 1, static_cast<Index>(target_token));
            const std::vector<NodeId> wrt{h};
            grad_sum += t.grad(p_target, wrt)[0].mat();
        }
        out.row(l) = w_bar.cwiseProduct(grad_sum) * ((1.0 - b) / static_cast<double>(n_steps));
    }
    return out;
}

double attribute_neuron(const model::Model& m, const std::vector<int>& tokens, int target_token,
                        int layer, int index, Index position, const AttributionConfig& cfg) {
    if (layer < 0 || layer >= m.config.n_layers)
        raise(ErrorKind::Config, "layer " + std::to_string(layer) + " outside the model");
    if (index < 0 || index >= m.config.d_ff)
        raise(ErrorKind::Config, "neuron " + std::to_string(index) + " outside d_ff");
    return attribution_map(m, tokens, target_token, position, cfg)(layer, index);
}

Mat attribution_map_multi(const model::Model& m, const std::vector<int>& query,
                          const std::vector<int>& target, const AttributionConfig& cfg) {
    cfg.validate();
    if (target.empty()) raise(ErrorKind::Length, "multi-token target is empty");
    const auto m_steps = static_cast<int>(target.size());
    if (static_cast<int>(query.size()) + m_steps - 1 > m.config.max_seq_len)
        raise(ErrorKind::Length, "query of " + std::to_string(query.size()) + " plus " +
                                     std::to_string(m_steps - 1) +
                                     " generated tokens exceeds max length " +
                                     std::to_string(m.config.max_seq_len));

    // The step-k prefix extends the query with the model's own greedy tokens,
    // not the target; an end marker inside that prefix means generation
    // stopped before the target was exhausted.
    std::vector<int> prefix = query;
    if (m_steps > 1) {
        const model::GreedyResult gen = model::generate_greedy(m, query, m_steps - 1, {}, false);
        if (gen.hit_end)
            raise(ErrorKind::Length, "generation halted after " +
                                         std::to_string(gen.tokens.size()) + " of " +
                                         std::to_string(m_steps - 1) + " prefix tokens");
        prefix.insert(prefix.end(), gen.tokens.begin(), gen.tokens.end());
    }

    Mat acc = Mat::Zero(m.config.n_layers, m.config.d_ff);
    for (int k = 0; k < m_steps; ++k) {
        const auto len = query.size() + static_cast<std::size_t>(k);
        const std::vector<int> step_prefix(prefix.begin(),
                                           prefix.begin() + static_cast<std::ptrdiff_t>(len));
        acc += attribution_map(m, step_prefix, target[static_cast<std::size_t>(k)],
                               static_cast<Index>(len) - 1, cfg);
    }
    return acc / static_cast<double>(m_steps);
}

double attribute_multi_token(const model::Model& m, const std::vector<int>& query,
                             const std::vector<int>& target, int layer, int index,
                             const AttributionConfig& cfg) {
    if (layer < 0 || layer >= m.config.n_layers)
        raise(ErrorKind::Config, "layer " + std::to_string(layer) + " outside the model");
    if (index < 0 || index >= m.config.d_ff)
        raise(ErrorKind::Config, "neuron " + std::to_string(index) + " outside d_ff");
    return attribution_map_multi(m, query, target, cfg)(layer, index);
}

std::vector<Neuron> coarse_set(const Mat& attr, double ratio) {
    if (attr.size() == 0) raise(ErrorKind::Shape, "empty attribution map");
    if (ratio <= 0.0 || ratio >= 1.0)
        raise(ErrorKind::Config, "coarse_threshold_ratio must lie strictly inside (0, 1)");
    if (!attr.allFinite()) raise(ErrorKind::NumericDomain, "attribution map is not finite");
    const double cutoff = ratio * attr.maxCoeff();
    std::vector<Neuron> out;
    for (Index l = 0; l < attr.rows(); ++l)
        for (Index i = 0; i < attr.cols(); ++i)
            if (attr(l, i) > cutoff)
                out.push_back({static_cast<int>(l), static_cast<int>(i)});
    return out;
}

std::vector<Neuron> combine_coarse_sets(const std::vector<std::vector<Neuron>>& coarse,
                                        double share_fraction) {
    if (coarse.empty()) raise(ErrorKind::Config, "no coarse sets to combine");
    if (share_fraction <= 0.0 || share_fraction > 1.0)
        raise(ErrorKind::Config, "share_fraction must lie in (0, 1]");
    std::map<Neuron, int> counts;
    for (const std::vector<Neuron>& set : coarse)
        for (const Neuron& n : set) counts[n] += 1;
    const double need = share_fraction * static_cast<double>(coarse.size());
    std::vector<Neuron> out;
    for (const auto& [neuron, count] : counts)
        if (static_cast<double>(count) >= need) out.push_back(neuron);
    return out; // map iteration is already (layer, index) sorted
}

std::vector<std::size_t> KnSet::coarse_sizes() const {
    std::vector<std::size_t> out;
    out.reserve(coarse.size());
    for (const std::vector<Neuron>& set : coarse) out.push_back(set.size());
    return out;
}

KnSet identify_kns(const model::Model& m, const corpus::FactTriplet& fact,
                   const std::vector<std::string>& queries, const corpus::World& world,
                   const Tokenizer& tokenizer, const AttributionConfig& cfg) {
    cfg.validate();
    if (queries.empty()) raise(ErrorKind::Config, "identification needs at least one query");
    const std::vector<int> target = corpus::answer_tokens(world, fact.o, tokenizer);

    KnSet out;
    out.fact_key = fact.key();
    for (const std::string& q : queries) {
        const Mat attr =
            attribution_map_multi(m, corpus::assemble_fact_prompt(q, tokenizer), target, cfg);
        out.coarse.push_back(coarse_set(attr, cfg.coarse_threshold_ratio));
    }
    out.members = combine_coarse_sets(out.coarse, cfg.share_fraction);
    if (out.members.empty()) {
        std::string diag = "no neuron crossed the share threshold for " + out.fact_key +
                           "; per-query coarse sizes:";
        for (std::size_t s : out.coarse_sizes()) diag += " " + std::to_string(s);
        raise(ErrorKind::Identification, diag);
    }
    return out;
}

KnCacheRecord to_cache_record(const KnSet& set) {
    return {set.fact_key, set.members, set.coarse_sizes()};
}

namespace {

json neuron_list_json(const std::vector<Neuron>& members) {
    json arr = json::array();
    for (const Neuron& n : members) arr.push_back(json::array({n.layer, n.index}));
    return arr;
}

std::vector<Neuron> neuron_list_from_json(const json& arr, const std::string& where) {
    if (!arr.is_array()) raise(ErrorKind::Parse, where + ": members must be an array");
    std::vector<Neuron> out;
    for (const json& e : arr) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() ||
            !e[1].is_number_integer())
            raise(ErrorKind::Parse, where + ": member entries must be [layer, index]");
        out.push_back({e[0].get<int>(), e[1].get<int>()});
    }
    if (!std::is_sorted(out.begin(), out.end()))
        raise(ErrorKind::Parse, where + ": members must be sorted");
    return out;
}

} // namespace

void save_kn_cache(const std::filesystem::path& path, const std::vector<KnCacheRecord>& records,
                   std::uint64_t checkpoint_hash, std::uint64_t config_hash) {
    std::vector<const KnCacheRecord*> ordered;
    ordered.reserve(records.size());
    for (const KnCacheRecord& r : records) ordered.push_back(&r);
    std::sort(ordered.begin(), ordered.end(),
              [](const KnCacheRecord* a, const KnCacheRecord* b) {
                  return a->fact_key < b->fact_key;
              });

    std::ofstream out(path);
    if (!out) raise(ErrorKind::Io, "cannot write " + path.string());
    json header;
    header["kind"] = "kn_cache";
    header["schema_version"] = 1;
    header["checkpoint"] = std::to_string(checkpoint_hash);
    out << header.dump() << "\n";
    for (const KnCacheRecord* r : ordered) {
        json rec;
        rec["kind"] = "kn";
        rec["fact"] = r->fact_key;
        rec["config"] = std::to_string(config_hash);
        rec["members"] = neuron_list_json(r->members);
        rec["coarse_sizes"] = r->coarse_sizes;
        out << rec.dump() << "\n";
    }
    if (!out) raise(ErrorKind::Io, "failed writing " + path.string());
}

std::vector<KnCacheRecord> load_kn_cache(const std::filesystem::path& path,
                                         std::uint64_t checkpoint_hash,
                                         std::uint64_t config_hash) {
    std::ifstream in(path);
    if (!in) raise(ErrorKind::Io, "cannot read " + path.string());

    std::string line;
    if (!std::getline(in, line)) raise(ErrorKind::Parse, "cache file is empty");
    json header = json::parse(line, nullptr, false);
    if (header.is_discarded() || !header.is_object())
        raise(ErrorKind::Parse, "cache header is not a json object: " + line);
    if (header.value("kind", "") != "kn_cache" || header.value("schema_version", 0) != 1)
        raise(ErrorKind::Parse, "not a knowledge-neuron cache header: " + line);
    if (header.value("checkpoint", "") != std::to_string(checkpoint_hash))
        raise(ErrorKind::StaleCache,
              "cache was built against checkpoint " + header.value("checkpoint", "?") +
                  ", expected " + std::to_string(checkpoint_hash));

    std::vector<KnCacheRecord> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "cache line " + std::to_string(line_no);
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object())
            raise(ErrorKind::Parse, where + ": not a json object");
        if (rec.value("kind", "") != "kn")
            raise(ErrorKind::Parse, where + ": unknown record kind");
        if (rec.value("config", "") != std::to_string(config_hash))
            raise(ErrorKind::StaleCache, where + ": record config hash " +
                                             rec.value("config", "?") + " does not match " +
                                             std::to_string(config_hash));
        KnCacheRecord r;
        if (!rec.contains("fact") || !rec["fact"].is_string())
            raise(ErrorKind::Parse, where + ": missing fact key");
        r.fact_key = rec["fact"].get<std::string>();
        r.members = neuron_list_from_json(rec.value("members", json()), where);
        if (!rec.contains("coarse_sizes") || !rec["coarse_sizes"].is_array())
            raise(ErrorKind::Parse, where + ": missing coarse_sizes");
        for (const json& s : rec["coarse_sizes"]) {
            if (!s.is_number_unsigned())
                raise(ErrorKind::Parse, where + ": coarse_sizes must be non-negative integers");
            r.coarse_sizes.push_back(s.get<std::size_t>());
        }
        if (!out.empty() && !(out.back().fact_key < r.fact_key))
            raise(ErrorKind::Parse, where + ": fact keys out of order");
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace knpl::kn
