#include "knpl/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "knpl/error.hpp"
#include "knpl/rng.hpp"

namespace knpl::probe {

namespace {

using nlohmann::json;

double median_of_sorted(const std::vector<double>& v) {
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

double kn_score(const std::vector<model::ForwardTrace>& steps,
                const std::vector<kn::Neuron>& omega, ScorePositions positions) {
    if (omega.empty()) raise(ErrorKind::EmptySet, "knowledge-neuron set is empty");
    if (steps.empty()) raise(ErrorKind::EmptySet, "no captured decoding steps");

    const std::size_t used =
        positions == ScorePositions::LastPromptOnly ? 1 : steps.size();
    double sum = 0.0;
    for (std::size_t s = 0; s < used; ++s) {
        const model::ForwardTrace& trace = steps[s];
        if (trace.layers.empty())
            raise(ErrorKind::Config, "kn_score needs captured traces");
        for (const kn::Neuron& n : omega) {
            if (n.layer < 0 || n.layer >= static_cast<int>(trace.layers.size()))
                raise(ErrorKind::Config,
                      "neuron layer " + std::to_string(n.layer) + " outside the trace");
            const ad::Tensor& ffn = trace.layers[static_cast<std::size_t>(n.layer)].ffn;
            if (n.index < 0 || n.index >= ffn.cols())
                raise(ErrorKind::Config,
                      "neuron index " + std::to_string(n.index) + " outside the trace");
            sum += ffn.at(ffn.rows() - 1, n.index);
        }
    }
    return sum / (static_cast<double>(omega.size()) * static_cast<double>(used));
}

const char* target_name(InterventionTarget t) {
    switch (t) {
    case InterventionTarget::Omega1: return "omega1";
    case InterventionTarget::Omega2: return "omega2";
    case InterventionTarget::Omega12: return "omega12";
    case InterventionTarget::OmegaRandom: return "omega_r";
    }
    raise(ErrorKind::Config, "unknown intervention target");
}

const char* mode_name(InterventionMode m) {
    switch (m) {
    case InterventionMode::Enhance: return "enhance";
    case InterventionMode::Suppress: return "suppress";
    }
    raise(ErrorKind::Config, "unknown intervention mode");
}

void InterventionSpec::validate() const {
    if (mode == InterventionMode::Enhance && enhance_factor <= 1.0)
        raise(ErrorKind::Config, "enhance factor must exceed 1");
}

std::vector<kn::Neuron> neuron_union(const std::vector<kn::Neuron>& a,
                                     const std::vector<kn::Neuron>& b) {
    if (!std::is_sorted(a.begin(), a.end()) || !std::is_sorted(b.begin(), b.end()))
        raise(ErrorKind::Config, "neuron sets must be sorted");
    std::vector<kn::Neuron> out;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

std::vector<kn::Neuron> resolve_target(InterventionTarget target,
                                       const std::vector<kn::Neuron>& omega1,
                                       const std::vector<kn::Neuron>& omega2,
                                       const std::vector<kn::Neuron>& omega_random) {
    switch (target) {
    case InterventionTarget::Omega1: return omega1;
    case InterventionTarget::Omega2: return omega2;
    case InterventionTarget::Omega12: return neuron_union(omega1, omega2);
    case InterventionTarget::OmegaRandom: return omega_random;
    }
    raise(ErrorKind::Config, "unknown intervention target");
}

std::vector<kn::Neuron> random_baseline_neurons(int n_layers, int d_ff,
                                                const std::vector<kn::Neuron>& exclude,
                                                std::size_t size, std::uint64_t seed) {
    if (n_layers < 1 || d_ff < 1)
        raise(ErrorKind::Config, "baseline grid must be non-empty");
    std::vector<kn::Neuron> pool;
    for (int l = 0; l < n_layers; ++l)
        for (int i = 0; i < d_ff; ++i) {
            const kn::Neuron n{l, i};
            if (!std::binary_search(exclude.begin(), exclude.end(), n)) pool.push_back(n);
        }
    if (size > pool.size())
        raise(ErrorKind::Sampling, "need " + std::to_string(size) +
                                       " control neurons but only " +
                                       std::to_string(pool.size()) + " remain");
    Rng rng(seed);
    const std::vector<std::size_t> picks = rng.sample_without_replacement(pool.size(), size);
    std::vector<kn::Neuron> out;
    out.reserve(size);
    for (std::size_t idx : picks) out.push_back(pool[idx]);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<model::HookSpec> intervention_hooks(const std::vector<kn::Neuron>& targets,
                                                InterventionMode mode, double enhance_factor) {
    std::vector<std::pair<int, int>> coords;
    coords.reserve(targets.size());
    for (const kn::Neuron& n : targets) coords.emplace_back(n.layer, n.index);
    if (mode == InterventionMode::Suppress)
        return {model::HookSpec::zero(std::move(coords))};
    if (enhance_factor <= 1.0)
        raise(ErrorKind::Config, "enhance factor must exceed 1");
    return {model::HookSpec::scale(enhance_factor, std::move(coords))};
}

std::vector<model::HookSpec> intervention_hooks(const std::vector<kn::Neuron>& targets,
                                                const InterventionSpec& spec) {
    spec.validate();
    return intervention_hooks(targets, spec.mode, spec.enhance_factor);
}

ErSr compute_er_sr(const train::OmegaPartition& base,
                   const std::vector<train::DecodeRecord>& post_enhance_on_f,
                   const std::vector<train::DecodeRecord>& post_suppress_on_t) {
    if (base.omega_f.empty())
        raise(ErrorKind::UndefinedMetric, "enhance ratio undefined: no wrong instances");
    if (base.omega_t.empty())
        raise(ErrorKind::UndefinedMetric, "suppress ratio undefined: no correct instances");
    if (post_enhance_on_f.size() != base.omega_f.size() ||
        post_suppress_on_t.size() != base.omega_t.size())
        raise(ErrorKind::Config, "decode records do not cover the partition");

    std::size_t flipped_correct = 0;
    for (std::size_t i = 0; i < post_enhance_on_f.size(); ++i) {
        if (post_enhance_on_f[i].instance_id != base.omega_f[i])
            raise(ErrorKind::Config, "enhance records out of step with the partition");
        if (post_enhance_on_f[i].correct) ++flipped_correct;
    }
    std::size_t broken = 0;
    for (std::size_t i = 0; i < post_suppress_on_t.size(); ++i) {
        if (post_suppress_on_t[i].instance_id != base.omega_t[i])
            raise(ErrorKind::Config, "suppress records out of step with the partition");
        if (!post_suppress_on_t[i].correct) ++broken;
    }
    return {100.0 * static_cast<double>(flipped_correct) /
                static_cast<double>(base.omega_f.size()),
            100.0 * static_cast<double>(broken) / static_cast<double>(base.omega_t.size())};
}

const char* shortcut_name(ShortcutClass c) {
    switch (c) {
    case ShortcutClass::TT: return "TT";
    case ShortcutClass::TF: return "TF";
    case ShortcutClass::FT: return "FT";
    case ShortcutClass::FF: return "FF";
    }
    raise(ErrorKind::Config, "unknown shortcut class");
}

ShortcutClass shortcut_from_name(const std::string& name) {
    if (name == "TT") return ShortcutClass::TT;
    if (name == "TF") return ShortcutClass::TF;
    if (name == "FT") return ShortcutClass::FT;
    if (name == "FF") return ShortcutClass::FF;
    raise(ErrorKind::Parse, "unknown shortcut class: " + name);
}

ShortcutClass classify_shortcut(double score1, double score2, double baseline1,
                                double baseline2, double tau_rel) {
    if (!(baseline1 > 0.0) || !(baseline2 > 0.0))
        raise(ErrorKind::Baseline, "single-hop baselines must be positive");
    if (tau_rel <= 0.0 || tau_rel >= 1.0)
        raise(ErrorKind::Config, "relative threshold must lie strictly inside (0, 1)");
    const bool recalled1 = score1 >= tau_rel * baseline1;
    const bool recalled2 = score2 >= tau_rel * baseline2;
    if (recalled1) return recalled2 ? ShortcutClass::TT : ShortcutClass::TF;
    return recalled2 ? ShortcutClass::FT : ShortcutClass::FF;
}

double delta_ratio(double single_hop_score, double two_hop_score) {
    if (single_hop_score == 0.0)
        raise(ErrorKind::UndefinedMetric, "percent change against a zero score");
    return 100.0 * (two_hop_score - single_hop_score) / single_hop_score;
}

OverlapSummary pairwise_kn_overlap(const std::vector<std::vector<kn::Neuron>>& kn_sets,
                                   std::size_t n_pairs, std::uint64_t seed) {
    if (kn_sets.size() < 2)
        raise(ErrorKind::Config, "overlap needs at least two sets");
    if (n_pairs < 1) raise(ErrorKind::Config, "overlap needs at least one pair");
    for (const auto& set : kn_sets)
        if (!std::is_sorted(set.begin(), set.end()))
            raise(ErrorKind::Config, "neuron sets must be sorted");

    const std::size_t n = kn_sets.size();
    const std::size_t total_pairs = n * (n - 1) / 2;
    if (n_pairs > total_pairs)
        raise(ErrorKind::Sampling, "requested " + std::to_string(n_pairs) + " pairs but only " +
                                       std::to_string(total_pairs) + " exist");

    std::vector<double> sizes;
    sizes.reserve(n);
    for (const auto& set : kn_sets) sizes.push_back(static_cast<double>(set.size()));
    std::sort(sizes.begin(), sizes.end());

    Rng rng(seed);
    const std::vector<std::size_t> picks =
        rng.sample_without_replacement(total_pairs, n_pairs);
    std::vector<double> inters;
    inters.reserve(n_pairs);
    for (std::size_t flat : picks) {
        // unrank the lexicographic pair index (i, j), i < j
        std::size_t i = 0;
        std::size_t before = 0;
        while (before + (n - 1 - i) <= flat) {
            before += n - 1 - i;
            ++i;
        }
        const std::size_t j = i + 1 + (flat - before);
        std::vector<kn::Neuron> common;
        std::set_intersection(kn_sets[i].begin(), kn_sets[i].end(), kn_sets[j].begin(),
                              kn_sets[j].end(), std::back_inserter(common));
        inters.push_back(static_cast<double>(common.size()));
    }
    std::sort(inters.begin(), inters.end());

    OverlapSummary out;
    out.avg_size = std::accumulate(sizes.begin(), sizes.end(), 0.0) /
                   static_cast<double>(sizes.size());
    out.median_size = median_of_sorted(sizes);
    out.max_size = sizes.back();
    out.avg_intersection = std::accumulate(inters.begin(), inters.end(), 0.0) /
                           static_cast<double>(inters.size());
    out.median_intersection = median_of_sorted(inters);
    out.max_intersection = inters.back();
    return out;
}

std::string InstanceResult::to_json_line() const {
    json rec;
    rec["kind"] = "instance";
    rec["id"] = instance_id;
    rec["condition"] = condition;
    rec["intervention"] = intervention;
    rec["answer_tokens"] = answer_tokens;
    rec["correct"] = correct;
    rec["score1"] = score1;
    rec["score2"] = score2;
    rec["shortcut"] = shortcut;
    return rec.dump();
}

InstanceResult InstanceResult::from_json_line(const std::string& line) {
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object())
        raise(ErrorKind::Parse, "instance record is not a json object: " + line);
    if (rec.value("kind", "") != "instance")
        raise(ErrorKind::Parse, "not an instance record: " + line);
    InstanceResult out;
    try {
        out.instance_id = rec.at("id").get<int>();
        out.condition = rec.at("condition").get<std::string>();
        out.intervention = rec.at("intervention").get<std::string>();
        out.answer_tokens = rec.at("answer_tokens").get<std::vector<int>>();
        out.correct = rec.at("correct").get<bool>();
        out.score1 = rec.at("score1").get<double>();
        out.score2 = rec.at("score2").get<double>();
        out.shortcut = rec.at("shortcut").get<std::string>();
    } catch (const json::exception& e) {
        raise(ErrorKind::Parse, std::string("bad instance record: ") + e.what());
    }
    return out;
}

} // namespace knpl::probe
