#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "knpl/kn.hpp"
#include "knpl/model.hpp"
#include "knpl/train.hpp"

namespace knpl::probe {

// Which activations enter a score: every captured step's final row (the
// prompt's last token plus each generated token), or only the prompt's.
enum class ScorePositions { PromptAndSteps, LastPromptOnly };

// Flat mean of post-SiLU activations over omega x scored positions. The
// traces must come from captured forwards of the same architecture.
double kn_score(const std::vector<model::ForwardTrace>& steps,
                const std::vector<kn::Neuron>& omega,
                ScorePositions positions = ScorePositions::PromptAndSteps);

struct KnScoreRecord {
    std::string fact_key;
    std::string context; // e.g. "single_hop", "two_hop:no_cot", "conflict:hop1"
    double score = 0.0;
    int positions_used = 0;
};

enum class InterventionTarget { Omega1, Omega2, Omega12, OmegaRandom };
enum class InterventionMode { Enhance, Suppress };

const char* target_name(InterventionTarget t);
const char* mode_name(InterventionMode m);

struct InterventionSpec {
    InterventionTarget target = InterventionTarget::Omega12;
    InterventionMode mode = InterventionMode::Suppress;
    double enhance_factor = 2.0; // Enhance only; must exceed 1

    void validate() const;
};

// Sorted union, for the combined target.
std::vector<kn::Neuron> neuron_union(const std::vector<kn::Neuron>& a,
                                     const std::vector<kn::Neuron>& b);

std::vector<kn::Neuron> resolve_target(InterventionTarget target,
                                       const std::vector<kn::Neuron>& omega1,
                                       const std::vector<kn::Neuron>& omega2,
                                       const std::vector<kn::Neuron>& omega_random);

// Size-matched control neurons drawn uniformly from the grid minus the
// excluded set; deterministic in the seed, returned sorted.
std::vector<kn::Neuron> random_baseline_neurons(int n_layers, int d_ff,
                                                const std::vector<kn::Neuron>& exclude,
                                                std::size_t size, std::uint64_t seed);

// Forward hooks realizing a spec on a target set: Suppress pins the
// activations to zero, Enhance multiplies them. Non-targeted neurons are
// untouched down to the bit.
std::vector<model::HookSpec> intervention_hooks(const std::vector<kn::Neuron>& targets,
                                                InterventionMode mode, double enhance_factor);
std::vector<model::HookSpec> intervention_hooks(const std::vector<kn::Neuron>& targets,
                                                const InterventionSpec& spec);

struct ErSr {
    double enhance_ratio = 0.0;  // percent of wrong instances flipped correct
    double suppress_ratio = 0.0; // percent of correct instances broken
};

// Recounts flips against the base partition. The decode records must cover
// exactly the instances of the corresponding side, in the same order.
ErSr compute_er_sr(const train::OmegaPartition& base,
                   const std::vector<train::DecodeRecord>& post_enhance_on_f,
                   const std::vector<train::DecodeRecord>& post_suppress_on_t);

enum class ShortcutClass { TT, TF, FT, FF };

const char* shortcut_name(ShortcutClass c);
ShortcutClass shortcut_from_name(const std::string& name);

// TT answers used both hop recalls; everything else is a shortcut.
inline bool is_multi_hop(ShortcutClass c) { return c == ShortcutClass::TT; }

// Hop h counts as recalled iff score_h >= tau_rel * baseline_h (ties recall).
ShortcutClass classify_shortcut(double score1, double score2, double baseline1,
                                double baseline2, double tau_rel);

// Percent change of the two-hop score against the single-hop score.
double delta_ratio(double single_hop_score, double two_hop_score);

struct OverlapSummary {
    double avg_size = 0.0;
    double median_size = 0.0;
    double max_size = 0.0;
    double avg_intersection = 0.0;
    double median_intersection = 0.0;
    double max_intersection = 0.0;
};

// Sizes summarize all sets; intersections summarize n_pairs distinct
// unordered pairs sampled deterministically from the seed. Medians of even
// counts average the two middle values.
OverlapSummary pairwise_kn_overlap(const std::vector<std::vector<kn::Neuron>>& kn_sets,
                                   std::size_t n_pairs, std::uint64_t seed);

// One evaluated instance, as persisted to the per-instance result log.
struct InstanceResult {
    int instance_id = 0;
    std::string condition;    // prompt condition name
    std::string intervention; // "base" or "<mode>:<target>"
    std::vector<int> answer_tokens;
    bool correct = false;
    double score1 = 0.0;
    double score2 = 0.0;
    std::string shortcut; // classification name, empty when not classified

    std::string to_json_line() const;
    static InstanceResult from_json_line(const std::string& line);
};

} // namespace knpl::probe
