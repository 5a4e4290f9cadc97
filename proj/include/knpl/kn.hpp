#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "knpl/corpus.hpp"
#include "knpl/model.hpp"
#include "knpl/tape.hpp"
#include "knpl/tokenizer.hpp"

namespace knpl::kn {

using ad::Index;
using ad::Mat;

struct AttributionConfig {
    int riemann_steps = 20;
    double coarse_threshold_ratio = 0.2; // share of the per-query max attribution
    double share_fraction = 0.2;         // fraction of queries a coarse neuron must reach
    double baseline = 0.0;               // path start, as a multiple of the observed activation

    void validate() const;
};

// Stable content hash of the config, for cache invalidation.
std::uint64_t config_hash(const AttributionConfig& cfg);

struct Neuron {
    int layer = 0;
    int index = 0;

    auto operator<=>(const Neuron&) const = default;
};

// Right-endpoint Riemann approximation of the path integral of grad from
// b*w_bar to w_bar: step j evaluates grad at (b + (1-b)*j/N)*w_bar. The same
// rule drives the full attribution maps below; this scalar form exists so the
// quadrature itself can be checked against closed-form integrals.
double integrate_scalar_attribution(double w_bar, int n_steps, double baseline,
                                    const std::function<double(double)>& grad_at);

// Attribution of the target token's softmax probability (read at the final
// row) to every post-SiLU neuron. Each layer is integrated along the straight
// path scaling that layer's activation vector at `position` from baseline to
// its observed value; one backward pass per integration step yields the whole
// layer row. Result is n_layers x d_ff.
Mat attribution_map(const model::Model& m, const std::vector<int>& tokens, int target_token,
                    Index position, const AttributionConfig& cfg);

double attribute_neuron(const model::Model& m, const std::vector<int>& tokens, int target_token,
                        int layer, int index, Index position, const AttributionConfig& cfg);

// Multi-token target: the step-k map attributes P(target[k]) given the query
// extended by k-1 greedily generated tokens, clamping at that prefix's final
// position; the result is the mean of the per-step maps. Generation hitting
// the end marker before the target is exhausted is a length error.
Mat attribution_map_multi(const model::Model& m, const std::vector<int>& query,
                          const std::vector<int>& target, const AttributionConfig& cfg);

double attribute_multi_token(const model::Model& m, const std::vector<int>& query,
                             const std::vector<int>& target, int layer, int index,
                             const AttributionConfig& cfg);

// Entries strictly above ratio * max(attr), sorted by (layer, index).
std::vector<Neuron> coarse_set(const Mat& attr, double ratio);

// Neurons present in at least share_fraction * coarse.size() of the per-query
// coarse sets (count compared inclusively), sorted.
std::vector<Neuron> combine_coarse_sets(const std::vector<std::vector<Neuron>>& coarse,
                                        double share_fraction);

struct KnSet {
    std::string fact_key;
    std::vector<Neuron> members;             // sorted
    std::vector<std::vector<Neuron>> coarse; // per query, sorted

    std::vector<std::size_t> coarse_sizes() const;
};

// Locates the neurons that express one fact: per paraphrase query, the
// multi-token attribution map of the fact's object is thresholded into a
// coarse set, and neurons shared by enough queries survive. An empty result
// raises an identification error carrying the per-query coarse sizes.
KnSet identify_kns(const model::Model& m, const corpus::FactTriplet& fact,
                   const std::vector<std::string>& queries, const corpus::World& world,
                   const Tokenizer& tokenizer, const AttributionConfig& cfg);

// Cache record: what identify_kns found, minus the full coarse sets (only
// their sizes survive serialization).
struct KnCacheRecord {
    std::string fact_key;
    std::vector<Neuron> members;
    std::vector<std::size_t> coarse_sizes;
};

KnCacheRecord to_cache_record(const KnSet& set);

// Line-delimited cache file keyed by checkpoint and config hashes; loading
// with unexpected hashes is a stale-cache error, malformed content a parse
// error. Records are stored and returned sorted by fact key.
void save_kn_cache(const std::filesystem::path& path, const std::vector<KnCacheRecord>& records,
                   std::uint64_t checkpoint_hash, std::uint64_t config_hash);
std::vector<KnCacheRecord> load_kn_cache(const std::filesystem::path& path,
                                         std::uint64_t checkpoint_hash,
                                         std::uint64_t config_hash);

} // namespace knpl::kn
