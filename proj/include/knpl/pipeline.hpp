#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "knpl/config.hpp"
#include "knpl/corpus.hpp"
#include "knpl/kn.hpp"
#include "knpl/model.hpp"
#include "knpl/probe.hpp"
#include "knpl/tokenizer.hpp"
#include "knpl/train.hpp"

namespace knpl::pipeline {

// Typed view of the sectioned run configuration. Defaults describe the
// desk-scale experiment; every seed is explicit so a run is reproducible
// from the serialized form alone.
struct PipelineConfig {
    corpus::WorldParams world;
    model::ModelConfig arch; // vocab_size is derived from the world at train time
    train::TrainConfig train;
    kn::AttributionConfig attribution;

    std::vector<corpus::PromptCondition> conditions;
    double enhance_factor = 2.0;
    int intervene_sample_nocot = 0; // 0 means every eligible instance
    int intervene_sample_cot = 60;
    std::uint64_t random_set_seed = 971;
    std::vector<double> tau_rel_grid;
    int conflict_sample = 40;
    std::uint64_t conflict_seed = 1234;
    std::size_t overlap_pairs = 200;
    std::uint64_t overlap_seed = 4242;

    // Execution knobs; they never influence emitted bytes and are excluded
    // from every cache hash.
    int jobs = 1;
    std::string cache_policy = "use"; // "use" or "rebuild"

    static PipelineConfig defaults();
    static PipelineConfig from_kv(const config::KvConfig& kv); // unknown keys rejected
    config::KvConfig to_kv() const;
    void validate() const;

    // Pins every stage seed from one master seed, keeping them explicit in
    // the serialized config.
    void override_master_seed(std::uint64_t seed);
};

enum class Stage { World, Train, Filter, Locate, Score, Intervene, Shortcut, Conflict, Report };

const std::vector<Stage>& stage_order();
const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);

// Artifact paths inside a run directory, one place so stages and tests agree.
struct RunPaths {
    std::filesystem::path dir;

    std::filesystem::path config() const { return dir / "config.kv"; }
    std::filesystem::path manifest() const { return dir / "manifest.json"; }
    std::filesystem::path world() const { return dir / "world.jsonl"; }
    std::filesystem::path instances() const { return dir / "instances.jsonl"; }
    std::filesystem::path checkpoint() const { return dir / "checkpoint.bin"; }
    std::filesystem::path train_log() const { return dir / "train_log.csv"; }
    std::filesystem::path filter_log() const { return dir / "filter.jsonl"; }
    std::filesystem::path kn_sets() const { return dir / "kn_sets.jsonl"; }
    std::filesystem::path locate_log() const { return dir / "locate.jsonl"; }
    std::filesystem::path heatmap_attr() const { return dir / "heatmap_attr.ppm"; }
    std::filesystem::path heatmap_act() const { return dir / "heatmap_act.ppm"; }
    std::filesystem::path single_scores() const { return dir / "single_scores.jsonl"; }
    std::filesystem::path two_hop_scores() const { return dir / "two_hop_scores.jsonl"; }
    std::filesystem::path interventions() const { return dir / "interventions.jsonl"; }
    std::filesystem::path shortcut_log() const { return dir / "shortcut.jsonl"; }
    std::filesystem::path conflict_log() const { return dir / "conflict.jsonl"; }
    std::filesystem::path report_json() const { return dir / "report.json"; }
    std::filesystem::path report_text() const { return dir / "report.txt"; }
};

struct VerifyResult {
    int numbers_checked = 0;
    std::vector<std::string> mismatches; // json-pointer style paths

    bool ok() const { return mismatches.empty(); }
};

// Executes stages against a run directory with manifest-backed caching.
// A stage is fresh when its recorded dependency hash matches the current
// config and its output files are unchanged on disk; `run_all` recomputes
// exactly the stale suffix, while `run_stage` demands fresh upstreams and
// reports a stale-cache error otherwise. Any failure inside a stage is
// rethrown with the stage name (and instance id where applicable) prefixed.
class Runner {
public:
    Runner(PipelineConfig cfg, std::filesystem::path run_dir);

    const PipelineConfig& config() const { return cfg_; }
    const RunPaths& paths() const { return paths_; }

    bool stage_fresh(Stage s) const;
    void run_stage(Stage s);
    void run_all();
    VerifyResult verify() const;

private:
    void compute(Stage s);
    void require_fresh_upstreams(Stage s) const;

    // Lazily loaded shared artifacts.
    const corpus::World& world() const;
    const std::vector<corpus::TwoHopInstance>& instances() const;
    const Tokenizer& tokenizer() const;
    const model::Model& net() const;
    const std::vector<kn::KnCacheRecord>& kn_records() const;

    void stage_world();
    void stage_train();
    void stage_filter();
    void stage_locate();
    void stage_score();
    void stage_intervene();
    void stage_shortcut();
    void stage_conflict();
    void stage_report();

    PipelineConfig cfg_;
    RunPaths paths_;

    mutable std::optional<corpus::World> world_;
    mutable std::optional<std::vector<corpus::TwoHopInstance>> instances_;
    mutable std::optional<Tokenizer> tokenizer_;
    mutable std::optional<model::Model> net_;
    mutable std::optional<std::vector<kn::KnCacheRecord>> kn_records_;
};

// Report body assembled purely from the persisted per-instance logs; the
// report stage dumps this json and `verify` rebuilds it for comparison.
nlohmann::json build_report_body(const PipelineConfig& cfg, const RunPaths& paths);

// Fixed-format human rendering of the report body.
std::string render_report_text(const nlohmann::json& body);

// fnv-1a of a file's bytes, the hash the manifest stores for outputs.
std::uint64_t artifact_hash(const std::filesystem::path& path);

} // namespace knpl::pipeline
