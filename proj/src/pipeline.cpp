#include "knpl/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "knpl/checkpoint.hpp"
#include "knpl/error.hpp"
#include "knpl/heatmap.hpp"
#include "knpl/rng.hpp"
#include "knpl/stats.hpp"

namespace knpl::pipeline {

using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

std::string dec(std::uint64_t v) { return std::to_string(v); }

std::string join_names(const std::vector<std::string>& parts) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += ',';
        out += parts[i];
    }
    return out;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur += c;
        }
    }
    if (!cur.empty() || !out.empty()) out.push_back(cur);
    // a trailing empty cell only appears for a dangling comma
    if (!out.empty() && out.back().empty()) out.pop_back();
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << body;
    out.flush();
    if (!out) raise(ErrorKind::Io, "short write to " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::Io, "cannot open " + path.string());
    std::ostringstream body;
    body << in.rdbuf();
    return body.str();
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

json parse_line(const std::filesystem::path& path, const std::string& line) {
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object())
        raise(ErrorKind::Parse, path.string() + ": bad record: " + line);
    return rec;
}

// Deterministic work splitting: chunked threads, results land in caller-owned
// slots indexed by task id, so the merge order never depends on scheduling.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    std::vector<std::thread> pool;
    std::mutex err_mu;
    std::exception_ptr first_error;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            const std::size_t lo = n * w / workers;
            const std::size_t hi = n * (w + 1) / workers;
            for (std::size_t i = lo; i < hi; ++i) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// Known schema; from_kv rejects anything outside it so typos cannot silently
// fall back to defaults.
const std::map<std::string, std::set<std::string>>& config_schema() {
    static const std::map<std::string, std::set<std::string>> schema = {
        {"world",
         {"seed", "n_entities", "n_relations", "n_two_hop", "demo_pool", "demos_per_instance",
          "multi_word_fraction"}},
        {"arch", {"n_layers", "d_model", "d_ff", "n_heads", "max_seq_len"}},
        {"train",
         {"seed", "epochs", "learning_rate", "lr_schedule", "batch_rows", "optimizer", "beta1",
          "beta2", "adam_eps", "grad_clip", "two_hop_fraction", "recall_sample",
          "divergence_loss"}},
        {"attribution", {"riemann_steps", "coarse_threshold_ratio", "share_fraction", "baseline"}},
        {"score", {"conditions"}},
        {"intervene", {"enhance_factor", "sample_nocot", "sample_cot", "random_seed"}},
        {"shortcut", {"tau_rel_grid"}},
        {"conflict", {"sample", "seed"}},
        {"report", {"overlap_pairs", "overlap_seed"}},
        {"run", {"jobs", "cache_policy"}},
    };
    return schema;
}

std::vector<std::string> stage_dep_sections(Stage s) {
    switch (s) {
    case Stage::World: return {"world"};
    case Stage::Train: return {"world", "arch", "train"};
    case Stage::Filter: return {"world", "arch", "train"};
    case Stage::Locate: return {"world", "arch", "train", "attribution"};
    case Stage::Score: return {"world", "arch", "train", "attribution", "score"};
    case Stage::Intervene: return {"world", "arch", "train", "attribution", "score", "intervene"};
    case Stage::Shortcut: return {"world", "arch", "train", "attribution", "score", "shortcut"};
    case Stage::Conflict: return {"world", "arch", "train", "attribution", "conflict"};
    case Stage::Report:
        return {"world", "arch", "train", "attribution", "score", "intervene", "shortcut",
                "conflict", "report"};
    }
    raise(ErrorKind::Config, "unknown stage");
}

std::vector<Stage> stage_ancestors(Stage s) {
    switch (s) {
    case Stage::World: return {};
    case Stage::Train: return {Stage::World};
    case Stage::Filter: return {Stage::World, Stage::Train};
    case Stage::Locate: return {Stage::World, Stage::Train, Stage::Filter};
    case Stage::Score: return {Stage::World, Stage::Train, Stage::Filter, Stage::Locate};
    case Stage::Intervene:
    case Stage::Shortcut:
        return {Stage::World, Stage::Train, Stage::Filter, Stage::Locate, Stage::Score};
    case Stage::Conflict: return {Stage::World, Stage::Train, Stage::Filter, Stage::Locate};
    case Stage::Report:
        return {Stage::World,  Stage::Train,    Stage::Filter,   Stage::Locate,
                Stage::Score,  Stage::Intervene, Stage::Shortcut, Stage::Conflict};
    }
    raise(ErrorKind::Config, "unknown stage");
}

std::vector<std::filesystem::path> stage_inputs(Stage s, const RunPaths& p) {
    switch (s) {
    case Stage::World: return {};
    case Stage::Train: return {p.world(), p.instances()};
    case Stage::Filter: return {p.world(), p.instances(), p.checkpoint()};
    case Stage::Locate: return {p.world(), p.instances(), p.checkpoint(), p.filter_log()};
    case Stage::Score:
        return {p.world(), p.instances(), p.checkpoint(), p.filter_log(), p.locate_log(),
                p.kn_sets()};
    case Stage::Intervene:
        return {p.world(), p.instances(), p.checkpoint(), p.filter_log(), p.locate_log(),
                p.kn_sets(), p.two_hop_scores()};
    case Stage::Shortcut: return {p.single_scores(), p.two_hop_scores()};
    case Stage::Conflict:
        return {p.world(), p.instances(), p.checkpoint(), p.filter_log(), p.locate_log(),
                p.kn_sets()};
    case Stage::Report:
        return {p.world(), p.instances(), p.checkpoint(), p.filter_log(), p.locate_log(),
                p.kn_sets(), p.single_scores(), p.two_hop_scores(), p.interventions(),
                p.shortcut_log(), p.conflict_log()};
    }
    raise(ErrorKind::Config, "unknown stage");
}

std::vector<std::filesystem::path> stage_outputs(Stage s, const RunPaths& p) {
    switch (s) {
    case Stage::World: return {p.world(), p.instances()};
    case Stage::Train: return {p.checkpoint(), p.train_log()};
    case Stage::Filter: return {p.filter_log()};
    case Stage::Locate: {
        std::vector<std::filesystem::path> out = {p.kn_sets(), p.locate_log()};
        for (const auto& base : {p.heatmap_attr(), p.heatmap_act()}) {
            out.push_back(base);
            out.push_back(std::filesystem::path(base).replace_extension(".svg"));
            out.push_back(std::filesystem::path(base).replace_extension(".txt"));
        }
        return out;
    }
    case Stage::Score: return {p.single_scores(), p.two_hop_scores()};
    case Stage::Intervene: return {p.interventions()};
    case Stage::Shortcut: return {p.shortcut_log()};
    case Stage::Conflict: return {p.conflict_log()};
    case Stage::Report: return {p.report_json(), p.report_text()};
    }
    raise(ErrorKind::Config, "unknown stage");
}

} // namespace

const std::vector<Stage>& stage_order() {
    static const std::vector<Stage> order = {
        Stage::World,  Stage::Train,     Stage::Filter,   Stage::Locate,   Stage::Score,
        Stage::Intervene, Stage::Shortcut, Stage::Conflict, Stage::Report};
    return order;
}

const char* stage_name(Stage s) {
    switch (s) {
    case Stage::World: return "world";
    case Stage::Train: return "train";
    case Stage::Filter: return "filter";
    case Stage::Locate: return "locate";
    case Stage::Score: return "score";
    case Stage::Intervene: return "intervene";
    case Stage::Shortcut: return "shortcut";
    case Stage::Conflict: return "conflict";
    case Stage::Report: return "report";
    }
    raise(ErrorKind::Config, "unknown stage");
}

Stage stage_from_name(const std::string& name) {
    for (Stage s : stage_order())
        if (name == stage_name(s)) return s;
    raise(ErrorKind::Config, "unknown stage name: " + name);
}

std::uint64_t artifact_hash(const std::filesystem::path& path) {
    return fnv1a64(read_text_file(path));
}

PipelineConfig PipelineConfig::defaults() {
    PipelineConfig cfg;
    cfg.world.n_two_hop = 200;
    cfg.conditions = {corpus::PromptCondition::NoCoT, corpus::PromptCondition::ZeroShotCoT,
                      corpus::PromptCondition::FewShotCoT};
    cfg.tau_rel_grid = {0.5};
    return cfg;
}

void PipelineConfig::validate() const {
    train.validate();
    attribution.validate();
    if (world.n_two_hop < 1) raise(ErrorKind::Config, "need at least one two-hop instance");
    if (arch.n_layers < 1 || arch.d_model < 1 || arch.d_ff < 1 || arch.n_heads < 1)
        raise(ErrorKind::Config, "model dimensions must be positive");
    if (arch.d_model % arch.n_heads != 0)
        raise(ErrorKind::Config, "d_model must divide evenly into heads");
    if (arch.max_seq_len < 8) raise(ErrorKind::Config, "max_seq_len too small");
    std::set<corpus::PromptCondition> uniq(conditions.begin(), conditions.end());
    if (uniq.size() != conditions.size())
        raise(ErrorKind::Config, "duplicate prompt condition");
    if (enhance_factor <= 1.0) raise(ErrorKind::Config, "enhance factor must exceed 1");
    if (intervene_sample_nocot < 0 || intervene_sample_cot < 0 || conflict_sample < 0)
        raise(ErrorKind::Config, "sample sizes cannot be negative");
    std::set<double> taus(tau_rel_grid.begin(), tau_rel_grid.end());
    if (taus.size() != tau_rel_grid.size()) raise(ErrorKind::Config, "duplicate tau_rel value");
    for (double t : tau_rel_grid)
        if (t <= 0.0 || t >= 1.0)
            raise(ErrorKind::Config, "tau_rel must lie strictly inside (0, 1)");
    if (overlap_pairs < 1) raise(ErrorKind::Config, "overlap_pairs must be positive");
    if (jobs < 1) raise(ErrorKind::Config, "jobs must be positive");
    if (cache_policy != "use" && cache_policy != "rebuild")
        raise(ErrorKind::Config, "cache_policy must be use or rebuild");
}

void PipelineConfig::override_master_seed(std::uint64_t seed) {
    world.seed = seed;
    train.seed = derive_seed(seed, "train");
    random_set_seed = derive_seed(seed, "random-sets");
    conflict_seed = derive_seed(seed, "conflict");
    overlap_seed = derive_seed(seed, "overlap");
}

config::KvConfig PipelineConfig::to_kv() const {
    config::KvConfig kv;
    kv.set_u64("world", "seed", world.seed);
    kv.set_int("world", "n_entities", world.n_entities);
    kv.set_int("world", "n_relations", world.n_relations);
    kv.set_int("world", "n_two_hop", world.n_two_hop);
    kv.set_int("world", "demo_pool", world.demo_pool);
    kv.set_int("world", "demos_per_instance", world.demos_per_instance);
    kv.set_double("world", "multi_word_fraction", world.multi_word_fraction);

    kv.set_int("arch", "n_layers", arch.n_layers);
    kv.set_int("arch", "d_model", arch.d_model);
    kv.set_int("arch", "d_ff", arch.d_ff);
    kv.set_int("arch", "n_heads", arch.n_heads);
    kv.set_int("arch", "max_seq_len", arch.max_seq_len);

    kv.set_u64("train", "seed", train.seed);
    kv.set_int("train", "epochs", train.epochs);
    kv.set_double("train", "learning_rate", train.learning_rate);
    kv.set("train", "lr_schedule", train.lr_schedule);
    kv.set_int("train", "batch_rows", train.batch_rows);
    kv.set("train", "optimizer", train.optimizer);
    kv.set_double("train", "beta1", train.beta1);
    kv.set_double("train", "beta2", train.beta2);
    kv.set_double("train", "adam_eps", train.adam_eps);
    kv.set_double("train", "grad_clip", train.grad_clip);
    kv.set_double("train", "two_hop_fraction", train.two_hop_fraction);
    kv.set_int("train", "recall_sample", train.recall_sample);
    kv.set_double("train", "divergence_loss", train.divergence_loss);

    kv.set_int("attribution", "riemann_steps", attribution.riemann_steps);
    kv.set_double("attribution", "coarse_threshold_ratio", attribution.coarse_threshold_ratio);
    kv.set_double("attribution", "share_fraction", attribution.share_fraction);
    kv.set_double("attribution", "baseline", attribution.baseline);

    std::vector<std::string> names;
    for (auto c : conditions) names.push_back(corpus::condition_name(c));
    kv.set("score", "conditions", join_names(names));

    kv.set_double("intervene", "enhance_factor", enhance_factor);
    kv.set_int("intervene", "sample_nocot", intervene_sample_nocot);
    kv.set_int("intervene", "sample_cot", intervene_sample_cot);
    kv.set_u64("intervene", "random_seed", random_set_seed);

    std::vector<std::string> taus;
    for (double t : tau_rel_grid) taus.push_back(format_double(t));
    kv.set("shortcut", "tau_rel_grid", join_names(taus));

    kv.set_int("conflict", "sample", conflict_sample);
    kv.set_u64("conflict", "seed", conflict_seed);

    kv.set_int("report", "overlap_pairs", static_cast<long long>(overlap_pairs));
    kv.set_u64("report", "overlap_seed", overlap_seed);

    kv.set_int("run", "jobs", jobs);
    kv.set("run", "cache_policy", cache_policy);
    return kv;
}

PipelineConfig PipelineConfig::from_kv(const config::KvConfig& kv) {
    const auto& schema = config_schema();
    for (const auto& section : kv.section_names()) {
        auto it = schema.find(section);
        if (it == schema.end())
            raise(ErrorKind::Config, "unknown config section [" + section + "]");
        for (const auto& key : kv.keys(section))
            if (!it->second.count(key))
                raise(ErrorKind::Config, "unknown config key [" + section + "] " + key);
    }

    PipelineConfig cfg = defaults();
    auto geti = [&](const char* s, const char* k, int fallback) {
        return kv.has(s, k) ? static_cast<int>(kv.get_int(s, k)) : fallback;
    };
    auto getd = [&](const char* s, const char* k, double fallback) {
        return kv.has(s, k) ? kv.get_double(s, k) : fallback;
    };
    auto getu = [&](const char* s, const char* k, std::uint64_t fallback) {
        return kv.has(s, k) ? kv.get_u64(s, k) : fallback;
    };
    auto gets = [&](const char* s, const char* k, const std::string& fallback) {
        return kv.get_or(s, k, fallback);
    };

    cfg.world.seed = getu("world", "seed", cfg.world.seed);
    cfg.world.n_entities = geti("world", "n_entities", cfg.world.n_entities);
    cfg.world.n_relations = geti("world", "n_relations", cfg.world.n_relations);
    cfg.world.n_two_hop = geti("world", "n_two_hop", cfg.world.n_two_hop);
    cfg.world.demo_pool = geti("world", "demo_pool", cfg.world.demo_pool);
    cfg.world.demos_per_instance =
        geti("world", "demos_per_instance", cfg.world.demos_per_instance);
    cfg.world.multi_word_fraction =
        getd("world", "multi_word_fraction", cfg.world.multi_word_fraction);

    cfg.arch.n_layers = geti("arch", "n_layers", cfg.arch.n_layers);
    cfg.arch.d_model = geti("arch", "d_model", cfg.arch.d_model);
    cfg.arch.d_ff = geti("arch", "d_ff", cfg.arch.d_ff);
    cfg.arch.n_heads = geti("arch", "n_heads", cfg.arch.n_heads);
    cfg.arch.max_seq_len = geti("arch", "max_seq_len", cfg.arch.max_seq_len);

    cfg.train.seed = getu("train", "seed", cfg.train.seed);
    cfg.train.epochs = geti("train", "epochs", cfg.train.epochs);
    cfg.train.learning_rate = getd("train", "learning_rate", cfg.train.learning_rate);
    cfg.train.lr_schedule = gets("train", "lr_schedule", cfg.train.lr_schedule);
    cfg.train.batch_rows = geti("train", "batch_rows", cfg.train.batch_rows);
    cfg.train.optimizer = gets("train", "optimizer", cfg.train.optimizer);
    cfg.train.beta1 = getd("train", "beta1", cfg.train.beta1);
    cfg.train.beta2 = getd("train", "beta2", cfg.train.beta2);
    cfg.train.adam_eps = getd("train", "adam_eps", cfg.train.adam_eps);
    cfg.train.grad_clip = getd("train", "grad_clip", cfg.train.grad_clip);
    cfg.train.two_hop_fraction = getd("train", "two_hop_fraction", cfg.train.two_hop_fraction);
    cfg.train.recall_sample = geti("train", "recall_sample", cfg.train.recall_sample);
    cfg.train.divergence_loss = getd("train", "divergence_loss", cfg.train.divergence_loss);

    cfg.attribution.riemann_steps =
        geti("attribution", "riemann_steps", cfg.attribution.riemann_steps);
    cfg.attribution.coarse_threshold_ratio =
        getd("attribution", "coarse_threshold_ratio", cfg.attribution.coarse_threshold_ratio);
    cfg.attribution.share_fraction =
        getd("attribution", "share_fraction", cfg.attribution.share_fraction);
    cfg.attribution.baseline = getd("attribution", "baseline", cfg.attribution.baseline);

    if (kv.has("score", "conditions")) {
        cfg.conditions.clear();
        for (const auto& name : split_list(kv.get("score", "conditions")))
            cfg.conditions.push_back(corpus::condition_from_name(name));
    }

    cfg.enhance_factor = getd("intervene", "enhance_factor", cfg.enhance_factor);
    cfg.intervene_sample_nocot = geti("intervene", "sample_nocot", cfg.intervene_sample_nocot);
    cfg.intervene_sample_cot = geti("intervene", "sample_cot", cfg.intervene_sample_cot);
    cfg.random_set_seed = getu("intervene", "random_seed", cfg.random_set_seed);

    if (kv.has("shortcut", "tau_rel_grid")) {
        cfg.tau_rel_grid.clear();
        for (const auto& cell : split_list(kv.get("shortcut", "tau_rel_grid"))) {
            char* end = nullptr;
            const double t = std::strtod(cell.c_str(), &end);
            if (cell.empty() || end != cell.c_str() + cell.size())
                raise(ErrorKind::Parse, "bad tau_rel value: " + cell);
            cfg.tau_rel_grid.push_back(t);
        }
    }

    cfg.conflict_sample = geti("conflict", "sample", cfg.conflict_sample);
    cfg.conflict_seed = getu("conflict", "seed", cfg.conflict_seed);

    cfg.overlap_pairs =
        static_cast<std::size_t>(geti("report", "overlap_pairs",
                                      static_cast<int>(cfg.overlap_pairs)));
    cfg.overlap_seed = getu("report", "overlap_seed", cfg.overlap_seed);

    cfg.jobs = geti("run", "jobs", cfg.jobs);
    cfg.cache_policy = gets("run", "cache_policy", cfg.cache_policy);

    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Runner

namespace {

struct Manifest {
    json stages = json::object();

    static Manifest load(const std::filesystem::path& path) {
        Manifest m;
        if (!std::filesystem::exists(path)) return m;
        json doc = json::parse(read_text_file(path), nullptr, false);
        if (doc.is_discarded() || !doc.is_object() || !doc.contains("stages") ||
            !doc["stages"].is_object())
            return m; // unreadable manifest is treated as no cache at all
        m.stages = doc["stages"];
        return m;
    }

    void save(const std::filesystem::path& path) const {
        json doc;
        doc["schema_version"] = kManifestVersion;
        doc["stages"] = stages;
        write_text_file(path, doc.dump(2) + "\n");
    }
};

// The persisted config holds only the sections that define the experiment;
// execution knobs ([run]) stay out so they can never influence emitted bytes.
config::KvConfig science_config(const PipelineConfig& cfg) {
    const config::KvConfig full = cfg.to_kv();
    config::KvConfig out;
    for (const auto& section : full.section_names()) {
        if (section == "run") continue;
        for (const auto& key : full.keys(section))
            out.set(section, key, full.get(section, key));
    }
    return out;
}

json hash_map_for(const std::vector<std::filesystem::path>& files) {
    json out = json::object();
    for (const auto& f : files) out[f.filename().string()] = dec(artifact_hash(f));
    return out;
}

bool hashes_match(const json& recorded, const std::vector<std::filesystem::path>& files,
                  const std::filesystem::path& dir) {
    if (!recorded.is_object()) return false;
    if (recorded.size() != files.size()) return false;
    for (const auto& f : files) {
        const std::string name = f.filename().string();
        if (!recorded.contains(name)) return false;
        if (!std::filesystem::exists(dir / name)) return false;
        if (recorded[name].get<std::string>() != dec(artifact_hash(dir / name))) return false;
    }
    return true;
}

} // namespace

Runner::Runner(PipelineConfig cfg, std::filesystem::path run_dir) : cfg_(std::move(cfg)) {
    cfg_.validate();
    paths_.dir = std::move(run_dir);
    std::error_code ec;
    std::filesystem::create_directories(paths_.dir, ec);
    if (ec) raise(ErrorKind::Io, "cannot create run directory " + paths_.dir.string());
}

bool Runner::stage_fresh(Stage s) const {
    const Manifest manifest = Manifest::load(paths_.manifest());
    const std::string name = stage_name(s);
    if (!manifest.stages.contains(name)) return false;
    const json& rec = manifest.stages[name];
    if (!rec.is_object()) return false;
    const std::uint64_t dep = cfg_.to_kv().section_hash(stage_dep_sections(s));
    if (rec.value("dep_hash", "") != dec(dep)) return false;
    if (!rec.contains("inputs") || !rec.contains("outputs")) return false;
    try {
        return hashes_match(rec["inputs"], stage_inputs(s, paths_), paths_.dir) &&
               hashes_match(rec["outputs"], stage_outputs(s, paths_), paths_.dir);
    } catch (const Error&) {
        return false; // a vanished file is simply a cold cache
    }
}

void Runner::require_fresh_upstreams(Stage s) const {
    for (Stage anc : stage_ancestors(s))
        if (!stage_fresh(anc))
            raise(ErrorKind::StaleCache,
                  std::string("stage ") + stage_name(s) + " needs stage " + stage_name(anc) +
                      ", which is stale for the current config; rerun it or `all`");
}

void Runner::run_stage(Stage s) {
    write_text_file(paths_.config(), science_config(cfg_).canonical());
    require_fresh_upstreams(s);
    compute(s);
}

void Runner::run_all() {
    write_text_file(paths_.config(), science_config(cfg_).canonical());
    for (Stage s : stage_order()) {
        if (cfg_.cache_policy != "rebuild" && stage_fresh(s)) continue;
        compute(s);
    }
}

void Runner::compute(Stage s) {
    const std::vector<std::filesystem::path> inputs = stage_inputs(s, paths_);
    try {
        switch (s) {
        case Stage::World: stage_world(); break;
        case Stage::Train: stage_train(); break;
        case Stage::Filter: stage_filter(); break;
        case Stage::Locate: stage_locate(); break;
        case Stage::Score: stage_score(); break;
        case Stage::Intervene: stage_intervene(); break;
        case Stage::Shortcut: stage_shortcut(); break;
        case Stage::Conflict: stage_conflict(); break;
        case Stage::Report: stage_report(); break;
        }
    } catch (const Error& e) {
        const std::string what = e.what();
        if (what.rfind("stage ", 0) == 0) throw;
        raise(e.kind(), std::string("stage ") + stage_name(s) + ": " + what);
    }

    Manifest manifest = Manifest::load(paths_.manifest());
    json rec;
    rec["dep_hash"] = dec(cfg_.to_kv().section_hash(stage_dep_sections(s)));
    rec["inputs"] = hash_map_for(inputs);
    rec["outputs"] = hash_map_for(stage_outputs(s, paths_));
    manifest.stages[stage_name(s)] = rec;
    manifest.save(paths_.manifest());

    // Anything this stage rewrote must be reloaded lazily next time.
    world_.reset();
    instances_.reset();
    tokenizer_.reset();
    net_.reset();
    kn_records_.reset();
}

// ---------------------------------------------------------------------------
// Lazy artifact loading

const corpus::World& Runner::world() const {
    if (!world_) world_ = corpus::world_from_jsonl(read_text_file(paths_.world()));
    return *world_;
}

const std::vector<corpus::TwoHopInstance>& Runner::instances() const {
    if (!instances_)
        instances_ = corpus::instances_from_jsonl(read_text_file(paths_.instances()));
    return *instances_;
}

const Tokenizer& Runner::tokenizer() const {
    if (!tokenizer_) tokenizer_ = Tokenizer::build(world().vocabulary());
    return *tokenizer_;
}

const model::Model& Runner::net() const {
    if (!net_) net_ = model::load_checkpoint(paths_.checkpoint());
    return *net_;
}

const std::vector<kn::KnCacheRecord>& Runner::kn_records() const {
    if (!kn_records_)
        kn_records_ = kn::load_kn_cache(paths_.kn_sets(), model::file_hash(paths_.checkpoint()),
                                        kn::config_hash(cfg_.attribution));
    return *kn_records_;
}

// ---------------------------------------------------------------------------
// Stages

void Runner::stage_world() {
    auto [world, instances] = corpus::generate_world(cfg_.world);
    write_text_file(paths_.world(), corpus::world_to_jsonl(world));
    write_text_file(paths_.instances(), corpus::instances_to_jsonl(instances));
}

void Runner::stage_train() {
    train::TrainResult result =
        train::train_model(cfg_.train, cfg_.arch, world(), instances(), tokenizer());
    model::save_checkpoint(result.net, paths_.checkpoint());
    write_text_file(paths_.train_log(), train::format_training_log(result.log));
}

void Runner::stage_filter() {
    const corpus::World& w = world();
    const Tokenizer& tok = tokenizer();
    const model::Model& m = net();

    // Each distinct fact is decoded once; instances reuse the verdicts.
    std::vector<char> knows(w.facts.size(), 0);
    parallel_for(w.facts.size(), cfg_.jobs, [&](std::size_t i) {
        knows[i] = train::knows_fact(m, w.facts[i], w, tok) ? 1 : 0;
    });
    std::map<std::string, bool> by_key;
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < w.facts.size(); ++i) {
        by_key[w.facts[i].key()] = knows[i] != 0;
        json rec;
        rec["kind"] = "filter_fact";
        rec["fact"] = w.facts[i].key();
        rec["knows"] = knows[i] != 0;
        lines.push_back(rec.dump());
    }
    for (const auto& inst : instances()) {
        const bool k1 = by_key.at(inst.fact1.key());
        const bool k2 = by_key.at(inst.fact2.key());
        json rec;
        rec["kind"] = "filter_instance";
        rec["id"] = inst.id;
        rec["knows1"] = k1;
        rec["knows2"] = k2;
        rec["kept"] = k1 && k2;
        lines.push_back(rec.dump());
    }
    std::string body;
    for (const auto& l : lines) body += l + "\n";
    write_text_file(paths_.filter_log(), body);
}

namespace {

// Instance ids whose facts all survived filtering and localization.
std::vector<int> eligible_ids(const RunPaths& paths,
                              const std::vector<corpus::TwoHopInstance>& instances) {
    std::set<int> kept;
    for (const auto& line : read_lines(paths.filter_log())) {
        json rec = parse_line(paths.filter_log(), line);
        if (rec.value("kind", "") == "filter_instance" && rec.value("kept", false))
            kept.insert(rec.at("id").get<int>());
    }
    std::set<std::string> located;
    for (const auto& line : read_lines(paths.locate_log())) {
        json rec = parse_line(paths.locate_log(), line);
        if (rec.value("kind", "") == "locate_fact")
            located.insert(rec.at("fact").get<std::string>());
    }
    std::vector<int> out;
    for (const auto& inst : instances)
        if (kept.count(inst.id) && located.count(inst.fact1.key()) &&
            located.count(inst.fact2.key()))
            out.push_back(inst.id);
    std::sort(out.begin(), out.end());
    return out;
}

std::map<std::string, std::vector<kn::Neuron>> members_by_fact(
    const std::vector<kn::KnCacheRecord>& records) {
    std::map<std::string, std::vector<kn::Neuron>> out;
    for (const auto& rec : records) out[rec.fact_key] = rec.members;
    return out;
}

const corpus::TwoHopInstance& instance_by_id(
    const std::vector<corpus::TwoHopInstance>& instances, int id) {
    for (const auto& inst : instances)
        if (inst.id == id) return inst;
    raise(ErrorKind::Config, "unknown instance id " + std::to_string(id));
}

struct TwoHopDecode {
    std::vector<int> produced;
    bool correct = false;
    double score1 = 0.0;
    double score2 = 0.0;
};

TwoHopDecode decode_two_hop(const model::Model& m, const corpus::World& w,
                            const Tokenizer& tok, const corpus::TwoHopInstance& inst,
                            corpus::PromptCondition condition,
                            const std::vector<corpus::ContextSentence>& contexts,
                            const std::vector<model::HookSpec>& hooks,
                            const std::vector<kn::Neuron>& omega1,
                            const std::vector<kn::Neuron>& omega2, bool capture) {
    const std::vector<int> prompt = corpus::assemble_prompt(inst, condition, contexts, tok);
    const auto gen =
        model::generate_greedy(m, prompt, train::decode_budget(condition), hooks, capture);
    TwoHopDecode out;
    out.produced = train::extract_answer(gen.tokens, tok);
    out.correct = out.produced == corpus::answer_tokens(w, inst.answer, tok);
    if (capture) {
        out.score1 = probe::kn_score(gen.steps, omega1);
        out.score2 = probe::kn_score(gen.steps, omega2);
    }
    return out;
}

[[noreturn]] void tag_instance(int id, const Error& e) {
    raise(e.kind(), "instance " + std::to_string(id) + ": " + e.what());
}

} // namespace

void Runner::stage_locate() {
    const corpus::World& w = world();
    const Tokenizer& tok = tokenizer();
    const model::Model& m = net();

    // Distinct facts of kept instances, ascending by key.
    std::set<int> kept;
    for (const auto& line : read_lines(paths_.filter_log())) {
        json rec = parse_line(paths_.filter_log(), line);
        if (rec.value("kind", "") == "filter_instance" && rec.value("kept", false))
            kept.insert(rec.at("id").get<int>());
    }
    std::map<std::string, corpus::FactTriplet> targets;
    for (const auto& inst : instances()) {
        if (!kept.count(inst.id)) continue;
        targets[inst.fact1.key()] = inst.fact1;
        targets[inst.fact2.key()] = inst.fact2;
    }

    std::vector<corpus::FactTriplet> facts;
    for (const auto& [key, fact] : targets) facts.push_back(fact);

    struct Outcome {
        bool located = false;
        kn::KnCacheRecord record;
        std::string reason;
    };
    std::vector<Outcome> outcomes(facts.size());
    parallel_for(facts.size(), cfg_.jobs, [&](std::size_t i) {
        const auto queries = corpus::render_queries(facts[i], w);
        try {
            kn::KnSet set = kn::identify_kns(m, facts[i], queries, w, tok, cfg_.attribution);
            outcomes[i].located = true;
            outcomes[i].record = kn::to_cache_record(set);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Identification) throw;
            outcomes[i].reason = e.what();
        }
    });

    std::vector<kn::KnCacheRecord> records;
    std::vector<std::string> log_lines;
    for (std::size_t i = 0; i < facts.size(); ++i) {
        if (outcomes[i].located) {
            records.push_back(outcomes[i].record);
            json rec;
            rec["kind"] = "locate_fact";
            rec["fact"] = outcomes[i].record.fact_key;
            rec["members"] = outcomes[i].record.members.size();
            log_lines.push_back(rec.dump());
        } else {
            json rec;
            rec["kind"] = "locate_skip";
            rec["fact"] = facts[i].key();
            rec["reason"] = outcomes[i].reason;
            log_lines.push_back(rec.dump());
        }
    }
    kn::save_kn_cache(paths_.kn_sets(), records, model::file_hash(paths_.checkpoint()),
                      kn::config_hash(cfg_.attribution));
    std::string body;
    for (const auto& l : log_lines) body += l + "\n";
    write_text_file(paths_.locate_log(), body);

    // Sample heatmaps for the first located fact: its attribution map and the
    // activations under its first query.
    if (!records.empty()) {
        const corpus::FactTriplet fact = targets.at(records.front().fact_key);
        const auto queries = corpus::render_queries(fact, w);
        const std::vector<int> prompt = corpus::assemble_fact_prompt(queries.front(), tok);
        const std::vector<int> answer = corpus::answer_tokens(w, fact.o, tok);
        const ad::Mat attr = kn::attribution_map_multi(m, prompt, answer, cfg_.attribution);
        heatmap::emit_heatmap(attr, paths_.heatmap_attr());
        const auto trace = model::forward_with_hooks(m, prompt, {}, true);
        heatmap::emit_heatmap(heatmap::activation_matrix(trace), paths_.heatmap_act());
    } else {
        // No located facts still produces the declared artifact set.
        heatmap::emit_heatmap(ad::Mat::Zero(1, 1), paths_.heatmap_attr());
        heatmap::emit_heatmap(ad::Mat::Zero(1, 1), paths_.heatmap_act());
    }
}

void Runner::stage_score() {
    const corpus::World& w = world();
    const Tokenizer& tok = tokenizer();
    const model::Model& m = net();
    const auto omega = members_by_fact(kn_records());
    const std::vector<int> ids = eligible_ids(paths_, instances());

    // Single-hop baselines per located fact, mean over the query bank.
    std::vector<std::string> fact_keys;
    std::map<std::string, corpus::FactTriplet> fact_of;
    for (const auto& rec : kn_records()) fact_keys.push_back(rec.fact_key);
    for (const auto& inst : instances()) {
        fact_of[inst.fact1.key()] = inst.fact1;
        fact_of[inst.fact2.key()] = inst.fact2;
    }

    struct SingleRow {
        std::string fact;
        int hop = 0;
        std::vector<double> scores;
    };
    std::vector<SingleRow> singles(fact_keys.size());
    parallel_for(fact_keys.size(), cfg_.jobs, [&](std::size_t i) {
        const corpus::FactTriplet fact = fact_of.at(fact_keys[i]);
        const auto& members = omega.at(fact_keys[i]);
        SingleRow row;
        row.fact = fact_keys[i];
        row.hop = w.relation(fact.r).hop;
        for (const auto& query : corpus::render_queries(fact, w)) {
            const std::vector<int> prompt = corpus::assemble_fact_prompt(query, tok);
            const auto gen = model::generate_greedy(
                m, prompt, train::decode_budget(corpus::PromptCondition::NoCoT), {}, true);
            row.scores.push_back(probe::kn_score(gen.steps, members));
        }
        singles[i] = std::move(row);
    });

    std::string body;
    for (const auto& row : singles) {
        double sum = 0.0;
        for (double s : row.scores) sum += s;
        json rec;
        rec["kind"] = "single";
        rec["fact"] = row.fact;
        rec["hop"] = row.hop;
        rec["omega_size"] = omega.at(row.fact).size();
        rec["scores"] = row.scores;
        rec["mean"] = row.scores.empty() ? 0.0 : sum / static_cast<double>(row.scores.size());
        body += rec.dump() + "\n";
    }
    write_text_file(paths_.single_scores(), body);

    // Two-hop decodes per condition, captured for scoring.
    struct Task {
        corpus::PromptCondition condition;
        int id = 0;
    };
    std::vector<Task> tasks;
    for (auto condition : cfg_.conditions)
        for (int id : ids) tasks.push_back({condition, id});
    std::vector<TwoHopDecode> results(tasks.size());
    parallel_for(tasks.size(), cfg_.jobs, [&](std::size_t i) {
        const auto& inst = instance_by_id(instances(), tasks[i].id);
        try {
            results[i] = decode_two_hop(m, w, tok, inst, tasks[i].condition, {}, {},
                                        omega.at(inst.fact1.key()), omega.at(inst.fact2.key()),
                                        true);
        } catch (const Error& e) {
            tag_instance(inst.id, e);
        }
    });

    std::string two_hop_body;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        json rec;
        rec["kind"] = "two_hop";
        rec["condition"] = corpus::condition_name(tasks[i].condition);
        rec["id"] = tasks[i].id;
        rec["produced"] = results[i].produced;
        rec["correct"] = results[i].correct;
        rec["score1"] = results[i].score1;
        rec["score2"] = results[i].score2;
        two_hop_body += rec.dump() + "\n";
    }
    write_text_file(paths_.two_hop_scores(), two_hop_body);
}

void Runner::stage_intervene() {
    const corpus::World& w = world();
    const Tokenizer& tok = tokenizer();
    const model::Model& m = net();
    const auto omega = members_by_fact(kn_records());

    // Base correctness per condition from the score stage.
    std::map<std::string, std::map<int, bool>> base_correct;
    for (const auto& line : read_lines(paths_.two_hop_scores())) {
        json rec = parse_line(paths_.two_hop_scores(), line);
        if (rec.value("kind", "") != "two_hop") continue;
        base_correct[rec.at("condition").get<std::string>()][rec.at("id").get<int>()] =
            rec.at("correct").get<bool>();
    }

    const std::vector<probe::InterventionTarget> targets = {
        probe::InterventionTarget::Omega1, probe::InterventionTarget::Omega2,
        probe::InterventionTarget::Omega12, probe::InterventionTarget::OmegaRandom};

    std::string body;
    for (auto condition : cfg_.conditions) {
        const std::string cname = corpus::condition_name(condition);
        auto it = base_correct.find(cname);
        if (it == base_correct.end()) continue;

        const int cap = condition == corpus::PromptCondition::NoCoT
                            ? cfg_.intervene_sample_nocot
                            : cfg_.intervene_sample_cot;
        std::vector<int> sample_ids;
        for (const auto& [id, correct] : it->second) {
            if (cap > 0 && static_cast<int>(sample_ids.size()) >= cap) break;
            sample_ids.push_back(id);
        }

        train::OmegaPartition part;
        for (int id : sample_ids)
            (it->second.at(id) ? part.omega_t : part.omega_f).push_back(id);
        json prec;
        prec["kind"] = "partition";
        prec["condition"] = cname;
        prec["omega_t"] = part.omega_t;
        prec["omega_f"] = part.omega_f;
        body += prec.dump() + "\n";

        for (auto target : targets) {
            struct Job {
                int id = 0;
                probe::InterventionMode mode;
            };
            std::vector<Job> jobs;
            for (int id : part.omega_f) jobs.push_back({id, probe::InterventionMode::Enhance});
            for (int id : part.omega_t) jobs.push_back({id, probe::InterventionMode::Suppress});

            std::vector<TwoHopDecode> results(jobs.size());
            parallel_for(jobs.size(), cfg_.jobs, [&](std::size_t i) {
                const auto& inst = instance_by_id(instances(), jobs[i].id);
                try {
                    const auto& o1 = omega.at(inst.fact1.key());
                    const auto& o2 = omega.at(inst.fact2.key());
                    const auto o12 = probe::neuron_union(o1, o2);
                    std::vector<kn::Neuron> chosen;
                    if (target == probe::InterventionTarget::OmegaRandom)
                        chosen = probe::random_baseline_neurons(
                            m.config.n_layers, m.config.d_ff, o12, o12.size(),
                            derive_seed(cfg_.random_set_seed,
                                        "omega_r:" + std::to_string(inst.id)));
                    else
                        chosen = probe::resolve_target(target, o1, o2, {});
                    const auto hooks = probe::intervention_hooks(chosen, jobs[i].mode,
                                                                 cfg_.enhance_factor);
                    results[i] = decode_two_hop(m, w, tok, inst, condition, {}, hooks, o1, o2,
                                                false);
                } catch (const Error& e) {
                    tag_instance(inst.id, e);
                }
            });

            for (std::size_t i = 0; i < jobs.size(); ++i) {
                json rec;
                rec["kind"] = "intervention";
                rec["condition"] = cname;
                rec["target"] = probe::target_name(target);
                rec["mode"] = probe::mode_name(jobs[i].mode);
                rec["id"] = jobs[i].id;
                rec["produced"] = results[i].produced;
                rec["correct"] = results[i].correct;
                body += rec.dump() + "\n";
            }
        }
    }
    write_text_file(paths_.interventions(), body);
}

void Runner::stage_shortcut() {
    // Pure post-processing of persisted scores.
    std::map<std::string, std::pair<int, double>> single; // fact -> (hop, mean)
    for (const auto& line : read_lines(paths_.single_scores())) {
        json rec = parse_line(paths_.single_scores(), line);
        if (rec.value("kind", "") != "single") continue;
        single[rec.at("fact").get<std::string>()] = {rec.at("hop").get<int>(),
                                                     rec.at("mean").get<double>()};
    }

    struct Row {
        std::string condition;
        int id = 0;
        bool correct = false;
        double score1 = 0.0, score2 = 0.0;
    };
    std::vector<Row> rows;
    for (const auto& line : read_lines(paths_.two_hop_scores())) {
        json rec = parse_line(paths_.two_hop_scores(), line);
        if (rec.value("kind", "") != "two_hop") continue;
        rows.push_back({rec.at("condition").get<std::string>(), rec.at("id").get<int>(),
                        rec.at("correct").get<bool>(), rec.at("score1").get<double>(),
                        rec.at("score2").get<double>()});
    }

    std::map<int, std::pair<std::string, std::string>> fact_keys; // id -> (fact1, fact2)
    for (const auto& inst : instances())
        fact_keys[inst.id] = {inst.fact1.key(), inst.fact2.key()};

    std::string body;
    for (auto condition : cfg_.conditions) {
        const std::string cname = corpus::condition_name(condition);
        for (double tau : cfg_.tau_rel_grid) {
            for (const auto& row : rows) {
                if (row.condition != cname || !row.correct) continue;
                const auto& [k1, k2] = fact_keys.at(row.id);
                const double b1 = single.at(k1).second;
                const double b2 = single.at(k2).second;
                json rec;
                rec["kind"] = "shortcut";
                rec["condition"] = cname;
                rec["tau_rel"] = tau;
                rec["id"] = row.id;
                if (b1 > 0.0 && b2 > 0.0) {
                    rec["class"] = probe::shortcut_name(
                        probe::classify_shortcut(row.score1, row.score2, b1, b2, tau));
                } else {
                    rec["kind"] = "shortcut_skip";
                    rec["reason"] = "baseline";
                }
                body += rec.dump() + "\n";
            }
        }
    }
    write_text_file(paths_.shortcut_log(), body);
}

void Runner::stage_conflict() {
    const corpus::World& w = world();
    const Tokenizer& tok = tokenizer();
    const model::Model& m = net();
    const auto omega = members_by_fact(kn_records());

    std::vector<int> ids = eligible_ids(paths_, instances());
    if (cfg_.conflict_sample > 0 &&
        static_cast<int>(ids.size()) > cfg_.conflict_sample)
        ids.resize(static_cast<std::size_t>(cfg_.conflict_sample));

    // Context kinds in report order; each scores the hop it interferes with
    // (the distraction sentence targets no hop, so it is read against the
    // answer-determining second hop).
    struct CtxRow {
        std::string context;
        double base_score = 0.0, ctx_score = 0.0;
        bool base_correct = false, ctx_correct = false;
    };
    std::vector<std::array<CtxRow, 3>> results(ids.size());
    parallel_for(ids.size(), cfg_.jobs, [&](std::size_t i) {
        const auto& inst = instance_by_id(instances(), ids[i]);
        try {
            const auto& o1 = omega.at(inst.fact1.key());
            const auto& o2 = omega.at(inst.fact2.key());
            const auto base = decode_two_hop(m, w, tok, inst, corpus::PromptCondition::NoCoT,
                                             {}, {}, o1, o2, true);

            auto scored = [&](const corpus::ContextSentence& ctx,
                              const std::vector<kn::Neuron>& set, double base_score,
                              const char* name) {
                const auto got =
                    decode_two_hop(m, w, tok, inst, corpus::PromptCondition::NoCoT, {ctx}, {},
                                   set, set, true);
                CtxRow row;
                row.context = name;
                row.base_score = base_score;
                row.ctx_score = got.score1; // score1 == score over `set`
                row.base_correct = base.correct;
                row.ctx_correct = got.correct;
                return row;
            };

            const auto c1 = corpus::make_conflict_context(
                inst.fact1, w, derive_seed(cfg_.conflict_seed, "c1:" + std::to_string(inst.id)),
                1);
            const auto c2 = corpus::make_conflict_context(
                inst.fact2, w, derive_seed(cfg_.conflict_seed, "c2:" + std::to_string(inst.id)),
                2);
            const auto dist = corpus::make_distraction_context(
                inst, w, derive_seed(cfg_.conflict_seed, "d:" + std::to_string(inst.id)));

            results[i][0] = scored(c1, o1, base.score1, "conflict1");
            results[i][1] = scored(c2, o2, base.score2, "conflict2");
            results[i][2] = scored(dist, o2, base.score2, "distraction");
        } catch (const Error& e) {
            tag_instance(inst.id, e);
        }
    });

    std::string body;
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const CtxRow& row = results[i][k];
            json rec;
            rec["kind"] = "conflict";
            rec["context"] = row.context;
            rec["id"] = ids[i];
            rec["base_score"] = row.base_score;
            rec["ctx_score"] = row.ctx_score;
            rec["base_correct"] = row.base_correct;
            rec["ctx_correct"] = row.ctx_correct;
            body += rec.dump() + "\n";
        }
    }
    write_text_file(paths_.conflict_log(), body);
}

void Runner::stage_report() {
    const json body = build_report_body(cfg_, paths_);
    write_text_file(paths_.report_json(), body.dump(2) + "\n");
    write_text_file(paths_.report_text(), render_report_text(body));
}

VerifyResult Runner::verify() const {
    VerifyResult out;
    const json stored = json::parse(read_text_file(paths_.report_json()), nullptr, false);
    if (stored.is_discarded()) {
        out.mismatches.push_back("report.json: not parseable");
        return out;
    }
    const json rebuilt = build_report_body(cfg_, paths_);

    // Recursive comparison with json-pointer style paths.
    std::function<void(const std::string&, const json&, const json&)> walk =
        [&](const std::string& path, const json& a, const json& b) {
            // Parsed integers come back unsigned; compare numbers by value.
            if (a.is_number() && b.is_number()) {
                ++out.numbers_checked;
                if (a != b) out.mismatches.push_back(path + ": value differs");
                return;
            }
            if (a.type() != b.type()) {
                out.mismatches.push_back(path + ": type differs");
                return;
            }
            if (a.is_object()) {
                for (auto it = a.begin(); it != a.end(); ++it) {
                    if (!b.contains(it.key())) {
                        out.mismatches.push_back(path + "/" + it.key() + ": missing on rebuild");
                        continue;
                    }
                    walk(path + "/" + it.key(), it.value(), b[it.key()]);
                }
                for (auto it = b.begin(); it != b.end(); ++it)
                    if (!a.contains(it.key()))
                        out.mismatches.push_back(path + "/" + it.key() + ": extra on rebuild");
                return;
            }
            if (a.is_array()) {
                if (a.size() != b.size()) {
                    out.mismatches.push_back(path + ": length differs");
                    return;
                }
                for (std::size_t i = 0; i < a.size(); ++i)
                    walk(path + "/" + std::to_string(i), a[i], b[i]);
                return;
            }
            if (a != b) out.mismatches.push_back(path + ": value differs");
        };
    walk("", stored, rebuilt);

    if (out.mismatches.empty() && stored.dump(2) + "\n" != read_text_file(paths_.report_json()))
        out.mismatches.push_back("report.json: byte-level formatting difference");
    return out;
}

} // namespace knpl::pipeline
