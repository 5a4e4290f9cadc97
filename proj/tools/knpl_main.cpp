#include <cstdio>
#include <cstdint>
#include <string>

#include <CLI11.hpp>

#include "knpl/config.hpp"
#include "knpl/error.hpp"
#include "knpl/pipeline.hpp"

namespace {

using namespace knpl;

const char* kind_label(ErrorKind k) {
    switch (k) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Graph: return "graph";
    case ErrorKind::NumericDomain: return "numeric-domain";
    case ErrorKind::Config: return "config";
    case ErrorKind::Capacity: return "capacity";
    case ErrorKind::Template: return "template";
    case ErrorKind::Length: return "length";
    case ErrorKind::Training: return "training";
    case ErrorKind::FilteredInput: return "filtered-input";
    case ErrorKind::Identification: return "identification";
    case ErrorKind::EmptySet: return "empty-set";
    case ErrorKind::Conflict: return "conflict";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::Baseline: return "baseline";
    case ErrorKind::Sampling: return "sampling";
    case ErrorKind::DegenerateSample: return "degenerate-sample";
    case ErrorKind::StaleCache: return "stale-cache";
    case ErrorKind::Io: return "io";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Network: return "network";
    }
    return "unknown";
}

int run(const std::string& action, const pipeline::PipelineConfig& cfg,
        const std::string& run_dir) {
    pipeline::Runner runner(cfg, run_dir);

    if (action == "verify") {
        const auto result = runner.verify();
        std::printf("verified %d numbers, %zu discrepancies\n", result.numbers_checked,
                    result.mismatches.size());
        for (const auto& m : result.mismatches) std::printf("  %s\n", m.c_str());
        return result.ok() ? 0 : 1;
    }

    if (action == "all") {
        for (auto s : pipeline::stage_order()) {
            const bool fresh = cfg.cache_policy != "rebuild" && runner.stage_fresh(s);
            std::printf("stage %-9s %s\n", pipeline::stage_name(s), fresh ? "cached" : "run");
            std::fflush(stdout);
            if (!fresh) runner.run_stage(s);
        }
        std::printf("run dir %s is complete\n", run_dir.c_str());
        return 0;
    }

    const auto stage = pipeline::stage_from_name(action);
    runner.run_stage(stage);
    std::printf("stage %s done\n", action.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-hop fact laboratory: train a small transformer, locate the neurons "
                 "expressing each fact, and measure interventions"};
    app.require_subcommand(0, 1);

    std::string config_path;
    std::string run_dir = "run";
    std::string stage_flag;
    std::uint64_t seed = 0;
    int jobs = 0;

    app.add_option("--config", config_path, "sectioned key = value config file")
        ->check(CLI::ExistingFile);
    app.add_option("--run-dir", run_dir, "directory holding every artifact of one run")
        ->envname("KNPL_RUN_DIR");
    auto* seed_opt =
        app.add_option("--seed", seed, "master seed; pins world, train, and sampling seeds");
    auto* jobs_opt = app.add_option("--jobs", jobs, "worker threads for decode-heavy stages")
                         ->check(CLI::PositiveNumber);
    app.add_option("--stage", stage_flag, "run one stage by name (alternative to a subcommand)");

    for (auto s : pipeline::stage_order())
        app.add_subcommand(pipeline::stage_name(s), "run this stage (upstreams must be fresh)");
    app.add_subcommand("all", "run every stage, reusing fresh cached stages");
    app.add_subcommand("verify", "recompute the report from the logs and compare");

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = config_path.empty()
                       ? pipeline::PipelineConfig::defaults()
                       : pipeline::PipelineConfig::from_kv(config::KvConfig::load(config_path));
        if (seed_opt->count() > 0) cfg.override_master_seed(seed);
        if (jobs_opt->count() > 0) cfg.jobs = jobs;

        std::string action;
        if (!app.get_subcommands().empty()) action = app.get_subcommands().front()->get_name();
        if (!stage_flag.empty()) {
            if (!action.empty() && action != stage_flag)
                raise(ErrorKind::Config, "both a subcommand and --stage were given");
            action = stage_flag;
        }
        if (action.empty()) {
            std::fputs(app.help().c_str(), stderr);
            return 2;
        }
        return run(action, cfg, run_dir);
    } catch (const Error& e) {
        std::fprintf(stderr, "error (%s): %s\n", kind_label(e.kind()), e.what());
        return 1;
    }
}
