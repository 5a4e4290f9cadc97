#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "knpl/checkpoint.hpp"
#include "knpl/error.hpp"
#include "knpl/pipeline.hpp"
#include "knpl/stats.hpp"

namespace knpl::pipeline {

using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::Io, "cannot open " + path.string());
    std::ostringstream body;
    body << in.rdbuf();
    return body.str();
}

std::vector<json> records_of(const std::filesystem::path& path) {
    std::istringstream in(slurp(path));
    std::vector<json> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object())
            raise(ErrorKind::Parse, path.string() + ": bad record: " + line);
        out.push_back(std::move(rec));
    }
    return out;
}

double mean_of(const std::vector<double>& xs) {
    double sum = 0.0;
    for (double x : xs) sum += x;
    return xs.empty() ? 0.0 : sum / static_cast<double>(xs.size());
}

json null_or(double v, bool ok) { return ok ? json(v) : json(nullptr); }

// Percent change of the two-hop mean against the single-hop mean, null when
// the reference is zero or the group is empty.
json delta_or_null(double single_mean, double two_hop_mean, bool ok) {
    if (!ok || single_mean == 0.0) return nullptr;
    return probe::delta_ratio(single_mean, two_hop_mean);
}

std::string fmt(const json& v, const char* spec = "%.4f") {
    if (v.is_null()) return "-";
    if (v.is_boolean()) return v.get<bool>() ? "yes" : "no";
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v.get<double>());
    return buf;
}

} // namespace

json build_report_body(const PipelineConfig& cfg, const RunPaths& paths) {
    json body;
    body["schema_version"] = 1;
    // Execution knobs ([run]) never reach the report, so runs that differ only
    // in parallelism hash identically.
    body["config_hash"] = std::to_string(cfg.to_kv().section_hash(
        {"world", "arch", "train", "attribution", "score", "intervene", "shortcut", "conflict",
         "report"}));
    body["notes"] = json::array(
        {"scores are flat means of post-activation values over the located set and the "
         "captured decode positions",
         "intervals are symmetric two-sided 95% t-intervals; t-tests are paired and "
         "one-tailed against the raised-score alternative",
         "enhance/suppress ratios are percentages of the respective base partitions"});

    const corpus::World world = corpus::world_from_jsonl(slurp(paths.world()));
    const auto instances = corpus::instances_from_jsonl(slurp(paths.instances()));
    body["world"] = {{"entities", world.entities.size()},
                     {"relations", world.relations.size()},
                     {"facts", world.facts.size()},
                     {"instances", instances.size()}};

    // --- filter --------------------------------------------------------
    int facts_total = 0, facts_known = 0, inst_total = 0, inst_kept = 0;
    for (const auto& rec : records_of(paths.filter_log())) {
        const std::string kind = rec.value("kind", "");
        if (kind == "filter_fact") {
            ++facts_total;
            if (rec.at("knows").get<bool>()) ++facts_known;
        } else if (kind == "filter_instance") {
            ++inst_total;
            if (rec.at("kept").get<bool>()) ++inst_kept;
        }
    }
    body["filter"] = {
        {"facts_total", facts_total},
        {"facts_known", facts_known},
        {"single_hop_recall",
         null_or(facts_total ? static_cast<double>(facts_known) / facts_total : 0.0,
                 facts_total > 0)},
        {"instances_total", inst_total},
        {"instances_kept", inst_kept}};

    // --- locate ---------------------------------------------------------
    int located = 0, skipped = 0;
    double member_sum = 0.0;
    for (const auto& rec : records_of(paths.locate_log())) {
        const std::string kind = rec.value("kind", "");
        if (kind == "locate_fact") {
            ++located;
            member_sum += rec.at("members").get<double>();
        } else if (kind == "locate_skip") {
            ++skipped;
        }
    }
    body["locate"] = {{"facts_located", located},
                      {"facts_skipped", skipped},
                      {"mean_set_size", null_or(located ? member_sum / located : 0.0, located > 0)}};

    // --- single-hop means, keyed by fact --------------------------------
    std::map<std::string, double> single_mean;
    for (const auto& rec : records_of(paths.single_scores()))
        if (rec.value("kind", "") == "single")
            single_mean[rec.at("fact").get<std::string>()] = rec.at("mean").get<double>();

    std::map<int, std::pair<std::string, std::string>> facts_of;
    for (const auto& inst : instances) facts_of[inst.id] = {inst.fact1.key(), inst.fact2.key()};

    // --- two-hop scores by condition (table 1 analogue) -----------------
    struct TwoHopRow {
        int id;
        bool correct;
        double score1, score2;
    };
    std::map<std::string, std::vector<TwoHopRow>> two_hop;
    for (const auto& rec : records_of(paths.two_hop_scores()))
        if (rec.value("kind", "") == "two_hop")
            two_hop[rec.at("condition").get<std::string>()].push_back(
                {rec.at("id").get<int>(), rec.at("correct").get<bool>(),
                 rec.at("score1").get<double>(), rec.at("score2").get<double>()});

    body["table1"] = json::array();
    for (auto condition : cfg.conditions) {
        const std::string cname = corpus::condition_name(condition);
        const auto& rows = two_hop.count(cname) ? two_hop.at(cname) : std::vector<TwoHopRow>{};
        std::vector<double> s1, s2, b1, b2;
        int n_correct = 0;
        for (const auto& row : rows) {
            s1.push_back(row.score1);
            s2.push_back(row.score2);
            b1.push_back(single_mean.at(facts_of.at(row.id).first));
            b2.push_back(single_mean.at(facts_of.at(row.id).second));
            if (row.correct) ++n_correct;
        }
        const bool ok = !rows.empty();
        json row;
        row["condition"] = cname;
        row["n"] = rows.size();
        row["accuracy"] = null_or(ok ? static_cast<double>(n_correct) / rows.size() : 0.0, ok);
        row["mean_score1"] = null_or(mean_of(s1), ok);
        row["mean_score2"] = null_or(mean_of(s2), ok);
        row["single_mean1"] = null_or(mean_of(b1), ok);
        row["single_mean2"] = null_or(mean_of(b2), ok);
        row["delta1"] = delta_or_null(mean_of(b1), mean_of(s1), ok);
        row["delta2"] = delta_or_null(mean_of(b2), mean_of(s2), ok);
        body["table1"].push_back(row);
    }

    // --- interventions (tables 2 and 3 analogue) ------------------------
    struct Flip {
        int enhanced_correct = 0, n_f = 0;
        int suppressed_broken = 0, n_t = 0;
    };
    std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> partitions;
    std::map<std::string, std::map<std::string, Flip>> flips; // condition -> target
    for (const auto& rec : records_of(paths.interventions())) {
        const std::string kind = rec.value("kind", "");
        if (kind == "partition") {
            auto& p = partitions[rec.at("condition").get<std::string>()];
            p.first = rec.at("omega_t").get<std::vector<int>>();
            p.second = rec.at("omega_f").get<std::vector<int>>();
        } else if (kind == "intervention") {
            Flip& f = flips[rec.at("condition").get<std::string>()]
                           [rec.at("target").get<std::string>()];
            const bool correct = rec.at("correct").get<bool>();
            if (rec.at("mode").get<std::string>() == "enhance") {
                ++f.n_f;
                if (correct) ++f.enhanced_correct;
            } else {
                ++f.n_t;
                if (!correct) ++f.suppressed_broken;
            }
        }
    }
    const std::vector<std::string> target_names = {"omega1", "omega2", "omega12", "omega_random"};
    body["table2_3"] = json::array();
    for (auto condition : cfg.conditions) {
        const std::string cname = corpus::condition_name(condition);
        if (!partitions.count(cname)) continue;
        for (const auto& target : target_names) {
            const Flip f =
                flips.count(cname) && flips.at(cname).count(target) ? flips.at(cname).at(target)
                                                                    : Flip{};
            json row;
            row["condition"] = cname;
            row["target"] = target;
            row["n_t"] = f.n_t;
            row["n_f"] = f.n_f;
            const json er = null_or(f.n_f ? 100.0 * f.enhanced_correct / f.n_f : 0.0, f.n_f > 0);
            const json sr =
                null_or(f.n_t ? 100.0 * f.suppressed_broken / f.n_t : 0.0, f.n_t > 0);
            row["er"] = er;
            row["sr"] = sr;
            row["delta_acc_enhance"] = er;
            row["delta_acc_suppress"] = sr.is_null() ? json(nullptr) : json(-sr.get<double>());
            body["table2_3"].push_back(row);
        }
    }

    // --- shortcut classification (table 5 analogue) ----------------------
    struct Shares {
        std::map<std::string, int> by_class;
        int skipped = 0;
    };
    std::map<std::string, std::map<double, Shares>> shortcut; // condition -> tau
    for (const auto& rec : records_of(paths.shortcut_log())) {
        const std::string kind = rec.value("kind", "");
        if (kind == "shortcut")
            ++shortcut[rec.at("condition").get<std::string>()][rec.at("tau_rel").get<double>()]
                  .by_class[rec.at("class").get<std::string>()];
        else if (kind == "shortcut_skip")
            ++shortcut[rec.at("condition").get<std::string>()][rec.at("tau_rel").get<double>()]
                  .skipped;
    }
    body["table5"] = json::array();
    for (auto condition : cfg.conditions) {
        const std::string cname = corpus::condition_name(condition);
        for (double tau : cfg.tau_rel_grid) {
            Shares sh;
            if (shortcut.count(cname) && shortcut.at(cname).count(tau))
                sh = shortcut.at(cname).at(tau);
            int n = 0;
            for (const auto& [cls, count] : sh.by_class) n += count;
            json row;
            row["condition"] = cname;
            row["tau_rel"] = tau;
            row["n"] = n;
            for (const char* cls : {"TT", "TF", "FT", "FF"}) {
                const int count = sh.by_class.count(cls) ? sh.by_class.at(cls) : 0;
                row[std::string("share_") + cls] =
                    null_or(n ? static_cast<double>(count) / n : 0.0, n > 0);
            }
            const int tt = sh.by_class.count("TT") ? sh.by_class.at("TT") : 0;
            row["multi_hop_fraction"] =
                null_or(n ? static_cast<double>(tt) / n : 0.0, n > 0);
            row["shortcut_fraction"] =
                null_or(n ? static_cast<double>(n - tt) / n : 0.0, n > 0);
            row["skipped"] = sh.skipped;
            body["table5"].push_back(row);
        }
    }

    // --- contextual interference (figures 5 and 6 analogue) -------------
    struct CtxAgg {
        std::vector<double> base, ctx;
        int base_correct = 0, ctx_correct = 0;
    };
    std::map<std::string, CtxAgg> contexts;
    for (const auto& rec : records_of(paths.conflict_log())) {
        if (rec.value("kind", "") != "conflict") continue;
        CtxAgg& agg = contexts[rec.at("context").get<std::string>()];
        agg.base.push_back(rec.at("base_score").get<double>());
        agg.ctx.push_back(rec.at("ctx_score").get<double>());
        if (rec.at("base_correct").get<bool>()) ++agg.base_correct;
        if (rec.at("ctx_correct").get<bool>()) ++agg.ctx_correct;
    }
    body["fig5_6"] = json::array();
    for (const char* name : {"conflict1", "conflict2", "distraction"}) {
        if (!contexts.count(name)) continue;
        const CtxAgg& agg = contexts.at(name);
        const std::size_t n = agg.base.size();
        json row;
        row["context"] = name;
        row["n"] = n;
        row["base_accuracy"] = null_or(n ? static_cast<double>(agg.base_correct) / n : 0.0, n > 0);
        row["ctx_accuracy"] = null_or(n ? static_cast<double>(agg.ctx_correct) / n : 0.0, n > 0);
        if (n >= 2) {
            const auto base_iv = stats::mean_with_interval(agg.base);
            const auto ctx_iv = stats::mean_with_interval(agg.ctx);
            row["base_mean"] = base_iv.mean;
            row["base_half_width"] = base_iv.half_width;
            row["ctx_mean"] = ctx_iv.mean;
            row["ctx_half_width"] = ctx_iv.half_width;
            try {
                const auto tt = stats::paired_t_test_one_tailed(agg.ctx, agg.base, 0.05);
                row["t"] = tt.t;
                row["p"] = tt.p;
                row["reject"] = tt.reject;
                row["degenerate"] = false;
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::DegenerateSample) throw;
                row["t"] = nullptr;
                row["p"] = nullptr;
                row["reject"] = nullptr;
                row["degenerate"] = true;
            }
        } else {
            row["base_mean"] = n == 1 ? json(agg.base.front()) : json(nullptr);
            row["ctx_mean"] = n == 1 ? json(agg.ctx.front()) : json(nullptr);
            row["base_half_width"] = nullptr;
            row["ctx_half_width"] = nullptr;
            row["t"] = nullptr;
            row["p"] = nullptr;
            row["reject"] = nullptr;
            row["degenerate"] = false;
        }
        body["fig5_6"].push_back(row);
    }

    // --- pairwise overlap of located sets (table 7 analogue) ------------
    const auto records = kn::load_kn_cache(paths.kn_sets(), model::file_hash(paths.checkpoint()),
                                           kn::config_hash(cfg.attribution));
    std::vector<std::vector<kn::Neuron>> sets;
    for (const auto& rec : records) sets.push_back(rec.members);
    json table7;
    table7["n_sets"] = sets.size();
    if (sets.size() >= 2) {
        const std::size_t all_pairs = sets.size() * (sets.size() - 1) / 2;
        const std::size_t n_pairs = std::min(cfg.overlap_pairs, all_pairs);
        const auto ov = probe::pairwise_kn_overlap(sets, n_pairs, cfg.overlap_seed);
        table7["n_pairs"] = n_pairs;
        table7["avg_size"] = ov.avg_size;
        table7["median_size"] = ov.median_size;
        table7["max_size"] = ov.max_size;
        table7["avg_intersection"] = ov.avg_intersection;
        table7["median_intersection"] = ov.median_intersection;
        table7["max_intersection"] = ov.max_intersection;
    } else {
        for (const char* key : {"n_pairs", "avg_size", "median_size", "max_size",
                                "avg_intersection", "median_intersection", "max_intersection"})
            table7[key] = nullptr;
    }
    body["table7"] = table7;

    return body;
}

std::string render_report_text(const json& body) {
    std::ostringstream out;
    out << "experiment report (schema " << body.at("schema_version").get<int>() << ")\n";
    out << "config hash " << body.at("config_hash").get<std::string>() << "\n\n";

    const json& w = body.at("world");
    out << "world: " << w.at("entities") << " entities, " << w.at("relations") << " relations, "
        << w.at("facts") << " facts, " << w.at("instances") << " two-hop instances\n";

    const json& f = body.at("filter");
    out << "filter: knows " << f.at("facts_known") << "/" << f.at("facts_total")
        << " facts (recall " << fmt(f.at("single_hop_recall")) << "), kept "
        << f.at("instances_kept") << "/" << f.at("instances_total") << " instances\n";

    const json& l = body.at("locate");
    out << "locate: " << l.at("facts_located") << " facts located, " << l.at("facts_skipped")
        << " skipped, mean set size " << fmt(l.at("mean_set_size"), "%.2f") << "\n\n";

    out << "two-hop scores by condition\n";
    out << "  condition       n  accuracy  mean1    mean2    single1  single2  delta1%  delta2%\n";
    for (const auto& row : body.at("table1")) {
        char line[256];
        std::snprintf(line, sizeof(line), "  %-13s %4d  %-8s  %-7s  %-7s  %-7s  %-7s  %-7s  %-7s\n",
                      row.at("condition").get<std::string>().c_str(), row.at("n").get<int>(),
                      fmt(row.at("accuracy")).c_str(), fmt(row.at("mean_score1")).c_str(),
                      fmt(row.at("mean_score2")).c_str(), fmt(row.at("single_mean1")).c_str(),
                      fmt(row.at("single_mean2")).c_str(), fmt(row.at("delta1"), "%.2f").c_str(),
                      fmt(row.at("delta2"), "%.2f").c_str());
        out << line;
    }

    out << "\nintervention flip ratios (percent)\n";
    out << "  condition       target        n_t  n_f  er      sr      dAcc+    dAcc-\n";
    for (const auto& row : body.at("table2_3")) {
        char line[256];
        std::snprintf(line, sizeof(line), "  %-13s %-12s %4d %4d  %-6s  %-6s  %-7s  %-7s\n",
                      row.at("condition").get<std::string>().c_str(),
                      row.at("target").get<std::string>().c_str(), row.at("n_t").get<int>(),
                      row.at("n_f").get<int>(), fmt(row.at("er"), "%.2f").c_str(),
                      fmt(row.at("sr"), "%.2f").c_str(),
                      fmt(row.at("delta_acc_enhance"), "%.2f").c_str(),
                      fmt(row.at("delta_acc_suppress"), "%.2f").c_str());
        out << line;
    }

    out << "\nshortcut classification shares\n";
    out << "  condition       tau    n  TT      TF      FT      FF      multi   shortcut skipped\n";
    for (const auto& row : body.at("table5")) {
        char line[256];
        std::snprintf(line, sizeof(line),
                      "  %-13s %.2f %4d  %-6s  %-6s  %-6s  %-6s  %-6s  %-8s %d\n",
                      row.at("condition").get<std::string>().c_str(),
                      row.at("tau_rel").get<double>(), row.at("n").get<int>(),
                      fmt(row.at("share_TT")).c_str(), fmt(row.at("share_TF")).c_str(),
                      fmt(row.at("share_FT")).c_str(), fmt(row.at("share_FF")).c_str(),
                      fmt(row.at("multi_hop_fraction")).c_str(),
                      fmt(row.at("shortcut_fraction")).c_str(), row.at("skipped").get<int>());
        out << line;
    }

    out << "\ncontextual interference\n";
    out << "  context       n  base_mean        ctx_mean         t        p        reject  acc_b  acc_c\n";
    for (const auto& row : body.at("fig5_6")) {
        std::string base = fmt(row.at("base_mean"));
        if (!row.at("base_half_width").is_null())
            base += " +/- " + fmt(row.at("base_half_width"));
        std::string ctx = fmt(row.at("ctx_mean"));
        if (!row.at("ctx_half_width").is_null()) ctx += " +/- " + fmt(row.at("ctx_half_width"));
        char line[320];
        std::snprintf(line, sizeof(line), "  %-11s %3d  %-16s %-16s %-8s %-8s %-7s %-6s %-6s%s\n",
                      row.at("context").get<std::string>().c_str(), row.at("n").get<int>(),
                      base.c_str(), ctx.c_str(), fmt(row.at("t"), "%.3f").c_str(),
                      fmt(row.at("p"), "%.4g").c_str(), fmt(row.at("reject")).c_str(),
                      fmt(row.at("base_accuracy")).c_str(), fmt(row.at("ctx_accuracy")).c_str(),
                      row.at("degenerate").get<bool>() ? "  (degenerate)" : "");
        out << line;
    }

    const json& t7 = body.at("table7");
    out << "\nlocated-set overlap: " << t7.at("n_sets") << " sets";
    if (!t7.at("n_pairs").is_null()) {
        out << ", " << t7.at("n_pairs") << " pairs sampled\n";
        out << "  size avg/median/max:         " << fmt(t7.at("avg_size"), "%.2f") << " / "
            << fmt(t7.at("median_size"), "%.2f") << " / " << fmt(t7.at("max_size"), "%.0f")
            << "\n";
        out << "  intersection avg/median/max: " << fmt(t7.at("avg_intersection"), "%.2f")
            << " / " << fmt(t7.at("median_intersection"), "%.2f") << " / "
            << fmt(t7.at("max_intersection"), "%.0f") << "\n";
    } else {
        out << " (too few for pairwise overlap)\n";
    }
    return out.str();
}

} // namespace knpl::pipeline
