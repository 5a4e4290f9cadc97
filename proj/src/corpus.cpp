#include "knpl/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "knpl/error.hpp"
#include "knpl/rng.hpp"

namespace knpl::corpus {

namespace {

using nlohmann::json;

// Question bank applied to every relation, "{noun}" and "{S}" substituted.
// Order is load-bearing: paraphrase indices are stable identifiers.
constexpr std::array kFrames = {
    "name the {noun} of {S}",
    "identify the {noun} of {S}",
    "the {noun} of {S} is",
    "tell me the {noun} of {S}",
    "state the {noun} of {S}",
    "give the {noun} of {S}",
    "which entity is the {noun} of {S}",
    "recall the {noun} of {S}",
};

constexpr std::array kHop1Nouns = {"employer", "guild",  "homeland", "patron",
                                   "faction",  "mentor", "origin",   "order"};
constexpr std::array kHop2Nouns = {"leader",  "capital", "emblem",   "anthem",
                                   "founder", "motto",   "treasure", "sigil"};
constexpr std::array kDistractorNouns = {"rival", "shadow"};

constexpr std::array kSyllables = {
    "ba",   "ce",   "di",  "fo",   "gu",   "ha",   "ji",  "ko",   "lu",   "ma",
    "ne",   "or",   "pi",  "qua",  "ru",   "sa",   "ti",  "ul",   "va",   "wo",
    "xe",   "yo",   "zu",  "bran", "crel", "dorn", "fiv", "gast", "hem",  "ilk",
    "jun",  "kam",  "lorn", "mev", "nix",  "osk",  "pel", "quim", "rast", "sol",
    "tarn", "urv",  "vost", "wib", "xan",  "yern", "zol", "brim", "cul",  "dask",
};

constexpr int kDistractorEntities = 6;

std::string substitute(std::string text, const std::string& placeholder,
                       const std::string& value) {
    for (std::size_t pos = text.find(placeholder); pos != std::string::npos;
         pos = text.find(placeholder, pos + value.size())) {
        text.replace(pos, placeholder.size(), value);
    }
    return text;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string word;
    while (in >> word) out.push_back(word);
    return out;
}

std::string fresh_word(Rng& rng, std::set<std::string>& taken) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        int n = 2 + static_cast<int>(rng.below(2)); // 2 or 3 syllables
        std::string word;
        for (int i = 0; i < n; ++i)
            word += kSyllables[rng.below(kSyllables.size())];
        if (taken.insert(word).second) return word;
    }
    raise(ErrorKind::Capacity, "name generator exhausted the syllable space");
}

struct Chain {
    FactTriplet fact1;
    FactTriplet fact2;
};

std::string chain_key(const Chain& c) { return c.fact1.key() + "|" + c.fact2.key(); }

std::string compose_question(const World& world, const Chain& c, std::uint64_t frame_seed) {
    const Relation& r1 = world.relation(c.fact1.r);
    const Relation& r2 = world.relation(c.fact2.r);
    Rng rng(frame_seed);
    std::string frame = kFrames[rng.below(kFrames.size())];
    std::string inner = "the " + r1.noun + " of " + world.entity(c.fact1.s).name;
    frame = substitute(frame, "{noun}", r2.noun);
    return substitute(frame, "{S}", inner);
}

void append_words(const std::string& text, const Tokenizer& tokenizer, std::vector<int>& out) {
    for (int id : tokenizer.encode(text)) out.push_back(id);
}

json fact_to_json(const FactTriplet& f) { return json::array({f.s, f.r, f.o}); }

FactTriplet fact_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3)
        raise(ErrorKind::Parse, "fact must be a [s, r, o] triple");
    return FactTriplet{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

json parse_line(const std::string& line, std::size_t lineno) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
        raise(ErrorKind::Parse,
              "line " + std::to_string(lineno) + " is not valid JSON: " + line);
    return j;
}

std::vector<std::string> nonempty_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

void check_schema_line(const std::vector<std::string>& lines) {
    if (lines.empty()) raise(ErrorKind::Parse, "empty document, expected a schema line");
    json j = parse_line(lines[0], 1);
    if (!j.contains("schema_version") || j["schema_version"] != 1)
        raise(ErrorKind::Parse, "first line must declare schema_version 1, got: " + lines[0]);
}

} // namespace

std::vector<std::string> relation_templates(const std::string& noun) {
    std::vector<std::string> out;
    out.reserve(kFrames.size());
    for (const char* frame : kFrames) out.push_back(substitute(frame, "{noun}", noun));
    return out;
}

std::string compose_reason_question(const World& world, const FactTriplet& fact1,
                                    const FactTriplet& fact2, std::uint64_t frame_seed) {
    return compose_question(world, Chain{fact1, fact2}, frame_seed);
}

std::string FactTriplet::key() const {
    return std::to_string(s) + ":" + std::to_string(r) + ":" + std::to_string(o);
}

const Entity& World::entity(int id) const {
    if (id < 0 || id >= static_cast<int>(entities.size()))
        raise(ErrorKind::Config, "entity id " + std::to_string(id) + " out of range");
    return entities[static_cast<std::size_t>(id)];
}

const Relation& World::relation(int id) const {
    if (id < 0 || id >= static_cast<int>(relations.size()))
        raise(ErrorKind::Config, "relation id " + std::to_string(id) + " out of range");
    return relations[static_cast<std::size_t>(id)];
}

bool World::has_fact(const FactTriplet& f) const {
    return std::binary_search(facts.begin(), facts.end(), f);
}

std::optional<int> World::object_of(int s, int r) const {
    auto it = std::lower_bound(facts.begin(), facts.end(), FactTriplet{s, r, -1});
    if (it != facts.end() && it->s == s && it->r == r) return it->o;
    return std::nullopt;
}

std::vector<int> World::objects_of_relation(int r) const {
    std::set<int> objs;
    for (const FactTriplet& f : facts)
        if (f.r == r) objs.insert(f.o);
    return {objs.begin(), objs.end()};
}

std::vector<std::string> World::vocabulary() const {
    std::set<std::string> words;
    for (const Relation& rel : relations) {
        words.insert(rel.noun);
        for (const std::string& t : rel.templates)
            for (const std::string& w : split_words(t))
                if (w != "{S}") words.insert(w);
    }
    for (const Entity& e : entities)
        for (const std::string& w : split_words(e.name)) words.insert(w);
    for (const char* w : {"is", ".", "answer", ":", "think", "step", "by"})
        words.insert(w);
    return {words.begin(), words.end()};
}

std::string condition_name(PromptCondition c) {
    switch (c) {
        case PromptCondition::NoCoT: return "no_cot";
        case PromptCondition::ZeroShotCoT: return "zero_shot_cot";
        case PromptCondition::FewShotCoT: return "few_shot_cot";
    }
    raise(ErrorKind::Config, "unknown prompt condition");
}

PromptCondition condition_from_name(const std::string& name) {
    if (name == "no_cot") return PromptCondition::NoCoT;
    if (name == "zero_shot_cot") return PromptCondition::ZeroShotCoT;
    if (name == "few_shot_cot") return PromptCondition::FewShotCoT;
    raise(ErrorKind::Config, "unknown prompt condition name: " + name);
}

std::pair<World, std::vector<TwoHopInstance>> generate_world(const WorldParams& params) {
    if (params.n_entities < 3)
        raise(ErrorKind::Config, "need at least 3 entities (one per tier), got " +
                                     std::to_string(params.n_entities));
    if (params.n_relations < 2)
        raise(ErrorKind::Config, "need at least 2 relations (one per hop), got " +
                                     std::to_string(params.n_relations));
    int h1 = (params.n_relations + 1) / 2;
    int h2 = params.n_relations - h1;
    if (h1 > static_cast<int>(kHop1Nouns.size()) || h2 > static_cast<int>(kHop2Nouns.size()))
        raise(ErrorKind::Capacity, "relation noun pool supports at most " +
                                       std::to_string(kHop1Nouns.size() + kHop2Nouns.size()) +
                                       " relations, requested " +
                                       std::to_string(params.n_relations));
    if (params.n_two_hop < 0)
        raise(ErrorKind::Config, "n_two_hop must be non-negative");
    if (params.demos_per_instance > params.demo_pool)
        raise(ErrorKind::Config, "demos_per_instance exceeds the demo pool");
    if (params.multi_word_fraction < 0.0 || params.multi_word_fraction > 1.0)
        raise(ErrorKind::Config, "multi_word_fraction must lie in [0, 1]");

    int n_bridges = std::max(1, params.n_entities * 22 / 100);
    int n_objects = std::max(1, params.n_entities * 18 / 100);
    int n_subjects = params.n_entities - n_bridges - n_objects;
    if (n_subjects < 1)
        raise(ErrorKind::Config, "entity budget too small to fill all three tiers");

    World world;
    world.seed = params.seed;

    // Names. Every word is globally unique and disjoint from template words,
    // so an entity's surface form can never leak into another sentence.
    std::set<std::string> taken;
    for (const char* frame : kFrames)
        for (const std::string& w : split_words(frame)) taken.insert(w);
    for (const char* n : kHop1Nouns) taken.insert(n);
    for (const char* n : kHop2Nouns) taken.insert(n);
    for (const char* n : kDistractorNouns) taken.insert(n);
    for (const char* w : {"is", ".", "answer", ":", "think", "step", "by"}) taken.insert(w);

    Rng name_rng(derive_seed(params.seed, "entity-names"));
    auto add_tier = [&](int count, int tier, bool distractor) {
        // Exactly ceil(fraction * count) names in this tier are two-word, so
        // the multi-word guarantee holds for every seed.
        int n_multi = static_cast<int>(
            std::min<double>(count, std::ceil(params.multi_word_fraction * count)));
        std::vector<std::size_t> slots =
            name_rng.sample_without_replacement(static_cast<std::size_t>(count),
                                                static_cast<std::size_t>(n_multi));
        std::set<std::size_t> multi(slots.begin(), slots.end());
        for (int i = 0; i < count; ++i) {
            Entity e;
            e.id = static_cast<int>(world.entities.size());
            e.tier = tier;
            e.distractor = distractor;
            e.name = fresh_word(name_rng, taken);
            if (multi.count(static_cast<std::size_t>(i)))
                e.name += " " + fresh_word(name_rng, taken);
            world.entities.push_back(std::move(e));
        }
    };
    add_tier(n_subjects, 0, false);
    add_tier(n_bridges, 1, false);
    add_tier(n_objects, 2, false);
    add_tier(kDistractorEntities, 0, true);

    auto add_relation = [&](const char* noun, int hop, bool distractor) {
        Relation rel;
        rel.id = static_cast<int>(world.relations.size());
        rel.noun = noun;
        rel.name = "rel_" + rel.noun;
        rel.hop = hop;
        rel.distractor = distractor;
        rel.templates = relation_templates(rel.noun);
        world.relations.push_back(std::move(rel));
    };
    for (int i = 0; i < h1; ++i) add_relation(kHop1Nouns[static_cast<std::size_t>(i)], 1, false);
    for (int i = 0; i < h2; ++i) add_relation(kHop2Nouns[static_cast<std::size_t>(i)], 2, false);
    for (const char* noun : kDistractorNouns) add_relation(noun, 1, true);

    std::vector<int> subjects, bridges, objects, rel1, rel2;
    for (const Entity& e : world.entities) {
        if (e.distractor) continue;
        if (e.tier == 0) subjects.push_back(e.id);
        if (e.tier == 1) bridges.push_back(e.id);
        if (e.tier == 2) objects.push_back(e.id);
    }
    for (const Relation& r : world.relations) {
        if (r.distractor) continue;
        (r.hop == 1 ? rel1 : rel2).push_back(r.id);
    }

    // Facts. Each subject knows a couple of hop-1 relations; each bridge
    // answers every hop-2 relation, so every chain closes.
    Rng fact_rng(derive_seed(params.seed, "facts"));
    int rels_per_subject = std::min<int>(2, static_cast<int>(rel1.size()));
    for (int s : subjects) {
        std::vector<std::size_t> pick = fact_rng.sample_without_replacement(
            rel1.size(), static_cast<std::size_t>(rels_per_subject));
        std::sort(pick.begin(), pick.end());
        for (std::size_t idx : pick) {
            int b = bridges[fact_rng.below(bridges.size())];
            world.facts.push_back({s, rel1[idx], b});
        }
    }
    for (int b : bridges)
        for (int r : rel2) world.facts.push_back({b, r, objects[fact_rng.below(objects.size())]});
    std::sort(world.facts.begin(), world.facts.end());

    // Distractor facts connect distractor entities under distractor relations
    // only, so a distraction sentence shares no ids with any instance.
    std::vector<int> dents;
    for (const Entity& e : world.entities)
        if (e.distractor) dents.push_back(e.id);
    for (const Relation& r : world.relations) {
        if (!r.distractor) continue;
        for (std::size_t i = 0; i + 1 < dents.size(); i += 2)
            world.distractor_facts.push_back({dents[i], r.id, dents[i + 1]});
    }
    std::sort(world.distractor_facts.begin(), world.distractor_facts.end());

    // Chains in deterministic order, then a seeded shuffle picks instances.
    std::vector<Chain> chains;
    for (const FactTriplet& f1 : world.facts) {
        if (world.relation(f1.r).hop != 1) continue;
        for (int r2 : rel2) {
            auto o = world.object_of(f1.o, r2);
            if (o) chains.push_back({f1, {f1.o, r2, *o}});
        }
    }

    std::vector<TwoHopInstance> instances;
    if (params.n_two_hop > 0) {
        std::size_t needed =
            static_cast<std::size_t>(params.n_two_hop) + static_cast<std::size_t>(params.demo_pool);
        if (needed > chains.size())
            raise(ErrorKind::Capacity,
                  "requested " + std::to_string(params.n_two_hop) + " instances plus " +
                      std::to_string(params.demo_pool) + " demonstrations but the graph only has " +
                      std::to_string(chains.size()) + " two-hop chains");
        Rng inst_rng(derive_seed(params.seed, "instances"));
        inst_rng.shuffle(chains);

        std::vector<CotDemo> demo_bank;
        for (std::size_t i = static_cast<std::size_t>(params.n_two_hop); i < needed; ++i) {
            const Chain& c = chains[i];
            CotDemo demo;
            demo.question =
                compose_question(world, c, derive_seed(params.seed, "reason-frame:" + chain_key(c)));
            demo.answer = render_statement(c.fact1, world) + " " +
                          render_statement(c.fact2, world) + " answer : " +
                          world.entity(c.fact2.o).name;
            demo_bank.push_back(std::move(demo));
        }

        for (int i = 0; i < params.n_two_hop; ++i) {
            const Chain& c = chains[static_cast<std::size_t>(i)];
            TwoHopInstance inst;
            inst.id = i;
            inst.fact1 = c.fact1;
            inst.fact2 = c.fact2;
            inst.fact1_queries = render_queries(c.fact1, world);
            inst.fact2_queries = render_queries(c.fact2, world);
            inst.reason_q =
                compose_question(world, c, derive_seed(params.seed, "reason-frame:" + chain_key(c)));
            inst.answer = c.fact2.o;
            Rng demo_rng(derive_seed(params.seed, "demos:" + std::to_string(i)));
            for (std::size_t idx : demo_rng.sample_without_replacement(
                     demo_bank.size(), static_cast<std::size_t>(params.demos_per_instance)))
                inst.cot_demos.push_back(demo_bank[idx]);
            instances.push_back(std::move(inst));
        }
    }

    return {std::move(world), std::move(instances)};
}

std::pair<World, std::vector<TwoHopInstance>> generate_world(std::uint64_t seed, int n_entities,
                                                             int n_relations, int n_two_hop) {
    WorldParams params;
    params.seed = seed;
    params.n_entities = n_entities;
    params.n_relations = n_relations;
    params.n_two_hop = n_two_hop;
    return generate_world(params);
}

std::vector<std::string> render_queries(const FactTriplet& fact, const World& world) {
    if (!world.has_fact(fact))
        raise(ErrorKind::Template, "cannot render queries for an unknown fact " + fact.key());
    const Relation& rel = world.relation(fact.r);
    const std::string& subject = world.entity(fact.s).name;
    std::vector<std::string> out;
    out.reserve(rel.templates.size());
    for (const std::string& t : rel.templates) out.push_back(substitute(t, "{S}", subject));
    return out;
}

std::size_t holdout_query_index(const World& world, const FactTriplet& fact) {
    std::size_t n = world.relation(fact.r).templates.size();
    if (n == 0) raise(ErrorKind::Template, "relation has an empty template bank");
    return static_cast<std::size_t>(derive_seed(world.seed, "holdout:" + fact.key()) % n);
}

ContextSentence make_conflict_context(const FactTriplet& fact, const World& world,
                                      std::uint64_t seed, int hop) {
    if (hop != 1 && hop != 2) raise(ErrorKind::Config, "conflict hop must be 1 or 2");
    if (!world.has_fact(fact))
        raise(ErrorKind::Template, "cannot build a conflict for an unknown fact " + fact.key());
    std::vector<int> candidates = world.objects_of_relation(fact.r);
    std::erase(candidates, fact.o);
    if (candidates.empty())
        raise(ErrorKind::Capacity, "no conflicting object exists for relation " +
                                       world.relation(fact.r).name +
                                       ": every fact shares the object of " + fact.key());
    Rng rng(derive_seed(seed, "conflict:" + fact.key()));
    int counter = candidates[rng.below(candidates.size())];
    ContextSentence ctx;
    ctx.kind = {true, hop};
    ctx.conflicting_object = counter;
    ctx.text = render_statement({fact.s, fact.r, counter}, world);
    return ctx;
}

ContextSentence make_distraction_context(const TwoHopInstance& instance, const World& world,
                                         std::uint64_t seed) {
    if (world.distractor_facts.empty())
        raise(ErrorKind::EmptySet, "world has no distractor facts to draw from");
    Rng rng(derive_seed(seed, "distract:" + std::to_string(instance.id)));
    const FactTriplet& f = world.distractor_facts[rng.below(world.distractor_facts.size())];
    ContextSentence ctx;
    ctx.kind = {false, 0};
    ctx.text = render_statement(f, world);
    return ctx;
}

std::string render_statement(const FactTriplet& fact, const World& world) {
    return "the " + world.relation(fact.r).noun + " of " + world.entity(fact.s).name + " is " +
           world.entity(fact.o).name + " .";
}

std::vector<int> assemble_prompt(const TwoHopInstance& instance, PromptCondition condition,
                                 const std::vector<ContextSentence>& contexts,
                                 const Tokenizer& tokenizer) {
    std::vector<int> out;
    out.push_back(Tokenizer::kBos);
    if (condition == PromptCondition::FewShotCoT) {
        for (const CotDemo& demo : instance.cot_demos) {
            append_words(demo.question, tokenizer, out);
            out.push_back(Tokenizer::kSep);
            append_words(demo.answer, tokenizer, out);
            out.push_back(Tokenizer::kEoa);
        }
    }
    for (const ContextSentence& ctx : contexts) append_words(ctx.text, tokenizer, out);
    append_words(instance.reason_q, tokenizer, out);
    if (condition == PromptCondition::ZeroShotCoT)
        append_words("think step by step", tokenizer, out);
    out.push_back(Tokenizer::kSep);
    return out;
}

std::vector<int> assemble_fact_prompt(const std::string& query, const Tokenizer& tokenizer) {
    std::vector<int> out;
    out.push_back(Tokenizer::kBos);
    append_words(query, tokenizer, out);
    out.push_back(Tokenizer::kSep);
    return out;
}

std::vector<int> answer_tokens(const World& world, int entity_id, const Tokenizer& tokenizer) {
    return tokenizer.encode(world.entity(entity_id).name);
}

std::vector<int> answer_marker_tokens(const Tokenizer& tokenizer) {
    return tokenizer.encode("answer :");
}

std::string world_to_jsonl(const World& world) {
    std::string out;
    out += json{{"schema_version", 1}}.dump() + "\n";
    out += json{{"kind", "world"}, {"seed", std::to_string(world.seed)}}.dump() + "\n";
    for (const Entity& e : world.entities)
        out += json{{"kind", "entity"},
                    {"id", e.id},
                    {"name", e.name},
                    {"tier", e.tier},
                    {"distractor", e.distractor}}
                   .dump() +
               "\n";
    for (const Relation& r : world.relations)
        out += json{{"kind", "relation"}, {"id", r.id},
                    {"name", r.name},     {"noun", r.noun},
                    {"hop", r.hop},       {"distractor", r.distractor},
                    {"templates", r.templates}}
                   .dump() +
               "\n";
    for (const FactTriplet& f : world.facts)
        out += json{{"kind", "fact"}, {"triple", fact_to_json(f)}}.dump() + "\n";
    for (const FactTriplet& f : world.distractor_facts)
        out += json{{"kind", "distractor_fact"}, {"triple", fact_to_json(f)}}.dump() + "\n";
    return out;
}

World world_from_jsonl(const std::string& text) {
    std::vector<std::string> lines = nonempty_lines(text);
    check_schema_line(lines);
    World world;
    bool saw_header = false;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        json j = parse_line(lines[i], i + 1);
        std::string kind = j.value("kind", "");
        if (kind == "world") {
            world.seed = std::stoull(j.at("seed").get<std::string>());
            saw_header = true;
        } else if (kind == "entity") {
            Entity e;
            e.id = j.at("id").get<int>();
            e.name = j.at("name").get<std::string>();
            e.tier = j.at("tier").get<int>();
            e.distractor = j.at("distractor").get<bool>();
            world.entities.push_back(std::move(e));
        } else if (kind == "relation") {
            Relation r;
            r.id = j.at("id").get<int>();
            r.name = j.at("name").get<std::string>();
            r.noun = j.at("noun").get<std::string>();
            r.hop = j.at("hop").get<int>();
            r.distractor = j.at("distractor").get<bool>();
            r.templates = j.at("templates").get<std::vector<std::string>>();
            world.relations.push_back(std::move(r));
        } else if (kind == "fact") {
            world.facts.push_back(fact_from_json(j.at("triple")));
        } else if (kind == "distractor_fact") {
            world.distractor_facts.push_back(fact_from_json(j.at("triple")));
        } else {
            raise(ErrorKind::Parse,
                  "line " + std::to_string(i + 1) + " has unknown kind: " + kind);
        }
    }
    if (!saw_header) raise(ErrorKind::Parse, "world document is missing its header line");
    for (std::size_t i = 0; i < world.entities.size(); ++i)
        if (world.entities[i].id != static_cast<int>(i))
            raise(ErrorKind::Parse, "entity ids must be dense and ordered");
    for (std::size_t i = 0; i < world.relations.size(); ++i)
        if (world.relations[i].id != static_cast<int>(i))
            raise(ErrorKind::Parse, "relation ids must be dense and ordered");
    if (!std::is_sorted(world.facts.begin(), world.facts.end()) ||
        !std::is_sorted(world.distractor_facts.begin(), world.distractor_facts.end()))
        raise(ErrorKind::Parse, "facts must be sorted");
    return world;
}

std::string instances_to_jsonl(const std::vector<TwoHopInstance>& instances) {
    std::string out;
    out += json{{"schema_version", 1}}.dump() + "\n";
    for (const TwoHopInstance& inst : instances) {
        json demos = json::array();
        for (const CotDemo& d : inst.cot_demos)
            demos.push_back(json{{"question", d.question}, {"answer", d.answer}});
        out += json{{"id", inst.id},
                    {"fact1", fact_to_json(inst.fact1)},
                    {"fact2", fact_to_json(inst.fact2)},
                    {"fact1_queries", inst.fact1_queries},
                    {"fact2_queries", inst.fact2_queries},
                    {"reason_q", inst.reason_q},
                    {"answer", inst.answer},
                    {"cot_demos", demos}}
                   .dump() +
               "\n";
    }
    return out;
}

std::vector<TwoHopInstance> instances_from_jsonl(const std::string& text) {
    std::vector<std::string> lines = nonempty_lines(text);
    check_schema_line(lines);
    std::vector<TwoHopInstance> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        json j = parse_line(lines[i], i + 1);
        TwoHopInstance inst;
        inst.id = j.at("id").get<int>();
        inst.fact1 = fact_from_json(j.at("fact1"));
        inst.fact2 = fact_from_json(j.at("fact2"));
        inst.fact1_queries = j.at("fact1_queries").get<std::vector<std::string>>();
        inst.fact2_queries = j.at("fact2_queries").get<std::vector<std::string>>();
        inst.reason_q = j.at("reason_q").get<std::string>();
        inst.answer = j.at("answer").get<int>();
        for (const json& d : j.at("cot_demos"))
            inst.cot_demos.push_back(
                {d.at("question").get<std::string>(), d.at("answer").get<std::string>()});
        out.push_back(std::move(inst));
    }
    return out;
}

} // namespace knpl::corpus
