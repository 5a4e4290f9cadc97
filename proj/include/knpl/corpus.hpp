#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "knpl/tokenizer.hpp"

namespace knpl::corpus {

struct FactTriplet {
    int s = -1;
    int r = -1;
    int o = -1;

    auto operator<=>(const FactTriplet&) const = default;
    std::string key() const; // "s:r:o", used for seed derivation and cache keys
};

struct Entity {
    int id = -1;
    std::string name; // one or two lowercase words
    int tier = 0;     // 0 subjects, 1 bridges, 2 terminal objects
    bool distractor = false;
};

struct Relation {
    int id = -1;
    std::string name;                    // identifier, e.g. "rel_employer"
    std::string noun;                    // surface noun, e.g. "employer"
    int hop = 1;                         // 1: subject->bridge, 2: bridge->object
    bool distractor = false;
    std::vector<std::string> templates;  // question bank, "{S}" placeholder
};

// Immutable fact world. Relations are functional: (s, r) determines o.
// Distractor entities, relations, and facts never intersect the main graph.
struct World {
    std::uint64_t seed = 0;
    std::vector<Entity> entities;
    std::vector<Relation> relations;
    std::vector<FactTriplet> facts;            // main graph, sorted
    std::vector<FactTriplet> distractor_facts; // disjoint pool, sorted

    const Entity& entity(int id) const;
    const Relation& relation(int id) const;
    bool has_fact(const FactTriplet& f) const;
    std::optional<int> object_of(int s, int r) const;
    // Distinct objects appearing under relation r in the main graph, sorted.
    std::vector<int> objects_of_relation(int r) const;
    // Every word any renderer can emit; feeds the tokenizer.
    std::vector<std::string> vocabulary() const;
};

struct CotDemo {
    std::string question; // a composed two-hop question
    std::string answer;   // worked reasoning ending in "answer : <object>"
    auto operator<=>(const CotDemo&) const = default;
};

struct TwoHopInstance {
    int id = -1;
    FactTriplet fact1; // subject -> bridge
    FactTriplet fact2; // bridge -> object
    std::vector<std::string> fact1_queries;
    std::vector<std::string> fact2_queries;
    std::string reason_q;
    int answer = -1; // == fact2.o
    std::vector<CotDemo> cot_demos;
};

struct ContextKind {
    bool conflict = false;
    int hop = 0; // 1 or 2 when conflict
};

struct ContextSentence {
    ContextKind kind;
    std::string text;
    int conflicting_object = -1; // entity id, conflict only
};

enum class PromptCondition { NoCoT, ZeroShotCoT, FewShotCoT };

std::string condition_name(PromptCondition c);
PromptCondition condition_from_name(const std::string& name);

struct WorldParams {
    std::uint64_t seed = 1;
    int n_entities = 135;
    int n_relations = 10;
    int n_two_hop = 320;
    int demo_pool = 8;          // instances reserved for few-shot demonstrations
    int demos_per_instance = 4;
    double multi_word_fraction = 0.25;
};

std::pair<World, std::vector<TwoHopInstance>> generate_world(const WorldParams& params);
std::pair<World, std::vector<TwoHopInstance>> generate_world(std::uint64_t seed, int n_entities,
                                                             int n_relations, int n_two_hop);

// Full template-bank rendering for a fact, in bank order. The object's
// surface form never appears in any rendered string.
// The fixed question bank for a relation noun, "{S}" placeholder intact.
// Shared by the synthetic generator and the ingest path so both render
// through the same frames.
std::vector<std::string> relation_templates(const std::string& noun);

// Composed two-hop question over fact1 then fact2; the frame is picked by
// the seed.
std::string compose_reason_question(const World& world, const FactTriplet& fact1,
                                    const FactTriplet& fact2, std::uint64_t frame_seed);

std::vector<std::string> render_queries(const FactTriplet& fact, const World& world);

// Index of the paraphrase excluded from training for this fact (the
// recall check still exercises it).
std::size_t holdout_query_index(const World& world, const FactTriplet& fact);

ContextSentence make_conflict_context(const FactTriplet& fact, const World& world,
                                      std::uint64_t seed, int hop);
ContextSentence make_distraction_context(const TwoHopInstance& instance, const World& world,
                                         std::uint64_t seed);

// Declarative statement "the <noun> of <s> is <o> ." used by contexts and
// worked examples.
std::string render_statement(const FactTriplet& fact, const World& world);

// Prompt assembly at the token level, since control tokens have no surface
// form. Prompts start with the begin token and end with the separator; the
// model is expected to continue with answer tokens and the end token.
std::vector<int> assemble_prompt(const TwoHopInstance& instance, PromptCondition condition,
                                 const std::vector<ContextSentence>& contexts,
                                 const Tokenizer& tokenizer);
std::vector<int> assemble_fact_prompt(const std::string& query, const Tokenizer& tokenizer);

// Token ids of an entity's surface form.
std::vector<int> answer_tokens(const World& world, int entity_id, const Tokenizer& tokenizer);
// Token ids of the "answer :" marker that precedes the final answer in
// worked examples.
std::vector<int> answer_marker_tokens(const Tokenizer& tokenizer);

// Serialization: line-delimited JSON with a schema-version line first.
std::string world_to_jsonl(const World& world);
World world_from_jsonl(const std::string& text);
std::string instances_to_jsonl(const std::vector<TwoHopInstance>& instances);
std::vector<TwoHopInstance> instances_from_jsonl(const std::string& text);

} // namespace knpl::corpus
