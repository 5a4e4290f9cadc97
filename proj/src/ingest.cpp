#include "knpl/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "knpl/error.hpp"
#include "knpl/rng.hpp"

namespace knpl::ingest {

using nlohmann::json;

namespace {

std::string excerpt_of(const std::string& body) {
    constexpr std::size_t kMax = 120;
    if (body.size() <= kMax) return body;
    return body.substr(0, kMax) + "...";
}

json parse_body(const std::string& url, const std::string& body) {
    json doc = json::parse(body, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        raise(ErrorKind::Parse,
              "response to " + url + " is not a json object: " + excerpt_of(body));
    return doc;
}

// Entity labels become world entity names: lowercase, alphanumeric words,
// at most two of them, deduplicated with a roman-numeral second word.
std::string normalize_label(const std::string& label) {
    std::string cleaned;
    for (char c : label) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u))
            cleaned += static_cast<char>(std::tolower(u));
        else if (std::isspace(u) || c == '-' || c == '_')
            cleaned += ' ';
    }
    std::istringstream words(cleaned);
    std::string first, second, extra;
    words >> first >> second >> extra; // anything past two words is dropped
    if (first.empty()) return "entity";
    return second.empty() ? first : first + " " + second;
}

std::string unique_name(const std::string& label, std::set<std::string>& taken) {
    const std::string base = normalize_label(label);
    if (taken.insert(base).second) return base;
    const std::string head = base.substr(0, base.find(' '));
    static const char* kSuffixes[] = {"ii", "iii", "iv", "v",  "vi", "vii",
                                      "viii", "ix", "x",  "xi", "xii"};
    for (const char* suffix : kSuffixes) {
        const std::string candidate = head + " " + suffix;
        if (taken.insert(candidate).second) return candidate;
    }
    raise(ErrorKind::Capacity, "too many entities share the label '" + label + "'");
}

struct Edge {
    std::string s, s_label, r, o, o_label;
};

std::vector<Edge> parse_subgraph(const std::string& url, const std::string& body) {
    const json doc = parse_body(url, body);
    if (!doc.contains("edges") || !doc["edges"].is_array())
        raise(ErrorKind::Parse, "response to " + url + " lacks an edges array: " +
                                    excerpt_of(body));
    std::vector<Edge> out;
    for (const json& e : doc["edges"]) {
        if (!e.is_object() || !e.contains("s") || !e.contains("r") || !e.contains("o") ||
            !e.contains("s_label") || !e.contains("o_label"))
            raise(ErrorKind::Parse, "malformed edge in response to " + url + ": " +
                                        excerpt_of(e.dump()));
        out.push_back({e.at("s").get<std::string>(), e.at("s_label").get<std::string>(),
                       e.at("r").get<std::string>(), e.at("o").get<std::string>(),
                       e.at("o_label").get<std::string>()});
    }
    return out;
}

std::string chain_text(const TwoHopChain& c) {
    return c.s + " -" + c.r1 + "-> " + c.bridge + " -" + c.r2 + "-> " + c.o;
}

} // namespace

RelationAllowlist RelationAllowlist::defaults() {
    RelationAllowlist list;
    list.nouns = {
        {"P19", "birthplace"},   {"P27", "citizenship"},  {"P30", "continent"},
        {"P35", "head of state"}, {"P36", "capital"},      {"P37", "official language"},
        {"P40", "child"},        {"P50", "author"},       {"P69", "alma mater"},
        {"P106", "occupation"},  {"P108", "employer"},    {"P112", "founder"},
        {"P136", "genre"},       {"P159", "headquarters"}, {"P164", "flag"},
        {"P170", "creator"},     {"P175", "performer"},   {"P178", "developer"},
        {"P286", "head coach"},  {"P364", "original language"},
        {"P407", "language"},    {"P413", "position"},    {"P449", "original network"},
        {"P488", "chairperson"}, {"P495", "origin country"},
        {"P641", "sport"},       {"P740", "formation place"},
        {"P800", "notable work"}, {"P937", "work location"},
        {"P1037", "director"},   {"P1308", "officeholder"},
    };
    return list;
}

void RelationAllowlist::validate() const {
    if (nouns.empty()) raise(ErrorKind::Config, "relation allowlist cannot be empty");
}

void RetryPolicy::validate() const {
    if (attempts < 1) raise(ErrorKind::Config, "retry policy needs at least one attempt");
    if (base_delay_ms < 0) raise(ErrorKind::Config, "retry delay cannot be negative");
}

FixtureClient FixtureClient::from_jsonl(const std::string& text) {
    FixtureClient client;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("url") || !j.contains("status") ||
            !j.contains("body"))
            raise(ErrorKind::Parse,
                  "fixture line " + std::to_string(line_no) + " is malformed: " + excerpt_of(line));
        const std::string url = j.at("url").get<std::string>();
        if (client.responses_.count(url))
            raise(ErrorKind::Parse, "fixture records " + url + " twice");
        client.responses_[url] = {j.at("status").get<int>(), j.at("body").get<std::string>()};
    }
    return client;
}

FixtureClient FixtureClient::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::Io, "cannot open fixture " + path.string());
    std::ostringstream body;
    body << in.rdbuf();
    return from_jsonl(body.str());
}

HttpResponse FixtureClient::get(const std::string& url) {
    auto it = responses_.find(url);
    if (it == responses_.end())
        raise(ErrorKind::Network, "no recorded response for " + url);
    ++served_;
    return it->second;
}

LiveClient::LiveClient(std::string host, int min_interval_ms)
    : host_(std::move(host)), min_interval_ms_(min_interval_ms) {
    if (min_interval_ms_ < 1000)
        raise(ErrorKind::Config, "live requests must keep at least one second between them");
}

HttpResponse LiveClient::get(const std::string& url) {
    const auto now = [] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now().time_since_epoch())
            .count();
    };
    if (last_request_ms_ >= 0) {
        const long long wait = last_request_ms_ + min_interval_ms_ - now();
        if (wait > 0) std::this_thread::sleep_for(std::chrono::milliseconds(wait));
    }
    last_request_ms_ = now();

    httplib::Client transport(host_);
    auto res = transport.Get(url);
    if (!res)
        raise(ErrorKind::Network,
              "transport failure for " + host_ + url + ": " + httplib::to_string(res.error()));
    return {res->status, res->body};
}

HttpResponse fetch_with_retry(HttpClient& client, const std::string& url,
                              const RetryPolicy& policy) {
    policy.validate();
    std::string last_failure;
    for (int attempt = 0; attempt < policy.attempts; ++attempt) {
        if (attempt > 0 && policy.base_delay_ms > 0)
            std::this_thread::sleep_for(
                std::chrono::milliseconds(policy.base_delay_ms << (attempt - 1)));
        try {
            HttpResponse res = client.get(url);
            if (res.status == 200) return res;
            last_failure = "status " + std::to_string(res.status);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Network) throw;
            last_failure = e.what();
        }
    }
    raise(ErrorKind::Network, std::to_string(policy.attempts) + " attempts failed for " + url +
                                  "; last failure: " + last_failure);
}

std::vector<EntityPopularity> fetch_popular_entities(HttpClient& client, const std::string& url,
                                                     int top_k, const RetryPolicy& policy) {
    if (top_k < 1) raise(ErrorKind::Config, "top_k must be at least 1");
    const HttpResponse res = fetch_with_retry(client, url, policy);
    const json doc = parse_body(url, res.body);
    if (!doc.contains("items") || !doc["items"].is_array())
        raise(ErrorKind::Parse,
              "popularity listing lacks an items array: " + excerpt_of(res.body));

    std::vector<EntityPopularity> items;
    for (const json& it : doc["items"]) {
        if (!it.is_object() || !it.contains("id") || !it.contains("label") ||
            !it.contains("pageviews") || !it.at("pageviews").is_number_integer())
            raise(ErrorKind::Parse, "malformed popularity item: " + excerpt_of(it.dump()));
        EntityPopularity e{it.at("id").get<std::string>(), it.at("label").get<std::string>(),
                           it.at("pageviews").get<long long>()};
        if (e.pageviews < 0)
            raise(ErrorKind::Parse, "negative pageviews for " + e.id + ": " +
                                        std::to_string(e.pageviews));
        items.push_back(std::move(e));
    }
    std::sort(items.begin(), items.end(), [](const EntityPopularity& a,
                                             const EntityPopularity& b) {
        if (a.pageviews != b.pageviews) return a.pageviews > b.pageviews;
        return a.id < b.id;
    });
    if (static_cast<int>(items.size()) > top_k) items.resize(static_cast<std::size_t>(top_k));
    return items;
}

IngestResult extract_two_hop(HttpClient& client, const std::string& subgraph_url_prefix,
                             const std::vector<EntityPopularity>& entities,
                             const RelationAllowlist& allowlist, const RetryPolicy& policy) {
    if (entities.empty()) raise(ErrorKind::Config, "no seed entities to expand");
    allowlist.validate();

    IngestResult result;
    result.source_note = subgraph_url_prefix; // provenance for the meta line
    ExtractStats& stats = result.stats;
    std::set<std::string> seen_chains;
    std::map<std::pair<std::string, std::string>, std::string> functional; // (s, r) -> o

    // Sequential subgraph requests, one per seed entity, in caller order.
    for (const EntityPopularity& seed : entities) {
        const std::string url = subgraph_url_prefix + seed.id;
        const HttpResponse res = fetch_with_retry(client, url, policy);
        const std::vector<Edge> edges = parse_subgraph(url, res.body);

        std::map<std::string, std::vector<const Edge*>> by_subject;
        for (const Edge& e : edges) by_subject[e.s].push_back(&e);

        auto it = by_subject.find(seed.id);
        if (it == by_subject.end()) continue;
        for (const Edge* first : it->second) {
            auto second_it = by_subject.find(first->o);
            if (second_it == by_subject.end()) continue;
            for (const Edge* second : second_it->second) {
                ++stats.chains_considered;
                TwoHopChain chain{first->s,  first->r,       first->o, second->r,
                                  second->o, first->s_label, first->o_label, second->o_label};

                if (!allowlist.contains(chain.r1) || !allowlist.contains(chain.r2)) {
                    ++stats.dropped_relation;
                    stats.skip_log.push_back(chain_text(chain) + ": relation outside allowlist");
                    continue;
                }
                if (second->s_label != first->o_label) {
                    ++stats.dropped_bridge;
                    stats.skip_log.push_back(chain_text(chain) + ": bridge label mismatch ('" +
                                             first->o_label + "' vs '" + second->s_label + "')");
                    continue;
                }
                if (chain.s == chain.bridge || chain.bridge == chain.o || chain.s == chain.o) {
                    ++stats.dropped_degenerate;
                    stats.skip_log.push_back(chain_text(chain) + ": entity repeats in chain");
                    continue;
                }
                const std::string key = chain_text(chain);
                if (!seen_chains.insert(key).second) {
                    ++stats.dropped_duplicate;
                    stats.skip_log.push_back(key + ": duplicate chain");
                    continue;
                }
                // Relations must stay functional for the world to make sense:
                // one (subject, relation) pair determines one object.
                const auto f1 = std::make_pair(chain.s, chain.r1);
                const auto f2 = std::make_pair(chain.bridge, chain.r2);
                const auto hit1 = functional.find(f1);
                const auto hit2 = functional.find(f2);
                if ((hit1 != functional.end() && hit1->second != chain.bridge) ||
                    (hit2 != functional.end() && hit2->second != chain.o)) {
                    ++stats.dropped_functional;
                    stats.skip_log.push_back(key + ": conflicts with an earlier chain");
                    continue;
                }
                functional[f1] = chain.bridge;
                functional[f2] = chain.o;
                result.chains.push_back(std::move(chain));
            }
        }
    }

    // Synthesize a world: entity ids in first-appearance order, one relation
    // entry per (code, hop) so hop semantics survive codes used at both hops.
    corpus::World& world = result.world;
    std::map<std::string, int> entity_id;
    std::set<std::string> names;
    auto intern_entity = [&](const std::string& id, const std::string& label, int tier) {
        auto it = entity_id.find(id);
        if (it != entity_id.end()) return it->second;
        corpus::Entity e;
        e.id = static_cast<int>(world.entities.size());
        e.name = unique_name(label, names);
        e.tier = tier;
        world.entities.push_back(e);
        entity_id[id] = e.id;
        return e.id;
    };
    std::map<std::pair<std::string, int>, int> relation_id;
    auto intern_relation = [&](const std::string& code, int hop) {
        auto it = relation_id.find({code, hop});
        if (it != relation_id.end()) return it->second;
        corpus::Relation r;
        r.id = static_cast<int>(world.relations.size());
        r.name = "rel_" + code + "_h" + std::to_string(hop);
        r.noun = allowlist.nouns.at(code);
        r.hop = hop;
        r.templates = corpus::relation_templates(r.noun);
        world.relations.push_back(r);
        relation_id[{code, hop}] = r.id;
        return r.id;
    };

    std::string digest;
    std::vector<std::pair<corpus::FactTriplet, corpus::FactTriplet>> fact_pairs;
    for (const TwoHopChain& c : result.chains) {
        const int s = intern_entity(c.s, c.s_label, 0);
        const int bridge = intern_entity(c.bridge, c.bridge_label, 1);
        const int o = intern_entity(c.o, c.o_label, 2);
        const corpus::FactTriplet fact1{s, intern_relation(c.r1, 1), bridge};
        const corpus::FactTriplet fact2{bridge, intern_relation(c.r2, 2), o};
        fact_pairs.emplace_back(fact1, fact2);
        world.facts.push_back(fact1);
        world.facts.push_back(fact2);
        digest += chain_text(c) + "\n";
    }
    std::sort(world.facts.begin(), world.facts.end());
    world.facts.erase(std::unique(world.facts.begin(), world.facts.end()), world.facts.end());
    world.seed = fnv1a64(digest);

    for (std::size_t i = 0; i < fact_pairs.size(); ++i) {
        corpus::TwoHopInstance inst;
        inst.id = static_cast<int>(i);
        inst.fact1 = fact_pairs[i].first;
        inst.fact2 = fact_pairs[i].second;
        inst.fact1_queries = corpus::render_queries(inst.fact1, world);
        inst.fact2_queries = corpus::render_queries(inst.fact2, world);
        inst.reason_q = corpus::compose_reason_question(
            world, inst.fact1, inst.fact2,
            derive_seed(world.seed, "reason-frame:" + inst.fact1.key() + "|" + inst.fact2.key()));
        inst.answer = inst.fact2.o;
        result.instances.push_back(std::move(inst));
    }
    return result;
}

std::string result_to_jsonl(const IngestResult& result) {
    std::string out;
    out += json{{"schema_version", 1}}.dump() + "\n";
    out += json{{"kind", "meta"}, {"source", result.source_note}}.dump() + "\n";
    for (const TwoHopChain& c : result.chains)
        out += json{{"kind", "chain"},
                    {"s", c.s},
                    {"s_label", c.s_label},
                    {"r1", c.r1},
                    {"bridge", c.bridge},
                    {"bridge_label", c.bridge_label},
                    {"r2", c.r2},
                    {"o", c.o},
                    {"o_label", c.o_label}}
                   .dump() +
               "\n";
    for (const std::string& line : result.stats.skip_log)
        out += json{{"kind", "skip"}, {"reason", line}}.dump() + "\n";
    out += json{{"kind", "stats"},
                {"chains_considered", result.stats.chains_considered},
                {"kept", result.chains.size()},
                {"dropped_relation", result.stats.dropped_relation},
                {"dropped_bridge", result.stats.dropped_bridge},
                {"dropped_degenerate", result.stats.dropped_degenerate},
                {"dropped_duplicate", result.stats.dropped_duplicate},
                {"dropped_functional", result.stats.dropped_functional}}
               .dump() +
           "\n";
    return out;
}

} // namespace knpl::ingest
