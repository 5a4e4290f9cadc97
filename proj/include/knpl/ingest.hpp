#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "knpl/corpus.hpp"

namespace knpl::ingest {

// Optional real-data path: pull popular entities and their local subgraphs
// from a knowledge-graph query service, extract two-hop chains, and render
// them through the corpus template banks into the same record format the
// synthetic generator emits. Every network interaction can be replayed from
// recorded fixtures, so the whole path tests offline.
//
// Wire formats (the endpoints are plain GET returning json):
//   popularity listing: {"items": [{"id": "Q42", "label": "...", "pageviews": 123}, ...]}
//     where pageviews is the cumulative count over the trailing twelve
//     months; the window anchor is part of the request url, and callers
//     record that url as output metadata rather than guessing a date.
//   subgraph: {"edges": [{"s": "Q42", "s_label": "...", "r": "P50",
//                          "o": "Q7", "o_label": "..."}, ...]}
//     two levels deep from the requested entity.

struct EntityPopularity {
    std::string id;
    std::string label;
    long long pageviews = 0; // trailing twelve months, never negative
};

// Relation codes eligible for chain extraction, each with the surface noun
// used by the template banks.
struct RelationAllowlist {
    std::map<std::string, std::string> nouns; // code -> noun

    static RelationAllowlist defaults();
    bool contains(const std::string& code) const { return nouns.count(code) > 0; }
    void validate() const; // non-empty
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

// One GET at a time; transport failure raises a network error, any received
// status is returned as data.
class HttpClient {
public:
    virtual ~HttpClient() = default;
    virtual HttpResponse get(const std::string& url) = 0;
};

// Replays verbatim request/response pairs from a jsonl fixture, one object
// {"url", "status", "body"} per line. Requests for urls the fixture does not
// record fail like an unreachable host.
class FixtureClient : public HttpClient {
public:
    static FixtureClient from_jsonl(const std::string& text);
    static FixtureClient load(const std::filesystem::path& path);

    HttpResponse get(const std::string& url) override;
    int requests_served() const { return served_; }

private:
    std::map<std::string, HttpResponse> responses_;
    int served_ = 0;
};

// Live transport; constructed only when a caller explicitly opts into the
// network. Requests are sequential with at least min_interval_ms between
// them (politeness), no concurrency.
class LiveClient : public HttpClient {
public:
    explicit LiveClient(std::string host, int min_interval_ms = 1000);
    HttpResponse get(const std::string& url) override;

private:
    std::string host_;
    int min_interval_ms_ = 1000;
    long long last_request_ms_ = -1;
};

struct RetryPolicy {
    int attempts = 3;
    int base_delay_ms = 1000; // doubled after each failed attempt

    void validate() const;
};

// GET with exponential backoff: transport failures and non-200 statuses are
// retried up to attempts times, then reported as one network error naming
// the last failure.
HttpResponse fetch_with_retry(HttpClient& client, const std::string& url,
                              const RetryPolicy& policy = {});

// The popularity listing, sorted by pageviews descending with ties broken by
// entity id ascending, truncated to the top_k strongest. top_k must be
// positive; malformed listings are parse errors carrying an excerpt.
std::vector<EntityPopularity> fetch_popular_entities(HttpClient& client, const std::string& url,
                                                     int top_k, const RetryPolicy& policy = {});

struct TwoHopChain {
    std::string s, r1, bridge, r2, o; // entity ids and relation codes
    std::string s_label, bridge_label, o_label;
};

struct ExtractStats {
    int chains_considered = 0;
    int dropped_relation = 0;   // hop outside the allowlist
    int dropped_bridge = 0;     // inconsistent bridge labels
    int dropped_degenerate = 0; // an entity repeats inside the chain
    int dropped_duplicate = 0;  // chain already emitted
    int dropped_functional = 0; // (s, r) already determined a different object
    std::vector<std::string> skip_log; // one human-readable line per drop
};

struct IngestResult {
    std::vector<TwoHopChain> chains;
    corpus::World world; // synthesized from the chains; labels become entity names
    std::vector<corpus::TwoHopInstance> instances;
    ExtractStats stats;
    std::string source_note; // request url or fixture name, recorded as metadata
};

// Walks each seed entity's subgraph (one sequential request per entity) and
// keeps every chain ((s, r1, bridge), (bridge, r2, o)) whose relations are
// allowlisted and whose bridge is consistent; everything else lands in the
// skip log. The surviving chains are rendered into corpus records via
// relation_templates and compose_reason_question.
IngestResult extract_two_hop(HttpClient& client, const std::string& subgraph_url_prefix,
                             const std::vector<EntityPopularity>& entities,
                             const RelationAllowlist& allowlist,
                             const RetryPolicy& policy = {});

// Byte-stable jsonl rendering of the result: schema line, meta line, one
// line per chain, one per skip, one stats line.
std::string result_to_jsonl(const IngestResult& result);

} // namespace knpl::ingest
