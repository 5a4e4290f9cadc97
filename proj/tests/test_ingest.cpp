#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "knpl/corpus.hpp"
#include "knpl/error.hpp"
#include "knpl/ingest.hpp"

using namespace knpl;
using namespace knpl::ingest;
using nlohmann::json;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::Config;
}

std::string message_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    FAIL("expected an error");
    return "";
}

std::string fixture_line(const std::string& url, int status, const json& body) {
    return json{{"url", url}, {"status", status}, {"body", body.dump()}}.dump() + "\n";
}

json edge(const std::string& s, const std::string& s_label, const std::string& r,
          const std::string& o, const std::string& o_label) {
    return json{{"s", s}, {"s_label", s_label}, {"r", r}, {"o", o}, {"o_label", o_label}};
}

// One seed entity whose neighborhood exercises every drop category exactly
// as counted below. Hand trace:
//   Q1 edges: P27->Q2, P19->Q5, P40->Q1 (self loop)
//   Q2 edges: P36->Q3, P999->Q4, P36->Q3 again, P36->Q7
//   Q5 edges: P36->Q6 but under the wrong subject label
// Chains considered: 4 via Q2, 1 via Q5, 3 via the self loop = 8 total,
// of which only Q1 -P27-> Q2 -P36-> Q3 survives.
std::string drop_census_fixture() {
    json sub = json{{"edges",
                     json::array({
                         edge("Q1", "Alpha Prime", "P27", "Q2", "Beta Land"),
                         edge("Q1", "Alpha Prime", "P19", "Q5", "Delta City"),
                         edge("Q1", "Alpha Prime", "P40", "Q1", "Alpha Prime"),
                         edge("Q2", "Beta Land", "P36", "Q3", "Gamma Town"),
                         edge("Q2", "Beta Land", "P999", "Q4", "Epsilon"),
                         edge("Q2", "Beta Land", "P36", "Q3", "Gamma Town"),
                         edge("Q2", "Beta Land", "P36", "Q7", "Eta Ville"),
                         edge("Q5", "Other Name", "P36", "Q6", "Zeta Burg"),
                     })}};
    return fixture_line("fix://sub/Q1", 200, sub);
}

// Two seeds, a relation code used at both hops, and labels that collide
// after normalization.
std::string two_seed_fixture() {
    json sub1 = json{{"edges", json::array({
                                   edge("S1", "Kappa", "P27", "S2", "Lambda"),
                                   edge("S2", "Lambda", "P27", "S3", "Lambda!!"),
                               })}};
    json sub2 = json{{"edges", json::array({
                                   edge("S2", "Lambda", "P27", "S3", "Lambda!!"),
                                   edge("S3", "Lambda!!", "P36", "S4", "mu-nu ville grande"),
                               })}};
    return fixture_line("fix://g2/S1", 200, sub1) + fixture_line("fix://g2/S2", 200, sub2);
}

std::vector<EntityPopularity> seed(std::initializer_list<const char*> ids) {
    std::vector<EntityPopularity> out;
    for (const char* id : ids) out.push_back({id, id, 1});
    return out;
}

int count_containing(const std::vector<std::string>& lines, const std::string& needle) {
    int n = 0;
    for (const std::string& line : lines)
        if (line.find(needle) != std::string::npos) ++n;
    return n;
}

// Test double: fails a configurable number of times before succeeding.
class FlakyClient : public HttpClient {
public:
    FlakyClient(int failures, bool throws, std::string ok_body)
        : failures_(failures), throws_(throws), ok_body_(std::move(ok_body)) {}

    HttpResponse get(const std::string&) override {
        ++calls_;
        if (calls_ <= failures_) {
            if (throws_) raise(ErrorKind::Network, "synthetic outage");
            return {503, "busy"};
        }
        return {200, ok_body_};
    }

    int calls() const { return calls_; }

private:
    int failures_ = 0;
    bool throws_ = true;
    std::string ok_body_;
    int calls_ = 0;
};

class ParseThrowingClient : public HttpClient {
public:
    HttpResponse get(const std::string&) override {
        ++calls_;
        raise(ErrorKind::Parse, "not retryable");
    }
    int calls_ = 0;
};

} // namespace

TEST_CASE("fixture client replays recorded pairs and nothing else") {
    const std::string text = fixture_line("fix://a", 200, json{{"ok", true}}) +
                             fixture_line("fix://b", 404, json{{"err", "gone"}});
    FixtureClient client = FixtureClient::from_jsonl(text);

    HttpResponse a = client.get("fix://a");
    CHECK(a.status == 200);
    CHECK(json::parse(a.body).at("ok") == true);
    CHECK(client.get("fix://b").status == 404);
    CHECK(client.requests_served() == 2);

    CHECK(kind_of([&] { client.get("fix://missing"); }) == ErrorKind::Network);
    CHECK(client.requests_served() == 2); // misses are not served

    const std::string dup = fixture_line("fix://a", 200, json{{"v", 1}}) +
                            fixture_line("fix://a", 200, json{{"v", 2}});
    CHECK(kind_of([&] { FixtureClient::from_jsonl(dup); }) == ErrorKind::Parse);
    CHECK(message_of([&] { FixtureClient::from_jsonl(dup); }).find("twice") !=
          std::string::npos);

    const std::string bad = fixture_line("fix://a", 200, json{{"v", 1}}) + "not json\n";
    CHECK(message_of([&] { FixtureClient::from_jsonl(bad); }).find("line 2") !=
          std::string::npos);
    CHECK(kind_of([&] { FixtureClient::from_jsonl(bad); }) == ErrorKind::Parse);
}

TEST_CASE("fixture client loads from disk") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "knpl_test_ingest_fixture.jsonl";
    {
        std::ofstream out(path, std::ios::binary);
        out << fixture_line("fix://disk", 200, json{{"from", "file"}});
    }
    FixtureClient client = FixtureClient::load(path);
    CHECK(json::parse(client.get("fix://disk").body).at("from") == "file");
    fs::remove(path);

    CHECK(kind_of([&] { FixtureClient::load(path); }) == ErrorKind::Io);
}

TEST_CASE("live client refuses impolite request intervals") {
    CHECK(kind_of([] { LiveClient("http://localhost", 500); }) == ErrorKind::Config);
    LiveClient ok("http://localhost"); // default interval is acceptable
    (void)ok;
}

TEST_CASE("retry policy validation") {
    CHECK(kind_of([] { RetryPolicy{0, 0}.validate(); }) == ErrorKind::Config);
    CHECK(kind_of([] { RetryPolicy{3, -1}.validate(); }) == ErrorKind::Config);
    RetryPolicy{1, 0}.validate(); // minimal policy is fine
}

TEST_CASE("fetch_with_retry retries transport failures then succeeds") {
    FlakyClient flaky(2, true, R"({"items":[]})");
    HttpResponse res = fetch_with_retry(flaky, "fix://x", {3, 0});
    CHECK(res.status == 200);
    CHECK(flaky.calls() == 3);
}

TEST_CASE("fetch_with_retry retries non-200 statuses then succeeds") {
    FlakyClient flaky(1, false, "payload");
    HttpResponse res = fetch_with_retry(flaky, "fix://x", {2, 0});
    CHECK(res.status == 200);
    CHECK(res.body == "payload");
    CHECK(flaky.calls() == 2);
}

TEST_CASE("fetch_with_retry exhaustion reports the last failure") {
    FlakyClient always_down(100, true, "");
    const std::string msg =
        message_of([&] { fetch_with_retry(always_down, "fix://down", {3, 0}); });
    CHECK(kind_of([&] { fetch_with_retry(always_down, "fix://down", {3, 0}); }) ==
          ErrorKind::Network);
    CHECK(msg.find("3 attempts failed") != std::string::npos);
    CHECK(msg.find("synthetic outage") != std::string::npos);

    FlakyClient bad_status(100, false, "");
    const std::string msg2 =
        message_of([&] { fetch_with_retry(bad_status, "fix://down", {2, 0}); });
    CHECK(msg2.find("status 503") != std::string::npos);
}

TEST_CASE("fetch_with_retry does not retry non-network errors") {
    ParseThrowingClient client;
    CHECK(kind_of([&] { fetch_with_retry(client, "fix://x", {5, 0}); }) == ErrorKind::Parse);
    CHECK(client.calls_ == 1);
}

TEST_CASE("fetch_with_retry backs off exponentially between attempts") {
    FlakyClient always_down(100, true, "");
    const auto start = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(fetch_with_retry(always_down, "fix://slow", {3, 30}), Error);
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - start)
                             .count();
    CHECK(elapsed >= 90); // 30ms then 60ms between the three attempts
    CHECK(always_down.calls() == 3);
}

TEST_CASE("popularity listing is sorted, tie-broken, and truncated") {
    json body = json{{"items", json::array({
                                   json{{"id", "Q5"}, {"label", "e5"}, {"pageviews", 100}},
                                   json{{"id", "Q3"}, {"label", "e3"}, {"pageviews", 300}},
                                   json{{"id", "Q1"}, {"label", "e1"}, {"pageviews", 300}},
                                   json{{"id", "Q2"}, {"label", "e2"}, {"pageviews", 50}},
                                   json{{"id", "Q4"}, {"label", "e4"}, {"pageviews", 200}},
                               })}};
    FixtureClient client = FixtureClient::from_jsonl(fixture_line("fix://pop", 200, body));

    std::vector<EntityPopularity> top = fetch_popular_entities(client, "fix://pop", 3, {1, 0});
    REQUIRE(top.size() == 3);
    CHECK(top[0].id == "Q1"); // 300 views, tie broken by id
    CHECK(top[1].id == "Q3");
    CHECK(top[2].id == "Q4");
    CHECK(top[0].pageviews == 300);
    CHECK(top[2].pageviews == 200);

    FixtureClient again = FixtureClient::from_jsonl(fixture_line("fix://pop", 200, body));
    CHECK(fetch_popular_entities(again, "fix://pop", 50, {1, 0}).size() == 5);
}

TEST_CASE("popularity listing rejects bad requests and bodies") {
    json ok = json{{"items", json::array()}};
    FixtureClient client = FixtureClient::from_jsonl(fixture_line("fix://pop", 200, ok));
    CHECK(kind_of([&] { fetch_popular_entities(client, "fix://pop", 0, {1, 0}); }) ==
          ErrorKind::Config);
    CHECK(fetch_popular_entities(client, "fix://pop", 1, {1, 0}).empty());

    auto parse_kind = [](const json& body) {
        FixtureClient c = FixtureClient::from_jsonl(fixture_line("fix://p", 200, body));
        return kind_of([&] { fetch_popular_entities(c, "fix://p", 3, {1, 0}); });
    };
    CHECK(parse_kind(json::array()) == ErrorKind::Parse);           // not an object
    CHECK(parse_kind(json{{"rows", json::array()}}) == ErrorKind::Parse); // no items
    CHECK(parse_kind(json{{"items", json::array({json{{"id", "Q1"}, {"label", "x"}}})}}) ==
          ErrorKind::Parse); // item lacks pageviews
    CHECK(parse_kind(json{{"items", json::array({json{{"id", "Q1"},
                                                      {"label", "x"},
                                                      {"pageviews", 2.5}}})}}) ==
          ErrorKind::Parse); // fractional count
    CHECK(parse_kind(json{{"items", json::array({json{{"id", "Q1"},
                                                      {"label", "x"},
                                                      {"pageviews", -3}}})}}) ==
          ErrorKind::Parse); // negative count

    // Parse errors carry an excerpt of the offending payload.
    FixtureClient c = FixtureClient::from_jsonl(fixture_line("fix://p", 200, json::array()));
    CHECK(message_of([&] { fetch_popular_entities(c, "fix://p", 3, {1, 0}); }).find("[]") !=
          std::string::npos);

    // Persistent non-200 statuses surface as a network error.
    FixtureClient gone = FixtureClient::from_jsonl(fixture_line("fix://pop", 404, ok));
    CHECK(kind_of([&] { fetch_popular_entities(gone, "fix://pop", 3, {2, 0}); }) ==
          ErrorKind::Network);
}

TEST_CASE("extract_two_hop validates its inputs") {
    FixtureClient client = FixtureClient::from_jsonl(drop_census_fixture());
    CHECK(kind_of([&] {
        extract_two_hop(client, "fix://sub/", {}, RelationAllowlist::defaults(), {1, 0});
    }) == ErrorKind::Config);
    CHECK(kind_of([&] {
        extract_two_hop(client, "fix://sub/", seed({"Q1"}), RelationAllowlist{}, {1, 0});
    }) == ErrorKind::Config);
    CHECK(kind_of([&] {
        extract_two_hop(client, "fix://other/", seed({"Q1"}), RelationAllowlist::defaults(),
                        {1, 0});
    }) == ErrorKind::Network); // url not recorded in the fixture

    FixtureClient no_edges = FixtureClient::from_jsonl(
        fixture_line("fix://sub/Q1", 200, json{{"rows", json::array()}}));
    CHECK(kind_of([&] {
        extract_two_hop(no_edges, "fix://sub/", seed({"Q1"}), RelationAllowlist::defaults(),
                        {1, 0});
    }) == ErrorKind::Parse);

    FixtureClient bad_edge = FixtureClient::from_jsonl(fixture_line(
        "fix://sub/Q1", 200, json{{"edges", json::array({json{{"s", "Q1"}, {"r", "P27"}}})}}));
    CHECK(kind_of([&] {
        extract_two_hop(bad_edge, "fix://sub/", seed({"Q1"}), RelationAllowlist::defaults(),
                        {1, 0});
    }) == ErrorKind::Parse);
}

TEST_CASE("default allowlist is nonempty and validates") {
    RelationAllowlist list = RelationAllowlist::defaults();
    list.validate();
    CHECK(list.nouns.size() == 31);
    CHECK(list.contains("P27"));
    CHECK(list.nouns.at("P36") == "capital");
    CHECK_FALSE(list.contains("P999"));
    CHECK(kind_of([] { RelationAllowlist{}.validate(); }) == ErrorKind::Config);
}

TEST_CASE("drop census: every rejection category is counted and logged") {
    FixtureClient client = FixtureClient::from_jsonl(drop_census_fixture());
    IngestResult result = extract_two_hop(client, "fix://sub/", seed({"Q1"}),
                                          RelationAllowlist::defaults(), {1, 0});

    CHECK(result.stats.chains_considered == 8);
    REQUIRE(result.chains.size() == 1);
    CHECK(result.stats.dropped_relation == 1);
    CHECK(result.stats.dropped_bridge == 1);
    CHECK(result.stats.dropped_degenerate == 3);
    CHECK(result.stats.dropped_duplicate == 1);
    CHECK(result.stats.dropped_functional == 1);
    CHECK(result.stats.skip_log.size() == 7);

    CHECK(count_containing(result.stats.skip_log, "relation outside allowlist") == 1);
    CHECK(count_containing(result.stats.skip_log, "bridge label mismatch") == 1);
    CHECK(count_containing(result.stats.skip_log, "entity repeats in chain") == 3);
    CHECK(count_containing(result.stats.skip_log, "duplicate chain") == 1);
    CHECK(count_containing(result.stats.skip_log, "conflicts with an earlier chain") == 1);

    const TwoHopChain& c = result.chains[0];
    CHECK(c.s == "Q1");
    CHECK(c.r1 == "P27");
    CHECK(c.bridge == "Q2");
    CHECK(c.r2 == "P36");
    CHECK(c.o == "Q3");
    CHECK(c.s_label == "Alpha Prime");
    CHECK(c.bridge_label == "Beta Land");
    CHECK(c.o_label == "Gamma Town");

    CHECK(result.source_note == "fix://sub/");
}

TEST_CASE("drop census: survivor renders into a coherent world") {
    FixtureClient client = FixtureClient::from_jsonl(drop_census_fixture());
    IngestResult result = extract_two_hop(client, "fix://sub/", seed({"Q1"}),
                                          RelationAllowlist::defaults(), {1, 0});
    const corpus::World& world = result.world;

    REQUIRE(world.entities.size() == 3);
    CHECK(world.entities[0].name == "alpha prime");
    CHECK(world.entities[0].tier == 0);
    CHECK(world.entities[1].name == "beta land");
    CHECK(world.entities[1].tier == 1);
    CHECK(world.entities[2].name == "gamma town");
    CHECK(world.entities[2].tier == 2);

    REQUIRE(world.relations.size() == 2);
    CHECK(world.relations[0].name == "rel_P27_h1");
    CHECK(world.relations[0].noun == "citizenship");
    CHECK(world.relations[0].hop == 1);
    CHECK_FALSE(world.relations[0].templates.empty());
    CHECK(world.relations[1].name == "rel_P36_h2");
    CHECK(world.relations[1].noun == "capital");
    CHECK(world.relations[1].hop == 2);

    REQUIRE(world.facts.size() == 2);
    CHECK(world.facts[0] == corpus::FactTriplet{0, 0, 1});
    CHECK(world.facts[1] == corpus::FactTriplet{1, 1, 2});
    CHECK(world.distractor_facts.empty());
    CHECK(world.seed != 0);

    REQUIRE(result.instances.size() == 1);
    const corpus::TwoHopInstance& inst = result.instances[0];
    CHECK(inst.id == 0);
    CHECK(inst.fact1 == corpus::FactTriplet{0, 0, 1});
    CHECK(inst.fact2 == corpus::FactTriplet{1, 1, 2});
    CHECK(inst.answer == 2);
    CHECK_FALSE(inst.fact1_queries.empty());
    CHECK_FALSE(inst.fact2_queries.empty());
    CHECK(inst.cot_demos.empty());
    CHECK(inst.reason_q.find("citizenship of alpha prime") != std::string::npos);
    CHECK(inst.reason_q.find("capital") != std::string::npos);
}

TEST_CASE("two seeds: hop-split relations, name dedup, functional reuse") {
    FixtureClient client = FixtureClient::from_jsonl(two_seed_fixture());
    IngestResult result = extract_two_hop(client, "fix://g2/", seed({"S1", "S2"}),
                                          RelationAllowlist::defaults(), {1, 0});
    CHECK(client.requests_served() == 2); // one sequential request per seed

    REQUIRE(result.chains.size() == 2);
    CHECK(result.stats.dropped_functional == 0); // S2 -P27-> S3 is consistent both times

    const corpus::World& world = result.world;
    REQUIRE(world.entities.size() == 4);
    CHECK(world.entities[0].name == "kappa");
    CHECK(world.entities[1].name == "lambda");
    CHECK(world.entities[2].name == "lambda ii"); // "Lambda!!" collides after cleanup
    CHECK(world.entities[3].name == "mu nu");     // first two words only

    // P27 appears at both hops and must stay two distinct relations.
    REQUIRE(world.relations.size() == 3);
    CHECK(world.relations[0].name == "rel_P27_h1");
    CHECK(world.relations[1].name == "rel_P27_h2");
    CHECK(world.relations[2].name == "rel_P36_h2");

    REQUIRE(world.facts.size() == 4);
    CHECK(world.facts[0] == corpus::FactTriplet{0, 0, 1});
    CHECK(world.facts[1] == corpus::FactTriplet{1, 0, 2});
    CHECK(world.facts[2] == corpus::FactTriplet{1, 1, 2});
    CHECK(world.facts[3] == corpus::FactTriplet{2, 2, 3});

    REQUIRE(result.instances.size() == 2);
    CHECK(result.instances[0].answer == 2);
    CHECK(result.instances[1].fact1 == corpus::FactTriplet{1, 0, 2});
    CHECK(result.instances[1].fact2 == corpus::FactTriplet{2, 2, 3});
    CHECK(result.instances[1].answer == 3);
}

TEST_CASE("unusable labels fall back to a generic entity name") {
    json sub = json{{"edges", json::array({
                                  edge("X1", "", "P27", "X2", "!!!"),
                                  edge("X2", "!!!", "P36", "X3", "Zed"),
                              })}};
    FixtureClient client =
        FixtureClient::from_jsonl(fixture_line("fix://sub/X1", 200, sub));
    IngestResult result = extract_two_hop(client, "fix://sub/", seed({"X1"}),
                                          RelationAllowlist::defaults(), {1, 0});
    REQUIRE(result.world.entities.size() == 3);
    CHECK(result.world.entities[0].name == "entity");
    CHECK(result.world.entities[1].name == "entity ii");
    CHECK(result.world.entities[2].name == "zed");
}

TEST_CASE("emitted chains always satisfy the extraction invariants") {
    for (const std::string& text : {drop_census_fixture(), two_seed_fixture()}) {
        FixtureClient client = FixtureClient::from_jsonl(text);
        const std::string prefix =
            text.find("g2") != std::string::npos ? "fix://g2/" : "fix://sub/";
        const auto seeds = prefix == "fix://g2/" ? seed({"S1", "S2"}) : seed({"Q1"});
        RelationAllowlist allow = RelationAllowlist::defaults();
        IngestResult result = extract_two_hop(client, prefix, seeds, allow, {1, 0});

        std::set<std::string> texts;
        std::map<std::pair<std::string, std::string>, std::string> functional;
        for (const TwoHopChain& c : result.chains) {
            CHECK(allow.contains(c.r1));
            CHECK(allow.contains(c.r2));
            CHECK(c.s != c.bridge);
            CHECK(c.bridge != c.o);
            CHECK(c.s != c.o);
            const std::string key =
                c.s + " -" + c.r1 + "-> " + c.bridge + " -" + c.r2 + "-> " + c.o;
            CHECK(texts.insert(key).second); // no duplicates survive
            for (auto [pair, obj] : {std::make_pair(std::make_pair(c.s, c.r1), c.bridge),
                                     std::make_pair(std::make_pair(c.bridge, c.r2), c.o)}) {
                auto it = functional.find(pair);
                if (it == functional.end())
                    functional[pair] = obj;
                else
                    CHECK(it->second == obj);
            }
        }
        const int dropped = result.stats.dropped_relation + result.stats.dropped_bridge +
                            result.stats.dropped_degenerate + result.stats.dropped_duplicate +
                            result.stats.dropped_functional;
        CHECK(result.stats.chains_considered ==
              dropped + static_cast<int>(result.chains.size()));
        CHECK(result.stats.skip_log.size() == static_cast<std::size_t>(dropped));
    }
}

TEST_CASE("synthesized world and instances round-trip through the corpus codecs") {
    FixtureClient client = FixtureClient::from_jsonl(two_seed_fixture());
    IngestResult result = extract_two_hop(client, "fix://g2/", seed({"S1", "S2"}),
                                          RelationAllowlist::defaults(), {1, 0});

    const std::string world_bytes = corpus::world_to_jsonl(result.world);
    CHECK(corpus::world_to_jsonl(corpus::world_from_jsonl(world_bytes)) == world_bytes);

    const std::string inst_bytes = corpus::instances_to_jsonl(result.instances);
    CHECK(corpus::instances_to_jsonl(corpus::instances_from_jsonl(inst_bytes)) == inst_bytes);
}

TEST_CASE("fixture replay is byte-identical across runs") {
    auto run = [] {
        FixtureClient client = FixtureClient::from_jsonl(two_seed_fixture());
        return extract_two_hop(client, "fix://g2/", seed({"S1", "S2"}),
                               RelationAllowlist::defaults(), {1, 0});
    };
    IngestResult a = run();
    IngestResult b = run();

    const std::string bytes_a = result_to_jsonl(a);
    CHECK(bytes_a == result_to_jsonl(b));
    CHECK(corpus::world_to_jsonl(a.world) == corpus::world_to_jsonl(b.world));
    CHECK(corpus::instances_to_jsonl(a.instances) == corpus::instances_to_jsonl(b.instances));
    CHECK(a.world.seed == b.world.seed);

    // The rendering carries schema, provenance, chains, skips, and totals.
    CHECK(bytes_a.find("\"schema_version\":1") != std::string::npos);
    CHECK(bytes_a.find("fix://g2/") != std::string::npos);
    CHECK(bytes_a.find("\"kind\":\"chain\"") != std::string::npos);
    CHECK(bytes_a.find("\"kind\":\"stats\"") != std::string::npos);
    CHECK(bytes_a.find("\"chains_considered\":") != std::string::npos);
}
