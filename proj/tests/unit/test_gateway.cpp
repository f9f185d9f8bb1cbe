#include <doctest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include "helpers.hpp"
#include "simdistill/errors.hpp"
#include "simdistill/gateway.hpp"
#include "simdistill/mock_llm.hpp"

using namespace simdistill;

namespace {

ModelEndpoint endpoint(const std::string& model = "sim", int max_n = 0) {
    ModelEndpoint e;
    e.base_url = "mock://";
    e.model_name = model;
    e.role = EndpointRole::Strong;
    e.max_n_per_call = max_n;
    return e;
}

GatewayOptions fast_options(int concurrency = 4, int attempts = 3) {
    GatewayOptions o;
    o.concurrency = concurrency;
    o.retry.max_attempts = attempts;
    o.retry.base_delay = std::chrono::milliseconds(1);
    o.retry.max_delay = std::chrono::milliseconds(2);
    return o;
}

GenerationRequest request(int n, std::int64_t seed = 7) {
    GenerationRequest r;
    r.prompt_text = "Pick one.\n[A] first\n[B] second\n[C] third\n";
    r.n_samples = n;
    r.seed = seed;
    return r;
}

// Succeeds `good` times, then answers every call with `status`.
class FlakyTransport : public Transport {
public:
    FlakyTransport(std::shared_ptr<Transport> inner, int good, int status)
        : inner_(std::move(inner)), good_(good), status_(status) {}
    HttpReply post(const std::string& path, const std::string& body,
                   const std::vector<std::pair<std::string, std::string>>& headers) override {
        ++calls;
        if (good_-- > 0) return inner_->post(path, body, headers);
        return {status_, R"({"error":{"message":"down"}})", ""};
    }
    std::atomic<int> calls{0};

private:
    std::shared_ptr<Transport> inner_;
    std::atomic<int> good_;
    int status_;
};

}  // namespace

TEST_CASE("wire format of a chat request") {
    const auto body = Json::parse(Gateway::chat_request_body(endpoint("m1"), request(3), 3, 42));
    CHECK(body["model"] == "m1");
    CHECK(body["n"] == 3);
    CHECK(body["logprobs"] == true);
    CHECK(body["top_logprobs"] == 20);
    CHECK(body["temperature"] == 1.0);
    CHECK(body["top_p"] == 0.9);
    CHECK(body["max_tokens"] == 1024);
    CHECK(body["seed"] == 42);
    CHECK(body["messages"][0]["role"] == "user");
}

TEST_CASE("parsing a chat response keeps tokens and alternatives") {
    const std::string body = R"({"choices":[{"index":0,"message":{"role":"assistant","content":"Behavior: [B]"},
        "logprobs":{"content":[{"token":"B","logprob":-0.2,"top_logprobs":[{"token":"B","logprob":-0.2},
        {"token":"A","logprob":-1.8}]}]},"finish_reason":"stop"}],"usage":{"prompt_tokens":12,"completion_tokens":5}})";
    Usage usage;
    const auto samples = Gateway::parse_chat_response(body, &usage);
    REQUIRE(samples.size() == 1);
    CHECK(samples[0].text == "Behavior: [B]");
    REQUIRE(samples[0].token_records.size() == 1);
    CHECK(samples[0].token_records[0].top_alternatives.size() == 2);
    CHECK(usage.prompt_tokens == 12);
    CHECK(usage.completion_tokens == 5);
}

TEST_CASE("n samples are assembled over capped calls") {
    MockScript script;
    script.max_n = 3;
    auto engine = std::make_shared<MockLlm>(script);
    UsageLedger ledger;
    Gateway gw(endpoint(), make_mock_transport(engine), fast_options(), &ledger);
    const auto g = gw.complete_n(request(10), "movies");
    CHECK(g.samples.size() == 10);
    CHECK(g.wire_calls == 4);
    CHECK(engine->requests() == 4);
    const auto total = ledger.total();
    CHECK(total.requests == 4);
    CHECK(total.samples == 10);
    CHECK(total.prompt_tokens > 0);
    CHECK(ledger.snapshot().count({"strong", "movies"}) == 1);
}

TEST_CASE("seeded requests are reproducible") {
    auto engine = std::make_shared<MockLlm>();
    Gateway gw(endpoint(), make_mock_transport(engine), fast_options());
    const auto a = gw.complete_n(request(5, 1));
    const auto b = gw.complete_n(request(5, 1));
    for (std::size_t i = 0; i < 5; ++i) CHECK(a.samples[i].text == b.samples[i].text);
}

TEST_CASE("transient errors are retried, permanent ones are not") {
    SUBCASE("two 503s then success") {
        MockScript script;
        script.faults = {{503, 2, ""}};
        auto engine = std::make_shared<MockLlm>(script);
        Gateway gw(endpoint(), make_mock_transport(engine), fast_options(4, 5));
        const auto g = gw.complete_n(request(2));
        CHECK(g.samples.size() == 2);
        CHECK(g.retries == 2);
    }
    SUBCASE("retries exhausted") {
        MockScript script;
        script.faults = {{429, 10, ""}};
        Gateway gw(endpoint(), make_mock_transport(std::make_shared<MockLlm>(script)), fast_options(4, 3));
        CHECK_THROWS_AS(gw.complete_n(request(2)), EndpointFailure);
    }
    SUBCASE("a 400 is rejected at once") {
        MockScript script;
        script.faults = {{400, 1, R"({"error":{"message":"bad model"}})"}};
        auto engine = std::make_shared<MockLlm>(script);
        Gateway gw(endpoint(), make_mock_transport(engine), fast_options());
        try {
            gw.complete_n(request(2));
            FAIL("expected RequestRejected");
        } catch (const RequestRejected& e) {
            CHECK(e.status() == 400);
            CHECK(e.exit_code() == 4);
            CHECK(std::string(e.what()).find("bad model") != std::string::npos);
        }
        CHECK(engine->requests() == 1);
    }
    SUBCASE("a malformed 200 body is retried") {
        MockScript script;
        script.faults = {{200, 1, "{not json"}};
        Gateway gw(endpoint(), make_mock_transport(std::make_shared<MockLlm>(script)), fast_options());
        CHECK(gw.complete_n(request(1)).samples.size() == 1);
    }
}

TEST_CASE("failure after some chunks yields a partial generation") {
    MockScript script;
    script.max_n = 2;
    auto flaky = std::make_shared<FlakyTransport>(make_mock_transport(std::make_shared<MockLlm>(script)), 2, 503);
    Gateway gw(endpoint(), flaky, fast_options(4, 2));
    try {
        gw.complete_n(request(6));
        FAIL("expected PartialGeneration");
    } catch (const PartialGeneration& e) {
        CHECK(e.samples().size() == 4);
        CHECK(e.exit_code() == 4);
    }
}

TEST_CASE("responses are served from the store on replay") {
    testing::TempDir tmp("store");
    ResponseStore store(tmp.path());
    auto engine = std::make_shared<MockLlm>();
    UsageLedger ledger;
    {
        Gateway gw(endpoint(), make_mock_transport(engine), fast_options(), &ledger, &store);
        gw.complete_n(request(4));
    }
    const auto before = ledger.total();
    Gateway replay(endpoint(), make_mock_transport(engine), fast_options(), &ledger, &store);
    const auto g = replay.complete_n(request(4));
    CHECK(g.cache_hits == 1);
    CHECK(g.wire_calls == 0);
    CHECK(engine->requests() == 1);
    CHECK(ledger.total().requests == before.requests);
}

TEST_CASE("in-flight requests never exceed the concurrency bound") {
    MockScript script;
    script.latency_ms = 5;
    auto engine = std::make_shared<MockLlm>(script);
    Gateway gw(endpoint(), make_mock_transport(engine), fast_options(3));
    std::vector<std::thread> threads;
    for (int t = 0; t < 12; ++t) {
        threads.emplace_back([&, t] { gw.complete_n(request(2, t)); });
    }
    for (auto& t : threads) t.join();
    CHECK(gw.stats().max_in_flight <= 3);
    CHECK(engine->max_in_flight() <= 3);
    CHECK(gw.stats().max_in_flight >= 2);
}

TEST_CASE("embeddings are unit length and deduplicated") {
    auto engine = std::make_shared<MockLlm>();
    UsageLedger ledger;
    Gateway gw(endpoint(), make_mock_transport(engine), fast_options(), &ledger);
    const std::vector<std::string> texts = {"a quiet drama", "loud action film", "a quiet drama"};
    const auto v = gw.embed_batch(texts);
    REQUIRE(v.size() == 3);
    for (const auto& x : v) {
        double norm = 0.0;
        for (double y : x) norm += y * y;
        CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(v[0] == v[2]);
    CHECK(v[0] != v[1]);
    CHECK(ledger.total().samples == 2);
}

TEST_CASE("the HTTP transport talks to the mock server") {
    MockServer server(std::make_shared<MockLlm>(), "127.0.0.1", 0);
    REQUIRE(server.port() > 0);
    ModelEndpoint e = endpoint();
    e.base_url = "http://127.0.0.1:" + std::to_string(server.port()) + "/v1";
    Gateway gw(e, make_transport(e, std::chrono::seconds(5)), fast_options());
    const auto g = gw.complete_n(request(3));
    CHECK(g.samples.size() == 3);
    CHECK_FALSE(g.samples[0].token_records.empty());
    server.stop();

    ModelEndpoint dead = e;
    dead.base_url = "http://127.0.0.1:1/v1";
    Gateway down(dead, make_transport(dead, std::chrono::seconds(1)), fast_options(1, 2));
    CHECK_THROWS_AS(down.complete_n(request(1)), EndpointFailure);
}

TEST_CASE("usage ledger merges saved snapshots") {
    UsageLedger a;
    a.add("strong", "movies", Usage{10, 4}, 2);
    UsageLedger b;
    b.merge_json(Json::parse(a.to_json().dump()));
    b.add("strong", "movies", Usage{5, 1}, 1);
    const auto e = b.snapshot().at({"strong", "movies"});
    CHECK(e.requests == 2);
    CHECK(e.samples == 3);
    CHECK(e.prompt_tokens == 15);
    CHECK(e.completion_tokens == 5);
}
