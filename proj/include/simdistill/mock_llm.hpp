#pragma once

// Deterministic stand-in for an OpenAI-compatible server. It answers chat
// completions with decision-process text plus per-token logprobs, and
// embeddings with hashed bag-of-words vectors. Behaviour is driven by a JSON
// script: scripted completions keyed by prompt fingerprint, per-model
// sampling policies, injected faults and a cap on n.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "simdistill/gateway.hpp"
#include "simdistill/io.hpp"

namespace simdistill {

struct MockPolicy {
    enum class Kind { Uniform, Logits, Oracle };
    Kind kind = Kind::Uniform;
    // Logits: base logits ~ spread * N(0,1) per prompt, shared by every
    // model; each sample adds noise * N(0,1) and divides by temperature.
    double temperature = 1.0;
    double spread = 1.0;
    double noise = 0.0;
    double answer_boost = 0.0;  // added to the scripted answer's base logit
    bool decision_text = true;  // false: bare "Behavior: [X]"
    double invalid_rate = 0.0;  // probability of an output with no behavior
};

struct ScriptedCompletion {
    std::string text;
    // Logprobs reported at the behavior letter token. Empty: the sampled
    // token is reported with logprob 0 and no alternatives.
    std::map<char, double> letter_logprobs;
};

struct MockFault {
    int status = 503;
    int count = 1;
    std::string body;  // served instead of an error payload when non-empty
};

struct MockScript {
    MockPolicy default_policy;
    std::map<std::string, MockPolicy> model_policies;
    std::map<std::string, std::vector<ScriptedCompletion>> responses;  // by prompt fingerprint
    std::map<std::string, char> answers;                               // by prompt fingerprint
    std::vector<MockFault> faults;  // consumed in order by incoming requests
    bool unscripted_404 = false;    // only meaningful when `responses` is non-empty
    int max_n = 0;                  // 0: no cap on choices per response
    int latency_ms = 0;
    int embedding_dim = 64;
    std::map<std::string, std::vector<double>> embeddings;  // fixed vectors by exact text

    static MockScript from_json(const Json& j);
};

struct MockReply {
    int status = 200;
    std::string body;
};

// Lowercase hex SHA-256 of the prompt text; the key used in scripts.
std::string prompt_fingerprint(std::string_view prompt);

// Number of options in a rendered prompt: lines beginning "[A] ", "[B] ", ...
int count_prompt_options(std::string_view prompt);

// Splits text into tokens whose concatenation is the text: optional leading
// spaces followed by an alphanumeric run or a single other character.
std::vector<std::string> mock_tokenize(std::string_view text);

class MockLlm {
public:
    explicit MockLlm(MockScript script = {});

    // `path` is "/chat/completions" or "/embeddings" (a "/v1" prefix is accepted).
    MockReply handle(const std::string& path, const std::string& body);

    std::int64_t requests() const { return requests_.load(); }
    std::int64_t max_in_flight() const { return max_in_flight_.load(); }

private:
    MockReply chat(const Json& request);
    MockReply embeddings(const Json& request);
    const MockPolicy& policy_for(const std::string& model) const;

    MockScript script_;
    std::mutex mu_;
    std::size_t fault_cursor_ = 0;
    int fault_used_ = 0;
    std::map<std::string, std::size_t> scripted_cursor_;
    std::atomic<std::int64_t> requests_{0};
    std::atomic<std::int64_t> in_flight_{0};
    std::atomic<std::int64_t> max_in_flight_{0};
    std::atomic<std::uint64_t> unseeded_counter_{0};
};

// One engine per script path for the life of the process, so endpoints that
// name the same script share state. An empty path yields the default script.
std::shared_ptr<MockLlm> shared_mock_engine(const std::string& script_path);

std::shared_ptr<Transport> make_mock_transport(std::shared_ptr<MockLlm> engine);

// Serves an engine over HTTP on a background thread.
class MockServer {
public:
    MockServer(std::shared_ptr<MockLlm> engine, const std::string& host = "127.0.0.1", int port = 0);
    ~MockServer();
    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    int port() const { return port_; }
    void stop();
    // Blocks until the server stops.
    void wait();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
};

}  // namespace simdistill
