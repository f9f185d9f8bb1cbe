#pragma once

// Client for OpenAI-compatible chat-completion and embedding endpoints.
//
// Every raw 200 response is stored in a content-addressed directory before it
// is parsed; identical requests are then served from that store, which makes
// interrupted runs resumable without paying for tokens twice.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "simdistill/errors.hpp"
#include "simdistill/io.hpp"

namespace simdistill {

enum class EndpointRole { Strong, Weak, Eval, Embeddings };

std::string_view to_string(EndpointRole role);
EndpointRole role_from_string(std::string_view s);

struct ModelEndpoint {
    std::string base_url;     // e.g. http://127.0.0.1:8000/v1, or mock://script.json
    std::string model_name;
    std::string api_key_env;  // name of the env var holding the key; may be empty
    EndpointRole role = EndpointRole::Strong;
    int max_n_per_call = 0;   // 0: no client-side cap on n
};

struct GenerationRequest {
    std::string prompt_text;
    int n_samples = 1;
    double temperature = 1.0;
    double top_p = 0.9;
    int max_tokens = 1024;
    int logprob_depth = 20;
    std::optional<std::int64_t> seed;
};

struct TokenAlternative {
    std::string token;
    double logprob = 0.0;
};

struct TokenRecord {
    std::string token;
    double logprob = 0.0;
    std::vector<TokenAlternative> top_alternatives;
};

struct Usage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct GenerationSample {
    std::string text;
    std::vector<TokenRecord> token_records;
    Usage usage;  // usage of the wire response this sample came from
};

struct Generation {
    std::vector<GenerationSample> samples;
    int wire_calls = 0;
    int cache_hits = 0;
    int retries = 0;
};

// Fewer samples than requested after retries; carries what succeeded.
class PartialGeneration : public Error {
public:
    PartialGeneration(std::vector<GenerationSample> samples, int requested, const std::string& cause)
        : Error("partial generation: got " + std::to_string(samples.size()) + " of " + std::to_string(requested) +
                    " samples (" + cause + ")",
                4),
          samples_(std::move(samples)) {}
    const std::vector<GenerationSample>& samples() const noexcept { return samples_; }

private:
    std::vector<GenerationSample> samples_;
};

// Request counts and token totals per (endpoint role, domain). Only fresh
// wire responses are counted, never cache hits. Thread-safe.
class UsageLedger {
public:
    struct Entry {
        std::int64_t requests = 0;
        std::int64_t samples = 0;  // completions or embedding vectors returned
        std::int64_t prompt_tokens = 0;
        std::int64_t completion_tokens = 0;
    };
    using Key = std::pair<std::string, std::string>;

    void add(const std::string& endpoint, const std::string& domain, const Usage& usage, std::int64_t samples);
    std::map<Key, Entry> snapshot() const;
    Entry total() const;
    void clear();

    OrderedJson to_json() const;
    void merge_json(const Json& j);

private:
    mutable std::mutex mu_;
    std::map<Key, Entry> entries_;
};

struct HttpReply {
    int status = 0;  // 0: transport failure (connection refused, timeout)
    std::string body;
    std::string error;
};

class Transport {
public:
    virtual ~Transport() = default;
    // `path` is relative to the endpoint base, e.g. "/chat/completions".
    virtual HttpReply post(const std::string& path, const std::string& body,
                           const std::vector<std::pair<std::string, std::string>>& headers) = 0;
};

class HttpTransport : public Transport {
public:
    HttpTransport(const std::string& base_url, std::chrono::seconds timeout);
    HttpReply post(const std::string& path, const std::string& body,
                   const std::vector<std::pair<std::string, std::string>>& headers) override;

private:
    std::string scheme_host_port_;
    std::string path_prefix_;
    std::chrono::seconds timeout_;
};

// Content-addressed store of raw responses under `dir/<aa>/<sha256>.json`.
class ResponseStore {
public:
    explicit ResponseStore(std::filesystem::path dir) : dir_(std::move(dir)) {}
    std::optional<std::string> load(const std::string& key) const;
    void save(const std::string& key, const std::string& body);
    void erase(const std::string& key);
    std::filesystem::path path_for(const std::string& key) const;

private:
    std::filesystem::path dir_;
    std::mutex mu_;
};

struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds base_delay{500};
    std::chrono::milliseconds max_delay{8000};
};

struct GatewayOptions {
    int concurrency = 8;
    RetryPolicy retry;
    std::chrono::seconds timeout{120};
    std::size_t embed_batch_size = 64;
};

struct GatewayStats {
    std::int64_t wire_calls = 0;
    std::int64_t retries = 0;
    std::int64_t cache_hits = 0;
    std::int64_t max_in_flight = 0;
};

class Gateway {
public:
    // `ledger` and `store` are optional and must outlive the gateway.
    Gateway(ModelEndpoint endpoint, std::shared_ptr<Transport> transport, GatewayOptions options = {},
            UsageLedger* ledger = nullptr, ResponseStore* store = nullptr);

    const ModelEndpoint& endpoint() const { return endpoint_; }

    // Exactly `request.n_samples` samples, assembled over as many wire calls
    // as the server needs.
    Generation complete_n(const GenerationRequest& request, const std::string& domain = {});

    // One L2-normalised vector per text. Results are cached by content hash.
    std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts, const std::string& domain = {});

    GatewayStats stats() const;

    // Request body for one chat call; exposed for tests of the wire format.
    static std::string chat_request_body(const ModelEndpoint& endpoint, const GenerationRequest& request, int n,
                                         std::optional<std::int64_t> seed);

    // Parses a chat-completions response body into samples.
    static std::vector<GenerationSample> parse_chat_response(const std::string& body, Usage* usage_out = nullptr);

private:
    struct CallResult {
        std::string body;
        bool from_cache = false;
        int retries = 0;
    };

    // POSTs with retry, caching and the in-flight bound; throws on failure.
    CallResult call(const std::string& path, const std::string& body);

    void acquire_slot();
    void release_slot();

    ModelEndpoint endpoint_;
    std::shared_ptr<Transport> transport_;
    GatewayOptions options_;
    UsageLedger* ledger_;
    ResponseStore* store_;

    mutable std::mutex mu_;
    std::condition_variable slot_cv_;
    int in_flight_ = 0;
    GatewayStats stats_;
    std::map<std::string, std::vector<double>> embedding_cache_;
};

// Transport for `endpoint.base_url`: HTTP(S), or the in-process mock for
// `mock://<script path>` (`mock://` alone uses the default script).
std::shared_ptr<Transport> make_transport(const ModelEndpoint& endpoint, std::chrono::seconds timeout);

double l2_normalize(std::vector<double>& v);

}  // namespace simdistill
