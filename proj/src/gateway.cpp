#include "simdistill/gateway.hpp"

#include <httplib.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <thread>

#include "simdistill/mock_llm.hpp"

namespace simdistill {

std::string_view to_string(EndpointRole role) {
    switch (role) {
        case EndpointRole::Strong: return "strong";
        case EndpointRole::Weak: return "weak";
        case EndpointRole::Eval: return "eval";
        case EndpointRole::Embeddings: return "embeddings";
    }
    return "strong";
}

EndpointRole role_from_string(std::string_view s) {
    if (s == "strong") return EndpointRole::Strong;
    if (s == "weak") return EndpointRole::Weak;
    if (s == "eval") return EndpointRole::Eval;
    if (s == "embeddings") return EndpointRole::Embeddings;
    throw ConfigError("unknown endpoint role '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// UsageLedger

void UsageLedger::add(const std::string& endpoint, const std::string& domain, const Usage& usage,
                      std::int64_t samples) {
    std::lock_guard lock(mu_);
    auto& e = entries_[{endpoint, domain}];
    e.requests += 1;
    e.samples += samples;
    e.prompt_tokens += usage.prompt_tokens;
    e.completion_tokens += usage.completion_tokens;
}

std::map<UsageLedger::Key, UsageLedger::Entry> UsageLedger::snapshot() const {
    std::lock_guard lock(mu_);
    return entries_;
}

void UsageLedger::clear() {
    std::lock_guard lock(mu_);
    entries_.clear();
}

UsageLedger::Entry UsageLedger::total() const {
    std::lock_guard lock(mu_);
    Entry t;
    for (const auto& [_, e] : entries_) {
        t.requests += e.requests;
        t.samples += e.samples;
        t.prompt_tokens += e.prompt_tokens;
        t.completion_tokens += e.completion_tokens;
    }
    return t;
}

OrderedJson UsageLedger::to_json() const {
    std::lock_guard lock(mu_);
    OrderedJson rows = OrderedJson::array();
    for (const auto& [key, e] : entries_) {
        rows.push_back({{"endpoint", key.first},
                        {"domain", key.second},
                        {"requests", e.requests},
                        {"samples", e.samples},
                        {"prompt_tokens", e.prompt_tokens},
                        {"completion_tokens", e.completion_tokens}});
    }
    return OrderedJson{{"entries", rows}};
}

void UsageLedger::merge_json(const Json& j) {
    std::lock_guard lock(mu_);
    for (const auto& row : j.at("entries")) {
        auto& e = entries_[{row.at("endpoint").get<std::string>(), row.at("domain").get<std::string>()}];
        e.requests += row.at("requests").get<std::int64_t>();
        e.samples += row.value("samples", std::int64_t{0});
        e.prompt_tokens += row.at("prompt_tokens").get<std::int64_t>();
        e.completion_tokens += row.at("completion_tokens").get<std::int64_t>();
    }
}

// ---------------------------------------------------------------------------
// HttpTransport

HttpTransport::HttpTransport(const std::string& base_url, std::chrono::seconds timeout) : timeout_(timeout) {
    const auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("endpoint base_url must include a scheme: " + base_url);
    }
    const auto path_start = base_url.find('/', scheme_end + 3);
    scheme_host_port_ = base_url.substr(0, path_start);
    if (path_start != std::string::npos) path_prefix_ = base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

HttpReply HttpTransport::post(const std::string& path, const std::string& body,
                              const std::vector<std::pair<std::string, std::string>>& headers) {
    // A client per call: httplib clients are not safe for concurrent use.
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers hs;
    for (const auto& [k, v] : headers) hs.emplace(k, v);
    auto res = client.Post(path_prefix_ + path, hs, body, "application/json");
    HttpReply reply;
    if (!res) {
        reply.error = httplib::to_string(res.error());
        return reply;
    }
    reply.status = res->status;
    reply.body = res->body;
    return reply;
}

// ---------------------------------------------------------------------------
// ResponseStore

std::filesystem::path ResponseStore::path_for(const std::string& key) const {
    return dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<std::string> ResponseStore::load(const std::string& key) const {
    const auto p = path_for(key);
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return body;
}

void ResponseStore::save(const std::string& key, const std::string& body) {
    std::lock_guard lock(mu_);
    const auto p = path_for(key);
    std::filesystem::create_directories(p.parent_path());
    write_file_atomic(p, body);
}

void ResponseStore::erase(const std::string& key) {
    std::lock_guard lock(mu_);
    std::error_code ec;
    std::filesystem::remove(path_for(key), ec);
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(ModelEndpoint endpoint, std::shared_ptr<Transport> transport, GatewayOptions options,
                 UsageLedger* ledger, ResponseStore* store)
    : endpoint_(std::move(endpoint)),
      transport_(std::move(transport)),
      options_(options),
      ledger_(ledger),
      store_(store) {
    if (options_.concurrency < 1) throw ConfigError("gateway concurrency must be >= 1");
    if (options_.retry.max_attempts < 1) throw ConfigError("gateway max_attempts must be >= 1");
}

GatewayStats Gateway::stats() const {
    std::lock_guard lock(mu_);
    return stats_;
}

void Gateway::acquire_slot() {
    std::unique_lock lock(mu_);
    slot_cv_.wait(lock, [&] { return in_flight_ < options_.concurrency; });
    ++in_flight_;
    stats_.max_in_flight = std::max<std::int64_t>(stats_.max_in_flight, in_flight_);
}

void Gateway::release_slot() {
    {
        std::lock_guard lock(mu_);
        --in_flight_;
    }
    slot_cv_.notify_one();
}

namespace {

bool is_transient(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }

std::string excerpt(const std::string& body) {
    constexpr std::size_t kMax = 300;
    return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

struct SlotGuard {
    std::function<void()> release;
    ~SlotGuard() { release(); }
};

}  // namespace

Gateway::CallResult Gateway::call(const std::string& path, const std::string& body) {
    const std::string key = sha256_hex(path + "\n" + body);
    if (store_ != nullptr) {
        if (auto cached = store_->load(key)) {
            std::lock_guard lock(mu_);
            ++stats_.cache_hits;
            return {std::move(*cached), true, 0};
        }
    }

    std::vector<std::pair<std::string, std::string>> headers;
    if (!endpoint_.api_key_env.empty()) {
        if (const char* key_value = std::getenv(endpoint_.api_key_env.c_str()); key_value != nullptr) {
            headers.emplace_back("Authorization", std::string("Bearer ") + key_value);
        }
    }

    std::string last_error;
    for (int attempt = 1; attempt <= options_.retry.max_attempts; ++attempt) {
        if (attempt > 1) {
            auto delay = options_.retry.base_delay * (1LL << std::min(attempt - 2, 20));
            if (delay > options_.retry.max_delay) delay = options_.retry.max_delay;
            if (delay.count() > 0) std::this_thread::sleep_for(delay);
        }
        HttpReply reply;
        {
            acquire_slot();
            SlotGuard guard{[this] { release_slot(); }};
            reply = transport_->post(path, body, headers);
        }
        {
            std::lock_guard lock(mu_);
            ++stats_.wire_calls;
            if (attempt > 1) ++stats_.retries;
        }
        if (reply.status == 200) {
            if (!Json::accept(reply.body)) {
                last_error = "malformed JSON body";
                continue;
            }
            if (store_ != nullptr) store_->save(key, reply.body);
            return {std::move(reply.body), false, attempt - 1};
        }
        if (!is_transient(reply.status)) {
            throw RequestRejected(reply.status, excerpt(reply.body));
        }
        last_error = reply.status == 0 ? reply.error : "HTTP " + std::to_string(reply.status);
    }
    throw EndpointFailure(endpoint_.model_name + path + ": " + last_error + " after " +
                          std::to_string(options_.retry.max_attempts) + " attempts");
}

std::string Gateway::chat_request_body(const ModelEndpoint& endpoint, const GenerationRequest& request, int n,
                                       std::optional<std::int64_t> seed) {
    OrderedJson body;
    body["model"] = endpoint.model_name;
    body["messages"] = OrderedJson::array({OrderedJson{{"role", "user"}, {"content", request.prompt_text}}});
    body["n"] = n;
    body["temperature"] = request.temperature;
    body["top_p"] = request.top_p;
    body["max_tokens"] = request.max_tokens;
    body["logprobs"] = true;
    body["top_logprobs"] = request.logprob_depth;
    if (seed) body["seed"] = *seed;
    return body.dump();
}

std::vector<GenerationSample> Gateway::parse_chat_response(const std::string& body, Usage* usage_out) {
    const Json j = Json::parse(body);
    Usage usage;
    if (auto it = j.find("usage"); it != j.end() && it->is_object()) {
        usage.prompt_tokens = it->value("prompt_tokens", std::int64_t{0});
        usage.completion_tokens = it->value("completion_tokens", std::int64_t{0});
    }
    if (usage_out != nullptr) *usage_out = usage;

    std::vector<GenerationSample> samples;
    for (const auto& choice : j.at("choices")) {
        GenerationSample s;
        const auto& message = choice.at("message");
        if (message.contains("content") && message.at("content").is_string()) {
            s.text = message.at("content").get<std::string>();
        }
        s.usage = usage;
        if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object()) {
            if (auto content = lp->find("content"); content != lp->end() && content->is_array()) {
                for (const auto& t : *content) {
                    TokenRecord rec;
                    rec.token = t.at("token").get<std::string>();
                    rec.logprob = t.at("logprob").get<double>();
                    if (auto top = t.find("top_logprobs"); top != t.end() && top->is_array()) {
                        for (const auto& alt : *top) {
                            rec.top_alternatives.push_back(
                                {alt.at("token").get<std::string>(), alt.at("logprob").get<double>()});
                        }
                    }
                    s.token_records.push_back(std::move(rec));
                }
            }
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

Generation Gateway::complete_n(const GenerationRequest& request, const std::string& domain) {
    if (request.n_samples < 1) throw ContractViolation("n_samples must be >= 1");
    Generation out;
    std::string failure;
    // Each chunk shifts the seed by the number of samples already collected,
    // so chunked and single-call runs draw disjoint sample streams.
    int empty_rounds = 0;
    while (static_cast<int>(out.samples.size()) < request.n_samples) {
        const int have = static_cast<int>(out.samples.size());
        int n = request.n_samples - have;
        if (endpoint_.max_n_per_call > 0) n = std::min(n, endpoint_.max_n_per_call);
        std::optional<std::int64_t> seed;
        if (request.seed) seed = *request.seed + have;
        const std::string body = chat_request_body(endpoint_, request, n, seed);

        CallResult result;
        try {
            result = call("/chat/completions", body);
        } catch (const EndpointFailure& e) {
            failure = e.what();
            break;
        }
        out.retries += result.retries;
        if (result.from_cache) {
            ++out.cache_hits;
        } else {
            ++out.wire_calls;
        }

        Usage usage;
        std::vector<GenerationSample> got;
        try {
            got = parse_chat_response(result.body, &usage);
        } catch (const std::exception& e) {
            failure = std::string("unparseable response: ") + e.what();
            break;
        }
        if (!result.from_cache && ledger_ != nullptr) {
            ledger_->add(std::string(to_string(endpoint_.role)), domain, usage, static_cast<std::int64_t>(got.size()));
        }
        if (got.empty()) {
            if (++empty_rounds >= options_.retry.max_attempts) {
                failure = "server returned no choices";
                break;
            }
            continue;
        }
        for (auto& s : got) {
            if (static_cast<int>(out.samples.size()) == request.n_samples) break;
            out.samples.push_back(std::move(s));
        }
    }
    if (static_cast<int>(out.samples.size()) < request.n_samples) {
        if (out.samples.empty()) throw EndpointFailure(failure);
        throw PartialGeneration(std::move(out.samples), request.n_samples, failure);
    }
    return out;
}

double l2_normalize(std::vector<double>& v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm > 0.0) {
        for (double& x : v) x /= norm;
    }
    return norm;
}

std::vector<std::vector<double>> Gateway::embed_batch(std::span<const std::string> texts, const std::string& domain) {
    if (texts.empty()) throw ContractViolation("embed_batch requires at least one text");
    std::vector<std::string> hashes;
    hashes.reserve(texts.size());
    std::vector<std::size_t> pending;  // indices of first occurrences not yet cached
    {
        std::lock_guard lock(mu_);
        std::set<std::string> queued;
        for (std::size_t i = 0; i < texts.size(); ++i) {
            hashes.push_back(sha256_hex(texts[i]));
            if (embedding_cache_.count(hashes.back()) != 0) {
                ++stats_.cache_hits;
            } else if (queued.insert(hashes.back()).second) {
                pending.push_back(i);
            }
        }
    }

    for (std::size_t start = 0; start < pending.size(); start += options_.embed_batch_size) {
        const std::size_t end = std::min(pending.size(), start + options_.embed_batch_size);
        OrderedJson body;
        body["model"] = endpoint_.model_name;
        body["input"] = OrderedJson::array();
        for (std::size_t p = start; p < end; ++p) body["input"].push_back(texts[pending[p]]);
        const CallResult result = call("/embeddings", body.dump());

        const Json j = Json::parse(result.body);
        const auto& data = j.at("data");
        if (data.size() != end - start) {
            throw EndpointFailure("embeddings response has " + std::to_string(data.size()) + " vectors for " +
                                  std::to_string(end - start) + " inputs");
        }
        std::vector<std::vector<double>> vectors(end - start);
        for (const auto& row : data) {
            const auto idx = row.value("index", std::size_t{0});
            if (idx >= vectors.size()) throw EndpointFailure("embeddings response index out of range");
            vectors[idx] = row.at("embedding").get<std::vector<double>>();
            if (l2_normalize(vectors[idx]) == 0.0) throw EndpointFailure("zero embedding vector");
        }
        if (!result.from_cache && ledger_ != nullptr) {
            Usage usage;
            if (auto it = j.find("usage"); it != j.end() && it->is_object()) {
                usage.prompt_tokens = it->value("prompt_tokens", std::int64_t{0});
            }
            ledger_->add(std::string(to_string(endpoint_.role)), domain, usage,
                         static_cast<std::int64_t>(end - start));
        }
        std::lock_guard lock(mu_);
        for (std::size_t p = start; p < end; ++p) {
            embedding_cache_[hashes[pending[p]]] = std::move(vectors[p - start]);
        }
    }

    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    std::lock_guard lock(mu_);
    for (const auto& h : hashes) out.push_back(embedding_cache_.at(h));
    return out;
}

// ---------------------------------------------------------------------------

namespace {

class MockTransport : public Transport {
public:
    explicit MockTransport(std::shared_ptr<MockLlm> engine) : engine_(std::move(engine)) {}
    HttpReply post(const std::string& path, const std::string& body,
                   const std::vector<std::pair<std::string, std::string>>&) override {
        const auto reply = engine_->handle(path, body);
        return {reply.status, reply.body, {}};
    }

private:
    std::shared_ptr<MockLlm> engine_;
};

}  // namespace

std::shared_ptr<Transport> make_transport(const ModelEndpoint& endpoint, std::chrono::seconds timeout) {
    constexpr std::string_view kMock = "mock://";
    if (endpoint.base_url.rfind(kMock, 0) == 0) {
        const std::string script = endpoint.base_url.substr(kMock.size());
        return std::make_shared<MockTransport>(shared_mock_engine(script));
    }
    return std::make_shared<HttpTransport>(endpoint.base_url, timeout);
}

std::shared_ptr<Transport> make_mock_transport(std::shared_ptr<MockLlm> engine) {
    return std::make_shared<MockTransport>(std::move(engine));
}

}  // namespace simdistill
