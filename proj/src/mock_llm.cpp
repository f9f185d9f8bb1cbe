#include "simdistill/mock_llm.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>

#include "simdistill/errors.hpp"
#include "simdistill/rng.hpp"

namespace simdistill {

namespace {

constexpr std::string_view kStimulusTexts[] = {
    "I have some free time and want something that fits my current mood.",
    "I just finished a long day and I am looking for something to unwind with.",
    "Something in the list caught my eye and I want to see what it offers.",
    "I am in the mood to try something a little different from my usual picks.",
};
constexpr std::string_view kStimulusFactors[] = {
    "Curiosity", "Emotional State", "Time of Day", "Boredom", "Need for Achievement", "Inspiration",
    "Availability", "Social Factors",
};
constexpr std::string_view kKnowledgeTexts[] = {
    "Looking through the list, a few options line up with what I usually enjoy.",
    "Several options share themes with items I rated highly before.",
    "One option stands out because it matches the genres in my recent history.",
    "The options vary a lot, but a couple of them feel familiar in a good way.",
};
constexpr std::string_view kKnowledgeFactors[] = {
    "Rating Score/Distribution", "Personal Relevance (Thematic)", "Emotional Appeal", "Review Content/Sentiment",
    "Past Experience", "Quality", "Visual Presentation", "Novelty", "Brand Reputation",
};
constexpr std::string_view kEvaluationTexts[] = {
    "Weighing these against my history, one option feels like the right pick.",
    "I go with my gut on this one.",
    "Comparing the strongest candidates, I settle on the one that fits best.",
};
constexpr std::string_view kStyles[] = {"Logical", "Logical", "Logical", "Intuitive", "Impulsive", "Habitual"};

template <std::size_t N>
std::string_view pick(const std::string_view (&options)[N], Rng& rng) {
    return options[rng.uniform_index(N)];
}

template <std::size_t N>
std::string pick_list(const std::string_view (&options)[N], std::size_t lo, std::size_t hi, Rng& rng) {
    std::vector<std::string_view> pool(std::begin(options), std::end(options));
    rng.shuffle(pool);
    const auto count = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo),
                                                                static_cast<std::int64_t>(hi)));
    std::string out;
    for (std::size_t i = 0; i < count; ++i) {
        if (i > 0) out += ", ";
        out += pool[i];
    }
    return out;
}

std::string render_output(const MockPolicy& policy, char letter, bool invalid, Rng& rng) {
    std::string out;
    if (policy.decision_text) {
        out += "Thought:\n-Stimulus: ";
        out += pick(kStimulusTexts, rng);
        out += "\n-Stimulus Factors: " + pick_list(kStimulusFactors, 1, 3, rng);
        out += "\n-Knowledge: ";
        out += pick(kKnowledgeTexts, rng);
        out += "\n-Knowledge Factors: " + pick_list(kKnowledgeFactors, 2, 4, rng);
        out += "\n-Evaluation: ";
        out += pick(kEvaluationTexts, rng);
        out += "\n-Evaluation Style: ";
        out += pick(kStyles, rng);
        out += "\n";
    }
    if (invalid) {
        out += "I cannot settle on a single option.";
    } else {
        out += "Behavior: [";
        out += letter;
        out += "]";
    }
    return out;
}

std::vector<double> softmax(const std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        sum += p[i];
    }
    for (double& x : p) x /= sum;
    return p;
}

std::size_t sample_index(const std::vector<double>& p, Rng& rng) {
    const double u = rng.uniform01();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return i;
    }
    return p.size() - 1;
}

// Index of the behavior letter token: the first token after the last
// "Behavior" token that is a single letter once spaces and brackets go.
std::optional<std::size_t> behavior_token(const std::vector<std::string>& tokens) {
    std::optional<std::size_t> marker;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        std::string t = tokens[i];
        t.erase(0, t.find_first_not_of(' '));
        std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
        if (t == "behavior") marker = i;
    }
    if (!marker) return std::nullopt;
    for (std::size_t i = *marker + 1; i < tokens.size(); ++i) {
        std::string t;
        for (char c : tokens[i]) {
            if (c != ' ' && c != '[' && c != ']') t += c;
        }
        if (t.size() == 1 && std::isupper(static_cast<unsigned char>(t[0]))) return i;
    }
    return std::nullopt;
}

struct Choice {
    std::string text;
    std::map<char, double> letter_logprobs;
};

OrderedJson render_choice(const Choice& choice, int index, bool with_logprobs, int depth) {
    OrderedJson c;
    c["index"] = index;
    c["message"] = {{"role", "assistant"}, {"content", choice.text}};
    if (with_logprobs) {
        const auto tokens = mock_tokenize(choice.text);
        const auto letter_at = behavior_token(tokens);
        OrderedJson content = OrderedJson::array();
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            OrderedJson t;
            t["token"] = tokens[i];
            if (letter_at && i == *letter_at) {
                const std::string sampled = tokens[i];
                char letter = 0;
                for (char ch : sampled) {
                    if (std::isupper(static_cast<unsigned char>(ch))) letter = ch;
                }
                auto it = choice.letter_logprobs.find(letter);
                t["logprob"] = it != choice.letter_logprobs.end() ? it->second : 0.0;
                std::vector<std::pair<char, double>> alts(choice.letter_logprobs.begin(),
                                                          choice.letter_logprobs.end());
                std::stable_sort(alts.begin(), alts.end(),
                                 [](const auto& a, const auto& b) { return a.second > b.second; });
                if (static_cast<int>(alts.size()) > depth) alts.resize(static_cast<std::size_t>(std::max(depth, 0)));
                const std::string prefix = sampled.substr(0, sampled.find(letter));
                OrderedJson top = OrderedJson::array();
                for (const auto& [l, lp] : alts) top.push_back({{"token", prefix + std::string(1, l)}, {"logprob", lp}});
                t["top_logprobs"] = top;
            } else {
                t["logprob"] = -0.01;
                t["top_logprobs"] = OrderedJson::array({OrderedJson{{"token", tokens[i]}, {"logprob", -0.01}}});
            }
            content.push_back(std::move(t));
        }
        c["logprobs"] = {{"content", content}};
    } else {
        c["logprobs"] = nullptr;
    }
    c["finish_reason"] = "stop";
    return c;
}

MockPolicy policy_from_json(const Json& j) {
    MockPolicy p;
    const std::string kind = j.value("kind", "uniform");
    if (kind == "uniform") {
        p.kind = MockPolicy::Kind::Uniform;
    } else if (kind == "logits") {
        p.kind = MockPolicy::Kind::Logits;
    } else if (kind == "oracle") {
        p.kind = MockPolicy::Kind::Oracle;
    } else {
        throw ConfigError("unknown mock policy kind '" + kind + "'");
    }
    p.temperature = j.value("temperature", 1.0);
    p.spread = j.value("spread", 1.0);
    p.noise = j.value("noise", 0.0);
    p.answer_boost = j.value("answer_boost", 0.0);
    p.decision_text = j.value("format", std::string("decision")) != "direct";
    p.invalid_rate = j.value("invalid_rate", 0.0);
    if (!(p.temperature > 0.0)) throw ConfigError("mock policy temperature must be positive");
    return p;
}

char letter_from_json(const Json& j) {
    const auto s = j.get<std::string>();
    if (s.size() != 1 || s[0] < 'A' || s[0] > 'Z') throw ConfigError("mock answer must be one capital letter");
    return s[0];
}

}  // namespace

MockScript MockScript::from_json(const Json& j) {
    MockScript s;
    if (auto it = j.find("policies"); it != j.end()) {
        for (const auto& [name, pj] : it->items()) {
            if (name == "default") {
                s.default_policy = policy_from_json(pj);
            } else {
                s.model_policies[name] = policy_from_json(pj);
            }
        }
    }
    if (auto it = j.find("responses"); it != j.end()) {
        for (const auto& [fp, list] : it->items()) {
            auto& out = s.responses[fp];
            for (const auto& cj : list) {
                ScriptedCompletion c;
                c.text = cj.at("text").get<std::string>();
                if (auto lp = cj.find("letter_logprobs"); lp != cj.end()) {
                    for (const auto& [l, v] : lp->items()) c.letter_logprobs[letter_from_json(l)] = v.get<double>();
                }
                out.push_back(std::move(c));
            }
        }
    }
    if (auto it = j.find("answers"); it != j.end()) {
        for (const auto& [fp, l] : it->items()) s.answers[fp] = letter_from_json(l);
    }
    if (auto it = j.find("faults"); it != j.end()) {
        for (const auto& fj : *it) {
            s.faults.push_back({fj.value("status", 503), fj.value("count", 1), fj.value("body", std::string())});
        }
    }
    s.unscripted_404 = j.value("unscripted", std::string("policy")) == "404";
    s.max_n = j.value("max_n", 0);
    s.latency_ms = j.value("latency_ms", 0);
    s.embedding_dim = j.value("embedding_dim", 64);
    if (auto it = j.find("embeddings"); it != j.end()) {
        for (const auto& [text, v] : it->items()) s.embeddings[text] = v.get<std::vector<double>>();
    }
    if (s.embedding_dim < 1) throw ConfigError("mock embedding_dim must be positive");
    return s;
}

std::string prompt_fingerprint(std::string_view prompt) { return sha256_hex(prompt); }

int count_prompt_options(std::string_view prompt) {
    int k = 0;
    std::size_t pos = 0;
    while (pos <= prompt.size()) {
        const std::size_t end = std::min(prompt.find('\n', pos), prompt.size());
        const auto line = prompt.substr(pos, end - pos);
        if (line.size() >= 4 && line[0] == '[' && line[2] == ']' && line[3] == ' ' && line[1] >= 'A' &&
            line[1] <= 'Z') {
            k = std::max(k, line[1] - 'A' + 1);
        }
        pos = end + 1;
    }
    return k;
}

std::vector<std::string> mock_tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        const std::size_t start = i;
        while (i < text.size() && text[i] == ' ') ++i;
        if (i < text.size()) {
            if (std::isalnum(static_cast<unsigned char>(text[i]))) {
                while (i < text.size() && std::isalnum(static_cast<unsigned char>(text[i]))) ++i;
            } else {
                ++i;
            }
        }
        tokens.emplace_back(text.substr(start, i - start));
    }
    return tokens;
}

MockLlm::MockLlm(MockScript script) : script_(std::move(script)) {}

const MockPolicy& MockLlm::policy_for(const std::string& model) const {
    auto it = script_.model_policies.find(model);
    return it != script_.model_policies.end() ? it->second : script_.default_policy;
}

MockReply MockLlm::handle(const std::string& path, const std::string& body) {
    ++requests_;
    const auto now = ++in_flight_;
    auto prev = max_in_flight_.load();
    while (now > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
    }
    struct Leave {
        std::atomic<std::int64_t>& n;
        ~Leave() { --n; }
    } leave{in_flight_};

    if (script_.latency_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(script_.latency_ms));

    {
        std::lock_guard lock(mu_);
        while (fault_cursor_ < script_.faults.size() && fault_used_ >= script_.faults[fault_cursor_].count) {
            ++fault_cursor_;
            fault_used_ = 0;
        }
        if (fault_cursor_ < script_.faults.size()) {
            const auto& f = script_.faults[fault_cursor_];
            ++fault_used_;
            return {f.status, f.body.empty() ? R"({"error":{"message":"injected fault"}})" : f.body};
        }
    }

    std::string route = path;
    if (route.rfind("/v1", 0) == 0) route = route.substr(3);
    Json request;
    try {
        request = Json::parse(body);
    } catch (const Json::parse_error&) {
        return {400, R"({"error":{"message":"request body is not JSON"}})"};
    }
    try {
        if (route == "/chat/completions") return chat(request);
        if (route == "/embeddings") return embeddings(request);
    } catch (const Json::exception& e) {
        return {400, OrderedJson{{"error", {{"message", e.what()}}}}.dump()};
    }
    return {404, R"({"error":{"message":"unknown route"}})"};
}

MockReply MockLlm::chat(const Json& request) {
    const std::string model = request.value("model", std::string());
    const auto& messages = request.at("messages");
    if (!messages.is_array() || messages.empty()) return {400, R"({"error":{"message":"no messages"}})"};
    const std::string prompt = messages.back().at("content").get<std::string>();
    int n = request.value("n", 1);
    if (n < 1) return {400, R"({"error":{"message":"n must be >= 1"}})"};
    if (script_.max_n > 0) n = std::min(n, script_.max_n);
    const bool with_logprobs = request.value("logprobs", false);
    const int depth = request.value("top_logprobs", 0);
    const std::string fp = prompt_fingerprint(prompt);

    std::vector<Choice> choices;
    if (auto it = script_.responses.find(fp); it != script_.responses.end() && !it->second.empty()) {
        // Seeded requests rotate through the script by seed, so sample j of a
        // chunked request lands on the same completion as unchunked; unseeded
        // requests advance a per-(model, prompt) cursor.
        const auto& list = it->second;
        if (auto s = request.find("seed"); s != request.end() && s->is_number_integer()) {
            const auto base = static_cast<std::uint64_t>(s->get<std::int64_t>());
            for (int i = 0; i < n; ++i) {
                const auto& sc = list[(base + static_cast<std::uint64_t>(i)) % list.size()];
                choices.push_back({sc.text, sc.letter_logprobs});
            }
        } else {
            std::lock_guard lock(mu_);
            auto& cursor = scripted_cursor_[model + "|" + fp];
            for (int i = 0; i < n; ++i) {
                const auto& sc = list[cursor % list.size()];
                ++cursor;
                choices.push_back({sc.text, sc.letter_logprobs});
            }
        }
    } else if (!script_.responses.empty() && script_.unscripted_404) {
        return {404, R"({"error":{"message":"unscripted prompt"}})"};
    } else {
        const MockPolicy& policy = policy_for(model);
        const int k = std::max(count_prompt_options(prompt), 1);
        std::uint64_t seed;
        if (auto s = request.find("seed"); s != request.end() && s->is_number_integer()) {
            seed = static_cast<std::uint64_t>(s->get<std::int64_t>());
        } else {
            seed = splitmix64(0x5eed ^ unseeded_counter_.fetch_add(1));
        }
        const auto answer_it = script_.answers.find(fp);
        std::vector<double> base(static_cast<std::size_t>(k), 0.0);
        if (policy.kind == MockPolicy::Kind::Logits) {
            Rng base_rng(derive_seed(0, "base|" + fp));
            for (double& z : base) z = policy.spread * base_rng.normal();
            if (answer_it != script_.answers.end() && answer_it->second - 'A' < k) {
                base[static_cast<std::size_t>(answer_it->second - 'A')] += policy.answer_boost;
            }
        }
        for (int i = 0; i < n; ++i) {
            Rng rng(derive_seed(seed, fp + "|" + model + "|" + std::to_string(i)));
            std::vector<double> p;
            switch (policy.kind) {
                case MockPolicy::Kind::Uniform:
                    p.assign(static_cast<std::size_t>(k), 1.0 / k);
                    break;
                case MockPolicy::Kind::Logits: {
                    std::vector<double> z = base;
                    for (double& x : z) x = (x + policy.noise * rng.normal()) / policy.temperature;
                    p = softmax(z);
                    break;
                }
                case MockPolicy::Kind::Oracle:
                    if (answer_it != script_.answers.end() && answer_it->second - 'A' < k) {
                        p.assign(static_cast<std::size_t>(k), k > 1 ? 0.04 / (k - 1) : 0.0);
                        p[static_cast<std::size_t>(answer_it->second - 'A')] = k > 1 ? 0.96 : 1.0;
                    } else {
                        p.assign(static_cast<std::size_t>(k), 1.0 / k);
                    }
                    break;
            }
            std::size_t chosen;
            if (policy.kind == MockPolicy::Kind::Oracle && answer_it != script_.answers.end() &&
                answer_it->second - 'A' < k) {
                chosen = static_cast<std::size_t>(answer_it->second - 'A');
            } else {
                chosen = sample_index(p, rng);
            }
            const bool invalid = policy.invalid_rate > 0.0 && rng.uniform01() < policy.invalid_rate;
            Choice c;
            c.text = render_output(policy, static_cast<char>('A' + chosen), invalid, rng);
            for (std::size_t j = 0; j < p.size(); ++j) {
                c.letter_logprobs[static_cast<char>('A' + j)] = p[j] > 0.0 ? std::log(p[j]) : -1e4;
            }
            choices.push_back(std::move(c));
        }
    }

    OrderedJson out;
    out["id"] = "mock-" + fp.substr(0, 16);
    out["object"] = "chat.completion";
    out["model"] = model;
    OrderedJson rendered = OrderedJson::array();
    std::int64_t completion_tokens = 0;
    for (std::size_t i = 0; i < choices.size(); ++i) {
        completion_tokens += static_cast<std::int64_t>(mock_tokenize(choices[i].text).size());
        rendered.push_back(render_choice(choices[i], static_cast<int>(i), with_logprobs, depth));
    }
    out["choices"] = rendered;
    const auto prompt_tokens = static_cast<std::int64_t>(mock_tokenize(prompt).size());
    out["usage"] = {{"prompt_tokens", prompt_tokens},
                    {"completion_tokens", completion_tokens},
                    {"total_tokens", prompt_tokens + completion_tokens}};
    return {200, out.dump()};
}

MockReply MockLlm::embeddings(const Json& request) {
    const auto& input = request.at("input");
    std::vector<std::string> texts;
    if (input.is_string()) {
        texts.push_back(input.get<std::string>());
    } else {
        texts = input.get<std::vector<std::string>>();
    }
    OrderedJson data = OrderedJson::array();
    std::int64_t tokens = 0;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        std::vector<double> v;
        if (auto it = script_.embeddings.find(texts[i]); it != script_.embeddings.end()) {
            v = it->second;
        } else {
            // Hashed bag of lowercase words, deliberately unnormalised.
            v.assign(static_cast<std::size_t>(script_.embedding_dim), 0.0);
            std::string word;
            auto flush = [&] {
                if (word.empty()) return;
                const auto h = fnv1a64(word);
                v[h % v.size()] += (h >> 63) != 0 ? -3.0 : 3.0;
                word.clear();
            };
            for (char ch : texts[i]) {
                if (std::isalnum(static_cast<unsigned char>(ch))) {
                    word += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
                } else {
                    flush();
                }
            }
            flush();
            if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) v[0] = 1.0;
        }
        tokens += static_cast<std::int64_t>(mock_tokenize(texts[i]).size());
        data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", v}});
    }
    OrderedJson out;
    out["object"] = "list";
    out["data"] = data;
    out["model"] = request.value("model", std::string());
    out["usage"] = {{"prompt_tokens", tokens}, {"total_tokens", tokens}};
    return {200, out.dump()};
}

std::shared_ptr<MockLlm> shared_mock_engine(const std::string& script_path) {
    static std::mutex mu;
    static std::map<std::string, std::shared_ptr<MockLlm>> engines;
    std::lock_guard lock(mu);
    auto& slot = engines[script_path];
    if (!slot) {
        MockScript script;
        if (!script_path.empty()) {
            try {
                script = MockScript::from_json(Json::parse(read_file(script_path)));
            } catch (const Json::exception& e) {
                throw ConfigError("mock script " + script_path + ": " + e.what());
            }
        }
        slot = std::make_shared<MockLlm>(std::move(script));
    }
    return slot;
}

struct MockServer::Impl {
    std::shared_ptr<MockLlm> engine;
    httplib::Server server;
    std::thread thread;
};

MockServer::MockServer(std::shared_ptr<MockLlm> engine, const std::string& host, int port)
    : impl_(std::make_unique<Impl>()) {
    impl_->engine = std::move(engine);
    auto handler = [engine = impl_->engine](const httplib::Request& req, httplib::Response& res) {
        const auto reply = engine->handle(req.path, req.body);
        res.status = reply.status;
        res.set_content(reply.body, "application/json");
    };
    for (const char* route : {"/v1/chat/completions", "/chat/completions", "/v1/embeddings", "/embeddings"}) {
        impl_->server.Post(route, handler);
    }
    if (port == 0) {
        port_ = impl_->server.bind_to_any_port(host);
    } else {
        port_ = impl_->server.bind_to_port(host, port) ? port : -1;
    }
    if (port_ <= 0) throw IoError("mock server could not bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
}

MockServer::~MockServer() {
    stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

void MockServer::stop() { impl_->server.stop(); }

void MockServer::wait() {
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace simdistill
