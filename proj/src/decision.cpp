#include "simdistill/decision.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <set>

#include "simdistill/errors.hpp"

namespace simdistill {

std::string_view to_string(ParseFailureReason reason) {
    switch (reason) {
        case ParseFailureReason::MissingBehavior: return "missing_behavior";
        case ParseFailureReason::NoLetter: return "no_letter";
        case ParseFailureReason::OutOfRange: return "out_of_range";
        case ParseFailureReason::ConflictingLetters: return "conflicting_letters";
        case ParseFailureReason::MissingStage: return "missing_stage";
    }
    return "missing_behavior";
}

namespace {

ParseFailureReason reason_from_string(std::string_view s) {
    for (auto r : {ParseFailureReason::MissingBehavior, ParseFailureReason::NoLetter, ParseFailureReason::OutOfRange,
                   ParseFailureReason::ConflictingLetters, ParseFailureReason::MissingStage}) {
        if (to_string(r) == s) return r;
    }
    throw ContractViolation("unknown parse failure reason '" + std::string(s) + "'");
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

enum class Marker { Thought, Stimulus, StimulusFactors, Knowledge, KnowledgeFactors, Evaluation, EvaluationStyle,
                    Behavior };

// Longer names first so "stimulus factors" is not read as "stimulus".
constexpr std::pair<std::string_view, Marker> kMarkers[] = {
    {"stimulus factors", Marker::StimulusFactors},
    {"stimulus", Marker::Stimulus},
    {"knowledge factors", Marker::KnowledgeFactors},
    {"knowledge", Marker::Knowledge},
    {"evaluation style", Marker::EvaluationStyle},
    {"evaluation", Marker::Evaluation},
    {"behavior", Marker::Behavior},
    {"behaviour", Marker::Behavior},
    {"thought", Marker::Thought},
};

// Drops markdown emphasis and list bullets.
std::string clean_line(std::string_view line) {
    std::string s;
    s.reserve(line.size());
    for (char c : line) {
        if (c != '*') s += c;
    }
    std::size_t i = 0;
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '-' || s[i] == '#' || s[i] == '>')) ++i;
    return std::string(trim(std::string_view(s).substr(i)));
}

struct Section {
    Marker marker;
    std::string text;
};

std::optional<std::pair<Marker, std::string>> match_marker(const std::string& line) {
    const std::string low = lower(line);
    for (const auto& [name, marker] : kMarkers) {
        if (low.rfind(name, 0) != 0) continue;
        std::size_t i = name.size();
        while (i < line.size() && line[i] == ' ') ++i;
        if (i < line.size() && line[i] == ':') {
            return std::make_pair(marker, std::string(trim(std::string_view(line).substr(i + 1))));
        }
        if (marker == Marker::Behavior && (i == line.size() || line[i] == '[')) {
            return std::make_pair(marker, std::string(trim(std::string_view(line).substr(i))));
        }
        return std::nullopt;
    }
    return std::nullopt;
}

std::vector<Section> split_sections(std::string_view raw) {
    std::vector<Section> sections;
    std::size_t pos = 0;
    while (pos <= raw.size()) {
        const std::size_t end = std::min(raw.find('\n', pos), raw.size());
        const std::string line = clean_line(raw.substr(pos, end - pos));
        if (auto m = match_marker(line)) {
            sections.push_back({m->first, m->second});
        } else if (!sections.empty() && !line.empty()) {
            auto& text = sections.back().text;
            if (!text.empty()) text += '\n';
            text += line;
        }
        pos = end + 1;
    }
    return sections;
}

bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }

// Letter named in a Behavior section: bracketed forms first, otherwise a
// lone leading letter such as "B" or "B.".
std::variant<char, ParseFailure> behavior_letter(std::string_view text) {
    std::set<char> bracketed;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '[') continue;
        std::size_t j = i + 1;
        while (j < text.size() && text[j] == ' ') ++j;
        if (j >= text.size() || !std::isalpha(static_cast<unsigned char>(text[j]))) continue;
        std::size_t k = j + 1;
        while (k < text.size() && text[k] == ' ') ++k;
        if (k < text.size() && text[k] == ']') {
            bracketed.insert(static_cast<char>(std::toupper(static_cast<unsigned char>(text[j]))));
        }
    }
    if (bracketed.size() > 1) {
        std::string letters(bracketed.begin(), bracketed.end());
        return ParseFailure{ParseFailureReason::ConflictingLetters, "letters " + letters};
    }
    if (bracketed.size() == 1) return *bracketed.begin();

    std::vector<std::string> words;
    std::string word;
    for (char c : trim(text)) {
        if (c == ' ' || c == '\n' || c == '\t') {
            if (!word.empty()) words.push_back(std::move(word));
            word.clear();
        } else {
            word += c;
        }
    }
    if (!word.empty()) words.push_back(std::move(word));
    std::size_t w = 0;
    if (w < words.size() && lower(words[w]) == "option") ++w;
    if (w < words.size()) {
        std::string_view candidate = words[w];
        constexpr std::string_view kStrip = "()[]\"'.,;:!";
        while (!candidate.empty() && kStrip.find(candidate.front()) != std::string_view::npos) candidate.remove_prefix(1);
        while (!candidate.empty() && kStrip.find(candidate.back()) != std::string_view::npos) candidate.remove_suffix(1);
        // A lowercase letter counts only when it stands alone ("behavior: b"),
        // never as the article in "a film".
        const bool alone = w + 1 == words.size();
        const auto lowered = static_cast<unsigned char>(candidate.empty() ? 0 : candidate[0]);
        if (candidate.size() == 1 && (is_upper(candidate[0]) || (alone && std::islower(lowered)))) {
            return static_cast<char>(std::toupper(static_cast<unsigned char>(candidate[0])));
        }
    }
    return ParseFailure{ParseFailureReason::NoLetter, std::string(trim(text).substr(0, 40))};
}

}  // namespace

ParseResult parse_decision(std::string_view raw_text, int slot_count, PromptVariant mode) {
    auto sections = split_sections(raw_text);

    const Section* behavior = nullptr;
    for (const auto& s : sections) {
        if (s.marker == Marker::Behavior) behavior = &s;
    }
    std::string behavior_text;
    if (behavior != nullptr) {
        behavior_text = behavior->text;
    } else {
        // A marker in mid-line, e.g. "... so my Behavior: [B]".
        const std::string low = lower(raw_text);
        const auto at = low.rfind("behavior:");
        if (at != std::string::npos) {
            behavior_text = std::string(trim(raw_text.substr(at + 9)));
        } else if (mode == PromptVariant::Direct) {
            behavior_text = std::string(trim(raw_text));
        } else {
            return ParseFailure{ParseFailureReason::MissingBehavior, {}};
        }
    }

    auto letter = behavior_letter(behavior_text);
    if (auto* f = std::get_if<ParseFailure>(&letter)) return *f;
    const char label = std::get<char>(letter);
    if (label - 'A' > slot_count) {
        return ParseFailure{ParseFailureReason::OutOfRange, std::string("letter ") + label};
    }

    ParsedOutput out;
    out.label = label;
    if (mode == PromptVariant::Direct) return out;

    auto first = [&](Marker m) -> const Section* {
        for (const auto& s : sections) {
            if (s.marker == m) return &s;
        }
        return nullptr;
    };
    DecisionProcess d;
    d.raw_text = std::string(raw_text);
    const auto& norm = FactorNormalizer::builtin();
    for (auto [m, name, target] : {std::tuple{Marker::Stimulus, "stimulus", &d.stimulus_text},
                                   std::tuple{Marker::Knowledge, "knowledge", &d.knowledge_text},
                                   std::tuple{Marker::Evaluation, "evaluation", &d.evaluation_text}}) {
        const Section* s = first(m);
        if (s == nullptr || s->text.empty()) {
            return ParseFailure{ParseFailureReason::MissingStage, name};
        }
        *target = s->text;
    }
    if (const Section* s = first(Marker::StimulusFactors)) {
        d.stimulus_factors = norm.normalize_list(s->text);
    }
    if (const Section* s = first(Marker::KnowledgeFactors)) {
        d.knowledge_factors = norm.normalize_list(s->text);
    }
    if (const Section* s = first(Marker::EvaluationStyle)) {
        d.evaluation_style = norm.normalize_style(s->text);
    }
    d.factors_missing = d.stimulus_factors.empty() || d.knowledge_factors.empty() || d.evaluation_style.empty();
    out.decision = std::move(d);
    return out;
}

// ---------------------------------------------------------------------------
// Factor normalization

namespace {

constexpr std::pair<std::string_view, std::string_view> kFactorSynonyms[] = {
    {"emotion", "emotional state"},
    {"emotions", "emotional state"},
    {"emotional states", "emotional state"},
    {"emotional needs", "emotional state"},
    {"mood", "emotional state"},
    {"current mood", "emotional state"},
    {"fatigue", "fatigue/restlessness"},
    {"restlessness", "fatigue/restlessness"},
    {"curious", "curiosity"},
    {"bored", "boredom"},
    {"achievement", "need for achievement"},
    {"social factor", "social factors"},
    {"social influence", "social factors"},
    {"special occasions", "special occasion"},
    {"rating score distribution", "rating score/distribution"},
    {"rating score", "rating score/distribution"},
    {"rating distribution", "rating score/distribution"},
    {"ratings", "rating score/distribution"},
    {"rating", "rating score/distribution"},
    {"review content sentiment", "review content/sentiment"},
    {"review content", "review content/sentiment"},
    {"review sentiment", "review content/sentiment"},
    {"reviews", "review content/sentiment"},
    {"personal relevance (functional)", "personal relevance"},
    {"personal relevance (thematic)", "personal relevance"},
    {"personal relevance (identity-based)", "personal relevance"},
    {"thematic relevance", "personal relevance"},
    {"prior user experience", "past experience"},
    {"prior experience", "past experience"},
    {"user's prior knowledge", "past experience"},
    {"user preferences", "user preferences/history"},
    {"user history", "user preferences/history"},
    {"preference history", "user preferences/history"},
    {"perceived novelty", "novelty"},
    {"product quality", "quality"},
    {"brand", "brand reputation"},
    {"visual appeal", "visual presentation"},
};

constexpr std::pair<std::string_view, std::string_view> kStyleSynonyms[] = {
    {"logical", "Logical"},     {"rational", "Logical"},    {"analytical", "Logical"},
    {"deliberate", "Logical"},  {"intuitive", "Intuitive"}, {"gut feeling", "Intuitive"},
    {"impulsive", "Impulsive"}, {"habitual", "Habitual"},   {"habit", "Habitual"},
};

}  // namespace

std::string clean_factor(std::string_view text) {
    std::string s;
    bool space = false;
    for (char c : text) {
        if (c == '[' || c == ']' || c == '*' || c == '"') continue;
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            space = true;
            continue;
        }
        if (space && !s.empty() && c != '/' && s.back() != '/') s += ' ';
        space = false;
        s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    while (!s.empty() && (s.back() == '.' || s.back() == ';')) s.pop_back();
    return s;
}

FactorNormalizer::FactorNormalizer() {
    for (const auto& [from, to] : kFactorSynonyms) synonyms_.emplace(from, to);
    for (const auto& [from, to] : kStyleSynonyms) styles_.emplace(from, to);
}

void FactorNormalizer::merge(const Json& synonyms) {
    for (const auto& [from, to] : synonyms.items()) {
        synonyms_[clean_factor(from)] = clean_factor(to.get<std::string>());
    }
}

void FactorNormalizer::merge_file(const std::filesystem::path& path) {
    try {
        merge(Json::parse(read_file(path)));
    } catch (const Json::exception& e) {
        throw ConfigError("synonym table " + path.string() + ": " + e.what());
    }
}

const FactorNormalizer& FactorNormalizer::builtin() {
    static const FactorNormalizer instance;
    return instance;
}

std::string FactorNormalizer::normalize(std::string_view factor) const {
    std::string c = clean_factor(factor);
    auto it = synonyms_.find(c);
    return it != synonyms_.end() ? it->second : c;
}

std::vector<std::string> FactorNormalizer::normalize_list(std::string_view text) const {
    std::vector<std::string> out;
    int depth = 0;
    std::string current;
    auto flush = [&] {
        std::string n = normalize(current);
        if (!n.empty()) out.push_back(std::move(n));
        current.clear();
    };
    for (char c : text) {
        if (c == '(') ++depth;
        if (c == ')' && depth > 0) --depth;
        if ((c == ',' || c == '\n') && depth == 0) {
            flush();
        } else {
            current += c;
        }
    }
    flush();
    return out;
}

std::string FactorNormalizer::normalize_style(std::string_view style) const {
    // Only the first line: models sometimes append a justification.
    const std::string c = clean_factor(style.substr(0, style.find('\n')));
    if (auto it = styles_.find(c); it != styles_.end()) return it->second;
    // "Logical reasoning", "Intuitive, based on..." : the leading word decides.
    const auto word_end = c.find_first_of(" ,;(-");
    if (word_end != std::string::npos) {
        if (auto it = styles_.find(c.substr(0, word_end)); it != styles_.end()) return it->second;
    }
    std::string out = c;
    bool start = true;
    for (char& ch : out) {
        if (start) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        start = ch == ' ';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Distribution extraction

namespace {

std::string strip_token(std::string_view token) {
    std::string s;
    for (char c : token) {
        if (std::string_view(" \t\n\r[]().,:;*\"'").find(c) == std::string_view::npos) s += c;
    }
    return s;
}

bool valid_letter(const std::string& s, int slot_count) {
    return s.size() == 1 && is_upper(s[0]) && s[0] - 'A' <= slot_count;
}

double logsumexp(double a, double b) {
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

ActionDistribution one_hot(std::size_t k, std::size_t index) {
    ActionDistribution d;
    d.probabilities.assign(k, 0.0);
    d.probabilities[index] = 1.0;
    return d;
}

}  // namespace

std::optional<std::size_t> locate_behavior_token(std::span<const TokenRecord> tokens, int slot_count, char expected) {
    std::string text;
    std::vector<std::size_t> starts;
    starts.reserve(tokens.size());
    for (const auto& t : tokens) {
        starts.push_back(text.size());
        text += t.token;
    }
    const std::string low = lower(text);
    auto at = low.rfind("behavior");
    std::size_t marker_len = 8;
    if (const auto alt = low.rfind("behaviour"); alt != std::string::npos && (at == std::string::npos || alt > at)) {
        at = alt;
        marker_len = 9;
    }
    if (at == std::string::npos) return std::nullopt;
    const std::size_t marker_end = at + marker_len;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (starts[i] < marker_end) continue;
        const std::string s = strip_token(tokens[i].token);
        if (!valid_letter(s, slot_count)) continue;
        if (expected == 0 || s[0] == expected) return i;
    }
    return std::nullopt;
}

std::vector<double> floor_softmax(std::span<const std::optional<double>> logprobs, double floor_offset) {
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& lp : logprobs) {
        if (lp) lo = std::min(lo, *lp);
    }
    if (!std::isfinite(lo)) throw ContractViolation("floor_softmax needs at least one observed logprob");
    const double floor = lo - floor_offset;
    std::vector<double> z;
    z.reserve(logprobs.size());
    for (const auto& lp : logprobs) z.push_back(lp ? *lp : floor);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& x : z) {
        x = std::exp(x - m);
        sum += x;
    }
    for (double& x : z) x /= sum;
    return z;
}

ExtractedDistribution extract_action_distribution(const GenerationSample& sample, char parsed_label, int slot_count,
                                                  double floor_offset) {
    const auto k = static_cast<std::size_t>(slot_count + 1);
    ExtractedDistribution out;
    const auto idx = locate_behavior_token(sample.token_records, slot_count, parsed_label);
    if (!idx) {
        out.fallback = true;
        out.dist = one_hot(k, static_cast<std::size_t>(parsed_label - 'A'));
        return out;
    }
    const TokenRecord& rec = sample.token_records[*idx];
    const char sampled = strip_token(rec.token)[0];
    out.token_index = idx;
    out.sampled_logprob = rec.logprob;
    if (rec.top_alternatives.empty()) {
        out.certain = true;
        out.dist = one_hot(k, static_cast<std::size_t>(sampled - 'A'));
        return out;
    }

    // The sampled token usually reappears among the alternatives; each
    // distinct token string counts once.
    std::map<std::string, double> by_token;
    by_token.emplace(rec.token, rec.logprob);
    for (const auto& alt : rec.top_alternatives) by_token.emplace(alt.token, alt.logprob);

    std::vector<std::optional<double>> lps(k);
    for (const auto& [token, lp] : by_token) {
        const std::string s = strip_token(token);
        if (!valid_letter(s, slot_count)) continue;
        auto& slot = lps[static_cast<std::size_t>(s[0] - 'A')];
        slot = slot ? logsumexp(*slot, lp) : lp;
    }
    out.dist.probabilities = floor_softmax(lps, floor_offset);
    return out;
}

// ---------------------------------------------------------------------------
// Samples and scene runs

OrderedJson decision_sample_to_json(const DecisionSample& s) {
    OrderedJson j;
    j["scene_id"] = s.scene_id;
    j["role"] = to_string(s.role);
    j["mode"] = s.mode == PromptVariant::Direct ? "direct" : "decision";
    j["sample_index"] = s.sample_index;
    j["valid"] = s.valid;
    if (s.failure) {
        j["failure"] = {{"reason", to_string(s.failure->reason)}, {"detail", s.failure->detail}};
    } else {
        j["failure"] = nullptr;
    }
    if (s.valid) {
        j["behavior"] = std::string(1, s.behavior.label);
        j["behavior_index"] = s.behavior.index;
        if (s.behavior.confidence_logprob) {
            j["confidence_logprob"] = *s.behavior.confidence_logprob;
        } else {
            j["confidence_logprob"] = nullptr;
        }
        j["action_dist"] = s.action_dist.probabilities;
        j["matched"] = s.matched_ground_truth;
        j["dist_fallback"] = s.dist_fallback;
        j["dist_certain"] = s.dist_certain;
    }
    if (s.decision) {
        const auto& d = *s.decision;
        j["stimulus"] = d.stimulus_text;
        j["stimulus_factors"] = d.stimulus_factors;
        j["knowledge"] = d.knowledge_text;
        j["knowledge_factors"] = d.knowledge_factors;
        j["evaluation"] = d.evaluation_text;
        j["evaluation_style"] = d.evaluation_style;
        j["factors_missing"] = d.factors_missing;
    }
    j["raw_text"] = s.raw_text;
    return j;
}

DecisionSample decision_sample_from_json(const Json& j) {
    DecisionSample s;
    s.scene_id = j.at("scene_id").get<std::string>();
    s.role = role_from_string(j.at("role").get<std::string>());
    s.mode = j.at("mode").get<std::string>() == "direct" ? PromptVariant::Direct : PromptVariant::Decision;
    s.sample_index = j.at("sample_index").get<int>();
    s.valid = j.at("valid").get<bool>();
    if (const auto& f = j.at("failure"); !f.is_null()) {
        s.failure = ParseFailure{reason_from_string(f.at("reason").get<std::string>()),
                                 f.at("detail").get<std::string>()};
    }
    if (s.valid) {
        s.behavior.label = j.at("behavior").get<std::string>().at(0);
        s.behavior.index = j.at("behavior_index").get<std::size_t>();
        if (const auto& c = j.at("confidence_logprob"); !c.is_null()) s.behavior.confidence_logprob = c.get<double>();
        s.action_dist.probabilities = j.at("action_dist").get<std::vector<double>>();
        s.matched_ground_truth = j.at("matched").get<bool>();
        s.dist_fallback = j.at("dist_fallback").get<bool>();
        s.dist_certain = j.at("dist_certain").get<bool>();
    }
    if (j.contains("stimulus")) {
        DecisionProcess d;
        d.stimulus_text = j.at("stimulus").get<std::string>();
        d.stimulus_factors = j.at("stimulus_factors").get<std::vector<std::string>>();
        d.knowledge_text = j.at("knowledge").get<std::string>();
        d.knowledge_factors = j.at("knowledge_factors").get<std::vector<std::string>>();
        d.evaluation_text = j.at("evaluation").get<std::string>();
        d.evaluation_style = j.at("evaluation_style").get<std::string>();
        d.factors_missing = j.at("factors_missing").get<bool>();
        d.raw_text = j.at("raw_text").get<std::string>();
        s.decision = std::move(d);
    }
    s.raw_text = j.at("raw_text").get<std::string>();
    return s;
}

std::size_t SceneRun::valid_count() const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [](const DecisionSample& s) { return s.valid; }));
}

std::vector<ActionDistribution> SceneRun::ensemble() const {
    std::vector<ActionDistribution> out;
    for (const auto& s : samples) {
        if (s.valid) out.push_back(s.action_dist);
    }
    return out;
}

std::string build_decision_prompt(const Scene& scene) {
    return assemble_prompt(PromptVariant::Decision, scene.memory, scene.exposure);
}

std::string build_direct_prompt(const Scene& scene) {
    return assemble_prompt(PromptVariant::Direct, scene.memory, scene.exposure);
}

SceneRun score_samples(const Scene& scene, EndpointRole role, PromptVariant mode,
                       std::span<const GenerationSample> samples, int requested, double floor_offset) {
    const int slot_count = scene.exposure.slot_count;
    SceneRun run;
    run.scene_id = scene.scene_id;
    run.role = role;
    run.requested = requested;
    run.partial = static_cast<int>(samples.size()) < requested;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        DecisionSample ds;
        ds.scene_id = scene.scene_id;
        ds.role = role;
        ds.mode = mode;
        ds.sample_index = static_cast<int>(i);
        ds.raw_text = samples[i].text;
        auto parsed = parse_decision(samples[i].text, slot_count, mode);
        if (auto* f = std::get_if<ParseFailure>(&parsed)) {
            ds.failure = *f;
            ++run.parse_failures;
            run.samples.push_back(std::move(ds));
            continue;
        }
        auto& ok = std::get<ParsedOutput>(parsed);
        ds.valid = true;
        ds.decision = std::move(ok.decision);
        ds.behavior.label = ok.label;
        ds.behavior.index = static_cast<std::size_t>(ok.label - 'A');
        auto extracted = extract_action_distribution(samples[i], ok.label, slot_count, floor_offset);
        ds.action_dist = std::move(extracted.dist);
        ds.dist_fallback = extracted.fallback;
        ds.dist_certain = extracted.certain;
        ds.behavior.confidence_logprob = extracted.sampled_logprob;
        ds.matched_ground_truth = ds.behavior.index == scene.exposure.ground_truth_index;
        run.samples.push_back(std::move(ds));
    }
    return run;
}

SceneRun run_scene(const Scene& scene, Gateway& gateway, EndpointRole role, PromptVariant mode,
                   const GenerationSettings& settings, std::optional<std::int64_t> seed, const std::string& domain) {
    GenerationRequest request;
    request.prompt_text = mode == scene.variant ? scene.prompt_text
                                                : assemble_prompt(mode, scene.memory, scene.exposure);
    request.n_samples = settings.n_decisions;
    request.temperature = settings.temperature;
    request.top_p = settings.top_p;
    request.max_tokens = settings.max_tokens;
    request.logprob_depth = settings.logprob_depth;
    request.seed = seed;
    const Generation g = gateway.complete_n(request, domain);
    return score_samples(scene, role, mode, g.samples, settings.n_decisions, settings.floor_offset);
}

}  // namespace simdistill
