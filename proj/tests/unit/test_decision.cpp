#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "simdistill/decision.hpp"
#include "simdistill/mock_llm.hpp"

using namespace simdistill;

namespace {

ParsedOutput ok(const ParseResult& r) {
    REQUIRE(std::holds_alternative<ParsedOutput>(r));
    return std::get<ParsedOutput>(r);
}

ParseFailureReason failed(const ParseResult& r) {
    REQUIRE(std::holds_alternative<ParseFailure>(r));
    return std::get<ParseFailure>(r).reason;
}

// Tokens for "...Behavior: [<letter>]" with the given alternatives at the letter.
GenerationSample letter_sample(const std::string& prefix, const std::string& letter_token, double logprob,
                               std::vector<TokenAlternative> alternatives) {
    GenerationSample s;
    s.text = prefix + letter_token + "]";
    for (const auto& t : mock_tokenize(prefix)) s.token_records.push_back({t, -0.01, {}});
    s.token_records.push_back({letter_token, logprob, std::move(alternatives)});
    s.token_records.push_back({"]", -0.01, {}});
    return s;
}

}  // namespace

TEST_CASE("golden case-study output") {
    const std::string raw = read_file(testing::fixture("parser_golden.txt"));
    const auto out = ok(parse_decision(raw, 4));
    CHECK(out.label == 'B');
    REQUIRE(out.decision.has_value());
    CHECK(out.decision->evaluation_style == "Logical");
    CHECK(out.decision->stimulus_factors == std::vector<std::string>{"emotional state", "time of day"});
    CHECK(out.decision->knowledge_factors.size() == 2);
    CHECK_FALSE(out.decision->stimulus_text.empty());
    CHECK_FALSE(out.decision->knowledge_text.empty());
    CHECK_FALSE(out.decision->evaluation_text.empty());
    CHECK_FALSE(out.decision->factors_missing);
}

TEST_CASE("tolerant behavior forms parse identically") {
    for (std::string line : {"Behavior: B", "Behavior: [B]", "Behavior: B.", "**Behavior:** [B]", "behaviour: b",
                             "Behavior: Option B", "- Behavior: [B] because it fits"}) {
        CAPTURE(line);
        const auto out = ok(parse_decision(testing::decision_text(line), 4));
        CHECK(out.label == 'B');
        CHECK(out.decision->evaluation_style == "Logical");
    }
}

TEST_CASE("failure reasons") {
    CHECK(failed(parse_decision(testing::decision_text("Behavior: [F]"), 4)) == ParseFailureReason::OutOfRange);
    CHECK(to_string(ParseFailureReason::OutOfRange) == "out_of_range");
    CHECK(failed(parse_decision(testing::decision_text("Behavior: [A] or [C]"), 4)) ==
          ParseFailureReason::ConflictingLetters);
    CHECK(failed(parse_decision(testing::decision_text("Behavior: a film like the others"), 4)) ==
          ParseFailureReason::NoLetter);
    CHECK(failed(parse_decision(testing::decision_text("Behavior: none of these"), 4)) ==
          ParseFailureReason::NoLetter);
    CHECK(failed(parse_decision("Stimulus: x\nKnowledge: y\nEvaluation: z\n", 4)) ==
          ParseFailureReason::MissingBehavior);
    CHECK(failed(parse_decision("Stimulus: x\nEvaluation: z\nBehavior: [A]\n", 4)) ==
          ParseFailureReason::MissingStage);
}

TEST_CASE("range is A through A + slot_count") {
    CHECK(ok(parse_decision(testing::decision_text("Behavior: [E]"), 4)).label == 'E');
    CHECK(ok(parse_decision(testing::decision_text("Behavior: [M]"), 12)).label == 'M');
    CHECK(failed(parse_decision(testing::decision_text("Behavior: [D]"), 2)) == ParseFailureReason::OutOfRange);
}

TEST_CASE("the last behavior section wins") {
    const std::string raw = "Stimulus: a\nKnowledge: b\nEvaluation: c\nBehavior: [A]\nOn reflection:\nBehavior: [C]\n";
    CHECK(ok(parse_decision(raw, 4)).label == 'C');
}

TEST_CASE("direct mode needs only a letter") {
    CHECK(ok(parse_decision("Behavior: [D]", 4, PromptVariant::Direct)).label == 'D');
    CHECK(ok(parse_decision("[C]", 4, PromptVariant::Direct)).label == 'C');
    CHECK_FALSE(ok(parse_decision("Behavior: [D]", 4, PromptVariant::Direct)).decision.has_value());
}

TEST_CASE("factor normalization") {
    const auto& n = FactorNormalizer::builtin();
    CHECK(n.normalize("  [Emotional   State] ") == "emotional state");
    CHECK(n.normalize("Rating Score / Distribution.") == "rating score/distribution");
    CHECK(n.normalize_list("Price, Personal Relevance (Functional, Thematic), Novelty") ==
          std::vector<std::string>{"price", "personal relevance (functional, thematic)", "novelty"});
    CHECK(n.normalize_style("logical reasoning\nmore text") == "Logical");
    CHECK(n.normalize_style("IMPULSIVE") == "Impulsive");
    FactorNormalizer custom;
    custom.merge(Json{{"mood", "emotional state"}});
    CHECK(custom.normalize("Mood") == "emotional state");
}

TEST_CASE("floor softmax matches the reference") {
    const Json small = testing::load_fixture("uncertainty_small.json");
    const std::vector<std::optional<double>> lp = {-0.1, -2.4, std::nullopt};
    const auto p = floor_softmax(lp, kDefaultFloorOffset);
    const auto want = small["floor_softmax_k3"].get<std::vector<double>>();
    REQUIRE(p.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(p[i] - want[i]) < 1e-12);
}

TEST_CASE("action distribution from letter logprobs") {
    const std::string prefix = "Evaluation Style: Logical\nBehavior: [";
    SUBCASE("alternatives give the distribution, missing letters get the floor") {
        const auto s = letter_sample(prefix, "B", std::log(0.6), {{"B", std::log(0.6)}, {"A", std::log(0.3)},
                                                                   {"the", std::log(0.05)}});
        const auto d = extract_action_distribution(s, 'B', 2);
        CHECK_FALSE(d.fallback);
        CHECK_FALSE(d.certain);
        REQUIRE(d.dist.size() == 3);
        CHECK(d.dist.probabilities[1] > d.dist.probabilities[0]);
        CHECK(d.dist.probabilities[2] < d.dist.probabilities[0]);
        CHECK(d.sampled_logprob.value() == doctest::Approx(std::log(0.6)));
        double sum = 0.0;
        for (double x : d.dist.probabilities) sum += x;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("variants of one letter are merged") {
        const auto s = letter_sample(prefix, "A", std::log(0.4), {{"A", std::log(0.4)}, {" A", std::log(0.4)},
                                                                  {"B", std::log(0.2)}});
        const auto d = extract_action_distribution(s, 'A', 1);
        CHECK(d.dist.probabilities[0] == doctest::Approx(0.8).epsilon(1e-9));
    }
    SUBCASE("no alternatives: one-hot and flagged certain") {
        const auto s = letter_sample(prefix, "C", 0.0, {});
        const auto d = extract_action_distribution(s, 'C', 3);
        CHECK(d.certain);
        CHECK(d.dist.probabilities == std::vector<double>{0.0, 0.0, 1.0, 0.0});
    }
    SUBCASE("letter token not found: one-hot fallback") {
        GenerationSample s;
        s.text = "Behavior: [B]";
        const auto d = extract_action_distribution(s, 'B', 2);
        CHECK(d.fallback);
        CHECK(d.dist.probabilities == std::vector<double>{0.0, 1.0, 0.0});
    }
}

TEST_CASE("letter token locator looks after the final marker") {
    GenerationSample s;
    for (const auto& t : mock_tokenize("I liked A. Behavior: [C] so C")) s.token_records.push_back({t, -0.1, {}});
    const auto idx = locate_behavior_token(s.token_records, 4, 'C');
    REQUIRE(idx.has_value());
    CHECK(s.token_records[*idx].token == "C");
    CHECK_FALSE(locate_behavior_token(s.token_records, 4, 'A').has_value());
}

TEST_CASE("decision samples round-trip through JSON") {
    const auto scene = testing::toy_scene("s1", "movies", 4, 'B');
    std::string prefix = testing::decision_text("Behavior: [");
    prefix.pop_back();
    GenerationSample g = letter_sample(prefix, "B", -0.2, {{"B", -0.2}, {"A", -1.9}});
    const auto run = score_samples(scene, EndpointRole::Strong, PromptVariant::Decision, std::vector{g}, 1,
                                   kDefaultFloorOffset);
    REQUIRE(run.samples.size() == 1);
    const auto& s = run.samples[0];
    CHECK(s.valid);
    CHECK(s.matched_ground_truth);
    const auto back = decision_sample_from_json(Json::parse(decision_sample_to_json(s).dump()));
    CHECK(decision_sample_to_json(back).dump() == decision_sample_to_json(s).dump());
    CHECK(back.action_dist.probabilities == s.action_dist.probabilities);
    CHECK(back.behavior.confidence_logprob == s.behavior.confidence_logprob);
}
