#include <doctest.h>

#include "helpers.hpp"
#include "simdistill/evaluate.hpp"
#include "simdistill/mock_llm.hpp"

using namespace simdistill;

namespace {

ModelEndpoint eval_endpoint() {
    ModelEndpoint e;
    e.base_url = "mock://";
    e.model_name = "sim";
    e.role = EndpointRole::Eval;
    return e;
}

GatewayOptions quick() {
    GatewayOptions o;
    o.retry.base_delay = std::chrono::milliseconds(1);
    return o;
}

SceneOutcome outcome(const std::string& domain, std::vector<std::optional<bool>> o) {
    SceneOutcome s;
    s.scene_id = domain + std::to_string(o.size());
    s.domain_id = domain;
    for (const auto& x : o) {
        if (!x) {
            ++s.invalid;
        } else {
            ++s.valid;
            s.matched += *x;
        }
    }
    s.no_valid_samples = s.valid == 0;
    s.outcomes = std::move(o);
    return s;
}

}  // namespace

TEST_CASE("accuracy counts valid samples; strict accuracy counts all") {
    const std::vector<SceneOutcome> o = {outcome("a", {true, false, std::nullopt}),
                                         outcome("a", {std::nullopt, std::nullopt}),
                                         outcome("b", {true, true, true, false})};
    const std::vector<std::string> order = {"b", "a"};
    const auto r = aggregate_accuracy(order, o, PromptVariant::Decision, 5);
    REQUIRE(r.domains.size() == 2);
    CHECK(r.domains[0].domain_id == "b");
    CHECK(r.domains[0].accuracy == doctest::Approx(0.75));
    const auto& a = r.domains[1];
    CHECK(a.valid == 2);
    CHECK(a.invalid == 3);
    CHECK(a.accuracy == doctest::Approx(0.5));
    CHECK(a.strict_accuracy == doctest::Approx(0.2));
    CHECK(a.scenes_without_valid == 1);
    CHECK(r.overall.domain_id == "Overall");
    CHECK(r.overall.accuracy == doctest::Approx(4.0 / 6.0));
    CHECK(r.overall.samples == 9);
}

TEST_CASE("an oracle endpoint scores perfectly, a uniform one near chance") {
    std::vector<Scene> scenes;
    MockScript script;
    script.default_policy.kind = MockPolicy::Kind::Oracle;
    for (int i = 0; i < 40; ++i) {
        scenes.push_back(testing::toy_scene("e" + std::to_string(i), i % 2 ? "news" : "movies", 4,
                                            static_cast<char>('A' + i % 5)));
        script.answers[prompt_fingerprint(scenes.back().prompt_text)] = scenes.back().ground_truth_label;
    }
    EvalOptions opts;
    opts.seed = 3;
    {
        Gateway gw(eval_endpoint(), make_mock_transport(std::make_shared<MockLlm>(script)), quick());
        const auto run = evaluate_accuracy(scenes, gw, opts);
        CHECK(run.result.overall.accuracy == 1.0);
        CHECK(run.result.overall.valid == 200);
        CHECK(run.samples.size() == 200);
    }
    {
        Gateway gw(eval_endpoint(), make_mock_transport(std::make_shared<MockLlm>()), quick());
        const auto run = evaluate_accuracy(scenes, gw, opts);
        CHECK(run.result.overall.accuracy > 0.05);
        CHECK(run.result.overall.accuracy < 0.4);
    }
}

TEST_CASE("evaluation does not depend on thread count") {
    std::vector<Scene> scenes;
    for (int i = 0; i < 12; ++i) scenes.push_back(testing::toy_scene("t" + std::to_string(i), "movies", 4, 'C'));
    auto engine = std::make_shared<MockLlm>();
    EvalOptions one;
    one.threads = 1;
    EvalOptions many;
    many.threads = 6;
    Gateway a(eval_endpoint(), make_mock_transport(engine), quick());
    Gateway b(eval_endpoint(), make_mock_transport(engine), quick());
    const auto ra = evaluate_accuracy(scenes, a, one);
    const auto rb = evaluate_accuracy(scenes, b, many);
    CHECK(eval_to_json(ra.result).dump() == eval_to_json(rb.result).dump());
}

TEST_CASE("factor statistics") {
    const auto scene = testing::toy_scene("f", "movies", 4, 'B');
    std::vector<GenerationSample> gen(4);
    gen[0].text = testing::decision_text("Behavior: [B]", "Logical");
    gen[1].text = testing::decision_text("Behavior: [A]", "Intuitive");
    gen[2].text = testing::decision_text("Behavior: [B]", "logical thinking");
    gen[3].text = "no decision here";
    const auto run = score_samples(scene, EndpointRole::Eval, PromptVariant::Decision, gen, 4, kDefaultFloorOffset);
    const auto stats = extract_factors(run.samples);
    CHECK(stats.samples == 3);
    CHECK(stats.samples_with_factors == 3);
    CHECK(stats.stimulus_citations == 6);
    REQUIRE_FALSE(stats.styles.empty());
    CHECK(stats.styles[0].name == "Logical");
    CHECK(stats.styles[0].count == 2);
    CHECK(stats.styles[0].accuracy == 1.0);
    CHECK(stats.stimulus[0].count == 3);
    CHECK(stats.length_buckets.size() <= 5);

    const auto result = aggregate_accuracy({}, std::vector{outcome_from_run(scene, run)}, PromptVariant::Decision, 4);
    const auto report = render_report(result, stats);
    CHECK(report.find("Overall") != std::string::npos);
    CHECK(report.find("Logical") != std::string::npos);
    const auto direct = render_report(result, FactorStats{});
    CHECK(direct.find("Stimulus factors") == std::string::npos);
}
