#pragma once

// Behavior-prediction accuracy over evaluation scenes, and the decision
// factor analysis.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "simdistill/decision.hpp"
#include "simdistill/gateway.hpp"
#include "simdistill/io.hpp"
#include "simdistill/scene.hpp"

namespace simdistill {

struct SceneOutcome {
    std::string scene_id;
    std::string domain_id;
    std::vector<std::optional<bool>> outcomes;  // per sample; nullopt = unparseable
    std::size_t valid = 0;
    std::size_t matched = 0;
    std::size_t invalid = 0;
    bool no_valid_samples = false;
};

struct AccuracyRow {
    std::string domain_id;  // "Overall" for the aggregate
    std::size_t scenes = 0;
    std::size_t samples = 0;
    std::size_t valid = 0;
    std::size_t invalid = 0;
    std::size_t matched = 0;
    std::size_t scenes_without_valid = 0;
    double accuracy = 0.0;         // matched / valid
    double strict_accuracy = 0.0;  // matched / (valid + invalid)
};

struct EvalResult {
    PromptVariant mode = PromptVariant::Decision;
    int samples_per_scene = 5;
    std::vector<AccuracyRow> domains;  // declared order
    AccuracyRow overall;
    std::vector<SceneOutcome> scenes;  // input order
};

// Tallies outcomes. `domain_order` fixes row order; domains seen in the
// scenes but absent from it follow in first-seen order.
EvalResult aggregate_accuracy(std::span<const std::string> domain_order, std::span<const SceneOutcome> outcomes,
                              PromptVariant mode, int samples_per_scene);

SceneOutcome outcome_from_run(const Scene& scene, const SceneRun& run);

struct EvalOptions {
    PromptVariant mode = PromptVariant::Decision;
    int samples_per_scene = 5;
    GenerationSettings generation;  // n_decisions is replaced by samples_per_scene
    std::uint64_t seed = 0;
    int threads = 8;
};

struct EvalRun {
    EvalResult result;
    std::vector<DecisionSample> samples;  // scene order, then sample order
};

// Runs every scene against the endpoint, `threads` scenes at a time.
// Results do not depend on scheduling.
EvalRun evaluate_accuracy(std::span<const Scene> scenes, Gateway& gateway, const EvalOptions& options,
                          std::span<const std::string> domain_order = {});

struct FactorCount {
    std::string name;
    std::size_t count = 0;
    std::size_t matched = 0;
    double accuracy = 0.0;
};

struct LengthBucket {
    std::size_t index = 0;
    std::size_t min_length = 0;
    std::size_t max_length = 0;
    std::size_t samples = 0;
    std::size_t matched = 0;
    double accuracy = 0.0;
};

struct FactorStats {
    std::size_t samples = 0;  // valid decision-mode samples considered
    std::size_t samples_with_factors = 0;
    std::size_t stimulus_citations = 0;
    std::size_t knowledge_citations = 0;
    std::vector<FactorCount> stimulus;   // count desc, then name
    std::vector<FactorCount> knowledge;
    std::vector<FactorCount> styles;
    std::vector<LengthBucket> length_buckets;  // quintiles of stimulus + knowledge text length

    bool empty() const { return samples == 0; }
};

FactorStats extract_factors(std::span<const DecisionSample> samples);

OrderedJson eval_to_json(const EvalResult& r);
OrderedJson factors_to_json(const FactorStats& s);

// Plain-text report: accuracy table, then the factor section when present.
std::string render_report(const EvalResult& r, const FactorStats& s);

// Writes eval.json, factors.json and summary.txt into `dir`.
void write_report(const EvalResult& r, const FactorStats& s, const std::filesystem::path& dir);

}  // namespace simdistill
