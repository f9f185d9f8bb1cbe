#pragma once

// Parsing of simulator outputs into decision stages and a predicted option,
// and extraction of the option distribution from token logprobs.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "simdistill/gateway.hpp"
#include "simdistill/io.hpp"
#include "simdistill/prompts.hpp"
#include "simdistill/scene.hpp"
#include "simdistill/uncertainty.hpp"

namespace simdistill {

struct DecisionProcess {
    std::string stimulus_text;
    std::vector<std::string> stimulus_factors;
    std::string knowledge_text;
    std::vector<std::string> knowledge_factors;
    std::string evaluation_text;
    std::string evaluation_style;
    std::string raw_text;
    bool factors_missing = false;  // a factor line or the style line was absent
};

enum class ParseFailureReason { MissingBehavior, NoLetter, OutOfRange, ConflictingLetters, MissingStage };

std::string_view to_string(ParseFailureReason reason);

struct ParseFailure {
    ParseFailureReason reason = ParseFailureReason::MissingBehavior;
    std::string detail;
};

struct ParsedOutput {
    std::optional<DecisionProcess> decision;  // absent in direct mode
    char label = 'A';
};

using ParseResult = std::variant<ParsedOutput, ParseFailure>;

// Valid labels are A..(A + slot_count). Section labels match
// case-insensitively; the last Behavior section wins.
ParseResult parse_decision(std::string_view raw_text, int slot_count,
                           PromptVariant mode = PromptVariant::Decision);

// Canonical factor names: lowercase, brackets stripped, whitespace collapsed,
// then merged through a synonym table.
class FactorNormalizer {
public:
    FactorNormalizer();  // built-in synonym table

    // Adds or overrides entries from a JSON object {variant: canonical}.
    void merge(const Json& synonyms);
    void merge_file(const std::filesystem::path& path);

    std::string normalize(std::string_view factor) const;
    // Splits on commas outside parentheses and normalizes each entry.
    std::vector<std::string> normalize_list(std::string_view text) const;
    // Title-cased style name, e.g. "Logical".
    std::string normalize_style(std::string_view style) const;

    static const FactorNormalizer& builtin();

private:
    std::map<std::string, std::string> synonyms_;
    std::map<std::string, std::string> styles_;
};

// Basic cleanup shared by factor and style normalization.
std::string clean_factor(std::string_view text);

struct PredictedBehavior {
    char label = 'A';
    std::size_t index = 0;
    std::optional<double> confidence_logprob;  // logprob of the chosen letter token
};

inline const double kDefaultFloorOffset = std::log(10.0);

struct ExtractedDistribution {
    ActionDistribution dist;
    bool fallback = false;  // letter token not found: one-hot on the parsed letter
    bool certain = false;   // letter token had no alternatives: one-hot on the sampled letter
    std::optional<std::size_t> token_index;
    std::optional<double> sampled_logprob;
};

// Index of the first token after the final "Behavior" marker whose text,
// stripped of spaces, brackets and punctuation, is `expected` (or any valid
// letter when `expected` is 0).
std::optional<std::size_t> locate_behavior_token(std::span<const TokenRecord> tokens, int slot_count,
                                                 char expected = 0);

// Letters among the token's alternatives (and the sampled token) keep their
// logprobs, duplicates combined by log-sum-exp; absent letters get
// min(observed) - floor_offset; the result is softmax-normalised.
ExtractedDistribution extract_action_distribution(const GenerationSample& sample, char parsed_label, int slot_count,
                                                  double floor_offset = kDefaultFloorOffset);

// Softmax over `logprobs` with unobserved entries (nullopt) set to the floor.
std::vector<double> floor_softmax(std::span<const std::optional<double>> logprobs, double floor_offset);

struct DecisionSample {
    std::string scene_id;
    EndpointRole role = EndpointRole::Strong;
    PromptVariant mode = PromptVariant::Decision;
    int sample_index = 0;
    std::string raw_text;
    bool valid = false;
    std::optional<ParseFailure> failure;
    std::optional<DecisionProcess> decision;
    PredictedBehavior behavior;
    ActionDistribution action_dist;
    bool matched_ground_truth = false;
    bool dist_fallback = false;
    bool dist_certain = false;
};

OrderedJson decision_sample_to_json(const DecisionSample& s);
DecisionSample decision_sample_from_json(const Json& j);

struct SceneRun {
    std::string scene_id;
    EndpointRole role = EndpointRole::Strong;
    std::vector<DecisionSample> samples;  // valid and failed, in sample order
    int requested = 0;
    int parse_failures = 0;
    bool partial = false;

    std::size_t valid_count() const;
    bool unusable() const { return valid_count() == 0; }
    std::vector<ActionDistribution> ensemble() const;
};

struct GenerationSettings {
    int n_decisions = 10;
    double temperature = 1.0;
    double top_p = 0.9;
    int max_tokens = 1024;
    int logprob_depth = 20;
    double floor_offset = kDefaultFloorOffset;
};

std::string build_decision_prompt(const Scene& scene);
std::string build_direct_prompt(const Scene& scene);

// Parses generated samples against a scene.
SceneRun score_samples(const Scene& scene, EndpointRole role, PromptVariant mode,
                       std::span<const GenerationSample> samples, int requested, double floor_offset);

// Generates `settings.n_decisions` outputs for the scene and scores them.
// PartialGeneration propagates to the caller.
SceneRun run_scene(const Scene& scene, Gateway& gateway, EndpointRole role, PromptVariant mode,
                   const GenerationSettings& settings, std::optional<std::int64_t> seed = std::nullopt,
                   const std::string& domain = {});

}  // namespace simdistill
