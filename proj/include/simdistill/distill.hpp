#pragma once

// Selection of training scenes by epistemic gap, rejection of scenes the
// strong model never gets right, and emission of SFT and preference files.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "simdistill/decision.hpp"
#include "simdistill/io.hpp"
#include "simdistill/scene.hpp"

namespace simdistill {

enum class PairPolicy { Hardest, Easiest };

std::string_view to_string(PairPolicy p);
PairPolicy pair_policy_from_string(std::string_view s);

struct DistillConfig {
    std::vector<std::pair<std::string, std::size_t>> quotas;  // domain -> count, declared order
    PairPolicy pair_policy = PairPolicy::Hardest;
    bool backfill = true;  // skip discarded scenes and take the next-ranked ones
    std::uint64_t seed = 0;

    std::size_t target_total() const;
    void validate() const;
};

struct CandidateScene {
    std::string scene_id;
    std::string domain_id;
    int slot_count = 0;
    double delta_eu = 0.0;
};

// Descending delta_eu, ties by ascending scene_id.
void rank_scenes(std::vector<CandidateScene>& scenes);

// Splits `quota` equally over strata, each capped at its capacity; what a
// capped stratum cannot absorb is spread over the rest. Remainders go to the
// strata with the most capacity (ties: smaller slot count). Raising `quota`
// never lowers any share.
std::map<int, std::size_t> allocate_strata(std::size_t quota, const std::map<int, std::size_t>& capacity);

struct RejectionOutcome {
    bool discarded = true;
    std::vector<std::size_t> accepted;  // indices into the sample list
    std::vector<std::size_t> rejected;
};

// Partitions valid strong-model samples by match; discarded iff none matched.
RejectionOutcome reject_sample(std::span<const DecisionSample> strong);

struct PairChoice {
    std::size_t chosen = 0;
    std::optional<std::size_t> rejected;  // absent: SFT only
};

// Chosen: the accepted sample with the highest confidence. Rejected: the
// rejected sample with the highest (Hardest) or lowest (Easiest)
// confidence. A missing confidence ranks lowest; ties go to the earlier sample.
PairChoice select_pair(std::span<const DecisionSample> strong, const RejectionOutcome& outcome, PairPolicy policy);

struct SelectedScene {
    std::string scene_id;
    std::string domain_id;
    int slot_count = 0;
    double delta_eu = 0.0;
    std::size_t rank = 0;  // position within its stratum ranking
    int chosen_sample = 0;
    std::optional<int> rejected_sample;
    std::optional<double> chosen_confidence;
    std::optional<double> rejected_confidence;
};

struct StratumReport {
    int slot_count = 0;
    std::size_t available = 0;  // ranked candidates
    std::size_t kept = 0;       // candidates surviving rejection
    std::size_t share = 0;
    std::size_t selected = 0;
    std::size_t pairs = 0;
    std::size_t discarded_skipped = 0;  // discarded scenes passed over while filling
};

struct DomainReport {
    std::string domain_id;
    std::size_t quota = 0;
    std::size_t selected = 0;
    std::size_t pairs = 0;
    std::size_t sft_only = 0;
    std::size_t shortfall = 0;
    bool backfilled = false;
    std::vector<StratumReport> strata;
};

struct Selection {
    std::vector<SelectedScene> scenes;  // domain order, then slot count, then rank
    std::vector<DomainReport> domains;
    std::size_t excluded_without_gap = 0;
};

// `strong` maps scene_id to that scene's strong-model samples. Candidates
// from domains without a quota are ignored.
Selection select_training_scenes(std::vector<CandidateScene> candidates,
                                 const std::map<std::string, std::vector<DecisionSample>>& strong,
                                 const DistillConfig& config);

OrderedJson selection_to_json(const Selection& s);
Selection selection_from_json(const Json& j);

struct DatasetFiles {
    std::string sft_jsonl;
    std::string dpo_jsonl;
    std::string manifest_json;
};

// Renders the three output files. Throws ContractViolation if a pair member
// no longer re-parses to the expected match status or a scene is missing.
DatasetFiles render_dataset(const Selection& selection, const std::map<std::string, Scene>& scenes,
                            const std::map<std::string, std::vector<DecisionSample>>& strong,
                            const DistillConfig& config, const std::string& config_hash);

// Atomic writes of sft.jsonl, dpo.jsonl and manifest.json into `dir`.
void write_dataset(const DatasetFiles& files, const std::filesystem::path& dir);

}  // namespace simdistill
