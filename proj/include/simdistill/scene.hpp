#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "simdistill/ingest.hpp"
#include "simdistill/io.hpp"
#include "simdistill/prompts.hpp"
#include "simdistill/rng.hpp"
#include "simdistill/strategies.hpp"
#include "simdistill/templates.hpp"

namespace simdistill {

inline constexpr std::size_t kMaxOptions = 13;  // labels A..M

enum class Strategy { Random, Collaborative, Content, GroundTruth, Logged };

std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view s);

struct UserMemory {
    std::string profile_text;
    std::string history_text;

    bool operator==(const UserMemory&) const = default;
};

struct ExposureItem {
    std::string item_id;
    char label = 'A';
    std::string rendered_text;
    Strategy source = Strategy::Random;
};

struct ExposureList {
    std::vector<ExposureItem> items;  // size slot_count + 1
    std::size_t ground_truth_index = 0;
    int slot_count = 0;

    std::size_t option_count() const { return items.size(); }
};

struct Scene {
    std::string scene_id;
    std::string domain_id;
    std::string user_id;
    UserMemory memory;
    ExposureList exposure;
    PromptVariant variant = PromptVariant::Decision;
    std::string prompt_text;
    char ground_truth_label = 'A';
};

struct StrategyScores {
    std::vector<std::string> random;
    std::vector<std::string> collaborative;
    std::vector<std::string> content;
};

inline char option_label(std::size_t index) { return static_cast<char>('A' + index); }

// Renders the newest `history_cap` interactions of `history` (sorted
// ascending) oldest first, each tagged with its age relative to
// `reference_time`. A null profile renders an empty profile block.
UserMemory render_memory(const UserProfile* profile, std::span<const InteractionRecord> history,
                         const Catalog& catalog, const DomainTemplate& tmpl, std::int64_t reference_time,
                         std::size_t history_cap);

std::string render_item(const ItemCatalogEntry& item, const DomainTemplate& tmpl);

// Mixes the three candidate lists into N distinct items by repeatedly
// popping the head of a uniformly chosen non-empty list, then inserts the
// ground truth at a uniform position in [0, N]. Exhausted lists leave the
// candidate pool. Throws ScenePoolExhausted when fewer than N distinct
// non-ground-truth candidates exist. Rendered text is left empty.
ExposureList build_exposure_list(const StrategyScores& lists, const std::string& ground_truth, int slot_count,
                                 Rng& rng);

// Uses a logged impression list instead of synthesizing one: the first
// `slot_count` distinct logged items, ground truth inserted uniformly.
ExposureList build_logged_exposure(std::span<const std::string> logged, const std::string& ground_truth,
                                   int slot_count, Rng& rng);

void render_exposure(ExposureList& list, const Catalog& catalog, const DomainTemplate& tmpl);

// Instruction, profile, history and labelled exposures, in that order.
std::string assemble_prompt(PromptVariant variant, const UserMemory& memory, const ExposureList& exposure);

Scene build_scene(std::string scene_id, std::string domain_id, std::string user_id, UserMemory memory,
                  ExposureList exposure, PromptVariant variant);

OrderedJson scene_to_json(const Scene& scene);
Scene scene_from_json(const OrderedJson& j);

struct SceneBuildConfig {
    std::size_t top_k = 32;
    int slot_min = 2;
    int slot_max = 12;
    std::size_t history_cap = 8;
    std::size_t min_history = 1;
    std::size_t scenes_per_domain = 64;
    std::optional<int> fixed_slot_count;  // evaluation scenes use a fixed length
    PromptVariant variant = PromptVariant::Decision;
};

// N for one scene: the fixed evaluation length, or uniform in [slot_min, slot_max].
int draw_slot_count(const SceneBuildConfig& config, Rng& rng);

struct SceneBuildStats {
    std::size_t built = 0;
    std::size_t pool_exhausted = 0;
    std::size_t short_history = 0;
    std::size_t missing_embeddings = 0;
};

struct DomainData {
    const AdapterConfig* adapter = nullptr;  // may be null (no logged exposures)
    const Catalog* catalog = nullptr;
    const std::map<std::string, std::vector<InteractionRecord>>* interactions = nullptr;
    const std::map<std::string, UserProfile>* profiles = nullptr;
    const DomainTemplate* tmpl = nullptr;
    const EmbeddingTable* embeddings = nullptr;  // may be null: content list stays empty
};

// Builds up to `config.scenes_per_domain` scenes for `users`. Each user
// contributes at most one scene whose target is a uniformly chosen
// interaction with at least `min_history` predecessors. The collaborative
// matrix is built from `matrix_users` only. Output is deterministic in
// `seed` and independent of thread scheduling.
std::vector<Scene> build_domain_scenes(const DomainData& data, std::span<const std::string> users,
                                       std::span<const std::string> matrix_users, const SceneBuildConfig& config,
                                       std::uint64_t seed, SceneBuildStats* stats = nullptr);

}  // namespace simdistill
