#pragma once

// Resumable, stage-by-stage orchestration over a run directory.
//
// Layout of a run directory:
//   run.json, run.lock, usage.json, responses/
//   <domain>/catalog.jsonl, interactions.jsonl, profiles.jsonl, split.json
//   scenes.jsonl, eval_scenes.jsonl, decisions.jsonl, uncertainty.jsonl,
//   selection.json, dataset/{sft,dpo}.jsonl, dataset/manifest.json,
//   eval/{eval.json,factors.json,summary.txt,decisions.jsonl}

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "simdistill/decision.hpp"
#include "simdistill/distill.hpp"
#include "simdistill/gateway.hpp"
#include "simdistill/io.hpp"
#include "simdistill/scene.hpp"

namespace simdistill {

struct EndpointConfig {
    std::string base_url;
    std::string model;
    std::string api_key_env;
    int max_n_per_call = 0;
};

struct DomainEntry {
    std::string name;
    std::filesystem::path adapter;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::map<std::string, EndpointConfig> endpoints;  // strong, weak, eval, embeddings
    std::vector<DomainEntry> domains;

    std::size_t top_k = 32;
    int slot_min = 2;
    int slot_max = 12;
    std::size_t history_cap = 8;
    std::size_t min_history = 1;
    std::size_t scenes_per_domain = 64;
    int eval_slot_count = 4;
    std::size_t eval_scenes_per_domain = 32;

    double eval_fraction = 0.2;

    GenerationSettings generation;

    std::vector<std::pair<std::string, std::size_t>> quotas;  // declared domain order
    PairPolicy pair_policy = PairPolicy::Hardest;
    bool backfill = true;

    int eval_samples_per_scene = 5;
    PromptVariant eval_mode = PromptVariant::Decision;

    GatewayOptions gateway;

    OrderedJson source;  // the validated input, used for hashing

    // Unknown keys anywhere are rejected with ConfigError. Relative paths
    // (adapters, mock scripts) resolve against `base_dir`.
    static PipelineConfig from_json(const OrderedJson& j, const std::filesystem::path& base_dir);
    static PipelineConfig load(const std::filesystem::path& path);

    std::string hash() const;
    ModelEndpoint endpoint(EndpointRole role) const;
    bool has_endpoint(EndpointRole role) const;
    DistillConfig distill_config() const;
    SceneBuildConfig scene_config(bool evaluation) const;
};

enum class Stage { Ingest, Scenes, Generate, Score, Distill, Emit, Eval };

inline constexpr Stage kAllStages[] = {Stage::Ingest,  Stage::Scenes, Stage::Generate, Stage::Score,
                                       Stage::Distill, Stage::Emit,   Stage::Eval};

std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);

// Exclusive ownership of a run directory through `run.lock`. A lock left by
// a process that no longer exists is taken over.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& run_dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

struct StageResult {
    Stage stage;
    bool skipped = false;
    OrderedJson stats;
};

struct EvalOverrides {
    std::optional<EndpointRole> role;           // default: eval
    std::optional<PromptVariant> mode;          // default: config
    std::optional<std::filesystem::path> scenes;  // default: eval_scenes.jsonl
};

class Pipeline {
public:
    Pipeline(PipelineConfig config, std::filesystem::path run_dir, std::ostream* log = nullptr);

    // Runs one stage unless its recorded input digest and outputs are
    // unchanged. Throws MissingArtifact when an input is absent.
    StageResult run_stage(Stage stage, bool force = false);
    std::vector<StageResult> run_all(bool force = false);

    void set_eval_overrides(EvalOverrides o) { eval_overrides_ = std::move(o); }

    // Token usage in the layout of a per-domain, per-model usage table.
    std::string stats_report() const;

    const std::filesystem::path& run_dir() const { return run_dir_; }
    Json manifest() const;

private:
    struct StageIo {
        std::vector<std::filesystem::path> inputs;   // relative to run_dir_ unless absolute
        std::vector<std::filesystem::path> outputs;  // relative to run_dir_
        OrderedJson settings;                        // config slice the stage depends on
    };

    StageIo stage_io(Stage stage) const;
    std::string input_digest(Stage stage, const StageIo& io) const;
    bool up_to_date(Stage stage, const StageIo& io, const std::string& digest) const;
    void record(Stage stage, const StageIo& io, const std::string& digest, const OrderedJson& stats);

    OrderedJson do_ingest();
    OrderedJson do_scenes();
    OrderedJson do_generate();
    OrderedJson do_score();
    OrderedJson do_distill();
    OrderedJson do_emit();
    OrderedJson do_eval();

    Gateway make_gateway(EndpointRole role);
    void load_usage();
    void save_usage();

    std::filesystem::path path(const std::filesystem::path& rel) const;
    void log(const std::string& line) const;

    PipelineConfig config_;
    std::filesystem::path run_dir_;
    std::ostream* log_;
    UsageLedger ledger_;
    std::unique_ptr<ResponseStore> store_;
    EvalOverrides eval_overrides_;
};

// Decision rows grouped by scene id, then role.
using DecisionIndex = std::map<std::string, std::map<EndpointRole, std::vector<DecisionSample>>>;
DecisionIndex index_decisions(const std::filesystem::path& decisions_jsonl);

std::vector<Scene> read_scenes(const std::filesystem::path& scenes_jsonl);

}  // namespace simdistill
