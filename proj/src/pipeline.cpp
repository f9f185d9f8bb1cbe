#include "simdistill/pipeline.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

#include "simdistill/errors.hpp"
#include "simdistill/evaluate.hpp"
#include "simdistill/ingest.hpp"
#include "simdistill/templates.hpp"
#include "simdistill/uncertainty.hpp"

namespace simdistill {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

namespace {

void check_keys(const OrderedJson& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
        }
    }
}

template <typename T>
T get_or(const OrderedJson& j, const char* key, T fallback, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    try {
        return it->get<T>();
    } catch (const OrderedJson::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

const OrderedJson& section(const OrderedJson& j, const char* key) {
    static const OrderedJson empty = OrderedJson::object();
    auto it = j.find(key);
    return it == j.end() ? empty : *it;
}

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const OrderedJson& j, const fs::path& base_dir) {
    check_keys(j, {"seed", "endpoints", "domains", "scenes", "split", "generation", "distill", "eval", "gateway"},
               "config");
    PipelineConfig c;
    c.source = j;
    c.seed = get_or<std::uint64_t>(j, "seed", 0, "config");

    const auto& eps = section(j, "endpoints");
    check_keys(eps, {"strong", "weak", "eval", "embeddings"}, "endpoints");
    for (auto it = eps.begin(); it != eps.end(); ++it) {
        const std::string where = "endpoints." + it.key();
        check_keys(*it, {"base_url", "model", "api_key_env", "max_n_per_call"}, where);
        EndpointConfig e;
        e.base_url = get_or<std::string>(*it, "base_url", "", where);
        e.model = get_or<std::string>(*it, "model", "", where);
        e.api_key_env = get_or<std::string>(*it, "api_key_env", "", where);
        e.max_n_per_call = get_or<int>(*it, "max_n_per_call", 0, where);
        if (e.base_url.empty()) throw ConfigError(where + ".base_url is required");
        if (e.model.empty()) throw ConfigError(where + ".model is required");
        constexpr std::string_view kMock = "mock://";
        if (e.base_url.rfind(kMock, 0) == 0 && e.base_url.size() > kMock.size()) {
            e.base_url = std::string(kMock) + resolve(base_dir, e.base_url.substr(kMock.size())).string();
        }
        c.endpoints[it.key()] = e;
    }
    for (const char* required : {"strong", "weak"}) {
        if (c.endpoints.count(required) == 0) throw ConfigError(std::string("endpoints.") + required + " is required");
    }

    const auto& domains = section(j, "domains");
    if (!domains.is_array() || domains.empty()) throw ConfigError("domains must be a non-empty array");
    std::set<std::string> names;
    for (const auto& d : domains) {
        check_keys(d, {"name", "adapter"}, "domains[]");
        DomainEntry e;
        e.name = get_or<std::string>(d, "name", "", "domains[]");
        const auto adapter = get_or<std::string>(d, "adapter", "", "domains[]");
        if (e.name.empty() || adapter.empty()) throw ConfigError("domains[] needs name and adapter");
        if (e.name.find('/') != std::string::npos) throw ConfigError("domain name may not contain '/'");
        if (!names.insert(e.name).second) throw ConfigError("duplicate domain '" + e.name + "'");
        e.adapter = resolve(base_dir, adapter);
        c.domains.push_back(std::move(e));
    }

    const auto& sc = section(j, "scenes");
    check_keys(sc, {"top_k", "slot_min", "slot_max", "history_cap", "min_history", "scenes_per_domain",
                    "eval_slot_count", "eval_scenes_per_domain"},
               "scenes");
    c.top_k = get_or<std::size_t>(sc, "top_k", c.top_k, "scenes");
    c.slot_min = get_or<int>(sc, "slot_min", c.slot_min, "scenes");
    c.slot_max = get_or<int>(sc, "slot_max", c.slot_max, "scenes");
    c.history_cap = get_or<std::size_t>(sc, "history_cap", c.history_cap, "scenes");
    c.min_history = get_or<std::size_t>(sc, "min_history", c.min_history, "scenes");
    c.scenes_per_domain = get_or<std::size_t>(sc, "scenes_per_domain", c.scenes_per_domain, "scenes");
    c.eval_slot_count = get_or<int>(sc, "eval_slot_count", c.eval_slot_count, "scenes");
    c.eval_scenes_per_domain = get_or<std::size_t>(sc, "eval_scenes_per_domain", c.eval_scenes_per_domain, "scenes");
    if (c.slot_min < 1 || c.slot_max > static_cast<int>(kMaxOptions) - 1 || c.slot_min > c.slot_max) {
        throw ConfigError("scenes slot range must satisfy 1 <= slot_min <= slot_max <= 12");
    }
    if (c.eval_slot_count < 1 || c.eval_slot_count > static_cast<int>(kMaxOptions) - 1) {
        throw ConfigError("scenes.eval_slot_count must lie in [1, 12]");
    }
    if (c.top_k == 0) throw ConfigError("scenes.top_k must be positive");

    const auto& sp = section(j, "split");
    check_keys(sp, {"eval_fraction"}, "split");
    c.eval_fraction = get_or<double>(sp, "eval_fraction", c.eval_fraction, "split");
    if (!(c.eval_fraction > 0.0 && c.eval_fraction < 1.0)) throw ConfigError("split.eval_fraction must lie in (0, 1)");

    const auto& g = section(j, "generation");
    check_keys(g, {"n_decisions", "temperature", "top_p", "max_tokens", "logprob_depth", "floor_offset"},
               "generation");
    c.generation.n_decisions = get_or<int>(g, "n_decisions", c.generation.n_decisions, "generation");
    c.generation.temperature = get_or<double>(g, "temperature", c.generation.temperature, "generation");
    c.generation.top_p = get_or<double>(g, "top_p", c.generation.top_p, "generation");
    c.generation.max_tokens = get_or<int>(g, "max_tokens", c.generation.max_tokens, "generation");
    c.generation.logprob_depth = get_or<int>(g, "logprob_depth", c.generation.logprob_depth, "generation");
    c.generation.floor_offset = get_or<double>(g, "floor_offset", c.generation.floor_offset, "generation");
    if (c.generation.n_decisions < 1) throw ConfigError("generation.n_decisions must be >= 1");
    if (!(c.generation.floor_offset > 0.0)) throw ConfigError("generation.floor_offset must be positive");
    const int max_k = std::max(c.slot_max, c.eval_slot_count) + 1;
    if (c.generation.logprob_depth < max_k) {
        throw ConfigError("generation.logprob_depth must be at least the largest option count (" +
                          std::to_string(max_k) + ")");
    }

    const auto& ds = section(j, "distill");
    check_keys(ds, {"quotas", "pair_policy", "backfill"}, "distill");
    c.pair_policy = pair_policy_from_string(get_or<std::string>(ds, "pair_policy", "hardest", "distill"));
    c.backfill = get_or<bool>(ds, "backfill", true, "distill");
    const auto& quotas = section(ds, "quotas");
    if (!quotas.is_object()) throw ConfigError("distill.quotas must be an object");
    for (const auto& d : c.domains) {
        auto it = quotas.find(d.name);
        if (it != quotas.end()) c.quotas.emplace_back(d.name, it->get<std::size_t>());
    }
    for (auto it = quotas.begin(); it != quotas.end(); ++it) {
        if (names.count(it.key()) == 0) throw ConfigError("distill.quotas names unknown domain '" + it.key() + "'");
    }
    if (c.quotas.empty()) {
        // Default: an even split of the per-domain scene budget.
        for (const auto& d : c.domains) c.quotas.emplace_back(d.name, std::max<std::size_t>(1, c.scenes_per_domain / 2));
    }
    c.distill_config().validate();

    const auto& ev = section(j, "eval");
    check_keys(ev, {"samples_per_scene", "mode"}, "eval");
    c.eval_samples_per_scene = get_or<int>(ev, "samples_per_scene", c.eval_samples_per_scene, "eval");
    const auto mode = get_or<std::string>(ev, "mode", "decision", "eval");
    if (mode != "decision" && mode != "direct") throw ConfigError("eval.mode must be 'decision' or 'direct'");
    c.eval_mode = mode == "direct" ? PromptVariant::Direct : PromptVariant::Decision;
    if (c.eval_samples_per_scene < 1) throw ConfigError("eval.samples_per_scene must be >= 1");

    const auto& gw = section(j, "gateway");
    check_keys(gw, {"concurrency", "max_attempts", "backoff_ms", "timeout_s", "embed_batch_size"}, "gateway");
    c.gateway.concurrency = get_or<int>(gw, "concurrency", c.gateway.concurrency, "gateway");
    c.gateway.retry.max_attempts = get_or<int>(gw, "max_attempts", c.gateway.retry.max_attempts, "gateway");
    c.gateway.retry.base_delay =
        std::chrono::milliseconds(get_or<int>(gw, "backoff_ms", static_cast<int>(c.gateway.retry.base_delay.count()),
                                              "gateway"));
    c.gateway.timeout = std::chrono::seconds(get_or<int>(gw, "timeout_s", 120, "gateway"));
    c.gateway.embed_batch_size = get_or<std::size_t>(gw, "embed_batch_size", 64, "gateway");
    if (c.gateway.concurrency < 1 || c.gateway.retry.max_attempts < 1 || c.gateway.embed_batch_size < 1) {
        throw ConfigError("gateway concurrency, max_attempts and embed_batch_size must be positive");
    }
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error&) {
        throw ConfigError("cannot read config " + path.string());
    }
    OrderedJson j;
    try {
        j = OrderedJson::parse(text);
    } catch (const OrderedJson::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j, fs::absolute(path).parent_path());
}

std::string PipelineConfig::hash() const { return sha256_hex(Json(source).dump()); }

bool PipelineConfig::has_endpoint(EndpointRole role) const {
    return endpoints.count(std::string(to_string(role))) != 0;
}

ModelEndpoint PipelineConfig::endpoint(EndpointRole role) const {
    auto it = endpoints.find(std::string(to_string(role)));
    if (it == endpoints.end()) throw ConfigError("endpoints." + std::string(to_string(role)) + " is not configured");
    ModelEndpoint e;
    e.base_url = it->second.base_url;
    e.model_name = it->second.model;
    e.api_key_env = it->second.api_key_env;
    e.role = role;
    e.max_n_per_call = it->second.max_n_per_call;
    return e;
}

DistillConfig PipelineConfig::distill_config() const {
    DistillConfig d;
    d.quotas = quotas;
    d.pair_policy = pair_policy;
    d.backfill = backfill;
    d.seed = seed;
    return d;
}

SceneBuildConfig PipelineConfig::scene_config(bool evaluation) const {
    SceneBuildConfig s;
    s.top_k = top_k;
    s.slot_min = slot_min;
    s.slot_max = slot_max;
    s.history_cap = history_cap;
    s.min_history = min_history;
    s.scenes_per_domain = evaluation ? eval_scenes_per_domain : scenes_per_domain;
    if (evaluation) s.fixed_slot_count = eval_slot_count;
    s.variant = evaluation ? eval_mode : PromptVariant::Decision;
    return s;
}

// ---------------------------------------------------------------------------
// Stages and lock

std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::Ingest: return "ingest";
        case Stage::Scenes: return "scenes";
        case Stage::Generate: return "generate";
        case Stage::Score: return "score";
        case Stage::Distill: return "distill";
        case Stage::Emit: return "emit";
        case Stage::Eval: return "eval";
    }
    return "ingest";
}

Stage stage_from_string(std::string_view s) {
    for (Stage st : kAllStages) {
        if (to_string(st) == s) return st;
    }
    throw ConfigError("unknown stage '" + std::string(s) + "'");
}

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / "run.lock") {
    fs::create_directories(run_dir);
    for (int attempt = 0; attempt < 2; ++attempt) {
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd >= 0) {
            const std::string pid = std::to_string(::getpid()) + "\n";
            [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
            ::close(fd);
            return;
        }
        if (errno != EEXIST) throw IoError("cannot create " + path_.string());
        long owner = 0;
        try {
            owner = std::stol(read_file(path_));
        } catch (...) {
            owner = 0;
        }
        const bool alive = owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM);
        if (alive) {
            throw Error("run directory " + run_dir.string() + " is locked by process " + std::to_string(owner), 1);
        }
        std::error_code ec;
        fs::remove(path_, ec);
    }
    throw Error("could not acquire " + path_.string(), 1);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

// ---------------------------------------------------------------------------
// Shared readers

std::vector<Scene> read_scenes(const fs::path& scenes_jsonl) {
    std::ifstream in(scenes_jsonl);
    if (!in) throw MissingArtifact(scenes_jsonl.filename().string());
    std::vector<Scene> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(scene_from_json(OrderedJson::parse(line)));
    }
    return out;
}

DecisionIndex index_decisions(const fs::path& decisions_jsonl) {
    if (!fs::exists(decisions_jsonl)) throw MissingArtifact(decisions_jsonl.filename().string());
    DecisionIndex idx;
    for (const auto& row : read_jsonl(decisions_jsonl)) {
        auto s = decision_sample_from_json(row);
        idx[s.scene_id][s.role].push_back(std::move(s));
    }
    return idx;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

OrderedJson endpoint_settings(const PipelineConfig& c, EndpointRole role) {
    if (!c.has_endpoint(role)) return nullptr;
    const auto e = c.endpoint(role);
    return {{"base_url", e.base_url}, {"model", e.model_name}, {"max_n_per_call", e.max_n_per_call}};
}

OrderedJson generation_settings(const GenerationSettings& g) {
    return {{"n_decisions", g.n_decisions}, {"temperature", g.temperature}, {"top_p", g.top_p},
            {"max_tokens", g.max_tokens},   {"logprob_depth", g.logprob_depth}, {"floor_offset", g.floor_offset}};
}

// Runs fn(i) for i in [0, n) on `threads` workers; the first exception wins.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex mu;
    auto worker = [&] {
        for (;;) {
            if (failed.load()) return;
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!error) error = std::current_exception();
                failed = true;
                return;
            }
        }
    };
    const int count = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    std::vector<std::thread> pool;
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

std::int64_t request_seed(std::uint64_t global, const std::string& label) {
    return static_cast<std::int64_t>(derive_seed(global, label) >> 1);
}

OrderedJson report_json(const UncertaintyReport& r, std::size_t n_valid) {
    return {{"total", r.total}, {"aleatoric", r.aleatoric}, {"epistemic", r.epistemic}, {"n_valid", n_valid}};
}

}  // namespace

Pipeline::Pipeline(PipelineConfig config, fs::path run_dir, std::ostream* log)
    : config_(std::move(config)),
      run_dir_(std::move(run_dir)),
      log_(log),
      store_(std::make_unique<ResponseStore>(run_dir_ / "responses")) {
    fs::create_directories(run_dir_);
}

fs::path Pipeline::path(const fs::path& rel) const { return rel.is_absolute() ? rel : run_dir_ / rel; }

void Pipeline::log(const std::string& line) const {
    if (log_ != nullptr) *log_ << line << '\n';
}

Json Pipeline::manifest() const {
    const auto p = run_dir_ / "run.json";
    if (!fs::exists(p)) return Json::object();
    return Json::parse(read_file(p));
}

void Pipeline::load_usage() {
    ledger_.clear();
    const auto p = run_dir_ / "usage.json";
    if (fs::exists(p)) ledger_.merge_json(Json::parse(read_file(p)));
}

void Pipeline::save_usage() { write_file_atomic(run_dir_ / "usage.json", ledger_.to_json().dump(2) + "\n"); }

Gateway Pipeline::make_gateway(EndpointRole role) {
    const auto endpoint = config_.endpoint(role);
    return Gateway(endpoint, make_transport(endpoint, config_.gateway.timeout), config_.gateway, &ledger_,
                   store_.get());
}

Pipeline::StageIo Pipeline::stage_io(Stage stage) const {
    StageIo io;
    std::vector<std::string> domains;
    for (const auto& d : config_.domains) domains.push_back(d.name);
    switch (stage) {
        case Stage::Ingest: {
            io.settings = {{"seed", config_.seed}, {"eval_fraction", config_.eval_fraction}, {"domains", domains}};
            for (const auto& d : config_.domains) {
                io.inputs.push_back(d.adapter);
                const auto adapter = load_adapter(d.adapter);
                io.inputs.push_back(adapter.catalog.table.path);
                io.inputs.push_back(adapter.interactions.table.path);
                if (adapter.profiles) io.inputs.push_back(adapter.profiles->table.path);
                if (adapter.template_dir) {
                    for (const char* f : {"profile.txt", "history.txt", "exposure.txt"}) {
                        if (fs::exists(*adapter.template_dir / f)) io.inputs.push_back(*adapter.template_dir / f);
                    }
                }
                for (const char* f : {"catalog.jsonl", "interactions.jsonl", "profiles.jsonl", "split.json"}) {
                    io.outputs.push_back(fs::path(d.name) / f);
                }
            }
            break;
        }
        case Stage::Scenes: {
            io.settings = {{"seed", config_.seed},
                           {"top_k", config_.top_k},
                           {"slot_min", config_.slot_min},
                           {"slot_max", config_.slot_max},
                           {"history_cap", config_.history_cap},
                           {"min_history", config_.min_history},
                           {"scenes_per_domain", config_.scenes_per_domain},
                           {"eval_slot_count", config_.eval_slot_count},
                           {"eval_scenes_per_domain", config_.eval_scenes_per_domain},
                           {"eval_mode", config_.eval_mode == PromptVariant::Direct ? "direct" : "decision"},
                           {"embeddings", endpoint_settings(config_, EndpointRole::Embeddings)},
                           {"layout", prompt_layout_version()}};
            for (const auto& d : config_.domains) {
                for (const char* f : {"interactions.jsonl", "catalog.jsonl", "split.json", "profiles.jsonl"}) {
                    io.inputs.push_back(fs::path(d.name) / f);
                }
                io.inputs.push_back(d.adapter);
            }
            io.outputs = {"scenes.jsonl", "eval_scenes.jsonl"};
            break;
        }
        case Stage::Generate:
            io.settings = {{"seed", config_.seed},
                           {"generation", generation_settings(config_.generation)},
                           {"strong", endpoint_settings(config_, EndpointRole::Strong)},
                           {"weak", endpoint_settings(config_, EndpointRole::Weak)}};
            io.inputs = {"scenes.jsonl"};
            io.outputs = {"decisions.jsonl"};
            break;
        case Stage::Score:
            io.settings = OrderedJson::object();
            io.inputs = {"scenes.jsonl", "decisions.jsonl"};
            io.outputs = {"uncertainty.jsonl"};
            break;
        case Stage::Distill:
            io.settings = {{"quotas", OrderedJson(config_.quotas)},
                           {"pair_policy", to_string(config_.pair_policy)},
                           {"backfill", config_.backfill}};
            io.inputs = {"uncertainty.jsonl", "decisions.jsonl"};
            io.outputs = {"selection.json"};
            break;
        case Stage::Emit:
            io.settings = {{"seed", config_.seed}, {"config_hash", config_.hash()}};
            io.inputs = {"selection.json", "scenes.jsonl", "decisions.jsonl", "eval_scenes.jsonl"};
            for (const auto& d : config_.domains) io.inputs.push_back(fs::path(d.name) / "split.json");
            io.outputs = {"dataset/sft.jsonl", "dataset/dpo.jsonl", "dataset/manifest.json"};
            break;
        case Stage::Eval: {
            const EndpointRole role = eval_overrides_.role.value_or(EndpointRole::Eval);
            const PromptVariant mode = eval_overrides_.mode.value_or(config_.eval_mode);
            io.settings = {{"seed", config_.seed},
                           {"role", to_string(role)},
                           {"endpoint", endpoint_settings(config_, role)},
                           {"mode", mode == PromptVariant::Direct ? "direct" : "decision"},
                           {"samples_per_scene", config_.eval_samples_per_scene},
                           {"generation", generation_settings(config_.generation)}};
            io.inputs = {eval_overrides_.scenes ? fs::absolute(*eval_overrides_.scenes) : fs::path("eval_scenes.jsonl")};
            io.outputs = {"eval/eval.json", "eval/factors.json", "eval/summary.txt", "eval/decisions.jsonl"};
            break;
        }
    }
    return io;
}

std::string Pipeline::input_digest(Stage stage, const StageIo& io) const {
    std::string material = std::string(to_string(stage)) + "\n" + Json(io.settings).dump() + "\n";
    for (const auto& in : io.inputs) {
        const auto p = path(in);
        if (!fs::exists(p)) throw MissingArtifact(in.string());
        material += in.string() + " " + file_digest(p) + "\n";
    }
    return sha256_hex(material);
}

bool Pipeline::up_to_date(Stage stage, const StageIo& io, const std::string& digest) const {
    const Json m = manifest();
    const auto stages = m.find("stages");
    if (stages == m.end()) return false;
    const auto entry = stages->find(std::string(to_string(stage)));
    if (entry == stages->end() || entry->value("input_digest", "") != digest) return false;
    const auto& outputs = entry->at("outputs");
    for (const auto& out : io.outputs) {
        const auto p = path(out);
        if (!fs::exists(p) || !outputs.contains(out.string())) return false;
        if (outputs.at(out.string()).get<std::string>() != file_digest(p)) return false;
    }
    return true;
}

void Pipeline::record(Stage stage, const StageIo& io, const std::string& digest, const OrderedJson& stats) {
    OrderedJson m;
    const auto p = run_dir_ / "run.json";
    if (fs::exists(p)) {
        m = OrderedJson::parse(read_file(p));
    } else {
        m["run_id"] = config_.hash().substr(0, 12) + "-" + utc_now();
        m["created_at"] = utc_now();
        m["stages"] = OrderedJson::object();
    }
    m["config_hash"] = config_.hash();
    m["seed"] = config_.seed;
    OrderedJson outputs = OrderedJson::object();
    for (const auto& out : io.outputs) outputs[out.string()] = file_digest(path(out));
    OrderedJson inputs = OrderedJson::object();
    for (const auto& in : io.inputs) inputs[in.string()] = file_digest(path(in));
    m["stages"][std::string(to_string(stage))] = {{"input_digest", digest},
                                                  {"inputs", inputs},
                                                  {"outputs", outputs},
                                                  {"completed_at", utc_now()},
                                                  {"stats", stats}};
    write_file_atomic(p, m.dump(2) + "\n");
}

StageResult Pipeline::run_stage(Stage stage, bool force) {
    const StageIo io = stage_io(stage);
    const std::string digest = input_digest(stage, io);
    StageResult result{stage, false, OrderedJson::object()};
    if (!force && up_to_date(stage, io, digest)) {
        result.skipped = true;
        log(std::string(to_string(stage)) + ": up to date");
        return result;
    }
    log(std::string(to_string(stage)) + ": running");
    switch (stage) {
        case Stage::Ingest: result.stats = do_ingest(); break;
        case Stage::Scenes: result.stats = do_scenes(); break;
        case Stage::Generate: result.stats = do_generate(); break;
        case Stage::Score: result.stats = do_score(); break;
        case Stage::Distill: result.stats = do_distill(); break;
        case Stage::Emit: result.stats = do_emit(); break;
        case Stage::Eval: result.stats = do_eval(); break;
    }
    record(stage, io, digest, result.stats);
    log(std::string(to_string(stage)) + ": " + result.stats.dump());
    return result;
}

std::vector<StageResult> Pipeline::run_all(bool force) {
    std::vector<StageResult> out;
    for (Stage s : kAllStages) out.push_back(run_stage(s, force));
    return out;
}

OrderedJson Pipeline::do_ingest() {
    OrderedJson stats = OrderedJson::object();
    for (const auto& d : config_.domains) {
        const AdapterConfig adapter = load_adapter(d.adapter);
        if (adapter.domain != d.name) {
            throw ConfigError("adapter " + d.adapter.string() + " declares domain '" + adapter.domain +
                              "' but the config names it '" + d.name + "'");
        }
        const CatalogLoad catalog = load_catalog(adapter);
        const InteractionLoad log = load_interactions(adapter, catalog.catalog);
        const ProfileLoad profiles = adapter.profiles ? load_profiles(adapter) : ProfileLoad{};
        std::vector<std::string> users;
        for (const auto& [u, _] : log.by_user) users.push_back(u);
        const DomainSplit split = split_users(d.name, users, config_.eval_fraction, config_.seed);

        const fs::path dir = run_dir_ / d.name;
        fs::create_directories(dir);
        write_file_atomic(dir / "catalog.jsonl", catalog_to_jsonl(catalog.catalog));
        write_file_atomic(dir / "interactions.jsonl", interactions_to_jsonl(log));
        write_file_atomic(dir / "profiles.jsonl", profiles_to_jsonl(profiles));
        write_file_atomic(dir / "split.json", split_to_json(split, config_.eval_fraction, config_.seed).dump(2) + "\n");
        stats[d.name] = {{"items", catalog.catalog.items.size()},
                         {"catalog_rows_skipped", catalog.skipped},
                         {"interactions", log.total()},
                         {"interactions_malformed", log.skipped_malformed},
                         {"interactions_unknown_item", log.dropped_unknown_item},
                         {"profiles", profiles.profiles.size()},
                         {"users", users.size()},
                         {"evaluation_users", split.evaluation_users.size()}};
    }
    return stats;
}

OrderedJson Pipeline::do_scenes() {
    load_usage();
    OrderedJson stats = OrderedJson::object();
    std::string train_out;
    std::string eval_out;
    for (const auto& d : config_.domains) {
        const fs::path dir = run_dir_ / d.name;
        for (const char* f : {"interactions.jsonl", "catalog.jsonl", "split.json"}) {
            if (!fs::exists(dir / f)) throw MissingArtifact((fs::path(d.name) / f).string());
        }
        const auto interactions = interactions_from_jsonl(dir / "interactions.jsonl");
        const Catalog catalog = catalog_from_jsonl(dir / "catalog.jsonl");
        const auto profiles = profiles_from_jsonl(dir / "profiles.jsonl");
        const DomainSplit split = split_from_json(Json::parse(read_file(dir / "split.json")));
        const AdapterConfig adapter = load_adapter(d.adapter);
        const DomainTemplate tmpl =
            adapter.template_dir ? load_template_dir(*adapter.template_dir) : builtin_template(adapter.template_name);

        EmbeddingTable embeddings;
        if (config_.has_endpoint(EndpointRole::Embeddings)) {
            Gateway gw = make_gateway(EndpointRole::Embeddings);
            std::vector<std::string> texts;
            texts.reserve(catalog.items.size());
            for (const auto& item : catalog.items) texts.push_back(render_item(item, tmpl));
            if (!texts.empty()) {
                auto vectors = gw.embed_batch(texts, d.name);
                for (std::size_t i = 0; i < catalog.items.size(); ++i) {
                    embeddings[catalog.items[i].item_id] = std::move(vectors[i]);
                }
            }
        }

        DomainData data;
        data.adapter = &adapter;
        data.catalog = &catalog;
        data.interactions = &interactions;
        data.profiles = &profiles;
        data.tmpl = &tmpl;
        data.embeddings = embeddings.empty() ? nullptr : &embeddings;

        SceneBuildStats train_stats;
        SceneBuildStats eval_stats;
        const auto train = build_domain_scenes(data, split.construction_users, split.construction_users,
                                               config_.scene_config(false), derive_seed(config_.seed, "train"),
                                               &train_stats);
        const auto evals = build_domain_scenes(data, split.evaluation_users, split.construction_users,
                                               config_.scene_config(true), derive_seed(config_.seed, "eval"),
                                               &eval_stats);
        for (const auto& s : train) train_out += scene_to_json(s).dump() + "\n";
        for (const auto& s : evals) eval_out += scene_to_json(s).dump() + "\n";
        auto st = [](const SceneBuildStats& s) {
            return OrderedJson{{"built", s.built},
                               {"pool_exhausted", s.pool_exhausted},
                               {"short_history", s.short_history},
                               {"missing_embeddings", s.missing_embeddings}};
        };
        stats[d.name] = {{"training", st(train_stats)}, {"evaluation", st(eval_stats)}};
    }
    write_file_atomic(run_dir_ / "scenes.jsonl", train_out);
    write_file_atomic(run_dir_ / "eval_scenes.jsonl", eval_out);
    save_usage();
    return stats;
}

namespace {

// Decision rows of a run in sample order; partial generations keep what arrived.
SceneRun generate_for(const Scene& scene, Gateway& gw, EndpointRole role, PromptVariant mode,
                      const GenerationSettings& settings, std::int64_t seed, std::size_t* partial_count,
                      std::mutex* mu) {
    try {
        return run_scene(scene, gw, role, mode, settings, seed, scene.domain_id);
    } catch (const PartialGeneration& e) {
        {
            std::lock_guard lock(*mu);
            ++*partial_count;
        }
        SceneRun run = score_samples(scene, role, mode, e.samples(), settings.n_decisions, settings.floor_offset);
        run.partial = true;
        return run;
    }
}

}  // namespace

OrderedJson Pipeline::do_generate() {
    load_usage();
    const auto scenes = read_scenes(run_dir_ / "scenes.jsonl");
    Gateway strong = make_gateway(EndpointRole::Strong);
    Gateway weak = make_gateway(EndpointRole::Weak);

    std::vector<SceneRun> strong_runs(scenes.size());
    std::vector<SceneRun> weak_runs(scenes.size());
    std::size_t partial = 0;
    std::mutex mu;
    try {
        parallel_for(scenes.size(), config_.gateway.concurrency, [&](std::size_t i) {
            const Scene& s = scenes[i];
            strong_runs[i] = generate_for(s, strong, EndpointRole::Strong, PromptVariant::Decision, config_.generation,
                                          request_seed(config_.seed, "generate/strong/" + s.scene_id), &partial, &mu);
            weak_runs[i] = generate_for(s, weak, EndpointRole::Weak, PromptVariant::Decision, config_.generation,
                                        request_seed(config_.seed, "generate/weak/" + s.scene_id), &partial, &mu);
        });
    } catch (...) {
        save_usage();
        throw;
    }

    std::string out;
    std::size_t rows = 0;
    std::size_t failures[2] = {0, 0};
    std::size_t unusable[2] = {0, 0};
    std::size_t fallback = 0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        int r = 0;
        for (const SceneRun* run : {&strong_runs[i], &weak_runs[i]}) {
            for (const auto& sample : run->samples) {
                out += decision_sample_to_json(sample).dump() + "\n";
                ++rows;
                if (sample.dist_fallback) ++fallback;
            }
            failures[r] += static_cast<std::size_t>(run->parse_failures);
            if (run->unusable()) ++unusable[r];
            ++r;
        }
    }
    write_file_atomic(run_dir_ / "decisions.jsonl", out);
    save_usage();
    const auto gs = strong.stats();
    const auto ws = weak.stats();
    return {{"scenes", scenes.size()},
            {"rows", rows},
            {"strong", {{"parse_failures", failures[0]}, {"unusable_scenes", unusable[0]}, {"wire_calls", gs.wire_calls},
                        {"cache_hits", gs.cache_hits}, {"retries", gs.retries}}},
            {"weak", {{"parse_failures", failures[1]}, {"unusable_scenes", unusable[1]}, {"wire_calls", ws.wire_calls},
                      {"cache_hits", ws.cache_hits}, {"retries", ws.retries}}},
            {"partial_generations", partial},
            {"dist_fallback", fallback}};
}

OrderedJson Pipeline::do_score() {
    const auto scenes = read_scenes(run_dir_ / "scenes.jsonl");
    const DecisionIndex idx = index_decisions(run_dir_ / "decisions.jsonl");
    std::string out;
    std::size_t scored = 0;
    std::size_t excluded = 0;
    std::size_t positive = 0;
    double weak_sum = 0.0;
    double strong_sum = 0.0;
    for (const auto& scene : scenes) {
        auto ensemble_of = [&](EndpointRole role) {
            std::vector<ActionDistribution> e;
            auto it = idx.find(scene.scene_id);
            if (it == idx.end()) return e;
            auto r = it->second.find(role);
            if (r == it->second.end()) return e;
            for (const auto& s : r->second) {
                if (s.valid) e.push_back(s.action_dist);
            }
            return e;
        };
        const auto weak = ensemble_of(EndpointRole::Weak);
        const auto strong = ensemble_of(EndpointRole::Strong);
        if (weak.empty() || strong.empty()) {
            ++excluded;
            continue;
        }
        const EpistemicGap gap = epistemic_gap(weak, strong, scene.scene_id);
        OrderedJson row = {{"scene_id", scene.scene_id},
                           {"domain", scene.domain_id},
                           {"slot_count", scene.exposure.slot_count},
                           {"weak", report_json(gap.weak, weak.size())},
                           {"strong", report_json(gap.strong, strong.size())},
                           {"delta_eu", gap.delta_eu}};
        out += row.dump() + "\n";
        ++scored;
        weak_sum += gap.weak.epistemic;
        strong_sum += gap.strong.epistemic;
        if (gap.delta_eu > 0.0) ++positive;
    }
    write_file_atomic(run_dir_ / "uncertainty.jsonl", out);
    const double n = scored == 0 ? 1.0 : static_cast<double>(scored);
    return {{"scored", scored},
            {"excluded_without_ensemble", excluded},
            {"mean_weak_epistemic", weak_sum / n},
            {"mean_strong_epistemic", strong_sum / n},
            {"positive_gap_fraction", static_cast<double>(positive) / n}};
}

namespace {

std::map<std::string, std::vector<DecisionSample>> strong_samples(const DecisionIndex& idx) {
    std::map<std::string, std::vector<DecisionSample>> out;
    for (const auto& [id, roles] : idx) {
        auto it = roles.find(EndpointRole::Strong);
        if (it != roles.end()) out[id] = it->second;
    }
    return out;
}

}  // namespace

OrderedJson Pipeline::do_distill() {
    const auto uncertainty = run_dir_ / "uncertainty.jsonl";
    if (!fs::exists(uncertainty)) throw MissingArtifact("uncertainty.jsonl");
    std::vector<CandidateScene> candidates;
    for (const auto& row : read_jsonl(uncertainty)) {
        candidates.push_back({row.at("scene_id").get<std::string>(), row.at("domain").get<std::string>(),
                              row.at("slot_count").get<int>(), row.at("delta_eu").get<double>()});
    }
    const DecisionIndex idx = index_decisions(run_dir_ / "decisions.jsonl");
    const Selection sel = select_training_scenes(std::move(candidates), strong_samples(idx), config_.distill_config());
    write_file_atomic(run_dir_ / "selection.json", selection_to_json(sel).dump(2) + "\n");

    OrderedJson stats = OrderedJson::object();
    for (const auto& d : sel.domains) {
        stats[d.domain_id] = {{"quota", d.quota},         {"selected", d.selected}, {"pairs", d.pairs},
                              {"sft_only", d.sft_only},   {"shortfall", d.shortfall}, {"backfilled", d.backfilled}};
    }
    return stats;
}

OrderedJson Pipeline::do_emit() {
    const auto sel_path = run_dir_ / "selection.json";
    if (!fs::exists(sel_path)) throw MissingArtifact("selection.json");
    const Selection sel = selection_from_json(Json::parse(read_file(sel_path)));
    std::map<std::string, Scene> scenes;
    for (auto& s : read_scenes(run_dir_ / "scenes.jsonl")) {
        std::string id = s.scene_id;
        scenes.emplace(std::move(id), std::move(s));
    }
    const DecisionIndex idx = index_decisions(run_dir_ / "decisions.jsonl");

    // Leakage guard: no training example may come from an evaluation user or
    // share a scene with the evaluation set.
    std::set<std::string> eval_ids;
    for (const auto& s : read_scenes(run_dir_ / "eval_scenes.jsonl")) eval_ids.insert(s.scene_id);
    std::map<std::string, DomainSplit> splits;
    for (const auto& d : config_.domains) {
        splits[d.name] = split_from_json(Json::parse(read_file(run_dir_ / d.name / "split.json")));
    }
    for (const auto& chosen : sel.scenes) {
        auto it = scenes.find(chosen.scene_id);
        if (it == scenes.end()) throw ContractViolation("selected scene " + chosen.scene_id + " is not in scenes.jsonl");
        auto sp = splits.find(it->second.domain_id);
        if (eval_ids.count(chosen.scene_id) != 0 ||
            (sp != splits.end() && sp->second.is_evaluation(it->second.user_id))) {
            throw ContractViolation("scene " + chosen.scene_id + " belongs to an evaluation user");
        }
    }

    const DatasetFiles files = render_dataset(sel, scenes, strong_samples(idx), config_.distill_config(), config_.hash());
    write_dataset(files, run_dir_ / "dataset");
    std::size_t sft = 0;
    std::size_t dpo = 0;
    for (char c : files.sft_jsonl) sft += c == '\n';
    for (char c : files.dpo_jsonl) dpo += c == '\n';
    return {{"sft_rows", sft}, {"dpo_rows", dpo}};
}

OrderedJson Pipeline::do_eval() {
    load_usage();
    const EndpointRole role = eval_overrides_.role.value_or(EndpointRole::Eval);
    const fs::path scenes_path = eval_overrides_.scenes ? *eval_overrides_.scenes : run_dir_ / "eval_scenes.jsonl";
    const auto scenes = read_scenes(scenes_path);
    Gateway gw = make_gateway(role);
    EvalOptions opts;
    opts.mode = eval_overrides_.mode.value_or(config_.eval_mode);
    opts.samples_per_scene = config_.eval_samples_per_scene;
    opts.generation = config_.generation;
    opts.seed = config_.seed;
    opts.threads = config_.gateway.concurrency;
    std::vector<std::string> order;
    for (const auto& d : config_.domains) order.push_back(d.name);

    EvalRun run;
    try {
        run = evaluate_accuracy(scenes, gw, opts, order);
    } catch (...) {
        save_usage();
        throw;
    }
    save_usage();
    const FactorStats factors = extract_factors(run.samples);
    const fs::path dir = run_dir_ / "eval";
    write_report(run.result, factors, dir);
    std::string rows;
    for (const auto& s : run.samples) rows += decision_sample_to_json(s).dump() + "\n";
    write_file_atomic(dir / "decisions.jsonl", rows);

    OrderedJson stats = {{"role", to_string(role)}, {"scenes", scenes.size()}};
    for (const auto& row : run.result.domains) stats[row.domain_id] = row.accuracy;
    stats["overall"] = run.result.overall.accuracy;
    stats["scenes_without_valid"] = run.result.overall.scenes_without_valid;
    return stats;
}

std::string Pipeline::stats_report() const {
    UsageLedger ledger;
    const auto usage = run_dir_ / "usage.json";
    if (fs::exists(usage)) ledger.merge_json(Json::parse(read_file(usage)));
    const auto snap = ledger.snapshot();

    std::map<std::string, std::size_t> scene_counts;
    const auto scenes_path = run_dir_ / "scenes.jsonl";
    if (fs::exists(scenes_path)) {
        for (const auto& row : read_jsonl(scenes_path)) ++scene_counts[row.at("domain_id").get<std::string>()];
    }

    std::vector<std::string> roles;
    for (EndpointRole r : {EndpointRole::Strong, EndpointRole::Weak, EndpointRole::Eval, EndpointRole::Embeddings}) {
        const std::string name(to_string(r));
        for (const auto& [key, _] : snap) {
            if (key.first == name) {
                roles.push_back(name);
                break;
            }
        }
    }
    std::vector<std::string> domains;
    for (const auto& d : config_.domains) domains.push_back(d.name);

    auto fmt = [](double v, int width, int precision) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%*.*f", width, precision, v);
        return std::string(buf);
    };
    auto pad = [](const std::string& s, std::size_t width) {
        return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
    };

    std::string out = "Token usage (" + run_dir_.string() + ")\n";
    std::string head1 = pad("Domain", 14) + pad("#Scenes", 9);
    std::string head2 = std::string(23, ' ');
    for (const auto& r : roles) {
        std::string model;
        auto it = config_.endpoints.find(r);
        if (it != config_.endpoints.end()) model = it->second.model;
        head1 += "| " + pad(r + (model.empty() ? "" : " (" + model + ")"), 46);
        head2 += "| " + pad("In avg", 10) + pad("In total", 13) + pad("Out avg", 10) + pad("Out total", 13);
    }
    out += head1 + "\n" + head2 + "\n";

    auto row = [&](const std::string& label, std::size_t scenes, const std::function<bool(const std::string&)>& take) {
        std::string line = pad(label, 14) + pad(std::to_string(scenes), 9);
        for (const auto& r : roles) {
            UsageLedger::Entry e;
            for (const auto& [key, v] : snap) {
                if (key.first != r || !take(key.second)) continue;
                e.requests += v.requests;
                e.samples += v.samples;
                e.prompt_tokens += v.prompt_tokens;
                e.completion_tokens += v.completion_tokens;
            }
            const double in_avg = e.requests == 0 ? 0.0 : static_cast<double>(e.prompt_tokens) / e.requests;
            const double out_avg = e.samples == 0 ? 0.0 : static_cast<double>(e.completion_tokens) / e.samples;
            line += "| " + fmt(in_avg, 8, 1) + "  " + fmt(static_cast<double>(e.prompt_tokens), 11, 0) + "  " +
                    fmt(out_avg, 8, 1) + "  " + fmt(static_cast<double>(e.completion_tokens), 11, 0) + "  ";
        }
        return line + "\n";
    };
    std::size_t total_scenes = 0;
    for (const auto& d : domains) {
        total_scenes += scene_counts[d];
        out += row(d, scene_counts[d], [&](const std::string& dom) { return dom == d; });
    }
    out += row("Overall", total_scenes, [](const std::string&) { return true; });
    return out;
}

}  // namespace simdistill
