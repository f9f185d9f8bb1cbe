#include "simdistill/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include "simdistill/errors.hpp"

namespace simdistill {

namespace {

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void add_outcome(AccuracyRow& row, const SceneOutcome& o) {
    row.scenes += 1;
    row.samples += o.outcomes.size();
    row.valid += o.valid;
    row.invalid += o.invalid;
    row.matched += o.matched;
    if (o.no_valid_samples) row.scenes_without_valid += 1;
}

void finish(AccuracyRow& row) {
    row.accuracy = ratio(row.matched, row.valid);
    row.strict_accuracy = ratio(row.matched, row.valid + row.invalid);
}

}  // namespace

SceneOutcome outcome_from_run(const Scene& scene, const SceneRun& run) {
    SceneOutcome o;
    o.scene_id = scene.scene_id;
    o.domain_id = scene.domain_id;
    for (const auto& s : run.samples) {
        if (s.valid) {
            o.outcomes.emplace_back(s.matched_ground_truth);
            ++o.valid;
            if (s.matched_ground_truth) ++o.matched;
        } else {
            o.outcomes.emplace_back(std::nullopt);
            ++o.invalid;
        }
    }
    o.no_valid_samples = o.valid == 0;
    return o;
}

EvalResult aggregate_accuracy(std::span<const std::string> domain_order, std::span<const SceneOutcome> outcomes,
                              PromptVariant mode, int samples_per_scene) {
    EvalResult r;
    r.mode = mode;
    r.samples_per_scene = samples_per_scene;
    std::vector<std::string> order(domain_order.begin(), domain_order.end());
    for (const auto& o : outcomes) {
        if (std::find(order.begin(), order.end(), o.domain_id) == order.end()) order.push_back(o.domain_id);
    }
    std::map<std::string, AccuracyRow> rows;
    for (const auto& o : outcomes) add_outcome(rows[o.domain_id], o);
    r.overall.domain_id = "Overall";
    for (const auto& d : order) {
        auto it = rows.find(d);
        if (it == rows.end()) continue;
        AccuracyRow row = it->second;
        row.domain_id = d;
        finish(row);
        r.overall.scenes += row.scenes;
        r.overall.samples += row.samples;
        r.overall.valid += row.valid;
        r.overall.invalid += row.invalid;
        r.overall.matched += row.matched;
        r.overall.scenes_without_valid += row.scenes_without_valid;
        r.domains.push_back(std::move(row));
    }
    finish(r.overall);
    r.scenes.assign(outcomes.begin(), outcomes.end());
    return r;
}

EvalRun evaluate_accuracy(std::span<const Scene> scenes, Gateway& gateway, const EvalOptions& options,
                          std::span<const std::string> domain_order) {
    if (options.samples_per_scene < 1) throw ConfigError("samples_per_scene must be >= 1");
    GenerationSettings settings = options.generation;
    settings.n_decisions = options.samples_per_scene;

    std::vector<SceneRun> runs(scenes.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= scenes.size()) return;
            {
                std::lock_guard lock(error_mu);
                if (error) return;
            }
            const Scene& scene = scenes[i];
            const auto seed = static_cast<std::int64_t>(derive_seed(options.seed, "eval/" + scene.scene_id) >> 1);
            try {
                try {
                    runs[i] = run_scene(scene, gateway, gateway.endpoint().role, options.mode, settings, seed,
                                        scene.domain_id);
                } catch (const PartialGeneration& p) {
                    runs[i] = score_samples(scene, gateway.endpoint().role, options.mode, p.samples(),
                                            settings.n_decisions, settings.floor_offset);
                }
            } catch (...) {
                std::lock_guard lock(error_mu);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(scenes.size())));
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);

    EvalRun out;
    std::vector<SceneOutcome> outcomes;
    outcomes.reserve(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        outcomes.push_back(outcome_from_run(scenes[i], runs[i]));
        for (auto& s : runs[i].samples) out.samples.push_back(std::move(s));
    }
    out.result = aggregate_accuracy(domain_order, outcomes, options.mode, options.samples_per_scene);
    return out;
}

// ---------------------------------------------------------------------------
// Factor analysis

namespace {

std::vector<FactorCount> sorted_counts(const std::map<std::string, std::pair<std::size_t, std::size_t>>& tally) {
    std::vector<FactorCount> out;
    for (const auto& [name, c] : tally) out.push_back({name, c.first, c.second, ratio(c.second, c.first)});
    std::stable_sort(out.begin(), out.end(), [](const FactorCount& a, const FactorCount& b) { return a.count > b.count; });
    return out;
}

}  // namespace

FactorStats extract_factors(std::span<const DecisionSample> samples) {
    FactorStats st;
    std::map<std::string, std::pair<std::size_t, std::size_t>> stim, know, style;
    std::vector<std::pair<std::size_t, bool>> lengths;
    for (const auto& s : samples) {
        if (!s.valid || !s.decision) continue;
        const auto& d = *s.decision;
        const bool m = s.matched_ground_truth;
        ++st.samples;
        if (!d.stimulus_factors.empty() || !d.knowledge_factors.empty()) ++st.samples_with_factors;
        for (const auto& f : d.stimulus_factors) {
            auto& c = stim[f];
            ++c.first;
            c.second += m ? 1 : 0;
            ++st.stimulus_citations;
        }
        for (const auto& f : d.knowledge_factors) {
            auto& c = know[f];
            ++c.first;
            c.second += m ? 1 : 0;
            ++st.knowledge_citations;
        }
        if (!d.evaluation_style.empty()) {
            auto& c = style[d.evaluation_style];
            ++c.first;
            c.second += m ? 1 : 0;
        }
        lengths.emplace_back(d.stimulus_text.size() + d.knowledge_text.size(), m);
    }
    st.stimulus = sorted_counts(stim);
    st.knowledge = sorted_counts(know);
    st.styles = sorted_counts(style);

    std::stable_sort(lengths.begin(), lengths.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    const std::size_t n = lengths.size();
    constexpr std::size_t kBuckets = 5;
    for (std::size_t b = 0; b < kBuckets && n > 0; ++b) {
        const std::size_t lo = b * n / kBuckets;
        const std::size_t hi = (b + 1) * n / kBuckets;
        LengthBucket bucket;
        bucket.index = b;
        bucket.samples = hi - lo;
        if (hi > lo) {
            bucket.min_length = lengths[lo].first;
            bucket.max_length = lengths[hi - 1].first;
        }
        for (std::size_t i = lo; i < hi; ++i) bucket.matched += lengths[i].second ? 1 : 0;
        bucket.accuracy = ratio(bucket.matched, bucket.samples);
        st.length_buckets.push_back(bucket);
    }
    return st;
}

namespace {

OrderedJson row_json(const AccuracyRow& r) {
    return {{"domain", r.domain_id},
            {"scenes", r.scenes},
            {"samples", r.samples},
            {"valid", r.valid},
            {"invalid", r.invalid},
            {"matched", r.matched},
            {"scenes_without_valid", r.scenes_without_valid},
            {"accuracy", r.accuracy},
            {"strict_accuracy", r.strict_accuracy}};
}

OrderedJson counts_json(const std::vector<FactorCount>& v) {
    OrderedJson out = OrderedJson::array();
    for (const auto& c : v) {
        out.push_back({{"name", c.name}, {"count", c.count}, {"matched", c.matched}, {"accuracy", c.accuracy}});
    }
    return out;
}

std::string format_row(const std::string& name, const AccuracyRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-16s %7zu %8zu %7zu %8zu %9.4f %9.4f\n", name.c_str(), r.scenes, r.samples,
                  r.valid, r.invalid, r.accuracy, r.strict_accuracy);
    return buf;
}

}  // namespace

OrderedJson eval_to_json(const EvalResult& r) {
    OrderedJson j;
    j["mode"] = r.mode == PromptVariant::Direct ? "direct" : "decision";
    j["samples_per_scene"] = r.samples_per_scene;
    OrderedJson domains = OrderedJson::array();
    for (const auto& d : r.domains) domains.push_back(row_json(d));
    j["domains"] = domains;
    j["overall"] = row_json(r.overall);
    OrderedJson flagged = OrderedJson::array();
    for (const auto& s : r.scenes) {
        if (s.no_valid_samples) flagged.push_back(s.scene_id);
    }
    j["scenes_without_valid_samples"] = flagged;
    OrderedJson scenes = OrderedJson::array();
    for (const auto& s : r.scenes) {
        OrderedJson outcomes = OrderedJson::array();
        for (const auto& o : s.outcomes) outcomes.push_back(o ? OrderedJson(*o) : OrderedJson(nullptr));
        scenes.push_back({{"scene_id", s.scene_id}, {"domain", s.domain_id}, {"outcomes", outcomes}});
    }
    j["scenes"] = scenes;
    return j;
}

OrderedJson factors_to_json(const FactorStats& s) {
    OrderedJson j;
    j["samples"] = s.samples;
    j["samples_with_factors"] = s.samples_with_factors;
    j["stimulus_citations"] = s.stimulus_citations;
    j["knowledge_citations"] = s.knowledge_citations;
    j["stimulus_factors"] = counts_json(s.stimulus);
    j["knowledge_factors"] = counts_json(s.knowledge);
    j["evaluation_styles"] = counts_json(s.styles);
    OrderedJson buckets = OrderedJson::array();
    for (const auto& b : s.length_buckets) {
        buckets.push_back({{"bucket", b.index},
                           {"min_length", b.min_length},
                           {"max_length", b.max_length},
                           {"samples", b.samples},
                           {"matched", b.matched},
                           {"accuracy", b.accuracy}});
    }
    j["length_buckets"] = buckets;
    return j;
}

std::string render_report(const EvalResult& r, const FactorStats& s) {
    std::string out;
    out += "Behavior prediction accuracy (";
    out += r.mode == PromptVariant::Direct ? "direct" : "decision";
    out += " mode, " + std::to_string(r.samples_per_scene) + " samples per scene)\n\n";
    char header[160];
    std::snprintf(header, sizeof header, "%-16s %7s %8s %7s %8s %9s %9s\n", "Domain", "Scenes", "Samples", "Valid",
                  "Invalid", "Accuracy", "Strict");
    out += header;
    for (const auto& d : r.domains) out += format_row(d.domain_id, d);
    out += format_row("Overall", r.overall);

    if (!s.empty()) {
        auto section = [&](const char* title, const std::vector<FactorCount>& counts) {
            out += "\n";
            out += title;
            out += "\n";
            for (const auto& c : counts) {
                char line[200];
                std::snprintf(line, sizeof line, "  %-36s %6zu %9.4f\n", c.name.c_str(), c.count, c.accuracy);
                out += line;
            }
        };
        section("Stimulus factors (count, accuracy)", s.stimulus);
        section("Knowledge factors (count, accuracy)", s.knowledge);
        section("Evaluation styles (count, accuracy)", s.styles);
        out += "\nStage text length quintiles (characters, samples, accuracy)\n";
        for (const auto& b : s.length_buckets) {
            char line[160];
            std::snprintf(line, sizeof line, "  Q%zu %6zu-%-6zu %6zu %9.4f\n", b.index + 1, b.min_length,
                          b.max_length, b.samples, b.accuracy);
            out += line;
        }
    }
    return out;
}

void write_report(const EvalResult& r, const FactorStats& s, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "eval.json", eval_to_json(r).dump(2) + "\n");
    write_file_atomic(dir / "factors.json", factors_to_json(s).dump(2) + "\n");
    write_file_atomic(dir / "summary.txt", render_report(r, s));
}

}  // namespace simdistill
