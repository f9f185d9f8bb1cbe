// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Timings are wall clock on the in-process mock.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "helpers.hpp"
#include "simdistill/decision.hpp"
#include "simdistill/distill.hpp"
#include "simdistill/evaluate.hpp"
#include "simdistill/mock_llm.hpp"
#include "simdistill/pipeline.hpp"
#include "simdistill/rng.hpp"
#include "simdistill/scene.hpp"
#include "simdistill/uncertainty.hpp"

using namespace simdistill;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

ModelEndpoint mock_endpoint(const std::string& model, EndpointRole role) {
    ModelEndpoint e;
    e.base_url = "mock://";
    e.model_name = model;
    e.role = role;
    return e;
}

GatewayOptions fast_gateway(int concurrency = 8) {
    GatewayOptions o;
    o.concurrency = concurrency;
    o.retry.base_delay = std::chrono::milliseconds(1);
    return o;
}

// Criterion 1 ----------------------------------------------------------------

Outcome kernel_properties() {
    Outcome out;
    const auto t0 = Clock::now();
    Rng rng(20241015);
    double worst_additivity = 0.0;
    double min_aleatoric = 0.0;
    double worst_excess = -1.0;
    for (int trial = 0; trial < 10000; ++trial) {
        const auto k = static_cast<std::size_t>(rng.uniform_int(2, 13));
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, 10));
        std::vector<ActionDistribution> e(n);
        for (auto& d : e) {
            d.probabilities.resize(k);
            double sum = 0.0;
            const bool sparse = rng.uniform01() < 0.3;
            for (auto& x : d.probabilities) {
                x = sparse && rng.uniform01() < 0.5 ? 0.0 : -std::log(1.0 - rng.uniform01());
                sum += x;
            }
            if (sum == 0.0) {
                d.probabilities[rng.uniform_index(k)] = sum = 1.0;
            }
            for (auto& x : d.probabilities) x /= sum;
        }
        const auto r = decompose(e);
        const double lnk = std::log(static_cast<double>(k));
        worst_additivity = std::max(worst_additivity, std::abs(r.total - (r.aleatoric + r.epistemic)));
        min_aleatoric = std::min(min_aleatoric, r.aleatoric);
        worst_excess = std::max({worst_excess, r.total - lnk, r.aleatoric - lnk, r.epistemic - lnk});
    }
    const double secs = seconds_since(t0);
    out.require(worst_additivity <= 1e-9, "additivity error " + fmt("%.3g", worst_additivity));
    out.require(min_aleatoric >= -1e-12, "aleatoric " + fmt("%.3g", min_aleatoric));
    out.require(worst_excess <= 1e-9, "exceeds ln k by " + fmt("%.3g", worst_excess));
    out.require(secs < 5.0, "runtime " + fmt("%.2f s", secs));
    if (out.pass) {
        out.detail = "10000 ensembles, max |T-(A+E)| " + fmt("%.2g", worst_additivity) + ", min A " +
                     fmt("%.2g", min_aleatoric) + ", " + fmt("%.2f s", secs);
    }
    return out;
}

// Criterion 2 ----------------------------------------------------------------

Outcome oracle_equivalence() {
    Outcome out;
    const Json fx = testing::load_fixture("uncertainty_oracle.json");
    double worst = 0.0;
    std::vector<CandidateScene> ranked;
    for (const auto& s : fx["scenes"]) {
        auto ensemble = [](const Json& rows) {
            std::vector<ActionDistribution> e;
            for (const auto& r : rows) e.push_back({r.get<std::vector<double>>()});
            return e;
        };
        const auto gap = epistemic_gap(ensemble(s["weak"]), ensemble(s["strong"]), s["scene_id"].get<std::string>());
        const auto& want = s["expected"];
        for (const auto& [name, got] : {std::pair{"weak", gap.weak}, std::pair{"strong", gap.strong}}) {
            worst = std::max({worst, std::abs(got.total - want[name]["total"].get<double>()),
                              std::abs(got.aleatoric - want[name]["aleatoric"].get<double>()),
                              std::abs(got.epistemic - want[name]["epistemic"].get<double>())});
        }
        worst = std::max(worst, std::abs(gap.delta_eu - want["delta_eu"].get<double>()));
        ranked.push_back({gap.scene_id, "d", s["k"].get<int>() - 1, gap.delta_eu});
    }
    rank_scenes(ranked);
    std::vector<std::string> got;
    for (const auto& c : ranked) got.push_back(c.scene_id);
    const auto want = fx["ranking"].get<std::vector<std::string>>();
    out.require(fx["scenes"].size() == 200, "fixture size");
    out.require(worst <= 1e-9, "max deviation " + fmt("%.3g", worst));
    out.require(got == want, "ranking differs from brute force");
    if (out.pass) out.detail = "200 scenes, max deviation " + fmt("%.2g", worst) + ", ranking identical";
    return out;
}

// Criterion 3 ----------------------------------------------------------------

Outcome weak_vs_strong() {
    Outcome out;
    const auto t0 = Clock::now();
    MockScript script;
    MockPolicy strong;
    strong.kind = MockPolicy::Kind::Logits;
    strong.spread = 2.0;
    strong.noise = 0.3;
    strong.temperature = 0.5;
    MockPolicy weak = strong;
    weak.noise = 1.0;
    weak.temperature = 3.0;
    script.model_policies = {{"strong-sim", strong}, {"weak-sim", weak}};
    auto engine = std::make_shared<MockLlm>(script);
    Gateway gs(mock_endpoint("strong-sim", EndpointRole::Strong), make_mock_transport(engine), fast_gateway());
    Gateway gw(mock_endpoint("weak-sim", EndpointRole::Weak), make_mock_transport(engine), fast_gateway());

    Rng rng(3);
    std::vector<Scene> scenes;
    for (int i = 0; i < 500; ++i) {
        const int slots = static_cast<int>(rng.uniform_int(2, 12));
        scenes.push_back(testing::toy_scene("syn" + std::to_string(i), "synthetic", slots,
                                            static_cast<char>('A' + rng.uniform_index(slots + 1))));
    }
    std::vector<double> deltas(scenes.size());
    std::vector<double> weak_e(scenes.size());
    std::vector<double> strong_e(scenes.size());
    std::atomic<std::size_t> next{0};
    std::atomic<int> unusable{0};
    std::vector<std::thread> pool;
    GenerationSettings settings;
    for (int t = 0; t < 8; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < scenes.size();) {
                const auto s = run_scene(scenes[i], gs, EndpointRole::Strong, PromptVariant::Decision, settings,
                                         static_cast<std::int64_t>(2 * i));
                const auto w = run_scene(scenes[i], gw, EndpointRole::Weak, PromptVariant::Decision, settings,
                                         static_cast<std::int64_t>(2 * i + 1));
                if (s.unusable() || w.unusable()) {
                    ++unusable;
                    continue;
                }
                const auto gap = epistemic_gap(w.ensemble(), s.ensemble(), scenes[i].scene_id);
                deltas[i] = gap.delta_eu;
                weak_e[i] = gap.weak.epistemic;
                strong_e[i] = gap.strong.epistemic;
            }
        });
    }
    for (auto& t : pool) t.join();
    const double secs = seconds_since(t0);
    double mw = 0.0;
    double ms = 0.0;
    std::size_t positive = 0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        mw += weak_e[i];
        ms += strong_e[i];
        positive += deltas[i] > 0.0;
    }
    mw /= static_cast<double>(scenes.size());
    ms /= static_cast<double>(scenes.size());
    const double frac = static_cast<double>(positive) / static_cast<double>(scenes.size());
    out.require(unusable == 0, std::to_string(unusable.load()) + " scenes without valid samples");
    out.require(mw > ms, "mean weak " + fmt("%.4f", mw) + " <= mean strong " + fmt("%.4f", ms));
    out.require(frac >= 0.8, "positive gap fraction " + fmt("%.3f", frac));
    out.require(secs < 10.0, "runtime " + fmt("%.2f s", secs));
    if (out.pass) {
        out.detail = "500 scenes, mean weak EU " + fmt("%.3f", mw) + " > strong " + fmt("%.3f", ms) + ", " +
                     fmt("%.1f%%", 100 * frac) + " positive, " + fmt("%.2f s", secs);
    }
    return out;
}

// Criterion 4 ----------------------------------------------------------------

Outcome exposure_invariants() {
    Outcome out;
    const auto t0 = Clock::now();
    StrategyScores lists;
    for (int i = 0; i < 64; ++i) {
        lists.random.push_back("r" + std::to_string(i));
        lists.collaborative.push_back("c" + std::to_string(i));
        lists.content.push_back("e" + std::to_string(i));
    }
    SceneBuildConfig cfg;  // slot range [2, 12]
    std::map<int, int> n_counts;
    std::map<Strategy, long> strategy_counts;
    long total_slots = 0;
    int bad = 0;
    for (int i = 0; i < 10000; ++i) {
        Rng rng(derive_seed(11, "build/" + std::to_string(i)));
        const int n = draw_slot_count(cfg, rng);
        ++n_counts[n];
        const auto list = build_exposure_list(lists, "truth", n, rng);
        std::set<std::string> ids;
        int truth = 0;
        for (const auto& item : list.items) {
            ids.insert(item.item_id);
            if (item.item_id == "truth") {
                ++truth;
            } else {
                ++strategy_counts[item.source];
                ++total_slots;
            }
        }
        if (truth != 1 || ids.size() != list.items.size() || list.items.size() != static_cast<std::size_t>(n + 1)) {
            ++bad;
        }
    }
    const double expected = 10000.0 / 11.0;
    double chi2 = 0.0;
    for (int n = 2; n <= 12; ++n) {
        const double d = n_counts[n] - expected;
        chi2 += d * d / expected;
    }
    const boost::math::chi_squared dist(10);
    const double p = boost::math::cdf(boost::math::complement(dist, chi2));
    const double third = static_cast<double>(total_slots) / 3.0;
    const double sigma = std::sqrt(static_cast<double>(total_slots) * (1.0 / 3.0) * (2.0 / 3.0));
    double worst_z = 0.0;
    for (Strategy s : {Strategy::Random, Strategy::Collaborative, Strategy::Content}) {
        worst_z = std::max(worst_z, std::abs(static_cast<double>(strategy_counts[s]) - third) / sigma);
    }
    const double secs = seconds_since(t0);
    out.require(bad == 0, std::to_string(bad) + " malformed lists");
    out.require(n_counts.begin()->first >= 2 && n_counts.rbegin()->first <= 12, "N outside [2, 12]");
    out.require(p > 0.001, "chi-square p " + fmt("%.3g", p));
    out.require(worst_z <= 3.0, "strategy share off by " + fmt("%.2f sigma", worst_z));
    out.require(secs < 10.0, "runtime " + fmt("%.2f s", secs));
    if (out.pass) {
        out.detail = "10000 builds, N chi2=" + fmt("%.2f", chi2) + " (p=" + fmt("%.3f", p) +
                     "), worst strategy deviation " + fmt("%.2f sigma", worst_z) + ", " + fmt("%.2f s", secs);
    }
    return out;
}

// Criterion 5 ----------------------------------------------------------------

Outcome rejection_sampling() {
    Outcome out;
    // Nine scenes: three each with 0/10, 3/10 and 10/10 strong samples matching.
    std::vector<Scene> scenes;
    std::map<std::string, int> hits;
    MockScript script;
    script.unscripted_404 = true;
    for (int i = 0; i < 9; ++i) {
        const int h = (i % 3 == 0) ? 0 : (i % 3 == 1 ? 3 : 10);
        const char truth = static_cast<char>('A' + i % 4);
        const char miss = truth == 'A' ? 'B' : 'A';
        auto scene = testing::toy_scene("rs" + std::to_string(i), "movies", 3, truth);
        std::vector<ScriptedCompletion> completions;
        for (int j = 0; j < 10; ++j) {
            const char label = j < h ? truth : miss;
            const double p = 0.5 + 0.04 * j;
            completions.push_back({testing::decision_text(std::string("Behavior: [") + label + "]"),
                                   {{label, std::log(p)}, {label == 'C' ? 'D' : 'C', std::log(1.0 - p)}}});
        }
        script.responses[prompt_fingerprint(scene.prompt_text)] = completions;
        hits[scene.scene_id] = h;
        scenes.push_back(std::move(scene));
    }
    auto engine = std::make_shared<MockLlm>(script);
    Gateway gw(mock_endpoint("strong-sim", EndpointRole::Strong), make_mock_transport(engine), fast_gateway());
    std::map<std::string, std::vector<DecisionSample>> strong;
    std::map<std::string, Scene> by_id;
    std::vector<CandidateScene> candidates;
    GenerationSettings settings;
    for (const auto& s : scenes) {
        auto run = run_scene(s, gw, EndpointRole::Strong, PromptVariant::Decision, settings, 0);
        strong[s.scene_id] = run.samples;
        candidates.push_back({s.scene_id, s.domain_id, s.exposure.slot_count, 1.0});
        by_id.emplace(s.scene_id, s);
    }
    DistillConfig cfg;
    cfg.quotas = {{"movies", 9}};
    const auto sel = select_training_scenes(candidates, strong, cfg);
    std::set<std::string> selected;
    std::set<std::string> paired;
    for (const auto& s : sel.scenes) {
        selected.insert(s.scene_id);
        if (s.rejected_sample) paired.insert(s.scene_id);
    }
    for (const auto& [id, h] : hits) {
        out.require((selected.count(id) == 0) == (h == 0), id + " discard mismatch");
        out.require((paired.count(id) == 1) == (h > 0 && h < 10), id + " pair mismatch");
    }
    const auto files = render_dataset(sel, by_id, strong, cfg, "acceptance");
    std::istringstream dpo(files.dpo_jsonl);
    int pairs = 0;
    for (std::string line; std::getline(dpo, line);) {
        const auto row = Json::parse(line);
        const auto& scene = by_id.at(row["meta"]["scene_id"].get<std::string>());
        const auto c = parse_decision(row["chosen"].get<std::string>(), scene.exposure.slot_count);
        const auto r = parse_decision(row["rejected"].get<std::string>(), scene.exposure.slot_count);
        out.require(std::holds_alternative<ParsedOutput>(c) &&
                        std::get<ParsedOutput>(c).label == scene.ground_truth_label,
                    "chosen does not verify for " + scene.scene_id);
        out.require(std::holds_alternative<ParsedOutput>(r) &&
                        std::get<ParsedOutput>(r).label != scene.ground_truth_label,
                    "rejected does not verify for " + scene.scene_id);
        ++pairs;
    }
    out.require(pairs == 3, std::to_string(pairs) + " pairs instead of 3");
    if (out.pass) {
        out.detail = "3 discarded (0/10), 3 pairs (3/10), 3 SFT-only (10/10); every pair re-parses";
    }
    return out;
}

// Criterion 6 ----------------------------------------------------------------

Outcome parser_golden() {
    Outcome out;
    const auto golden = parse_decision(read_file(testing::fixture("parser_golden.txt")), 4);
    const auto* g = std::get_if<ParsedOutput>(&golden);
    out.require(g != nullptr, "golden output failed to parse");
    if (g != nullptr) {
        out.require(g->label == 'B', "behavior is not B");
        out.require(g->decision && g->decision->evaluation_style == "Logical", "style is not Logical");
        out.require(g->decision && !g->decision->stimulus_text.empty() && !g->decision->knowledge_text.empty() &&
                        !g->decision->evaluation_text.empty(),
                    "missing stage text");
    }
    for (const char* variant : {"Behavior: [B]", "Behavior: B."}) {
        const auto r = parse_decision(testing::decision_text(variant), 4);
        const auto* p = std::get_if<ParsedOutput>(&r);
        out.require(p != nullptr && p->label == 'B', std::string("variant '") + variant + "' differs");
    }
    const auto bad = parse_decision(testing::decision_text("Behavior: [G]"), 4);
    const auto* f = std::get_if<ParseFailure>(&bad);
    out.require(f != nullptr && f->reason == ParseFailureReason::OutOfRange, "out-of-range letter accepted");
    if (out.pass) out.detail = "style Logical, behavior B; [B] and B. agree; [G] -> out_of_range";
    return out;
}

// Criterion 7 ----------------------------------------------------------------

Outcome evaluation_protocol() {
    Outcome out;
    const auto t0 = Clock::now();
    std::vector<Scene> scenes;
    MockScript oracle_script;
    oracle_script.default_policy.kind = MockPolicy::Kind::Oracle;
    Rng rng(5);
    for (int i = 0; i < 5120; ++i) {
        scenes.push_back(testing::toy_scene("ev" + std::to_string(i), i % 2 ? "news" : "movies", 4,
                                            static_cast<char>('A' + rng.uniform_index(5))));
        oracle_script.answers[prompt_fingerprint(scenes.back().prompt_text)] = scenes.back().ground_truth_label;
    }
    EvalOptions opts;
    opts.seed = 9;
    opts.samples_per_scene = 5;

    const std::vector<Scene> oracle_scenes(scenes.begin(), scenes.begin() + 512);
    Gateway oracle(mock_endpoint("oracle", EndpointRole::Eval), make_mock_transport(std::make_shared<MockLlm>(oracle_script)),
                   fast_gateway());
    const auto o = evaluate_accuracy(oracle_scenes, oracle, opts);

    Gateway uniform(mock_endpoint("uniform", EndpointRole::Eval), make_mock_transport(std::make_shared<MockLlm>()),
                    fast_gateway());
    const auto u = evaluate_accuracy(scenes, uniform, opts);
    const double secs = seconds_since(t0);
    const double acc = u.result.overall.accuracy;
    out.require(o.result.overall.accuracy == 1.0, "oracle accuracy " + fmt("%.4f", o.result.overall.accuracy));
    out.require(u.result.overall.valid == 25600, "uniform valid samples " + std::to_string(u.result.overall.valid));
    out.require(std::abs(acc - 0.20) <= 0.01, "uniform accuracy " + fmt("%.4f", acc));
    out.require(secs < 120.0, "runtime " + fmt("%.1f s", secs));
    if (out.pass) {
        out.detail = "oracle 1.000 on 512 scenes, uniform " + fmt("%.4f", acc) + " over 5120 x 5, " +
                     fmt("%.1f s", secs);
    }
    return out;
}

// Criterion 8 ----------------------------------------------------------------

Outcome end_to_end(const std::filesystem::path& work) {
    Outcome out;
    const auto t0 = Clock::now();
    const auto cfg_path = testing::fixture("e2e/pipeline.json");
    std::vector<std::filesystem::path> runs = {work / "run-a", work / "run-b"};
    for (const auto& dir : runs) {
        std::filesystem::remove_all(dir);
        RunLock lock(dir);
        Pipeline p(PipelineConfig::load(cfg_path), dir);
        for (Stage s : kAllStages) {
            if (s != Stage::Eval) p.run_stage(s);
        }
    }
    const double secs = seconds_since(t0);
    for (const char* f : {"sft.jsonl", "dpo.jsonl", "manifest.json"}) {
        out.require(read_file(runs[0] / "dataset" / f) == read_file(runs[1] / "dataset" / f),
                    std::string(f) + " differs between runs");
    }
    const auto config = PipelineConfig::load(cfg_path);
    const auto manifest = Json::parse(read_file(runs[0] / "dataset/manifest.json"));
    std::size_t scenes = 0;
    for (const auto& line : read_jsonl(runs[0] / "scenes.jsonl")) scenes += line.is_object();
    out.require(scenes == 64, std::to_string(scenes) + " scenes instead of 64");
    out.require(manifest["domains"].size() == 2, "domain count");
    std::map<std::string, std::size_t> sft_rows;
    std::size_t total_rows = 0;
    for (const auto& row : read_jsonl(runs[0] / "dataset/sft.jsonl")) {
        ++sft_rows[row.at("meta").at("domain").get<std::string>()];
        ++total_rows;
    }
    out.require(manifest.at("totals").at("sft_rows").get<std::size_t>() == total_rows, "manifest sft_rows total");
    std::size_t i = 0;
    std::string counts;
    for (const auto& [domain, quota] : config.quotas) {
        const auto& row = manifest.at("domains").at(i++);
        out.require(row.at("domain") == domain, "domain order");
        const auto selected = row.at("selected").get<std::size_t>();
        out.require(selected == quota && sft_rows[domain] == quota,
                    domain + " selected " + std::to_string(selected) + ", " + std::to_string(sft_rows[domain]) +
                        " SFT rows, quota " + std::to_string(quota));
        counts += (counts.empty() ? "" : ", ") + domain + " " + std::to_string(selected) + "/" + std::to_string(quota);
    }
    out.require(secs < 60.0, "runtime " + fmt("%.1f s", secs));
    if (out.pass) {
        out.detail = "2 domains, 64 scenes, two runs byte-identical, quotas met (" + counts + "), " +
                     fmt("%.1f s", secs);
    }
    return out;
}

// Criterion 9 ----------------------------------------------------------------

bool round_trips(const std::string& line) { return OrderedJson::parse(line).dump() == line; }

std::vector<std::string> keys_of(const OrderedJson& j) {
    std::vector<std::string> out;
    for (auto it = j.begin(); it != j.end(); ++it) out.push_back(it.key());
    return out;
}

Outcome schemas(const std::filesystem::path& work) {
    Outcome out;
    const auto dir = work / "run-a";
    const std::vector<std::pair<std::string, std::vector<std::string>>> files = {
        {"dataset/sft.jsonl", {"prompt", "completion", "meta"}},
        {"dataset/dpo.jsonl", {"prompt", "chosen", "rejected", "meta"}},
        {"scenes.jsonl", {}},
        {"decisions.jsonl", {}},
        {"uncertainty.jsonl", {}},
    };
    std::size_t rows = 0;
    for (const auto& [name, keys] : files) {
        if (!std::filesystem::exists(dir / name)) {
            out.require(false, name + " missing");
            continue;
        }
        std::istringstream in(read_file(dir / name));
        for (std::string line; std::getline(in, line);) {
            ++rows;
            if (!round_trips(line)) {
                out.require(false, name + " row does not round-trip");
                break;
            }
            if (!keys.empty() && keys_of(OrderedJson::parse(line)) != keys) {
                out.require(false, name + " row has unexpected keys");
                break;
            }
        }
    }
    std::istringstream scenes(read_file(dir / "scenes.jsonl"));
    for (std::string line; std::getline(scenes, line);) {
        if (scene_to_json(scene_from_json(OrderedJson::parse(line))).dump() != line) {
            out.require(false, "scene record does not survive a typed round trip");
            break;
        }
    }
    std::istringstream decisions(read_file(dir / "decisions.jsonl"));
    for (std::string line; std::getline(decisions, line);) {
        if (decision_sample_to_json(decision_sample_from_json(Json::parse(line))).dump() != line) {
            out.require(false, "decision record does not survive a typed round trip");
            break;
        }
    }
    const auto manifest_text = read_file(dir / "dataset/manifest.json");
    out.require(OrderedJson::parse(manifest_text).dump(2) + "\n" == manifest_text, "manifest does not round-trip");
    const auto sel_text = read_file(dir / "selection.json");
    out.require(selection_to_json(selection_from_json(Json::parse(sel_text))).dump(2) + "\n" == sel_text,
                "selection does not round-trip");
    if (out.pass) {
        out.detail = std::to_string(rows) +
                     " rows round-trip byte-exactly. Not reproduced at desk scale: accuracies of fine-tuned "
                     "simulators, downstream recommender metric lifts and the dataset-size curve, which need "
                     "model fine-tuning and recommender retraining";
    }
    return out;
}

}  // namespace

int main() {
    testing::TempDir work("acceptance");
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"uncertainty kernel properties", kernel_properties},
        {"oracle equivalence of decomposition and gap ranking", oracle_equivalence},
        {"weak model shows higher epistemic uncertainty", weak_vs_strong},
        {"exposure list invariants", exposure_invariants},
        {"rejection sampling and pair verification", rejection_sampling},
        {"parser golden output", parser_golden},
        {"evaluation protocol accuracy", evaluation_protocol},
        {"end-to-end determinism and quotas", [&] { return end_to_end(work.path()); }},
        {"output schemas round-trip; non-reproducible results stated", [&] { return schemas(work.path()); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("threw: ") + e.what();
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << (i + 1) << ": " << criteria[i].first << " -- "
                  << o.detail << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed == 0 ? 0 : 1;
}
