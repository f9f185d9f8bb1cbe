#include "simdistill/distill.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "simdistill/errors.hpp"

namespace simdistill {

std::string_view to_string(PairPolicy p) { return p == PairPolicy::Hardest ? "hardest" : "easiest"; }

PairPolicy pair_policy_from_string(std::string_view s) {
    if (s == "hardest") return PairPolicy::Hardest;
    if (s == "easiest") return PairPolicy::Easiest;
    throw ConfigError("pair_policy must be 'hardest' or 'easiest', got '" + std::string(s) + "'");
}

std::size_t DistillConfig::target_total() const {
    std::size_t total = 0;
    for (const auto& [_, q] : quotas) total += q;
    return total;
}

void DistillConfig::validate() const {
    if (quotas.empty()) throw ConfigError("distill quotas are empty");
    std::set<std::string> seen;
    for (const auto& [domain, q] : quotas) {
        if (q == 0) throw ConfigError("distill quota for '" + domain + "' must be positive");
        if (!seen.insert(domain).second) throw ConfigError("duplicate distill quota for '" + domain + "'");
    }
}

void rank_scenes(std::vector<CandidateScene>& scenes) {
    std::sort(scenes.begin(), scenes.end(), [](const CandidateScene& a, const CandidateScene& b) {
        if (a.delta_eu != b.delta_eu) return a.delta_eu > b.delta_eu;
        return a.scene_id < b.scene_id;
    });
}

std::map<int, std::size_t> allocate_strata(std::size_t quota, const std::map<int, std::size_t>& capacity) {
    std::map<int, std::size_t> share;
    std::vector<int> active;
    for (const auto& [slot, cap] : capacity) {
        share[slot] = 0;
        if (cap > 0) active.push_back(slot);
    }
    // Remainder order: most capacity first, then smaller slot count.
    std::stable_sort(active.begin(), active.end(),
                     [&](int a, int b) { return capacity.at(a) > capacity.at(b); });
    std::size_t remaining = quota;
    while (remaining > 0 && !active.empty()) {
        const std::size_t per = remaining / active.size();
        if (per == 0) {
            for (std::size_t i = 0; i < remaining; ++i) ++share[active[i]];
            remaining = 0;
            break;
        }
        for (int slot : active) {
            const std::size_t add = std::min(per, capacity.at(slot) - share[slot]);
            share[slot] += add;
            remaining -= add;
        }
        std::erase_if(active, [&](int slot) { return share[slot] == capacity.at(slot); });
    }
    return share;
}

RejectionOutcome reject_sample(std::span<const DecisionSample> strong) {
    RejectionOutcome out;
    for (std::size_t i = 0; i < strong.size(); ++i) {
        if (!strong[i].valid) continue;
        (strong[i].matched_ground_truth ? out.accepted : out.rejected).push_back(i);
    }
    out.discarded = out.accepted.empty();
    return out;
}

namespace {

double confidence_key(const DecisionSample& s) {
    return s.behavior.confidence_logprob.value_or(-std::numeric_limits<double>::infinity());
}

std::size_t pick(std::span<const DecisionSample> samples, const std::vector<std::size_t>& candidates, bool highest) {
    std::size_t best = candidates.front();
    for (std::size_t idx : candidates) {
        const double c = confidence_key(samples[idx]);
        const double b = confidence_key(samples[best]);
        if (highest ? c > b : c < b) best = idx;
    }
    return best;
}

}  // namespace

PairChoice select_pair(std::span<const DecisionSample> strong, const RejectionOutcome& outcome, PairPolicy policy) {
    if (outcome.accepted.empty()) throw ContractViolation("select_pair requires an accepted sample");
    PairChoice choice;
    choice.chosen = pick(strong, outcome.accepted, true);
    if (!outcome.rejected.empty()) {
        choice.rejected = pick(strong, outcome.rejected, policy == PairPolicy::Hardest);
    }
    return choice;
}

Selection select_training_scenes(std::vector<CandidateScene> candidates,
                                 const std::map<std::string, std::vector<DecisionSample>>& strong,
                                 const DistillConfig& config) {
    config.validate();
    Selection sel;

    for (const auto& [domain, quota] : config.quotas) {
        DomainReport report;
        report.domain_id = domain;
        report.quota = quota;

        std::map<int, std::vector<CandidateScene>> strata;
        for (const auto& c : candidates) {
            if (c.domain_id != domain) continue;
            if (strong.find(c.scene_id) == strong.end()) {
                ++sel.excluded_without_gap;
                continue;
            }
            strata[c.slot_count].push_back(c);
        }

        std::map<int, std::vector<RejectionOutcome>> outcomes;
        std::map<int, std::size_t> capacity;
        for (auto& [slot, list] : strata) {
            rank_scenes(list);
            std::size_t kept = 0;
            for (const auto& c : list) {
                outcomes[slot].push_back(reject_sample(strong.at(c.scene_id)));
                if (!outcomes[slot].back().discarded) ++kept;
            }
            capacity[slot] = config.backfill ? kept : list.size();
        }
        const auto shares = allocate_strata(quota, capacity);

        for (auto& [slot, list] : strata) {
            StratumReport sr;
            sr.slot_count = slot;
            sr.available = list.size();
            sr.share = shares.at(slot);
            for (const auto& o : outcomes[slot]) sr.kept += o.discarded ? 0 : 1;

            std::size_t considered = 0;
            for (std::size_t r = 0; r < list.size(); ++r) {
                if (config.backfill ? sr.selected == sr.share : considered == sr.share) break;
                ++considered;
                const auto& outcome = outcomes[slot][r];
                if (outcome.discarded) {
                    ++sr.discarded_skipped;
                    continue;
                }
                const auto& samples = strong.at(list[r].scene_id);
                const PairChoice pc = select_pair(samples, outcome, config.pair_policy);
                SelectedScene s;
                s.scene_id = list[r].scene_id;
                s.domain_id = domain;
                s.slot_count = slot;
                s.delta_eu = list[r].delta_eu;
                s.rank = r;
                s.chosen_sample = samples[pc.chosen].sample_index;
                s.chosen_confidence = samples[pc.chosen].behavior.confidence_logprob;
                if (pc.rejected) {
                    s.rejected_sample = samples[*pc.rejected].sample_index;
                    s.rejected_confidence = samples[*pc.rejected].behavior.confidence_logprob;
                    ++sr.pairs;
                }
                ++sr.selected;
                sel.scenes.push_back(std::move(s));
            }
            report.selected += sr.selected;
            report.pairs += sr.pairs;
            if (config.backfill && sr.discarded_skipped > 0) report.backfilled = true;
            report.strata.push_back(sr);
        }
        report.sft_only = report.selected - report.pairs;
        report.shortfall = quota > report.selected ? quota - report.selected : 0;
        sel.domains.push_back(std::move(report));
    }
    return sel;
}

namespace {

OrderedJson optional_json(const std::optional<double>& v) { return v ? OrderedJson(*v) : OrderedJson(nullptr); }

std::optional<double> optional_double(const Json& j) {
    return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

}  // namespace

OrderedJson selection_to_json(const Selection& s) {
    OrderedJson scenes = OrderedJson::array();
    for (const auto& x : s.scenes) {
        scenes.push_back({{"scene_id", x.scene_id},
                          {"domain", x.domain_id},
                          {"slot_count", x.slot_count},
                          {"delta_eu", x.delta_eu},
                          {"rank", x.rank},
                          {"chosen_sample", x.chosen_sample},
                          {"rejected_sample", x.rejected_sample ? OrderedJson(*x.rejected_sample) : OrderedJson()},
                          {"chosen_confidence", optional_json(x.chosen_confidence)},
                          {"rejected_confidence", optional_json(x.rejected_confidence)}});
    }
    OrderedJson domains = OrderedJson::array();
    for (const auto& d : s.domains) {
        OrderedJson strata = OrderedJson::array();
        for (const auto& st : d.strata) {
            strata.push_back({{"slot_count", st.slot_count},
                              {"available", st.available},
                              {"kept", st.kept},
                              {"share", st.share},
                              {"selected", st.selected},
                              {"pairs", st.pairs},
                              {"discarded_skipped", st.discarded_skipped}});
        }
        domains.push_back({{"domain", d.domain_id},
                           {"quota", d.quota},
                           {"selected", d.selected},
                           {"pairs", d.pairs},
                           {"sft_only", d.sft_only},
                           {"shortfall", d.shortfall},
                           {"backfilled", d.backfilled},
                           {"strata", strata}});
    }
    return {{"scenes", scenes}, {"domains", domains}, {"excluded_without_gap", s.excluded_without_gap}};
}

Selection selection_from_json(const Json& j) {
    Selection s;
    for (const auto& x : j.at("scenes")) {
        SelectedScene sc;
        sc.scene_id = x.at("scene_id").get<std::string>();
        sc.domain_id = x.at("domain").get<std::string>();
        sc.slot_count = x.at("slot_count").get<int>();
        sc.delta_eu = x.at("delta_eu").get<double>();
        sc.rank = x.at("rank").get<std::size_t>();
        sc.chosen_sample = x.at("chosen_sample").get<int>();
        if (!x.at("rejected_sample").is_null()) sc.rejected_sample = x.at("rejected_sample").get<int>();
        sc.chosen_confidence = optional_double(x.at("chosen_confidence"));
        sc.rejected_confidence = optional_double(x.at("rejected_confidence"));
        s.scenes.push_back(std::move(sc));
    }
    for (const auto& d : j.at("domains")) {
        DomainReport r;
        r.domain_id = d.at("domain").get<std::string>();
        r.quota = d.at("quota").get<std::size_t>();
        r.selected = d.at("selected").get<std::size_t>();
        r.pairs = d.at("pairs").get<std::size_t>();
        r.sft_only = d.at("sft_only").get<std::size_t>();
        r.shortfall = d.at("shortfall").get<std::size_t>();
        r.backfilled = d.at("backfilled").get<bool>();
        for (const auto& st : d.at("strata")) {
            StratumReport sr;
            sr.slot_count = st.at("slot_count").get<int>();
            sr.available = st.at("available").get<std::size_t>();
            sr.kept = st.at("kept").get<std::size_t>();
            sr.share = st.at("share").get<std::size_t>();
            sr.selected = st.at("selected").get<std::size_t>();
            sr.pairs = st.at("pairs").get<std::size_t>();
            sr.discarded_skipped = st.at("discarded_skipped").get<std::size_t>();
            r.strata.push_back(sr);
        }
        s.domains.push_back(std::move(r));
    }
    s.excluded_without_gap = j.at("excluded_without_gap").get<std::size_t>();
    return s;
}

namespace {

const DecisionSample& find_sample(const std::vector<DecisionSample>& samples, int index, const std::string& scene_id) {
    for (const auto& s : samples) {
        if (s.sample_index == index) return s;
    }
    throw ContractViolation("scene " + scene_id + " has no sample " + std::to_string(index));
}

char reparsed_label(const DecisionSample& s, int slot_count) {
    auto parsed = parse_decision(s.raw_text, slot_count, s.mode);
    if (auto* f = std::get_if<ParseFailure>(&parsed)) {
        throw ContractViolation("selected sample of " + s.scene_id + " no longer parses (" +
                                std::string(to_string(f->reason)) + ")");
    }
    return std::get<ParsedOutput>(parsed).label;
}

}  // namespace

DatasetFiles render_dataset(const Selection& selection, const std::map<std::string, Scene>& scenes,
                            const std::map<std::string, std::vector<DecisionSample>>& strong,
                            const DistillConfig& config, const std::string& config_hash) {
    DatasetFiles files;
    std::map<std::string, std::pair<std::size_t, std::size_t>> emitted;  // domain -> (sft, dpo)
    for (const auto& sel : selection.scenes) {
        auto scene_it = scenes.find(sel.scene_id);
        auto samples_it = strong.find(sel.scene_id);
        if (scene_it == scenes.end() || samples_it == strong.end()) {
            throw ContractViolation("selected scene " + sel.scene_id + " is missing from the inputs");
        }
        const Scene& scene = scene_it->second;
        const auto& chosen = find_sample(samples_it->second, sel.chosen_sample, sel.scene_id);
        if (reparsed_label(chosen, scene.exposure.slot_count) != scene.ground_truth_label) {
            throw ContractViolation("chosen completion of " + sel.scene_id + " does not match the ground truth");
        }
        OrderedJson meta{{"domain", sel.domain_id}, {"scene_id", sel.scene_id}};

        OrderedJson sft;
        sft["prompt"] = scene.prompt_text;
        sft["completion"] = chosen.raw_text;
        sft["meta"] = meta;
        files.sft_jsonl += sft.dump() + "\n";
        ++emitted[sel.domain_id].first;

        if (sel.rejected_sample) {
            const auto& rejected = find_sample(samples_it->second, *sel.rejected_sample, sel.scene_id);
            if (reparsed_label(rejected, scene.exposure.slot_count) == scene.ground_truth_label) {
                throw ContractViolation("rejected completion of " + sel.scene_id + " matches the ground truth");
            }
            OrderedJson dpo;
            dpo["prompt"] = scene.prompt_text;
            dpo["chosen"] = chosen.raw_text;
            dpo["rejected"] = rejected.raw_text;
            OrderedJson pair_meta = meta;
            pair_meta["chosen_confidence"] = optional_json(sel.chosen_confidence);
            pair_meta["rejected_confidence"] = optional_json(sel.rejected_confidence);
            dpo["meta"] = pair_meta;
            files.dpo_jsonl += dpo.dump() + "\n";
            ++emitted[sel.domain_id].second;
        }
    }

    OrderedJson manifest;
    manifest["config_hash"] = config_hash;
    manifest["seed"] = config.seed;
    manifest["pair_policy"] = to_string(config.pair_policy);
    manifest["backfill"] = config.backfill;
    manifest["target_total"] = config.target_total();
    std::size_t sft_total = 0;
    std::size_t dpo_total = 0;
    OrderedJson domains = OrderedJson::array();
    const OrderedJson sel_json = selection_to_json(selection);
    for (const auto& d : sel_json.at("domains")) {
        OrderedJson row = d;
        const auto counts = emitted[d.at("domain").get<std::string>()];
        row["sft_rows"] = counts.first;
        row["dpo_rows"] = counts.second;
        sft_total += counts.first;
        dpo_total += counts.second;
        domains.push_back(std::move(row));
    }
    manifest["domains"] = domains;
    manifest["totals"] = {{"sft_rows", sft_total}, {"dpo_rows", dpo_total}, {"sft_only", sft_total - dpo_total}};
    manifest["excluded_without_gap"] = selection.excluded_without_gap;
    files.manifest_json = manifest.dump(2) + "\n";
    return files;
}

void write_dataset(const DatasetFiles& files, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "sft.jsonl", files.sft_jsonl);
    write_file_atomic(dir / "dpo.jsonl", files.dpo_jsonl);
    write_file_atomic(dir / "manifest.json", files.manifest_json);
}

}  // namespace simdistill
