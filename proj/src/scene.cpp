#include "simdistill/scene.hpp"

#include <algorithm>
#include <deque>
#include <sstream>
#include <unordered_set>

#include "simdistill/errors.hpp"

namespace simdistill {

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::Random: return "random";
        case Strategy::Collaborative: return "collaborative";
        case Strategy::Content: return "content";
        case Strategy::GroundTruth: return "ground_truth";
        case Strategy::Logged: return "logged";
    }
    return "unknown";
}

Strategy strategy_from_string(std::string_view s) {
    if (s == "random") return Strategy::Random;
    if (s == "collaborative") return Strategy::Collaborative;
    if (s == "content") return Strategy::Content;
    if (s == "ground_truth") return Strategy::GroundTruth;
    if (s == "logged") return Strategy::Logged;
    throw ContractViolation("unknown exposure strategy '" + std::string(s) + "'");
}

UserMemory render_memory(const UserProfile* profile, std::span<const InteractionRecord> history,
                         const Catalog& catalog, const DomainTemplate& tmpl, std::int64_t reference_time,
                         std::size_t history_cap) {
    UserMemory memory;
    if (profile != nullptr && !tmpl.profile.empty()) {
        memory.profile_text = fill_template(tmpl.profile, [&](std::string_view key) {
            return profile->attributes.find(key);
        });
    }
    const std::size_t first = history.size() > history_cap ? history.size() - history_cap : 0;
    const char* separator = tmpl.history.find('\n') == std::string::npos ? "\n" : "\n\n";
    for (std::size_t i = first; i < history.size(); ++i) {
        const auto& record = history[i];
        const auto* item = catalog.find(record.item_id);
        const std::string time_diff = relative_time_phrase(reference_time - record.timestamp);
        auto entry = fill_template(tmpl.history, [&](std::string_view key) -> const std::string* {
            if (key == "time_diff") return &time_diff;
            if (const auto* v = record.behavior.find(key)) return v;
            if (item != nullptr) return item->attributes.find(key);
            return nullptr;
        });
        if (i != first) memory.history_text += separator;
        memory.history_text += entry;
    }
    return memory;
}

std::string render_item(const ItemCatalogEntry& item, const DomainTemplate& tmpl) {
    return fill_template(tmpl.exposure, [&](std::string_view key) { return item.attributes.find(key); });
}

namespace {

void assign_labels(ExposureList& list) {
    for (std::size_t i = 0; i < list.items.size(); ++i) {
        list.items[i].label = option_label(i);
    }
}

void insert_ground_truth(ExposureList& list, const std::string& ground_truth, Rng& rng) {
    const auto p = static_cast<std::size_t>(rng.uniform_index(list.items.size() + 1));
    list.items.insert(list.items.begin() + static_cast<std::ptrdiff_t>(p),
                      ExposureItem{ground_truth, 'A', {}, Strategy::GroundTruth});
    list.ground_truth_index = p;
    list.slot_count = static_cast<int>(list.items.size()) - 1;
    assign_labels(list);
}

}  // namespace

ExposureList build_exposure_list(const StrategyScores& lists, const std::string& ground_truth, int slot_count,
                                 Rng& rng) {
    if (slot_count < 1 || static_cast<std::size_t>(slot_count) + 1 > kMaxOptions) {
        throw ContractViolation("slot count must lie in [1, " + std::to_string(kMaxOptions - 1) + "]");
    }
    std::unordered_set<std::string> distinct;
    for (const auto* l : {&lists.content, &lists.collaborative, &lists.random}) {
        for (const auto& id : *l) {
            if (id != ground_truth) distinct.insert(id);
        }
    }
    if (distinct.size() < static_cast<std::size_t>(slot_count)) {
        throw ScenePoolExhausted("need " + std::to_string(slot_count) + " distinct candidates, have " +
                                 std::to_string(distinct.size()));
    }

    struct Source {
        std::deque<std::string> items;
        Strategy strategy;
    };
    std::vector<Source> pool;
    pool.push_back({{lists.content.begin(), lists.content.end()}, Strategy::Content});
    pool.push_back({{lists.collaborative.begin(), lists.collaborative.end()}, Strategy::Collaborative});
    pool.push_back({{lists.random.begin(), lists.random.end()}, Strategy::Random});
    std::erase_if(pool, [](const Source& s) { return s.items.empty(); });

    ExposureList list;
    std::unordered_set<std::string> seen;
    while (list.items.size() < static_cast<std::size_t>(slot_count)) {
        auto& source = pool[static_cast<std::size_t>(rng.uniform_index(pool.size()))];
        std::string item = std::move(source.items.front());
        source.items.pop_front();
        const Strategy strategy = source.strategy;
        if (source.items.empty()) {
            pool.erase(pool.begin() + (&source - pool.data()));
        }
        if (item != ground_truth && seen.insert(item).second) {
            list.items.push_back({std::move(item), 'A', {}, strategy});
        }
    }
    insert_ground_truth(list, ground_truth, rng);
    return list;
}

ExposureList build_logged_exposure(std::span<const std::string> logged, const std::string& ground_truth,
                                   int slot_count, Rng& rng) {
    ExposureList list;
    std::unordered_set<std::string> seen;
    for (const auto& id : logged) {
        if (list.items.size() == static_cast<std::size_t>(slot_count)) break;
        if (id != ground_truth && seen.insert(id).second) {
            list.items.push_back({id, 'A', {}, Strategy::Logged});
        }
    }
    if (list.items.empty()) {
        throw ScenePoolExhausted("logged exposure holds no item besides the ground truth");
    }
    insert_ground_truth(list, ground_truth, rng);
    return list;
}

void render_exposure(ExposureList& list, const Catalog& catalog, const DomainTemplate& tmpl) {
    for (auto& item : list.items) {
        const auto* entry = catalog.find(item.item_id);
        item.rendered_text = entry != nullptr ? render_item(*entry, tmpl) : item.item_id;
    }
}

std::string assemble_prompt(PromptVariant variant, const UserMemory& memory, const ExposureList& exposure) {
    std::string out(instruction_text(variant));
    out += "\n\n# User Profile\n";
    out += memory.profile_text;
    out += "\n\n# History\n";
    out += memory.history_text;
    out += "\n\n# Exposure List\n";
    for (std::size_t i = 0; i < exposure.items.size(); ++i) {
        const auto& item = exposure.items[i];
        out += '[';
        out += item.label;
        out += "] ";
        // Continuation lines of multi-line item blocks are indented.
        for (char c : item.rendered_text) {
            out += c;
            if (c == '\n') out += "    ";
        }
        out += '\n';
    }
    return out;
}

Scene build_scene(std::string scene_id, std::string domain_id, std::string user_id, UserMemory memory,
                  ExposureList exposure, PromptVariant variant) {
    for (std::size_t i = 0; i < exposure.items.size(); ++i) {
        if (exposure.items[i].label != option_label(i)) {
            throw ContractViolation("exposure labels must run A.. in order");
        }
    }
    Scene scene;
    scene.scene_id = std::move(scene_id);
    scene.domain_id = std::move(domain_id);
    scene.user_id = std::move(user_id);
    scene.memory = std::move(memory);
    scene.exposure = std::move(exposure);
    scene.variant = variant;
    scene.prompt_text = assemble_prompt(variant, scene.memory, scene.exposure);
    scene.ground_truth_label = option_label(scene.exposure.ground_truth_index);
    return scene;
}

OrderedJson scene_to_json(const Scene& scene) {
    OrderedJson j;
    j["scene_id"] = scene.scene_id;
    j["domain_id"] = scene.domain_id;
    j["user_id"] = scene.user_id;
    j["variant"] = scene.variant == PromptVariant::Direct ? "direct" : "decision";
    j["layout_version"] = prompt_layout_version();
    j["prompt_text"] = scene.prompt_text;
    OrderedJson labels = OrderedJson::array();
    OrderedJson items = OrderedJson::array();
    for (const auto& item : scene.exposure.items) {
        labels.push_back(std::string(1, item.label));
        OrderedJson it;
        it["label"] = std::string(1, item.label);
        it["item_id"] = item.item_id;
        it["source"] = to_string(item.source);
        it["text"] = item.rendered_text;
        items.push_back(std::move(it));
    }
    j["labels"] = std::move(labels);
    j["ground_truth_label"] = std::string(1, scene.ground_truth_label);
    j["ground_truth_index"] = scene.exposure.ground_truth_index;
    j["slot_count"] = scene.exposure.slot_count;
    j["items"] = std::move(items);
    j["memory"] = {{"profile_text", scene.memory.profile_text}, {"history_text", scene.memory.history_text}};
    return j;
}

Scene scene_from_json(const OrderedJson& j) {
    Scene s;
    s.scene_id = j.at("scene_id").get<std::string>();
    s.domain_id = j.at("domain_id").get<std::string>();
    s.user_id = j.at("user_id").get<std::string>();
    s.variant = j.at("variant").get<std::string>() == "direct" ? PromptVariant::Direct : PromptVariant::Decision;
    s.prompt_text = j.at("prompt_text").get<std::string>();
    s.memory.profile_text = j.at("memory").at("profile_text").get<std::string>();
    s.memory.history_text = j.at("memory").at("history_text").get<std::string>();
    for (const auto& it : j.at("items")) {
        s.exposure.items.push_back({it.at("item_id").get<std::string>(), it.at("label").get<std::string>().at(0),
                                    it.at("text").get<std::string>(),
                                    strategy_from_string(it.at("source").get<std::string>())});
    }
    s.exposure.ground_truth_index = j.at("ground_truth_index").get<std::size_t>();
    s.exposure.slot_count = j.at("slot_count").get<int>();
    s.ground_truth_label = j.at("ground_truth_label").get<std::string>().at(0);
    return s;
}

int draw_slot_count(const SceneBuildConfig& config, Rng& rng) {
    if (config.fixed_slot_count) return *config.fixed_slot_count;
    return static_cast<int>(rng.uniform_int(config.slot_min, config.slot_max));
}

std::vector<Scene> build_domain_scenes(const DomainData& data, std::span<const std::string> users,
                                       std::span<const std::string> matrix_users, const SceneBuildConfig& config,
                                       std::uint64_t seed, SceneBuildStats* stats) {
    SceneBuildStats local;
    SceneBuildStats& st = stats != nullptr ? *stats : local;
    const auto& catalog = *data.catalog;
    const auto& interactions = *data.interactions;
    const std::string& domain = catalog.domain_id;

    std::map<std::string, std::vector<std::string>> rows;
    for (const auto& u : matrix_users) {
        auto it = interactions.find(u);
        if (it == interactions.end()) continue;
        auto& row = rows[u];
        for (const auto& r : it->second) row.push_back(r.item_id);
    }
    const InteractionMatrix matrix(rows);

    std::vector<std::string> catalog_ids;
    catalog_ids.reserve(catalog.items.size());
    for (const auto& item : catalog.items) catalog_ids.push_back(item.item_id);

    std::vector<std::string> order(users.begin(), users.end());
    std::sort(order.begin(), order.end());
    Rng order_rng(derive_seed(seed, "scenes/" + domain));
    order_rng.shuffle(order);

    std::vector<Scene> scenes;
    for (const auto& user : order) {
        if (scenes.size() >= config.scenes_per_domain) break;
        auto it = interactions.find(user);
        if (it == interactions.end() || it->second.size() <= config.min_history) {
            ++st.short_history;
            continue;
        }
        const auto& records = it->second;
        Rng target_rng(derive_seed(seed, "target/" + domain + "/" + user));
        const auto target = static_cast<std::size_t>(
            target_rng.uniform_int(static_cast<std::int64_t>(config.min_history),
                                   static_cast<std::int64_t>(records.size()) - 1));
        std::string scene_id = domain + "/" + user + "/" + std::to_string(target);
        Rng rng(derive_seed(seed, scene_id));

        const auto& target_record = records[target];
        std::span<const InteractionRecord> history(records.data(), target);
        ItemSet exclude;
        for (const auto& r : records) exclude.insert(r.item_id);
        std::vector<std::string> history_ids;
        for (const auto& r : history) history_ids.push_back(r.item_id);

        const int slots = draw_slot_count(config, rng);
        ExposureList exposure;
        try {
            const std::string* logged = nullptr;
            if (data.adapter != nullptr && data.adapter->exposure_field) {
                logged = target_record.behavior.find(*data.adapter->exposure_field);
            }
            if (logged != nullptr) {
                std::vector<std::string> ids;
                std::istringstream ss(*logged);
                for (std::string id; ss >> id;) {
                    if (catalog.find(id) != nullptr) ids.push_back(id);
                }
                exposure = build_logged_exposure(ids, target_record.item_id, slots, rng);
            } else {
                std::vector<std::string> pool;
                for (const auto& id : catalog_ids) {
                    if (!exclude.contains(id)) pool.push_back(id);
                }
                StrategyScores lists;
                lists.random = sample_random(pool, config.top_k, rng);
                lists.collaborative = score_collaborative(matrix, history_ids, exclude, config.top_k);
                if (data.embeddings != nullptr) {
                    auto content = score_content(history_ids, *data.embeddings, catalog_ids, exclude, config.top_k);
                    st.missing_embeddings += content.skipped_missing;
                    for (auto& s : content.ranked) lists.content.push_back(std::move(s.item_id));
                }
                exposure = build_exposure_list(lists, target_record.item_id, slots, rng);
            }
        } catch (const ScenePoolExhausted&) {
            ++st.pool_exhausted;
            continue;
        }
        render_exposure(exposure, catalog, *data.tmpl);

        const UserProfile* profile = nullptr;
        if (data.profiles != nullptr) {
            auto p = data.profiles->find(user);
            if (p != data.profiles->end()) profile = &p->second;
        }
        auto memory = render_memory(profile, history, catalog, *data.tmpl, target_record.timestamp, config.history_cap);
        scenes.push_back(build_scene(std::move(scene_id), domain, user, std::move(memory), std::move(exposure),
                                     config.variant));
        ++st.built;
    }
    return scenes;
}

}  // namespace simdistill
