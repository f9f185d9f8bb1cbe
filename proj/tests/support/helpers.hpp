#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "simdistill/io.hpp"
#include "simdistill/scene.hpp"

namespace testing {

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(SIMDISTILL_FIXTURES) / name; }

inline simdistill::Json load_fixture(const std::string& name) {
    return simdistill::Json::parse(simdistill::read_file(fixture(name)));
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("simdistill-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

// A scene with `slot_count + 1` plain options and the given ground truth.
inline simdistill::Scene toy_scene(const std::string& id, const std::string& domain, int slot_count, char truth,
                                   simdistill::PromptVariant variant = simdistill::PromptVariant::Decision) {
    simdistill::ExposureList list;
    list.slot_count = slot_count;
    for (int i = 0; i <= slot_count; ++i) {
        simdistill::ExposureItem item;
        item.item_id = domain + "-item-" + std::to_string(i);
        item.label = simdistill::option_label(static_cast<std::size_t>(i));
        item.rendered_text = "Option number " + std::to_string(i) + " for " + id;
        list.items.push_back(item);
    }
    list.ground_truth_index = static_cast<std::size_t>(truth - 'A');
    simdistill::UserMemory memory{"Age: 30", "A movie viewed 2 days ago:\n    Example - Drama"};
    return simdistill::build_scene(id, domain, "user-" + id, memory, list, variant);
}

// Decision-process text ending in the given behavior line.
inline std::string decision_text(const std::string& behavior_line, const std::string& style = "Logical") {
    return "Thought:\n"
           "Stimulus: I want something light tonight.\n"
           "Stimulus Factors: Emotional State, Time of Day\n"
           "Knowledge: Two options look like dramas I usually enjoy.\n"
           "Knowledge Factors: Quality, Novelty\n"
           "Evaluation: The first fits my recent history best.\n"
           "Evaluation Style: " + style + "\n" + behavior_line + "\n";
}

}  // namespace testing
