#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace simdistill {

// Text templates for one domain. Slots are written `{NAME}`; a slot's lookup
// key is the name lowercased with spaces turned into underscores, so
// `{TIME DIFF}` reads attribute `time_diff`.
struct DomainTemplate {
    std::string name;
    std::string profile;   // may be empty for profile-less domains
    std::string history;   // one interaction
    std::string exposure;  // one exposed item
};

const DomainTemplate& builtin_template(std::string_view name);
std::vector<std::string> builtin_template_names();

// Reads profile.txt, history.txt and exposure.txt from `dir`; a missing
// profile.txt means an empty profile block.
DomainTemplate load_template_dir(const std::filesystem::path& dir);

std::string placeholder_key(std::string_view placeholder);

using SlotLookup = std::function<const std::string*(std::string_view key)>;

// Substitutes every slot. Absent slots render empty, and a line whose slots
// are all absent is dropped. Lines without slots are kept verbatim.
std::string fill_template(std::string_view tmpl, const SlotLookup& lookup);

// "just now", "5 minutes ago", "3 hours ago", "12 days ago", "4 months ago".
std::string relative_time_phrase(std::int64_t elapsed_seconds);

}  // namespace simdistill
