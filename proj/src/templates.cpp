#include "simdistill/templates.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "simdistill/errors.hpp"
#include "simdistill/io.hpp"

namespace simdistill {

namespace {

const std::map<std::string, DomainTemplate, std::less<>>& registry() {
    static const std::map<std::string, DomainTemplate, std::less<>> templates = [] {
        std::map<std::string, DomainTemplate, std::less<>> m;
        m["movielens"] = {"movielens",
                          "Gender: {GENDER}\n"
                          "Age: {AGE}\n"
                          "Occupation: {OCCUPATION}\n"
                          "Location: {LOCATION}",
                          "A movie viewed {TIME DIFF}:\n"
                          "    {TITLE} - {GENRES}\n"
                          "    Rating: {RATING}/5.0",
                          "{TITLE} - {GENRES}"};
        m["amazon"] = {"amazon", "",
                       "A product bought {TIME DIFF}\n"
                       "Product name: {SHORT TITLE}\n"
                       "Category: {CATEGORY}\n"
                       "Price: {REV PRICE}\n"
                       "Ratings: {AVERAGE RATING} ({RATING NUMBER})\n"
                       "My Behavior:\n"
                       "Rating: {RATING}/5\n"
                       "Review: {REVIEW SUMMARY}\n"
                       "{REVIEW TEXT}",
                       "Product name: {SHORT TITLE}\n"
                       "Category: {CATEGORY}\n"
                       "Price: {REV PRICE}\n"
                       "Ratings: {AVERAGE RATING} ({RATING NUMBER})"};
        m["kuairec"] = {"kuairec",
                        "Country: China\n"
                        "Registered {REGISTER DAYS} days ago\n"
                        "{FRIEND USER NUM} Friends - {FOLLOW USER NUM} Followers - {FANS USER NUM} Fans\n"
                        "Active Degree: {ACTIVE DEGREE}\n"
                        "Role: {ROLE}",
                        "A video watched {TIME DIFF}\n"
                        "Title: {CAPTION} {CATEGORY} {COVER TEXT}\n"
                        "Duration: {VIDEO DURATION}\n"
                        "{PLAY COUNT} plays - {LIKE COUNT} likes - {COMMENT COUNT} comments - {SHARE COUNT} shares\n"
                        "My Behavior: {OPERATION}",
                        "Title: {CAPTION} {CATEGORY} {COVER TEXT}\n"
                        "Duration: {VIDEO DURATION}\n"
                        "{PLAY COUNT} plays - {LIKE COUNT} likes - {COMMENT COUNT} comments - {SHARE COUNT} shares"};
        m["goodreads"] = {"goodreads", "",
                          "A book viewed {TIME DIFF}\n"
                          "Title: {TITLE} ({GENRES})\n"
                          "Description: {DESCRIPTION}\n"
                          "Author: {AUTHORS}\n"
                          "Published at {PUBLICATION YEAR} - {PUBLISHER} - {NUM PAGES} pages\n"
                          "Rating: {AVERAGE RATING} - {RATINGS COUNT} ratings\n"
                          "My Behavior: {READ STATUS} {RATING UPDATED} {REVIEW UPDATED}",
                          "Title: {TITLE} ({GENRES})\n"
                          "Author: {AUTHORS}\n"
                          "Published at {PUBLICATION YEAR} - {PUBLISHER} - {NUM PAGES} pages\n"
                          "Rating: {AVERAGE RATING} - {RATINGS COUNT} ratings"};
        m["mobilerec"] = {"mobilerec", "",
                          "{APP NAME} ({AVG RATING}/5.0 - {NUM REVIEWS} reviews)\n"
                          "Category: {APP CATEGORY}\n"
                          "Developer: {DEVELOPER NAME}\n"
                          "Price: {PRICE}\n"
                          "Description: {SHORT DESCRIPTION}\n"
                          "My Rating: {RATING}\n"
                          "My Reviews: {REVIEW}",
                          "{APP NAME} ({AVG RATING}/5.0 - {NUM REVIEWS} reviews)\n"
                          "Category: {APP CATEGORY}\n"
                          "Developer: {DEVELOPER NAME}\n"
                          "Price: {PRICE}"};
        m["lastfm"] = {"lastfm", "",
                       "An artist listened {TIME DIFF}\n"
                       "Artist name: {NAME}\n"
                       "Tags: {TAGS}\n"
                       "My Behavior: Tagging with {TAG VALUE}",
                       "Artist name: {NAME} ({LISTENED FRIENDS})\n"
                       "Tags: {TAGS}"};
        m["steam"] = {"steam", "A user who has purchased {PRODUCTS} games",
                      "A game purchased {TIME DIFF}\n"
                      "Title: {APP NAME} [{GENRES}]\n"
                      "Developed by {DEVELOPER} - Published by {PUBLISHER}\n"
                      "Released: {RELEASE DATE}\n"
                      "Tags: {TAGS}\n"
                      "Specifications: {SPECS}\n"
                      "Player Reviews: {SENTIMENT}\n"
                      "Price: {PRICE}\n"
                      "My Behavior: Played {HOURS PLAYED} hours - Review: {REVIEW TEXT}",
                      "Title: {APP NAME} [{GENRES}]\n"
                      "Developed by {DEVELOPER} - Published by {PUBLISHER}\n"
                      "Released: {RELEASE DATE}\n"
                      "Tags: {TAGS}\n"
                      "Specifications: {SPECS}\n"
                      "Player Reviews: {SENTIMENT}\n"
                      "Price: {PRICE}"};
        m["mind"] = {"mind", "", "{TITLE} (Category: {CATEGORY}) {{ Viewed {TIME DIFF} }}",
                     "{TITLE} (Category: {CATEGORY})"};
        return m;
    }();
    return templates;
}

std::string read_optional(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        return {};
    }
    auto text = read_file(path);
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) {
        text.pop_back();
    }
    return text;
}

}  // namespace

const DomainTemplate& builtin_template(std::string_view name) {
    const auto& reg = registry();
    auto it = reg.find(name);
    if (it == reg.end()) {
        throw ConfigError("no built-in template named '" + std::string(name) + "'");
    }
    return it->second;
}

std::vector<std::string> builtin_template_names() {
    std::vector<std::string> names;
    for (const auto& [name, _] : registry()) {
        names.push_back(name);
    }
    return names;
}

DomainTemplate load_template_dir(const std::filesystem::path& dir) {
    DomainTemplate t;
    t.name = dir.filename().string();
    t.profile = read_optional(dir / "profile.txt");
    if (!std::filesystem::exists(dir / "history.txt") || !std::filesystem::exists(dir / "exposure.txt")) {
        throw ConfigError("template dir " + dir.string() + " needs history.txt and exposure.txt");
    }
    t.history = read_optional(dir / "history.txt");
    t.exposure = read_optional(dir / "exposure.txt");
    return t;
}

std::string placeholder_key(std::string_view placeholder) {
    std::string key;
    key.reserve(placeholder.size());
    for (char c : placeholder) {
        key.push_back(c == ' ' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return key;
}

std::string fill_template(std::string_view tmpl, const SlotLookup& lookup) {
    std::string out;
    std::size_t line_start = 0;
    bool first_line = true;
    while (line_start <= tmpl.size()) {
        auto line_end = tmpl.find('\n', line_start);
        if (line_end == std::string_view::npos) line_end = tmpl.size();
        auto line = tmpl.substr(line_start, line_end - line_start);

        std::string rendered;
        int slots = 0;
        int filled = 0;
        for (std::size_t i = 0; i < line.size(); ++i) {
            // "{{" and "}}" are literal braces.
            if (line[i] == '{' && i + 1 < line.size() && line[i + 1] == '{') {
                rendered.push_back('{');
                ++i;
                continue;
            }
            if (line[i] == '}' && i + 1 < line.size() && line[i + 1] == '}') {
                rendered.push_back('}');
                ++i;
                continue;
            }
            if (line[i] == '{') {
                auto close = line.find('}', i);
                if (close != std::string_view::npos) {
                    ++slots;
                    if (const auto* v = lookup(placeholder_key(line.substr(i + 1, close - i - 1)))) {
                        rendered += *v;
                        ++filled;
                    }
                    i = close;
                    continue;
                }
            }
            rendered.push_back(line[i]);
        }
        if (slots == 0 || filled > 0) {
            if (!first_line) out.push_back('\n');
            out += rendered;
            first_line = false;
        }
        if (line_end == tmpl.size()) break;
        line_start = line_end + 1;
    }
    return out;
}

std::string relative_time_phrase(std::int64_t elapsed) {
    auto unit = [](std::int64_t n, const char* name) {
        return std::to_string(n) + " " + name + (n == 1 ? "" : "s") + " ago";
    };
    constexpr std::int64_t kMinute = 60, kHour = 3600, kDay = 86400, kMonth = 30 * kDay;
    if (elapsed < kMinute) return "just now";
    if (elapsed < kHour) return unit(elapsed / kMinute, "minute");
    if (elapsed < kDay) return unit(elapsed / kHour, "hour");
    if (elapsed < kMonth) return unit(elapsed / kDay, "day");
    return unit(elapsed / kMonth, "month");
}

}  // namespace simdistill
