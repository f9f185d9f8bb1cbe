#include "simdistill/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <set>

#include "simdistill/errors.hpp"
#include "simdistill/rng.hpp"

namespace simdistill {

void Attributes::set(std::string name, std::string value) {
    for (auto& [k, v] : entries_) {
        if (k == name) {
            if (value.empty()) {
                std::erase_if(entries_, [&](const Entry& e) { return e.first == name; });
            } else {
                v = std::move(value);
            }
            return;
        }
    }
    if (!value.empty()) {
        entries_.emplace_back(std::move(name), std::move(value));
    }
}

const std::string* Attributes::find(std::string_view name) const {
    for (const auto& [k, v] : entries_) {
        if (k == name) {
            return &v;
        }
    }
    return nullptr;
}

OrderedJson Attributes::to_json() const {
    OrderedJson j = OrderedJson::object();
    for (const auto& [k, v] : entries_) {
        j[k] = v;
    }
    return j;
}

bool DomainSplit::is_evaluation(const std::string& user) const {
    return std::binary_search(evaluation_users.begin(), evaluation_users.end(), user);
}

const ItemCatalogEntry* Catalog::find(const std::string& item_id) const {
    auto it = index.find(item_id);
    return it == index.end() ? nullptr : &items[it->second];
}

void Catalog::add(ItemCatalogEntry entry) {
    index.emplace(entry.item_id, items.size());
    items.push_back(std::move(entry));
}

std::size_t InteractionLoad::total() const {
    std::size_t n = 0;
    for (const auto& [_, records] : by_user) {
        n += records.size();
    }
    return n;
}

// ---------------------------------------------------------------------------
// Adapter parsing

namespace {

TableFormat parse_format(const std::string& s) {
    if (s == "csv") return TableFormat::Csv;
    if (s == "tsv") return TableFormat::Tsv;
    if (s == "jsonl") return TableFormat::Jsonl;
    throw AdapterError("unknown table format '" + s + "'");
}

void reject_unknown_keys(const OrderedJson& j, std::initializer_list<const char*> allowed, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }) ==
            allowed.end()) {
            throw AdapterError("unknown key '" + it.key() + "' in " + where);
        }
    }
}

std::string require_string(const OrderedJson& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_string()) {
        throw AdapterError("missing string '" + std::string(key) + "' in " + where);
    }
    return j[key].get<std::string>();
}

TableSpec parse_table(const OrderedJson& j, const std::filesystem::path& base_dir, const std::string& where) {
    TableSpec t;
    auto p = std::filesystem::path(require_string(j, "path", where));
    t.path = p.is_absolute() ? p : base_dir / p;
    t.format = parse_format(j.value("format", std::string("csv")));
    t.delimiter = t.format == TableFormat::Tsv ? "\t" : ",";
    if (j.contains("delimiter")) {
        t.delimiter = j["delimiter"].get<std::string>();
        if (t.delimiter.empty()) {
            throw AdapterError("empty delimiter in " + where);
        }
    }
    t.header = j.value("header", true);
    if (j.contains("columns")) {
        t.columns = j["columns"].get<std::vector<std::string>>();
    }
    if (!t.header && t.format != TableFormat::Jsonl && t.columns.empty()) {
        throw AdapterError(where + " has no header and no 'columns' list");
    }
    return t;
}

ColumnMapping parse_mapping(const OrderedJson& j) {
    ColumnMapping m;
    if (j.is_null()) {
        return m;
    }
    // Either {"attr": "column", ...} or [["attr", "column"], ...].
    if (j.is_array()) {
        for (const auto& pair : j) {
            m.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
        }
    } else {
        for (auto it = j.begin(); it != j.end(); ++it) {
            m.emplace_back(it.key(), it.value().get<std::string>());
        }
    }
    return m;
}

}  // namespace

AdapterConfig parse_adapter(const OrderedJson& raw, const std::filesystem::path& base_dir) {
    AdapterConfig a;
    reject_unknown_keys(raw, {"domain", "catalog", "interactions", "profiles", "template", "template_dir",
                              "exposure_field"},
                        "adapter");
    a.domain = require_string(raw, "domain", "adapter");

    const auto& cat = raw.at("catalog");
    reject_unknown_keys(cat, {"path", "format", "delimiter", "header", "columns", "id", "attributes"}, "catalog");
    a.catalog.table = parse_table(cat, base_dir, "catalog");
    a.catalog.id_column = require_string(cat, "id", "catalog");
    a.catalog.attributes = parse_mapping(cat.value("attributes", OrderedJson()));

    const auto& inter = raw.at("interactions");
    reject_unknown_keys(inter, {"path", "format", "delimiter", "header", "columns", "user", "item", "timestamp",
                                "timestamp_format", "behavior"},
                        "interactions");
    a.interactions.table = parse_table(inter, base_dir, "interactions");
    a.interactions.user_column = require_string(inter, "user", "interactions");
    a.interactions.item_column = require_string(inter, "item", "interactions");
    if (inter.contains("timestamp") && !inter["timestamp"].is_null()) {
        a.interactions.timestamp_column = inter["timestamp"].get<std::string>();
    }
    auto tf = inter.value("timestamp_format", std::string("epoch"));
    if (tf == "epoch") {
        a.interactions.timestamp_format = TimestampFormat::Epoch;
    } else if (tf == "iso8601") {
        a.interactions.timestamp_format = TimestampFormat::Iso8601;
    } else {
        throw AdapterError("unknown timestamp_format '" + tf + "'");
    }
    a.interactions.behavior = parse_mapping(inter.value("behavior", OrderedJson()));

    if (raw.contains("profiles") && !raw["profiles"].is_null()) {
        const auto& prof = raw["profiles"];
        reject_unknown_keys(prof, {"path", "format", "delimiter", "header", "columns", "id", "attributes"},
                            "profiles");
        ProfileSpec p;
        p.table = parse_table(prof, base_dir, "profiles");
        p.id_column = require_string(prof, "id", "profiles");
        p.attributes = parse_mapping(prof.value("attributes", OrderedJson()));
        a.profiles = std::move(p);
    }
    a.template_name = raw.value("template", a.domain);
    if (raw.contains("template_dir")) {
        auto p = std::filesystem::path(raw["template_dir"].get<std::string>());
        a.template_dir = p.is_absolute() ? p : base_dir / p;
    }
    if (raw.contains("exposure_field")) {
        a.exposure_field = raw["exposure_field"].get<std::string>();
    }
    return a;
}

AdapterConfig load_adapter(const std::filesystem::path& path) {
    OrderedJson j;
    try {
        j = OrderedJson::parse(read_file(path));
    } catch (const OrderedJson::exception& e) {
        throw AdapterError(path.string() + ": " + e.what());
    }
    return parse_adapter(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Table reading

std::vector<std::string> split_delimited(std::string_view line, std::string_view delimiter) {
    std::vector<std::string> out;
    if (delimiter.size() > 1) {
        std::size_t start = 0;
        while (true) {
            auto pos = line.find(delimiter, start);
            if (pos == std::string_view::npos) {
                out.emplace_back(line.substr(start));
                break;
            }
            out.emplace_back(line.substr(start, pos - start));
            start = pos + delimiter.size();
        }
        return out;
    }
    const char delim = delimiter[0];
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"' && field.empty()) {
            quoted = true;
        } else if (c == delim) {
            out.push_back(std::move(field));
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    out.push_back(std::move(field));
    return out;
}

namespace {

using Row = std::unordered_map<std::string, std::string>;

bool has_open_quote(std::string_view text) {
    bool quoted = false;
    for (char c : text) {
        if (c == '"') {
            quoted = !quoted;
        }
    }
    return quoted;
}

std::string trim_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') {
        s.pop_back();
    }
    return s;
}

std::string json_scalar_text(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_null()) return {};
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_array()) {
        std::string out;
        for (const auto& e : v) {
            if (!out.empty()) out += "|";
            out += json_scalar_text(e);
        }
        return out;
    }
    return v.dump();
}

// Calls `on_row` for every well-formed row and returns the malformed count.
// Throws AdapterError when a required column is absent from the schema.
std::size_t read_table(const TableSpec& spec, const std::vector<std::string>& required,
                       const std::function<void(const Row&)>& on_row) {
    std::ifstream in(spec.path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + spec.path.string());
    }
    std::size_t malformed = 0;
    std::string line;

    if (spec.format == TableFormat::Jsonl) {
        while (std::getline(in, line)) {
            line = trim_cr(line);
            if (line.find_first_not_of(" \t") == std::string::npos) continue;
            Json j;
            try {
                j = Json::parse(line);
            } catch (const Json::exception&) {
                ++malformed;
                continue;
            }
            if (!j.is_object()) {
                ++malformed;
                continue;
            }
            Row row;
            for (auto it = j.begin(); it != j.end(); ++it) {
                auto text = json_scalar_text(it.value());
                if (!text.empty()) row.emplace(it.key(), std::move(text));
            }
            on_row(row);
        }
        return malformed;
    }

    std::vector<std::string> columns = spec.columns;
    if (spec.header) {
        if (!std::getline(in, line)) {
            throw AdapterError(spec.path.string() + " is empty (expected a header row)");
        }
        columns = split_delimited(trim_cr(line), spec.delimiter);
    }
    for (const auto& col : required) {
        if (std::find(columns.begin(), columns.end(), col) == columns.end()) {
            throw AdapterError(spec.path.string() + " lacks required column '" + col + "'");
        }
    }
    while (std::getline(in, line)) {
        line = trim_cr(line);
        if (spec.delimiter.size() == 1) {
            std::string next;
            while (has_open_quote(line) && std::getline(in, next)) {
                line += "\n" + trim_cr(next);
            }
        }
        if (line.empty()) continue;
        auto fields = split_delimited(line, spec.delimiter);
        if (fields.size() != columns.size()) {
            ++malformed;
            continue;
        }
        Row row;
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (!fields[i].empty()) row.emplace(columns[i], std::move(fields[i]));
        }
        on_row(row);
    }
    return malformed;
}

std::vector<std::string> required_columns(const std::string& id, const ColumnMapping& mapping) {
    std::vector<std::string> cols{id};
    for (const auto& [_, col] : mapping) cols.push_back(col);
    return cols;
}

const std::string* lookup(const Row& row, const std::string& column) {
    auto it = row.find(column);
    return it == row.end() ? nullptr : &it->second;
}

Attributes map_attributes(const Row& row, const ColumnMapping& mapping) {
    Attributes a;
    for (const auto& [attr, col] : mapping) {
        if (const auto* v = lookup(row, col)) a.set(attr, *v);
    }
    return a;
}

std::optional<std::int64_t> parse_epoch(const std::string& text) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
        return std::nullopt;
    }
    return static_cast<std::int64_t>(std::floor(v));
}

}  // namespace

std::optional<std::int64_t> parse_iso8601(std::string_view text) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    std::string t(text);
    int n = std::sscanf(t.c_str(), "%d-%d-%d%*[ T]%d:%d:%d", &y, &mo, &d, &h, &mi, &s);
    if (n != 3 && n != 6) {
        return std::nullopt;
    }
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 60) {
        return std::nullopt;
    }
    std::tm tm{};
    tm.tm_year = y - 1900;
    tm.tm_mon = mo - 1;
    tm.tm_mday = d;
    tm.tm_hour = h;
    tm.tm_min = mi;
    tm.tm_sec = s;
    return static_cast<std::int64_t>(timegm(&tm));
}

CatalogLoad load_catalog(const AdapterConfig& adapter) {
    CatalogLoad out;
    out.catalog.domain_id = adapter.domain;
    const auto& spec = adapter.catalog;
    out.skipped += read_table(spec.table, required_columns(spec.id_column, spec.attributes), [&](const Row& row) {
        const auto* id = lookup(row, spec.id_column);
        if (id == nullptr || id->empty() || out.catalog.index.contains(*id)) {
            ++out.skipped;
            return;
        }
        out.catalog.add({*id, adapter.domain, map_attributes(row, spec.attributes)});
    });
    return out;
}

InteractionLoad load_interactions(const AdapterConfig& adapter, const Catalog& catalog) {
    InteractionLoad out;
    const auto& spec = adapter.interactions;
    std::vector<std::string> required{spec.user_column, spec.item_column};
    if (spec.timestamp_column) required.push_back(*spec.timestamp_column);
    for (const auto& [_, col] : spec.behavior) required.push_back(col);

    std::map<std::string, std::int64_t> sequence;
    out.skipped_malformed += read_table(spec.table, required, [&](const Row& row) {
        const auto* user = lookup(row, spec.user_column);
        const auto* item = lookup(row, spec.item_column);
        if (user == nullptr || item == nullptr) {
            ++out.skipped_malformed;
            return;
        }
        std::int64_t ts = 0;
        if (spec.timestamp_column) {
            const auto* raw = lookup(row, *spec.timestamp_column);
            std::optional<std::int64_t> parsed;
            if (raw != nullptr) {
                parsed = spec.timestamp_format == TimestampFormat::Epoch ? parse_epoch(*raw) : parse_iso8601(*raw);
            }
            if (!parsed || *parsed <= 0) {
                ++out.skipped_malformed;
                return;
            }
            ts = *parsed;
        } else {
            ts = ++sequence[*user];
        }
        if (catalog.find(*item) == nullptr) {
            ++out.dropped_unknown_item;
            return;
        }
        out.by_user[*user].push_back({*user, *item, ts, map_attributes(row, spec.behavior)});
    });
    if (out.by_user.empty()) {
        throw EmptyDatasetError("no valid interactions in " + spec.table.path.string());
    }
    for (auto& [_, records] : out.by_user) {
        std::stable_sort(records.begin(), records.end(),
                         [](const InteractionRecord& a, const InteractionRecord& b) { return a.timestamp < b.timestamp; });
    }
    return out;
}

ProfileLoad load_profiles(const AdapterConfig& adapter) {
    ProfileLoad out;
    if (!adapter.profiles) {
        return out;
    }
    const auto& spec = *adapter.profiles;
    out.skipped += read_table(spec.table, required_columns(spec.id_column, spec.attributes), [&](const Row& row) {
        const auto* id = lookup(row, spec.id_column);
        if (id == nullptr || id->empty() || out.profiles.contains(*id)) {
            ++out.skipped;
            return;
        }
        out.profiles.emplace(*id, UserProfile{*id, adapter.domain, map_attributes(row, spec.attributes)});
    });
    return out;
}

DomainSplit split_users(const std::string& domain_id, std::vector<std::string> users, double eval_fraction,
                        std::uint64_t seed) {
    if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
        throw ConfigError("eval_fraction must lie in (0, 1)");
    }
    std::sort(users.begin(), users.end());
    users.erase(std::unique(users.begin(), users.end()), users.end());
    if (users.size() < 2) {
        throw EmptyDatasetError("domain '" + domain_id + "' has fewer than 2 users to split");
    }
    Rng rng(derive_seed(seed, "split/" + domain_id));
    rng.shuffle(users);
    auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(users.size())));
    n_eval = std::clamp<std::size_t>(n_eval, 1, users.size() - 1);

    DomainSplit split;
    split.domain_id = domain_id;
    split.evaluation_users.assign(users.begin(), users.begin() + static_cast<std::ptrdiff_t>(n_eval));
    split.construction_users.assign(users.begin() + static_cast<std::ptrdiff_t>(n_eval), users.end());
    std::sort(split.evaluation_users.begin(), split.evaluation_users.end());
    std::sort(split.construction_users.begin(), split.construction_users.end());
    return split;
}

// ---------------------------------------------------------------------------
// Canonical files

std::string catalog_to_jsonl(const Catalog& catalog) {
    std::string out;
    for (const auto& item : catalog.items) {
        OrderedJson j;
        j["domain_id"] = item.domain_id;
        j["item_id"] = item.item_id;
        j["attributes"] = item.attributes.to_json();
        out += j.dump() + "\n";
    }
    return out;
}

std::string interactions_to_jsonl(const InteractionLoad& log) {
    std::string out;
    for (const auto& [user, records] : log.by_user) {
        for (const auto& r : records) {
            OrderedJson j;
            j["user_id"] = r.user_id;
            j["item_id"] = r.item_id;
            j["timestamp"] = r.timestamp;
            j["behavior"] = r.behavior.to_json();
            out += j.dump() + "\n";
        }
    }
    return out;
}

std::string profiles_to_jsonl(const ProfileLoad& profiles) {
    std::string out;
    for (const auto& [id, p] : profiles.profiles) {
        OrderedJson j;
        j["domain_id"] = p.domain_id;
        j["user_id"] = p.user_id;
        j["attributes"] = p.attributes.to_json();
        out += j.dump() + "\n";
    }
    return out;
}

OrderedJson split_to_json(const DomainSplit& split, double eval_fraction, std::uint64_t seed) {
    OrderedJson j;
    j["domain_id"] = split.domain_id;
    j["eval_fraction"] = eval_fraction;
    j["seed"] = seed;
    j["construction_users"] = split.construction_users;
    j["evaluation_users"] = split.evaluation_users;
    return j;
}

namespace {

template <typename Fn>
void for_each_ordered_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) {
        throw MissingArtifact(path.filename().string());
    }
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        fn(OrderedJson::parse(line));
    }
}

Attributes ordered_attributes(const OrderedJson& j) {
    Attributes a;
    for (auto it = j.begin(); it != j.end(); ++it) {
        a.set(it.key(), it.value().get<std::string>());
    }
    return a;
}

}  // namespace

Catalog catalog_from_jsonl(const std::filesystem::path& path) {
    Catalog c;
    for_each_ordered_line(path, [&](const OrderedJson& j) {
        c.domain_id = j.at("domain_id").get<std::string>();
        c.add({j.at("item_id").get<std::string>(), c.domain_id, ordered_attributes(j.at("attributes"))});
    });
    return c;
}

std::map<std::string, std::vector<InteractionRecord>> interactions_from_jsonl(const std::filesystem::path& path) {
    std::map<std::string, std::vector<InteractionRecord>> out;
    for_each_ordered_line(path, [&](const OrderedJson& j) {
        InteractionRecord r;
        r.user_id = j.at("user_id").get<std::string>();
        r.item_id = j.at("item_id").get<std::string>();
        r.timestamp = j.at("timestamp").get<std::int64_t>();
        r.behavior = ordered_attributes(j.at("behavior"));
        out[r.user_id].push_back(std::move(r));
    });
    return out;
}

std::map<std::string, UserProfile> profiles_from_jsonl(const std::filesystem::path& path) {
    std::map<std::string, UserProfile> out;
    if (!std::filesystem::exists(path)) {
        return out;
    }
    for_each_ordered_line(path, [&](const OrderedJson& j) {
        UserProfile p{j.at("user_id").get<std::string>(), j.at("domain_id").get<std::string>(),
                      ordered_attributes(j.at("attributes"))};
        out.emplace(p.user_id, std::move(p));
    });
    return out;
}

DomainSplit split_from_json(const Json& j) {
    DomainSplit s;
    s.domain_id = j.at("domain_id").get<std::string>();
    s.construction_users = j.at("construction_users").get<std::vector<std::string>>();
    s.evaluation_users = j.at("evaluation_users").get<std::vector<std::string>>();
    return s;
}

}  // namespace simdistill
