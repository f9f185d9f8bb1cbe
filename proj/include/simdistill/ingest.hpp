#pragma once

// Loading of raw recommender dumps into canonical records.
//
// Adapters are declarative: a JSON file names the source tables, their
// on-disk format, and which columns map to ids, timestamps and attributes.
// No per-domain code is involved.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "simdistill/io.hpp"

namespace simdistill {

// Attribute name -> text, in declaration order. Absent attributes are simply
// not present; empty strings are never stored.
class Attributes {
public:
    using Entry = std::pair<std::string, std::string>;

    void set(std::string name, std::string value);
    const std::string* find(std::string_view name) const;
    bool contains(std::string_view name) const { return find(name) != nullptr; }
    const std::vector<Entry>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }

    OrderedJson to_json() const;

    bool operator==(const Attributes&) const = default;

private:
    std::vector<Entry> entries_;
};

struct ItemCatalogEntry {
    std::string item_id;
    std::string domain_id;
    Attributes attributes;
};

struct UserProfile {
    std::string user_id;
    std::string domain_id;
    Attributes attributes;
};

struct InteractionRecord {
    std::string user_id;
    std::string item_id;
    std::int64_t timestamp = 0;  // seconds since epoch, > 0
    Attributes behavior;

    bool operator==(const InteractionRecord&) const = default;
};

struct DomainSplit {
    std::string domain_id;
    std::vector<std::string> construction_users;  // sorted
    std::vector<std::string> evaluation_users;    // sorted

    bool is_evaluation(const std::string& user) const;
};

enum class TableFormat { Csv, Tsv, Jsonl };

struct TableSpec {
    std::filesystem::path path;
    TableFormat format = TableFormat::Csv;
    std::string delimiter = ",";
    bool header = true;
    std::vector<std::string> columns;  // used when header == false
};

using ColumnMapping = std::vector<std::pair<std::string, std::string>>;  // attribute -> column

struct CatalogSpec {
    TableSpec table;
    std::string id_column;
    ColumnMapping attributes;
};

enum class TimestampFormat { Epoch, Iso8601 };

struct InteractionSpec {
    TableSpec table;
    std::string user_column;
    std::string item_column;
    std::optional<std::string> timestamp_column;  // nullopt: synthesize sequence indices
    TimestampFormat timestamp_format = TimestampFormat::Epoch;
    ColumnMapping behavior;
};

struct ProfileSpec {
    TableSpec table;
    std::string id_column;
    ColumnMapping attributes;
};

struct AdapterConfig {
    std::string domain;
    CatalogSpec catalog;
    InteractionSpec interactions;
    std::optional<ProfileSpec> profiles;
    std::string template_name;                        // built-in template set
    std::optional<std::filesystem::path> template_dir;  // overrides template_name
    // Behavior field holding logged exposure item ids (space separated).
    // When present the scene builder uses real exposures instead of synthesizing.
    std::optional<std::string> exposure_field;
};

// Parses an adapter config. Relative paths resolve against `base_dir`.
AdapterConfig parse_adapter(const OrderedJson& j, const std::filesystem::path& base_dir);
AdapterConfig load_adapter(const std::filesystem::path& path);

struct Catalog {
    std::string domain_id;
    std::vector<ItemCatalogEntry> items;  // input order
    std::unordered_map<std::string, std::size_t> index;

    const ItemCatalogEntry* find(const std::string& item_id) const;
    void add(ItemCatalogEntry entry);
};

struct CatalogLoad {
    Catalog catalog;
    std::size_t skipped = 0;
};

struct InteractionLoad {
    // user -> records sorted ascending by timestamp (stable on input order)
    std::map<std::string, std::vector<InteractionRecord>> by_user;
    std::size_t skipped_malformed = 0;
    std::size_t dropped_unknown_item = 0;
    std::size_t total() const;
};

struct ProfileLoad {
    std::map<std::string, UserProfile> profiles;
    std::size_t skipped = 0;
};

CatalogLoad load_catalog(const AdapterConfig& adapter);
InteractionLoad load_interactions(const AdapterConfig& adapter, const Catalog& catalog);
ProfileLoad load_profiles(const AdapterConfig& adapter);

DomainSplit split_users(const std::string& domain_id, std::vector<std::string> users, double eval_fraction,
                        std::uint64_t seed);

// Canonical newline-delimited JSON forms.
std::string catalog_to_jsonl(const Catalog& catalog);
std::string interactions_to_jsonl(const InteractionLoad& log);
std::string profiles_to_jsonl(const ProfileLoad& profiles);
OrderedJson split_to_json(const DomainSplit& split, double eval_fraction, std::uint64_t seed);

Catalog catalog_from_jsonl(const std::filesystem::path& path);
std::map<std::string, std::vector<InteractionRecord>> interactions_from_jsonl(const std::filesystem::path& path);
std::map<std::string, UserProfile> profiles_from_jsonl(const std::filesystem::path& path);
DomainSplit split_from_json(const Json& j);

// Splits one delimited line; quoting honoured for single-character delimiters.
std::vector<std::string> split_delimited(std::string_view line, std::string_view delimiter);

// Seconds since epoch from "YYYY-MM-DD" or "YYYY-MM-DD HH:MM:SS" (UTC).
std::optional<std::int64_t> parse_iso8601(std::string_view text);

}  // namespace simdistill
