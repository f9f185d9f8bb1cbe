#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace simdistill {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);

// SHA-256 of a file's contents; throws IoError if unreadable.
std::string file_digest(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

// Writes via a sibling temp file and rename so readers never see a torn file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Every non-empty line of a newline-delimited JSON file.
std::vector<Json> read_jsonl(const std::filesystem::path& path);

template <typename JsonT>
std::string to_jsonl(const std::vector<JsonT>& rows) {
    std::string out;
    for (const auto& row : rows) {
        out += row.dump();
        out += '\n';
    }
    return out;
}

}  // namespace simdistill
