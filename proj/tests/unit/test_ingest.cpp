#include <doctest.h>

#include <algorithm>
#include <set>

#include "helpers.hpp"
#include "simdistill/errors.hpp"
#include "simdistill/ingest.hpp"

using namespace simdistill;

namespace {

std::filesystem::path write_adapter(const std::filesystem::path& dir, const std::string& items_csv,
                                    const std::string& ratings_csv, const std::string& extra = "") {
    write_file_atomic(dir / "items.csv", items_csv);
    write_file_atomic(dir / "ratings.csv", ratings_csv);
    const std::string adapter = R"({"domain": "toy", "template": "movielens",
        "catalog": {"path": "items.csv", "id": "id", "attributes": {"title": "title"}},
        "interactions": {"path": "ratings.csv", "user": "user", "item": "item", "timestamp": "ts",
                         "behavior": {"rating": "rating"}})" + extra + "}";
    write_file_atomic(dir / "adapter.json", adapter);
    return dir / "adapter.json";
}

}  // namespace

TEST_CASE("delimited lines honour quotes") {
    CHECK(split_delimited("a,\"b, c\",d", ",") == std::vector<std::string>{"a", "b, c", "d"});
    CHECK(split_delimited("a::b::c", "::") == std::vector<std::string>{"a", "b", "c"});
    CHECK(split_delimited("x\t\ty", "\t") == std::vector<std::string>{"x", "", "y"});
}

TEST_CASE("ISO dates") {
    CHECK(parse_iso8601("1970-01-02") == 86400);
    CHECK(parse_iso8601("2000-03-01 00:00:01") == 951868801);
    CHECK_FALSE(parse_iso8601("March 3rd").has_value());
}

TEST_CASE("the fixture adapter loads") {
    const auto adapter = load_adapter(testing::fixture("e2e/movies.adapter.json"));
    CHECK(adapter.domain == "movies");
    CHECK(adapter.profiles.has_value());
    const auto catalog = load_catalog(adapter);
    CHECK(catalog.catalog.items.size() == 90);
    CHECK(catalog.skipped == 0);
    const auto log = load_interactions(adapter, catalog.catalog);
    CHECK(log.by_user.size() == 48);
    for (const auto& [user, rows] : log.by_user) {
        CHECK(std::is_sorted(rows.begin(), rows.end(),
                             [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; }));
    }
    const auto profiles = load_profiles(adapter);
    CHECK(profiles.profiles.size() == 48);
    CHECK(*profiles.profiles.at("u000").attributes.find("location") != "");
}

TEST_CASE("malformed and unknown rows are counted, not fatal") {
    testing::TempDir tmp("ingest");
    const auto path = write_adapter(tmp.path(), "id,title\ni1,One\ni2,Two\n,Missing id\n",
                                    "user,item,ts,rating\n"
                                    "u1,i1,100,4\n"
                                    "u1,i2,not-a-time,3\n"
                                    "u1,i9,120,5\n"
                                    "u2,i2\n"
                                    "u2,i1,200,2\n");
    const auto adapter = load_adapter(path);
    const auto catalog = load_catalog(adapter);
    CHECK(catalog.catalog.items.size() == 2);
    CHECK(catalog.skipped == 1);
    const auto log = load_interactions(adapter, catalog.catalog);
    CHECK(log.total() == 2);
    CHECK(log.skipped_malformed == 2);
    CHECK(log.dropped_unknown_item == 1);
}

TEST_CASE("adapter errors are configuration errors") {
    testing::TempDir tmp("adapter");
    const auto path = write_adapter(tmp.path(), "id,title\n", "user,item,ts\n", R"(, "colour": "red")");
    CHECK_THROWS_AS(load_adapter(path), AdapterError);
    CHECK_THROWS_WITH_AS(load_catalog(load_adapter(write_adapter(tmp.path(), "title\nx\n", "user,item,ts\n"))),
                         doctest::Contains("id"), Error);
}

TEST_CASE("user split is disjoint, seeded and covers every user") {
    std::vector<std::string> users;
    for (int i = 0; i < 100; ++i) users.push_back("u" + std::to_string(i));
    const auto a = split_users("d", users, 0.2, 5);
    const auto b = split_users("d", users, 0.2, 5);
    const auto c = split_users("d", users, 0.2, 6);
    CHECK(a.evaluation_users.size() == 20);
    CHECK(a.construction_users.size() == 80);
    CHECK(a.evaluation_users == b.evaluation_users);
    CHECK(a.evaluation_users != c.evaluation_users);
    std::set<std::string> all(a.evaluation_users.begin(), a.evaluation_users.end());
    for (const auto& u : a.construction_users) CHECK(all.insert(u).second);
    CHECK(all.size() == 100);
    CHECK(a.is_evaluation(a.evaluation_users.front()));
    CHECK_FALSE(a.is_evaluation(a.construction_users.front()));
    CHECK_THROWS_AS(split_users("d", {"only"}, 0.2, 1), EmptyDatasetError);
}

TEST_CASE("canonical files round-trip") {
    testing::TempDir tmp("canon");
    const auto adapter = load_adapter(testing::fixture("e2e/movies.adapter.json"));
    const auto catalog = load_catalog(adapter);
    const auto log = load_interactions(adapter, catalog.catalog);
    write_file_atomic(tmp.path() / "catalog.jsonl", catalog_to_jsonl(catalog.catalog));
    write_file_atomic(tmp.path() / "interactions.jsonl", interactions_to_jsonl(log));
    const auto catalog2 = catalog_from_jsonl(tmp.path() / "catalog.jsonl");
    CHECK(catalog_to_jsonl(catalog2) == catalog_to_jsonl(catalog.catalog));
    const auto by_user = interactions_from_jsonl(tmp.path() / "interactions.jsonl");
    CHECK(by_user == log.by_user);
    const auto split = split_users("movies", {"a", "b", "c", "d", "e"}, 0.4, 3);
    const auto back = split_from_json(Json::parse(split_to_json(split, 0.4, 3).dump()));
    CHECK(back.evaluation_users == split.evaluation_users);
    CHECK_THROWS_AS(catalog_from_jsonl(tmp.path() / "absent.jsonl"), MissingArtifact);
}
