// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "fairtk/dataset.hpp"
#include "fairtk/rng.hpp"

using namespace fairtk;
namespace fs = std::filesystem;

namespace {

DatasetSchema toy_schema() {
    DatasetSchema schema;
    schema.d1 = 3;
    schema.K_p = 4;
    schema.sensitive = {{"age_group", 5}, {"gender", 2}};
    return schema;
}

fs::path temp_file(const std::string& name) {
    static int counter = 0;
    return fs::temp_directory_path() / ("fairtk_test_" + std::to_string(counter++) + "_" + name);
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

} // namespace

TEST_CASE("schema JSON round-trip") {
    const DatasetSchema schema = toy_schema();
    const DatasetSchema reread = DatasetSchema::from_json(schema.to_json());
    CHECK(reread.d1 == schema.d1);
    CHECK(reread.K_p == schema.K_p);
    REQUIRE(reread.sensitive.size() == 2);
    CHECK(reread.sensitive[0].name == "age_group");
    CHECK(reread.sensitive[1].cardinality == 2);
}

TEST_CASE("schema invariants") {
    DatasetSchema schema = toy_schema();
    schema.d1 = 0;
    CHECK_THROWS_AS(schema.validate(), ValidationError);
    schema = toy_schema();
    schema.K_p = 1;
    CHECK_THROWS_AS(schema.validate(), ValidationError);
    schema = toy_schema();
    schema.sensitive.push_back({"age_group", 3});
    CHECK_THROWS_AS(schema.validate(), ValidationError);
    schema = toy_schema();
    schema.sensitive[0].cardinality = 1;
    CHECK_THROWS_AS(schema.validate(), ValidationError);
}

TEST_CASE("empty body with valid header loads as empty dataset") {
    const DatasetSchema schema = toy_schema();
    const fs::path p = temp_file("empty.csv");
    write_text(p, dataset_csv_header(schema) + "\n");
    const Dataset ds = load_dataset(p, schema);
    CHECK(ds.records.empty());
}

TEST_CASE("empty dataset saves as header-only file") {
    Dataset ds;
    ds.schema = toy_schema();
    const fs::path p = temp_file("empty_out.csv");
    save_dataset(ds, p);
    CHECK(io::read_file(p) == dataset_csv_header(ds.schema) + "\n");
}

TEST_CASE("one record saves as one data row") {
    Dataset ds;
    ds.schema = toy_schema();
    EmbeddingRecord r;
    r.id = "a";
    r.z = {1.0, 2.0, 3.0};
    r.y_p = 1;
    r.y_sens = {4, 0};
    ds.records.push_back(r);
    const fs::path p = temp_file("one.csv");
    save_dataset(ds, p);
    const std::string text = io::read_file(p);
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    const Dataset reread = load_dataset(p, ds.schema);
    REQUIRE(reread.records.size() == 1);
    CHECK(reread.records[0].id == "a");
    CHECK(reread.records[0].y_sens == std::vector<int>{4, 0});
}

TEST_CASE("label at or above its cardinality fails with the line number") {
    const DatasetSchema schema = toy_schema();
    const fs::path p = temp_file("badlabel.csv");
    write_text(p, dataset_csv_header(schema) + "\n" +
                      "a,0,0,0,1,0,0,,,\n" +
                      "b,0,0,0,4,0,0,,,\n"); // y_p = 4 >= K_p on line 3
    CHECK_THROWS_WITH(load_dataset(p, schema), Catch::Matchers::ContainsSubstring(":3"));
}

TEST_CASE("wrong field count fails with the line number") {
    const DatasetSchema schema = toy_schema();
    const fs::path p = temp_file("short.csv");
    write_text(p, dataset_csv_header(schema) + "\n" + "a,0,0,0,1,0\n");
    CHECK_THROWS_WITH(load_dataset(p, schema), Catch::Matchers::ContainsSubstring(":2"));
}

TEST_CASE("header mismatch is a schema error") {
    const DatasetSchema schema = toy_schema();
    const fs::path p = temp_file("badheader.csv");
    write_text(p, "id,z0,z1,y_p,age_group,gender,age,gender,ita\n");
    CHECK_THROWS_AS(load_dataset(p, schema), ValidationError);
}

TEST_CASE("duplicate ids are rejected") {
    const DatasetSchema schema = toy_schema();
    const fs::path p = temp_file("dup.csv");
    write_text(p, dataset_csv_header(schema) + "\n" +
                      "a,0,0,0,1,0,0,,,\n" +
                      "a,0,0,0,1,0,0,,,\n");
    CHECK_THROWS_WITH(load_dataset(p, schema), Catch::Matchers::ContainsSubstring("duplicate"));
}

TEST_CASE("metadata validation") {
    const DatasetSchema schema = toy_schema();
    const fs::path p = temp_file("meta.csv");
    write_text(p, dataset_csv_header(schema) + "\n" + "a,0,0,0,1,0,0,101,M,12.5\n");
    CHECK_THROWS_WITH(load_dataset(p, schema), Catch::Matchers::ContainsSubstring("age"));
    write_text(p, dataset_csv_header(schema) + "\n" + "a,0,0,0,1,0,0,55,X,12.5\n");
    CHECK_THROWS_WITH(load_dataset(p, schema), Catch::Matchers::ContainsSubstring("gender"));
}

TEST_CASE("save then load is the identity on 1000 random records") {
    DatasetSchema schema = toy_schema();
    schema.d1 = 7;
    Dataset ds;
    ds.schema = schema;
    Rng rng(42);
    for (int i = 0; i < 1000; ++i) {
        EmbeddingRecord r;
        r.id = "rec" + std::to_string(i);
        for (int j = 0; j < schema.d1; ++j)
            r.z.push_back((rng.uniform() - 0.5) * std::pow(10.0, rng.below(8)) + rng.normal());
        r.y_p = static_cast<int>(rng.below(schema.K_p));
        r.y_sens = {static_cast<int>(rng.below(5)), static_cast<int>(rng.below(2))};
        if (rng.uniform() < 0.5) r.age_years = static_cast<int>(rng.below(101));
        if (rng.uniform() < 0.5) r.gender = rng.uniform() < 0.5 ? Gender::F : Gender::M;
        if (rng.uniform() < 0.5) r.ita_degrees = rng.normal() * 30.0;
        ds.records.push_back(std::move(r));
    }

    const fs::path p = temp_file("roundtrip.csv");
    save_dataset(ds, p);
    const Dataset reread = load_dataset(p, schema);
    REQUIRE(reread.records.size() == ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto& a = ds.records[i];
        const auto& b = reread.records[i];
        CHECK(a.id == b.id);
        CHECK(a.y_p == b.y_p);
        CHECK(a.y_sens == b.y_sens);
        CHECK(a.age_years == b.age_years);
        CHECK(a.gender == b.gender);
        REQUIRE(a.z.size() == b.z.size());
        for (std::size_t j = 0; j < a.z.size(); ++j)
            CHECK(std::abs(a.z[j] - b.z[j]) <= 1e-12 * std::max(1.0, std::abs(a.z[j])));
        if (a.ita_degrees)
            CHECK(std::abs(*a.ita_degrees - *b.ita_degrees) <= 1e-12);
    }

    // Saving the reread dataset reproduces the file byte-for-byte.
    const fs::path p2 = temp_file("roundtrip2.csv");
    save_dataset(reread, p2);
    CHECK(io::read_file(p) == io::read_file(p2));
}
