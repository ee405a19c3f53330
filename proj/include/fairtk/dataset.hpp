// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairtk/error.hpp"
#include "fairtk/io.hpp"

namespace fairtk {

enum class Gender { F, M };

inline std::string to_string(Gender g) { return g == Gender::F ? "F" : "M"; }

inline Gender gender_from_string(const std::string& s, const std::string& context) {
    if (s == "F") return Gender::F;
    if (s == "M") return Gender::M;
    throw ValidationError(context + ": gender must be F or M, got '" + s + "'");
}

struct SensitiveAttribute {
    std::string name;
    int cardinality = 0;
};

struct DatasetSchema {
    int d1 = 0;
    int K_p = 0;
    std::vector<SensitiveAttribute> sensitive;

    int attribute_count() const { return static_cast<int>(sensitive.size()); }

    int index_of(const std::string& name) const {
        for (std::size_t i = 0; i < sensitive.size(); ++i)
            if (sensitive[i].name == name) return static_cast<int>(i);
        return -1;
    }

    void validate() const {
        if (d1 <= 0) throw ValidationError("schema: d1 must be positive");
        if (K_p < 2) throw ValidationError("schema: K_p must be at least 2");
        std::set<std::string> names;
        for (const auto& attr : sensitive) {
            if (attr.name.empty()) throw ValidationError("schema: sensitive attribute with empty name");
            if (attr.cardinality < 2)
                throw ValidationError("schema: attribute '" + attr.name + "' needs cardinality >= 2");
            if (!names.insert(attr.name).second)
                throw ValidationError("schema: duplicate attribute name '" + attr.name + "'");
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json sens = nlohmann::json::array();
        for (const auto& attr : sensitive) sens.push_back({{"name", attr.name}, {"K", attr.cardinality}});
        return {{"d1", d1}, {"K_p", K_p}, {"sensitive", sens}};
    }

    static DatasetSchema from_json(const nlohmann::json& j) {
        DatasetSchema schema;
        try {
            schema.d1 = j.at("d1").get<int>();
            schema.K_p = j.at("K_p").get<int>();
            for (const auto& attr : j.at("sensitive"))
                schema.sensitive.push_back({attr.at("name").get<std::string>(), attr.at("K").get<int>()});
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(std::string("schema JSON: ") + e.what());
        }
        schema.validate();
        return schema;
    }

    static DatasetSchema load(const std::filesystem::path& path) {
        nlohmann::json j = nlohmann::json::parse(io::read_file(path), nullptr, false);
        if (j.is_discarded()) throw ValidationError("schema JSON unparseable: " + path.string());
        return from_json(j);
    }

    void save(const std::filesystem::path& path) const {
        io::write_file_atomic(path, to_json().dump(2) + "\n");
    }
};

struct EmbeddingRecord {
    std::string id;
    std::vector<double> z;
    int y_p = 0;
    std::vector<int> y_sens;
    std::optional<int> age_years;
    std::optional<Gender> gender;
    std::optional<double> ita_degrees;
};

inline void validate_record(const EmbeddingRecord& r, const DatasetSchema& schema,
                            const std::string& context) {
    if (r.id.empty()) throw ValidationError(context + ": empty record id");
    if (static_cast<int>(r.z.size()) != schema.d1)
        throw ValidationError(context + ": embedding has dimension " + std::to_string(r.z.size()) +
                              ", schema declares d1=" + std::to_string(schema.d1));
    for (double v : r.z)
        if (!std::isfinite(v)) throw ValidationError(context + ": non-finite embedding value");
    if (r.y_p < 0 || r.y_p >= schema.K_p)
        throw ValidationError(context + ": y_p=" + std::to_string(r.y_p) + " outside [0," +
                              std::to_string(schema.K_p) + ")");
    if (r.y_sens.size() != schema.sensitive.size())
        throw ValidationError(context + ": " + std::to_string(r.y_sens.size()) +
                              " sensitive labels, schema declares " +
                              std::to_string(schema.sensitive.size()));
    for (std::size_t i = 0; i < r.y_sens.size(); ++i)
        if (r.y_sens[i] < 0 || r.y_sens[i] >= schema.sensitive[i].cardinality)
            throw ValidationError(context + ": label '" + schema.sensitive[i].name + "'=" +
                                  std::to_string(r.y_sens[i]) + " outside [0," +
                                  std::to_string(schema.sensitive[i].cardinality) + ")");
    if (r.age_years && (*r.age_years < 0 || *r.age_years > 100))
        throw ValidationError(context + ": age " + std::to_string(*r.age_years) + " outside [0,100]");
    if (r.ita_degrees && !std::isfinite(*r.ita_degrees))
        throw ValidationError(context + ": non-finite ITA");
}

struct Dataset {
    DatasetSchema schema;
    std::vector<EmbeddingRecord> records;

    std::size_t size() const { return records.size(); }
};

inline std::string dataset_csv_header(const DatasetSchema& schema) {
    std::string header = "id";
    for (int i = 0; i < schema.d1; ++i) header += ",z" + std::to_string(i);
    header += ",y_p";
    for (const auto& attr : schema.sensitive) header += "," + attr.name;
    header += ",age,gender,ita";
    return header;
}

/// Loads the embedding CSV (header `id,z0..z{d1-1},y_p,<sens...>,age,gender,ita`).
/// Errors carry the 1-based line number; the header is line 1.
inline Dataset load_dataset(const std::filesystem::path& path, const DatasetSchema& schema) {
    schema.validate();
    const std::string content = io::read_file(path);
    Dataset ds;
    ds.schema = schema;

    const std::string expected_header = dataset_csv_header(schema);
    const std::size_t n_fields = 1 + static_cast<std::size_t>(schema.d1) + 1 +
                                 schema.sensitive.size() + 3;

    std::istringstream in(content);
    std::string line;
    std::size_t line_no = 0;
    std::unordered_set<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (line != expected_header)
                throw ValidationError(path.string() + ":1: header does not match schema (expected '" +
                                      expected_header + "')");
            continue;
        }
        if (line.empty()) continue;
        const std::string context = path.string() + ":" + std::to_string(line_no);
        const auto fields = io::split(line, ',');
        if (fields.size() != n_fields)
            throw ValidationError(context + ": expected " + std::to_string(n_fields) + " fields, got " +
                                  std::to_string(fields.size()));

        EmbeddingRecord r;
        std::size_t f = 0;
        r.id = fields[f++];
        if (!seen_ids.insert(r.id).second)
            throw ValidationError(context + ": duplicate record id '" + r.id + "'");
        r.z.resize(schema.d1);
        for (int i = 0; i < schema.d1; ++i) r.z[i] = io::parse_double(fields[f++], context);
        r.y_p = static_cast<int>(io::parse_int(fields[f++], context));
        r.y_sens.resize(schema.sensitive.size());
        for (std::size_t i = 0; i < schema.sensitive.size(); ++i)
            r.y_sens[i] = static_cast<int>(io::parse_int(fields[f++], context));
        if (!fields[f].empty()) r.age_years = static_cast<int>(io::parse_int(fields[f], context));
        ++f;
        if (!fields[f].empty()) r.gender = gender_from_string(fields[f], context);
        ++f;
        if (!fields[f].empty()) r.ita_degrees = io::parse_double(fields[f], context);

        validate_record(r, schema, context);
        ds.records.push_back(std::move(r));
    }
    if (line_no == 0) throw ValidationError(path.string() + ": empty file (missing header)");
    return ds;
}

inline std::string dataset_to_csv(const Dataset& ds) {
    std::string out = dataset_csv_header(ds.schema) + "\n";
    for (const auto& r : ds.records) {
        out += r.id;
        for (double v : r.z) {
            out += ',';
            out += io::format_double(v);
        }
        out += ',' + std::to_string(r.y_p);
        for (int label : r.y_sens) out += ',' + std::to_string(label);
        out += ',';
        if (r.age_years) out += std::to_string(*r.age_years);
        out += ',';
        if (r.gender) out += to_string(*r.gender);
        out += ',';
        if (r.ita_degrees) out += io::format_double(*r.ita_degrees);
        out += '\n';
    }
    return out;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    ds.schema.validate();
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const std::string context = "record " + std::to_string(i);
        const EmbeddingRecord& r = ds.records[i];
        if (r.id.find(',') != std::string::npos || r.id.find('\n') != std::string::npos)
            throw ValidationError(context + ": id contains a delimiter");
        validate_record(r, ds.schema, context);
    }
    io::write_file_atomic(path, dataset_to_csv(ds));
}

} // namespace fairtk
