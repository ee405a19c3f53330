// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairtk/binning.hpp"
#include "fairtk/dataset.hpp"
#include "fairtk/diversity.hpp"
#include "fairtk/error.hpp"

namespace fairtk {

enum class Task { classification, age_regression, verification };

inline std::string to_string(Task t) {
    switch (t) {
    case Task::classification: return "classification";
    case Task::age_regression: return "age";
    case Task::verification: return "verification";
    }
    return "?";
}

/// The seven kin relationships.
enum class Relationship { BB, SS, SB, MS, MD, FS, FD };

inline const std::vector<std::string>& relationship_labels() {
    static const std::vector<std::string> labels = {"B-B", "S-S", "S-B", "M-S", "M-D", "F-S", "F-D"};
    return labels;
}

inline Relationship relationship_from_string(const std::string& s, const std::string& context) {
    const auto& labels = relationship_labels();
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == s) return static_cast<Relationship>(i);
    throw ValidationError(context + ": unknown relationship '" + s + "'");
}

struct ClassificationEntry {
    std::string record_id;
    int predicted = 0;
    int target = 0;
};

struct AgeEntry {
    std::string record_id;
    double predicted = 0.0;
    double target = 0.0;
};

struct VerificationEntry {
    std::string record_id;
    bool predicted = false;
    bool target = false;
    Relationship relationship = Relationship::BB;
    double age_difference = 0.0;
};

/// A log of predictions of one task kind.
struct PredictionLog {
    Task task = Task::classification;
    std::vector<ClassificationEntry> classification;
    std::vector<AgeEntry> age;
    std::vector<VerificationEntry> verification;

    std::size_t size() const {
        switch (task) {
        case Task::classification: return classification.size();
        case Task::age_regression: return age.size();
        case Task::verification: return verification.size();
        }
        return 0;
    }

    void validate() const {
        for (std::size_t i = 0; i < verification.size(); ++i)
            if (!(verification[i].age_difference >= 0.0))
                throw ValidationError("verification entry " + std::to_string(i) +
                                      ": age difference must be >= 0");
        for (const auto& e : age)
            if (!std::isfinite(e.predicted) || !std::isfinite(e.target))
                throw ValidationError("age entry '" + e.record_id + "': non-finite value");
    }

    /// CSV columns: `id,predicted,target` for classification and age tasks,
    /// `id,predicted,target,relationship,age_difference` for verification
    /// (predicted/target are 0/1 there).
    static PredictionLog load_csv(const std::filesystem::path& path, Task task) {
        const std::string content = io::read_file(path);
        PredictionLog log;
        log.task = task;
        const std::string expected_header = task == Task::verification
                                                ? "id,predicted,target,relationship,age_difference"
                                                : "id,predicted,target";
        std::istringstream in(content);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line_no == 1) {
                if (line != expected_header)
                    throw ValidationError(path.string() + ":1: expected header '" + expected_header + "'");
                continue;
            }
            if (line.empty()) continue;
            const std::string context = path.string() + ":" + std::to_string(line_no);
            const auto fields = io::split(line, ',');
            switch (task) {
            case Task::classification:
                if (fields.size() != 3) throw ValidationError(context + ": expected 3 fields");
                log.classification.push_back({fields[0],
                                              static_cast<int>(io::parse_int(fields[1], context)),
                                              static_cast<int>(io::parse_int(fields[2], context))});
                break;
            case Task::age_regression:
                if (fields.size() != 3) throw ValidationError(context + ": expected 3 fields");
                log.age.push_back({fields[0], io::parse_double(fields[1], context),
                                   io::parse_double(fields[2], context)});
                break;
            case Task::verification: {
                if (fields.size() != 5) throw ValidationError(context + ": expected 5 fields");
                const auto parse_bool = [&](const std::string& s) {
                    if (s == "0") return false;
                    if (s == "1") return true;
                    throw ValidationError(context + ": expected 0 or 1, got '" + s + "'");
                };
                log.verification.push_back({fields[0], parse_bool(fields[1]), parse_bool(fields[2]),
                                            relationship_from_string(fields[3], context),
                                            io::parse_double(fields[4], context)});
                break;
            }
            }
        }
        if (line_no == 0) throw ValidationError(path.string() + ": empty file (missing header)");
        log.validate();
        return log;
    }

    std::string to_csv() const {
        std::string out;
        switch (task) {
        case Task::classification:
            out = "id,predicted,target\n";
            for (const auto& e : classification)
                out += e.record_id + ',' + std::to_string(e.predicted) + ',' +
                       std::to_string(e.target) + '\n';
            break;
        case Task::age_regression:
            out = "id,predicted,target\n";
            for (const auto& e : age)
                out += e.record_id + ',' + io::format_double(e.predicted) + ',' +
                       io::format_double(e.target) + '\n';
            break;
        case Task::verification:
            out = "id,predicted,target,relationship,age_difference\n";
            for (const auto& e : verification)
                out += e.record_id + ',' + (e.predicted ? "1" : "0") + ',' + (e.target ? "1" : "0") +
                       ',' + relationship_labels()[static_cast<std::size_t>(e.relationship)] + ',' +
                       io::format_double(e.age_difference) + '\n';
            break;
        }
        return out;
    }
};

/// Expected-age decoding of a 101-way distribution over ages 0..100.
inline double expected_age(const ProbabilityVector& p) {
    if (p.size() != 101)
        throw ValidationError("expected_age needs 101 classes, got " + std::to_string(p.size()));
    double o = 0.0;
    for (int j = 0; j <= 100; ++j) o += p[j] * static_cast<double>(j);
    return o;
}

inline double mae(std::span<const double> predictions, std::span<const double> targets) {
    if (predictions.empty()) throw ValidationError("mae: empty input");
    if (predictions.size() != targets.size())
        throw ValidationError("mae: length mismatch (" + std::to_string(predictions.size()) + " vs " +
                              std::to_string(targets.size()) + ")");
    double sum = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) sum += std::abs(predictions[i] - targets[i]);
    return sum / static_cast<double>(predictions.size());
}

inline double accuracy(std::span<const int> predicted, std::span<const int> target) {
    if (predicted.empty()) throw ValidationError("accuracy: empty input");
    if (predicted.size() != target.size())
        throw ValidationError("accuracy: length mismatch (" + std::to_string(predicted.size()) +
                              " vs " + std::to_string(target.size()) + ")");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        if (predicted[i] == target[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

enum class Metric { accuracy, mae };

/// One slicing axis of a grouped table, resolved against record metadata.
struct AxisSpec {
    enum class Kind { gender, age5, ita5, sensitive };

    std::string name;
    Kind kind = Kind::gender;
    std::string sensitive_name;

    static AxisSpec gender() { return {"gender", Kind::gender, ""}; }
    static AxisSpec age5() { return {"age", Kind::age5, ""}; }
    static AxisSpec ita5() { return {"ita", Kind::ita5, ""}; }
    static AxisSpec sensitive(const std::string& attr_name) {
        return {attr_name, Kind::sensitive, attr_name};
    }

    std::vector<std::string> labels(const DatasetSchema& schema) const {
        switch (kind) {
        case Kind::gender: return {"F", "M"};
        case Kind::age5: return BinningScheme::age5().labels();
        case Kind::ita5: return BinningScheme::ita5().labels();
        case Kind::sensitive: {
            const int idx = schema.index_of(sensitive_name);
            if (idx < 0) throw ValidationError("unknown sensitive attribute '" + sensitive_name + "'");
            std::vector<std::string> out;
            for (int k = 0; k < schema.sensitive[static_cast<std::size_t>(idx)].cardinality; ++k)
                out.push_back(std::to_string(k));
            return out;
        }
        }
        return {};
    }

    int resolve(const EmbeddingRecord& r, const DatasetSchema& schema) const {
        switch (kind) {
        case Kind::gender:
            if (!r.gender) throw ValidationError("record '" + r.id + "' has no gender metadata");
            return *r.gender == Gender::M ? 1 : 0;
        case Kind::age5:
            if (!r.age_years) throw ValidationError("record '" + r.id + "' has no age metadata");
            return bin_age(*r.age_years);
        case Kind::ita5:
            if (!r.ita_degrees) throw ValidationError("record '" + r.id + "' has no ITA metadata");
            return bin_ita(*r.ita_degrees).index;
        case Kind::sensitive: {
            const int idx = schema.index_of(sensitive_name);
            if (idx < 0) throw ValidationError("unknown sensitive attribute '" + sensitive_name + "'");
            return r.y_sens[static_cast<std::size_t>(idx)];
        }
        }
        return 0;
    }
};

/// Metric values per demographic cell. Cells are stored row-major over the
/// axis label lists; empty cells carry no value and a zero support count.
struct GroupedMetricTable {
    struct Axis {
        std::string name;
        std::vector<std::string> labels;
    };
    struct Cell {
        std::optional<double> value;
        std::size_t count = 0;
    };

    std::vector<Axis> axes;
    std::vector<Cell> cells;
    Cell overall;

    std::size_t cell_count() const { return cells.size(); }

    std::size_t flat_index(std::span<const int> key) const {
        if (key.size() != axes.size()) throw ValidationError("cell key arity mismatch");
        std::size_t idx = 0;
        for (std::size_t a = 0; a < axes.size(); ++a) {
            const int k = key[a];
            const std::size_t n = axes[a].labels.size();
            if (k < 0 || static_cast<std::size_t>(k) >= n)
                throw ValidationError("cell key out of range on axis '" + axes[a].name + "'");
            idx = idx * n + static_cast<std::size_t>(k);
        }
        return idx;
    }

    std::vector<int> key_of(std::size_t flat) const {
        std::vector<int> key(axes.size(), 0);
        for (std::size_t a = axes.size(); a-- > 0;) {
            const std::size_t n = axes[a].labels.size();
            key[a] = static_cast<int>(flat % n);
            flat /= n;
        }
        return key;
    }

    const Cell& at(std::span<const int> key) const { return cells[flat_index(key)]; }

    nlohmann::json to_json() const {
        nlohmann::json jaxes = nlohmann::json::array();
        for (const auto& axis : axes) jaxes.push_back({{"name", axis.name}, {"labels", axis.labels}});
        nlohmann::json jcells = nlohmann::json::array();
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const auto key = key_of(i);
            nlohmann::json jkey = nlohmann::json::array();
            for (std::size_t a = 0; a < axes.size(); ++a)
                jkey.push_back(axes[a].labels[static_cast<std::size_t>(key[a])]);
            nlohmann::json value = cells[i].value ? nlohmann::json(*cells[i].value)
                                                  : nlohmann::json(nullptr);
            jcells.push_back({{"key", jkey}, {"value", value}, {"n", cells[i].count}});
        }
        nlohmann::json joverall = {{"value", overall.value ? nlohmann::json(*overall.value)
                                                           : nlohmann::json(nullptr)},
                                   {"n", overall.count}};
        return {{"axes", jaxes}, {"cells", jcells}, {"overall", joverall}};
    }

    std::string to_csv() const {
        std::string out;
        for (const auto& axis : axes) out += axis.name + ',';
        out += "value,n\n";
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const auto key = key_of(i);
            for (std::size_t a = 0; a < axes.size(); ++a)
                out += axes[a].labels[static_cast<std::size_t>(key[a])] + ',';
            out += (cells[i].value ? io::format_double(*cells[i].value) : std::string());
            out += ',' + std::to_string(cells[i].count) + '\n';
        }
        for (std::size_t a = 0; a < axes.size(); ++a) out += "*,";
        out += (overall.value ? io::format_double(*overall.value) : std::string());
        out += ',' + std::to_string(overall.count) + '\n';
        return out;
    }
};

namespace detail {

struct CellAccumulator {
    double sum = 0.0;
    std::size_t count = 0;
};

inline GroupedMetricTable finish_table(std::vector<GroupedMetricTable::Axis> axes,
                                       const std::vector<CellAccumulator>& accum) {
    GroupedMetricTable table;
    table.axes = std::move(axes);
    table.cells.resize(accum.size());
    double total_sum = 0.0;
    std::size_t total_count = 0;
    for (std::size_t i = 0; i < accum.size(); ++i) {
        table.cells[i].count = accum[i].count;
        if (accum[i].count > 0)
            table.cells[i].value = accum[i].sum / static_cast<double>(accum[i].count);
        total_sum += accum[i].sum;
        total_count += accum[i].count;
    }
    table.overall.count = total_count;
    if (total_count > 0) table.overall.value = total_sum / static_cast<double>(total_count);
    return table;
}

} // namespace detail

/// Per-cell metric over the demographic cells spanned by `axes`. Each log
/// entry is resolved to its dataset record; the metric in a cell is the mean
/// per-sample score of that cell's entries.
inline GroupedMetricTable group_slice(const PredictionLog& log, const Dataset& ds,
                                      const std::vector<AxisSpec>& axes, Metric metric) {
    if (axes.empty()) throw ValidationError("group_slice needs at least one axis");
    if (log.size() == 0) throw ValidationError("group_slice: empty prediction log");
    if (metric == Metric::mae && log.task != Task::age_regression)
        throw ValidationError("MAE requires an age log, got " + to_string(log.task));
    if (metric == Metric::accuracy && log.task == Task::age_regression)
        throw ValidationError("accuracy is undefined for an age log");
    log.validate();

    std::unordered_map<std::string, const EmbeddingRecord*> by_id;
    by_id.reserve(ds.records.size());
    for (const auto& r : ds.records) by_id.emplace(r.id, &r);

    std::vector<GroupedMetricTable::Axis> table_axes;
    std::size_t n_cells = 1;
    for (const auto& axis : axes) {
        table_axes.push_back({axis.name, axis.labels(ds.schema)});
        n_cells *= table_axes.back().labels.size();
    }

    std::vector<detail::CellAccumulator> accum(n_cells);
    const auto record_of = [&](const std::string& id) -> const EmbeddingRecord& {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw ValidationError("log entry references unknown record '" + id + "'");
        return *it->second;
    };
    const auto cell_of = [&](const EmbeddingRecord& r) {
        std::size_t idx = 0;
        for (std::size_t a = 0; a < axes.size(); ++a) {
            const int k = axes[a].resolve(r, ds.schema);
            idx = idx * table_axes[a].labels.size() + static_cast<std::size_t>(k);
        }
        return idx;
    };

    switch (log.task) {
    case Task::classification:
        for (const auto& e : log.classification) {
            auto& cell = accum[cell_of(record_of(e.record_id))];
            cell.sum += e.predicted == e.target ? 1.0 : 0.0;
            cell.count += 1;
        }
        break;
    case Task::age_regression:
        for (const auto& e : log.age) {
            auto& cell = accum[cell_of(record_of(e.record_id))];
            cell.sum += std::abs(e.predicted - e.target);
            cell.count += 1;
        }
        break;
    case Task::verification:
        for (const auto& e : log.verification) {
            auto& cell = accum[cell_of(record_of(e.record_id))];
            cell.sum += e.predicted == e.target ? 1.0 : 0.0;
            cell.count += 1;
        }
        break;
    }
    return detail::finish_table(std::move(table_axes), accum);
}

struct DisparitySummary {
    double max_value = 0.0;
    double min_value = 0.0;
    double gap = 0.0;
    double stddev = 0.0;
    std::vector<int> max_key;
    std::vector<int> min_key;

    nlohmann::json to_json(const GroupedMetricTable& table) const {
        const auto key_labels = [&](const std::vector<int>& key) {
            nlohmann::json out = nlohmann::json::array();
            for (std::size_t a = 0; a < table.axes.size(); ++a)
                out.push_back(table.axes[a].labels[static_cast<std::size_t>(key[a])]);
            return out;
        };
        return {{"max", {{"key", key_labels(max_key)}, {"value", max_value}}},
                {"min", {{"key", key_labels(min_key)}, {"value", min_value}}},
                {"gap", gap},
                {"std", stddev}};
    }
};

/// Max/min/gap and population std of the metric over nonempty cells.
inline DisparitySummary disparity_summary(const GroupedMetricTable& table) {
    DisparitySummary s;
    std::vector<double> values;
    bool first = true;
    for (std::size_t i = 0; i < table.cells.size(); ++i) {
        const auto& cell = table.cells[i];
        if (!cell.value) continue;
        values.push_back(*cell.value);
        if (first || *cell.value > s.max_value) {
            s.max_value = *cell.value;
            s.max_key = table.key_of(i);
        }
        if (first || *cell.value < s.min_value) {
            s.min_value = *cell.value;
            s.min_key = table.key_of(i);
        }
        first = false;
    }
    if (values.empty()) throw ValidationError("disparity_summary: all cells are empty");
    s.gap = s.max_value - s.min_value;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    s.stddev = std::sqrt(var / static_cast<double>(values.size()));
    return s;
}

/// Kinship verification accuracy over relationship x age-difference cells,
/// plus the per-relationship marginal. Pairs beyond 30 years land in an
/// explicit ">30" overflow bin instead of being dropped.
struct KinshipTable {
    GroupedMetricTable table;
    std::vector<GroupedMetricTable::Cell> per_relationship;
    bool has_overflow = false;

    nlohmann::json to_json() const {
        nlohmann::json j = table.to_json();
        nlohmann::json marginals = nlohmann::json::array();
        for (std::size_t r = 0; r < per_relationship.size(); ++r) {
            const auto& cell = per_relationship[r];
            marginals.push_back({{"relationship", relationship_labels()[r]},
                                 {"value", cell.value ? nlohmann::json(*cell.value)
                                                      : nlohmann::json(nullptr)},
                                 {"n", cell.count}});
        }
        j["per_relationship"] = marginals;
        j["has_overflow"] = has_overflow;
        return j;
    }
};

inline KinshipTable kinship_slice(const PredictionLog& log) {
    if (log.task != Task::verification)
        throw ValidationError("kinship_slice requires a verification log");
    if (log.verification.empty()) throw ValidationError("kinship_slice: empty log");
    log.validate();

    const auto& scheme = BinningScheme::agediff3();
    std::vector<std::string> diff_labels = scheme.labels();
    diff_labels.push_back(">30");
    const std::size_t n_rel = relationship_labels().size();
    const std::size_t n_diff = diff_labels.size();

    std::vector<detail::CellAccumulator> accum(n_rel * n_diff);
    std::vector<detail::CellAccumulator> rel_accum(n_rel);
    bool overflow = false;
    for (const auto& e : log.verification) {
        const auto bin = scheme.find(e.age_difference);
        std::size_t diff_idx;
        if (bin) {
            diff_idx = static_cast<std::size_t>(*bin);
        } else {
            diff_idx = n_diff - 1;
            overflow = true;
        }
        const std::size_t rel = static_cast<std::size_t>(e.relationship);
        const double score = e.predicted == e.target ? 1.0 : 0.0;
        auto& cell = accum[rel * n_diff + diff_idx];
        cell.sum += score;
        cell.count += 1;
        rel_accum[rel].sum += score;
        rel_accum[rel].count += 1;
    }

    KinshipTable out;
    out.table = detail::finish_table({{"relationship", relationship_labels()},
                                      {"age_difference", diff_labels}},
                                     accum);
    out.per_relationship.resize(n_rel);
    for (std::size_t r = 0; r < n_rel; ++r) {
        out.per_relationship[r].count = rel_accum[r].count;
        if (rel_accum[r].count > 0)
            out.per_relationship[r].value = rel_accum[r].sum / static_cast<double>(rel_accum[r].count);
    }
    out.has_overflow = overflow;
    return out;
}

} // namespace fairtk
