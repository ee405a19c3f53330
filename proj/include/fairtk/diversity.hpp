// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairtk/binning.hpp"
#include "fairtk/dataset.hpp"
#include "fairtk/error.hpp"

namespace fairtk {

/// Normalized distribution over S classes.
class ProbabilityVector {
public:
    static ProbabilityVector from(std::vector<double> p) {
        if (p.empty()) throw ValidationError("probability vector must have at least one class");
        double sum = 0.0;
        for (double v : p) {
            if (!(v >= 0.0)) throw ValidationError("probability vector has a negative or NaN entry");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ValidationError("probability vector sums to " + std::to_string(sum) + ", not 1");
        ProbabilityVector pv;
        pv.p_ = std::move(p);
        return pv;
    }

    const std::vector<double>& values() const { return p_; }
    int size() const { return static_cast<int>(p_.size()); }
    double operator[](int i) const { return p_[static_cast<std::size_t>(i)]; }

private:
    std::vector<double> p_;
};

enum class LogBase { natural, two };

inline double log_in_base(double x, LogBase base) {
    return base == LogBase::natural ? std::log(x) : std::log2(x);
}

/// Empirical class distribution of a list of bin indices.
inline ProbabilityVector histogram(const std::vector<int>& values, int S) {
    if (S < 1) throw ValidationError("histogram: S must be at least 1");
    if (values.empty()) throw ValidationError("histogram: empty input");
    std::vector<double> counts(static_cast<std::size_t>(S), 0.0);
    for (int v : values) {
        if (v < 0 || v >= S)
            throw ValidationError("histogram: index " + std::to_string(v) + " outside [0," +
                                  std::to_string(S) + ")");
        counts[static_cast<std::size_t>(v)] += 1.0;
    }
    const double total = static_cast<double>(values.size());
    for (double& c : counts) c /= total;
    return ProbabilityVector::from(std::move(counts));
}

/// Shannon diversity H = -sum p_i log p_i, with 0 log 0 taken as 0.
inline double shannon_h(const ProbabilityVector& p, LogBase base = LogBase::natural) {
    double h = 0.0;
    for (double v : p.values())
        if (v > 0.0) h -= v * log_in_base(v, base);
    return h < 0.0 ? 0.0 : h; // clamp the -0.0 of one-hot inputs
}

/// Shannon evenness E = H / log S; base-independent. Undefined for S = 1.
inline double shannon_e(const ProbabilityVector& p, LogBase base = LogBase::natural) {
    if (p.size() < 2) throw ValidationError("shannon_e undefined for a single class");
    return shannon_h(p, base) / log_in_base(static_cast<double>(p.size()), base);
}

/// Simpson diversity D = 1 / sum p_i^2, in [1, S].
inline double simpson_d(const ProbabilityVector& p) {
    double sum_sq = 0.0;
    for (double v : p.values()) sum_sq += v * v;
    return 1.0 / sum_sq;
}

/// Simpson evenness E = D / S, in (0, 1].
inline double simpson_e(const ProbabilityVector& p) {
    return simpson_d(p) / static_cast<double>(p.size());
}

struct ItaAngle {
    double degrees = 0.0;
    /// Set when b* = 0 made the angle degenerate (returned as +-90 or 0).
    bool degenerate = false;
};

/// Individual typology angle from CIELAB lightness L* and yellow-blue b*:
/// arctan((L - 50) / b) in degrees.
inline ItaAngle ita_from_lab(double L, double b) {
    if (!std::isfinite(L) || !std::isfinite(b)) throw ValidationError("ITA inputs must be finite");
    if (b == 0.0) {
        if (L == 50.0) return {0.0, true};
        return {L > 50.0 ? 90.0 : -90.0, true};
    }
    return {std::atan((L - 50.0) / b) * 180.0 / std::numbers::pi, false};
}

struct DiversityRow {
    std::string attribute;
    double SiD = 0.0;
    double SiE = 0.0;
    double ShH = 0.0;
    double ShE = 0.0;
    double mean = 0.0;
    double stddev = 0.0;
};

/// Which record field feeds a diversity row and how it is discretized.
struct AttributeSpec {
    enum class Source { gender, age, ita, sensitive };

    std::string name;
    Source source = Source::gender;
    std::string sensitive_name;
    std::optional<BinningScheme> binning; // when absent, values are categorical codes
    int categories = 0;                   // S for the categorical case

    static AttributeSpec gender() { return {"gender", Source::gender, "", std::nullopt, 2}; }
    /// Raw integer ages as 101 categories (how the whole-dataset table treats age).
    static AttributeSpec age_raw() { return {"age", Source::age, "", std::nullopt, 101}; }
    static AttributeSpec age_binned() {
        return {"age5", Source::age, "", BinningScheme::age5(), 0};
    }
    static AttributeSpec ita() { return {"ita", Source::ita, "", BinningScheme::ita5(), 0}; }
    static AttributeSpec sensitive(const std::string& attr_name, int cardinality) {
        return {attr_name, Source::sensitive, attr_name, std::nullopt, cardinality};
    }

    int class_count() const { return binning ? binning->size() : categories; }
};

namespace detail {

inline void missing_metadata_error(const std::string& attribute, const std::vector<std::string>& ids) {
    std::string msg = "attribute '" + attribute + "' missing on records: ";
    const std::size_t shown = std::min<std::size_t>(ids.size(), 20);
    for (std::size_t i = 0; i < shown; ++i) {
        if (i) msg += ", ";
        msg += ids[i];
    }
    if (ids.size() > shown) msg += ", and " + std::to_string(ids.size() - shown) + " more";
    throw ValidationError(msg);
}

} // namespace detail

/// One diversity row: indices over the binned distribution, mean/std
/// (population) over the underlying numeric values.
inline DiversityRow diversity_row(const Dataset& ds, const AttributeSpec& spec,
                                  LogBase base = LogBase::natural) {
    int sensitive_index = -1;
    if (spec.source == AttributeSpec::Source::sensitive) {
        sensitive_index = ds.schema.index_of(spec.sensitive_name);
        if (sensitive_index < 0)
            throw ValidationError("unknown sensitive attribute '" + spec.sensitive_name + "'");
    }

    std::vector<int> codes;
    std::vector<double> numeric;
    std::vector<std::string> missing;
    codes.reserve(ds.records.size());
    numeric.reserve(ds.records.size());
    for (const auto& r : ds.records) {
        switch (spec.source) {
        case AttributeSpec::Source::gender:
            if (!r.gender) { missing.push_back(r.id); continue; }
            codes.push_back(*r.gender == Gender::M ? 1 : 0);
            numeric.push_back(static_cast<double>(codes.back()));
            break;
        case AttributeSpec::Source::age:
            if (!r.age_years) { missing.push_back(r.id); continue; }
            codes.push_back(spec.binning ? *spec.binning->find(static_cast<double>(*r.age_years))
                                         : *r.age_years);
            numeric.push_back(static_cast<double>(*r.age_years));
            break;
        case AttributeSpec::Source::ita:
            if (!r.ita_degrees) { missing.push_back(r.id); continue; }
            codes.push_back(bin_ita(*r.ita_degrees).index);
            numeric.push_back(*r.ita_degrees);
            break;
        case AttributeSpec::Source::sensitive:
            codes.push_back(r.y_sens[static_cast<std::size_t>(sensitive_index)]);
            numeric.push_back(static_cast<double>(codes.back()));
            break;
        }
    }
    if (!missing.empty()) detail::missing_metadata_error(spec.name, missing);
    if (codes.empty()) throw ValidationError("attribute '" + spec.name + "': no records");

    const ProbabilityVector p = histogram(codes, spec.class_count());

    double mean = 0.0;
    for (double v : numeric) mean += v;
    mean /= static_cast<double>(numeric.size());
    double var = 0.0;
    for (double v : numeric) var += (v - mean) * (v - mean);
    var /= static_cast<double>(numeric.size());

    DiversityRow row;
    row.attribute = spec.name;
    row.SiD = simpson_d(p);
    row.SiE = simpson_e(p);
    row.ShH = shannon_h(p, base);
    row.ShE = p.size() >= 2 ? shannon_e(p, base) : 0.0;
    row.mean = mean;
    row.stddev = std::sqrt(var);
    return row;
}

inline std::vector<DiversityRow> diversity_report(const Dataset& ds,
                                                  const std::vector<AttributeSpec>& specs,
                                                  LogBase base = LogBase::natural) {
    std::vector<DiversityRow> rows;
    rows.reserve(specs.size());
    for (const auto& spec : specs) rows.push_back(diversity_row(ds, spec, base));
    return rows;
}

inline std::string diversity_report_csv(const std::vector<DiversityRow>& rows) {
    std::string out = "attribute,SiD,SiE,ShH,ShE,mean,std\n";
    for (const auto& r : rows) {
        out += r.attribute;
        for (double v : {r.SiD, r.SiE, r.ShH, r.ShE, r.mean, r.stddev}) {
            out += ',';
            out += io::format_double(v);
        }
        out += '\n';
    }
    return out;
}

inline nlohmann::json diversity_report_json(const std::vector<DiversityRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows)
        arr.push_back({{"attribute", r.attribute},
                       {"SiD", r.SiD},
                       {"SiE", r.SiE},
                       {"ShH", r.ShH},
                       {"ShE", r.ShE},
                       {"mean", r.mean},
                       {"std", r.stddev}});
    return arr;
}

} // namespace fairtk
