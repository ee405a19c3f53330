// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fairtk/error.hpp"

namespace fairtk {

enum class BinKind { age5, ita5, agediff3, custom };

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool lo_closed = true;
    bool hi_closed = true;

    bool contains(double v) const {
        const bool above = lo_closed ? v >= lo : v > lo;
        const bool below = hi_closed ? v <= hi : v < hi;
        return above && below;
    }
};

/// An ordered, non-overlapping, contiguous set of intervals with one label
/// per interval. Integer-domain schemes (ages) use closed intervals whose
/// neighbours differ by one; real-domain schemes are half-open (lo, hi]
/// with the first interval closed below.
class BinningScheme {
public:
    static BinningScheme custom(std::string name, std::vector<Interval> intervals,
                                std::vector<std::string> labels, bool integer_domain = false) {
        BinningScheme s;
        s.kind_ = BinKind::custom;
        s.name_ = std::move(name);
        s.intervals_ = std::move(intervals);
        s.labels_ = std::move(labels);
        s.integer_domain_ = integer_domain;
        s.validate();
        return s;
    }

    /// The five age classes 0-18, 19-30, 31-45, 46-60 and 61+ (capped at 100).
    static const BinningScheme& age5() {
        static const BinningScheme s = make(BinKind::age5, "age",
                                            {{0, 18}, {19, 30}, {31, 45}, {46, 60}, {61, 100}},
                                            {"0-18", "19-30", "31-45", "46-60", "61+"},
                                            /*integer_domain=*/true);
        return s;
    }

    /// The five skin-tone classes by individual typology angle. The printed
    /// "light" range overlaps "intermediate", so light is taken as (41, 55].
    static const BinningScheme& ita5() {
        constexpr double inf = std::numeric_limits<double>::infinity();
        static const BinningScheme s = make(BinKind::ita5, "ita",
                                            {{-30.0, 10.0, true, true},
                                             {10.0, 28.0, false, true},
                                             {28.0, 41.0, false, true},
                                             {41.0, 55.0, false, true},
                                             {55.0, inf, false, false}},
                                            {"brown", "tan", "intermediate", "light", "very light"});
        return s;
    }

    /// Kinship age-difference ranges 0-10, 11-20 and 21-30 years. Differences
    /// can be fractional, so the bins are (lo, hi] with the first closed below;
    /// the printed integer edges land in the same bins either way.
    static const BinningScheme& agediff3() {
        static const BinningScheme s = make(BinKind::agediff3, "age_difference",
                                            {{0.0, 10.0, true, true},
                                             {10.0, 20.0, false, true},
                                             {20.0, 30.0, false, true}},
                                            {"0-10", "11-20", "21-30"});
        return s;
    }

    BinKind kind() const { return kind_; }
    const std::string& name() const { return name_; }
    const std::vector<Interval>& intervals() const { return intervals_; }
    const std::vector<std::string>& labels() const { return labels_; }
    int size() const { return static_cast<int>(intervals_.size()); }

    /// Index of the interval containing v, or nullopt when v is outside the
    /// scheme's domain.
    std::optional<int> find(double v) const {
        for (std::size_t i = 0; i < intervals_.size(); ++i)
            if (intervals_[i].contains(v)) return static_cast<int>(i);
        return std::nullopt;
    }

private:
    static BinningScheme make(BinKind kind, std::string name, std::vector<Interval> intervals,
                              std::vector<std::string> labels, bool integer_domain = false) {
        BinningScheme s;
        s.kind_ = kind;
        s.name_ = std::move(name);
        s.intervals_ = std::move(intervals);
        s.labels_ = std::move(labels);
        s.integer_domain_ = integer_domain;
        s.validate();
        return s;
    }

    void validate() const {
        if (intervals_.empty()) throw ValidationError("binning scheme '" + name_ + "' has no intervals");
        if (labels_.size() != intervals_.size())
            throw ValidationError("binning scheme '" + name_ + "': " + std::to_string(labels_.size()) +
                                  " labels for " + std::to_string(intervals_.size()) + " intervals");
        for (const auto& iv : intervals_) {
            if (!(iv.lo < iv.hi) && !(iv.lo == iv.hi && iv.lo_closed && iv.hi_closed))
                throw ValidationError("binning scheme '" + name_ + "': empty interval");
        }
        for (std::size_t i = 1; i < intervals_.size(); ++i) {
            const Interval& prev = intervals_[i - 1];
            const Interval& cur = intervals_[i];
            bool contiguous;
            if (integer_domain_)
                contiguous = prev.hi_closed && cur.lo_closed && cur.lo == prev.hi + 1;
            else
                contiguous = cur.lo == prev.hi && (prev.hi_closed != cur.lo_closed);
            if (!contiguous)
                throw ValidationError("binning scheme '" + name_ + "': intervals " + std::to_string(i - 1) +
                                      " and " + std::to_string(i) + " are not contiguous");
        }
    }

    BinKind kind_ = BinKind::custom;
    std::string name_;
    std::vector<Interval> intervals_;
    std::vector<std::string> labels_;
    bool integer_domain_ = false;
};

/// Age class index for an age in [0, 100].
inline int bin_age(int age_years) {
    if (age_years < 0 || age_years > 100)
        throw ValidationError("age out of range [0,100]: " + std::to_string(age_years));
    const auto idx = BinningScheme::age5().find(static_cast<double>(age_years));
    return *idx;
}

struct ItaBin {
    int index = 0;
    /// Set when the angle fell below -30 and was clamped into "brown".
    bool clamped = false;
};

/// Skin-tone class for an individual typology angle in degrees.
inline ItaBin bin_ita(double ita_degrees) {
    if (!std::isfinite(ita_degrees))
        throw ValidationError("ITA must be finite");
    if (ita_degrees < -30.0) return {0, true};
    return {*BinningScheme::ita5().find(ita_degrees), false};
}

} // namespace fairtk
