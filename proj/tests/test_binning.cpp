// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "fairtk/binning.hpp"

using namespace fairtk;

TEST_CASE("age bins reproduce the five classes at the printed edges") {
    CHECK(bin_age(0) == 0);
    CHECK(bin_age(18) == 0);
    CHECK(bin_age(19) == 1);
    CHECK(bin_age(30) == 1);
    CHECK(bin_age(31) == 2);
    CHECK(bin_age(45) == 2);
    CHECK(bin_age(46) == 3);
    CHECK(bin_age(60) == 3);
    CHECK(bin_age(61) == 4);
    CHECK(bin_age(100) == 4);
}

TEST_CASE("age binning is total on [0,100] and rejects the rest") {
    for (int age = 0; age <= 100; ++age) {
        int hits = 0;
        for (const auto& iv : BinningScheme::age5().intervals())
            if (iv.contains(age)) ++hits;
        CHECK(hits == 1);
    }
    CHECK_THROWS_AS(bin_age(-1), ValidationError);
    CHECK_THROWS_AS(bin_age(101), ValidationError);
    CHECK_THROWS_WITH(bin_age(123), Catch::Matchers::ContainsSubstring("123"));
}

TEST_CASE("ITA bins") {
    CHECK(bin_ita(35.0).index == 2);  // intermediate
    CHECK(bin_ita(60.0).index == 4);  // very light
    CHECK(bin_ita(-30.0).index == 0);
    CHECK(bin_ita(10.0).index == 0);
    CHECK(bin_ita(10.5).index == 1);
    CHECK(bin_ita(28.0).index == 1);
    CHECK(bin_ita(41.0).index == 2);  // both sides of the repaired light edge
    CHECK(bin_ita(41.5).index == 3);
    CHECK(bin_ita(55.0).index == 3);
    CHECK(bin_ita(55.1).index == 4);
    CHECK(bin_ita(89.9).index == 4);
}

TEST_CASE("ITA below -30 clamps to brown with a warning") {
    const ItaBin low = bin_ita(-45.0);
    CHECK(low.index == 0);
    CHECK(low.clamped);
    CHECK_FALSE(bin_ita(-30.0).clamped);
    CHECK_THROWS_AS(bin_ita(std::numeric_limits<double>::quiet_NaN()), ValidationError);
    CHECK_THROWS_AS(bin_ita(std::numeric_limits<double>::infinity()), ValidationError);
}

TEST_CASE("ITA bins partition (-30, inf)") {
    for (double v = -30.0; v < 95.0; v += 0.07) {
        int hits = 0;
        for (const auto& iv : BinningScheme::ita5().intervals())
            if (iv.contains(v)) ++hits;
        CHECK(hits == 1);
    }
}

TEST_CASE("age-difference bins use the printed ranges") {
    const auto& scheme = BinningScheme::agediff3();
    CHECK(*scheme.find(0.0) == 0);
    CHECK(*scheme.find(10.0) == 0);
    CHECK(*scheme.find(11.0) == 1);
    CHECK(*scheme.find(10.5) == 1);
    CHECK(*scheme.find(20.0) == 1);
    CHECK(*scheme.find(21.0) == 2);
    CHECK(*scheme.find(30.0) == 2);
    CHECK_FALSE(scheme.find(30.5).has_value());
    CHECK_FALSE(scheme.find(-1.0).has_value());
}

TEST_CASE("custom schemes reject broken partitions") {
    CHECK_THROWS_AS(BinningScheme::custom("bad", {{0, 10, true, true}, {12, 20, false, true}},
                                          {"a", "b"}),
                    ValidationError);
    CHECK_THROWS_AS(BinningScheme::custom("bad", {{0, 10, true, true}, {5, 20, false, true}},
                                          {"a", "b"}),
                    ValidationError);
    CHECK_THROWS_AS(BinningScheme::custom("bad", {{0, 10, true, true}, {10, 20, true, true}},
                                          {"a", "b"}),
                    ValidationError);
    CHECK_THROWS_AS(BinningScheme::custom("bad", {{0, 10, true, true}}, {"a", "b"}),
                    ValidationError);
    CHECK_NOTHROW(BinningScheme::custom("ok", {{0, 10, true, true}, {10, 20, false, true}},
                                        {"a", "b"}));
}
