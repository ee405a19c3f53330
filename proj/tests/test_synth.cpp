// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fairtk/synth.hpp"

using namespace fairtk;
using Catch::Approx;

namespace {

SynthConfig base_config() {
    SynthConfig config;
    config.d1 = 32;
    config.K_p = 4;
    config.sensitive_cardinalities = {3, 2};
    config.mode = FactorMode::orthogonal;
    config.noise_sigma = 0.0;
    config.label_correlation = 0.0;
    config.samples = 400;
    config.seed = 0;
    return config;
}

double pearson(const std::vector<int>& a, const std::vector<int>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

} // namespace

TEST_CASE("orthogonal factors are orthonormal and block-disjoint") {
    const SynthResult r = generate(base_config());
    Matrix all(32, 4 + 3 + 2);
    all << r.primary_factors, r.sensitive_factors[0], r.sensitive_factors[1];
    const Matrix gram = all.transpose() * all;
    CHECK((gram - Matrix::Identity(9, 9)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("noise-free orthogonal embeddings project back to their labels") {
    const SynthResult r = generate(base_config());
    for (const auto& rec : r.dataset.records) {
        const Eigen::Map<const Vector> z(rec.z.data(), 32);
        Eigen::Index argmax = 0;
        (r.primary_factors.transpose() * z).maxCoeff(&argmax);
        CHECK(static_cast<int>(argmax) == rec.y_p);
        for (int i = 0; i < 2; ++i) {
            (r.sensitive_factors[static_cast<std::size_t>(i)].transpose() * z).maxCoeff(&argmax);
            CHECK(static_cast<int>(argmax) == rec.y_sens[static_cast<std::size_t>(i)]);
        }
    }
}

TEST_CASE("same seed gives bit-identical datasets") {
    SynthConfig config = base_config();
    config.noise_sigma = 0.3;
    const SynthResult a = generate(config);
    const SynthResult b = generate(config);
    REQUIRE(a.dataset.records.size() == b.dataset.records.size());
    for (std::size_t i = 0; i < a.dataset.records.size(); ++i) {
        CHECK(a.dataset.records[i].z == b.dataset.records[i].z);
        CHECK(a.dataset.records[i].y_p == b.dataset.records[i].y_p);
        CHECK(a.dataset.records[i].y_sens == b.dataset.records[i].y_sens);
    }
    config.seed = 1;
    const SynthResult c = generate(config);
    CHECK(a.dataset.records[0].z != c.dataset.records[0].z);
}

TEST_CASE("rho 0 leaves labels uncorrelated, rho 1 ties them") {
    SynthConfig config = base_config();
    config.samples = 10000;
    config.label_correlation = 0.0;
    const SynthResult indep = generate(config);
    std::vector<int> yp, y1;
    for (const auto& rec : indep.dataset.records) {
        yp.push_back(rec.y_p);
        y1.push_back(rec.y_sens[0]);
    }
    CHECK(std::abs(pearson(yp, y1)) < 0.05);

    config.label_correlation = 1.0;
    const SynthResult tied = generate(config);
    for (const auto& rec : tied.dataset.records) {
        CHECK(rec.y_sens[0] == rec.y_p % 3);
        CHECK(rec.y_sens[1] == rec.y_p % 2);
    }
}

TEST_CASE("label marginals converge to the configured weights") {
    SynthConfig config = base_config();
    config.samples = 10000;
    config.group_weights = {1.0, 2.0, 3.0, 4.0};
    for (std::uint64_t seed : {0ULL, 7ULL, 42ULL}) {
        config.seed = seed;
        const SynthResult r = generate(config);
        std::vector<double> counts(4, 0.0);
        for (const auto& rec : r.dataset.records) counts[static_cast<std::size_t>(rec.y_p)] += 1.0;
        double l1 = 0.0;
        for (int c = 0; c < 4; ++c)
            l1 += std::abs(counts[static_cast<std::size_t>(c)] / 10000.0 - (c + 1) / 10.0);
        CHECK(l1 < 0.03);
    }
}

TEST_CASE("orthogonal mode rejects infeasible dimensions") {
    SynthConfig config = base_config();
    config.d1 = 8; // < 4 + 3 + 2
    CHECK_THROWS_AS(generate(config), ValidationError);
    config.mode = FactorMode::random;
    CHECK_NOTHROW(generate(config));
}

TEST_CASE("config validation") {
    SynthConfig config = base_config();
    config.group_weights = {1.0, 1.0};
    CHECK_THROWS_AS(config.validate(), ValidationError);
    config = base_config();
    config.label_correlation = 1.5;
    CHECK_THROWS_AS(config.validate(), ValidationError);
    config = base_config();
    config.noise_sigma = -1.0;
    CHECK_THROWS_AS(config.validate(), ValidationError);
}

TEST_CASE("probe recovers labels from clean orthogonal embeddings") {
    SynthConfig config = base_config();
    config.samples = 600;
    const SynthResult r = generate(config);
    CHECK(oracle_probe_accuracy(r.dataset, "y_p") >= 0.99);
    CHECK(oracle_probe_accuracy(r.dataset, "sens1") >= 0.99);
    CHECK(oracle_probe_accuracy(r.dataset, "sens2") >= 0.99);
}

TEST_CASE("probe approaches chance when noise dominates") {
    SynthConfig config = base_config();
    config.samples = 600;
    config.noise_sigma = 30.0; // signal has unit norm
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        config.seed = seed;
        const SynthResult r = generate(config);
        CHECK(oracle_probe_accuracy(r.dataset, "sens2", seed) < 0.5 + 0.12);
    }
}

TEST_CASE("probe is at chance on shuffled labels") {
    SynthConfig config = base_config();
    config.samples = 600;
    const SynthResult r = generate(config);
    Dataset shuffled = r.dataset;
    Rng rng(123);
    const auto perm = rng.permutation(shuffled.records.size());
    for (std::size_t i = 0; i < perm.size(); ++i)
        shuffled.records[i].y_sens[1] = r.dataset.records[perm[i]].y_sens[1];
    const double acc = oracle_probe_accuracy(shuffled, "sens2");
    CHECK(std::abs(acc - 0.5) < 0.1);
}

TEST_CASE("projection onto the primary span removes sensitive leakage") {
    // establishes that the debias target is achievable before testing the trainer
    SynthConfig config = base_config();
    config.samples = 1000;
    config.noise_sigma = 0.1;
    const SynthResult r = generate(config);
    Dataset projected = r.dataset;
    const Matrix proj = r.primary_factors * r.primary_factors.transpose();
    for (auto& rec : projected.records) {
        const Eigen::Map<const Vector> z(rec.z.data(), 32);
        const Vector zp = proj * z;
        rec.z.assign(zp.data(), zp.data() + zp.size());
    }
    CHECK(oracle_probe_accuracy(projected, "y_p") >= 0.99);
    CHECK(oracle_probe_accuracy(projected, "sens1") <= 1.0 / 3.0 + 0.05);
    CHECK(oracle_probe_accuracy(projected, "sens2") <= 0.5 + 0.05);
}
