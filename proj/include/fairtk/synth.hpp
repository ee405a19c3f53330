// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include "fairtk/dataset.hpp"
#include "fairtk/debias.hpp"
#include "fairtk/error.hpp"
#include "fairtk/probe.hpp"
#include "fairtk/rng.hpp"

namespace fairtk {

enum class FactorMode { orthogonal, random };

inline std::string to_string(FactorMode m) {
    return m == FactorMode::orthogonal ? "orthogonal" : "random";
}

/// Configuration of the synthetic biased-embedding generator:
///   z = M_p onehot(y_p) + sum_i M_i onehot(y_i) + sigma * noise
/// with y_i correlated to y_p with strength rho and y_p drawn by the group
/// weights (to emulate demographic underrepresentation).
struct SynthConfig {
    int d1 = 64;
    int K_p = 10;
    std::vector<int> sensitive_cardinalities;
    FactorMode mode = FactorMode::orthogonal;
    double noise_sigma = 0.1;
    double label_correlation = 0.0; // rho
    std::vector<double> group_weights; // over y_p classes; empty -> uniform
    int samples = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        if (d1 <= 0) throw ValidationError("synth: d1 must be positive");
        if (K_p < 2) throw ValidationError("synth: K_p must be at least 2");
        for (int k : sensitive_cardinalities)
            if (k < 2) throw ValidationError("synth: every sensitive cardinality must be >= 2");
        if (mode == FactorMode::orthogonal) {
            const int needed = K_p + std::accumulate(sensitive_cardinalities.begin(),
                                                     sensitive_cardinalities.end(), 0);
            if (d1 < needed)
                throw ValidationError("synth: orthogonal mode needs d1 >= K_p + sum K_i (" +
                                      std::to_string(needed) + "), got d1=" + std::to_string(d1));
        }
        if (!(noise_sigma >= 0.0)) throw ValidationError("synth: sigma must be >= 0");
        if (!(label_correlation >= 0.0) || label_correlation > 1.0)
            throw ValidationError("synth: rho must be in [0,1]");
        if (!group_weights.empty()) {
            if (static_cast<int>(group_weights.size()) != K_p)
                throw ValidationError("synth: group_weights must have K_p entries");
            for (double w : group_weights)
                if (!(w > 0.0)) throw ValidationError("synth: group_weights must be positive");
        }
        if (samples < 1) throw ValidationError("synth: samples must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"d1", d1},
                {"K_p", K_p},
                {"sensitive_cardinalities", sensitive_cardinalities},
                {"mode", to_string(mode)},
                {"noise_sigma", noise_sigma},
                {"label_correlation", label_correlation},
                {"group_weights", group_weights},
                {"samples", samples},
                {"seed", seed}};
    }
};

struct SynthResult {
    Dataset dataset;
    Matrix primary_factors;              // d1 x K_p ground truth
    std::vector<Matrix> sensitive_factors;
    SynthConfig config;

    nlohmann::json ground_truth_json() const {
        nlohmann::json factors = {{"M_p", detail::matrix_to_row_major(primary_factors)}};
        nlohmann::json sens = nlohmann::json::array();
        for (const auto& m : sensitive_factors) sens.push_back(detail::matrix_to_row_major(m));
        factors["M_i"] = sens;
        return {{"config", config.to_json()}, {"factors", factors}};
    }
};

namespace detail {

/// Orthonormal basis of R^{d1}, first `cols` columns, sign-fixed so the
/// construction is reproducible.
inline Matrix random_orthonormal_columns(int d1, int cols, Rng& rng) {
    const Matrix G = gaussian_matrix(d1, d1, 1.0, rng);
    Eigen::HouseholderQR<Matrix> qr(G);
    Matrix Q = qr.householderQ() * Matrix::Identity(d1, cols);
    const Matrix R = qr.matrixQR().topLeftCorner(cols, cols).triangularView<Eigen::Upper>();
    for (int j = 0; j < cols; ++j)
        if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
    return Q;
}

inline int weighted_draw(const std::vector<double>& cumulative, double total, Rng& rng) {
    const double u = rng.uniform() * total;
    for (std::size_t i = 0; i < cumulative.size(); ++i)
        if (u < cumulative[i]) return static_cast<int>(i);
    return static_cast<int>(cumulative.size()) - 1;
}

} // namespace detail

/// Deterministic given the seed; records are seeded per index, so the output
/// does not depend on generation order.
inline SynthResult generate(const SynthConfig& config) {
    config.validate();
    const int n_attr = static_cast<int>(config.sensitive_cardinalities.size());

    SynthResult result;
    result.config = config;

    Rng factor_rng(Rng::mix(config.seed, 4));
    const int total_cols = config.K_p + std::accumulate(config.sensitive_cardinalities.begin(),
                                                        config.sensitive_cardinalities.end(), 0);
    if (config.mode == FactorMode::orthogonal) {
        const Matrix Q = detail::random_orthonormal_columns(config.d1, total_cols, factor_rng);
        result.primary_factors = Q.leftCols(config.K_p);
        int offset = config.K_p;
        for (int i = 0; i < n_attr; ++i) {
            result.sensitive_factors.push_back(Q.middleCols(offset, config.sensitive_cardinalities[i]));
            offset += config.sensitive_cardinalities[i];
        }
    } else {
        const double scale = 1.0 / std::sqrt(static_cast<double>(config.d1));
        result.primary_factors = detail::gaussian_matrix(config.d1, config.K_p, scale, factor_rng);
        for (int i = 0; i < n_attr; ++i)
            result.sensitive_factors.push_back(
                detail::gaussian_matrix(config.d1, config.sensitive_cardinalities[i], scale, factor_rng));
    }

    DatasetSchema schema;
    schema.d1 = config.d1;
    schema.K_p = config.K_p;
    for (int i = 0; i < n_attr; ++i)
        schema.sensitive.push_back({"sens" + std::to_string(i + 1), config.sensitive_cardinalities[i]});
    result.dataset.schema = schema;

    std::vector<double> cumulative(static_cast<std::size_t>(config.K_p));
    double total = 0.0;
    for (int c = 0; c < config.K_p; ++c) {
        total += config.group_weights.empty() ? 1.0 : config.group_weights[static_cast<std::size_t>(c)];
        cumulative[static_cast<std::size_t>(c)] = total;
    }

    result.dataset.records.reserve(static_cast<std::size_t>(config.samples));
    char id_buf[16];
    for (int j = 0; j < config.samples; ++j) {
        Rng rng(Rng::mix(Rng::mix(config.seed, 5), static_cast<std::uint64_t>(j)));
        EmbeddingRecord r;
        std::snprintf(id_buf, sizeof(id_buf), "r%08d", j);
        r.id = id_buf;
        r.y_p = detail::weighted_draw(cumulative, total, rng);
        r.y_sens.resize(static_cast<std::size_t>(n_attr));
        for (int i = 0; i < n_attr; ++i) {
            const int k = config.sensitive_cardinalities[i];
            const bool correlated = rng.uniform() < config.label_correlation;
            r.y_sens[static_cast<std::size_t>(i)] =
                correlated ? r.y_p % k : static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
        }
        Vector z = result.primary_factors.col(r.y_p);
        for (int i = 0; i < n_attr; ++i)
            z += result.sensitive_factors[static_cast<std::size_t>(i)].col(
                r.y_sens[static_cast<std::size_t>(i)]);
        for (int i = 0; i < config.d1; ++i) z(i) += config.noise_sigma * rng.normal();
        r.z.assign(z.data(), z.data() + z.size());
        result.dataset.records.push_back(std::move(r));
    }
    return result;
}

/// Probe leakage on the raw embeddings: the "before debiasing" reference.
/// `label_name` is "y_p" or a sensitive attribute name.
inline double oracle_probe_accuracy(const Dataset& ds, const std::string& label_name,
                                    std::uint64_t seed = 0) {
    return probe_dataset(ds, label_name, seed);
}

} // namespace fairtk
