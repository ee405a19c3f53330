// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "fairtk/debias.hpp"
#include "fairtk/error.hpp"
#include "fairtk/rng.hpp"

namespace fairtk {

struct ProbeConfig {
    double train_fraction = 0.8;
    int iterations = 600;
    double learning_rate = 0.2;
    double momentum = 0.9;
    double l2 = 1e-4;
};

/// Leakage measurement: trains a fresh linear softmax probe on an 80/20
/// split of (vectors, labels) and returns its held-out accuracy.
/// Deterministic given the seed; the probe never sees the model under test.
inline double adversary_probe(const Matrix& X, const std::vector<int>& labels, std::uint64_t seed,
                              const ProbeConfig& config = {}) {
    const Eigen::Index n = X.cols();
    if (static_cast<std::size_t>(n) != labels.size())
        throw ValidationError("adversary_probe: " + std::to_string(n) + " vectors vs " +
                              std::to_string(labels.size()) + " labels");
    std::map<int, std::size_t> class_counts;
    int k = 0;
    for (int label : labels) {
        if (label < 0) throw ValidationError("adversary_probe: negative label");
        ++class_counts[label];
        k = std::max(k, label + 1);
    }
    if (class_counts.size() < 2)
        throw ValidationError("adversary_probe: need at least 2 classes present");
    for (const auto& [label, count] : class_counts)
        if (count < 10)
            throw ValidationError("adversary_probe: class " + std::to_string(label) + " has only " +
                                  std::to_string(count) + " samples (need >= 10)");

    Rng rng(Rng::mix(seed, 3));
    const std::vector<std::size_t> perm = rng.permutation(static_cast<std::size_t>(n));
    const std::size_t n_train =
        std::max<std::size_t>(1, static_cast<std::size_t>(config.train_fraction *
                                                          static_cast<double>(n)));
    if (n_train >= static_cast<std::size_t>(n))
        throw ValidationError("adversary_probe: empty test split");
    const std::size_t n_test = static_cast<std::size_t>(n) - n_train;

    const Eigen::Index d = X.rows();
    Matrix Xtr(d, static_cast<Eigen::Index>(n_train));
    Matrix Xte(d, static_cast<Eigen::Index>(n_test));
    std::vector<int> ytr(n_train), yte(n_test);
    for (std::size_t j = 0; j < n_train; ++j) {
        Xtr.col(static_cast<Eigen::Index>(j)) = X.col(static_cast<Eigen::Index>(perm[j]));
        ytr[j] = labels[perm[j]];
    }
    for (std::size_t j = 0; j < n_test; ++j) {
        Xte.col(static_cast<Eigen::Index>(j)) = X.col(static_cast<Eigen::Index>(perm[n_train + j]));
        yte[j] = labels[perm[n_train + j]];
    }

    // Standardize with training statistics.
    const Vector mean = Xtr.rowwise().mean();
    Vector stddev(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const double var = (Xtr.row(i).array() - mean(i)).square().mean();
        stddev(i) = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
    }
    Xtr = (Xtr.colwise() - mean).array().colwise() / stddev.array();
    Xte = (Xte.colwise() - mean).array().colwise() / stddev.array();

    // Full-batch softmax regression with momentum.
    Matrix W = Matrix::Zero(k, d);
    Vector b = Vector::Zero(k);
    Matrix vel_w = Matrix::Zero(k, d);
    Vector vel_b = Vector::Zero(k);
    for (int it = 0; it < config.iterations; ++it) {
        const Matrix logits = (W * Xtr).colwise() + b;
        const Matrix G = detail::cross_entropy_logit_grad(detail::stable_softmax(logits), ytr);
        const Matrix gw = G * Xtr.transpose() + config.l2 * W;
        const Vector gb = G.rowwise().sum();
        vel_w = config.momentum * vel_w + gw;
        vel_b = config.momentum * vel_b + gb;
        W.noalias() -= config.learning_rate * vel_w;
        b.noalias() -= config.learning_rate * vel_b;
    }
    if (!W.allFinite() || !b.allFinite()) throw NumericalError("adversary_probe: diverged");

    const Matrix logits = (W * Xte).colwise() + b;
    std::size_t correct = 0;
    for (std::size_t j = 0; j < n_test; ++j) {
        Eigen::Index argmax = 0;
        logits.col(static_cast<Eigen::Index>(j)).maxCoeff(&argmax);
        if (static_cast<int>(argmax) == yte[j]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n_test);
}

/// Probe accuracy for one label column of a dataset, on the raw embeddings.
inline double probe_dataset(const Dataset& ds, const std::string& label_name, std::uint64_t seed,
                            const ProbeConfig& config = {}) {
    const LabeledBatch batch = make_batch(ds);
    if (label_name == "y_p") return adversary_probe(batch.Z, batch.y_p, seed, config);
    const int idx = ds.schema.index_of(label_name);
    if (idx < 0) throw ValidationError("probe_dataset: unknown label '" + label_name + "'");
    return adversary_probe(batch.Z, batch.y_sens[static_cast<std::size_t>(idx)], seed, config);
}

} // namespace fairtk
