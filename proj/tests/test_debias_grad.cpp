// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "fairtk/debias.hpp"
#include "fairtk/rng.hpp"

using namespace fairtk;
using Catch::Approx;

namespace {

DebiasDims grad_dims() {
    DebiasDims dims;
    dims.d1 = 6;
    dims.d2 = 3;
    dims.d3 = {2, 2};
    dims.K_p = 3;
    dims.K = {2, 3};
    return dims;
}

LabeledBatch random_batch(const DebiasDims& dims, int n, Rng& rng) {
    LabeledBatch batch;
    batch.Z.resize(dims.d1, n);
    for (int i = 0; i < dims.d1; ++i)
        for (int j = 0; j < n; ++j) batch.Z(i, j) = rng.normal();
    batch.y_p.resize(static_cast<std::size_t>(n));
    for (auto& y : batch.y_p) y = static_cast<int>(rng.below(dims.K_p));
    batch.y_sens.resize(dims.K.size());
    for (std::size_t a = 0; a < dims.K.size(); ++a) {
        batch.y_sens[a].resize(static_cast<std::size_t>(n));
        for (auto& y : batch.y_sens[a]) y = static_cast<int>(rng.below(dims.K[a]));
    }
    return batch;
}

/// Central finite difference of `objective` w.r.t. one coordinate.
double central_difference(double& coord, const std::function<double()>& objective, double h) {
    const double saved = coord;
    coord = saved + h;
    const double plus = objective();
    coord = saved - h;
    const double minus = objective();
    coord = saved;
    return (plus - minus) / (2.0 * h);
}

/// Relative agreement with an absolute floor for near-zero coordinates.
bool close(double analytic, double numeric, double rel_tol, double abs_floor) {
    const double diff = std::abs(analytic - numeric);
    if (diff <= abs_floor) return true;
    return diff <= rel_tol * std::max(std::abs(analytic), std::abs(numeric));
}

void check_matrix_gradient(Matrix& param, const Matrix& analytic,
                           const std::function<double()>& objective, std::size_t& checked) {
    constexpr double h = 1e-5;
    constexpr double rel_tol = 1e-4;
    constexpr double abs_floor = 1e-8;
    for (Eigen::Index r = 0; r < param.rows(); ++r) {
        for (Eigen::Index c = 0; c < param.cols(); ++c) {
            const double fd = central_difference(param(r, c), objective, h);
            INFO("coordinate (" << r << "," << c << "): analytic " << analytic(r, c)
                                << " vs finite difference " << fd);
            CHECK(close(analytic(r, c), fd, rel_tol, abs_floor));
            ++checked;
        }
    }
}

} // namespace

TEST_CASE("grad_main matches central finite differences on random instances") {
    const DebiasDims dims = grad_dims();
    std::size_t checked = 0;
    for (std::uint64_t instance = 0; instance < 10; ++instance) {
        Rng rng(100 + instance);
        DebiasModel model = DebiasModel::init(dims, 1.0, rng);
        const LabeledBatch batch = random_batch(dims, 8, rng);
        Hyperparams hyper;
        hyper.lambda_dec = 0.5 + rng.uniform();
        hyper.lambda_entropy = {rng.uniform(), rng.uniform()};
        hyper.lambda_orth = {rng.uniform() * 2.0, rng.uniform() * 2.0};

        const MainGradients g = grad_main(model, batch, hyper);
        const auto objective = [&] { return objective_main(model, batch, hyper); };
        check_matrix_gradient(model.A, g.A, objective, checked);
        check_matrix_gradient(model.B, g.B, objective, checked);
        check_matrix_gradient(model.Wp, g.Wp, objective, checked);
        for (int i = 0; i < 2; ++i) check_matrix_gradient(model.D[i], g.D[i], objective, checked);
        for (Eigen::Index r = 0; r < model.bp.size(); ++r) {
            const double fd = central_difference(model.bp(r), objective, 1e-5);
            CHECK(close(g.bp(r), fd, 1e-4, 1e-8));
            ++checked;
        }
    }
    CHECK(checked > 500);
}

TEST_CASE("grad_adv matches central finite differences on random instances") {
    const DebiasDims dims = grad_dims();
    std::size_t checked = 0;
    for (std::uint64_t instance = 0; instance < 10; ++instance) {
        Rng rng(200 + instance);
        DebiasModel model = DebiasModel::init(dims, 1.0, rng);
        const LabeledBatch batch = random_batch(dims, 8, rng);
        const AdvGradients g = grad_adv(model, batch);
        const auto objective = [&] { return objective_adv(model, batch); };
        for (int i = 0; i < 2; ++i) {
            check_matrix_gradient(model.T[i], g.T[i], objective, checked);
            check_matrix_gradient(model.W[i], g.W[i], objective, checked);
            for (Eigen::Index r = 0; r < model.b[i].size(); ++r) {
                const double fd = central_difference(model.b[i](r), objective, 1e-5);
                CHECK(close(g.b[i](r), fd, 1e-4, 1e-8));
                ++checked;
            }
        }
    }
    CHECK(checked == 270); // 10 instances x (T 12 + W 10 + b 5) coordinates
}

TEST_CASE("grad_adv with no attributes is empty") {
    DebiasDims dims;
    dims.d1 = 4;
    dims.d2 = 2;
    dims.K_p = 2;
    Rng rng(1);
    const DebiasModel model = DebiasModel::init(dims, 1.0, rng);
    LabeledBatch batch;
    batch.Z = Matrix::Random(4, 3);
    batch.y_p = {0, 1, 0};
    const AdvGradients g = grad_adv(model, batch);
    CHECK(g.T.empty());
    CHECK(g.W.empty());
}

TEST_CASE("gradient of W_p is the closed-form softmax expression") {
    const DebiasDims dims = grad_dims();
    Rng rng(300);
    const DebiasModel model = DebiasModel::init(dims, 1.0, rng);
    const LabeledBatch batch = random_batch(dims, 8, rng);
    Hyperparams hyper;
    hyper.lambda_entropy = {0.3, 0.3};
    hyper.lambda_orth = {1.0, 1.0};
    const MainGradients g = grad_main(model, batch, hyper);

    // (softmax - onehot) z_p^T averaged over the batch, assembled by hand
    Matrix expected = Matrix::Zero(dims.K_p, dims.d1);
    Vector expected_bias = Vector::Zero(dims.K_p);
    for (int j = 0; j < 8; ++j) {
        const ForwardState f = forward(model, batch.Z.col(j));
        Eigen::ArrayXd logits = f.primary_logits.array();
        logits -= logits.maxCoeff();
        Eigen::ArrayXd p = logits.exp();
        p /= p.sum();
        Vector gvec = p.matrix();
        gvec(batch.y_p[static_cast<std::size_t>(j)]) -= 1.0;
        expected += gvec * f.z_p.transpose();
        expected_bias += gvec;
    }
    expected /= 8.0;
    expected_bias /= 8.0;
    CHECK((g.Wp - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((g.bp - expected_bias).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("orthogonality gradient vanishes at a stationary construction") {
    DebiasDims dims = grad_dims();
    Rng rng(400);
    DebiasModel model = DebiasModel::init(dims, 1.0, rng);
    // zero D makes L_or flat in A; zero A makes it flat in D
    for (auto& d : model.D) d.setZero();
    model.A.setZero();
    const LabeledBatch batch = random_batch(dims, 4, rng);
    Hyperparams hyper;
    hyper.lambda_dec = 0.0;
    hyper.lambda_entropy = {0.0, 0.0};
    hyper.lambda_orth = {5.0, 5.0};
    const MainGradients g = grad_main(model, batch, hyper);
    // only the cross-entropy path contributes to A here; the L_or part is
    // D M^T with D = 0
    for (int i = 0; i < 2; ++i) CHECK(g.D[i].norm() == 0.0);
}

TEST_CASE("one small adversary step does not increase objective_adv") {
    const DebiasDims dims = grad_dims();
    int non_increasing = 0;
    constexpr int trials = 100;
    for (std::uint64_t t = 0; t < trials; ++t) {
        Rng rng(500 + t);
        DebiasModel model = DebiasModel::init(dims, 1.0, rng);
        const LabeledBatch batch = random_batch(dims, 8, rng);
        const double before = objective_adv(model, batch);
        const AdvGradients g = grad_adv(model, batch);
        const double step = 1e-3;
        for (int i = 0; i < 2; ++i) {
            model.T[i] -= step * g.T[i];
            model.W[i] -= step * g.W[i];
            model.b[i] -= step * g.b[i];
        }
        const double after = objective_adv(model, batch);
        if (after <= before + 1e-12) ++non_increasing;
    }
    CHECK(non_increasing >= 99);
}
