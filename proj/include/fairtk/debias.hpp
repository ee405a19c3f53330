// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fairtk/dataset.hpp"
#include "fairtk/error.hpp"
#include "fairtk/io.hpp"
#include "fairtk/rng.hpp"

namespace fairtk {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr const char* kModelFormatVersion = "kanface-debias/1";

struct DebiasDims {
    int d1 = 0;
    int d2 = 0;
    std::vector<int> d3;
    int K_p = 0;
    std::vector<int> K;

    int attribute_count() const { return static_cast<int>(K.size()); }

    void validate() const {
        if (d1 <= 0 || d2 <= 0) throw ValidationError("dims: d1 and d2 must be positive");
        if (d2 > d1) throw ValidationError("dims: bottleneck d2 must not exceed d1");
        if (K_p < 2) throw ValidationError("dims: K_p must be at least 2");
        if (d3.size() != K.size()) throw ValidationError("dims: d3 and K length mismatch");
        for (int v : d3)
            if (v <= 0) throw ValidationError("dims: every d3 must be positive");
        for (int v : K)
            if (v < 2) throw ValidationError("dims: every attribute cardinality must be >= 2");
    }
};

inline int default_d2(int d1) { return d1 >= 4096 ? 512 : std::max(2, d1 / 4); }
inline int default_d3(int d1) { return d1 >= 4096 ? 64 : std::max(2, d1 / 16); }

struct Hyperparams {
    double lambda_dec = 1.0;
    std::vector<double> lambda_entropy; // lambda_i per attribute; empty -> 1.0 each
    std::vector<double> lambda_orth;    // lambda_or^i per attribute; empty -> 10.0 each
    double step_v = 1e-2;
    double step_u = 1e-2;
    double momentum = 0.9;
    int adversary_steps = 5; // k adversary steps per main step
    int batch_size = 64;
    int epochs = 200;
    double init_scale = 1.0;
    std::uint64_t seed = 0;
    int d2 = 0;              // 0 -> derived from d1
    std::vector<int> d3;     // empty -> derived from d1

    void validate() const {
        if (!(lambda_dec >= 0.0)) throw ValidationError("hyper: lambda_dec must be >= 0");
        for (double v : lambda_entropy)
            if (!(v >= 0.0)) throw ValidationError("hyper: lambda_entropy must be >= 0");
        for (double v : lambda_orth)
            if (!(v >= 0.0)) throw ValidationError("hyper: lambda_orth must be >= 0");
        if (!(step_v > 0.0) || !(step_u > 0.0)) throw ValidationError("hyper: step sizes must be > 0");
        if (!(momentum >= 0.0) || momentum >= 1.0)
            throw ValidationError("hyper: momentum must be in [0,1)");
        if (adversary_steps < 1) throw ValidationError("hyper: adversary_steps must be >= 1");
        if (batch_size < 1) throw ValidationError("hyper: batch_size must be >= 1");
        if (epochs < 0) throw ValidationError("hyper: epochs must be >= 0");
        if (!(init_scale > 0.0)) throw ValidationError("hyper: init_scale must be > 0");
    }

    std::vector<double> resolved_lambda_entropy(int n_attributes) const {
        if (lambda_entropy.empty()) return std::vector<double>(n_attributes, 1.0);
        if (static_cast<int>(lambda_entropy.size()) != n_attributes)
            throw ValidationError("hyper: lambda_entropy has wrong length");
        return lambda_entropy;
    }

    std::vector<double> resolved_lambda_orth(int n_attributes) const {
        if (lambda_orth.empty()) return std::vector<double>(n_attributes, 10.0);
        if (static_cast<int>(lambda_orth.size()) != n_attributes)
            throw ValidationError("hyper: lambda_orth has wrong length");
        return lambda_orth;
    }

    nlohmann::json to_json() const {
        return {{"lambda_dec", lambda_dec},
                {"lambda_entropy", lambda_entropy},
                {"lambda_orth", lambda_orth},
                {"step_v", step_v},
                {"step_u", step_u},
                {"momentum", momentum},
                {"adversary_steps", adversary_steps},
                {"batch_size", batch_size},
                {"epochs", epochs},
                {"init_scale", init_scale},
                {"seed", seed},
                {"d2", d2},
                {"d3", d3}};
    }

    static Hyperparams from_json(const nlohmann::json& j) {
        Hyperparams h;
        try {
            h.lambda_dec = j.at("lambda_dec").get<double>();
            h.lambda_entropy = j.at("lambda_entropy").get<std::vector<double>>();
            h.lambda_orth = j.at("lambda_orth").get<std::vector<double>>();
            h.step_v = j.at("step_v").get<double>();
            h.step_u = j.at("step_u").get<double>();
            h.momentum = j.at("momentum").get<double>();
            h.adversary_steps = j.at("adversary_steps").get<int>();
            h.batch_size = j.at("batch_size").get<int>();
            h.epochs = j.at("epochs").get<int>();
            h.init_scale = j.at("init_scale").get<double>();
            h.seed = j.at("seed").get<std::uint64_t>();
            h.d2 = j.at("d2").get<int>();
            h.d3 = j.at("d3").get<std::vector<int>>();
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(std::string("hyper JSON: ") + e.what());
        }
        return h;
    }
};

namespace detail {

inline std::vector<double> matrix_to_row_major(const Matrix& m) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    return out;
}

inline Matrix matrix_from_row_major(const std::vector<double>& data, int rows, int cols,
                                    const std::string& name) {
    if (static_cast<int>(data.size()) != rows * cols)
        throw ValidationError("model JSON: parameter '" + name + "' has " +
                              std::to_string(data.size()) + " entries, expected " +
                              std::to_string(rows * cols));
    Matrix m(rows, cols);
    std::size_t i = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = data[i++];
    return m;
}

/// Gaussian fill in row-major order so the draw sequence is well-defined.
inline Matrix gaussian_matrix(int rows, int cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = stddev * rng.normal();
    return m;
}

} // namespace detail

/// Parameters of the linear embedding decomposition
///   z = A B z + sum_i D_i T_i B z
/// with softmax heads W_p on the task branch and W_i on each sensitive
/// branch. V = {A, B, D_i, W_p} are the main parameters, U = {T_i, W_i}
/// the adversary's.
struct DebiasModel {
    DebiasDims dims;
    Matrix A;                // d1 x d2
    Matrix B;                // d2 x d1
    std::vector<Matrix> D;   // d1 x d3_i
    std::vector<Matrix> T;   // d3_i x d2
    Matrix Wp;               // K_p x d1
    Vector bp;               // K_p
    std::vector<Matrix> W;   // K_i x d3_i
    std::vector<Vector> b;   // K_i

    /// Draw order: A, B, D_1, T_1, ..., D_N, T_N, W_p, W_1, ..., W_N;
    /// entries row-major, stddev init_scale / sqrt(fan_in); biases zero.
    static DebiasModel init(const DebiasDims& dims, double init_scale, Rng& rng) {
        dims.validate();
        DebiasModel m;
        m.dims = dims;
        const int n = dims.attribute_count();
        m.A = detail::gaussian_matrix(dims.d1, dims.d2, init_scale / std::sqrt(dims.d2), rng);
        m.B = detail::gaussian_matrix(dims.d2, dims.d1, init_scale / std::sqrt(dims.d1), rng);
        for (int i = 0; i < n; ++i) {
            m.D.push_back(detail::gaussian_matrix(dims.d1, dims.d3[i],
                                                  init_scale / std::sqrt(dims.d3[i]), rng));
            m.T.push_back(detail::gaussian_matrix(dims.d3[i], dims.d2,
                                                  init_scale / std::sqrt(dims.d2), rng));
        }
        m.Wp = detail::gaussian_matrix(dims.K_p, dims.d1, init_scale / std::sqrt(dims.d1), rng);
        m.bp = Vector::Zero(dims.K_p);
        for (int i = 0; i < n; ++i) {
            m.W.push_back(detail::gaussian_matrix(dims.K[i], dims.d3[i],
                                                  init_scale / std::sqrt(dims.d3[i]), rng));
            m.b.push_back(Vector::Zero(dims.K[i]));
        }
        return m;
    }

    bool all_finite() const {
        const auto ok = [](const Matrix& m) { return m.allFinite(); };
        if (!ok(A) || !ok(B) || !ok(Wp) || !bp.allFinite()) return false;
        for (const auto& m : D)
            if (!ok(m)) return false;
        for (const auto& m : T)
            if (!ok(m)) return false;
        for (const auto& m : W)
            if (!ok(m)) return false;
        for (const auto& v : b)
            if (!v.allFinite()) return false;
        return true;
    }

    nlohmann::json to_json(const Hyperparams& hyper) const {
        nlohmann::json jd = nlohmann::json::array();
        nlohmann::json jt = nlohmann::json::array();
        nlohmann::json jw = nlohmann::json::array();
        nlohmann::json jb = nlohmann::json::array();
        for (const auto& m : D) jd.push_back(detail::matrix_to_row_major(m));
        for (const auto& m : T) jt.push_back(detail::matrix_to_row_major(m));
        for (const auto& m : W) jw.push_back(detail::matrix_to_row_major(m));
        for (const auto& v : b) jb.push_back(std::vector<double>(v.data(), v.data() + v.size()));
        return {{"version", kModelFormatVersion},
                {"dims", {{"d1", dims.d1}, {"d2", dims.d2}, {"d3", dims.d3},
                          {"K_p", dims.K_p}, {"K", dims.K}}},
                {"hyper", hyper.to_json()},
                {"params", {{"A", detail::matrix_to_row_major(A)},
                            {"B", detail::matrix_to_row_major(B)},
                            {"D", jd},
                            {"T", jt},
                            {"W_p", detail::matrix_to_row_major(Wp)},
                            {"b_p", std::vector<double>(bp.data(), bp.data() + bp.size())},
                            {"W", jw},
                            {"b", jb}}}};
    }

    static DebiasModel from_json(const nlohmann::json& j, Hyperparams* hyper_out = nullptr) {
        try {
            if (j.at("version").get<std::string>() != kModelFormatVersion)
                throw ValidationError("model JSON: unsupported version '" +
                                      j.at("version").get<std::string>() + "'");
            DebiasModel m;
            const auto& jd = j.at("dims");
            m.dims.d1 = jd.at("d1").get<int>();
            m.dims.d2 = jd.at("d2").get<int>();
            m.dims.d3 = jd.at("d3").get<std::vector<int>>();
            m.dims.K_p = jd.at("K_p").get<int>();
            m.dims.K = jd.at("K").get<std::vector<int>>();
            m.dims.validate();
            const auto& jp = j.at("params");
            m.A = detail::matrix_from_row_major(jp.at("A").get<std::vector<double>>(), m.dims.d1,
                                                m.dims.d2, "A");
            m.B = detail::matrix_from_row_major(jp.at("B").get<std::vector<double>>(), m.dims.d2,
                                                m.dims.d1, "B");
            const int n = m.dims.attribute_count();
            for (int i = 0; i < n; ++i) {
                m.D.push_back(detail::matrix_from_row_major(
                    jp.at("D").at(i).get<std::vector<double>>(), m.dims.d1, m.dims.d3[i], "D"));
                m.T.push_back(detail::matrix_from_row_major(
                    jp.at("T").at(i).get<std::vector<double>>(), m.dims.d3[i], m.dims.d2, "T"));
            }
            m.Wp = detail::matrix_from_row_major(jp.at("W_p").get<std::vector<double>>(), m.dims.K_p,
                                                 m.dims.d1, "W_p");
            const auto bp = jp.at("b_p").get<std::vector<double>>();
            m.bp = Eigen::Map<const Vector>(bp.data(), static_cast<Eigen::Index>(bp.size()));
            if (m.bp.size() != m.dims.K_p) throw ValidationError("model JSON: b_p has wrong length");
            for (int i = 0; i < n; ++i) {
                m.W.push_back(detail::matrix_from_row_major(
                    jp.at("W").at(i).get<std::vector<double>>(), m.dims.K[i], m.dims.d3[i], "W"));
                const auto bi = jp.at("b").at(i).get<std::vector<double>>();
                m.b.push_back(Eigen::Map<const Vector>(bi.data(), static_cast<Eigen::Index>(bi.size())));
                if (m.b.back().size() != m.dims.K[i])
                    throw ValidationError("model JSON: b[" + std::to_string(i) + "] has wrong length");
            }
            if (!m.all_finite()) throw ValidationError("model JSON: non-finite parameter");
            if (hyper_out) *hyper_out = Hyperparams::from_json(j.at("hyper"));
            return m;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(std::string("model JSON: ") + e.what());
        }
    }

    void save(const std::filesystem::path& path, const Hyperparams& hyper) const {
        io::write_file_atomic(path, to_json(hyper).dump() + "\n");
    }

    static DebiasModel load(const std::filesystem::path& path, Hyperparams* hyper_out = nullptr) {
        nlohmann::json j = nlohmann::json::parse(io::read_file(path), nullptr, false);
        if (j.is_discarded()) throw ValidationError("model JSON unparseable: " + path.string());
        return from_json(j, hyper_out);
    }
};

/// All branch activations for one embedding.
struct ForwardState {
    Vector code;                          // B z
    Vector z_p;                           // A B z
    std::vector<Vector> s;                // T_i B z
    std::vector<Vector> z_i;              // D_i s_i
    Vector primary_logits;                // W_p z_p + b_p
    std::vector<Vector> adversary_logits; // W_i s_i + b_i
    Vector reconstruction;                // z_p + sum_i z_i
};

inline ForwardState forward(const DebiasModel& m, const Vector& z) {
    if (z.size() != m.dims.d1)
        throw ValidationError("forward: embedding has dimension " + std::to_string(z.size()) +
                              ", model expects " + std::to_string(m.dims.d1));
    ForwardState f;
    f.code = m.B * z;
    f.z_p = m.A * f.code;
    f.reconstruction = f.z_p;
    const int n = m.dims.attribute_count();
    f.s.resize(n);
    f.z_i.resize(n);
    f.adversary_logits.resize(n);
    for (int i = 0; i < n; ++i) {
        f.s[i] = m.T[i] * f.code;
        f.z_i[i] = m.D[i] * f.s[i];
        f.adversary_logits[i] = m.W[i] * f.s[i] + m.b[i];
        f.reconstruction += f.z_i[i];
    }
    f.primary_logits = m.Wp * f.z_p + m.bp;
    return f;
}

inline Vector debias_transform(const DebiasModel& m, const Vector& z) {
    if (z.size() != m.dims.d1)
        throw ValidationError("debias_transform: embedding has dimension " + std::to_string(z.size()) +
                              ", model expects " + std::to_string(m.dims.d1));
    return m.A * (m.B * z);
}

/// Columns are samples.
struct LabeledBatch {
    Matrix Z;                             // d1 x n
    std::vector<int> y_p;                 // n
    std::vector<std::vector<int>> y_sens; // [attribute][sample]

    Eigen::Index size() const { return Z.cols(); }
};

inline LabeledBatch make_batch(const Dataset& ds) {
    LabeledBatch batch;
    const int d1 = ds.schema.d1;
    const Eigen::Index n = static_cast<Eigen::Index>(ds.records.size());
    batch.Z.resize(d1, n);
    batch.y_p.resize(ds.records.size());
    batch.y_sens.assign(ds.schema.sensitive.size(), std::vector<int>(ds.records.size()));
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto& r = ds.records[static_cast<std::size_t>(j)];
        for (int i = 0; i < d1; ++i) batch.Z(i, j) = r.z[static_cast<std::size_t>(i)];
        batch.y_p[static_cast<std::size_t>(j)] = r.y_p;
        for (std::size_t a = 0; a < r.y_sens.size(); ++a)
            batch.y_sens[a][static_cast<std::size_t>(j)] = r.y_sens[a];
    }
    return batch;
}

inline LabeledBatch gather(const LabeledBatch& full, const std::vector<std::size_t>& indices) {
    LabeledBatch batch;
    batch.Z.resize(full.Z.rows(), static_cast<Eigen::Index>(indices.size()));
    batch.y_p.resize(indices.size());
    batch.y_sens.assign(full.y_sens.size(), std::vector<int>(indices.size()));
    for (std::size_t j = 0; j < indices.size(); ++j) {
        batch.Z.col(static_cast<Eigen::Index>(j)) = full.Z.col(static_cast<Eigen::Index>(indices[j]));
        batch.y_p[j] = full.y_p[indices[j]];
        for (std::size_t a = 0; a < full.y_sens.size(); ++a)
            batch.y_sens[a][j] = full.y_sens[a][indices[j]];
    }
    return batch;
}

namespace detail {

/// Column-wise stable log-softmax; p = exp(log_p).
struct Softmax {
    Matrix p;
    Matrix log_p;
};

inline Softmax stable_softmax(const Matrix& logits) {
    Softmax s;
    s.log_p = logits;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        const double m = logits.col(j).maxCoeff();
        const double lse = m + std::log((logits.col(j).array() - m).exp().sum());
        s.log_p.col(j).array() -= lse;
    }
    s.p = s.log_p.array().exp();
    return s;
}

inline double cross_entropy_mean(const Softmax& sm, const std::vector<int>& targets) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < sm.log_p.cols(); ++j)
        sum -= sm.log_p(targets[static_cast<std::size_t>(j)], j);
    return sum / static_cast<double>(sm.log_p.cols());
}

/// Per-column Shannon entropies (natural base) of softmax distributions.
inline Vector column_entropies(const Softmax& sm) {
    return -(sm.p.array() * sm.log_p.array()).colwise().sum();
}

/// d objective / d logits for mean cross-entropy: (softmax - onehot) / n.
inline Matrix cross_entropy_logit_grad(const Softmax& sm, const std::vector<int>& targets) {
    Matrix g = sm.p;
    const double inv_n = 1.0 / static_cast<double>(g.cols());
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(targets[static_cast<std::size_t>(j)], j) -= 1.0;
    return g * inv_n;
}

/// d mean-entropy / d logits: column j is -p .* (log_p + H_j) / n.
inline Matrix entropy_logit_grad(const Softmax& sm) {
    const Vector h = column_entropies(sm);
    Matrix g = sm.log_p;
    g.array().rowwise() += h.transpose().array();
    g.array() *= -sm.p.array();
    return g / static_cast<double>(g.cols());
}

} // namespace detail

/// Softmax cross-entropy of a single logit vector against a target class.
inline double loss_cls(const Vector& logits, int target) {
    if (target < 0 || target >= logits.size()) throw ValidationError("loss_cls: target out of range");
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return lse - logits(target);
}

/// Shannon entropy (natural base) of the softmax of a logit vector.
inline double loss_entropy(const Vector& logits) {
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    const Eigen::ArrayXd log_p = logits.array() - lse;
    const double h = -(log_p.exp() * log_p).sum();
    return h < 0.0 ? 0.0 : h;
}

/// Mean over the batch of half the squared reconstruction error.
inline double loss_decom(const DebiasModel& m, const Matrix& Z) {
    if (Z.cols() == 0) throw ValidationError("loss_decom: empty batch");
    if (Z.rows() != m.dims.d1) throw ValidationError("loss_decom: dimension mismatch");
    const Matrix C = m.B * Z;
    Matrix R = Z - m.A * C;
    for (int i = 0; i < m.dims.attribute_count(); ++i) R.noalias() -= m.D[i] * (m.T[i] * C);
    return 0.5 * R.squaredNorm() / static_cast<double>(Z.cols());
}

/// Weighted orthogonality penalty sum_i lambda_or_i * 0.5 ||A^T D_i||_F^2.
inline double loss_or(const DebiasModel& m, const std::vector<double>& lambda_orth) {
    if (static_cast<int>(lambda_orth.size()) != m.dims.attribute_count())
        throw ValidationError("loss_or: lambda_orth has wrong length");
    double total = 0.0;
    for (int i = 0; i < m.dims.attribute_count(); ++i)
        total += lambda_orth[i] * 0.5 * (m.A.transpose() * m.D[i]).squaredNorm();
    return total;
}

/// Per-term loss values over a batch (used for the epoch history).
struct LossBreakdown {
    double cls_p = 0.0;
    double decom = 0.0;
    double orth = 0.0;
    std::vector<double> cls_i;
    std::vector<double> entr_i;

    bool all_finite() const {
        if (!std::isfinite(cls_p) || !std::isfinite(decom) || !std::isfinite(orth)) return false;
        for (double v : cls_i)
            if (!std::isfinite(v)) return false;
        for (double v : entr_i)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline LossBreakdown loss_breakdown(const DebiasModel& m, const LabeledBatch& batch,
                                    const std::vector<double>& lambda_orth) {
    if (batch.size() == 0) throw ValidationError("loss_breakdown: empty batch");
    LossBreakdown out;
    const Matrix C = m.B * batch.Z;
    const Matrix Zp = m.A * C;
    Matrix R = batch.Z - Zp;
    const Matrix Lp = (m.Wp * Zp).colwise() + m.bp;
    const auto smp = detail::stable_softmax(Lp);
    out.cls_p = detail::cross_entropy_mean(smp, batch.y_p);
    const int n = m.dims.attribute_count();
    out.cls_i.resize(n);
    out.entr_i.resize(n);
    for (int i = 0; i < n; ++i) {
        const Matrix S = m.T[i] * C;
        R.noalias() -= m.D[i] * S;
        const Matrix Li = (m.W[i] * S).colwise() + m.b[i];
        const auto smi = detail::stable_softmax(Li);
        out.cls_i[static_cast<std::size_t>(i)] = detail::cross_entropy_mean(smi, batch.y_sens[i]);
        out.entr_i[static_cast<std::size_t>(i)] =
            detail::column_entropies(smi).sum() / static_cast<double>(batch.size());
    }
    out.decom = 0.5 * R.squaredNorm() / static_cast<double>(batch.size());
    out.orth = loss_or(m, lambda_orth);
    return out;
}

/// The main objective minimized over V:
///   L_cls_p + lambda_dec L_decom + L_or - sum_i lambda_i L_entr_i.
inline double objective_main(const DebiasModel& m, const LabeledBatch& batch,
                             const Hyperparams& hyper) {
    const int n = m.dims.attribute_count();
    const auto lambda_e = hyper.resolved_lambda_entropy(n);
    const auto lambda_o = hyper.resolved_lambda_orth(n);
    const LossBreakdown parts = loss_breakdown(m, batch, lambda_o);
    double total = parts.cls_p + hyper.lambda_dec * parts.decom + parts.orth;
    for (int i = 0; i < n; ++i)
        total -= lambda_e[static_cast<std::size_t>(i)] * parts.entr_i[static_cast<std::size_t>(i)];
    return total;
}

/// The adversary objective minimized over U: sum_i L_cls_i.
inline double objective_adv(const DebiasModel& m, const LabeledBatch& batch) {
    if (batch.size() == 0) throw ValidationError("objective_adv: empty batch");
    const int n = m.dims.attribute_count();
    if (n == 0) return 0.0;
    double total = 0.0;
    const Matrix C = m.B * batch.Z;
    for (int i = 0; i < n; ++i) {
        const Matrix S = m.T[i] * C;
        const Matrix Li = (m.W[i] * S).colwise() + m.b[i];
        total += detail::cross_entropy_mean(detail::stable_softmax(Li), batch.y_sens[i]);
    }
    return total;
}

struct MainGradients {
    Matrix A;
    Matrix B;
    std::vector<Matrix> D;
    Matrix Wp;
    Vector bp;
};

struct AdvGradients {
    std::vector<Matrix> T;
    std::vector<Matrix> W;
    std::vector<Vector> b;
};

/// Analytic gradient of objective_main w.r.t. V = {A, B, D_i, W_p, b_p},
/// treating U = {T_i, W_i, b_i} as constants.
inline MainGradients grad_main(const DebiasModel& m, const LabeledBatch& batch,
                               const Hyperparams& hyper) {
    if (batch.size() == 0) throw ValidationError("grad_main: empty batch");
    if (batch.Z.rows() != m.dims.d1) throw ValidationError("grad_main: dimension mismatch");
    const int n = m.dims.attribute_count();
    const auto lambda_e = hyper.resolved_lambda_entropy(n);
    const auto lambda_o = hyper.resolved_lambda_orth(n);
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    const Matrix C = m.B * batch.Z;    // d2 x n
    const Matrix Zp = m.A * C;         // d1 x n
    std::vector<Matrix> S(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) S[static_cast<std::size_t>(i)] = m.T[i] * C;

    MainGradients g;

    // Primary cross-entropy through W_p, z_p, the code and B.
    const Matrix Lp = (m.Wp * Zp).colwise() + m.bp;
    const Matrix Gp = detail::cross_entropy_logit_grad(detail::stable_softmax(Lp), batch.y_p);
    g.Wp = Gp * Zp.transpose();
    g.bp = Gp.rowwise().sum();
    const Matrix U = m.Wp.transpose() * Gp; // d objective / d Zp
    g.A = U * C.transpose();
    Matrix Cbar = m.A.transpose() * U;      // d objective / d C

    // Reconstruction term.
    g.D.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) g.D[static_cast<std::size_t>(i)].setZero(m.dims.d1, m.dims.d3[i]);
    if (hyper.lambda_dec > 0.0) {
        Matrix R = batch.Z - Zp;
        for (int i = 0; i < n; ++i) R.noalias() -= m.D[i] * S[static_cast<std::size_t>(i)];
        const Matrix Rw = (hyper.lambda_dec * inv_n) * R;
        g.A.noalias() -= Rw * C.transpose();
        Cbar.noalias() -= m.A.transpose() * Rw;
        for (int i = 0; i < n; ++i) {
            g.D[static_cast<std::size_t>(i)].noalias() -= Rw * S[static_cast<std::size_t>(i)].transpose();
            Cbar.noalias() -= m.T[i].transpose() * (m.D[i].transpose() * Rw);
        }
    }

    // Negated adversary-entropy terms reach V only through B.
    for (int i = 0; i < n; ++i) {
        const double li = lambda_e[static_cast<std::size_t>(i)];
        if (li == 0.0) continue;
        const Matrix Li = (m.W[i] * S[static_cast<std::size_t>(i)]).colwise() + m.b[i];
        const Matrix Gh = detail::entropy_logit_grad(detail::stable_softmax(Li));
        Cbar.noalias() -= li * (m.T[i].transpose() * (m.W[i].transpose() * Gh));
    }

    g.B = Cbar * batch.Z.transpose();

    // Orthogonality penalty.
    for (int i = 0; i < n; ++i) {
        const double lo = lambda_o[static_cast<std::size_t>(i)];
        if (lo == 0.0) continue;
        const Matrix M = m.A.transpose() * m.D[i]; // d2 x d3_i
        g.A.noalias() += lo * (m.D[i] * M.transpose());
        g.D[static_cast<std::size_t>(i)].noalias() += lo * (m.A * M);
    }
    return g;
}

/// Analytic gradient of objective_adv w.r.t. U = {T_i, W_i, b_i},
/// treating V as constants.
inline AdvGradients grad_adv(const DebiasModel& m, const LabeledBatch& batch) {
    if (batch.size() == 0) throw ValidationError("grad_adv: empty batch");
    if (batch.Z.rows() != m.dims.d1) throw ValidationError("grad_adv: dimension mismatch");
    const int n = m.dims.attribute_count();
    AdvGradients g;
    g.T.resize(static_cast<std::size_t>(n));
    g.W.resize(static_cast<std::size_t>(n));
    g.b.resize(static_cast<std::size_t>(n));
    if (n == 0) return g;
    const Matrix C = m.B * batch.Z;
    for (int i = 0; i < n; ++i) {
        const Matrix S = m.T[i] * C;
        const Matrix Li = (m.W[i] * S).colwise() + m.b[i];
        const Matrix Gi = detail::cross_entropy_logit_grad(detail::stable_softmax(Li),
                                                           batch.y_sens[i]);
        g.W[static_cast<std::size_t>(i)] = Gi * S.transpose();
        g.b[static_cast<std::size_t>(i)] = Gi.rowwise().sum();
        g.T[static_cast<std::size_t>(i)] = (m.W[i].transpose() * Gi) * C.transpose();
    }
    return g;
}

using EpochLosses = LossBreakdown;

struct TrainResult {
    DebiasModel model;
    std::vector<EpochLosses> history;
};

inline std::string history_csv(const std::vector<EpochLosses>& history, int n_attributes) {
    std::string out = "epoch,L_cls_p,L_decom,L_or";
    for (int i = 1; i <= n_attributes; ++i) out += ",L_cls_" + std::to_string(i);
    for (int i = 1; i <= n_attributes; ++i) out += ",L_entr_" + std::to_string(i);
    out += '\n';
    for (std::size_t e = 0; e < history.size(); ++e) {
        const auto& h = history[e];
        out += std::to_string(e + 1);
        out += ',' + io::format_double(h.cls_p);
        out += ',' + io::format_double(h.decom);
        out += ',' + io::format_double(h.orth);
        for (double v : h.cls_i) out += ',' + io::format_double(v);
        for (double v : h.entr_i) out += ',' + io::format_double(v);
        out += '\n';
    }
    return out;
}

namespace detail {

struct MainVelocity {
    Matrix A, B, Wp;
    Vector bp;
    std::vector<Matrix> D;
};

struct AdvVelocity {
    std::vector<Matrix> T, W;
    std::vector<Vector> b;
};

} // namespace detail

/// Alternating min-max training: per batch, k adversary steps on U followed
/// by one main step on V, both plain SGD with momentum. Deterministic given
/// (seed, hyperparameters, dataset order).
inline TrainResult train(const Dataset& ds, const Hyperparams& hyper) {
    hyper.validate();
    ds.schema.validate();
    if (ds.records.empty()) throw ValidationError("train: empty dataset");

    DebiasDims dims;
    dims.d1 = ds.schema.d1;
    dims.d2 = hyper.d2 > 0 ? hyper.d2 : default_d2(dims.d1);
    dims.K_p = ds.schema.K_p;
    const int n_attr = ds.schema.attribute_count();
    for (const auto& attr : ds.schema.sensitive) dims.K.push_back(attr.cardinality);
    if (hyper.d3.empty()) {
        dims.d3.assign(static_cast<std::size_t>(n_attr), default_d3(dims.d1));
    } else if (static_cast<int>(hyper.d3.size()) == n_attr) {
        dims.d3 = hyper.d3;
    } else {
        throw ValidationError("hyper: d3 has wrong length");
    }
    const auto lambda_o = hyper.resolved_lambda_orth(n_attr);
    hyper.resolved_lambda_entropy(n_attr); // validate length up front

    Rng init_rng(Rng::mix(hyper.seed, 1));
    DebiasModel model = DebiasModel::init(dims, hyper.init_scale, init_rng);
    Rng shuffle_rng(Rng::mix(hyper.seed, 2));

    const LabeledBatch full = make_batch(ds);
    const std::size_t n = ds.records.size();
    const std::size_t batch_size = static_cast<std::size_t>(hyper.batch_size);

    detail::MainVelocity vel_v;
    vel_v.A.setZero(dims.d1, dims.d2);
    vel_v.B.setZero(dims.d2, dims.d1);
    vel_v.Wp.setZero(dims.K_p, dims.d1);
    vel_v.bp.setZero(dims.K_p);
    for (int i = 0; i < n_attr; ++i) vel_v.D.emplace_back(Matrix::Zero(dims.d1, dims.d3[i]));
    detail::AdvVelocity vel_u;
    for (int i = 0; i < n_attr; ++i) {
        vel_u.T.emplace_back(Matrix::Zero(dims.d3[i], dims.d2));
        vel_u.W.emplace_back(Matrix::Zero(dims.K[i], dims.d3[i]));
        vel_u.b.emplace_back(Vector::Zero(dims.K[i]));
    }

    const auto step = [&](Matrix& param, Matrix& vel, const Matrix& grad, double lr) {
        vel = hyper.momentum * vel + grad;
        param.noalias() -= lr * vel;
    };
    const auto step_vec = [&](Vector& param, Vector& vel, const Vector& grad, double lr) {
        vel = hyper.momentum * vel + grad;
        param.noalias() -= lr * vel;
    };

    TrainResult result;
    for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
        const std::vector<std::size_t> perm = shuffle_rng.permutation(n);
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += batch_size, ++batch_index) {
            const std::size_t end = std::min(n, start + batch_size);
            const std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                               perm.begin() + static_cast<std::ptrdiff_t>(end));
            const LabeledBatch batch = gather(full, idx);

            if (n_attr > 0) {
                for (int s = 0; s < hyper.adversary_steps; ++s) {
                    const AdvGradients ga = grad_adv(model, batch);
                    for (int i = 0; i < n_attr; ++i) {
                        step(model.T[i], vel_u.T[i], ga.T[i], hyper.step_u);
                        step(model.W[i], vel_u.W[i], ga.W[i], hyper.step_u);
                        step_vec(model.b[i], vel_u.b[i], ga.b[i], hyper.step_u);
                    }
                }
            }

            const MainGradients gm = grad_main(model, batch, hyper);
            step(model.A, vel_v.A, gm.A, hyper.step_v);
            step(model.B, vel_v.B, gm.B, hyper.step_v);
            step(model.Wp, vel_v.Wp, gm.Wp, hyper.step_v);
            step_vec(model.bp, vel_v.bp, gm.bp, hyper.step_v);
            for (int i = 0; i < n_attr; ++i) step(model.D[i], vel_v.D[i], gm.D[i], hyper.step_v);

            if (!model.all_finite())
                throw NumericalError("train: non-finite parameters at epoch " +
                                     std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_index));
        }

        EpochLosses losses = loss_breakdown(model, full, lambda_o);
        if (!losses.all_finite())
            throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
        result.history.push_back(std::move(losses));
    }
    result.model = std::move(model);
    return result;
}

/// Replaces every embedding with its debiased task component A B z.
inline Dataset debias_apply(const DebiasModel& model, const Dataset& ds) {
    if (ds.schema.d1 != model.dims.d1)
        throw ValidationError("debias_apply: dataset d1=" + std::to_string(ds.schema.d1) +
                              ", model expects " + std::to_string(model.dims.d1));
    Dataset out = ds;
    for (auto& r : out.records) {
        const Eigen::Map<const Vector> z(r.z.data(), static_cast<Eigen::Index>(r.z.size()));
        const Vector zp = model.A * (model.B * z);
        for (std::size_t i = 0; i < r.z.size(); ++i) r.z[i] = zp(static_cast<Eigen::Index>(i));
    }
    return out;
}

} // namespace fairtk
