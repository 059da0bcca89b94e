#include "dpt/baselines.hpp"

#include "dpt/errors.hpp"
#include "dpt/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <limits>

namespace dpt {

void MomentEstimates::validate() const {
    const Eigen::Index n = mean.size();
    if (n < 1) throw ShapeError("moment estimates are empty");
    if (covariance.rows() != n || covariance.cols() != n) {
        throw ShapeError("covariance is " + std::to_string(covariance.rows()) + "x" +
                         std::to_string(covariance.cols()) + " but mean has length " +
                         std::to_string(n));
    }
    if (!mean.allFinite() || !covariance.allFinite()) {
        throw DataError("moment estimates contain non-finite entries");
    }
    const double asym = (covariance - covariance.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12) {
        throw DataError("covariance asymmetric by " + format_value(asym));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance,
                                                       Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10) {
        throw DataError("covariance has eigenvalue " +
                        format_value(eig.eigenvalues().minCoeff()));
    }
}

void ViewSpec::validate(Eigen::Index n_assets) const {
    const Eigen::Index v = P.rows();
    if (v < 1) throw ShapeError("view spec has no views");
    if (P.cols() != n_assets) {
        throw ShapeError("view matrix has " + std::to_string(P.cols()) +
                         " columns for " + std::to_string(n_assets) + " assets");
    }
    if (q.size() != v) {
        throw ShapeError("view targets have length " + std::to_string(q.size()) +
                         " for " + std::to_string(v) + " views");
    }
    if (Omega.rows() != v || Omega.cols() != v) {
        throw ShapeError("view covariance must be " + std::to_string(v) + "x" +
                         std::to_string(v));
    }
    if (!P.allFinite() || !q.allFinite() || !Omega.allFinite()) {
        throw DataError("view spec contains non-finite entries");
    }
    if ((Omega - Omega.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw DataError("view covariance is not symmetric");
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw DomainError("view weight lambda must be finite and >= 0");
    }
}

void FactorModel::validate() const {
    if (W.rows() < 1 || W.cols() < 1) throw ShapeError("factor model has empty loadings");
    if (F.rows() != W.cols()) {
        throw ShapeError("loadings have " + std::to_string(W.cols()) +
                         " factors but factor series has " + std::to_string(F.rows()));
    }
    if (!W.allFinite() || !F.allFinite()) {
        throw DataError("factor model contains non-finite entries");
    }
    for (std::size_t i = 1; i < objective_trace.size(); ++i) {
        if (objective_trace[i] > objective_trace[i - 1] + 1e-10) {
            throw DataError("objective increased at pass " + std::to_string(i) +
                            ": " + format_value(objective_trace[i - 1]) + " -> " +
                            format_value(objective_trace[i]));
        }
    }
}

MomentEstimates markowitz_moments(const ReturnsMatrix& X) {
    X.validate();
    const Eigen::Index t = X.rows();
    if (t < 2) throw DomainError("moment estimation needs at least two periods");

    MomentEstimates out;
    out.mean = X.values.colwise().mean();
    const Eigen::MatrixXd centered = X.values.rowwise() - out.mean.transpose();
    out.covariance = centered.transpose() * centered / static_cast<double>(t);
    // the product above is symmetric only up to rounding; make it exact
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    return out;
}

Eigen::VectorXd black_litterman_mean(const MomentEstimates& moments,
                                     const ViewSpec& views) {
    moments.validate();
    views.validate(moments.mean.size());

    Eigen::FullPivLU<Eigen::MatrixXd> sigma_lu(moments.covariance);
    if (!sigma_lu.isInvertible()) {
        throw ConditioningError("covariance is singular (rank " +
                                std::to_string(sigma_lu.rank()) + " of " +
                                std::to_string(moments.covariance.rows()) + ")");
    }
    if (views.lambda == 0.0) return moments.mean; // penalty vanishes exactly

    Eigen::LLT<Eigen::MatrixXd> omega_llt(views.Omega);
    if (omega_llt.info() != Eigen::Success) {
        throw ConditioningError("view covariance is not positive definite");
    }

    const Eigen::Index n = moments.mean.size();
    const Eigen::MatrixXd sigma_inv =
        sigma_lu.solve(Eigen::MatrixXd::Identity(n, n));
    const Eigen::MatrixXd omega_inv_p = omega_llt.solve(views.P);
    const Eigen::MatrixXd lhs =
        sigma_inv + views.lambda * views.P.transpose() * omega_inv_p;
    const Eigen::VectorXd rhs = sigma_inv * moments.mean +
                                views.lambda * views.P.transpose() *
                                    omega_llt.solve(views.q);
    return lhs.ldlt().solve(rhs);
}

namespace {

double soft_threshold(double z, double gamma) {
    if (z > gamma) return z - gamma;
    if (z < -gamma) return z + gamma;
    return 0.0;
}

} // namespace

Eigen::VectorXd lasso(const Eigen::MatrixXd& design,
                      const Eigen::VectorXd& response, double lambda) {
    if (design.rows() != response.size()) {
        throw ShapeError("design has " + std::to_string(design.rows()) +
                         " rows but response has length " +
                         std::to_string(response.size()));
    }
    if (!design.allFinite() || !response.allFinite()) {
        throw DataError("lasso inputs contain non-finite entries");
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw DomainError("lasso penalty must be finite and >= 0");
    }

    const Eigen::Index k = design.cols();
    const Eigen::VectorXd col_sq = design.colwise().squaredNorm();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd residual = response;

    constexpr int max_sweeps = 10000;
    constexpr double tol = 1e-10;
    double delta = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        delta = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) {
            if (col_sq(j) == 0.0) continue; // a dead column keeps weight zero
            const double rho = design.col(j).dot(residual) + col_sq(j) * w(j);
            const double updated = soft_threshold(rho, lambda / 2.0) / col_sq(j);
            const double change = updated - w(j);
            if (change != 0.0) {
                residual -= design.col(j) * change;
                w(j) = updated;
            }
            delta = std::max(delta, std::abs(change));
        }
        if (delta < tol) return w;
    }
    throw IterationLimitError("lasso: no convergence after " +
                                  std::to_string(max_sweeps) +
                                  " sweeps, last max coordinate change " +
                                  format_value(delta),
                              delta);
}

FactorModel factor_model_fit(const ReturnsMatrix& R, int K, double lambda,
                             int max_iters, std::uint64_t seed) {
    R.validate();
    const Eigen::Index t = R.rows();
    const Eigen::Index n = R.cols();
    if (K < 1 || K > std::min(t, n)) {
        throw DomainError("factor count must be in [1, min(N, T) = " +
                          std::to_string(std::min(t, n)) + "], got " +
                          std::to_string(K));
    }
    if (max_iters < 1) throw DomainError("max_iters must be >= 1");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw DomainError("factor penalty must be finite and >= 0");
    }

    FactorModel model;
    model.lambda = lambda;
    model.W = Eigen::MatrixXd::Zero(n, K);
    model.F.resize(K, t);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < K; ++i) {
        for (Eigen::Index j = 0; j < t; ++j) model.F(i, j) = rng.normal();
    }

    double prev = std::numeric_limits<double>::quiet_NaN();
    for (int iter = 0; iter < max_iters; ++iter) {
        const Eigen::MatrixXd design = model.F.transpose(); // T x K
        for (Eigen::Index a = 0; a < n; ++a) {
            model.W.row(a) = lasso(design, R.values.col(a), lambda).transpose();
        }

        if (!model.W.isZero(0.0)) {
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(model.W);
            if (qr.rank() < K) {
                throw ConditioningError(
                    "factor step: loadings have rank " + std::to_string(qr.rank()) +
                    " < " + std::to_string(K) + " factors");
            }
            const Eigen::MatrixXd gram = model.W.transpose() * model.W;
            model.F = gram.llt().solve(model.W.transpose() *
                                       R.values.transpose());
        }
        // with all-zero loadings any F is optimal, so the factor step is skipped

        const double obj = (R.values.transpose() - model.W * model.F).squaredNorm() +
                           lambda * model.W.cwiseAbs().sum();
        model.objective_trace.push_back(obj);
        if (!std::isfinite(obj)) {
            throw DivergenceError("factor model objective became non-finite at pass " +
                                      std::to_string(iter),
                                  iter);
        }
        if (iter > 0 && std::abs(prev - obj) < 1e-8 * std::max(1.0, std::abs(prev))) {
            break;
        }
        prev = obj;
    }
    return model;
}

namespace {

nlohmann::json matrix_rows(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

std::string factor_model_to_json(const FactorModel& model) {
    nlohmann::json doc;
    doc["lambda"] = model.lambda;
    doc["W"] = matrix_rows(model.W);
    doc["F"] = matrix_rows(model.F);
    doc["objective_trace"] = model.objective_trace;
    return doc.dump(2) + "\n";
}

} // namespace dpt
