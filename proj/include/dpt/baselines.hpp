#pragma once

#include "dpt/data_ingest.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace dpt {

/// Sample mean and covariance of a returns panel. The covariance uses 1/T
/// normalization, not the unbiased 1/(T-1) most statistics libraries default
/// to, so hand-checked values must follow that convention.
struct MomentEstimates {
    Eigen::VectorXd mean;       // per-asset mean return
    Eigen::MatrixXd covariance; // N x N, symmetric PSD

    /// Throws if shapes disagree, the covariance is asymmetric beyond 1e-12,
    /// or its smallest eigenvalue is below -1e-10.
    void validate() const;
};

/// Linear views on the mean return: each row of P is a portfolio whose
/// expected return is asserted to be the matching entry of q, with confidence
/// encoded by the positive-definite covariance Omega. lambda scales how hard
/// the views pull against the sample mean.
struct ViewSpec {
    Eigen::MatrixXd P;     // V x N view portfolios
    Eigen::VectorXd q;     // V view targets
    Eigen::MatrixXd Omega; // V x V view covariance
    double lambda = 0.0;

    void validate(Eigen::Index n_assets) const;
};

/// Sparse linear factor decomposition of a returns panel: returns at time t
/// are approximated by W * f_t with sparse loadings W.
struct FactorModel {
    Eigen::MatrixXd W;                   // N x K loadings
    Eigen::MatrixXd F;                   // K x T factor series
    double lambda = 0.0;
    std::vector<double> objective_trace; // one entry per alternating pass

    /// Shape consistency plus the defining property of the alternating
    /// solver: the objective never increases (tolerance 1e-10).
    void validate() const;
};

MomentEstimates markowitz_moments(const ReturnsMatrix& X);

/// Mean vector blending the sample mean with the views:
///   mu = (Sigma^-1 + lambda P' Omega^-1 P)^-1 (Sigma^-1 mean + lambda P' Omega^-1 q),
/// the minimizer of (mu - mean)' Sigma^-1 (mu - mean) + lambda (P mu - q)' Omega^-1 (P mu - q).
/// A singular covariance is an error; nothing is regularized behind the
/// caller's back.
Eigen::VectorXd black_litterman_mean(const MomentEstimates& moments,
                                     const ViewSpec& views);

/// Minimizes ||response - design * w||^2 + lambda * ||w||_1 by cyclic
/// coordinate descent. Note the convention: no 1/2 on the fit term, so the
/// soft threshold sits at lambda/2 and the KKT conditions read
/// 2 d_j'(r - Dw) = lambda * sign(w_j) on the active set.
/// Stops when no coordinate moves more than 1e-10 in a sweep; throws
/// IterationLimitError after 10000 sweeps.
Eigen::VectorXd lasso(const Eigen::MatrixXd& design,
                      const Eigen::VectorXd& response, double lambda);

/// Fits the K-factor model by alternating (a) a lasso fit of each asset's
/// return series on the current factors and (b) an exact least-squares
/// update of the factors given the loadings. The objective
///   sum_n ||r_n - sum_k W_nk F_k||^2 + lambda * sum |W_nk|
/// is recorded once per full (a)+(b) pass; iteration ends at max_iters or
/// when the relative objective change drops below 1e-8. F starts from
/// seeded Gaussian noise so runs are reproducible. If every loading is
/// zeroed out (large lambda) the factor step is skipped — the objective no
/// longer depends on F. A rank-deficient nonzero W is a ConditioningError.
FactorModel factor_model_fit(const ReturnsMatrix& R, int K, double lambda,
                             int max_iters, std::uint64_t seed);

std::string factor_model_to_json(const FactorModel& model);

} // namespace dpt
