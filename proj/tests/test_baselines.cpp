#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dpt/baselines.hpp"
#include "dpt/errors.hpp"
#include "dpt/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <vector>

namespace {

dpt::ReturnsMatrix make_panel(const Eigen::MatrixXd& values) {
    dpt::ReturnsMatrix m;
    m.values = values;
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
        m.tickers.push_back("S" + std::to_string(j));
    }
    for (Eigen::Index t = 0; t < values.rows(); ++t) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "2018-%02d-%02d", 1 + static_cast<int>(t) / 28,
                      1 + static_cast<int>(t) % 28);
        m.timestamps.emplace_back(buf);
    }
    return m;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, dpt::Rng& rng,
                              double scale = 1.0) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

// KKT residual of min ||r - Dw||^2 + lambda ||w||_1 (note: no 1/2 in front
// of the fit, so stationarity reads 2 d_j'(r - Dw) = lambda sign(w_j))
double kkt_violation(const Eigen::MatrixXd& D, const Eigen::VectorXd& r,
                     const Eigen::VectorXd& w, double lambda) {
    const Eigen::VectorXd resid = r - D * w;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
        const double corr = 2.0 * D.col(j).dot(resid);
        if (w(j) != 0.0) {
            worst = std::max(worst, std::abs(corr - lambda * (w(j) > 0 ? 1.0 : -1.0)));
        } else {
            worst = std::max(worst, std::max(0.0, std::abs(corr) - lambda));
        }
    }
    return worst;
}

} // namespace

TEST_CASE("sample moments use the 1/T covariance convention") {
    Eigen::MatrixXd X(2, 1);
    X << 0.0, 2.0;
    const auto m = dpt::markowitz_moments(make_panel(X));
    CHECK(m.mean(0) == doctest::Approx(1.0).epsilon(1e-15));
    // 1/T: ((0-1)^2 + (2-1)^2) / 2 = 1, not the unbiased 2
    CHECK(m.covariance(0, 0) == doctest::Approx(1.0).epsilon(1e-15));

    SUBCASE("two assets, hand-computed cross term") {
        Eigen::MatrixXd Z(3, 2);
        Z << 1.0, 2.0, 2.0, 1.0, 3.0, 3.0;
        const auto mz = dpt::markowitz_moments(make_panel(Z));
        CHECK(mz.mean(0) == doctest::Approx(2.0).epsilon(1e-15));
        CHECK(mz.mean(1) == doctest::Approx(2.0).epsilon(1e-15));
        // cov = E[(x-mx)(y-my)] with 1/3: ((-1)(0) + 0(-1) + (1)(1))/3
        CHECK(mz.covariance(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
        CHECK(mz.covariance == mz.covariance.transpose());
        mz.validate();
    }
    SUBCASE("a single period is not enough") {
        CHECK_THROWS_AS(dpt::markowitz_moments(make_panel(Eigen::MatrixXd::Ones(1, 2))),
                        dpt::DomainError);
    }
    SUBCASE("standardized columns have a unit diagonal") {
        dpt::Rng rng(404);
        Eigen::MatrixXd Z = random_matrix(60, 5, rng, 0.03);
        for (Eigen::Index j = 0; j < Z.cols(); ++j) {
            const double mean = Z.col(j).mean();
            Z.col(j).array() -= mean;
            // same 1/T scaling the estimator itself uses
            Z.col(j) /= std::sqrt(Z.col(j).squaredNorm() / static_cast<double>(Z.rows()));
        }
        const auto ms = dpt::markowitz_moments(make_panel(Z));
        for (Eigen::Index j = 0; j < Z.cols(); ++j) {
            CHECK(ms.covariance(j, j) == doctest::Approx(1.0).epsilon(1e-10));
        }
    }
}

TEST_CASE("view-blended mean matches its closed form and its limits") {
    dpt::Rng rng(101);
    const Eigen::MatrixXd X = random_matrix(40, 4, rng, 0.02);
    const auto moments = dpt::markowitz_moments(make_panel(X));

    dpt::ViewSpec views;
    views.P = Eigen::MatrixXd::Identity(4, 4);
    views.q = Eigen::VectorXd::Constant(4, 0.01);
    views.Omega = Eigen::MatrixXd::Identity(4, 4);

    SUBCASE("lambda = 0 returns the sample mean exactly") {
        views.lambda = 0.0;
        const Eigen::VectorXd mu = dpt::black_litterman_mean(moments, views);
        CHECK(mu == moments.mean);
    }
    SUBCASE("identity views against the direct formula") {
        views.lambda = 2.5;
        const Eigen::VectorXd mu = dpt::black_litterman_mean(moments, views);
        const Eigen::MatrixXd Si = moments.covariance.inverse();
        const Eigen::MatrixXd lhs = Si + 2.5 * Eigen::MatrixXd::Identity(4, 4);
        const Eigen::VectorXd rhs = Si * moments.mean + 2.5 * views.q;
        const Eigen::VectorXd direct = lhs.ldlt().solve(rhs);
        CHECK((mu - direct).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("enormous lambda forces the views when P is invertible") {
        views.lambda = 1e10;
        const Eigen::VectorXd mu = dpt::black_litterman_mean(moments, views);
        CHECK((views.P * mu - views.q).norm() < 1e-4);
    }
    SUBCASE("the returned mean minimizes the blending objective") {
        views.lambda = 1.3;
        const Eigen::VectorXd mu = dpt::black_litterman_mean(moments, views);
        const Eigen::MatrixXd Si = moments.covariance.inverse();
        const auto objective = [&](const Eigen::VectorXd& v) {
            const Eigen::VectorXd d = v - moments.mean;
            const Eigen::VectorXd pv = views.P * v - views.q;
            return d.dot(Si * d) + views.lambda * pv.dot(pv);
        };
        const double at_min = objective(mu);
        for (int i = 0; i < 200; ++i) {
            const Eigen::VectorXd probe = mu + 1e-3 * random_matrix(4, 1, rng);
            CHECK(objective(probe) >= at_min - 1e-15);
        }
    }
    SUBCASE("a singular covariance is refused, not regularized") {
        Eigen::MatrixXd Xdup(40, 4);
        Xdup.leftCols(2) = X.leftCols(2);
        Xdup.col(2) = X.col(0); // duplicate asset: singular covariance
        Xdup.col(3) = X.col(3);
        const auto bad = dpt::markowitz_moments(make_panel(Xdup));
        views.lambda = 1.0;
        CHECK_THROWS_AS(dpt::black_litterman_mean(bad, views), dpt::ConditioningError);
    }
    SUBCASE("views must be well-formed") {
        views.lambda = -1.0;
        CHECK_THROWS_AS(views.validate(4), dpt::DomainError);
        views.lambda = 1.0;
        views.Omega(0, 1) = 0.5; // asymmetric
        CHECK_THROWS_AS(views.validate(4), dpt::DataError);
        views.Omega(0, 1) = 0.0;
        views.Omega(0, 0) = -1.0; // not positive definite
        CHECK_THROWS_AS(dpt::black_litterman_mean(moments, views),
                        dpt::ConditioningError);
    }
}

TEST_CASE("lasso satisfies its optimality conditions") {
    dpt::Rng rng(55);

    SUBCASE("kkt residual stays under 1e-6 on random instances") {
        for (int trial = 0; trial < 25; ++trial) {
            const Eigen::Index T = 30, p = 6;
            const Eigen::MatrixXd D = random_matrix(T, p, rng);
            const Eigen::VectorXd r = random_matrix(T, 1, rng);
            const double lambda = 0.5 + rng.uniform() * 5.0;
            const Eigen::VectorXd w = dpt::lasso(D, r, lambda);
            CHECK(kkt_violation(D, r, w, lambda) < 1e-6);
        }
    }
    SUBCASE("lambda = 0 reproduces least squares") {
        const Eigen::MatrixXd D = random_matrix(30, 5, rng);
        const Eigen::VectorXd r = random_matrix(30, 1, rng);
        const Eigen::VectorXd w = dpt::lasso(D, r, 0.0);
        const Eigen::VectorXd ls = D.colPivHouseholderQr().solve(r);
        CHECK((w - ls).cwiseAbs().maxCoeff() < 1e-8);
    }
    SUBCASE("a single column has the soft-threshold closed form") {
        const Eigen::MatrixXd D = random_matrix(20, 1, rng);
        const Eigen::VectorXd r = random_matrix(20, 1, rng);
        for (const double lambda : {0.0, 0.5, 2.0, 50.0}) {
            const Eigen::VectorXd w = dpt::lasso(D, r, lambda);
            const double rho = D.col(0).dot(r);
            const double expect =
                std::max(0.0, std::abs(rho) - lambda / 2.0) * (rho > 0 ? 1.0 : -1.0) /
                D.col(0).squaredNorm();
            CHECK(w(0) == doctest::Approx(expect).epsilon(1e-10));
        }
    }
    SUBCASE("lambda at twice the max correlation kills every coefficient") {
        const Eigen::MatrixXd D = random_matrix(25, 4, rng);
        const Eigen::VectorXd r = random_matrix(25, 1, rng);
        // per-column dots, so the boundary matches the solver's own
        // correlation arithmetic to the last ulp
        double max_corr = 0.0;
        for (Eigen::Index j = 0; j < D.cols(); ++j) {
            max_corr = std::max(max_corr, std::abs(D.col(j).dot(r)));
        }
        const double lambda = 2.0 * max_corr;
        CHECK(dpt::lasso(D, r, lambda).isZero(0.0));
        CHECK(dpt::lasso(D, r, lambda * 1.5).isZero(0.0));
    }
    SUBCASE("the active set only shrinks along an increasing penalty path") {
        const Eigen::MatrixXd D = random_matrix(40, 8, rng);
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(8);
        beta(1) = 2.0;
        beta(4) = -1.0;
        const Eigen::VectorXd r = D * beta + 0.1 * random_matrix(40, 1, rng);

        int prev_nnz = 9;
        for (const double lambda : {0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 40.0, 160.0}) {
            const Eigen::VectorXd w = dpt::lasso(D, r, lambda);
            int nnz = 0;
            for (Eigen::Index j = 0; j < w.size(); ++j) {
                if (w(j) != 0.0) ++nnz;
            }
            CHECK(nnz <= prev_nnz);
            prev_nnz = nnz;
        }
    }
    SUBCASE("shape mismatch is rejected") {
        CHECK_THROWS_AS(dpt::lasso(Eigen::MatrixXd::Ones(5, 2),
                                   Eigen::VectorXd::Ones(4), 1.0),
                        dpt::ShapeError);
    }
}

TEST_CASE("alternating factor model descends its objective") {
    dpt::Rng rng(77);
    const Eigen::Index N = 8, T = 40, K = 2;

    SUBCASE("noiseless rank-K data is fit almost exactly at lambda 0") {
        const Eigen::MatrixXd W0 = random_matrix(N, K, rng);
        const Eigen::MatrixXd F0 = random_matrix(K, T, rng, 0.02);
        const Eigen::MatrixXd R = (W0 * F0).transpose(); // T x N, exactly rank K
        const auto model = dpt::factor_model_fit(make_panel(R), K, 0.0, 300, 5);

        REQUIRE(!model.objective_trace.empty());
        for (std::size_t i = 1; i < model.objective_trace.size(); ++i) {
            CHECK(model.objective_trace[i] <= model.objective_trace[i - 1] + 1e-10);
        }
        CHECK(model.objective_trace.back() < 1e-6);
        model.validate();
    }
    SUBCASE("a full complement of factors fits any panel exactly at lambda 0") {
        // K = min(N, T): a square invertible loading matrix can absorb
        // everything, so the residual must vanish even on noisy data
        const Eigen::MatrixXd R = random_matrix(9, 5, rng, 0.02); // T=9, N=5
        const auto model = dpt::factor_model_fit(make_panel(R), 5, 0.0, 100, 11);
        CHECK(model.objective_trace.back() <= 1e-6);
        model.validate();
    }
    SUBCASE("noisy data still descends and the export parses") {
        const Eigen::MatrixXd R =
            (random_matrix(N, K, rng) * random_matrix(K, T, rng, 0.02)).transpose() +
            random_matrix(T, N, rng, 0.002);
        const auto model = dpt::factor_model_fit(make_panel(R), K, 0.01, 100, 6);
        for (std::size_t i = 1; i < model.objective_trace.size(); ++i) {
            CHECK(model.objective_trace[i] <= model.objective_trace[i - 1] + 1e-10);
        }
        const auto doc = nlohmann::json::parse(dpt::factor_model_to_json(model));
        CHECK(doc["W"].size() == static_cast<std::size_t>(N));
        CHECK(doc["F"].size() == static_cast<std::size_t>(K));
        CHECK(doc.contains("objective_trace"));
    }
    SUBCASE("an overwhelming penalty zeroes the loadings") {
        const Eigen::MatrixXd R = random_matrix(T, N, rng, 0.02);
        const auto model = dpt::factor_model_fit(make_panel(R), K, 1e6, 50, 7);
        CHECK(model.W.isZero(0.0));
        double total = 0.0;
        for (Eigen::Index j = 0; j < N; ++j) total += R.col(j).squaredNorm();
        CHECK(model.objective_trace.back() == doctest::Approx(total).epsilon(1e-12));
    }
    SUBCASE("rank-deficient loadings are a ConditioningError") {
        // identical assets get bitwise identical lasso rows, so the loadings
        // matrix is exactly rank one while K = 2
        const Eigen::VectorXd u = random_matrix(T, 1, rng, 0.02);
        Eigen::MatrixXd R(T, 4);
        for (Eigen::Index j = 0; j < 4; ++j) R.col(j) = u;
        CHECK_THROWS_AS(dpt::factor_model_fit(make_panel(R), 2, 0.0, 50, 8),
                        dpt::ConditioningError);
    }
    SUBCASE("factor count is bounded by min(N, T)") {
        const Eigen::MatrixXd R = random_matrix(4, 3, rng);
        CHECK_THROWS_AS(dpt::factor_model_fit(make_panel(R), 4, 0.0, 10, 0),
                        dpt::DomainError);
        CHECK_THROWS_AS(dpt::factor_model_fit(make_panel(R), 0, 0.0, 10, 0),
                        dpt::DomainError);
    }
    SUBCASE("validate flags a rising trace") {
        dpt::FactorModel bad;
        bad.W = Eigen::MatrixXd::Ones(3, 1);
        bad.F = Eigen::MatrixXd::Ones(1, 5);
        bad.objective_trace = {1.0, 1.5};
        CHECK_THROWS_AS(bad.validate(), dpt::DataError);
    }
}
