#include "dpt/market_map.hpp"

#include "dpt/errors.hpp"
#include "dpt/rng.hpp"

#include <algorithm>
#include <cmath>

namespace dpt {

Network train_autoencoder(const ReturnsMatrix& X, int hidden_width,
                          const TrainConfig& cfg, Activation hidden_act,
                          Activation output_act) {
    X.validate();
    if (hidden_width < 1) throw DomainError("hidden_width must be >= 1");
    const Eigen::Index n = X.cols();
    const Network arch = Network::make({n, hidden_width, n}, {hidden_act, output_act});
    auto [net, trace] = train_sgd(arch, X.values, X.values, cfg);
    return net;
}

Eigen::VectorXd reconstruction_errors(const Network& net, const ReturnsMatrix& X) {
    X.validate();
    if (net.input_size() != X.cols() || net.output_size() != X.cols()) {
        throw ShapeError("market-map width " + std::to_string(net.input_size()) + "->" +
                         std::to_string(net.output_size()) + " does not match N = " +
                         std::to_string(X.cols()));
    }
    const Eigen::MatrixXd resid = X.values - forward_rows(net, X.values);
    return resid.colwise().norm();
}

double epsilon_market(const Network& net, const ReturnsMatrix& X) {
    X.validate();
    if (net.input_size() != X.cols() || net.output_size() != X.cols()) {
        throw ShapeError("market-map width does not match panel width " +
                         std::to_string(X.cols()));
    }
    const Eigen::MatrixXd resid = X.values - forward_rows(net, X.values);
    return resid.squaredNorm() / static_cast<double>(X.rows());
}

CommunalRanking rank_communal(const Eigen::VectorXd& errors,
                              const std::vector<std::string>& tickers) {
    if (static_cast<std::size_t>(errors.size()) != tickers.size()) {
        throw ShapeError("error vector length " + std::to_string(errors.size()) +
                         " != ticker count " + std::to_string(tickers.size()));
    }
    if (!errors.allFinite()) throw DataError("reconstruction errors must be finite");
    CommunalRanking ranking;
    ranking.order.reserve(tickers.size());
    for (std::size_t i = 0; i < tickers.size(); ++i) {
        ranking.order.push_back({tickers[i], errors(static_cast<Eigen::Index>(i))});
    }
    std::sort(ranking.order.begin(), ranking.order.end(),
              [](const RankedStock& a, const RankedStock& b) {
                  if (a.reconstruction_error != b.reconstruction_error) {
                      return a.reconstruction_error < b.reconstruction_error;
                  }
                  return a.ticker < b.ticker;
              });
    return ranking;
}

std::vector<std::string> select_universe(const CommunalRanking& ranking, int n_total,
                                         int n_communal) {
    const int n = static_cast<int>(ranking.order.size());
    if (n_communal < 0 || n_communal > n_total) {
        throw SelectionError("n_communal " + std::to_string(n_communal) +
                             " must be in [0, n_total = " + std::to_string(n_total) + "]");
    }
    if (n_total > n) {
        throw SelectionError("n_total " + std::to_string(n_total) + " exceeds universe size " +
                             std::to_string(n));
    }
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(n_total));
    for (int i = 0; i < n_communal; ++i) {
        out.push_back(ranking.order[static_cast<std::size_t>(i)].ticker);
    }
    const int n_noncommunal = n_total - n_communal;
    for (int i = 0; i < n_noncommunal; ++i) {
        out.push_back(ranking.order[static_cast<std::size_t>(n - 1 - i)].ticker);
    }
    return out;
}

EncoderReport make_encoder_report(const Network& net, const ReturnsMatrix& calibration,
                                  const std::optional<ReturnsMatrix>& holdout) {
    EncoderReport report;
    report.net = net;
    report.tickers = calibration.tickers;
    report.per_stock_errors = reconstruction_errors(net, calibration);
    if (holdout) report.epsilon_m = epsilon_market(net, *holdout);
    return report;
}

std::string ranking_to_csv(const CommunalRanking& ranking) {
    std::string text = "rank,ticker,reconstruction_error\n";
    for (std::size_t i = 0; i < ranking.order.size(); ++i) {
        text += std::to_string(i + 1);
        text += ",";
        text += ranking.order[i].ticker;
        text += ",";
        text += format_value(ranking.order[i].reconstruction_error);
        text += "\n";
    }
    return text;
}

namespace {

double latent_penalty(const Eigen::MatrixXd& z, const TrainConfig& cfg) {
    if (cfg.lambda == 0.0) return 0.0;
    return cfg.penalty == Penalty::L2 ? cfg.lambda * z.squaredNorm()
                                      : cfg.lambda * z.array().abs().sum();
}

Eigen::MatrixXd apply_elementwise(Activation act, const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
            out(r, c) = activation_apply(act, out(r, c));
        }
    }
    return out;
}

Eigen::MatrixXd derivative_elementwise(Activation act, const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
            out(r, c) = activation_derivative(act, out(r, c));
        }
    }
    return out;
}

double alternating_objective(const Eigen::MatrixXd& xc, const Eigen::MatrixXd& w1,
                             const Eigen::MatrixXd& w2, const Eigen::MatrixXd& z,
                             Activation f, const TrainConfig& cfg) {
    const double decode = (xc - w2 * z).squaredNorm();
    const double encode = (z - apply_elementwise(f, w1 * xc)).squaredNorm();
    return decode + latent_penalty(z, cfg) + encode;
}

} // namespace

AlternatingResult train_autoencoder_alternating(const ReturnsMatrix& X,
                                                int hidden_width,
                                                const TrainConfig& cfg,
                                                const AlternatingOptions& opts) {
    X.validate();
    if (hidden_width < 1) throw DomainError("hidden_width must be >= 1");
    cfg.validate(X.rows());
    if (opts.z_steps < 1 || opts.w_steps < 1) {
        throw DomainError("z_steps and w_steps must be >= 1");
    }
    if (opts.exact) {
        if (opts.encoder_activation != Activation::Linear) {
            throw DomainError("exact alternating updates require a linear encoder");
        }
        if (cfg.lambda > 0.0 && cfg.penalty != Penalty::L2) {
            throw DomainError("exact alternating updates require an l2 (or zero) penalty");
        }
    }

    const Eigen::MatrixXd xc = X.values.transpose(); // N x T, columns are samples
    const Eigen::Index n = xc.rows();
    const Eigen::Index t = xc.cols();
    const Eigen::Index h = hidden_width;

    Rng rng(cfg.seed);
    Eigen::MatrixXd w1(h, n), w2(n, h);
    {
        const double s1 = cfg.init_scale ? *cfg.init_scale
                                         : 0.5 / std::sqrt(static_cast<double>(n));
        for (Eigen::Index r = 0; r < h; ++r) {
            for (Eigen::Index c = 0; c < n; ++c) w1(r, c) = rng.uniform(-s1, s1);
        }
        const double s2 = cfg.init_scale ? *cfg.init_scale
                                         : 0.5 / std::sqrt(static_cast<double>(h));
        for (Eigen::Index r = 0; r < n; ++r) {
            for (Eigen::Index c = 0; c < h; ++c) w2(r, c) = rng.uniform(-s2, s2);
        }
    }
    const Activation f = opts.encoder_activation;
    Eigen::MatrixXd z = apply_elementwise(f, w1 * xc); // H x T

    AlternatingResult result;
    result.objective_trace.reserve(static_cast<std::size_t>(cfg.epochs));
    for (int iter = 0; iter < cfg.epochs; ++iter) {
        // (a) latent update, W fixed
        if (opts.exact) {
            const double ridge = 1.0 + (cfg.penalty == Penalty::L2 ? cfg.lambda : 0.0);
            const Eigen::MatrixXd gram =
                w2.transpose() * w2 + ridge * Eigen::MatrixXd::Identity(h, h);
            z = gram.ldlt().solve(w2.transpose() * xc + w1 * xc);
        } else {
            const Eigen::MatrixXd encoded = apply_elementwise(f, w1 * xc);
            for (int s = 0; s < opts.z_steps; ++s) {
                Eigen::MatrixXd grad =
                    2.0 * w2.transpose() * (w2 * z - xc) + 2.0 * (z - encoded);
                if (cfg.lambda > 0.0) {
                    if (cfg.penalty == Penalty::L2) {
                        grad += 2.0 * cfg.lambda * z;
                    } else {
                        grad += cfg.lambda * z.array().sign().matrix();
                    }
                }
                z -= cfg.learning_rate * grad;
            }
        }

        // (b) weight update, Z fixed
        if (opts.exact) {
            // W2 minimizes ||Xc - W2 Z||_F, W1 minimizes ||Z - W1 Xc||_F.
            w2 = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(z.transpose())
                     .solve(xc.transpose())
                     .transpose();
            w1 = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(xc.transpose())
                     .solve(z.transpose())
                     .transpose();
        } else {
            for (int s = 0; s < opts.w_steps; ++s) {
                const Eigen::MatrixXd u = w1 * xc;
                const Eigen::MatrixXd fu = apply_elementwise(f, u);
                const Eigen::MatrixXd g2 = 2.0 * (w2 * z - xc) * z.transpose();
                const Eigen::MatrixXd g1 =
                    2.0 * ((fu - z).cwiseProduct(derivative_elementwise(f, u))) *
                    xc.transpose();
                w2 -= cfg.learning_rate * g2;
                w1 -= cfg.learning_rate * g1;
            }
        }

        const double objective = alternating_objective(xc, w1, w2, z, f, cfg);
        if (!std::isfinite(objective)) {
            throw DivergenceError(
                "alternating training diverged at iteration " + std::to_string(iter),
                iter);
        }
        result.objective_trace.push_back(objective);
    }

    result.net.layers.resize(2);
    result.net.layers[0] = Layer{w1, Eigen::VectorXd::Zero(h), f};
    result.net.layers[1] = Layer{w2, Eigen::VectorXd::Zero(n), Activation::Linear};
    result.net.validate();
    result.latent = std::move(z);
    return result;
}

} // namespace dpt
