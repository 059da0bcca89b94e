#include "dpt/portfolio_map.hpp"

#include "dpt/errors.hpp"
#include "dpt/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dpt {

void TargetSeries::validate() const {
    if (values.size() < 1) throw ShapeError("target series is empty");
    if (!values.allFinite()) throw DataError("target series has non-finite entries");
    if (amended && (values.array() < floor).any()) {
        throw DataError("amended target still has entries below the floor " +
                        format_value(floor));
    }
}

TargetSeries amend_target(const TargetSeries& y, double floor, double replacement) {
    y.validate();
    if (!std::isfinite(floor) || !std::isfinite(replacement)) {
        throw DomainError("floor and replacement must be finite");
    }
    if (replacement < floor) {
        throw DomainError("replacement " + format_value(replacement) +
                          " must be >= floor " + format_value(floor));
    }
    TargetSeries out = y;
    for (Eigen::Index i = 0; i < out.values.size(); ++i) {
        if (out.values(i) < floor) out.values(i) = replacement;
    }
    out.amended = true;
    out.floor = floor;
    out.replacement = replacement;
    out.validate();
    return out;
}

TargetSeries target_rows(const TargetSeries& y, const std::vector<Eigen::Index>& idx) {
    TargetSeries out = y;
    out.values.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= y.values.size()) {
            throw ShapeError("row index " + std::to_string(idx[i]) +
                             " out of range for target of length " +
                             std::to_string(y.values.size()));
        }
        out.values(static_cast<Eigen::Index>(i)) = y.values(idx[i]);
    }
    return out;
}

std::vector<std::vector<Eigen::Index>> kfold_split(Eigen::Index n_rows, int k,
                                                   std::uint64_t seed, KfoldMode mode) {
    if (k < 2 || static_cast<Eigen::Index>(k) > n_rows) {
        throw DomainError("k must be in [2, n_rows = " + std::to_string(n_rows) +
                          "], got " + std::to_string(k));
    }
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n_rows));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    if (mode == KfoldMode::Shuffled) {
        Rng rng(seed);
        rng.shuffle(idx);
    }
    std::vector<std::vector<Eigen::Index>> folds(static_cast<std::size_t>(k));
    const Eigen::Index base = n_rows / k;
    const Eigen::Index extra = n_rows % k;
    std::size_t pos = 0;
    for (int f = 0; f < k; ++f) {
        const Eigen::Index size = base + (f < extra ? 1 : 0);
        auto& fold = folds[static_cast<std::size_t>(f)];
        fold.assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                    idx.begin() + static_cast<std::ptrdiff_t>(pos + size));
        std::sort(fold.begin(), fold.end());
        pos += static_cast<std::size_t>(size);
    }
    return folds;
}

namespace {

struct RowSubset {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
};

RowSubset take_rows(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                    const std::vector<Eigen::Index>& rows) {
    RowSubset out;
    out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
    out.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.x.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
        out.y(static_cast<Eigen::Index>(i)) = y(rows[i]);
    }
    return out;
}

double mse(const Eigen::VectorXd& truth, const Eigen::VectorXd& pred) {
    return (truth - pred).squaredNorm() / static_cast<double>(truth.size());
}

// Least-squares fit on [1, X], embedded into an n -> h -> 1 linear network:
// hidden unit 0 carries the fitted linear combination, the rest are zero.
Network exact_linear_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         int hidden_width) {
    const Eigen::Index n = x.cols();
    Eigen::MatrixXd design(x.rows(), n + 1);
    design.col(0).setOnes();
    design.rightCols(n) = x;
    const Eigen::VectorXd beta =
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(design).solve(y);

    Network net = Network::make({n, hidden_width, 1},
                                {Activation::Linear, Activation::Linear});
    net.layers[0].weights.row(0) = beta.tail(n).transpose();
    net.layers[1].weights(0, 0) = 1.0;
    net.layers[1].bias(0) = beta(0);
    return net;
}

Network fit_portfolio_net(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                          int hidden_width, const TrainConfig& cfg,
                          const CalibrateOptions& opts) {
    if (opts.solver == CalibrationSolver::ExactLinear) {
        if (opts.hidden_act != Activation::Linear ||
            opts.output_act != Activation::Linear) {
            throw DomainError("exact linear calibration requires linear activations");
        }
        if (cfg.lambda != 0.0) {
            throw DomainError("exact linear calibration requires lambda = 0");
        }
        return exact_linear_fit(x, y, hidden_width);
    }
    const Network arch = Network::make({x.cols(), hidden_width, 1},
                                       {opts.hidden_act, opts.output_act});
    TrainConfig fold_cfg = cfg;
    fold_cfg.batch_size = static_cast<int>(
        std::min<Eigen::Index>(cfg.batch_size, x.rows()));
    auto [net, trace] = train_sgd(arch, x, y, fold_cfg);
    return net;
}

} // namespace

CalibrationReport calibrate(const ReturnsMatrix& X_sel, const TargetSeries& y,
                            int hidden_width, const TrainConfig& cfg, int k,
                            const CalibrateOptions& opts) {
    X_sel.validate();
    y.validate();
    if (hidden_width < 1) throw DomainError("hidden_width must be >= 1");
    if (y.values.size() != X_sel.rows()) {
        throw ShapeError("target length " + std::to_string(y.values.size()) +
                         " != panel rows " + std::to_string(X_sel.rows()));
    }
    const auto folds = kfold_split(X_sel.rows(), k, cfg.seed, opts.fold_mode);

    CalibrationReport report;
    report.fold_mse.reserve(folds.size());
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<Eigen::Index> train_rows;
        train_rows.reserve(static_cast<std::size_t>(X_sel.rows()) - folds[f].size());
        for (std::size_t g = 0; g < folds.size(); ++g) {
            if (g == f) continue;
            train_rows.insert(train_rows.end(), folds[g].begin(), folds[g].end());
        }
        std::sort(train_rows.begin(), train_rows.end());
        const RowSubset train = take_rows(X_sel.values, y.values, train_rows);
        const RowSubset test = take_rows(X_sel.values, y.values, folds[f]);

        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = cfg.seed + f;
        const Network fold_net =
            fit_portfolio_net(train.x, train.y, hidden_width, fold_cfg, opts);
        report.fold_mse.push_back(
            mse(test.y, forward_rows(fold_net, test.x).col(0)));
    }
    report.mean_cv_mse =
        std::accumulate(report.fold_mse.begin(), report.fold_mse.end(), 0.0) /
        static_cast<double>(report.fold_mse.size());

    report.net = fit_portfolio_net(X_sel.values, y.values, hidden_width, cfg, opts);
    report.in_sample_mse =
        mse(y.values, forward_rows(report.net, X_sel.values).col(0));
    return report;
}

Eigen::VectorXd track(const Network& net, const ReturnsMatrix& X_sel) {
    X_sel.validate();
    if (net.output_size() != 1) {
        throw ShapeError("portfolio-map must have scalar output, got width " +
                         std::to_string(net.output_size()));
    }
    if (net.input_size() != X_sel.cols()) {
        throw ShapeError("portfolio-map input width " + std::to_string(net.input_size()) +
                         " != selected panel width " + std::to_string(X_sel.cols()));
    }
    return forward_rows(net, X_sel.values).col(0);
}

std::string calibration_report_to_json(const CalibrationReport& report) {
    nlohmann::json doc;
    doc["fold_mse"] = report.fold_mse;
    doc["mean_cv_mse"] = report.mean_cv_mse;
    doc["in_sample_mse"] = report.in_sample_mse;
    doc["network"] = nlohmann::json::parse(network_to_json(report.net));
    return doc.dump(2) + "\n";
}

} // namespace dpt
