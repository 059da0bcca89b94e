#pragma once

#include "dpt/data_ingest.hpp"
#include "dpt/neural_core.hpp"
#include "dpt/portfolio_map.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dpt {

/// One evaluated pipeline run: a universe of n_stocks stocks, its market-map
/// and tracking errors on the validation window, and the calibration
/// diagnostics that produced it. lambda is the portfolio-map penalty weight.
struct FrontierPoint {
    int n_stocks = 0;
    double epsilon_m = 0.0; ///< mean per-period squared reconstruction error
    double epsilon_p = 0.0; ///< mean per-period squared tracking error
    double lambda = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::string> tickers;

    // calibration diagnostics (in-sample / cross-validation tracking MSE)
    double in_sample_mse = 0.0;
    std::vector<double> fold_mse;
    double mean_cv_mse = 0.0;

    void validate() const;
};

/// Which knob the frontier sweeps: the universe size at fixed penalty, or the
/// portfolio-map penalty at fixed universe size.
enum class SweepMode { StockCount, Lambda };

struct Frontier {
    std::vector<FrontierPoint> points;
    SweepMode mode = SweepMode::StockCount;
    std::string config_json; ///< resolved pipeline configuration snapshot

    /// Points must be ordered by strictly increasing sweep key
    /// (n_stocks or lambda, depending on mode).
    void validate() const;
};

/// Everything the four-step pipeline needs besides the data itself.
struct PipelineConfig {
    int market_hidden = 5;    ///< autoencoder bottleneck width
    int portfolio_hidden = 5; ///< calibration network hidden width
    TrainConfig market_train;
    TrainConfig portfolio_train;
    int k_folds = 4;
    int n_communal = 10; ///< most-communal block size in each universe
    Activation market_hidden_act = Activation::Relu;
    Activation market_output_act = Activation::Linear;
    CalibrateOptions calibrate;

    void validate() const;
    std::string to_json() const;
};

/// Validation errors of a fitted pair of maps on held-out data:
/// epsilon_m averages the squared reconstruction residual of each validation
/// period, epsilon_p averages the squared tracking residual against y_hat.
/// X_hat_sel must use a subset of X_hat's tickers and the same period count.
std::pair<double, double> validation_errors(const Network& market_net,
                                            const Network& portfolio_net,
                                            const ReturnsMatrix& X_hat,
                                            const ReturnsMatrix& X_hat_sel,
                                            const TargetSeries& y_hat);

/// Runs the full pipeline once per grid entry: rank stocks by communality on
/// the calibration window, select the universe, calibrate the portfolio-map
/// with k-fold cross-validation, and score both maps on the validation
/// window. The market-map is trained once and shared by every grid point
/// (it does not depend on the universe size). The target must be aligned
/// with the panel rows; amend it first if the amended goal is wanted.
/// Grid points are independent and are evaluated on `jobs` threads; results
/// are ordered by grid value. Failures are rethrown with the grid point
/// prepended to the message. Deterministic for fixed config and seeds.
Frontier build_frontier(const ReturnsMatrix& data, const TargetSeries& target,
                        const SplitSpec& split_spec, const std::vector<int>& stock_grid,
                        const PipelineConfig& cfg, int jobs = 1);

/// Same pipeline, sweeping the portfolio-map penalty over lambda_grid at a
/// fixed universe size instead of sweeping the universe size.
Frontier build_lambda_frontier(const ReturnsMatrix& data, const TargetSeries& target,
                               const SplitSpec& split_spec, int n_stocks,
                               const std::vector<double>& lambda_grid,
                               const PipelineConfig& cfg, int jobs = 1);

/// A frontier together with the fitted maps, for callers that need to apply
/// them afterwards (e.g. exporting per-point tracking series).
struct FrontierRun {
    Frontier frontier;
    Network market_net;
    std::vector<Network> portfolio_nets; ///< one per frontier point
};

FrontierRun build_frontier_run(const ReturnsMatrix& data, const TargetSeries& target,
                               const SplitSpec& split_spec,
                               const std::vector<int>& stock_grid,
                               const PipelineConfig& cfg, int jobs = 1);

FrontierRun build_lambda_frontier_run(const ReturnsMatrix& data,
                                      const TargetSeries& target,
                                      const SplitSpec& split_spec, int n_stocks,
                                      const std::vector<double>& lambda_grid,
                                      const PipelineConfig& cfg, int jobs = 1);

/// Per-grid-point winner and overall dominance across candidate frontiers.
struct ComparisonReport {
    SweepMode mode = SweepMode::StockCount;
    std::vector<double> grid;      ///< common sweep values
    std::vector<std::size_t> best; ///< index of the min-epsilon_p frontier per point
    std::vector<bool> tied;        ///< true where the minimum is shared
    std::optional<std::size_t> dominant; ///< weakly best everywhere, if any

    void validate() const;
};

/// Compares frontiers point-by-point on epsilon_p. All frontiers must share
/// the sweep mode and the exact grid (ComparisonError otherwise). Ties go to
/// the first-listed frontier.
ComparisonReport compare_frontiers(const std::vector<Frontier>& frontiers);

/// CSV with header `n_stocks,lambda,epsilon_m,epsilon_p`, one row per point.
std::string frontier_to_csv(const Frontier& frontier);

/// Full JSON dump: sweep mode, resolved config, every point with tickers and
/// calibration diagnostics.
std::string frontier_to_json(const Frontier& frontier);

/// Inverse of frontier_to_json. Throws ParseError/SchemaError.
Frontier frontier_from_json(const std::string& text);

std::string comparison_to_json(const ComparisonReport& report);

/// Plot-ready CSV with header `date,target,tracker`.
std::string tracking_to_csv(const std::vector<std::string>& timestamps,
                            const Eigen::VectorXd& target,
                            const Eigen::VectorXd& tracker);

} // namespace dpt
