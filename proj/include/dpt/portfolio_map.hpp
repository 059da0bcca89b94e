#pragma once

#include "dpt/data_ingest.hpp"
#include "dpt/neural_core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dpt {

/// Target return series the portfolio-map is calibrated against, possibly
/// amended (returns below `floor` replaced by `replacement`).
struct TargetSeries {
    Eigen::VectorXd values;
    std::string label = "target";
    bool amended = false;
    double floor = -0.05;
    double replacement = 0.05;

    void validate() const;
};

/// Replaces every entry strictly below `floor` with `replacement` and flags
/// the series as amended. Entries equal to the floor are untouched.
/// Requires replacement >= floor, which makes the operation idempotent.
TargetSeries amend_target(const TargetSeries& y, double floor = -0.05,
                          double replacement = 0.05);

/// Target restricted to the given rows (bounds-checked), keeping the label
/// and amendment metadata.
TargetSeries target_rows(const TargetSeries& y, const std::vector<Eigen::Index>& idx);

enum class KfoldMode {
    Shuffled,  ///< seeded random assignment (the default)
    Contiguous ///< consecutive time blocks
};

/// Partitions {0..n_rows-1} into k folds whose sizes differ by at most one.
/// Deterministic per seed.
std::vector<std::vector<Eigen::Index>> kfold_split(Eigen::Index n_rows, int k,
                                                   std::uint64_t seed,
                                                   KfoldMode mode = KfoldMode::Shuffled);

enum class CalibrationSolver {
    Sgd,        ///< seeded minibatch SGD on the n_sel -> hidden -> 1 network
    ExactLinear ///< ordinary least squares; requires linear activations, lambda = 0
};

struct CalibrateOptions {
    Activation hidden_act = Activation::Relu;
    Activation output_act = Activation::Linear;
    KfoldMode fold_mode = KfoldMode::Shuffled;
    CalibrationSolver solver = CalibrationSolver::Sgd;
};

/// Cross-validated calibration result. The delivered network is retrained on
/// the full calibration window; the fold errors estimate out-of-sample MSE.
struct CalibrationReport {
    Network net;
    std::vector<double> fold_mse;
    double mean_cv_mse = 0.0;
    double in_sample_mse = 0.0;
};

/// Step II: fits the portfolio-map (shape n_sel -> hidden_width -> 1) to the
/// target with k-fold cross-validation. Fold f trains on the other k-1 folds
/// with seed cfg.seed + f and records MSE on the held-out fold; the delivered
/// network is then trained on all rows with cfg.seed. The ExactLinear solver
/// replaces SGD with a least-squares solve embedded in the same network
/// shape (diagnostic mode for the nested-model properties).
CalibrationReport calibrate(const ReturnsMatrix& X_sel, const TargetSeries& y,
                            int hidden_width, const TrainConfig& cfg, int k,
                            const CalibrateOptions& opts = {});

/// Applies the portfolio-map to each period row; returns the scalar tracker
/// series (length = rows of X_sel).
Eigen::VectorXd track(const Network& net, const ReturnsMatrix& X_sel);

/// JSON export with fold errors, mean CV error, in-sample error, and the
/// embedded serialized network.
std::string calibration_report_to_json(const CalibrationReport& report);

} // namespace dpt
