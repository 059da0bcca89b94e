#pragma once

#include "dpt/data_ingest.hpp"
#include "dpt/neural_core.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dpt {

struct RankedStock {
    std::string ticker;
    double reconstruction_error = 0.0;
};

/// Per-stock autoencoder reconstruction errors sorted ascending, so the most
/// communal stock (smallest error, i.e. best reconstructed from the encoded
/// universe) comes first. Ties break by ticker in lexicographic order.
struct CommunalRanking {
    std::vector<RankedStock> order;
};

/// Result of the auto-encoding step: the trained market-map plus per-stock
/// errors on the calibration window and, when a hold-out panel was supplied,
/// the validation reconstruction error epsilon_m.
struct EncoderReport {
    Network net;
    std::vector<std::string> tickers;
    Eigen::VectorXd per_stock_errors;
    std::optional<double> epsilon_m;
};

/// Trains the market-map autoencoder: an N -> hidden_width -> N network fit
/// to reproduce each period's cross-section of returns (targets Y = X).
Network train_autoencoder(const ReturnsMatrix& X, int hidden_width,
                          const TrainConfig& cfg,
                          Activation hidden_act = Activation::Relu,
                          Activation output_act = Activation::Linear);

/// Per-stock 2-norm distance between a stock and its auto-encoded version:
/// error_i = sqrt( sum_t (X_ti - F(X_t)_i)^2 ). Length N.
Eigen::VectorXd reconstruction_errors(const Network& net, const ReturnsMatrix& X);

/// Mean per-row squared reconstruction error of the market-map on a panel
/// (the epsilon_m of the validation step).
double epsilon_market(const Network& net, const ReturnsMatrix& X);

CommunalRanking rank_communal(const Eigen::VectorXd& errors,
                              const std::vector<std::string>& tickers);

/// Picks the n_communal most communal stocks plus (n_total - n_communal) most
/// non-communal ones. Output lists the communal block (most communal first)
/// followed by the non-communal block (most non-communal first).
std::vector<std::string> select_universe(const CommunalRanking& ranking, int n_total,
                                         int n_communal = 10);

EncoderReport make_encoder_report(const Network& net, const ReturnsMatrix& calibration,
                                  const std::optional<ReturnsMatrix>& holdout);

/// CSV export: header `rank,ticker,reconstruction_error`, rank starting at 1.
std::string ranking_to_csv(const CommunalRanking& ranking);

struct AlternatingOptions {
    int z_steps = 10;
    int w_steps = 10;
    /// Closed-form block updates instead of gradient steps. Requires a linear
    /// encoder activation and an L2 (or zero) latent penalty; each block
    /// update is then an exact minimizer, so the outer objective is
    /// non-increasing.
    bool exact = false;
    Activation encoder_activation = Activation::Relu;
};

struct AlternatingResult {
    Network net;              ///< [W1 with encoder activation, W2 linear], zero biases
    Eigen::MatrixXd latent;   ///< hidden_width x T matrix Z
    std::vector<double> objective_trace; ///< one entry per outer iteration
};

/// Split-objective autoencoder trainer:
/// min_{W,Z} ||X - W2 Z||^2 + lambda phi(Z) + ||Z - f(W1 X)||^2
/// alternating a Z update (W fixed) with a W1/W2 update (Z fixed) for
/// cfg.epochs outer iterations. Samples are the time rows of X, stacked as
/// columns internally.
AlternatingResult train_autoencoder_alternating(const ReturnsMatrix& X,
                                                int hidden_width,
                                                const TrainConfig& cfg,
                                                const AlternatingOptions& opts = {});

} // namespace dpt
