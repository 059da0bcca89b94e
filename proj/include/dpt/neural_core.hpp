#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dpt {

enum class Activation { Relu, Tanh, Linear };
enum class Penalty { L1, L2 };

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation kind);
Penalty penalty_from_name(const std::string& name);
std::string penalty_name(Penalty kind);

/// relu -> max(x, 0); tanh -> std::tanh(x); linear -> x.
double activation_apply(Activation kind, double x);

/// Derivative at x. The relu subgradient at exactly 0 is taken as 0.
double activation_derivative(Activation kind, double x);

/// One semi-affine stage: x -> act(W x + b).
struct Layer {
    Eigen::MatrixXd weights; ///< n_out x n_in
    Eigen::VectorXd bias;    ///< n_out
    Activation activation = Activation::Linear;

    Eigen::Index n_in() const { return weights.cols(); }
    Eigen::Index n_out() const { return weights.rows(); }
};

/// Feed-forward composition of semi-affine layers.
struct Network {
    std::vector<Layer> layers;

    /// Zero-initialized network with the given layer sizes
    /// (dims = {n_in, h_1, ..., n_out}) and one activation per layer.
    static Network make(const std::vector<Eigen::Index>& dims,
                        const std::vector<Activation>& activations);

    Eigen::Index input_size() const;
    Eigen::Index output_size() const;

    /// Checks dimension chaining and parameter finiteness.
    void validate() const;
};

/// Training hyperparameters. lambda is the Lagrangian weight of the
/// norm constraint; penalty selects phi(W) = sum |W| (L1) or sum W^2 (L2).
struct TrainConfig {
    double lambda = 0.0;
    Penalty penalty = Penalty::L2;
    double learning_rate = 0.01;
    int epochs = 100;
    int batch_size = 32;
    std::uint64_t seed = 0;
    /// Weight-init half-width; unset means 0.5/sqrt(n_in) per layer.
    std::optional<double> init_scale;

    /// Throws DomainError on invalid hyperparameters (n_rows bounds batch_size).
    void validate(Eigen::Index n_rows) const;
};

/// Per-epoch objective decomposition recorded during training.
struct LossTrace {
    std::vector<double> total;
    std::vector<double> fit;
    std::vector<double> penalty;
};

struct LossParts {
    double total = 0.0;
    double fit = 0.0;
    double penalty = 0.0;
};

struct LayerGradients {
    Eigen::MatrixXd weights;
    Eigen::VectorXd bias;
};

/// Applies the network to one input vector.
Eigen::VectorXd forward(const Network& net, const Eigen::VectorXd& x);

/// Applies the network to every row of X; returns one output row per input row.
Eigen::MatrixXd forward_rows(const Network& net, const Eigen::MatrixXd& X);

/// fit = mean over rows of the squared 2-norm residual;
/// penalty = lambda * phi(W) over weight matrices only (biases unpenalized);
/// total = fit + penalty.
LossParts loss(const Network& net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
               const TrainConfig& cfg);

/// Exact reverse-mode gradient of loss() in the network parameters.
/// Subgradient conventions: relu' (0) = 0 and d|w|/dw at 0 = 0.
std::vector<LayerGradients> gradient(const Network& net, const Eigen::MatrixXd& X,
                                     const Eigen::MatrixXd& Y, const TrainConfig& cfg);

/// Minibatch SGD with a fixed learning rate.
///
/// The input network supplies the architecture only: weights are re-drawn
/// from the seeded source as uniform(-s, s) per layer (s from cfg.init_scale)
/// and biases start at zero. Rows are reshuffled each epoch from the same
/// source. The trace records the full-data objective at the end of each
/// epoch. Deterministic in (architecture, data, cfg). Throws DivergenceError
/// if the objective turns non-finite.
std::pair<Network, LossTrace> train_sgd(const Network& architecture,
                                        const Eigen::MatrixXd& X,
                                        const Eigen::MatrixXd& Y,
                                        const TrainConfig& cfg);

/// Literal innermost-first evaluation of
/// (x_1 + (x_2 + ... + (x_{n-1} + x_n^+)^+ ...)^+ . Throws DomainError on
/// empty input. Equals max(0, max over prefix sums) by the max-sum identity.
double nested_relu_chain(const std::vector<double>& xs);

/// Serializes a network as a JSON document (version "dpt-net-1",
/// row-major weight arrays, bias arrays, activation names).
std::string network_to_json(const Network& net);

/// Parses the "dpt-net-1" JSON format. Throws ParseError/SchemaError.
Network network_from_json(const std::string& text);

void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

} // namespace dpt
