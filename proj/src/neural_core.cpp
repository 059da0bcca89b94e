#include "dpt/neural_core.hpp"

#include "dpt/data_ingest.hpp"
#include "dpt/errors.hpp"
#include "dpt/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dpt {

Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    if (name == "tanh") return Activation::Tanh;
    if (name == "linear") return Activation::Linear;
    throw DomainError("unknown activation '" + name + "'");
}

std::string activation_name(Activation kind) {
    switch (kind) {
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Linear: return "linear";
    }
    throw DomainError("invalid activation enum");
}

Penalty penalty_from_name(const std::string& name) {
    if (name == "l1") return Penalty::L1;
    if (name == "l2") return Penalty::L2;
    throw DomainError("unknown penalty '" + name + "'");
}

std::string penalty_name(Penalty kind) {
    return kind == Penalty::L1 ? "l1" : "l2";
}

double activation_apply(Activation kind, double x) {
    switch (kind) {
        case Activation::Relu: return x > 0.0 ? x : 0.0;
        case Activation::Tanh: return std::tanh(x);
        case Activation::Linear: return x;
    }
    throw DomainError("invalid activation enum");
}

double activation_derivative(Activation kind, double x) {
    switch (kind) {
        case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::Tanh: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
        case Activation::Linear: return 1.0;
    }
    throw DomainError("invalid activation enum");
}

Network Network::make(const std::vector<Eigen::Index>& dims,
                      const std::vector<Activation>& activations) {
    if (dims.size() < 2) throw ShapeError("network needs at least one layer");
    if (activations.size() != dims.size() - 1) {
        throw ShapeError("need one activation per layer: " +
                         std::to_string(dims.size() - 1) + " layers, " +
                         std::to_string(activations.size()) + " activations");
    }
    Network net;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        if (dims[l] < 1 || dims[l + 1] < 1) {
            throw ShapeError("layer dimensions must be >= 1");
        }
        Layer layer;
        layer.weights = Eigen::MatrixXd::Zero(dims[l + 1], dims[l]);
        layer.bias = Eigen::VectorXd::Zero(dims[l + 1]);
        layer.activation = activations[l];
        net.layers.push_back(std::move(layer));
    }
    return net;
}

Eigen::Index Network::input_size() const {
    if (layers.empty()) throw ShapeError("empty network");
    return layers.front().n_in();
}

Eigen::Index Network::output_size() const {
    if (layers.empty()) throw ShapeError("empty network");
    return layers.back().n_out();
}

void Network::validate() const {
    if (layers.empty()) throw ShapeError("empty network");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const Layer& layer = layers[l];
        if (layer.weights.rows() != layer.bias.size()) {
            throw ShapeError("layer " + std::to_string(l) + ": bias length " +
                             std::to_string(layer.bias.size()) + " != n_out " +
                             std::to_string(layer.weights.rows()));
        }
        if (l > 0 && layers[l - 1].n_out() != layer.n_in()) {
            throw ShapeError("layer " + std::to_string(l) + ": n_in " +
                             std::to_string(layer.n_in()) + " != previous n_out " +
                             std::to_string(layers[l - 1].n_out()));
        }
        if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
            throw DataError("layer " + std::to_string(l) + " has non-finite parameters");
        }
    }
}

void TrainConfig::validate(Eigen::Index n_rows) const {
    if (lambda < 0.0) throw DomainError("lambda must be >= 0");
    // zero is allowed so a "train" can be a pure no-op diagnostic
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw DomainError("learning_rate must be finite and >= 0");
    }
    if (epochs < 1) throw DomainError("epochs must be >= 1");
    if (batch_size < 1 || batch_size > n_rows) {
        throw DomainError("batch_size must be in [1, " + std::to_string(n_rows) +
                          "], got " + std::to_string(batch_size));
    }
    if (init_scale && !(*init_scale > 0.0)) {
        throw DomainError("init_scale must be > 0");
    }
}

Eigen::VectorXd forward(const Network& net, const Eigen::VectorXd& x) {
    net.validate();
    if (x.size() != net.input_size()) {
        throw ShapeError("input length " + std::to_string(x.size()) +
                         " != network input size " + std::to_string(net.input_size()));
    }
    Eigen::VectorXd a = x;
    for (const Layer& layer : net.layers) {
        Eigen::VectorXd z = layer.weights * a + layer.bias;
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            z(i) = activation_apply(layer.activation, z(i));
        }
        a = std::move(z);
    }
    return a;
}

Eigen::MatrixXd forward_rows(const Network& net, const Eigen::MatrixXd& X) {
    net.validate();
    if (X.cols() != net.input_size()) {
        throw ShapeError("input width " + std::to_string(X.cols()) +
                         " != network input size " + std::to_string(net.input_size()));
    }
    Eigen::MatrixXd a = X;
    for (const Layer& layer : net.layers) {
        Eigen::MatrixXd z = a * layer.weights.transpose();
        z.rowwise() += layer.bias.transpose();
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
            for (Eigen::Index c = 0; c < z.cols(); ++c) {
                z(r, c) = activation_apply(layer.activation, z(r, c));
            }
        }
        a = std::move(z);
    }
    return a;
}

namespace {

double penalty_value(const Network& net, const TrainConfig& cfg) {
    if (cfg.lambda == 0.0) return 0.0;
    double phi = 0.0;
    for (const Layer& layer : net.layers) {
        if (cfg.penalty == Penalty::L2) {
            phi += layer.weights.squaredNorm();
        } else {
            phi += layer.weights.array().abs().sum();
        }
    }
    return cfg.lambda * phi;
}

void check_training_shapes(const Network& net, const Eigen::MatrixXd& X,
                           const Eigen::MatrixXd& Y) {
    if (X.cols() != net.input_size()) {
        throw ShapeError("X width " + std::to_string(X.cols()) +
                         " != network input size " + std::to_string(net.input_size()));
    }
    if (Y.cols() != net.output_size()) {
        throw ShapeError("Y width " + std::to_string(Y.cols()) +
                         " != network output size " + std::to_string(net.output_size()));
    }
    if (X.rows() != Y.rows()) {
        throw ShapeError("X has " + std::to_string(X.rows()) + " rows but Y has " +
                         std::to_string(Y.rows()));
    }
    if (X.rows() < 1) throw ShapeError("need at least one sample row");
}

} // namespace

LossParts loss(const Network& net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
               const TrainConfig& cfg) {
    net.validate();
    check_training_shapes(net, X, Y);
    const Eigen::MatrixXd pred = forward_rows(net, X);
    LossParts parts;
    parts.fit = (Y - pred).squaredNorm() / static_cast<double>(X.rows());
    parts.penalty = penalty_value(net, cfg);
    parts.total = parts.fit + parts.penalty;
    return parts;
}

std::vector<LayerGradients> gradient(const Network& net, const Eigen::MatrixXd& X,
                                     const Eigen::MatrixXd& Y, const TrainConfig& cfg) {
    net.validate();
    check_training_shapes(net, X, Y);
    const std::size_t n_layers = net.layers.size();
    const double m = static_cast<double>(X.rows());

    // Forward pass keeping pre-activations and activations per layer.
    std::vector<Eigen::MatrixXd> pre(n_layers);
    std::vector<Eigen::MatrixXd> act(n_layers + 1);
    act[0] = X;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const Layer& layer = net.layers[l];
        pre[l] = act[l] * layer.weights.transpose();
        pre[l].rowwise() += layer.bias.transpose();
        act[l + 1] = pre[l];
        for (Eigen::Index r = 0; r < act[l + 1].rows(); ++r) {
            for (Eigen::Index c = 0; c < act[l + 1].cols(); ++c) {
                act[l + 1](r, c) = activation_apply(layer.activation, act[l + 1](r, c));
            }
        }
    }

    std::vector<LayerGradients> grads(n_layers);
    Eigen::MatrixXd delta = (2.0 / m) * (act[n_layers] - Y);
    for (std::size_t l = n_layers; l-- > 0;) {
        const Layer& layer = net.layers[l];
        for (Eigen::Index r = 0; r < delta.rows(); ++r) {
            for (Eigen::Index c = 0; c < delta.cols(); ++c) {
                delta(r, c) *= activation_derivative(layer.activation, pre[l](r, c));
            }
        }
        grads[l].weights = delta.transpose() * act[l];
        grads[l].bias = delta.colwise().sum().transpose();
        if (cfg.lambda > 0.0) {
            if (cfg.penalty == Penalty::L2) {
                grads[l].weights += 2.0 * cfg.lambda * layer.weights;
            } else {
                grads[l].weights +=
                    cfg.lambda * layer.weights.array().sign().matrix();
            }
        }
        if (l > 0) delta = (delta * layer.weights).eval();
    }
    return grads;
}

std::pair<Network, LossTrace> train_sgd(const Network& architecture,
                                        const Eigen::MatrixXd& X,
                                        const Eigen::MatrixXd& Y,
                                        const TrainConfig& cfg) {
    architecture.validate();
    check_training_shapes(architecture, X, Y);
    cfg.validate(X.rows());

    Network net = architecture;
    Rng rng(cfg.seed);
    for (Layer& layer : net.layers) {
        const double s =
            cfg.init_scale ? *cfg.init_scale
                           : 0.5 / std::sqrt(static_cast<double>(layer.n_in()));
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
                layer.weights(r, c) = rng.uniform(-s, s);
            }
        }
        layer.bias.setZero();
    }

    const Eigen::Index n_rows = X.rows();
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n_rows));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});

    LossTrace trace;
    Eigen::MatrixXd xb, yb;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(perm);
        for (Eigen::Index start = 0; start < n_rows; start += cfg.batch_size) {
            const Eigen::Index count = std::min<Eigen::Index>(cfg.batch_size, n_rows - start);
            xb.resize(count, X.cols());
            yb.resize(count, Y.cols());
            for (Eigen::Index i = 0; i < count; ++i) {
                xb.row(i) = X.row(perm[static_cast<std::size_t>(start + i)]);
                yb.row(i) = Y.row(perm[static_cast<std::size_t>(start + i)]);
            }
            const auto grads = gradient(net, xb, yb, cfg);
            for (std::size_t l = 0; l < net.layers.size(); ++l) {
                net.layers[l].weights -= cfg.learning_rate * grads[l].weights;
                net.layers[l].bias -= cfg.learning_rate * grads[l].bias;
            }
            for (const Layer& layer : net.layers) {
                if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
                    throw DivergenceError(
                        "training diverged at epoch " + std::to_string(epoch), epoch);
                }
            }
        }
        const LossParts parts = loss(net, X, Y, cfg);
        if (!std::isfinite(parts.total)) {
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch),
                                  epoch);
        }
        trace.total.push_back(parts.total);
        trace.fit.push_back(parts.fit);
        trace.penalty.push_back(parts.penalty);
    }
    return {std::move(net), std::move(trace)};
}

double nested_relu_chain(const std::vector<double>& xs) {
    if (xs.empty()) throw DomainError("nested_relu_chain needs a nonempty input");
    double acc = activation_apply(Activation::Relu, xs.back());
    for (std::size_t i = xs.size() - 1; i-- > 0;) {
        acc = activation_apply(Activation::Relu, xs[i] + acc);
    }
    return acc;
}

std::string network_to_json(const Network& net) {
    net.validate();
    nlohmann::json doc;
    doc["version"] = "dpt-net-1";
    doc["layers"] = nlohmann::json::array();
    for (const Layer& layer : net.layers) {
        nlohmann::json jl;
        jl["activation"] = activation_name(layer.activation);
        jl["rows"] = layer.weights.rows();
        jl["cols"] = layer.weights.cols();
        auto rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
            auto row = nlohmann::json::array();
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
                row.push_back(layer.weights(r, c));
            }
            rows.push_back(std::move(row));
        }
        jl["weights"] = std::move(rows);
        auto bias = nlohmann::json::array();
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
            bias.push_back(layer.bias(i));
        }
        jl["bias"] = std::move(bias);
        doc["layers"].push_back(std::move(jl));
    }
    return doc.dump(2) + "\n";
}

Network network_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("invalid network JSON: ") + e.what());
    }
    if (!doc.contains("version") || doc["version"] != "dpt-net-1") {
        throw SchemaError("network JSON must declare version \"dpt-net-1\"");
    }
    if (!doc.contains("layers") || !doc["layers"].is_array() || doc["layers"].empty()) {
        throw SchemaError("network JSON needs a nonempty 'layers' array");
    }
    Network net;
    try {
        for (const auto& jl : doc["layers"]) {
            Layer layer;
            layer.activation = activation_from_name(jl.at("activation").get<std::string>());
            const Eigen::Index rows = jl.at("rows").get<Eigen::Index>();
            const Eigen::Index cols = jl.at("cols").get<Eigen::Index>();
            const auto& w = jl.at("weights");
            if (static_cast<Eigen::Index>(w.size()) != rows) {
                throw SchemaError("weight row count mismatch");
            }
            layer.weights.resize(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r) {
                const auto& row = w[static_cast<std::size_t>(r)];
                if (static_cast<Eigen::Index>(row.size()) != cols) {
                    throw SchemaError("weight column count mismatch");
                }
                for (Eigen::Index c = 0; c < cols; ++c) {
                    layer.weights(r, c) = row[static_cast<std::size_t>(c)].get<double>();
                }
            }
            const auto& b = jl.at("bias");
            if (static_cast<Eigen::Index>(b.size()) != rows) {
                throw SchemaError("bias length mismatch");
            }
            layer.bias.resize(rows);
            for (Eigen::Index i = 0; i < rows; ++i) {
                layer.bias(i) = b[static_cast<std::size_t>(i)].get<double>();
            }
            net.layers.push_back(std::move(layer));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed network JSON: ") + e.what());
    }
    net.validate();
    return net;
}

void save_network(const Network& net, const std::string& path) {
    atomic_write_text(path, network_to_json(net));
}

Network load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::stringstream ss;
    ss << in.rdbuf();
    return network_from_json(ss.str());
}

} // namespace dpt
