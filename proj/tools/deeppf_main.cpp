// deeppf: deep portfolio construction from returns panels.
//
// Verbs: synth, ingest, encode, calibrate, frontier, baseline, report.
// Every verb accepts --config <flat JSON>; explicit flags override file keys.
// Exit codes: 0 ok, 1 config/validation, 2 I/O, 3 training divergence,
// 4 numerical conditioning.

#include "dpt/baselines.hpp"
#include "dpt/data_ingest.hpp"
#include "dpt/errors.hpp"
#include "dpt/frontier.hpp"
#include "dpt/market_map.hpp"
#include "dpt/neural_core.hpp"
#include "dpt/portfolio_map.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

namespace {

using nlohmann::json;

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw dpt::IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw dpt::IoError("cannot read " + path);
    return ss.str();
}

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    json doc;
    try {
        doc = json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw dpt::ParseError("config " + path + ": " + e.what());
    }
    if (!doc.is_object()) {
        throw dpt::DomainError("config " + path + " must hold a JSON object");
    }
    return doc;
}

/// Resolves each setting as: explicit flag > config file key > default, and
/// records the outcome so every run can echo its full effective config.
class Resolved {
public:
    Resolved(const CLI::App& cmd, json file_cfg)
        : cmd_(cmd), cfg_(std::move(file_cfg)), doc_(json::object()) {}

    template <class T>
    T value(const std::string& flag, const std::string& key, T v) {
        if (cmd_.count(flag) == 0) {
            if (auto it = cfg_.find(key); it != cfg_.end()) {
                try {
                    v = it->get<T>();
                } catch (const json::exception&) {
                    throw dpt::DomainError("config key '" + key +
                                           "' has the wrong type");
                }
            }
        }
        doc_[key] = v;
        return v;
    }

    /// Comma-separated list flag; the config may hold an array or a string.
    template <class T>
    std::vector<T> list(const std::string& flag, const std::string& key,
                        const std::string& flag_value) {
        std::string text = flag_value;
        if (cmd_.count(flag) == 0) {
            if (auto it = cfg_.find(key); it != cfg_.end()) {
                if (it->is_array()) {
                    std::vector<T> vs;
                    try {
                        vs = it->get<std::vector<T>>();
                    } catch (const json::exception&) {
                        throw dpt::DomainError("config key '" + key +
                                               "' has the wrong element type");
                    }
                    doc_[key] = vs;
                    return vs;
                }
                if (it->is_string()) {
                    text = it->get<std::string>();
                } else {
                    throw dpt::DomainError("config key '" + key +
                                           "' must be an array or string");
                }
            }
        }
        std::vector<T> vs = parse_list<T>(text, key);
        doc_[key] = vs;
        return vs;
    }

    json& doc() { return doc_; }
    const json& doc() const { return doc_; }

private:
    template <class T>
    static std::vector<T> parse_list(const std::string& text, const std::string& key) {
        std::vector<T> out;
        if (text.empty()) return out;
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if constexpr (std::is_same_v<T, std::string>) {
                out.push_back(item);
            } else {
                try {
                    std::size_t used = 0;
                    if constexpr (std::is_integral_v<T>) {
                        const long long v = std::stoll(item, &used);
                        out.push_back(static_cast<T>(v));
                    } else {
                        out.push_back(static_cast<T>(std::stod(item, &used)));
                    }
                    while (used < item.size() &&
                           std::isspace(static_cast<unsigned char>(item[used]))) {
                        ++used;
                    }
                    if (used != item.size()) throw std::invalid_argument(item);
                } catch (const std::exception&) {
                    throw dpt::DomainError("bad " + key + " entry '" + item + "'");
                }
            }
        }
        return out;
    }

    const CLI::App& cmd_;
    json cfg_;
    json doc_;
};

void echo(const json& doc) { std::cout << doc.dump(2) << "\n"; }

std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
    if (dir.empty()) {
        throw dpt::DomainError("missing output directory (-o/--out-dir or config "
                               "key 'out_dir')");
    }
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw dpt::IoError("cannot create " + dir + ": " + ec.message());
}

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty() || !j.front().is_array()) {
        throw dpt::SchemaError(what + " must be a non-empty array of rows");
    }
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j.front().size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(i)].size()) != cols) {
            throw dpt::SchemaError(what + " rows have unequal lengths");
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
            try {
                m(i, c) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)]
                              .get<double>();
            } catch (const json::exception&) {
                throw dpt::SchemaError(what + " has a non-numeric entry");
            }
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// shared input / target handling

struct InputFlags {
    std::string input;
    std::string layout = "wide";
    bool prices = false;
};

void add_input_flags(CLI::App* cmd, InputFlags& f) {
    cmd->add_option("-i,--input", f.input, "input CSV path");
    cmd->add_option("--layout", f.layout, "CSV layout: wide | long (default wide)");
    cmd->add_flag("--prices", f.prices,
                  "input holds price levels; convert to returns first");
}

dpt::ReturnsMatrix resolve_input(Resolved& r, InputFlags& f) {
    f.input = r.value("--input", "input", f.input);
    f.layout = r.value("--layout", "layout", f.layout);
    f.prices = r.value("--prices", "prices", f.prices);
    if (f.input.empty()) {
        throw dpt::DomainError("missing input (-i/--input or config key 'input')");
    }
    dpt::CsvLayout layout;
    if (f.layout == "wide") {
        layout = dpt::CsvLayout::Wide;
    } else if (f.layout == "long") {
        layout = dpt::CsvLayout::Long;
    } else {
        throw dpt::DomainError("layout must be 'wide' or 'long'");
    }
    dpt::ReturnsMatrix m = dpt::load_returns_csv(f.input, layout);
    if (f.prices) m = dpt::prices_to_returns(m);
    return m;
}

/// Target spec: "equal_weight" (per-period mean of all assets),
/// "ticker:SYM" (column SYM becomes the target and leaves the panel), or
/// "csv:path" (external date,value series covering every panel date).
struct TargetSetup {
    dpt::ReturnsMatrix panel;
    dpt::TargetSeries target;
};

TargetSetup resolve_target(const dpt::ReturnsMatrix& data, const std::string& spec) {
    TargetSetup out;
    out.target.label = spec;
    if (spec == "equal_weight") {
        out.panel = data;
        out.target.values = data.values.rowwise().mean();
        return out;
    }
    if (spec.rfind("ticker:", 0) == 0) {
        const std::string ticker = spec.substr(7);
        const Eigen::Index col = data.ticker_index(ticker);
        out.target.values = data.values.col(col);
        std::vector<std::string> rest;
        for (const auto& t : data.tickers) {
            if (t != ticker) rest.push_back(t);
        }
        if (rest.empty()) {
            throw dpt::DomainError("target ticker " + ticker +
                                   " would leave an empty panel");
        }
        out.panel = data.select_tickers(rest);
        return out;
    }
    if (spec.rfind("csv:", 0) == 0) {
        const dpt::SeriesCsv series = dpt::load_series_csv(spec.substr(4));
        std::map<std::string, double> by_date;
        for (std::size_t i = 0; i < series.timestamps.size(); ++i) {
            by_date[series.timestamps[i]] = series.values[i];
        }
        out.panel = data;
        out.target.values.resize(data.rows());
        for (Eigen::Index i = 0; i < data.rows(); ++i) {
            const auto& ts = data.timestamps[static_cast<std::size_t>(i)];
            const auto it = by_date.find(ts);
            if (it == by_date.end()) {
                throw dpt::DataError("target series has no value for " + ts);
            }
            out.target.values(i) = it->second;
        }
        return out;
    }
    throw dpt::DomainError(
        "target must be equal_weight, ticker:<SYM>, or csv:<path>");
}

// ---------------------------------------------------------------------------
// pipeline flag bundle (calibrate / frontier)

struct PipelineFlags {
    InputFlags in;
    std::string calib_begin, calib_end, valid_begin, valid_end;
    std::string target = "equal_weight";
    bool amend = false;
    double amend_floor = -0.05;
    double amend_replacement = 0.05;

    int market_hidden = 5;
    double market_lambda = 0.0;
    std::string market_penalty = "l2";
    double market_learning_rate = 0.01;
    int market_epochs = 200;
    int market_batch = 32;
    std::string market_activation = "relu";
    std::string market_output_activation = "linear";

    int hidden = 5;
    double lambda = 0.0;
    std::string penalty = "l2";
    double learning_rate = 0.01;
    int epochs = 200;
    int batch = 32;
    std::string activation = "relu";
    std::string output_activation = "linear";
    std::string fold_mode = "shuffled";
    std::string solver = "sgd";

    int k_folds = 4;
    int n_communal = 10;
    std::uint64_t seed = 0;
    int jobs = 1;
    std::string out_dir;
};

void add_pipeline_flags(CLI::App* cmd, PipelineFlags& f) {
    add_input_flags(cmd, f.in);
    cmd->add_option("--calib-begin", f.calib_begin, "calibration window start (ISO date)");
    cmd->add_option("--calib-end", f.calib_end, "calibration window end, exclusive");
    cmd->add_option("--valid-begin", f.valid_begin, "validation window start");
    cmd->add_option("--valid-end", f.valid_end,
                    "validation window end, exclusive (empty = to the last row)");
    cmd->add_option("--target", f.target,
                    "equal_weight | ticker:<SYM> | csv:<path> (default equal_weight)");
    cmd->add_flag("--amend-target", f.amend,
                  "replace target returns below the floor before calibrating");
    cmd->add_option("--amend-floor", f.amend_floor, "amendment floor (default -0.05)");
    cmd->add_option("--amend-replacement", f.amend_replacement,
                    "amendment replacement value (default 0.05)");

    cmd->add_option("--market-hidden", f.market_hidden, "market-map hidden width");
    cmd->add_option("--market-lambda", f.market_lambda, "market-map penalty weight");
    cmd->add_option("--market-penalty", f.market_penalty, "market-map penalty: l1 | l2");
    cmd->add_option("--market-learning-rate", f.market_learning_rate,
                    "market-map SGD learning rate");
    cmd->add_option("--market-epochs", f.market_epochs, "market-map SGD epochs");
    cmd->add_option("--market-batch", f.market_batch, "market-map minibatch size");
    cmd->add_option("--market-activation", f.market_activation,
                    "market-map hidden activation: relu | tanh | linear");
    cmd->add_option("--market-output-activation", f.market_output_activation,
                    "market-map output activation");

    cmd->add_option("--hidden", f.hidden, "portfolio-map hidden width");
    cmd->add_option("--lambda", f.lambda, "portfolio-map penalty weight");
    cmd->add_option("--penalty", f.penalty, "portfolio-map penalty: l1 | l2");
    cmd->add_option("--learning-rate", f.learning_rate, "portfolio-map learning rate");
    cmd->add_option("--epochs", f.epochs, "portfolio-map SGD epochs");
    cmd->add_option("--batch", f.batch, "portfolio-map minibatch size");
    cmd->add_option("--activation", f.activation, "portfolio-map hidden activation");
    cmd->add_option("--output-activation", f.output_activation,
                    "portfolio-map output activation");
    cmd->add_option("--fold-mode", f.fold_mode, "k-fold assignment: shuffled | contiguous");
    cmd->add_option("--solver", f.solver,
                    "portfolio-map solver: sgd | exact_linear (linear diagnostic)");

    cmd->add_option("--k-folds", f.k_folds, "cross-validation folds (default 4)");
    cmd->add_option("--n-communal", f.n_communal,
                    "communal block size in each universe (default 10)");
    cmd->add_option("--seed", f.seed, "seed for all stochastic steps");
    cmd->add_option("--jobs", f.jobs, "max concurrent grid points");
    cmd->add_option("-o,--out-dir", f.out_dir, "output directory");
}

struct PipelineSetup {
    dpt::ReturnsMatrix panel;
    dpt::TargetSeries target;
    dpt::SplitSpec split;
    dpt::PipelineConfig cfg;
    int jobs = 1;
    std::string out_dir;
};

PipelineSetup resolve_pipeline(Resolved& r, PipelineFlags& f) {
    dpt::ReturnsMatrix data = resolve_input(r, f.in);

    dpt::SplitSpec split;
    split.calibration_begin = r.value("--calib-begin", "calib_begin", f.calib_begin);
    split.calibration_end = r.value("--calib-end", "calib_end", f.calib_end);
    split.validation_begin = r.value("--valid-begin", "valid_begin", f.valid_begin);
    split.validation_end = r.value("--valid-end", "valid_end", f.valid_end);

    const std::string target_spec = r.value("--target", "target", f.target);
    const bool amend = r.value("--amend-target", "amend_target", f.amend);
    const double floor = r.value("--amend-floor", "amend_floor", f.amend_floor);
    const double replacement =
        r.value("--amend-replacement", "amend_replacement", f.amend_replacement);

    const auto seed = r.value("--seed", "seed", f.seed);

    dpt::PipelineConfig cfg;
    cfg.market_hidden = r.value("--market-hidden", "market_hidden", f.market_hidden);
    cfg.market_train.lambda = r.value("--market-lambda", "market_lambda", f.market_lambda);
    cfg.market_train.penalty = dpt::penalty_from_name(
        r.value("--market-penalty", "market_penalty", f.market_penalty));
    cfg.market_train.learning_rate = r.value("--market-learning-rate",
                                             "market_learning_rate",
                                             f.market_learning_rate);
    cfg.market_train.epochs = r.value("--market-epochs", "market_epochs", f.market_epochs);
    cfg.market_train.batch_size = r.value("--market-batch", "market_batch", f.market_batch);
    cfg.market_train.seed = seed;
    cfg.market_hidden_act = dpt::activation_from_name(
        r.value("--market-activation", "market_activation", f.market_activation));
    cfg.market_output_act = dpt::activation_from_name(r.value(
        "--market-output-activation", "market_output_activation",
        f.market_output_activation));

    cfg.portfolio_hidden = r.value("--hidden", "hidden", f.hidden);
    cfg.portfolio_train.lambda = r.value("--lambda", "lambda", f.lambda);
    cfg.portfolio_train.penalty =
        dpt::penalty_from_name(r.value("--penalty", "penalty", f.penalty));
    cfg.portfolio_train.learning_rate =
        r.value("--learning-rate", "learning_rate", f.learning_rate);
    cfg.portfolio_train.epochs = r.value("--epochs", "epochs", f.epochs);
    cfg.portfolio_train.batch_size = r.value("--batch", "batch", f.batch);
    cfg.portfolio_train.seed = seed;
    cfg.calibrate.hidden_act =
        dpt::activation_from_name(r.value("--activation", "activation", f.activation));
    cfg.calibrate.output_act = dpt::activation_from_name(
        r.value("--output-activation", "output_activation", f.output_activation));

    const std::string fold_mode = r.value("--fold-mode", "fold_mode", f.fold_mode);
    if (fold_mode == "shuffled") {
        cfg.calibrate.fold_mode = dpt::KfoldMode::Shuffled;
    } else if (fold_mode == "contiguous") {
        cfg.calibrate.fold_mode = dpt::KfoldMode::Contiguous;
    } else {
        throw dpt::DomainError("fold-mode must be 'shuffled' or 'contiguous'");
    }
    const std::string solver = r.value("--solver", "solver", f.solver);
    if (solver == "sgd") {
        cfg.calibrate.solver = dpt::CalibrationSolver::Sgd;
    } else if (solver == "exact_linear") {
        cfg.calibrate.solver = dpt::CalibrationSolver::ExactLinear;
    } else {
        throw dpt::DomainError("solver must be 'sgd' or 'exact_linear'");
    }

    cfg.k_folds = r.value("--k-folds", "k_folds", f.k_folds);
    cfg.n_communal = r.value("--n-communal", "n_communal", f.n_communal);

    PipelineSetup setup;
    TargetSetup t = resolve_target(data, target_spec);
    setup.panel = std::move(t.panel);
    setup.target = std::move(t.target);
    if (amend) {
        setup.target = dpt::amend_target(setup.target, floor, replacement);
    }
    setup.split = split;
    setup.cfg = cfg;
    setup.jobs = r.value("--jobs", "jobs", f.jobs);
    setup.out_dir = r.value("--out-dir", "out_dir", f.out_dir);
    return setup;
}

/// Writes `date,target,tracker` CSVs for one fitted portfolio-map on both
/// windows of the split.
void write_tracking_pair(const PipelineSetup& s, const dpt::Network& net,
                         const std::vector<std::string>& tickers,
                         const std::string& suffix) {
    const auto [calib_idx, valid_idx] = dpt::split_rows(s.panel, s.split);
    for (const bool validation : {false, true}) {
        const auto& idx = validation ? valid_idx : calib_idx;
        const dpt::ReturnsMatrix window = dpt::select_rows(s.panel, idx);
        const dpt::ReturnsMatrix window_sel = window.select_tickers(tickers);
        const dpt::TargetSeries y = dpt::target_rows(s.target, idx);
        const Eigen::VectorXd tracker = dpt::track(net, window_sel);
        const std::string name = validation ? "tracking_validation" : "tracking_calibration";
        dpt::atomic_write_text(
            join_path(s.out_dir, name + suffix + ".csv"),
            dpt::tracking_to_csv(window.timestamps, y.values, tracker));
    }
}

// ---------------------------------------------------------------------------
// verbs

int run_synth(const CLI::App& cmd, const std::string& config_path, int assets,
              int periods, int latent, double factor_vol, double noise_vol,
              const std::string& drawdown, std::uint64_t seed,
              const std::string& out) {
    Resolved r(cmd, load_config_file(config_path));
    const int n_assets = r.value("--assets", "assets", assets);
    const int n_periods = r.value("--periods", "periods", periods);
    const int n_latent = r.value("--latent", "latent", latent);
    const double fv = r.value("--factor-vol", "factor_vol", factor_vol);
    const double nv = r.value("--noise-vol", "noise_vol", noise_vol);
    const auto the_seed = r.value("--seed", "seed", seed);
    const auto dd_list = r.list<double>("--drawdown", "drawdown", drawdown);
    const std::string out_path = r.value("--out", "out", out);

    std::optional<dpt::DrawdownSpec> dd;
    if (!dd_list.empty()) {
        if (dd_list.size() != 3) {
            throw dpt::DomainError("--drawdown needs asset,period,magnitude");
        }
        dd = dpt::DrawdownSpec{static_cast<Eigen::Index>(dd_list[0]),
                               static_cast<Eigen::Index>(dd_list[1]), dd_list[2]};
    }
    if (out_path.empty()) {
        throw dpt::DomainError("missing output path (-o/--out or config key 'out')");
    }
    const dpt::ReturnsMatrix m =
        dpt::synth_market(n_assets, n_periods, n_latent, dd, the_seed, fv, nv);
    dpt::write_returns_csv(m, out_path);

    json doc;
    doc["command"] = "synth";
    doc["config"] = r.doc();
    doc["outputs"] = {out_path};
    echo(doc);
    return 0;
}

int run_ingest(const CLI::App& cmd, const std::string& config_path, InputFlags& in,
               const std::string& out) {
    Resolved r(cmd, load_config_file(config_path));
    const dpt::ReturnsMatrix m = resolve_input(r, in);
    const std::string out_path = r.value("--out", "out", out);
    if (out_path.empty()) {
        throw dpt::DomainError("missing output path (-o/--out or config key 'out')");
    }
    dpt::write_returns_csv(m, out_path);

    json doc;
    doc["command"] = "ingest";
    doc["config"] = r.doc();
    doc["summary"] = {{"assets", m.cols()},
                      {"periods", m.rows()},
                      {"first", m.timestamps.front()},
                      {"last", m.timestamps.back()}};
    doc["outputs"] = {out_path};
    echo(doc);
    return 0;
}

int run_encode(const CLI::App& cmd, const std::string& config_path, InputFlags& in,
               int hidden, double lambda, const std::string& penalty,
               double learning_rate, int epochs, int batch,
               const std::string& activation, const std::string& output_activation,
               std::uint64_t seed, const std::string& out_dir) {
    Resolved r(cmd, load_config_file(config_path));
    const dpt::ReturnsMatrix m = resolve_input(r, in);

    dpt::TrainConfig cfg;
    const int hidden_width = r.value("--hidden", "hidden", hidden);
    cfg.lambda = r.value("--lambda", "lambda", lambda);
    cfg.penalty = dpt::penalty_from_name(r.value("--penalty", "penalty", penalty));
    cfg.learning_rate = r.value("--learning-rate", "learning_rate", learning_rate);
    cfg.epochs = r.value("--epochs", "epochs", epochs);
    cfg.batch_size = r.value("--batch", "batch", batch);
    cfg.seed = r.value("--seed", "seed", seed);
    const auto hidden_act =
        dpt::activation_from_name(r.value("--activation", "activation", activation));
    const auto output_act = dpt::activation_from_name(
        r.value("--output-activation", "output_activation", output_activation));
    const std::string dir = r.value("--out-dir", "out_dir", out_dir);
    ensure_dir(dir);

    const dpt::Network net = dpt::train_autoencoder(m, hidden_width, cfg, hidden_act,
                                                    output_act);
    const Eigen::VectorXd errors = dpt::reconstruction_errors(net, m);
    const dpt::CommunalRanking ranking = dpt::rank_communal(errors, m.tickers);

    dpt::atomic_write_text(join_path(dir, "ranking.csv"), dpt::ranking_to_csv(ranking));
    dpt::save_network(net, join_path(dir, "market_map.json"));
    dpt::atomic_write_text(join_path(dir, "resolved_config.json"),
                           r.doc().dump(2) + "\n");

    json doc;
    doc["command"] = "encode";
    doc["config"] = r.doc();
    doc["summary"] = {{"assets", m.cols()},
                      {"periods", m.rows()},
                      {"epsilon_m_in_sample", dpt::epsilon_market(net, m)}};
    doc["outputs"] = {join_path(dir, "ranking.csv"), join_path(dir, "market_map.json"),
                      join_path(dir, "resolved_config.json")};
    echo(doc);
    return 0;
}

int run_calibrate(const CLI::App& cmd, const std::string& config_path,
                  PipelineFlags& f, int stocks) {
    Resolved r(cmd, load_config_file(config_path));
    const int n_stocks = r.value("--stocks", "stocks", stocks);
    PipelineSetup s = resolve_pipeline(r, f);
    ensure_dir(s.out_dir);

    const dpt::FrontierRun run = dpt::build_frontier_run(
        s.panel, s.target, s.split, {n_stocks}, s.cfg, s.jobs);
    const dpt::FrontierPoint& point = run.frontier.points.front();

    dpt::CalibrationReport report;
    report.net = run.portfolio_nets.front();
    report.fold_mse = point.fold_mse;
    report.mean_cv_mse = point.mean_cv_mse;
    report.in_sample_mse = point.in_sample_mse;

    json cal = json::parse(dpt::calibration_report_to_json(report));
    cal["tickers"] = point.tickers;
    cal["epsilon_m"] = point.epsilon_m;
    cal["epsilon_p"] = point.epsilon_p;
    cal["config"] = r.doc();

    dpt::atomic_write_text(join_path(s.out_dir, "calibration.json"),
                           cal.dump(2) + "\n");
    dpt::save_network(run.market_net, join_path(s.out_dir, "market_map.json"));
    write_tracking_pair(s, report.net, point.tickers, "");
    dpt::atomic_write_text(join_path(s.out_dir, "resolved_config.json"),
                           r.doc().dump(2) + "\n");

    json doc;
    doc["command"] = "calibrate";
    doc["config"] = r.doc();
    doc["summary"] = {{"epsilon_m", point.epsilon_m},
                      {"epsilon_p", point.epsilon_p},
                      {"mean_cv_mse", point.mean_cv_mse},
                      {"in_sample_mse", point.in_sample_mse}};
    doc["outputs"] = {join_path(s.out_dir, "calibration.json"),
                      join_path(s.out_dir, "market_map.json"),
                      join_path(s.out_dir, "tracking_calibration.csv"),
                      join_path(s.out_dir, "tracking_validation.csv"),
                      join_path(s.out_dir, "resolved_config.json")};
    echo(doc);
    return 0;
}

int run_frontier(const CLI::App& cmd, const std::string& config_path,
                 PipelineFlags& f, const std::string& grid,
                 const std::string& lambda_grid, int stocks) {
    Resolved r(cmd, load_config_file(config_path));
    const auto stock_grid = r.list<int>("--grid", "grid", grid);
    const auto lgrid = r.list<double>("--lambda-grid", "lambda_grid", lambda_grid);
    const int n_stocks = r.value("--stocks", "stocks", stocks);
    PipelineSetup s = resolve_pipeline(r, f);
    ensure_dir(s.out_dir);

    if (!stock_grid.empty() && !lgrid.empty()) {
        throw dpt::DomainError("--grid and --lambda-grid are mutually exclusive");
    }
    if (stock_grid.empty() && lgrid.empty()) {
        throw dpt::DomainError("need --grid (stock sweep) or --lambda-grid "
                               "(penalty sweep at fixed --stocks)");
    }

    dpt::FrontierRun run =
        lgrid.empty()
            ? dpt::build_frontier_run(s.panel, s.target, s.split, stock_grid, s.cfg,
                                      s.jobs)
            : dpt::build_lambda_frontier_run(s.panel, s.target, s.split, n_stocks,
                                             lgrid, s.cfg, s.jobs);

    // the run's embedded snapshot is the library-level config; the CLI's
    // resolved flat config supersedes it in the exported artifact
    run.frontier.config_json = r.doc().dump(2) + "\n";

    dpt::atomic_write_text(join_path(s.out_dir, "frontier.csv"),
                           dpt::frontier_to_csv(run.frontier));
    dpt::atomic_write_text(join_path(s.out_dir, "frontier.json"),
                           dpt::frontier_to_json(run.frontier));
    dpt::save_network(run.market_net, join_path(s.out_dir, "market_map.json"));

    json outputs = {join_path(s.out_dir, "frontier.csv"),
                    join_path(s.out_dir, "frontier.json"),
                    join_path(s.out_dir, "market_map.json")};
    for (std::size_t i = 0; i < run.frontier.points.size(); ++i) {
        const auto& point = run.frontier.points[i];
        const std::string suffix =
            run.frontier.mode == dpt::SweepMode::StockCount
                ? "_n" + std::to_string(point.n_stocks)
                : "_i" + std::to_string(i);
        write_tracking_pair(s, run.portfolio_nets[i], point.tickers, suffix);
        outputs.push_back(join_path(s.out_dir, "tracking_calibration" + suffix + ".csv"));
        outputs.push_back(join_path(s.out_dir, "tracking_validation" + suffix + ".csv"));
    }
    dpt::atomic_write_text(join_path(s.out_dir, "resolved_config.json"),
                           r.doc().dump(2) + "\n");
    outputs.push_back(join_path(s.out_dir, "resolved_config.json"));

    json doc;
    doc["command"] = "frontier";
    doc["config"] = r.doc();
    json points = json::array();
    for (const auto& p : run.frontier.points) {
        points.push_back({{"n_stocks", p.n_stocks},
                          {"lambda", p.lambda},
                          {"epsilon_m", p.epsilon_m},
                          {"epsilon_p", p.epsilon_p}});
    }
    doc["summary"] = {{"points", points}};
    doc["outputs"] = outputs;
    echo(doc);
    return 0;
}

dpt::ViewSpec resolve_views(const std::string& views_path, double lambda,
                            const dpt::MomentEstimates& moments) {
    dpt::ViewSpec views;
    const auto n = moments.mean.size();
    if (views_path.empty()) {
        // neutral default: one identity view per asset, targeted at the
        // sample mean with unit confidence
        views.P = Eigen::MatrixXd::Identity(n, n);
        views.q = moments.mean;
        views.Omega = Eigen::MatrixXd::Identity(n, n);
    } else {
        json doc;
        try {
            doc = json::parse(read_text(views_path));
        } catch (const json::exception& e) {
            throw dpt::ParseError("views " + views_path + ": " + e.what());
        }
        if (!doc.contains("P") || !doc.contains("q")) {
            throw dpt::SchemaError("views file needs keys P and q");
        }
        views.P = matrix_from_json(doc["P"], "views P");
        const auto qv = doc["q"].get<std::vector<double>>();
        views.q = Eigen::Map<const Eigen::VectorXd>(qv.data(),
                                                    static_cast<Eigen::Index>(qv.size()));
        if (doc.contains("omega")) {
            views.Omega = matrix_from_json(doc["omega"], "views omega");
        } else {
            views.Omega = Eigen::MatrixXd::Identity(views.P.rows(), views.P.rows());
        }
    }
    views.lambda = lambda;
    return views;
}

void write_or_print(const std::string& out_path, const json& artifact,
                    const std::string& command, const json& config) {
    if (out_path.empty()) {
        echo(artifact);
        return;
    }
    dpt::atomic_write_text(out_path, artifact.dump(2) + "\n");
    json doc;
    doc["command"] = command;
    doc["config"] = config;
    doc["outputs"] = {out_path};
    echo(doc);
}

int run_baseline_moments(const CLI::App& cmd, const std::string& config_path,
                         InputFlags& in, const std::string& out) {
    Resolved r(cmd, load_config_file(config_path));
    const dpt::ReturnsMatrix m = resolve_input(r, in);
    const std::string out_path = r.value("--out", "out", out);
    const dpt::MomentEstimates moments = dpt::markowitz_moments(m);
    moments.validate();

    json artifact;
    artifact["config"] = r.doc();
    artifact["tickers"] = m.tickers;
    artifact["mean"] = std::vector<double>(moments.mean.data(),
                                           moments.mean.data() + moments.mean.size());
    artifact["covariance"] = matrix_json(moments.covariance);
    write_or_print(out_path, artifact, "baseline moments", r.doc());
    return 0;
}

int run_baseline_bl(const CLI::App& cmd, const std::string& config_path,
                    InputFlags& in, double lambda, const std::string& views_path,
                    const std::string& out) {
    Resolved r(cmd, load_config_file(config_path));
    const dpt::ReturnsMatrix m = resolve_input(r, in);
    const double lam = r.value("--lambda", "lambda", lambda);
    const std::string vp = r.value("--views", "views", views_path);
    const std::string out_path = r.value("--out", "out", out);

    const dpt::MomentEstimates moments = dpt::markowitz_moments(m);
    const dpt::ViewSpec views = resolve_views(vp, lam, moments);
    const Eigen::VectorXd mean = dpt::black_litterman_mean(moments, views);

    json artifact;
    artifact["config"] = r.doc();
    artifact["tickers"] = m.tickers;
    artifact["sample_mean"] = std::vector<double>(
        moments.mean.data(), moments.mean.data() + moments.mean.size());
    artifact["mean"] = std::vector<double>(mean.data(), mean.data() + mean.size());
    artifact["lambda"] = lam;
    write_or_print(out_path, artifact, "baseline bl", r.doc());
    return 0;
}

int run_baseline_factor(const CLI::App& cmd, const std::string& config_path,
                        InputFlags& in, int factors, double lambda, int max_iters,
                        std::uint64_t seed, const std::string& out) {
    Resolved r(cmd, load_config_file(config_path));
    const dpt::ReturnsMatrix m = resolve_input(r, in);
    const int k = r.value("--factors", "factors", factors);
    const double lam = r.value("--lambda", "lambda", lambda);
    const int iters = r.value("--max-iters", "max_iters", max_iters);
    const auto the_seed = r.value("--seed", "seed", seed);
    const std::string out_path = r.value("--out", "out", out);

    const dpt::FactorModel model = dpt::factor_model_fit(m, k, lam, iters, the_seed);
    model.validate(); // refuses to emit a non-monotone objective trace

    json artifact = json::parse(dpt::factor_model_to_json(model));
    artifact["config"] = r.doc();
    artifact["tickers"] = m.tickers;
    write_or_print(out_path, artifact, "baseline factor", r.doc());
    return 0;
}

int run_report(const CLI::App& cmd, const std::string& config_path,
               std::vector<std::string>& inputs, const std::string& out) {
    Resolved r(cmd, load_config_file(config_path));
    if (cmd.count("--input") == 0) {
        // allow the config file to carry the input list
        inputs = r.list<std::string>("--input", "inputs", "");
    } else {
        r.doc()["inputs"] = inputs;
    }
    const std::string out_path = r.value("--out", "out", out);
    if (inputs.empty()) {
        throw dpt::DomainError("report needs at least one frontier JSON (-i)");
    }
    std::vector<dpt::Frontier> frontiers;
    frontiers.reserve(inputs.size());
    for (const auto& path : inputs) {
        frontiers.push_back(dpt::frontier_from_json(read_text(path)));
    }
    const dpt::ComparisonReport comparison = dpt::compare_frontiers(frontiers);

    json artifact = json::parse(dpt::comparison_to_json(comparison));
    artifact["config"] = r.doc();
    artifact["inputs"] = inputs;
    write_or_print(out_path, artifact, "report", r.doc());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deep portfolio construction: auto-encode, calibrate, validate, "
                 "verify"};
    app.require_subcommand(1);

    std::string config_path;
    const auto add_config = [&config_path](CLI::App* cmd) {
        cmd->add_option("--config", config_path,
                        "flat JSON config file; explicit flags override its keys");
    };

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic returns panel");
    add_config(synth);
    int sy_assets = 30, sy_periods = 200, sy_latent = 3;
    double sy_fv = 0.02, sy_nv = 0.005;
    std::string sy_drawdown, sy_out;
    std::uint64_t sy_seed = 0;
    synth->add_option("--assets", sy_assets, "number of assets (default 30)");
    synth->add_option("--periods", sy_periods, "number of periods (default 200)");
    synth->add_option("--latent", sy_latent, "latent factor count (default 3)");
    synth->add_option("--factor-vol", sy_fv, "factor volatility (default 0.02)");
    synth->add_option("--noise-vol", sy_nv, "idiosyncratic volatility (default 0.005)");
    synth->add_option("--drawdown", sy_drawdown,
                      "single-cell shock as asset,period,magnitude");
    synth->add_option("--seed", sy_seed, "generator seed");
    synth->add_option("-o,--out", sy_out, "output CSV path");

    // ingest
    auto* ingest = app.add_subcommand(
        "ingest", "validate a CSV and write it in canonical wide form");
    add_config(ingest);
    InputFlags ig_in;
    std::string ig_out;
    add_input_flags(ingest, ig_in);
    ingest->add_option("-o,--out", ig_out, "output CSV path");

    // encode
    auto* encode = app.add_subcommand(
        "encode", "train the market-map autoencoder and rank stocks by communality");
    add_config(encode);
    InputFlags en_in;
    int en_hidden = 5, en_epochs = 200, en_batch = 32;
    double en_lambda = 0.0, en_lr = 0.01;
    std::string en_penalty = "l2", en_act = "relu", en_out_act = "linear", en_dir;
    std::uint64_t en_seed = 0;
    add_input_flags(encode, en_in);
    encode->add_option("--hidden", en_hidden, "hidden width (default 5)");
    encode->add_option("--lambda", en_lambda, "penalty weight");
    encode->add_option("--penalty", en_penalty, "penalty kind: l1 | l2");
    encode->add_option("--learning-rate", en_lr, "SGD learning rate");
    encode->add_option("--epochs", en_epochs, "SGD epochs");
    encode->add_option("--batch", en_batch, "minibatch size");
    encode->add_option("--activation", en_act, "hidden activation");
    encode->add_option("--output-activation", en_out_act, "output activation");
    encode->add_option("--seed", en_seed, "training seed");
    encode->add_option("-o,--out-dir", en_dir, "output directory");

    // calibrate
    auto* calibrate = app.add_subcommand(
        "calibrate", "fit the portfolio-map for one universe size");
    add_config(calibrate);
    PipelineFlags ca_flags;
    int ca_stocks = 25;
    add_pipeline_flags(calibrate, ca_flags);
    calibrate->add_option("--stocks", ca_stocks, "universe size (default 25)");

    // frontier
    auto* frontier = app.add_subcommand(
        "frontier", "sweep universe sizes (or penalties) and trace the frontier");
    add_config(frontier);
    PipelineFlags fr_flags;
    std::string fr_grid, fr_lambda_grid;
    int fr_stocks = 25;
    add_pipeline_flags(frontier, fr_flags);
    frontier->add_option("--grid", fr_grid, "stock counts, e.g. 15,25,45");
    frontier->add_option("--lambda-grid", fr_lambda_grid,
                         "penalty weights, e.g. 0,0.01,0.1 (needs --stocks)");
    frontier->add_option("--stocks", fr_stocks,
                         "universe size for --lambda-grid mode (default 25)");

    // baseline
    auto* baseline = app.add_subcommand("baseline", "classic comparison encoders");
    baseline->require_subcommand(1);
    auto* moments = baseline->add_subcommand("moments", "sample mean and covariance");
    add_config(moments);
    InputFlags bm_in;
    std::string bm_out;
    add_input_flags(moments, bm_in);
    moments->add_option("-o,--out", bm_out, "output JSON path (default stdout)");

    auto* bl = baseline->add_subcommand("bl", "view-blended ridge mean");
    add_config(bl);
    InputFlags bb_in;
    double bb_lambda = 0.0;
    std::string bb_views, bb_out;
    add_input_flags(bl, bb_in);
    bl->add_option("--lambda", bb_lambda, "view weight (0 = sample mean)");
    bl->add_option("--views", bb_views,
                   "JSON file with P (VxN), q (V), optional omega (VxV); "
                   "default: identity views at the sample mean");
    bl->add_option("-o,--out", bb_out, "output JSON path (default stdout)");

    auto* factor = baseline->add_subcommand("factor", "sparse linear factor model");
    add_config(factor);
    InputFlags bf_in;
    int bf_k = 3, bf_iters = 200;
    double bf_lambda = 0.0;
    std::uint64_t bf_seed = 0;
    std::string bf_out;
    add_input_flags(factor, bf_in);
    factor->add_option("-K,--factors", bf_k, "factor count (default 3)");
    factor->add_option("--lambda", bf_lambda, "loadings L1 penalty weight");
    factor->add_option("--max-iters", bf_iters, "alternating pass cap (default 200)");
    factor->add_option("--seed", bf_seed, "factor initialization seed");
    factor->add_option("-o,--out", bf_out, "output JSON path (default stdout)");

    // report
    auto* report = app.add_subcommand(
        "report", "compare frontier JSONs and pick the best per grid point");
    add_config(report);
    std::vector<std::string> rp_inputs;
    std::string rp_out;
    report->add_option("-i,--input", rp_inputs, "frontier JSON paths (repeatable)");
    report->add_option("-o,--out", rp_out, "output JSON path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) {
            return run_synth(*synth, config_path, sy_assets, sy_periods, sy_latent,
                             sy_fv, sy_nv, sy_drawdown, sy_seed, sy_out);
        }
        if (*ingest) return run_ingest(*ingest, config_path, ig_in, ig_out);
        if (*encode) {
            return run_encode(*encode, config_path, en_in, en_hidden, en_lambda,
                              en_penalty, en_lr, en_epochs, en_batch, en_act,
                              en_out_act, en_seed, en_dir);
        }
        if (*calibrate) {
            return run_calibrate(*calibrate, config_path, ca_flags, ca_stocks);
        }
        if (*frontier) {
            return run_frontier(*frontier, config_path, fr_flags, fr_grid,
                                fr_lambda_grid, fr_stocks);
        }
        if (*baseline) {
            if (*moments) return run_baseline_moments(*moments, config_path, bm_in, bm_out);
            if (*bl) {
                return run_baseline_bl(*bl, config_path, bb_in, bb_lambda, bb_views,
                                       bb_out);
            }
            if (*factor) {
                return run_baseline_factor(*factor, config_path, bf_in, bf_k,
                                           bf_lambda, bf_iters, bf_seed, bf_out);
            }
        }
        if (*report) return run_report(*report, config_path, rp_inputs, rp_out);
        std::cerr << "error: no command\n";
        return 1;
    } catch (const dpt::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const dpt::ConditioningError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const dpt::IterationLimitError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const dpt::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const dpt::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
