#include "dpt/frontier.hpp"

#include "dpt/errors.hpp"
#include "dpt/market_map.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <sstream>
#include <thread>

namespace dpt {

void FrontierPoint::validate() const {
    if (n_stocks < 1) throw DomainError("frontier point has n_stocks < 1");
    if (static_cast<int>(tickers.size()) != n_stocks) {
        throw ShapeError("frontier point lists " + std::to_string(tickers.size()) +
                         " tickers for n_stocks = " + std::to_string(n_stocks));
    }
    if (!std::isfinite(epsilon_m) || !std::isfinite(epsilon_p) ||
        epsilon_m < 0.0 || epsilon_p < 0.0) {
        throw DataError("frontier point errors must be finite and non-negative");
    }
    if (!std::isfinite(lambda)) throw DataError("frontier point lambda is non-finite");
}

void Frontier::validate() const {
    if (points.empty()) throw ShapeError("frontier has no points");
    for (const auto& p : points) p.validate();
    for (std::size_t i = 1; i < points.size(); ++i) {
        if (mode == SweepMode::StockCount &&
            points[i].n_stocks <= points[i - 1].n_stocks) {
            throw DataError("frontier n_stocks not strictly increasing at point " +
                            std::to_string(i));
        }
        if (mode == SweepMode::Lambda && points[i].lambda <= points[i - 1].lambda) {
            throw DataError("frontier lambda not strictly increasing at point " +
                            std::to_string(i));
        }
    }
}

void PipelineConfig::validate() const {
    if (market_hidden < 1) throw DomainError("market_hidden must be >= 1");
    if (portfolio_hidden < 1) throw DomainError("portfolio_hidden must be >= 1");
    if (k_folds < 2) throw DomainError("k_folds must be >= 2");
    if (n_communal < 0) throw DomainError("n_communal must be >= 0");
}

namespace {

nlohmann::json train_config_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["lambda"] = cfg.lambda;
    j["penalty"] = penalty_name(cfg.penalty);
    j["learning_rate"] = cfg.learning_rate;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["seed"] = cfg.seed;
    if (cfg.init_scale) {
        j["init_scale"] = *cfg.init_scale;
    } else {
        j["init_scale"] = nullptr;
    }
    return j;
}

std::string kfold_mode_name(KfoldMode mode) {
    return mode == KfoldMode::Shuffled ? "shuffled" : "contiguous";
}

std::string solver_name(CalibrationSolver solver) {
    return solver == CalibrationSolver::Sgd ? "sgd" : "exact_linear";
}

std::string sweep_mode_name(SweepMode mode) {
    return mode == SweepMode::StockCount ? "stock_count" : "lambda";
}

} // namespace

std::string PipelineConfig::to_json() const {
    nlohmann::json j;
    j["market_hidden"] = market_hidden;
    j["portfolio_hidden"] = portfolio_hidden;
    j["k_folds"] = k_folds;
    j["n_communal"] = n_communal;
    j["market"] = train_config_json(market_train);
    j["market"]["hidden_activation"] = activation_name(market_hidden_act);
    j["market"]["output_activation"] = activation_name(market_output_act);
    j["portfolio"] = train_config_json(portfolio_train);
    j["portfolio"]["hidden_activation"] = activation_name(calibrate.hidden_act);
    j["portfolio"]["output_activation"] = activation_name(calibrate.output_act);
    j["portfolio"]["fold_mode"] = kfold_mode_name(calibrate.fold_mode);
    j["portfolio"]["solver"] = solver_name(calibrate.solver);
    return j.dump(2) + "\n";
}

std::pair<double, double> validation_errors(const Network& market_net,
                                            const Network& portfolio_net,
                                            const ReturnsMatrix& X_hat,
                                            const ReturnsMatrix& X_hat_sel,
                                            const TargetSeries& y_hat) {
    X_hat.validate();
    X_hat_sel.validate();
    y_hat.validate();
    if (X_hat_sel.rows() != X_hat.rows()) {
        throw ShapeError("selected panel has " + std::to_string(X_hat_sel.rows()) +
                         " periods, full panel has " + std::to_string(X_hat.rows()));
    }
    if (y_hat.values.size() != X_hat.rows()) {
        throw ShapeError("target has " + std::to_string(y_hat.values.size()) +
                         " periods, panel has " + std::to_string(X_hat.rows()));
    }
    for (const auto& t : X_hat_sel.tickers) {
        if (std::find(X_hat.tickers.begin(), X_hat.tickers.end(), t) ==
            X_hat.tickers.end()) {
            throw ShapeError("selected ticker " + t + " is not in the full panel");
        }
    }
    const double epsilon_m = epsilon_market(market_net, X_hat);
    const Eigen::VectorXd tracker = track(portfolio_net, X_hat_sel);
    const double epsilon_p = (y_hat.values - tracker).squaredNorm() /
                             static_cast<double>(X_hat.rows());
    return {epsilon_m, epsilon_p};
}

namespace {

// Everything that is shared by (and constant across) the grid points.
struct PipelineData {
    ReturnsMatrix x_calib;
    ReturnsMatrix x_valid;
    TargetSeries y_calib;
    TargetSeries y_valid;
    Network market_net;
    CommunalRanking ranking;
};

PipelineData prepare_pipeline(const ReturnsMatrix& data, const TargetSeries& target,
                              const SplitSpec& split_spec, const PipelineConfig& cfg) {
    cfg.validate();
    data.validate();
    target.validate();
    if (target.values.size() != data.rows()) {
        throw ShapeError("target has " + std::to_string(target.values.size()) +
                         " periods, panel has " + std::to_string(data.rows()));
    }
    const auto [calib_idx, valid_idx] = split_rows(data, split_spec);

    PipelineData p;
    p.x_calib = select_rows(data, calib_idx);
    p.x_valid = select_rows(data, valid_idx);
    p.y_calib = target_rows(target, calib_idx);
    p.y_valid = target_rows(target, valid_idx);
    p.market_net = train_autoencoder(p.x_calib, cfg.market_hidden, cfg.market_train,
                                     cfg.market_hidden_act, cfg.market_output_act);
    p.ranking = rank_communal(reconstruction_errors(p.market_net, p.x_calib),
                              p.x_calib.tickers);
    return p;
}

struct PointResult {
    FrontierPoint point;
    Network net;
};

PointResult evaluate_point(const PipelineData& p, const PipelineConfig& cfg,
                           int n_stocks, double lambda) {
    TrainConfig train_cfg = cfg.portfolio_train;
    train_cfg.lambda = lambda;

    const auto universe = select_universe(p.ranking, n_stocks, cfg.n_communal);
    const ReturnsMatrix x_calib_sel = p.x_calib.select_tickers(universe);
    const ReturnsMatrix x_valid_sel = p.x_valid.select_tickers(universe);
    const CalibrationReport report = calibrate(x_calib_sel, p.y_calib,
                                               cfg.portfolio_hidden, train_cfg,
                                               cfg.k_folds, cfg.calibrate);
    const auto [epsilon_m, epsilon_p] = validation_errors(
        p.market_net, report.net, p.x_valid, x_valid_sel, p.y_valid);

    FrontierPoint point;
    point.n_stocks = n_stocks;
    point.epsilon_m = epsilon_m;
    point.epsilon_p = epsilon_p;
    point.lambda = lambda;
    point.seed = train_cfg.seed;
    point.tickers = universe;
    point.in_sample_mse = report.in_sample_mse;
    point.fold_mse = report.fold_mse;
    point.mean_cv_mse = report.mean_cv_mse;
    point.validate();
    return {std::move(point), report.net};
}

// Rethrows the in-flight exception with a prefix, preserving the type (and
// payload) of the error classes the CLI maps to distinct exit codes.
[[noreturn]] void rethrow_annotated(const std::string& prefix) {
    try {
        throw;
    } catch (const DivergenceError& e) {
        throw DivergenceError(prefix + e.what(), e.epoch());
    } catch (const IterationLimitError& e) {
        throw IterationLimitError(prefix + e.what(), e.last_delta());
    } catch (const ConditioningError& e) {
        throw ConditioningError(prefix + e.what());
    } catch (const SelectionError& e) {
        throw SelectionError(prefix + e.what());
    } catch (const ShapeError& e) {
        throw ShapeError(prefix + e.what());
    } catch (const DomainError& e) {
        throw DomainError(prefix + e.what());
    } catch (const DataError& e) {
        throw DataError(prefix + e.what());
    } catch (const Error& e) {
        throw Error(prefix + e.what());
    }
}

// Runs work(0..n-1) on up to `jobs` threads. Results must be written to
// per-index slots by the callback. If any indices fail, the lowest-index
// error is rethrown so failure reporting does not depend on scheduling.
void run_jobs(int jobs, std::size_t n, const std::function<void(std::size_t)>& work) {
    if (jobs < 1) throw DomainError("jobs must be >= 1");
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) work(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> failures(n);
    auto drain = [&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
            try {
                work(i);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(drain);
    for (auto& th : pool) th.join();
    for (const auto& failure : failures) {
        if (failure) std::rethrow_exception(failure);
    }
}

} // namespace

FrontierRun build_frontier_run(const ReturnsMatrix& data, const TargetSeries& target,
                               const SplitSpec& split_spec,
                               const std::vector<int>& stock_grid,
                               const PipelineConfig& cfg, int jobs) {
    if (stock_grid.empty()) throw DomainError("stock grid is empty");
    for (std::size_t i = 0; i < stock_grid.size(); ++i) {
        if (stock_grid[i] < 1 || stock_grid[i] > data.cols()) {
            throw DomainError("grid value " + std::to_string(stock_grid[i]) +
                              " outside [1, " + std::to_string(data.cols()) + "]");
        }
        if (i > 0 && stock_grid[i] <= stock_grid[i - 1]) {
            throw DomainError("stock grid must be strictly increasing");
        }
    }
    PipelineData p = prepare_pipeline(data, target, split_spec, cfg);

    FrontierRun run;
    run.frontier.mode = SweepMode::StockCount;
    run.frontier.config_json = cfg.to_json();
    run.frontier.points.resize(stock_grid.size());
    run.portfolio_nets.resize(stock_grid.size());
    run_jobs(jobs, stock_grid.size(), [&](std::size_t i) {
        try {
            PointResult r =
                evaluate_point(p, cfg, stock_grid[i], cfg.portfolio_train.lambda);
            run.frontier.points[i] = std::move(r.point);
            run.portfolio_nets[i] = std::move(r.net);
        } catch (...) {
            rethrow_annotated("grid point n_stocks=" + std::to_string(stock_grid[i]) +
                              ": ");
        }
    });
    run.market_net = std::move(p.market_net);
    run.frontier.validate();
    return run;
}

Frontier build_frontier(const ReturnsMatrix& data, const TargetSeries& target,
                        const SplitSpec& split_spec, const std::vector<int>& stock_grid,
                        const PipelineConfig& cfg, int jobs) {
    return build_frontier_run(data, target, split_spec, stock_grid, cfg, jobs).frontier;
}

FrontierRun build_lambda_frontier_run(const ReturnsMatrix& data,
                                      const TargetSeries& target,
                                      const SplitSpec& split_spec, int n_stocks,
                                      const std::vector<double>& lambda_grid,
                                      const PipelineConfig& cfg, int jobs) {
    if (lambda_grid.empty()) throw DomainError("lambda grid is empty");
    for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
        if (!std::isfinite(lambda_grid[i]) || lambda_grid[i] < 0.0) {
            throw DomainError("lambda grid values must be finite and >= 0");
        }
        if (i > 0 && lambda_grid[i] <= lambda_grid[i - 1]) {
            throw DomainError("lambda grid must be strictly increasing");
        }
    }
    if (n_stocks < 1 || n_stocks > data.cols()) {
        throw DomainError("n_stocks " + std::to_string(n_stocks) + " outside [1, " +
                          std::to_string(data.cols()) + "]");
    }
    PipelineData p = prepare_pipeline(data, target, split_spec, cfg);

    FrontierRun run;
    run.frontier.mode = SweepMode::Lambda;
    run.frontier.config_json = cfg.to_json();
    run.frontier.points.resize(lambda_grid.size());
    run.portfolio_nets.resize(lambda_grid.size());
    run_jobs(jobs, lambda_grid.size(), [&](std::size_t i) {
        try {
            PointResult r = evaluate_point(p, cfg, n_stocks, lambda_grid[i]);
            run.frontier.points[i] = std::move(r.point);
            run.portfolio_nets[i] = std::move(r.net);
        } catch (...) {
            rethrow_annotated("grid point lambda=" + format_value(lambda_grid[i]) +
                              ": ");
        }
    });
    run.market_net = std::move(p.market_net);
    run.frontier.validate();
    return run;
}

Frontier build_lambda_frontier(const ReturnsMatrix& data, const TargetSeries& target,
                               const SplitSpec& split_spec, int n_stocks,
                               const std::vector<double>& lambda_grid,
                               const PipelineConfig& cfg, int jobs) {
    return build_lambda_frontier_run(data, target, split_spec, n_stocks, lambda_grid,
                                     cfg, jobs)
        .frontier;
}

void ComparisonReport::validate() const {
    if (grid.size() != best.size() || grid.size() != tied.size()) {
        throw ShapeError("comparison report fields disagree in length");
    }
}

ComparisonReport compare_frontiers(const std::vector<Frontier>& frontiers) {
    if (frontiers.empty()) throw ComparisonError("no frontiers to compare");
    for (const auto& f : frontiers) f.validate();

    const auto key = [](const Frontier& f, std::size_t i) {
        return f.mode == SweepMode::StockCount
                   ? static_cast<double>(f.points[i].n_stocks)
                   : f.points[i].lambda;
    };

    const Frontier& ref = frontiers.front();
    for (std::size_t fi = 1; fi < frontiers.size(); ++fi) {
        const Frontier& f = frontiers[fi];
        if (f.mode != ref.mode) {
            throw ComparisonError("frontier " + std::to_string(fi) +
                                  " uses a different sweep mode");
        }
        if (f.points.size() != ref.points.size()) {
            throw ComparisonError("frontier " + std::to_string(fi) + " has " +
                                  std::to_string(f.points.size()) + " points, expected " +
                                  std::to_string(ref.points.size()));
        }
        for (std::size_t i = 0; i < ref.points.size(); ++i) {
            if (key(f, i) != key(ref, i)) {
                throw ComparisonError("frontier " + std::to_string(fi) +
                                      " grid mismatch at point " + std::to_string(i) +
                                      ": " + format_value(key(f, i)) + " vs " +
                                      format_value(key(ref, i)));
            }
        }
    }

    ComparisonReport report;
    report.mode = ref.mode;
    report.grid.reserve(ref.points.size());
    for (std::size_t i = 0; i < ref.points.size(); ++i) {
        report.grid.push_back(key(ref, i));
        std::size_t best = 0;
        std::size_t n_at_min = 1;
        for (std::size_t fi = 1; fi < frontiers.size(); ++fi) {
            const double ep = frontiers[fi].points[i].epsilon_p;
            const double cur = frontiers[best].points[i].epsilon_p;
            if (ep < cur) {
                best = fi;
                n_at_min = 1;
            } else if (ep == cur) {
                ++n_at_min;
            }
        }
        report.best.push_back(best);
        report.tied.push_back(n_at_min > 1);
    }
    for (std::size_t fi = 0; fi < frontiers.size(); ++fi) {
        bool everywhere = true;
        for (std::size_t i = 0; i < ref.points.size(); ++i) {
            if (frontiers[fi].points[i].epsilon_p >
                frontiers[report.best[i]].points[i].epsilon_p) {
                everywhere = false;
                break;
            }
        }
        if (everywhere) {
            report.dominant = fi;
            break;
        }
    }
    report.validate();
    return report;
}

std::string frontier_to_csv(const Frontier& frontier) {
    frontier.validate();
    std::ostringstream out;
    out << "n_stocks,lambda,epsilon_m,epsilon_p\n";
    for (const auto& p : frontier.points) {
        out << p.n_stocks << ',' << format_value(p.lambda) << ','
            << format_value(p.epsilon_m) << ',' << format_value(p.epsilon_p) << '\n';
    }
    return out.str();
}

std::string frontier_to_json(const Frontier& frontier) {
    frontier.validate();
    nlohmann::json doc;
    doc["mode"] = sweep_mode_name(frontier.mode);
    doc["config"] = frontier.config_json.empty()
                        ? nlohmann::json(nullptr)
                        : nlohmann::json::parse(frontier.config_json);
    doc["points"] = nlohmann::json::array();
    for (const auto& p : frontier.points) {
        nlohmann::json jp;
        jp["n_stocks"] = p.n_stocks;
        jp["lambda"] = p.lambda;
        jp["seed"] = p.seed;
        jp["epsilon_m"] = p.epsilon_m;
        jp["epsilon_p"] = p.epsilon_p;
        jp["tickers"] = p.tickers;
        jp["in_sample_mse"] = p.in_sample_mse;
        jp["fold_mse"] = p.fold_mse;
        jp["mean_cv_mse"] = p.mean_cv_mse;
        doc["points"].push_back(std::move(jp));
    }
    return doc.dump(2) + "\n";
}

Frontier frontier_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("frontier JSON: ") + e.what());
    }
    Frontier frontier;
    try {
        const auto mode = doc.at("mode").get<std::string>();
        if (mode == "stock_count") {
            frontier.mode = SweepMode::StockCount;
        } else if (mode == "lambda") {
            frontier.mode = SweepMode::Lambda;
        } else {
            throw SchemaError("unknown sweep mode '" + mode + "'");
        }
        if (doc.contains("config") && !doc["config"].is_null()) {
            frontier.config_json = doc["config"].dump(2) + "\n";
        }
        for (const auto& jp : doc.at("points")) {
            FrontierPoint p;
            p.n_stocks = jp.at("n_stocks").get<int>();
            p.lambda = jp.at("lambda").get<double>();
            p.seed = jp.at("seed").get<std::uint64_t>();
            p.epsilon_m = jp.at("epsilon_m").get<double>();
            p.epsilon_p = jp.at("epsilon_p").get<double>();
            p.tickers = jp.at("tickers").get<std::vector<std::string>>();
            p.in_sample_mse = jp.value("in_sample_mse", 0.0);
            p.fold_mse = jp.value("fold_mse", std::vector<double>{});
            p.mean_cv_mse = jp.value("mean_cv_mse", 0.0);
            frontier.points.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("frontier JSON: ") + e.what());
    }
    frontier.validate();
    return frontier;
}

std::string comparison_to_json(const ComparisonReport& report) {
    report.validate();
    nlohmann::json doc;
    doc["mode"] = sweep_mode_name(report.mode);
    doc["grid"] = report.grid;
    doc["best"] = report.best;
    doc["tied"] = report.tied;
    doc["dominant"] =
        report.dominant ? nlohmann::json(*report.dominant) : nlohmann::json(nullptr);
    return doc.dump(2) + "\n";
}

std::string tracking_to_csv(const std::vector<std::string>& timestamps,
                            const Eigen::VectorXd& target,
                            const Eigen::VectorXd& tracker) {
    const auto n = static_cast<Eigen::Index>(timestamps.size());
    if (target.size() != n || tracker.size() != n) {
        throw ShapeError("tracking export needs equally long date/target/tracker "
                         "series");
    }
    std::ostringstream out;
    out << "date,target,tracker\n";
    for (Eigen::Index i = 0; i < n; ++i) {
        out << timestamps[static_cast<std::size_t>(i)] << ','
            << format_value(target(i)) << ',' << format_value(tracker(i)) << '\n';
    }
    return out.str();
}

} // namespace dpt
