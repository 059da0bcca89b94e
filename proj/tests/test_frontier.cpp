#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dpt/errors.hpp"
#include "dpt/frontier.hpp"
#include "dpt/market_map.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace {

struct Fixture {
    dpt::ReturnsMatrix panel;
    dpt::TargetSeries target;
    dpt::SplitSpec split;
    dpt::PipelineConfig cfg;
};

Fixture make_fixture() {
    Fixture f;
    f.panel = dpt::synth_market(20, 90, 3, std::nullopt, 41);
    f.target.values = f.panel.values.rowwise().mean();
    f.target.label = "equal_weight";

    f.split.calibration_begin = f.panel.timestamps.front();
    f.split.calibration_end = f.panel.timestamps[70];
    f.split.validation_begin = f.panel.timestamps[70];
    f.split.validation_end = "";

    f.cfg.market_hidden = 4;
    f.cfg.portfolio_hidden = 4;
    f.cfg.market_train.epochs = 25;
    f.cfg.market_train.batch_size = 16;
    f.cfg.market_train.learning_rate = 0.05;
    f.cfg.market_train.seed = 11;
    f.cfg.portfolio_train.epochs = 25;
    f.cfg.portfolio_train.batch_size = 16;
    f.cfg.portfolio_train.learning_rate = 0.05;
    f.cfg.portfolio_train.seed = 11;
    f.cfg.k_folds = 3;
    f.cfg.n_communal = 5;
    return f;
}

dpt::Frontier toy_frontier(const std::vector<int>& grid,
                           const std::vector<double>& eps_p) {
    dpt::Frontier fr;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        dpt::FrontierPoint p;
        p.n_stocks = grid[i];
        p.lambda = 0.0;
        p.epsilon_m = 0.001;
        p.epsilon_p = eps_p[i];
        for (int j = 0; j < grid[i]; ++j) p.tickers.push_back("T" + std::to_string(j));
        fr.points.push_back(std::move(p));
    }
    return fr;
}

} // namespace

TEST_CASE("frontier sweeps the stock grid in order") {
    const Fixture f = make_fixture();
    const std::vector<int> grid = {8, 12, 20};

    const dpt::FrontierRun run =
        dpt::build_frontier_run(f.panel, f.target, f.split, grid, f.cfg);
    const dpt::Frontier& fr = run.frontier;
    REQUIRE(fr.points.size() == 3);
    fr.validate();

    for (std::size_t i = 0; i < fr.points.size(); ++i) {
        const auto& p = fr.points[i];
        CHECK(p.n_stocks == grid[i]);
        CHECK(p.tickers.size() == static_cast<std::size_t>(grid[i]));
        CHECK(p.epsilon_m >= 0.0);
        CHECK(p.epsilon_p >= 0.0);
        CHECK(p.fold_mse.size() == 3);
        CHECK(p.seed == f.cfg.portfolio_train.seed);
    }
    // every grid point shares the once-trained market map
    CHECK(fr.points[0].epsilon_m == fr.points[1].epsilon_m);
    CHECK(fr.points[1].epsilon_m == fr.points[2].epsilon_m);

    SUBCASE("the run is bit-for-bit reproducible") {
        const dpt::FrontierRun again =
            dpt::build_frontier_run(f.panel, f.target, f.split, grid, f.cfg);
        CHECK(dpt::frontier_to_json(again.frontier) == dpt::frontier_to_json(fr));
        CHECK(run.market_net.layers[0].weights ==
              again.market_net.layers[0].weights);
    }
    SUBCASE("parallel evaluation yields the sequential result") {
        const dpt::FrontierRun par =
            dpt::build_frontier_run(f.panel, f.target, f.split, grid, f.cfg, 3);
        CHECK(dpt::frontier_to_json(par.frontier) == dpt::frontier_to_json(fr));
    }
    SUBCASE("reported errors can be recomputed from the returned maps") {
        const auto [ci, vi] = dpt::split_rows(f.panel, f.split);
        const dpt::ReturnsMatrix valid = dpt::select_rows(f.panel, vi);
        const dpt::TargetSeries y_valid = dpt::target_rows(f.target, vi);
        for (std::size_t i = 0; i < fr.points.size(); ++i) {
            const auto& p = fr.points[i];
            const dpt::ReturnsMatrix valid_sel = valid.select_tickers(p.tickers);
            const auto [em, ep] = dpt::validation_errors(
                run.market_net, run.portfolio_nets[i], valid, valid_sel, y_valid);
            CHECK(std::abs(em - p.epsilon_m) <= 1e-12);
            CHECK(std::abs(ep - p.epsilon_p) <= 1e-12);

            // and from the tracking series itself
            const Eigen::VectorXd tracker =
                dpt::track(run.portfolio_nets[i], valid_sel);
            const double mse = (tracker - y_valid.values).squaredNorm() /
                               static_cast<double>(tracker.size());
            CHECK(std::abs(mse - p.epsilon_p) <= 1e-12);
        }
    }
    SUBCASE("grid values must be strictly increasing and within the universe") {
        CHECK_THROWS_AS(
            dpt::build_frontier(f.panel, f.target, f.split, {12, 8}, f.cfg),
            dpt::DomainError);
        CHECK_THROWS_AS(
            dpt::build_frontier(f.panel, f.target, f.split, {8, 21}, f.cfg),
            dpt::DomainError);
        CHECK_THROWS_AS(dpt::build_frontier(f.panel, f.target, f.split, {}, f.cfg),
                        dpt::DomainError);
    }
    SUBCASE("failures carry the failing grid point") {
        dpt::PipelineConfig hot = f.cfg;
        hot.portfolio_train.learning_rate = 1e14;
        try {
            dpt::build_frontier(f.panel, f.target, f.split, {8, 12}, hot);
            FAIL("expected DivergenceError");
        } catch (const dpt::DivergenceError& e) {
            CHECK(std::string(e.what()).find("grid point n_stocks=8") !=
                  std::string::npos);
        }
    }
}

TEST_CASE("lambda sweep holds the universe fixed") {
    const Fixture f = make_fixture();
    const std::vector<double> lgrid = {0.0, 0.001, 0.01};

    const dpt::Frontier fr =
        dpt::build_lambda_frontier(f.panel, f.target, f.split, 10, lgrid, f.cfg);
    REQUIRE(fr.points.size() == 3);
    CHECK(fr.mode == dpt::SweepMode::Lambda);
    fr.validate();
    for (std::size_t i = 0; i < fr.points.size(); ++i) {
        CHECK(fr.points[i].lambda == lgrid[i]);
        CHECK(fr.points[i].n_stocks == 10);
        CHECK(fr.points[i].tickers == fr.points[0].tickers);
    }

    CHECK_THROWS_AS(dpt::build_lambda_frontier(f.panel, f.target, f.split, 10,
                                               {0.01, 0.001}, f.cfg),
                    dpt::DomainError);
}

TEST_CASE("validation_errors checks panel alignment") {
    const Fixture f = make_fixture();
    const auto [calib, valid] = dpt::split(f.panel, f.split);

    dpt::TrainConfig cfg = f.cfg.market_train;
    const dpt::Network market = dpt::train_autoencoder(calib, 4, cfg);
    const std::vector<std::string> sel(f.panel.tickers.begin(),
                                       f.panel.tickers.begin() + 6);
    const dpt::ReturnsMatrix valid_sel = valid.select_tickers(sel);

    dpt::TargetSeries y;
    y.values = valid.values.rowwise().mean();

    dpt::TrainConfig pcfg = f.cfg.portfolio_train;
    pcfg.batch_size = 8;
    const auto rep = dpt::calibrate(valid_sel, y, 3, pcfg, 2);

    const auto [em, ep] = dpt::validation_errors(market, rep.net, valid, valid_sel, y);
    CHECK(em > 0.0);
    CHECK(ep >= 0.0);

    SUBCASE("row count mismatch") {
        const dpt::ReturnsMatrix short_sel = dpt::select_rows(valid_sel, {0, 1, 2});
        CHECK_THROWS_AS(
            dpt::validation_errors(market, rep.net, valid, short_sel, y),
            dpt::ShapeError);
    }
    SUBCASE("selection must come from the full panel") {
        dpt::ReturnsMatrix renamed = valid_sel;
        renamed.tickers[0] = "NOT_THERE";
        CHECK_THROWS_AS(
            dpt::validation_errors(market, rep.net, valid, renamed, y),
            dpt::ShapeError);
    }
    SUBCASE("target length must match") {
        dpt::TargetSeries bad = y;
        bad.values.conservativeResize(3);
        CHECK_THROWS_AS(
            dpt::validation_errors(market, rep.net, valid, valid_sel, bad),
            dpt::ShapeError);
    }
}

TEST_CASE("frontier comparison picks the smallest tracking error per point") {
    const std::vector<int> grid = {10, 20, 30};
    const dpt::Frontier a = toy_frontier(grid, {0.5, 0.2, 0.9});
    const dpt::Frontier b = toy_frontier(grid, {0.6, 0.1, 0.9});

    const dpt::ComparisonReport rep = dpt::compare_frontiers({a, b});
    REQUIRE(rep.best.size() == 3);
    CHECK(rep.best[0] == 0);
    CHECK(rep.best[1] == 1);
    CHECK(rep.best[2] == 0); // tie goes to the first listed
    CHECK(rep.tied[2]);
    CHECK(!rep.tied[0]);
    CHECK(!rep.dominant.has_value());

    SUBCASE("scaling every error by a positive constant preserves the winners") {
        dpt::Frontier a2 = a, b2 = b;
        for (auto& p : a2.points) p.epsilon_p *= 37.0;
        for (auto& p : b2.points) p.epsilon_p *= 37.0;
        const auto scaled = dpt::compare_frontiers({a2, b2});
        CHECK(scaled.best == rep.best);
        CHECK(scaled.tied == rep.tied);
    }
    SUBCASE("a frontier that is weakly best everywhere dominates") {
        const dpt::Frontier c = toy_frontier(grid, {0.5, 0.1, 0.9});
        const auto dom = dpt::compare_frontiers({c, a, b});
        REQUIRE(dom.dominant.has_value());
        CHECK(*dom.dominant == 0);
    }
    SUBCASE("misaligned grids are a ComparisonError") {
        const dpt::Frontier c = toy_frontier({10, 20, 40}, {0.1, 0.1, 0.1});
        CHECK_THROWS_AS(dpt::compare_frontiers({a, c}), dpt::ComparisonError);
        CHECK_THROWS_AS(dpt::compare_frontiers({}), dpt::ComparisonError);

        dpt::Frontier lam = toy_frontier(grid, {0.1, 0.2, 0.3});
        lam.mode = dpt::SweepMode::Lambda;
        for (std::size_t i = 0; i < lam.points.size(); ++i) {
            lam.points[i].lambda = 0.1 * static_cast<double>(i);
        }
        CHECK_THROWS_AS(dpt::compare_frontiers({a, lam}), dpt::ComparisonError);
    }
    SUBCASE("the comparison report serializes") {
        const auto doc = nlohmann::json::parse(dpt::comparison_to_json(rep));
        CHECK(doc["best"].size() == 3);
        CHECK(doc.contains("dominant"));
    }
}

TEST_CASE("frontier exports round-trip") {
    const std::vector<int> grid = {5, 9};
    dpt::Frontier fr = toy_frontier(grid, {0.4, 0.3});
    fr.points[0].fold_mse = {0.1, 0.2};
    fr.points[0].mean_cv_mse = 0.15;
    fr.points[0].in_sample_mse = 0.05;
    fr.config_json = "{\n  \"k_folds\": 4\n}\n";

    SUBCASE("csv header and shape") {
        const std::string csv = dpt::frontier_to_csv(fr);
        CHECK(csv.rfind("n_stocks,lambda,epsilon_m,epsilon_p\n", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
        CHECK(csv.find("5,0,") != std::string::npos);
    }
    SUBCASE("json round trip preserves every point") {
        const std::string text = dpt::frontier_to_json(fr);
        const dpt::Frontier back = dpt::frontier_from_json(text);
        REQUIRE(back.points.size() == fr.points.size());
        CHECK(back.mode == fr.mode);
        for (std::size_t i = 0; i < fr.points.size(); ++i) {
            CHECK(back.points[i].n_stocks == fr.points[i].n_stocks);
            CHECK(back.points[i].epsilon_p == fr.points[i].epsilon_p);
            CHECK(back.points[i].epsilon_m == fr.points[i].epsilon_m);
            CHECK(back.points[i].tickers == fr.points[i].tickers);
            CHECK(back.points[i].fold_mse == fr.points[i].fold_mse);
        }
        CHECK(dpt::frontier_to_json(back) == text);
    }
    SUBCASE("garbage json is rejected with typed errors") {
        CHECK_THROWS_AS(dpt::frontier_from_json("{oops"), dpt::ParseError);
        CHECK_THROWS_AS(dpt::frontier_from_json(R"({"mode":"diagonal","points":[]})"),
                        dpt::SchemaError);
    }
}

TEST_CASE("tracking csv pairs dates with target and tracker") {
    Eigen::VectorXd target(2), tracker(2);
    target << 0.01, -0.02;
    tracker << 0.011, -0.019;
    const std::string csv =
        dpt::tracking_to_csv({"2020-01-03", "2020-01-10"}, target, tracker);
    CHECK(csv.rfind("date,target,tracker\n", 0) == 0);
    CHECK(csv.find("2020-01-10,-0.02,-0.019") != std::string::npos);

    CHECK_THROWS_AS(dpt::tracking_to_csv({"2020-01-03"}, target, tracker),
                    dpt::ShapeError);
}

TEST_CASE("pipeline config serializes its resolved settings") {
    dpt::PipelineConfig cfg;
    cfg.market_train.seed = 123;
    const auto doc = nlohmann::json::parse(cfg.to_json());
    CHECK(doc["market"]["seed"] == 123);
    CHECK(doc["k_folds"] == 4);
    CHECK(doc["n_communal"] == 10);
    CHECK(doc["portfolio"].contains("solver"));
}
