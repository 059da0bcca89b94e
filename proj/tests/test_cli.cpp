#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dpt/data_ingest.hpp"
#include "dpt/neural_core.hpp"

#include <json.hpp>
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

struct RunResult {
    int exit_code = -1;
    std::string output; // stdout + stderr interleaved
};

RunResult run_cli(const std::string& args) {
    const std::string cmd = std::string(DEEPPF_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult res;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) {
        res.output.append(buf, n);
    }
    const int status = pclose(pipe);
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

fs::path scratch() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "dpt_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// the JSON echo is the last thing printed; training chatter never precedes it
nlohmann::json parse_echo(const std::string& text) {
    const auto pos = text.find('{');
    REQUIRE(pos != std::string::npos);
    return nlohmann::json::parse(text.substr(pos));
}

const std::string& panel_csv() {
    static const std::string path = [] {
        const std::string p = (scratch() / "panel.csv").string();
        const auto r = run_cli("synth --assets 14 --periods 70 --latent 3 --seed 5 -o " + p);
        REQUIRE(r.exit_code == 0);
        return p;
    }();
    return path;
}

std::string pipeline_flags(const std::string& out_dir) {
    // panel rows are weekly from 2012-01-06; row 50 of 70 is 2012-12-21
    return "-i " + panel_csv() +
           " --calib-begin 2012-01-06 --calib-end 2012-12-21"
           " --valid-begin 2012-12-21 --epochs 12 --market-epochs 12"
           " --batch 16 --market-batch 16 --k-folds 3 --n-communal 4"
           " --seed 9 -o " + out_dir;
}

} // namespace

TEST_CASE("synth is seeded and echoes its resolved config") {
    const auto out = (scratch() / "synth_a.csv").string();
    const auto r = run_cli("synth --assets 6 --periods 30 --latent 2 --seed 77 -o " + out);
    REQUIRE(r.exit_code == 0);

    const auto echo = parse_echo(r.output);
    CHECK(echo["command"] == "synth");
    CHECK(echo["config"]["seed"] == 77);
    CHECK(echo["config"]["assets"] == 6);

    const auto m = dpt::load_returns_csv(out, dpt::CsvLayout::Wide);
    CHECK(m.rows() == 30);
    CHECK(m.cols() == 6);

    SUBCASE("the same invocation reproduces the file byte for byte") {
        const std::string first = slurp(out);
        const auto again = run_cli(
            "synth --assets 6 --periods 30 --latent 2 --seed 77 -o " + out);
        REQUIRE(again.exit_code == 0);
        CHECK(slurp(out) == first);
    }
    SUBCASE("another seed changes the data") {
        const auto out2 = (scratch() / "synth_b.csv").string();
        const auto r2 = run_cli(
            "synth --assets 6 --periods 30 --latent 2 --seed 78 -o " + out2);
        REQUIRE(r2.exit_code == 0);
        CHECK(slurp(out2) != slurp(out));
    }
}

TEST_CASE("config file keys are overridden by explicit flags") {
    const auto cfg_path = (scratch() / "synth.json").string();
    {
        std::ofstream out(cfg_path);
        out << R"({"assets": 5, "periods": 25, "latent": 2, "seed": 1,)"
            << R"( "out": ")" << (scratch() / "from_config.csv").string() << R"("})";
    }
    const auto r = run_cli("synth --config " + cfg_path + " --seed 42");
    REQUIRE(r.exit_code == 0);
    const auto echo = parse_echo(r.output);
    CHECK(echo["config"]["assets"] == 5);  // from the file
    CHECK(echo["config"]["seed"] == 42);   // flag wins
    CHECK(fs::exists(scratch() / "from_config.csv"));

    SUBCASE("a malformed config file is a usage error") {
        const auto bad = (scratch() / "bad.json").string();
        {
            std::ofstream out(bad);
            out << "{nope";
        }
        CHECK(run_cli("synth --config " + bad + " -o x.csv").exit_code == 1);
    }
}

TEST_CASE("ingest validates and canonicalizes") {
    const auto out = (scratch() / "ingested.csv").string();
    const auto r = run_cli("ingest -i " + panel_csv() + " -o " + out);
    REQUIRE(r.exit_code == 0);
    const auto echo = parse_echo(r.output);
    CHECK(echo["summary"]["assets"] == 14);
    CHECK(echo["summary"]["periods"] == 70);

    SUBCASE("a missing input file exits 2") {
        CHECK(run_cli("ingest -i /nonexistent/x.csv -o " + out).exit_code == 2);
    }
    SUBCASE("an unknown layout exits 1") {
        CHECK(run_cli("ingest -i " + panel_csv() + " --layout diagonal -o " + out)
                  .exit_code == 1);
    }
    SUBCASE("missing -o exits 1") {
        CHECK(run_cli("ingest -i " + panel_csv()).exit_code == 1);
    }
}

TEST_CASE("encode trains the market map and ranks the universe") {
    const auto dir = (scratch() / "encode_out").string();
    const auto r = run_cli("encode -i " + panel_csv() +
                           " --hidden 4 --epochs 15 --batch 16 --seed 3 -o " + dir);
    REQUIRE(r.exit_code == 0);

    const std::string ranking = slurp(fs::path(dir) / "ranking.csv");
    CHECK(ranking.rfind("rank,ticker,reconstruction_error\n", 0) == 0);
    CHECK(std::count(ranking.begin(), ranking.end(), '\n') == 15); // header + 14

    const dpt::Network net =
        dpt::load_network((fs::path(dir) / "market_map.json").string());
    CHECK(net.input_size() == 14);
    CHECK(net.layers[0].weights.rows() == 4);

    const auto cfg = nlohmann::json::parse(slurp(fs::path(dir) / "resolved_config.json"));
    CHECK(cfg["hidden"] == 4);
    CHECK(cfg["seed"] == 3);
}

TEST_CASE("calibrate writes tracking series for both windows") {
    const auto dir = (scratch() / "cal_out").string();
    const auto r = run_cli("calibrate " + pipeline_flags(dir) + " --stocks 8");
    REQUIRE(r.exit_code == 0);

    const auto cal = nlohmann::json::parse(slurp(fs::path(dir) / "calibration.json"));
    CHECK(cal["tickers"].size() == 8);
    CHECK(cal["fold_mse"].size() == 3);
    CHECK(cal.contains("epsilon_p"));

    // calibration window: rows [0, 50); validation: rows [50, 70)
    const std::string calib_track = slurp(fs::path(dir) / "tracking_calibration.csv");
    const std::string valid_track = slurp(fs::path(dir) / "tracking_validation.csv");
    CHECK(std::count(calib_track.begin(), calib_track.end(), '\n') == 51);
    CHECK(std::count(valid_track.begin(), valid_track.end(), '\n') == 21);
    CHECK(valid_track.rfind("date,target,tracker\n", 0) == 0);
}

TEST_CASE("amended targets never track below the floor") {
    const auto dir = (scratch() / "cal_amend").string();
    const auto r = run_cli("calibrate " + pipeline_flags(dir) +
                           " --stocks 8 --amend-target --amend-floor -0.001"
                           " --amend-replacement 0.002");
    REQUIRE(r.exit_code == 0);

    // with such a tight floor, most of the target column is the replacement
    const std::string track = slurp(fs::path(dir) / "tracking_calibration.csv");
    std::istringstream lines(track);
    std::string line;
    std::getline(lines, line); // header
    bool saw_replacement = false;
    while (std::getline(lines, line)) {
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        const double target = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        CHECK(target >= -0.001);
        if (target == 0.002) saw_replacement = true;
    }
    CHECK(saw_replacement);
}

TEST_CASE("frontier sweeps, exports, and reruns identically") {
    const auto dir = (scratch() / "frontier_out").string();
    const auto r = run_cli("frontier " + pipeline_flags(dir) + " --grid 6,10,14");
    REQUIRE(r.exit_code == 0);

    const std::string csv = slurp(fs::path(dir) / "frontier.csv");
    CHECK(csv.rfind("n_stocks,lambda,epsilon_m,epsilon_p\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

    const auto doc = nlohmann::json::parse(slurp(fs::path(dir) / "frontier.json"));
    REQUIRE(doc["points"].size() == 3);
    CHECK(doc["points"][0]["n_stocks"] == 6);
    CHECK(doc["config"]["grid"] == nlohmann::json::array({6, 10, 14}));

    CHECK(fs::exists(fs::path(dir) / "tracking_validation_n10.csv"));
    CHECK(fs::exists(fs::path(dir) / "tracking_calibration_n14.csv"));

    SUBCASE("epsilon_p can be recomputed from the exported tracking series") {
        std::istringstream rows(slurp(fs::path(dir) / "tracking_validation_n10.csv"));
        std::string line;
        std::getline(rows, line); // header
        double sum = 0.0;
        int n = 0;
        while (std::getline(rows, line)) {
            const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
            const double target = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
            const double tracker = std::stod(line.substr(c2 + 1));
            sum += (target - tracker) * (target - tracker);
            ++n;
        }
        REQUIRE(n > 0);
        const double reported = doc["points"][1]["epsilon_p"].get<double>();
        CHECK(std::abs(sum / n - reported) <= 1e-12);
    }
    SUBCASE("a rerun of the same command is byte-identical") {
        const std::string json_before = slurp(fs::path(dir) / "frontier.json");
        const std::string csv_before = csv;
        const auto again = run_cli("frontier " + pipeline_flags(dir) + " --grid 6,10,14");
        REQUIRE(again.exit_code == 0);
        CHECK(slurp(fs::path(dir) / "frontier.json") == json_before);
        CHECK(slurp(fs::path(dir) / "frontier.csv") == csv_before);
    }
    SUBCASE("jobs > 1 produces the same artifacts") {
        const std::string json_before = slurp(fs::path(dir) / "frontier.json");
        const auto par = run_cli("frontier " + pipeline_flags(dir) +
                                 " --grid 6,10,14 --jobs 3");
        REQUIRE(par.exit_code == 0);
        // the resolved config echoes the jobs flag, which differs by design;
        // the frontier measurements themselves must not
        const auto a = nlohmann::json::parse(json_before);
        const auto b = nlohmann::json::parse(slurp(fs::path(dir) / "frontier.json"));
        CHECK(a["points"] == b["points"]);
    }
    SUBCASE("both sweep flags at once exit 1") {
        CHECK(run_cli("frontier " + pipeline_flags(dir) +
                      " --grid 6,10 --lambda-grid 0,0.1")
                  .exit_code == 1);
    }
    SUBCASE("neither sweep flag exits 1") {
        CHECK(run_cli("frontier " + pipeline_flags(dir)).exit_code == 1);
    }
    SUBCASE("a divergent learning rate exits 3") {
        CHECK(run_cli("frontier " + pipeline_flags(dir) +
                      " --grid 6,10 --learning-rate 1e14")
                  .exit_code == 3);
    }
    SUBCASE("lambda sweep mode") {
        const auto ldir = (scratch() / "frontier_lambda").string();
        const auto lr = run_cli("frontier " + pipeline_flags(ldir) +
                                " --lambda-grid 0,0.001 --stocks 8");
        REQUIRE(lr.exit_code == 0);
        const auto ldoc = nlohmann::json::parse(slurp(fs::path(ldir) / "frontier.json"));
        CHECK(ldoc["mode"] == "lambda");
        CHECK(ldoc["points"].size() == 2);
        CHECK(fs::exists(fs::path(ldir) / "tracking_validation_i1.csv"));
    }
}

TEST_CASE("baseline moments and bl agree with the panel") {
    const auto r = run_cli("baseline moments -i " + panel_csv());
    REQUIRE(r.exit_code == 0);
    const auto doc = parse_echo(r.output);
    CHECK(doc["mean"].size() == 14);
    CHECK(doc["covariance"].size() == 14);

    SUBCASE("bl at lambda 0 returns the sample mean") {
        const auto rb = run_cli("baseline bl -i " + panel_csv() + " --lambda 0");
        REQUIRE(rb.exit_code == 0);
        const auto bdoc = parse_echo(rb.output);
        CHECK(bdoc["mean"] == bdoc["sample_mean"]);
    }
    SUBCASE("a singular covariance exits 4") {
        // duplicate one asset so the covariance cannot be inverted
        const auto src = dpt::load_returns_csv(panel_csv(), dpt::CsvLayout::Wide);
        dpt::ReturnsMatrix dup = src;
        dup.values.conservativeResize(Eigen::NoChange, src.cols() + 1);
        dup.values.col(src.cols()) = src.values.col(0);
        dup.tickers.push_back("COPY");
        const auto dup_path = (scratch() / "dup.csv").string();
        dpt::write_returns_csv(dup, dup_path);

        CHECK(run_cli("baseline bl -i " + dup_path + " --lambda 1").exit_code == 4);
    }
    SUBCASE("explicit views from a file") {
        const auto views_path = (scratch() / "views.json").string();
        {
            std::ofstream out(views_path);
            out << R"({"P": [[1,0,0,0,0,0,0,0,0,0,0,0,0,0]], "q": [0.02]})";
        }
        const auto rv = run_cli("baseline bl -i " + panel_csv() + " --lambda 1e9 --views " +
                                views_path);
        REQUIRE(rv.exit_code == 0);
        const auto vdoc = parse_echo(rv.output);
        CHECK(std::abs(vdoc["mean"][0].get<double>() - 0.02) < 1e-4);
    }
}

TEST_CASE("baseline factor exports a descending objective trace") {
    const auto out = (scratch() / "factor.json").string();
    const auto r = run_cli("baseline factor -i " + panel_csv() +
                           " -K 3 --lambda 0.0001 --max-iters 80 --seed 2 -o " + out);
    REQUIRE(r.exit_code == 0);

    const auto doc = nlohmann::json::parse(slurp(out));
    REQUIRE(doc.contains("objective_trace"));
    const auto trace = doc["objective_trace"].get<std::vector<double>>();
    REQUIRE(!trace.empty());
    for (std::size_t i = 1; i < trace.size(); ++i) {
        CHECK(trace[i] <= trace[i - 1] + 1e-10);
    }
    CHECK(doc["W"].size() == 14);
}

TEST_CASE("report compares frontiers and names a winner") {
    const auto dir_a = (scratch() / "rep_a").string();
    const auto dir_b = (scratch() / "rep_b").string();
    REQUIRE(run_cli("frontier " + pipeline_flags(dir_a) + " --grid 6,10").exit_code == 0);
    const auto rb = run_cli("frontier " + pipeline_flags(dir_b) +
                            " --grid 6,10 --hidden 3");
    REQUIRE(rb.exit_code == 0);

    const auto r = run_cli("report -i " + dir_a + "/frontier.json -i " + dir_b +
                           "/frontier.json");
    REQUIRE(r.exit_code == 0);
    const auto doc = parse_echo(r.output);
    REQUIRE(doc["best"].size() == 2);
    for (const auto& b : doc["best"]) {
        CHECK((b == 0 || b == 1));
    }

    SUBCASE("misaligned grids exit 1") {
        const auto dir_c = (scratch() / "rep_c").string();
        REQUIRE(run_cli("frontier " + pipeline_flags(dir_c) + " --grid 6,12").exit_code ==
                0);
        CHECK(run_cli("report -i " + dir_a + "/frontier.json -i " + dir_c +
                      "/frontier.json")
                  .exit_code == 1);
    }
}
