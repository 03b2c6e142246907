#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "cgmoe/dataset_io.hpp"
#include "cgmoe/experiments.hpp"

using namespace cgmoe;
namespace fs = std::filesystem;

namespace {

const std::string source_dir = CGMOE_SOURCE_DIR;

fs::path scratch(const std::string &name)
{
    const fs::path p = fs::temp_directory_path() / ("cgmoe_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<std::vector<std::string>> read_csv(const fs::path &p)
{
    std::ifstream is(p);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(is, line))
        rows.push_back(csv::split(line));
    return rows;
}

std::pair<int, std::string> run(const std::string &args)
{
    const std::string cmd = std::string(CGMOE_CLI_PATH) + " " + args + " 2>&1";
    FILE *pipe = popen(cmd.c_str(), "r");
    std::string out;
    std::array<char, 4096> buf;
    while (std::fgets(buf.data(), buf.size(), pipe))
        out += buf.data();
    const int status = pclose(pipe);
    return {WEXITSTATUS(status), out};
}

ExperimentConfig smoke_config() { return load_experiment_config(source_dir + "/configs/smoke.json"); }

TrainedEstimators smoke_models(const ExperimentConfig &cfg)
{
    DatasetConfig dc = cfg.dataset;
    dc.seed = 1;
    return train_estimators(cfg.env, generate_dataset(cfg.env, dc), cfg.cv, cfg.train);
}

} // namespace

TEST(Nmse, Examples)
{
    const std::vector<double> truth{-50, -60, -55, -70, -45};
    EXPECT_EQ(nmse(truth, truth), 0.0);
    const std::vector<double> mean(5, -56.0);
    EXPECT_NEAR(nmse(mean, truth), 1.0, 1e-15);
    // Hand arithmetic: var = (36 + 16 + 1 + 196 + 121) / 5 = 74, mse = (1 + 4 + 0 + 9 + 16) / 5 = 6
    const std::vector<double> pred{-49, -62, -55, -67, -49};
    EXPECT_NEAR(nmse(pred, truth), 6.0 / 74.0, 1e-15);
    const std::vector<double> flat(3, -50.0);
    EXPECT_THROW(nmse(flat, flat), Error);
}

TEST(Config, LoadsShippedConfigs)
{
    const auto desk = load_experiment_config(source_dir + "/configs/desk.json");
    EXPECT_EQ(desk.dataset.sigma_x, 7.0);
    EXPECT_EQ(desk.dataset.sigma_e, 0.3);
    EXPECT_EQ(desk.dataset.sigma_c, 2.0);
    EXPECT_EQ(desk.monte_carlo, 30u);
    EXPECT_EQ(desk.env.source_count(), 5u);
    const auto back = experiment_config_from_json(experiment_config_to_json(desk), source_dir + "/configs");
    EXPECT_EQ(experiment_config_to_json(back).dump(), experiment_config_to_json(desk).dump());
}

TEST(Config, RejectsInvalidValues)
{
    auto j = experiment_config_to_json(smoke_config());
    j["sweep"]["monte_carlo"] = 0;
    EXPECT_THROW(experiment_config_from_json(j, source_dir + "/configs"), Error);
    j = experiment_config_to_json(smoke_config());
    j["slices"]["resolution"] = 1;
    EXPECT_THROW(experiment_config_from_json(j, source_dir + "/configs"), Error);
}

TEST(SweepSeeds, CellsAreIndependentlyReproducible)
{
    EXPECT_EQ(cell_seed(7, 100, 3), cell_seed(7, 100, 3));
    EXPECT_NE(cell_seed(7, 100, 3), cell_seed(7, 100, 4));
    EXPECT_NE(cell_seed(7, 100, 3), cell_seed(7, 200, 3));
    EXPECT_NE(cell_seed(7, 100, 3), cell_seed(8, 100, 3));
}

TEST(Sweep, OneRowPerCellAndJobsIndependent)
{
    auto cfg = smoke_config();
    cfg.sweep_pair_counts = {60};
    cfg.monte_carlo = 2;
    const auto a = run_nmse_sweep(cfg, 1);
    const auto b = run_nmse_sweep(cfg, 2);
    ASSERT_EQ(a.rows.size(), 2u);
    std::ostringstream sa, sb;
    write_sweep_runs_csv(sa, a);
    write_sweep_runs_csv(sb, b);
    EXPECT_EQ(sa.str(), sb.str());
    for (const auto &r : a.rows)
    {
        EXPECT_EQ(r.status, "ok");
        for (const double v : r.nmse)
            EXPECT_TRUE(std::isfinite(v) && v >= 0.0);
    }
    const auto summary = summarize_sweep(a);
    ASSERT_EQ(summary.size(), 1u);
    EXPECT_EQ(summary[0].ok_runs, 2u);
    EXPECT_NEAR(summary[0].mean[2], 0.5 * (a.rows[0].nmse[2] + a.rows[1].nmse[2]), 1e-15);
}

TEST(MapSlices, ShapeAndTruthPassthrough)
{
    auto cfg = smoke_config();
    cfg.grid_resolution = 2;
    cfg.slice_transmitters = {{20, 30}};
    const auto models = smoke_models(cfg);
    const auto dir = scratch("slices");
    const auto files = export_map_slices(cfg, models, dir, 3);
    ASSERT_EQ(files.size(), 6u);
    for (const auto &f : files)
    {
        const auto rows = read_csv(f);
        ASSERT_EQ(rows.size(), 5u);
        EXPECT_EQ(rows[0], (std::vector<std::string>{"rx_x", "rx_y", "cg_db"}));
    }
    // Pixels on a wall stay empty; the 2x2 grid of this scene has two.
    const auto truth = read_csv(dir / "slice_0_truth.csv");
    int filled = 0;
    for (std::size_t i = 1; i < truth.size(); i++)
    {
        const Point2 rx{csv::parse(truth[i][0]), csv::parse(truth[i][1])};
        if (!is_valid_terminal_location(cfg.env, rx))
        {
            EXPECT_TRUE(truth[i][2].empty());
            continue;
        }
        EXPECT_EQ(csv::parse(truth[i][2]), channel_gain_db(cfg.env, {20, 30}, rx));
        filled++;
    }
    EXPECT_EQ(filled, 2);
    auto bad = cfg;
    bad.slice_transmitters = {{100, 100}};
    EXPECT_THROW(export_map_slices(bad, models, dir, 3), Error);
}

TEST(MapSlices, OpenSpaceTruthIsRadial)
{
    auto cfg = smoke_config();
    Environment env;
    env.region = {{0, 0}, {40, 40}};
    env.sources = {{1, 1}, {39, 1}, {20, 39}};
    cfg.env = env;
    cfg.grid_resolution = 20;
    cfg.slice_transmitters = {{20, 20}};
    TrainedEstimators models;
    DatasetConfig dc = cfg.dataset;
    dc.seed = 2;
    models = train_estimators(env, generate_dataset(env, dc), cfg.cv, cfg.train);
    const auto dir = scratch("radial");
    export_map_slices(cfg, models, dir, 1);
    const auto rows = read_csv(dir / "slice_0_truth.csv");
    for (std::size_t i = 1; i < rows.size(); i++)
    {
        const Point2 p{csv::parse(rows[i][0]), csv::parse(rows[i][1])};
        if (!is_valid_terminal_location(env, p))
            continue;  // a pilot source sits on this pixel
        // Mirror images through the transmitter share the same distance.
        const Point2 q{40 - p.x, 40 - p.y};
        const Point2 s{p.y, p.x};
        const double g = csv::parse(rows[i][2]);
        EXPECT_NEAR(g, channel_gain_db(env, {20, 20}, q), 1e-9);
        EXPECT_NEAR(g, channel_gain_db(env, {20, 20}, s), 1e-9);
        EXPECT_NEAR(g, env.reference_gain_db - 20 * std::log10(distance(p, {20, 20})), 1e-9);
    }
}

TEST(Cli, ErrorRecordOnFailure)
{
    const auto dir = scratch("cli_err");
    std::ofstream(dir / "bad.json") << R"({"schema_version": 1, "scene": {"region": {"x_min": 0}}})";
    const auto [code, out] = run("train --config " + (dir / "bad.json").string() + " --out " + dir.string());
    EXPECT_NE(code, 0);
    const auto j = nlohmann::json::parse(out);
    ASSERT_TRUE(j.contains("error"));
    EXPECT_TRUE(j["error"].contains("code"));
    EXPECT_TRUE(j["error"].contains("message"));
}

TEST(Cli, TrainEvaluateAndDatasetRoundTrip)
{
    const auto dir = scratch("cli_flow");
    const std::string cfg = source_dir + "/configs/smoke.json";
    auto [c1, o1] = run("dataset generate --config " + cfg + " --out " + (dir / "data").string());
    ASSERT_EQ(c1, 0) << o1;
    EXPECT_TRUE(fs::exists(dir / "data" / "records.csv"));
    auto [c2, o2] = run("train --config " + cfg + " --data " + (dir / "data").string() + " --out " +
            (dir / "models").string());
    ASSERT_EQ(c2, 0) << o2;
    auto [c3, o3] = run("evaluate --config " + cfg + " --models " + (dir / "models").string() + " --out " +
            (dir / "eval").string());
    ASSERT_EQ(c3, 0) << o3;
    const auto rows = read_csv(dir / "eval" / "nmse.csv");
    ASSERT_EQ(rows.size(), 6u);
    for (std::size_t i = 1; i < rows.size(); i++)
        EXPECT_TRUE(std::isfinite(csv::parse(rows[i][1])));
    auto [c4, o4] = run("map-slices --config " + cfg + " --models " + (dir / "models").string() + " --out " +
            (dir / "maps").string());
    ASSERT_EQ(c4, 0) << o4;
    EXPECT_TRUE(fs::exists(dir / "maps" / "slice_0_moe.csv"));
    auto [c5, o5] = run("scene validate --config " + source_dir + "/scenes/office.json");
    EXPECT_EQ(c5, 0);
    EXPECT_TRUE(nlohmann::json::parse(o5)["valid"].get<bool>());
}
