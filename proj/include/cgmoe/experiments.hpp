#pragma once

// Experiment drivers: train the five estimators, score them by NMSE against
// noiseless gains, run Monte-Carlo sweeps over the training-set size and
// export CG-map slices.
//
// Seed splitting: a (pair_count, realization) cell uses
//   cell   = derive_seed(master, {pair_count, realization})
//   train  = derive_seed(cell, {stream::train_set})
//   test   = derive_seed(cell, {stream::test_set})
//   cv     = derive_seed(cell, {stream::cv_folds})
// so any cell can be re-run on its own.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cgmoe/dataset_io.hpp"
#include "cgmoe/error.hpp"
#include "cgmoe/features.hpp"
#include "cgmoe/model_io.hpp"
#include "cgmoe/scene_io.hpp"
#include "cgmoe/trainer.hpp"

namespace cgmoe {

inline constexpr int experiment_schema_version = 1;

enum class Estimator
{
    locf,
    locb,
    moe,
    moe_locb,
    moe_locf
};

inline constexpr std::array<Estimator, 5> all_estimators{Estimator::locf, Estimator::locb, Estimator::moe,
                                                         Estimator::moe_locb, Estimator::moe_locf};

inline const char* to_string(Estimator e)
{
    switch (e)
    {
    case Estimator::locf: return "locf";
    case Estimator::locb: return "locb";
    case Estimator::moe: return "moe";
    case Estimator::moe_locb: return "moe_locb";
    case Estimator::moe_locf: return "moe_locf";
    }
    return "?";
}

struct ExperimentConfig
{
    std::string scene_path;
    Environment env;
    DatasetConfig dataset;
    std::size_t test_pair_count = 1000;
    CvConfig cv;
    TrainOptions train;
    std::vector<std::size_t> sweep_pair_counts{2000};
    std::size_t monte_carlo = 1;
    std::vector<Point2> slice_transmitters;
    int grid_resolution = 40;
    std::uint64_t master_seed = 0;

    void validate() const
    {
        env.validate();
        dataset.validate();
        cv.validate();
        require(test_pair_count >= 2, "invalid_config", "test_pair_count must be at least 2");
        require(monte_carlo >= 1, "invalid_config", "monte_carlo must be at least 1");
        require(grid_resolution >= 2, "invalid_config", "grid resolution must be at least 2");
        require(!sweep_pair_counts.empty(), "invalid_config", "sweep pair_counts is empty");
        for (const auto n : sweep_pair_counts)
            require(n >= 1, "invalid_config", "sweep pair counts must be positive");
    }
};

namespace detail {

template <typename T>
void read_if(const nlohmann::json &j, const char *key, T &dst)
{
    if (j.contains(key) && !j[key].is_null())
        dst = j[key].get<T>();
}

} // namespace detail

/// Parses an experiment config. Relative scene paths resolve against `base_dir`.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json &j, const std::filesystem::path &base_dir)
{
    ExperimentConfig cfg;
    try
    {
        const int version = j.value("schema_version", experiment_schema_version);
        require(version == experiment_schema_version, "invalid_config", "unsupported config schema_version");
        if (j.contains("scene") && j["scene"].is_object())
        {
            cfg.env = scene_from_json(j["scene"]);
            cfg.scene_path = "<inline>";
        } else
        {
            std::filesystem::path p = j.at("scene").get<std::string>();
            if (p.is_relative())
                p = base_dir / p;
            cfg.scene_path = p.string();
            cfg.env = load_scene(cfg.scene_path);
        }
        if (j.contains("dataset"))
        {
            const auto &d = j["dataset"];
            detail::read_if(d, "pair_count", cfg.dataset.pair_count);
            detail::read_if(d, "terminal_count", cfg.dataset.terminal_count);
            detail::read_if(d, "sigma_x", cfg.dataset.sigma_x);
            detail::read_if(d, "sigma_e", cfg.dataset.sigma_e);
            detail::read_if(d, "sigma_c", cfg.dataset.sigma_c);
            detail::read_if(d, "lag_step", cfg.dataset.lag_step);
        }
        detail::read_if(j, "test_pair_count", cfg.test_pair_count);
        if (j.contains("cv"))
        {
            const auto &c = j["cv"];
            detail::read_if(c, "fold_count", cfg.cv.fold_count);
            detail::read_if(c, "lambda_grid", cfg.cv.lambda_grid);
            detail::read_if(c, "sigma_factors", cfg.cv.sigma_factors);
            detail::read_if(c, "sigma_grid", cfg.cv.sigma_grid);
        }
        if (j.contains("train"))
        {
            const auto &t = j["train"];
            detail::read_if(t, "max_sweeps", cfg.train.max_sweeps);
            detail::read_if(t, "tolerance", cfg.train.tolerance);
            detail::read_if(t, "knn_k", cfg.train.knn_k);
            detail::read_if(t, "qp_max_iterations", cfg.train.qp.max_iterations);
            detail::read_if(t, "qp_tolerance", cfg.train.qp.tolerance);
        }
        if (j.contains("sweep"))
        {
            const auto &s = j["sweep"];
            detail::read_if(s, "pair_counts", cfg.sweep_pair_counts);
            detail::read_if(s, "monte_carlo", cfg.monte_carlo);
        }
        if (j.contains("slices"))
        {
            const auto &s = j["slices"];
            if (s.contains("transmitters"))
                for (const auto &p : s["transmitters"])
                    cfg.slice_transmitters.push_back(detail::point_from_json(p));
            detail::read_if(s, "resolution", cfg.grid_resolution);
        }
        detail::read_if(j, "seed", cfg.master_seed);
    } catch (const nlohmann::json::exception &e)
    {
        throw Error("invalid_config", std::string("malformed experiment config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string &path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), "io_error", "cannot open config " + path);
    nlohmann::json j;
    try
    {
        in >> j;
    } catch (const nlohmann::json::exception &e)
    {
        throw Error("invalid_config", path + ": " + e.what());
    }
    return experiment_config_from_json(j, std::filesystem::path(path).parent_path());
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig &cfg)
{
    nlohmann::json t = nlohmann::json::array();
    for (const auto &p : cfg.slice_transmitters)
        t.push_back({p.x, p.y});
    return {{"schema_version", experiment_schema_version},
            {"scene", cfg.scene_path},
            {"dataset", {{"pair_count", cfg.dataset.pair_count}, {"terminal_count", cfg.dataset.terminal_count},
                         {"sigma_x", cfg.dataset.sigma_x}, {"sigma_e", cfg.dataset.sigma_e},
                         {"sigma_c", cfg.dataset.sigma_c}, {"lag_step", cfg.dataset.lag_step}}},
            {"test_pair_count", cfg.test_pair_count},
            {"cv", {{"fold_count", cfg.cv.fold_count}, {"lambda_grid", cfg.cv.lambda_grid},
                    {"sigma_factors", cfg.cv.sigma_factors}, {"sigma_grid", cfg.cv.sigma_grid}}},
            {"train", {{"max_sweeps", cfg.train.max_sweeps}, {"tolerance", cfg.train.tolerance},
                       {"knn_k", cfg.train.knn_k}, {"qp_max_iterations", cfg.train.qp.max_iterations},
                       {"qp_tolerance", cfg.train.qp.tolerance}}},
            {"sweep", {{"pair_counts", cfg.sweep_pair_counts}, {"monte_carlo", cfg.monte_carlo}}},
            {"slices", {{"transmitters", t}, {"resolution", cfg.grid_resolution}}},
            {"seed", cfg.master_seed}};
}

// ---------------------------------------------------------------------------

struct TrainedEstimators
{
    KernelExpert locf;
    KernelExpert locb;
    MoEModel moe;
};

/// Hyperparameters by CV per expert, then both standalone experts and the mixture.
inline TrainedEstimators train_estimators(const Environment &env, const Dataset &train, const CvConfig &cv,
        const TrainOptions &opt)
{
    TrainedEstimators out;
    MoEHyperparams hp;
    hp.locf = cv_grid_search(train.records, train.pairs, ExpertKind::locf, cv);
    hp.locb = cv_grid_search(train.records, train.pairs, ExpertKind::locb, cv);
    out.locf = train_standalone_expert(train.records, train.pairs, ExpertKind::locf, hp.locf);
    out.locb = train_standalone_expert(train.records, train.pairs, ExpertKind::locb, hp.locb);
    out.moe = train_moe(train.records, train.pairs, hp, opt);
    out.moe.environment_fingerprint = scene_fingerprint(env);
    return out;
}

inline double predict_estimator(const TrainedEstimators &m, Estimator e, const SensorRecord &t, const SensorRecord &r)
{
    switch (e)
    {
    case Estimator::locf: return predict_expert(m.locf, t, r);
    case Estimator::locb: return predict_expert(m.locb, t, r);
    case Estimator::moe: return predict_cg(m.moe, t, r);
    case Estimator::moe_locb: return predict_expert(m.moe.locb, t, r);
    case Estimator::moe_locf: return predict_expert(m.moe.locf, t, r);
    }
    throw Error("invalid_argument", "unknown estimator");
}

/// Mean squared error over the population variance (1/N) of the true gains.
inline double nmse(std::span<const double> predicted, std::span<const double> truth)
{
    require(predicted.size() == truth.size() && !truth.empty(), "dimension_mismatch", "NMSE inputs differ in size");
    const double n = static_cast<double>(truth.size());
    double mean = 0.0;
    for (const double v : truth)
        mean += v;
    mean /= n;
    double var = 0.0, mse = 0.0;
    for (std::size_t i = 0; i < truth.size(); i++)
    {
        var += (truth[i] - mean) * (truth[i] - mean);
        mse += (predicted[i] - truth[i]) * (predicted[i] - truth[i]);
    }
    var /= n;
    mse /= n;
    require(var > 0.0, "zero_variance", "test set has zero CG variance");
    return mse / var;
}

/// NMSE of `predict` over the test pairs, scored against their noiseless gains.
inline double nmse_eval(const std::function<double(const SensorRecord &, const SensorRecord &)> &predict,
        const Dataset &test)
{
    std::vector<double> pred, truth;
    pred.reserve(test.pairs.size());
    truth.reserve(test.pairs.size());
    for (const auto &p : test.pairs)
    {
        pred.push_back(predict(test.records[p.tx], test.records[p.rx]));
        truth.push_back(p.true_gain);
    }
    return nmse(pred, truth);
}

inline double nmse_eval(const TrainedEstimators &m, Estimator e, const Dataset &test)
{
    return nmse_eval([&](const SensorRecord &t, const SensorRecord &r) { return predict_estimator(m, e, t, r); }, test);
}

inline DatasetConfig test_set_config(const ExperimentConfig &cfg, std::uint64_t seed)
{
    DatasetConfig d = cfg.dataset;
    d.pair_count = cfg.test_pair_count;
    d.terminal_count = 0;
    d.seed = seed;
    return d;
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepRow
{
    std::size_t pair_count = 0;
    std::size_t realization = 0;
    std::uint64_t seed = 0;
    std::string status = "ok";
    std::array<double, 5> nmse{};
    double truth_mean_db = 0.0;
    double truth_var_db2 = 0.0;
    MoEHyperparams hyperparams;
    int sweeps = 0;
};

struct SweepResult
{
    std::vector<SweepRow> rows;  // ordered by (pair_count index, realization)
};

inline std::uint64_t cell_seed(std::uint64_t master, std::size_t pair_count, std::size_t realization)
{
    return derive_seed(master, {pair_count, realization});
}

inline SweepRow run_sweep_cell(const ExperimentConfig &cfg, std::size_t pair_count, std::size_t realization)
{
    SweepRow row;
    row.pair_count = pair_count;
    row.realization = realization;
    row.seed = cell_seed(cfg.master_seed, pair_count, realization);
    row.nmse.fill(std::nan(""));
    try
    {
        DatasetConfig dc = cfg.dataset;
        dc.pair_count = pair_count;
        dc.seed = derive_seed(row.seed, {stream::train_set});
        const Dataset train = generate_dataset(cfg.env, dc);
        const Dataset test = generate_dataset(cfg.env, test_set_config(cfg, derive_seed(row.seed, {stream::test_set})));
        CvConfig cv = cfg.cv;
        cv.seed = derive_seed(row.seed, {stream::cv_folds});
        const TrainedEstimators m = train_estimators(cfg.env, train, cv, cfg.train);
        row.hyperparams = m.moe.hyperparams;
        row.sweeps = m.moe.sweeps;
        for (std::size_t k = 0; k < all_estimators.size(); k++)
            row.nmse[k] = nmse_eval(m, all_estimators[k], test);
        double mean = 0.0;
        for (const auto &p : test.pairs)
            mean += p.true_gain;
        mean /= static_cast<double>(test.pairs.size());
        double var = 0.0;
        for (const auto &p : test.pairs)
            var += (p.true_gain - mean) * (p.true_gain - mean);
        row.truth_mean_db = mean;
        row.truth_var_db2 = var / static_cast<double>(test.pairs.size());
    } catch (const Error &e)
    {
        row.status = e.code();
    }
    return row;
}

/// Runs every (pair_count, realization) cell; `jobs` cells at a time.
/// Output order and content do not depend on `jobs`.
inline SweepResult run_nmse_sweep(const ExperimentConfig &cfg, int jobs = 1)
{
    cfg.validate();
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (const auto n : cfg.sweep_pair_counts)
        for (std::size_t r = 0; r < cfg.monte_carlo; r++)
            cells.emplace_back(n, r);
    SweepResult res;
    res.rows.resize(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++)
            res.rows[i] = run_sweep_cell(cfg, cells[i].first, cells[i].second);
    };
    const int threads = std::clamp(jobs, 1, static_cast<int>(std::max<std::size_t>(1, cells.size())));
    if (threads == 1)
        worker();
    else
    {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; t++)
            pool.emplace_back(worker);
        for (auto &t : pool)
            t.join();
    }
    return res;
}

inline void write_sweep_runs_csv(std::ostream &os, const SweepResult &res)
{
    os << "pair_count,realization,seed,status";
    for (const auto e : all_estimators)
        os << ",nmse_" << to_string(e);
    os << ",truth_mean_db,truth_var_db2,lambda_l,sigma_l,lambda_p,sigma_p,bcm_sweeps\n";
    for (const auto &r : res.rows)
    {
        os << r.pair_count << ',' << r.realization << ',' << r.seed << ',' << r.status;
        for (const double v : r.nmse)
            os << ',' << csv::num(v);
        os << ',' << csv::num(r.truth_mean_db) << ',' << csv::num(r.truth_var_db2) << ','
           << csv::num(r.hyperparams.locb.ridge) << ',' << csv::num(r.hyperparams.locb.width) << ','
           << csv::num(r.hyperparams.locf.ridge) << ',' << csv::num(r.hyperparams.locf.width) << ',' << r.sweeps
           << '\n';
    }
}

struct SweepSummaryRow
{
    std::size_t pair_count = 0;
    std::size_t ok_runs = 0;
    std::array<double, 5> mean{};
    std::array<double, 5> stddev{};
    double truth_mean_db = 0.0;
    double truth_var_db2 = 0.0;
};

/// Mean and sample standard deviation per pair count over the successful runs.
inline std::vector<SweepSummaryRow> summarize_sweep(const SweepResult &res)
{
    std::vector<SweepSummaryRow> out;
    for (const auto &r : res.rows)
    {
        if (out.empty() || out.back().pair_count != r.pair_count)
        {
            out.emplace_back();
            out.back().pair_count = r.pair_count;
        }
    }
    for (auto &s : out)
    {
        std::vector<const SweepRow *> ok;
        for (const auto &r : res.rows)
            if (r.pair_count == s.pair_count && r.status == "ok")
                ok.push_back(&r);
        s.ok_runs = ok.size();
        const double n = static_cast<double>(ok.size());
        for (std::size_t k = 0; k < 5; k++)
        {
            double mean = 0.0;
            for (const auto *r : ok)
                mean += r->nmse[k];
            mean = ok.empty() ? std::nan("") : mean / n;
            double var = 0.0;
            for (const auto *r : ok)
                var += (r->nmse[k] - mean) * (r->nmse[k] - mean);
            s.mean[k] = mean;
            s.stddev[k] = ok.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
        }
        for (const auto *r : ok)
        {
            s.truth_mean_db += r->truth_mean_db / n;
            s.truth_var_db2 += r->truth_var_db2 / n;
        }
    }
    return out;
}

inline void write_sweep_summary_csv(std::ostream &os, const SweepResult &res)
{
    os << "pair_count,ok_runs";
    for (const auto e : all_estimators)
        os << ",mean_" << to_string(e) << ",std_" << to_string(e);
    os << ",truth_mean_db,truth_var_db2\n";
    for (const auto &s : summarize_sweep(res))
    {
        os << s.pair_count << ',' << s.ok_runs;
        for (std::size_t k = 0; k < 5; k++)
            os << ',' << csv::num(s.mean[k]) << ',' << csv::num(s.stddev[k]);
        os << ',' << csv::num(s.truth_mean_db) << ',' << csv::num(s.truth_var_db2) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Map slices

inline constexpr std::array<const char *, 6> slice_surfaces{"truth", "locf", "locb", "moe", "moe_locb", "moe_locf"};

/// Pixel-center receiver grid, row-major from (x_min, y_min).
inline std::vector<Point2> slice_grid(const Rect &region, int resolution)
{
    std::vector<Point2> out;
    out.reserve(static_cast<std::size_t>(resolution) * resolution);
    for (int iy = 0; iy < resolution; iy++)
        for (int ix = 0; ix < resolution; ix++)
            out.push_back({region.min.x + (ix + 0.5) * region.width() / resolution,
                           region.min.y + (iy + 0.5) * region.height() / resolution});
    return out;
}

/// Writes slice_<t>_<surface>.csv (columns rx_x,rx_y,cg_db) for every slice
/// transmitter. Receivers are synthetic sensors at the pixel centers; pixels on
/// a wall or at the transmitter itself get an empty value. Returns the paths.
inline std::vector<std::string> export_map_slices(const ExperimentConfig &cfg, const TrainedEstimators &models,
        const std::filesystem::path &out_dir, std::uint64_t seed)
{
    require(cfg.grid_resolution >= 2, "invalid_config", "grid resolution must be at least 2");
    std::filesystem::create_directories(out_dir);
    const auto grid = slice_grid(cfg.env.region, cfg.grid_resolution);
    std::vector<std::string> written;
    for (std::size_t ti = 0; ti < cfg.slice_transmitters.size(); ti++)
    {
        const Point2 tx = cfg.slice_transmitters[ti];
        require(is_valid_terminal_location(cfg.env, tx), "invalid_point",
                "slice transmitter " + std::to_string(ti) + " is outside the region or on a wall");
        Rng tx_rng(derive_seed(seed, {stream::slice_queries, ti, ~std::uint64_t{0}}));
        const SensorRecord tx_rec = make_sensor_record(cfg.env, 0, tx, cfg.dataset.sigma_x, cfg.dataset.sigma_e,
                cfg.dataset.lag_step, tx_rng);

        std::array<std::vector<double>, 6> surf;
        for (auto &s : surf)
            s.assign(grid.size(), std::nan(""));
        for (std::size_t p = 0; p < grid.size(); p++)
        {
            if (!is_valid_terminal_location(cfg.env, grid[p]) || grid[p] == tx)
                continue;
            surf[0][p] = channel_gain_db(cfg.env, tx, grid[p]);
            Rng rx_rng(derive_seed(seed, {stream::slice_queries, ti, p}));
            const SensorRecord rx_rec = make_sensor_record(cfg.env, 1, grid[p], cfg.dataset.sigma_x,
                    cfg.dataset.sigma_e, cfg.dataset.lag_step, rx_rng);
            const std::array<Estimator, 5> order{Estimator::locf, Estimator::locb, Estimator::moe, Estimator::moe_locb,
                                                 Estimator::moe_locf};
            for (std::size_t k = 0; k < order.size(); k++)
            {
                try
                {
                    surf[k + 1][p] = predict_estimator(models, order[k], tx_rec, rx_rec);
                } catch (const Error &)
                {
                    // unestimable pixel stays empty
                }
            }
        }
        for (std::size_t k = 0; k < surf.size(); k++)
        {
            const auto path = out_dir / ("slice_" + std::to_string(ti) + "_" + slice_surfaces[k] + ".csv");
            std::ofstream os(path);
            require(static_cast<bool>(os), "io_error", "cannot write " + path.string());
            os << "rx_x,rx_y,cg_db\n";
            for (std::size_t p = 0; p < grid.size(); p++)
                os << csv::num(grid[p].x) << ',' << csv::num(grid[p].y) << ',' << csv::num(surf[k][p]) << '\n';
            written.push_back(path.string());
        }
    }
    return written;
}

} // namespace cgmoe
