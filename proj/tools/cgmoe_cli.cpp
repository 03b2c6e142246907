// Command-line driver: scene validation, dataset generation, training,
// evaluation, NMSE sweeps and CG-map slice export.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cgmoe/dataset_io.hpp"
#include "cgmoe/error.hpp"
#include "cgmoe/experiments.hpp"
#include "cgmoe/model_io.hpp"
#include "cgmoe/scene_io.hpp"

namespace fs = std::filesystem;
using namespace cgmoe;

namespace {

struct CommonOptions
{
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    int jobs = 1;
};

void add_common(CLI::App *cmd, CommonOptions &o, bool needs_out = true)
{
    cmd->add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "master seed (overrides the config)");
    if (needs_out)
        cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--jobs", o.jobs, "parallel workers")->check(CLI::PositiveNumber);
}

ExperimentConfig load_config(const CommonOptions &o)
{
    ExperimentConfig cfg = load_experiment_config(o.config);
    if (o.seed)
        cfg.master_seed = *o.seed;
    return cfg;
}

fs::path prepare_out(const std::string &dir)
{
    fs::create_directories(dir);
    return fs::path(dir);
}

Dataset training_data(const ExperimentConfig &cfg, const std::string &data_dir)
{
    if (!data_dir.empty())
        return load_dataset((fs::path(data_dir) / "records.csv").string(), (fs::path(data_dir) / "pairs.csv").string());
    DatasetConfig dc = cfg.dataset;
    dc.seed = cfg.master_seed;
    return generate_dataset(cfg.env, dc);
}

TrainedEstimators load_models(const std::string &dir)
{
    const fs::path d(dir);
    TrainedEstimators m;
    m.moe = model_from_json(read_json_file((d / "moe.json").string()));
    m.locb = standalone_expert_from_json(read_json_file((d / "locb.json").string()));
    m.locf = standalone_expert_from_json(read_json_file((d / "locf.json").string()));
    return m;
}

int cmd_scene_validate(const std::string &path)
{
    const nlohmann::json j = read_json_file(path);
    Environment env;
    if (j.contains("walls"))
        env = scene_from_json(j);
    else
        env = experiment_config_from_json(j, fs::path(path).parent_path()).env;
    nlohmann::json summary = {{"valid", true}, {"walls", env.walls.size()}, {"sources", env.sources.size()},
                              {"reference_source", env.reference_source}, {"fingerprint", scene_fingerprint(env)}};
    std::cout << summary.dump() << '\n';
    return 0;
}

int cmd_dataset_generate(const CommonOptions &o)
{
    const ExperimentConfig cfg = load_config(o);
    DatasetConfig dc = cfg.dataset;
    dc.seed = cfg.master_seed;
    const Dataset ds = generate_dataset(cfg.env, dc);
    const fs::path out = prepare_out(o.out);
    save_dataset(ds, (out / "records.csv").string(), (out / "pairs.csv").string());
    write_json_file((out / "dataset_manifest.json").string(),
            {{"schema_version", 1}, {"seed", dc.seed}, {"pair_count", ds.pairs.size()},
             {"terminal_count", ds.records.size()}, {"scene_fingerprint", scene_fingerprint(cfg.env)},
             {"config", experiment_config_to_json(cfg)}});
    return 0;
}

int cmd_train(const CommonOptions &o, const std::string &data_dir)
{
    const ExperimentConfig cfg = load_config(o);
    const Dataset ds = training_data(cfg, data_dir);
    CvConfig cv = cfg.cv;
    cv.seed = derive_seed(cfg.master_seed, {stream::cv_folds});
    const TrainedEstimators m = train_estimators(cfg.env, ds, cv, cfg.train);
    const fs::path out = prepare_out(o.out);
    const std::string fp = scene_fingerprint(cfg.env);
    write_json_file((out / "moe.json").string(), model_to_json(m.moe));
    write_json_file((out / "locb.json").string(), standalone_expert_to_json(m.locb, fp));
    write_json_file((out / "locf.json").string(), standalone_expert_to_json(m.locf, fp));
    std::cout << nlohmann::json{{"sweeps", m.moe.sweeps}, {"converged", m.moe.converged},
                                {"final_objective", m.moe.objective_trace.back()},
                                {"lambda_l", m.moe.hyperparams.locb.ridge}, {"sigma_l", m.moe.hyperparams.locb.width},
                                {"lambda_p", m.moe.hyperparams.locf.ridge}, {"sigma_p", m.moe.hyperparams.locf.width}}
                         .dump()
              << '\n';
    return 0;
}

int cmd_evaluate(const CommonOptions &o, const std::string &models_dir, const std::string &data_dir)
{
    const ExperimentConfig cfg = load_config(o);
    const TrainedEstimators m = load_models(models_dir);
    const Dataset test = data_dir.empty()
            ? generate_dataset(cfg.env, test_set_config(cfg, derive_seed(cfg.master_seed, {stream::test_set})))
            : load_dataset((fs::path(data_dir) / "records.csv").string(), (fs::path(data_dir) / "pairs.csv").string());
    const fs::path out = prepare_out(o.out);
    std::ofstream os(out / "nmse.csv");
    require(static_cast<bool>(os), "io_error", "cannot write nmse.csv");
    os << "estimator,nmse,test_pairs\n";
    for (const auto e : all_estimators)
    {
        const double v = nmse_eval(m, e, test);
        os << to_string(e) << ',' << csv::num(v) << ',' << test.pairs.size() << '\n';
        std::cout << to_string(e) << ' ' << v << '\n';
    }
    return 0;
}

int cmd_sweep(const CommonOptions &o)
{
    const ExperimentConfig cfg = load_config(o);
    const SweepResult res = run_nmse_sweep(cfg, o.jobs);
    const fs::path out = prepare_out(o.out);
    {
        std::ofstream os(out / "runs.csv");
        require(static_cast<bool>(os), "io_error", "cannot write runs.csv");
        write_sweep_runs_csv(os, res);
    }
    {
        std::ofstream os(out / "summary.csv");
        require(static_cast<bool>(os), "io_error", "cannot write summary.csv");
        write_sweep_summary_csv(os, res);
    }
    std::size_t failed = 0;
    for (const auto &r : res.rows)
        failed += r.status != "ok";
    write_json_file((out / "manifest.json").string(),
            {{"schema_version", 1}, {"master_seed", cfg.master_seed}, {"scene_fingerprint", scene_fingerprint(cfg.env)},
             {"seed_rule", "cell = derive_seed(master, {pair_count, realization}); "
                           "train/test/cv = derive_seed(cell, {10/11/12})"},
             {"cells", res.rows.size()}, {"failed_cells", failed}, {"files", {"runs.csv", "summary.csv"}},
             {"config", experiment_config_to_json(cfg)}});
    return 0;
}

int cmd_map_slices(const CommonOptions &o, const std::string &models_dir)
{
    const ExperimentConfig cfg = load_config(o);
    TrainedEstimators m;
    if (models_dir.empty())
    {
        const Dataset ds = training_data(cfg, "");
        CvConfig cv = cfg.cv;
        cv.seed = derive_seed(cfg.master_seed, {stream::cv_folds});
        m = train_estimators(cfg.env, ds, cv, cfg.train);
    } else
        m = load_models(models_dir);
    const auto files = export_map_slices(cfg, m, prepare_out(o.out), cfg.master_seed);
    std::cout << nlohmann::json{{"files", files}}.dump() << '\n';
    return 0;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Channel-gain cartography with a mixture of location-based and location-free kernel experts"};
    app.require_subcommand(1);

    CommonOptions common;
    std::string scene_path, models_dir, data_dir;

    auto *scene = app.add_subcommand("scene", "scene file utilities");
    scene->require_subcommand(1);
    auto *scene_validate = scene->add_subcommand("validate", "check a scene (or experiment config) file");
    scene_validate->add_option("--config", scene_path, "scene or experiment config (JSON)")
            ->required()
            ->check(CLI::ExistingFile);

    auto *dataset = app.add_subcommand("dataset", "dataset utilities");
    dataset->require_subcommand(1);
    auto *dataset_generate = dataset->add_subcommand("generate", "simulate a training dataset");
    add_common(dataset_generate, common);

    auto *train = app.add_subcommand("train", "CV hyperparameter search and training of all estimators");
    add_common(train, common);
    train->add_option("--data", data_dir, "directory with records.csv and pairs.csv (default: simulate)");

    auto *evaluate = app.add_subcommand("evaluate", "test NMSE of trained estimators");
    add_common(evaluate, common);
    evaluate->add_option("--models", models_dir, "directory written by 'train'")->required();
    evaluate->add_option("--data", data_dir, "test dataset directory (default: simulate)");

    auto *sweep = app.add_subcommand("sweep", "Monte-Carlo NMSE sweep over training-set sizes");
    add_common(sweep, common);

    auto *slices = app.add_subcommand("map-slices", "export CG-map slices for plotting");
    add_common(slices, common);
    slices->add_option("--models", models_dir, "directory written by 'train' (default: train now)");

    try
    {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e)
    {
        return app.exit(e);
    }

    try
    {
        if (scene_validate->parsed())
            return cmd_scene_validate(scene_path);
        if (dataset_generate->parsed())
            return cmd_dataset_generate(common);
        if (train->parsed())
            return cmd_train(common, data_dir);
        if (evaluate->parsed())
            return cmd_evaluate(common, models_dir, data_dir);
        if (sweep->parsed())
            return cmd_sweep(common);
        if (slices->parsed())
            return cmd_map_slices(common, models_dir);
    } catch (const Error &e)
    {
        std::cerr << nlohmann::json{{"error", {{"code", e.code()}, {"message", e.what()}}}}.dump() << '\n';
        return 1;
    } catch (const std::exception &e)
    {
        std::cerr << nlohmann::json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << '\n';
        return 1;
    }
    return 1;
}
