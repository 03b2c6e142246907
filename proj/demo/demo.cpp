// Trains the three estimators on a small simulated dataset and prints their
// test NMSE. Usage: cgmoe_demo <scene.json> [pair_count]

#include <cstdlib>
#include <iostream>

#include "cgmoe/experiments.hpp"

int main(int argc, char **argv)
{
    if (argc < 2)
    {
        std::cerr << "usage: " << argv[0] << " <scene.json> [pair_count]\n";
        return 2;
    }
    try
    {
        const cgmoe::Environment env = cgmoe::load_scene(argv[1]);
        cgmoe::DatasetConfig dc;
        dc.pair_count = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 300;
        dc.seed = 1;
        const cgmoe::Dataset train = cgmoe::generate_dataset(env, dc);
        cgmoe::DatasetConfig tc = dc;
        tc.pair_count = 500;
        tc.seed = 2;
        const cgmoe::Dataset test = cgmoe::generate_dataset(env, tc);

        const auto models = cgmoe::train_estimators(env, train, cgmoe::CvConfig{}, cgmoe::TrainOptions{});
        std::cout << "BCM sweeps: " << models.moe.sweeps << (models.moe.converged ? " (converged)\n" : "\n");
        for (const auto e : cgmoe::all_estimators)
            std::cout << cgmoe::to_string(e) << "\tNMSE " << cgmoe::nmse_eval(models, e, test) << '\n';
    } catch (const cgmoe::Error &e)
    {
        std::cerr << e.code() << ": " << e.what() << '\n';
        return 1;
    }
    return 0;
}
