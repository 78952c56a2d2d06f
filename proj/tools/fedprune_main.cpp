#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

#include "fedprune/errors.hpp"
#include "fedprune/reporting.hpp"

int main(int argc, char** argv) {
    CLI::App app{"fedprune: deterministic federated learning simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string strategy;
    double slow_fraction = 0.0;
    int rounds = 0;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string partition;

    const auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path,
                        "JSON config file, or a manifest.json from a previous run");
        cmd->add_option("--strategy", strategy,
                        "fedavg | fedprune | fedprune_no_clt | small_to_all");
        cmd->add_option("--slow-fraction", slow_fraction,
                        "fraction of slow clients, in [0, 1)");
        cmd->add_option("--rounds", rounds, "number of federated rounds");
        cmd->add_option("--seed", seed, "base seed for the whole run");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--partition", partition, "iid | skewed");
    };

    CLI::App* train =
        app.add_subcommand("train", "run one strategy and log every round");
    CLI::App* compare = app.add_subcommand(
        "compare", "run fedavg, fedprune_no_clt and fedprune on shared seeds");
    CLI::App* sweep = app.add_subcommand(
        "sweep", "run every strategy across slow fractions 0.1 to 0.9");
    add_common(train);
    add_common(compare);
    add_common(sweep);

    CLI11_PARSE(app, argc, argv);

    try {
        CLI::App* sub = app.get_subcommands().front();
        fedprune::RunConfig cfg = config_path.empty()
                                      ? fedprune::default_run_config()
                                      : fedprune::parse_config_file(config_path);
        // Flags override the file; the environment overrides both.
        if (sub->count("--strategy") > 0) {
            cfg.experiment.strategy = fedprune::strategy_from_name(strategy);
        }
        if (sub->count("--slow-fraction") > 0) {
            cfg.experiment.slow_fraction = slow_fraction;
        }
        if (sub->count("--rounds") > 0) cfg.experiment.rounds = rounds;
        if (sub->count("--seed") > 0) cfg.base_seed = seed;
        if (sub->count("--out") > 0) cfg.out_dir = out_dir;
        if (sub->count("--partition") > 0) {
            cfg.data.scheme = fedprune::scheme_from_name(partition);
        }
        if (const char* env = std::getenv(fedprune::kOutDirEnvVar);
            env != nullptr && *env != '\0') {
            cfg.out_dir = env;
        }

        fedprune::run_command(sub->get_name(), cfg);
        std::cout << "wrote " << cfg.out_dir << "/manifest.json\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
