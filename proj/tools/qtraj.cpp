// qtraj command line: evolve | traj | ensemble | hist | compare.

#include "qtraj/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
    using namespace qtraj::cli;
    CLI::App app{"Markovian open quantum systems: master equation, trajectories, decoherent histories"};
    app.set_version_flag("--version", std::string(qtraj::kVersion));
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> engine, backend, out;
    std::optional<long> workers;

    for (const char* name : {"evolve", "traj", "ensemble", "hist", "compare"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON run configuration");
        sub->add_option("--seed", seed, "master seed");
        sub->add_option("--engine", engine, "jumps | jumps-linear | qsd | qsd-linear | ortho");
        sub->add_option("--backend", backend, "exact | split");
        sub->add_option("--out", out, "output path, - for stdout");
        sub->add_option("--workers", workers, "worker threads (default $UNRAVEL_WORKERS or 1)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = load_config(config_path);
        if (!workers) {
            if (const char* env = std::getenv("UNRAVEL_WORKERS")) {
                try {
                    cfg.workers = std::stol(env);
                } catch (const std::exception&) {
                    throw ConfigError("environment variable UNRAVEL_WORKERS is not an integer");
                }
            }
        }
        if (seed) cfg.master_seed = *seed;
        if (engine) cfg.engine = *engine;
        if (backend) cfg.backend = *backend;
        if (out) cfg.out = *out;
        if (workers) cfg.workers = *workers;
    } catch (const ConfigError& e) {
        std::cerr << "qtraj: config error: " << e.what() << '\n';
        return kExitConfig;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    return run_command(command, cfg, std::cout, std::cerr);
}
