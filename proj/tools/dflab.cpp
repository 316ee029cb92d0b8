// Command-line front door: binds the library modules into reproducible
// experiments. Every command reads a config (file or preset), writes its
// artifacts under --out and records a manifest.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "dflab/experiment.hpp"
#include "dflab/fetch.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string preset;
    std::string out;
    long seed = -1;
    int jobs = 0;
    bool allow_network = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Config file (flat key = value, include support)");
    cmd->add_option("--preset", args.preset, "Named preset (process1..process6, lambda0/06/1, lambda_ablation, empirical)");
    cmd->add_option("--out", args.out, "Output directory");
    cmd->add_option("--seed", args.seed, "Override the seed list with a single seed");
    cmd->add_option("--jobs", args.jobs, "Parallel runs bound");
    cmd->add_flag("--allow-network", args.allow_network, "Permit remote downloads (fetch only)");
}

dflab::experiment::Settings build_settings(const CommonArgs& args) {
    dflab::config::Config cfg;
    if (!args.preset.empty()) cfg = dflab::config::load_preset(args.preset);
    if (!args.config_path.empty()) {
        auto file_cfg = dflab::config::load_file(args.config_path);
        for (const auto& [k, v] : file_cfg.values()) cfg.set(k, v);
    }
    if (args.preset.empty() && args.config_path.empty())
        throw dflab::ConfigError("provide --config and/or --preset");
    if (!args.out.empty()) cfg.set("out", args.out);
    if (args.seed >= 0) cfg.set("seeds", std::to_string(args.seed));
    if (args.jobs > 0) cfg.set("jobs", std::to_string(args.jobs));
    auto settings = dflab::experiment::parse_settings(cfg);
    settings.allow_network = args.allow_network;
    return settings;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dflab: dynamic factor estimation lab (transformer, Kalman filter, particle oracle)"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string fetch_url, fetch_dest;

    auto* sim = app.add_subcommand("simulate", "Simulate datasets and write dataset.csv per seed");
    auto* base = app.add_subcommand("baselines", "Kalman, Kalman-max, oracle and mean-of-data factors");
    auto* train = app.add_subcommand("train", "Train the transformer ensemble(s)");
    auto* evaluate = app.add_subcommand("evaluate", "Metrics and results table against the baselines");
    auto* interpret = app.add_subcommand("interpret", "Attention, residual-stream and projection CSVs");
    auto* coincident = app.add_subcommand("coincident", "Empirical coincident-index pipeline");
    auto* fetch = app.add_subcommand("fetch", "Download a remote CSV (requires --allow-network)");
    for (auto* cmd : {sim, base, train, evaluate, interpret, coincident, fetch}) add_common(cmd, args);
    fetch->add_option("--url", fetch_url, "Source URL")->required();
    fetch->add_option("--dest", fetch_dest, "Destination file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (fetch->parsed()) {
            if (!args.allow_network)
                throw dflab::ConfigError("fetch requires --allow-network");
            dflab::dataio::fetch_remote(fetch_url, fetch_dest);
            return 0;
        }
        auto settings = build_settings(args);
        if (sim->parsed()) dflab::experiment::cmd_simulate(settings);
        else if (base->parsed()) dflab::experiment::cmd_baselines(settings);
        else if (train->parsed()) dflab::experiment::cmd_train(settings);
        else if (evaluate->parsed()) dflab::experiment::cmd_evaluate(settings);
        else if (interpret->parsed()) dflab::experiment::cmd_interpret(settings);
        else if (coincident->parsed()) dflab::experiment::cmd_coincident(settings);
        return 0;
    } catch (const dflab::Error& e) {
        nlohmann::json err{{"type", e.kind()}, {"message", e.what()}};
        std::cerr << err.dump() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        nlohmann::json err{{"type", "internal"}, {"message", e.what()}};
        std::cerr << err.dump() << std::endl;
        return 1;
    }
}
