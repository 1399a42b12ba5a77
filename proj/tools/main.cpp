#include "cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>

namespace {

using namespace sfgp::cli;

RunConfig config_from(const std::string& path) { return path.empty() ? default_config() : load_config(path); }

}  // namespace

int main(int argc, char** argv) {
    auto logger = spdlog::stderr_color_mt("sfgp");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::info);

    CLI::App app{"Non-rigid point-set registration with multi-annotator GP regression"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(sfgp_version()));

    std::string config_path;
    bool verbose = false;
    app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
    app.add_flag("-v,--verbose", verbose, "Per-iteration logging");

    std::string out;
    std::optional<std::uint64_t> seed;
    int threads = 0;

    auto* gen = app.add_subcommand("generate", "Write a synthetic instance or dataset directory");
    gen->add_option("--out", out, "Output directory")->required();
    gen->add_option("--seed", seed, "Instance seed, or master seed for a dataset (overrides the config)");

    std::string reference, target, dataset, variant = "SFGP_Full";
    auto* reg = app.add_subcommand("register", "Register a reference to a target or to every dataset instance");
    reg->add_option("--reference", reference, "Reference CSV (default: config or dataset reference)");
    auto* target_opt = reg->add_option("--target", target, "Target CSV");
    auto* dataset_opt = reg->add_option("--dataset", dataset, "Directory written by `generate` with a dataset");
    target_opt->excludes(dataset_opt);
    reg->add_option("--out", out, "Output directory")->required();
    reg->add_option("--variant", variant, "SFGP_Full | SFGP_bcpdReg | GPReg_noTresh | GPClosestPnt");
    reg->add_option("--threads", threads, "Worker threads for --dataset (default: SFGP_THREADS or 1)")
        ->check(CLI::PositiveNumber);

    auto* sweep = app.add_subcommand("sweep", "Run a benchmark grid and write metrics.csv");
    sweep->add_option("--out", out, "Output directory")->required();
    sweep->add_option("--threads", threads, "Worker threads (default: SFGP_THREADS or 1)")
        ->check(CLI::PositiveNumber);
    sweep->add_option("--seed", seed, "Master seed (overrides the config)");

    std::string instance_dir, result_dir, results_dir;
    auto* eval = app.add_subcommand("eval", "Score registration results against ground truth");
    eval->add_option("--instance", instance_dir, "Instance directory");
    eval->add_option("--result", result_dir, "Directory written by `register`");
    eval->add_option("--dataset", dataset, "Dataset directory");
    eval->add_option("--results", results_dir, "Directory written by `register --dataset`");
    eval->add_option("--out", out, "Metrics JSON, or aggregate CSV for a dataset (default: JSON to stdout)");

    for (auto* sub : {gen, reg, sweep, eval}) {
        sub->add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
        sub->add_flag("-v,--verbose", verbose, "Per-iteration logging");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (verbose) spdlog::set_level(spdlog::level::debug);
    const LogFn info = [](const std::string& m) { spdlog::info(m); };
    const LogFn debug = [](const std::string& m) { spdlog::debug(m); };

    try {
        const RunConfig cfg = config_from(config_path);
        if (*gen) {
            cmd_generate(cfg, {out, seed}, info);
        } else if (*reg) {
            RegisterCmdOptions o;
            o.reference = reference;
            o.target = target;
            o.dataset = dataset;
            o.threads = resolve_threads(threads);
            o.out = out;
            o.variant = variant;
            o.verbose = verbose;
            cmd_register(cfg, o, [&](const std::string& m) {
                if (m.rfind("iter=", 0) == 0) debug(m); else info(m);
            });
        } else if (*sweep) {
            cmd_sweep(cfg, {out, resolve_threads(threads), seed}, info);
        } else if (*eval) {
            const std::string text = cmd_eval({instance_dir, result_dir, dataset, results_dir, out});
            if (out.empty() || !dataset.empty()) std::cout << text;
        }
    } catch (const UsageError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
