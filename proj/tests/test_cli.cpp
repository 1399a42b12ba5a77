#include "cli.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace sfgp::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("sfgp_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

struct CliRun {
    int code;
    std::string output;
};

// Runs the executable with stdout and stderr merged.
CliRun run_cli(const std::string& args) {
    const fs::path log = fs::temp_directory_path() / "sfgp_cli_last_output.txt";
    const std::string cmd = std::string("\"") + SFGP_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(log)};
}

std::string small_sweep_config() {
    return R"({
      "schema_version": 1,
      "registration": {"p_min": 0.05, "sigma2_init_nn_factor": 4, "max_iters": 40},
      "variants": ["SFGP_Full", "GPClosestPnt"],
      "sweep": {"master_seed": 3, "seeds": 2, "missing_widths": [0.1, 0.3], "outlier_ratios": [0, 0.5]}
    })";
}

}  // namespace

TEST(Config, StrictParsing) {
    EXPECT_NO_THROW(parse_config(R"({"schema_version": 1})"));
    EXPECT_THROW(parse_config(R"({"schema_version": 2})"), UsageError);
    EXPECT_THROW(parse_config(R"({"schema_version": 1, "kernal": {}})"), UsageError);
    EXPECT_THROW(parse_config(R"({"schema_version": 1, "sweep": {"seed": 3}})"), UsageError);
    EXPECT_THROW(parse_config(R"({"schema_version": 1, "variants": ["SFGP_Fast"]})"), UsageError);
    EXPECT_THROW(parse_config(R"({"schema_version": 1, "variants": []})"), UsageError);
    EXPECT_THROW(parse_config(R"({"schema_version": 1, "registration": {"omega": 1.5}})"), UsageError);
    EXPECT_THROW(parse_config(R"({"schema_version": 1, "dataset": {"count": 0}})"), UsageError);
    EXPECT_THROW(parse_config("{"), UsageError);

    const RunConfig cfg = parse_config(R"({"schema_version": 1, "dataset": {"count": 3, "missing_widths": [0.2]}})");
    ASSERT_TRUE(cfg.dataset.has_value());
    EXPECT_EQ(cfg.dataset->seeds, 3);
    EXPECT_EQ(cfg.dataset->missing_widths, std::vector<double>{0.2});
}

TEST(Config, ShippedConfigsLoad) {
    for (const char* name : {"missing_sweep.json", "outlier_sweep.json", "fish_instance.json"}) {
        EXPECT_NO_THROW(load_config(fs::path(SFGP_CONFIG_DIR) / name)) << name;
    }
    const RunConfig m = load_config(fs::path(SFGP_CONFIG_DIR) / "missing_sweep.json");
    EXPECT_EQ(m.sweep.seeds, 30);
    EXPECT_EQ(m.sweep.missing_widths.size(), 4u);
    EXPECT_EQ(m.registration.p_min, 0.05);
}

TEST(Grid, FixedOrder) {
    SweepAxes axes;
    axes.seeds = 2;
    axes.deformation_levels = {1, 2};
    axes.missing_widths = {0.1, 0.2};
    const auto g = grid_points(axes);
    ASSERT_EQ(g.size(), 8u);
    EXPECT_EQ(g[0].deformation_level, 1);
    EXPECT_EQ(g[0].seed, 0);
    EXPECT_EQ(g[1].seed, 1);
    EXPECT_EQ(g[2].missing_width, 0.2);
    EXPECT_EQ(g[4].deformation_level, 2);

    const auto p0 = grid_perturbation(axes, g[0]), p1 = grid_perturbation(axes, g[1]);
    EXPECT_NE(p0.seed, p1.seed);
    EXPECT_EQ(p0.seed, grid_perturbation(axes, g[2]).seed);
}

TEST(Sweep, CsvRoundTripAndThreadIndependence) {
    const RunConfig cfg = parse_config(small_sweep_config());
    const auto one = run_sweep(cfg, 1);
    const auto three = run_sweep(cfg, 3);
    ASSERT_EQ(one.size(), 2u * 2 * 2 * 2);
    const std::string csv = metrics_csv(one);
    EXPECT_EQ(csv, metrics_csv(three));
    EXPECT_EQ(digest_hex(csv), digest_hex(metrics_csv(three)));
    EXPECT_EQ(digest_hex(csv).size(), 16u);

    const auto back = parse_metrics_csv(csv);
    ASSERT_EQ(back.size(), one.size());
    EXPECT_EQ(metrics_csv(back), csv);
    for (const auto& r : one) {
        EXPECT_EQ(r.status, "ok");
        EXPECT_TRUE(r.finite);
        EXPECT_GE(r.min_sigma2, 1e-12);
    }
}

TEST(Threads, Resolution) {
    EXPECT_EQ(resolve_threads(3), 3);
    ::setenv("SFGP_THREADS", "5", 1);
    EXPECT_EQ(resolve_threads(0), 5);
    ::unsetenv("SFGP_THREADS");
    EXPECT_EQ(resolve_threads(0), 1);
}

TEST(Executable, ExitCodes) {
    EXPECT_EQ(run_cli("--help").code, 0);
    EXPECT_EQ(run_cli("").code, 2);
    EXPECT_EQ(run_cli("frobnicate").code, 2);
    EXPECT_EQ(run_cli("generate").code, 2);

    const fs::path dir = scratch("codes");
    const CliRun unknown = run_cli("register --target x.csv --out " + dir.string() + " --variant SFGP_Fast");
    EXPECT_EQ(unknown.code, 2);
    EXPECT_NE(unknown.output.find("GPClosestPnt"), std::string::npos) << unknown.output;

    std::ofstream(dir / "bad.json") << R"({"schema_version": 1, "dataset": {"count": 0}})";
    EXPECT_EQ(run_cli("generate --config " + (dir / "bad.json").string() + " --out " + dir.string()).code, 2);

    std::ofstream(dir / "broken.csv") << "x,y\n1,2\nfoo,bar\n";
    EXPECT_EQ(run_cli("register --target " + (dir / "broken.csv").string() + " --out " + (dir / "r").string()).code, 1);
    fs::remove_all(dir);
}

TEST(Executable, GenerateRegisterEvalSingle) {
    const fs::path dir = scratch("single");
    const std::string cfg = " --config " + (fs::path(SFGP_CONFIG_DIR) / "fish_instance.json").string();
    ASSERT_EQ(run_cli("generate" + cfg + " --out " + (dir / "a").string()).code, 0);
    ASSERT_EQ(run_cli("generate" + cfg + " --out " + (dir / "b").string()).code, 0);
    for (const char* f : {"target.csv", "ground_truth.csv", "manifest.json", "reference.csv"}) {
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    }

    const CliRun reg = run_cli("register" + cfg + " --target " + (dir / "a" / "target.csv").string() + " --out " +
                         (dir / "res").string());
    ASSERT_EQ(reg.code, 0) << reg.output;
    EXPECT_TRUE(fs::exists(dir / "res" / "deformed.csv"));
    EXPECT_TRUE(fs::exists(dir / "res" / "summary.json"));

    const CliRun eval = run_cli("eval --instance " + (dir / "a").string() + " --result " + (dir / "res").string());
    ASSERT_EQ(eval.code, 0) << eval.output;
    const auto metrics = nlohmann::json::parse(eval.output);
    EXPECT_EQ(metrics["success"], true);
    EXPECT_LT(metrics["error_all"].get<double>(), 0.01);

    // Registering the reference onto itself barely moves it.
    ASSERT_EQ(run_cli("register --target " + (dir / "a" / "reference.csv").string() + " --out " +
                   (dir / "self").string())
                  .code,
              0);
    const std::string text = slurp(dir / "self" / "deformed.csv");
    std::ifstream ref_in(dir / "a" / "reference.csv"), def_in(dir / "self" / "deformed.csv");
    std::string ref_line, def_line;
    std::getline(ref_in, ref_line);
    std::getline(def_in, def_line);
    double worst = 0;
    while (std::getline(ref_in, ref_line) && std::getline(def_in, def_line)) {
        double rx, ry, dx, dy;
        char comma;
        std::istringstream(ref_line) >> rx >> comma >> ry;
        std::istringstream(def_line) >> dx >> comma >> dy;
        worst = std::max(worst, std::hypot(rx - dx, ry - dy));
    }
    EXPECT_LT(worst, 1e-3);
    EXPECT_FALSE(text.empty());
    fs::remove_all(dir);
}

TEST(Executable, DatasetWorkflow) {
    const fs::path dir = scratch("dataset");
    std::ofstream(dir / "cfg.json") << R"({
      "schema_version": 1,
      "registration": {"p_min": 0.05, "sigma2_init_nn_factor": 4, "max_iters": 50},
      "dataset": {"count": 2, "master_seed": 9, "missing_widths": [0.2, 0.4], "noise_stds": [0.01]}
    })";
    const std::string cfg = " --config " + (dir / "cfg.json").string();
    ASSERT_EQ(run_cli("generate" + cfg + " --out " + (dir / "data").string()).code, 0);
    ASSERT_EQ(run_cli("generate" + cfg + " --out " + (dir / "again").string()).code, 0);
    EXPECT_EQ(slurp(dir / "data" / "dataset.json"), slurp(dir / "again" / "dataset.json"));
    EXPECT_EQ(slurp(dir / "data" / "i0003" / "target.csv"), slurp(dir / "again" / "i0003" / "target.csv"));

    const auto manifest = nlohmann::json::parse(slurp(dir / "data" / "dataset.json"));
    ASSERT_EQ(manifest["instances"].size(), 4u);

    const CliRun reg = run_cli("register" + cfg + " --dataset " + (dir / "data").string() + " --threads 2 --out " +
                         (dir / "res").string());
    ASSERT_EQ(reg.code, 0) << reg.output;
    int dirs = 0;
    for (const auto& e : fs::directory_iterator(dir / "res")) dirs += e.is_directory();
    EXPECT_EQ(dirs, 4);
    EXPECT_TRUE(fs::exists(dir / "res" / "run.json"));

    const CliRun eval = run_cli("eval --dataset " + (dir / "data").string() + " --results " + (dir / "res").string() +
                          " --out " + (dir / "metrics.csv").string());
    ASSERT_EQ(eval.code, 0) << eval.output;
    const std::string csv = slurp(dir / "metrics.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
    EXPECT_EQ(csv.find(",missing,"), std::string::npos);

    EXPECT_EQ(run_cli("register --dataset " + (dir / "data").string() + " --target x.csv --out " +
                   (dir / "r2").string())
                  .code,
              2);
    fs::remove_all(dir);
}
