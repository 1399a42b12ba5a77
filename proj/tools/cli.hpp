// Command implementations behind the sfgp executable. Everything here talks to
// the library through the C API only.

#pragma once

#include <sfgp/sfgp.h>

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfgp::cli {

/// Bad flags or configuration; reported with exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A failed library call; carries the library status.
class ApiError : public std::runtime_error {
public:
    ApiError(sfgp_status status, const std::string& what) : std::runtime_error(what), status(status) {}
    sfgp_status status;
};

void check(sfgp_status status, const std::string& context);

struct PointSetDeleter {
    void operator()(sfgp_pointset* p) const { sfgp_pointset_free(p); }
};
struct KernelDeleter {
    void operator()(sfgp_kernel* k) const { sfgp_kernel_free(k); }
};
struct ResultDeleter {
    void operator()(sfgp_result* r) const { sfgp_result_free(r); }
};
struct InstanceDeleter {
    void operator()(sfgp_instance* i) const { sfgp_instance_free(i); }
};
using PointSetPtr = std::unique_ptr<sfgp_pointset, PointSetDeleter>;
using KernelPtr = std::unique_ptr<sfgp_kernel, KernelDeleter>;
using ResultPtr = std::unique_ptr<sfgp_result, ResultDeleter>;
using InstancePtr = std::unique_ptr<sfgp_instance, InstanceDeleter>;

struct SweepAxes {
    std::uint64_t master_seed = 42;
    int seeds = 30;
    std::vector<int> deformation_levels{2};
    std::vector<double> noise_stds{0.02};
    std::vector<double> missing_widths{0.0};
    std::vector<double> outlier_ratios{0.0};
    std::vector<double> omegas{0.1};
    double rotation_max = 0.1;
};

struct RunConfig {
    /// "fish" or a CSV path.
    std::string reference = "fish";
    nlohmann::json kernel = {{"type", "squared_exponential"}, {"amplitude2", 0.01}, {"lengthscale", 1.0}};
    sfgp_config registration{};
    /// When set, sigma2_init = factor * (mean nearest-neighbour distance)^2.
    double sigma2_nn_factor = 4.0;
    std::vector<std::string> variants{"SFGP_Full", "GPClosestPnt"};
    sfgp_perturbation perturbation{};
    SweepAxes sweep;
    /// Grid for `generate`; `seeds` is the instance count per grid cell.
    std::optional<SweepAxes> dataset;
};

/// Benchmark defaults: SE kernel a2 = 0.01, l = 1.0, p_min = 0.05,
/// sigma2_init = 4 nn^2.
RunConfig default_config();
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

PointSetPtr load_reference(const RunConfig& cfg);
KernelPtr make_kernel(const nlohmann::json& spec, const sfgp_pointset* reference);
/// Registration settings with sigma2_init resolved for `reference`.
sfgp_config resolve_registration(const RunConfig& cfg, const sfgp_pointset* reference);

/// One cell of a perturbation grid plus a seed index.
struct GridPoint {
    int deformation_level = 0;
    double noise_std = 0.0;
    double missing_width = 0.0;
    double outlier_ratio = 0.0;
    int seed = 0;
};

/// Grid cells in a fixed order (level, noise, width, ratio, seed).
std::vector<GridPoint> grid_points(const SweepAxes& axes);
/// The instance drawn for a grid point; shared by `generate` and `sweep`.
sfgp_perturbation grid_perturbation(const SweepAxes& axes, const GridPoint& point);

struct SweepRecord {
    std::string variant;
    int deformation_level = 0;
    double noise_std = 0.0;
    double missing_width = 0.0;
    double outlier_ratio = 0.0;
    double omega = 0.0;
    int seed = 0;
    std::string status = "ok";
    int success = 0;
    double error_all = 0.0;
    double error_missing = 0.0;
    double error_nonmissing = 0.0;
    double recall = 0.0;
    double precision = 0.0;
    int iters = 0;
    int converged = 0;
    double min_sigma2 = 0.0;
    int finite = 0;
    double runtime_ms = 0.0;  // not part of metrics.csv
};

using LogFn = std::function<void(const std::string&)>;

/// Runs every (axis cell, seed, variant) combination on `threads` workers.
/// Records come back in a fixed order independent of the thread count.
std::vector<SweepRecord> run_sweep(const RunConfig& cfg, int threads, const LogFn& log = {});

std::string metrics_csv(const std::vector<SweepRecord>& records);
std::vector<SweepRecord> parse_metrics_csv(const std::string& text);
std::string runtime_csv(const std::vector<SweepRecord>& records);

/// FNV-1a 64 of a byte string, as 16 hex digits.
std::string digest_hex(const std::string& bytes);

/// Thread count from the flag, else SFGP_THREADS, else 1.
int resolve_threads(int flag_value);

struct GenerateOptions {
    std::filesystem::path out;
    std::optional<std::uint64_t> seed;
};
/// Without a `dataset` section, writes one instance from `perturbation`.
/// With one, writes `dataset.json`, `reference.csv` and one directory per
/// instance.
void cmd_generate(const RunConfig& cfg, const GenerateOptions& opts, const LogFn& log);

struct RegisterCmdOptions {
    std::filesystem::path reference;  // empty: from config, or the dataset's reference
    std::filesystem::path target;     // a target CSV ...
    std::filesystem::path dataset;    // ... or a directory written by `generate`
    std::filesystem::path out;
    std::string variant = "SFGP_Full";
    int threads = 1;
    bool verbose = false;
};
void cmd_register(const RunConfig& cfg, const RegisterCmdOptions& opts, const LogFn& log);

struct SweepCmdOptions {
    std::filesystem::path out;
    int threads = 1;
    std::optional<std::uint64_t> seed;
};
void cmd_sweep(const RunConfig& cfg, const SweepCmdOptions& opts, const LogFn& log);

struct EvalOptions {
    std::filesystem::path instance;  // single instance + single result ...
    std::filesystem::path result;
    std::filesystem::path dataset;   // ... or a dataset + a `register --dataset` output
    std::filesystem::path results;
    std::filesystem::path out;  // metrics JSON / aggregate CSV; empty: JSON to stdout
};
/// Single mode returns the metrics JSON; dataset mode writes the aggregate CSV
/// to `out` and returns a summary table.
std::string cmd_eval(const EvalOptions& opts);

}  // namespace sfgp::cli
