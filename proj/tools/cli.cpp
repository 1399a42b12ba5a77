#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace sfgp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ApiError(SFGP_ERR_IO, "cannot write " + tmp.string());
        out << text;
        if (!out) throw ApiError(SFGP_ERR_IO, "failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) throw UsageError(where + " must be an object");
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw UsageError("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key) || obj[key].is_null()) return fallback;
    return obj[key].get<T>();
}

std::string variant_list() {
    std::string names;
    for (size_t i = 0; i < sfgp_variant_count(); ++i) {
        if (i) names += ", ";
        names += sfgp_variant_name(i);
    }
    return names;
}

void validate_variant(const std::string& name) {
    for (size_t i = 0; i < sfgp_variant_count(); ++i) {
        if (name == sfgp_variant_name(i)) return;
    }
    throw UsageError("unknown variant '" + name + "' (expected one of: " + variant_list() + ")");
}

void parse_registration(const json& j, RunConfig& cfg) {
    reject_unknown(j,
                   {"omega", "p_min", "sigma2_init", "sigma2_init_nn_factor", "max_iters", "rel_tol", "jitter",
                    "precenter"},
                   "registration");
    auto& r = cfg.registration;
    r.omega = get_or(j, "omega", r.omega);
    r.p_min = get_or(j, "p_min", r.p_min);
    r.max_iters = get_or(j, "max_iters", r.max_iters);
    r.rel_tol = get_or(j, "rel_tol", r.rel_tol);
    r.jitter = get_or(j, "jitter", kNaN);
    r.precenter = get_or(j, "precenter", false) ? 1 : 0;
    if (j.contains("sigma2_init") && !j["sigma2_init"].is_null()) {
        if (j.contains("sigma2_init_nn_factor")) {
            throw UsageError("registration: give either sigma2_init or sigma2_init_nn_factor");
        }
        r.sigma2_init = j["sigma2_init"].get<double>();
        cfg.sigma2_nn_factor = kNaN;
    } else if (j.contains("sigma2_init_nn_factor")) {
        cfg.sigma2_nn_factor = j["sigma2_init_nn_factor"].get<double>();
        if (!(cfg.sigma2_nn_factor > 0)) throw UsageError("registration: sigma2_init_nn_factor must be positive");
    }
}

void parse_perturbation(const json& j, RunConfig& cfg) {
    reject_unknown(j,
                   {"deformation_level", "noise_level", "warp_amplitude", "warp_bandwidth", "warp_controls",
                    "missing_width", "missing_center", "outlier_ratio", "noise_std", "rotation_max", "seed"},
                   "perturbation");
    auto& p = cfg.perturbation;
    if (j.contains("deformation_level") || j.contains("noise_level")) {
        check(sfgp_perturbation_from_levels(get_or(j, "deformation_level", 0), get_or(j, "noise_level", 0), &p),
              "perturbation levels");
    }
    p.warp_amplitude = get_or(j, "warp_amplitude", p.warp_amplitude);
    p.warp_bandwidth = get_or(j, "warp_bandwidth", p.warp_bandwidth);
    p.warp_controls = get_or(j, "warp_controls", p.warp_controls);
    p.missing_width = get_or(j, "missing_width", p.missing_width);
    if (j.contains("missing_center")) {
        const auto& c = j["missing_center"];
        if (c.is_string() && c.get<std::string>() == "random") {
            p.missing_center = -1;
        } else if (c.is_number_integer() && c.get<std::int64_t>() >= 0) {
            p.missing_center = c.get<std::int64_t>();
        } else {
            throw UsageError("perturbation: missing_center must be a reference index or \"random\"");
        }
    }
    p.outlier_ratio = get_or(j, "outlier_ratio", p.outlier_ratio);
    p.noise_std = get_or(j, "noise_std", p.noise_std);
    p.rotation_max = get_or(j, "rotation_max", p.rotation_max);
    p.seed = get_or(j, "seed", p.seed);
}

void parse_sweep(const json& j, SweepAxes& s) {
    reject_unknown(j,
                   {"master_seed", "seeds", "deformation_levels", "noise_stds", "missing_widths", "outlier_ratios",
                    "omegas", "rotation_max"},
                   "sweep");
    s.master_seed = get_or(j, "master_seed", s.master_seed);
    s.seeds = get_or(j, "seeds", s.seeds);
    s.deformation_levels = get_or(j, "deformation_levels", s.deformation_levels);
    s.noise_stds = get_or(j, "noise_stds", s.noise_stds);
    s.missing_widths = get_or(j, "missing_widths", s.missing_widths);
    s.outlier_ratios = get_or(j, "outlier_ratios", s.outlier_ratios);
    s.omegas = get_or(j, "omegas", s.omegas);
    s.rotation_max = get_or(j, "rotation_max", s.rotation_max);
}

void parse_dataset(const json& j, SweepAxes& s) {
    reject_unknown(j,
                   {"count", "master_seed", "deformation_levels", "noise_stds", "missing_widths", "outlier_ratios",
                    "rotation_max"},
                   "dataset");
    s.master_seed = get_or(j, "master_seed", s.master_seed);
    s.seeds = get_or(j, "count", s.seeds);
    s.deformation_levels = get_or(j, "deformation_levels", s.deformation_levels);
    s.noise_stds = get_or(j, "noise_stds", s.noise_stds);
    s.missing_widths = get_or(j, "missing_widths", s.missing_widths);
    s.outlier_ratios = get_or(j, "outlier_ratios", s.outlier_ratios);
    s.rotation_max = get_or(j, "rotation_max", s.rotation_max);
    if (s.seeds < 1) throw UsageError("dataset: count must be at least 1");
}

void validate_sweep(const SweepAxes& s) {
    if (s.seeds < 1) throw UsageError("sweep: seeds must be at least 1");
    if (s.deformation_levels.empty() || s.noise_stds.empty() || s.missing_widths.empty() ||
        s.outlier_ratios.empty() || s.omegas.empty()) {
        throw UsageError("sweep: every axis needs at least one value");
    }
    for (int l : s.deformation_levels) {
        if (l < 0) throw UsageError("sweep: deformation levels must be non-negative");
    }
}

std::string fmt_double(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf, static_cast<size_t>(n));
}

double parse_field(std::string_view s) {
    if (s.empty()) return kNaN;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw UsageError("metrics csv: bad number '" + std::string(s) + "'");
    }
    return v;
}

int parse_int(std::string_view s) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw UsageError("metrics csv: bad integer '" + std::string(s) + "'");
    }
    return v;
}

constexpr const char* kMetricsHeader =
    "variant,deformation_level,noise_std,missing_width,outlier_ratio,omega,seed,status,success,error_all,"
    "error_missing,error_nonmissing,recall,precision,iters,converged,min_sigma2,finite";

std::string key_fields(const SweepRecord& r) {
    return r.variant + "," + std::to_string(r.deformation_level) + "," + fmt_double(r.noise_std) + "," +
           fmt_double(r.missing_width) + "," + fmt_double(r.outlier_ratio) + "," + fmt_double(r.omega) + "," +
           std::to_string(r.seed);
}

json metrics_json(const sfgp_metrics& m) {
    auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
    return {{"success", m.success != 0},
            {"error_all", num(m.error_all)},
            {"error_missing", num(m.error_missing)},
            {"error_nonmissing", num(m.error_nonmissing)},
            {"recall", num(m.recall)},
            {"precision", num(m.precision)}};
}

}  // namespace

void check(sfgp_status status, const std::string& context) {
    if (status != SFGP_OK) {
        throw ApiError(status, context + ": " + sfgp_status_string(status) + ": " + sfgp_last_error());
    }
}

RunConfig default_config() {
    RunConfig cfg;
    sfgp_config_default(&cfg.registration);
    cfg.registration.p_min = 0.05;
    sfgp_perturbation_default(&cfg.perturbation);
    check(sfgp_perturbation_from_levels(2, 2, &cfg.perturbation), "default perturbation");
    return cfg;
}

RunConfig parse_config(const std::string& text) {
    RunConfig cfg = default_config();
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw UsageError(std::string("config is not valid JSON: ") + e.what());
    }
    try {
        reject_unknown(j,
                       {"schema_version", "reference", "kernel", "registration", "variants", "perturbation", "sweep",
                        "dataset"},
                       "config");
        if (j.value("schema_version", 0) != 1) throw UsageError("config: schema_version must be 1");
        cfg.reference = get_or(j, "reference", cfg.reference);
        if (j.contains("kernel")) cfg.kernel = j["kernel"];
        if (j.contains("registration")) parse_registration(j["registration"], cfg);
        if (j.contains("variants")) cfg.variants = j["variants"].get<std::vector<std::string>>();
        if (j.contains("perturbation")) parse_perturbation(j["perturbation"], cfg);
        if (j.contains("sweep")) parse_sweep(j["sweep"], cfg.sweep);
        if (j.contains("dataset")) {
            SweepAxes d;
            d.omegas = {cfg.registration.omega};
            parse_dataset(j["dataset"], d);
            cfg.dataset = d;
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    if (cfg.variants.empty()) throw UsageError("config: variants must not be empty");
    for (const auto& v : cfg.variants) validate_variant(v);
    validate_sweep(cfg.sweep);
    if (cfg.dataset) validate_sweep(*cfg.dataset);
    sfgp_config probe = cfg.registration;
    if (std::isnan(probe.sigma2_init)) probe.sigma2_init = 1.0;
    if (sfgp_config_validate(&probe) != SFGP_OK) throw UsageError(std::string("config: ") + sfgp_last_error());
    return cfg;
}

RunConfig load_config(const fs::path& path) { return parse_config(read_file(path)); }

PointSetPtr load_reference(const RunConfig& cfg) {
    sfgp_pointset* p = nullptr;
    if (cfg.reference == "fish") {
        check(sfgp_fish_reference(&p), "fish reference");
    } else {
        check(sfgp_pointset_read_csv(cfg.reference.c_str(), &p), "reading reference");
    }
    return PointSetPtr(p);
}

KernelPtr make_kernel(const json& spec, const sfgp_pointset* reference) {
    if (!spec.is_object() || !spec.contains("type")) throw UsageError("kernel: missing \"type\"");
    const auto type = spec["type"].get<std::string>();
    sfgp_kernel* k = nullptr;
    try {
        if (type == "squared_exponential") {
            reject_unknown(spec, {"type", "amplitude2", "lengthscale"}, "kernel");
            check(sfgp_kernel_se(spec.at("amplitude2").get<double>(), spec.at("lengthscale").get<double>(), &k),
                  "kernel");
        } else if (type == "pca") {
            reject_unknown(spec, {"type", "spectrum"}, "kernel");
            const auto path = spec.at("spectrum").get<std::string>();
            check(sfgp_kernel_pca_load(path.c_str(), reference, &k), "kernel");
        } else if (type == "sum") {
            reject_unknown(spec, {"type", "terms"}, "kernel");
            std::vector<KernelPtr> owned;
            std::vector<const sfgp_kernel*> terms;
            for (const auto& t : spec.at("terms")) {
                owned.push_back(make_kernel(t, reference));
                terms.push_back(owned.back().get());
            }
            check(sfgp_kernel_sum(terms.data(), terms.size(), &k), "kernel");
        } else if (type == "scaled") {
            reject_unknown(spec, {"type", "factor", "inner"}, "kernel");
            const KernelPtr inner = make_kernel(spec.at("inner"), reference);
            check(sfgp_kernel_scaled(spec.at("factor").get<double>(), inner.get(), &k), "kernel");
        } else {
            throw UsageError("kernel: unknown type '" + type + "' (expected squared_exponential, pca, sum, scaled)");
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("kernel: ") + e.what());
    } catch (const ApiError& e) {
        if (e.status == SFGP_ERR_INVALID_ARGUMENT) throw UsageError(e.what());
        throw;
    }
    return KernelPtr(k);
}

sfgp_config resolve_registration(const RunConfig& cfg, const sfgp_pointset* reference) {
    sfgp_config r = cfg.registration;
    if (std::isnan(r.sigma2_init) && !std::isnan(cfg.sigma2_nn_factor)) {
        const double nn = sfgp_pointset_mean_nn_distance(reference);
        if (std::isnan(nn) || nn <= 0) throw UsageError("reference needs at least two distinct points");
        r.sigma2_init = cfg.sigma2_nn_factor * nn * nn;
    }
    return r;
}

std::vector<GridPoint> grid_points(const SweepAxes& ax) {
    std::vector<GridPoint> out;
    for (int level : ax.deformation_levels)
        for (double noise : ax.noise_stds)
            for (double width : ax.missing_widths)
                for (double ratio : ax.outlier_ratios)
                    for (int seed = 0; seed < ax.seeds; ++seed) out.push_back({level, noise, width, ratio, seed});
    return out;
}

sfgp_perturbation grid_perturbation(const SweepAxes& ax, const GridPoint& g) {
    sfgp_perturbation p;
    check(sfgp_perturbation_from_levels(g.deformation_level, 0, &p), "perturbation");
    p.noise_std = g.noise_std;
    p.missing_width = g.missing_width;
    p.outlier_ratio = g.outlier_ratio;
    p.rotation_max = ax.rotation_max;
    p.seed = sfgp_derive_seed(ax.master_seed, static_cast<std::uint64_t>(g.seed), 0);
    return p;
}

std::vector<SweepRecord> run_sweep(const RunConfig& cfg, int threads, const LogFn& log) {
    validate_sweep(cfg.sweep);
    const SweepAxes& ax = cfg.sweep;
    const PointSetPtr reference = load_reference(cfg);
    const KernelPtr kernel = make_kernel(cfg.kernel, reference.get());
    const sfgp_config base = resolve_registration(cfg, reference.get());

    struct Task {
        int level;
        double noise, width, ratio, omega;
        int seed;
    };
    std::vector<Task> tasks;
    for (int level : ax.deformation_levels)
        for (double noise : ax.noise_stds)
            for (double width : ax.missing_widths)
                for (double ratio : ax.outlier_ratios)
                    for (double omega : ax.omegas)
                        for (int seed = 0; seed < ax.seeds; ++seed) tasks.push_back({level, noise, width, ratio, omega, seed});

    const size_t nv = cfg.variants.size();
    std::vector<SweepRecord> records(tasks.size() * nv);
    std::atomic<size_t> next{0};
    std::atomic<size_t> done{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;

    auto work = [&] {
        while (true) {
            const size_t t = next.fetch_add(1);
            if (t >= tasks.size()) return;
            {
                std::lock_guard lock(err_mutex);
                if (first_error) return;
            }
            try {
                const Task& task = tasks[t];
                const sfgp_perturbation p =
                    grid_perturbation(ax, {task.level, task.noise, task.width, task.ratio, task.seed});
                sfgp_instance* raw = nullptr;
                check(sfgp_generate(reference.get(), &p, &raw), "generating instance");
                const InstancePtr inst(raw);

                for (size_t v = 0; v < nv; ++v) {
                    SweepRecord& rec = records[t * nv + v];
                    rec.variant = cfg.variants[v];
                    rec.deformation_level = task.level;
                    rec.noise_std = task.noise;
                    rec.missing_width = task.width;
                    rec.outlier_ratio = task.ratio;
                    rec.omega = task.omega;
                    rec.seed = task.seed;

                    sfgp_config rc = base;
                    rc.omega = task.omega;
                    check(sfgp_config_apply_variant(&rc, rec.variant.c_str()), "variant");
                    sfgp_result* res_raw = nullptr;
                    const auto t0 = std::chrono::steady_clock::now();
                    const sfgp_status st = sfgp_register(reference.get(), sfgp_instance_target(inst.get()),
                                                         kernel.get(), &rc, nullptr, nullptr, &res_raw);
                    rec.runtime_ms =
                        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
                    if (st != SFGP_OK) {
                        rec.status = sfgp_status_string(st);
                        rec.error_all = rec.error_missing = rec.error_nonmissing = kNaN;
                        rec.recall = rec.precision = rec.min_sigma2 = kNaN;
                        if (log) log("seed " + std::to_string(task.seed) + " " + rec.variant + ": " + sfgp_last_error());
                        continue;
                    }
                    const ResultPtr res(res_raw);
                    sfgp_result_info info;
                    check(sfgp_result_info_get(res.get(), &info), "result info");
                    sfgp_metrics m;
                    check(sfgp_evaluate(res.get(), inst.get(), &m), "evaluate");
                    rec.success = m.success;
                    rec.error_all = m.error_all;
                    rec.error_missing = m.error_missing;
                    rec.error_nonmissing = m.error_nonmissing;
                    rec.recall = m.recall;
                    rec.precision = m.precision;
                    rec.iters = info.iters;
                    rec.converged = info.converged;
                    rec.min_sigma2 = info.min_sigma2;
                    rec.finite = info.all_finite;
                }
                const size_t n = ++done;
                if (log && (n % 50 == 0 || n == tasks.size())) {
                    log(std::to_string(n) + "/" + std::to_string(tasks.size()) + " instances done");
                }
            } catch (...) {
                std::lock_guard lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(tasks.size())));
    if (n_threads == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    return records;
}

std::string metrics_csv(const std::vector<SweepRecord>& records) {
    std::string out = std::string(kMetricsHeader) + "\n";
    for (const auto& r : records) {
        out += key_fields(r) + "," + r.status + "," + std::to_string(r.success) + "," + fmt_double(r.error_all) +
               "," + fmt_double(r.error_missing) + "," + fmt_double(r.error_nonmissing) + "," +
               fmt_double(r.recall) + "," + fmt_double(r.precision) + "," + std::to_string(r.iters) + "," +
               std::to_string(r.converged) + "," + fmt_double(r.min_sigma2) + "," + std::to_string(r.finite) +
               "\n";
    }
    return out;
}

std::vector<SweepRecord> parse_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader) throw UsageError("metrics csv: unexpected header");
    std::vector<SweepRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string_view> f;
        std::string_view rest(line);
        while (true) {
            const auto pos = rest.find(',');
            f.push_back(rest.substr(0, pos));
            if (pos == std::string_view::npos) break;
            rest.remove_prefix(pos + 1);
        }
        if (f.size() != 18) throw UsageError("metrics csv: expected 18 fields, got " + std::to_string(f.size()));
        SweepRecord r;
        r.variant = std::string(f[0]);
        r.deformation_level = parse_int(f[1]);
        r.noise_std = parse_field(f[2]);
        r.missing_width = parse_field(f[3]);
        r.outlier_ratio = parse_field(f[4]);
        r.omega = parse_field(f[5]);
        r.seed = parse_int(f[6]);
        r.status = std::string(f[7]);
        r.success = parse_int(f[8]);
        r.error_all = parse_field(f[9]);
        r.error_missing = parse_field(f[10]);
        r.error_nonmissing = parse_field(f[11]);
        r.recall = parse_field(f[12]);
        r.precision = parse_field(f[13]);
        r.iters = parse_int(f[14]);
        r.converged = parse_int(f[15]);
        r.min_sigma2 = parse_field(f[16]);
        r.finite = parse_int(f[17]);
        out.push_back(std::move(r));
    }
    return out;
}

std::string runtime_csv(const std::vector<SweepRecord>& records) {
    std::string out = "variant,deformation_level,noise_std,missing_width,outlier_ratio,omega,seed,runtime_ms\n";
    for (const auto& r : records) out += key_fields(r) + "," + fmt_double(r.runtime_ms) + "\n";
    return out;
}

std::string digest_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

int resolve_threads(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("SFGP_THREADS")) {
        int v = 0;
        const std::string_view s(env);
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size() || v < 1) {
            throw UsageError("SFGP_THREADS must be a positive integer");
        }
        return v;
    }
    return 1;
}

namespace {

std::string instance_name(size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "i%04zu", i);
    return buf;
}

json read_json(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ApiError(SFGP_ERR_IO, path.string() + ": " + e.what());
    }
}

PointSetPtr read_points(const fs::path& path, const std::string& what) {
    sfgp_pointset* p = nullptr;
    check(sfgp_pointset_read_csv(path.string().c_str(), &p), what);
    return PointSetPtr(p);
}

std::string iteration_line(const sfgp_iteration* r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "iter=%d change=%.3e inliers=%zu missing=%zu mean_sigma2=%.3e", r->iter,
                  r->mean_displacement_change, r->n_inliers, r->n_missing, r->mean_sigma2);
    return buf;
}

/// Registers and writes deformed.csv, summary.json and trace.log into `out`.
sfgp_result_info register_into(const sfgp_pointset* reference, const sfgp_pointset* target,
                               const sfgp_kernel* kernel, const sfgp_config& rc, const fs::path& out,
                               const LogFn* trace_log) {
    sfgp_trace_fn trace = nullptr;
    if (trace_log && *trace_log) {
        trace = [](const sfgp_iteration* r, void* user) { (*static_cast<const LogFn*>(user))(iteration_line(r)); };
    }
    sfgp_result* raw = nullptr;
    check(sfgp_register(reference, target, kernel, &rc, trace, const_cast<LogFn*>(trace_log), &raw), "register");
    const ResultPtr res(raw);
    fs::create_directories(out);
    check(sfgp_pointset_write_csv(sfgp_result_deformed(res.get()), (out / "deformed.csv").string().c_str()),
          "writing deformed reference");
    check(sfgp_result_write_summary(res.get(), (out / "summary.json").string().c_str()), "writing summary");
    check(sfgp_result_write_trace(res.get(), (out / "trace.log").string().c_str()), "writing trace");
    sfgp_result_info info;
    check(sfgp_result_info_get(res.get(), &info), "result info");
    return info;
}

sfgp_metrics evaluate_dir(const sfgp_instance* inst, const fs::path& result) {
    const json summary = read_json(result / "summary.json");
    sfgp_metrics m{};
    if (summary.value("failed", false)) {
        m.success = 0;
        m.error_all = m.error_missing = m.error_nonmissing = m.recall = m.precision = kNaN;
        return m;
    }
    const PointSetPtr deformed = read_points(result / "deformed.csv", "reading deformed");
    const auto missing = summary.at("missing").get<std::vector<size_t>>();
    check(sfgp_evaluate_points(deformed.get(), missing.data(), missing.size(), inst, &m), "evaluate");
    return m;
}

template <typename F>
void parallel_for(size_t n, int threads, F&& body) {
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mutex;
    auto work = [&] {
        for (size_t i; (i = next++) < n;) {
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    const int k = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    if (k == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < k; ++i) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);
}

void generate_dataset(const RunConfig& cfg, const GenerateOptions& opts, const LogFn& log) {
    SweepAxes ax = *cfg.dataset;
    if (opts.seed) ax.master_seed = *opts.seed;
    const PointSetPtr reference = load_reference(cfg);
    const auto points = grid_points(ax);
    json instances = json::array();
    for (size_t i = 0; i < points.size(); ++i) {
        const GridPoint& g = points[i];
        const sfgp_perturbation p = grid_perturbation(ax, g);
        sfgp_instance* raw = nullptr;
        check(sfgp_generate(reference.get(), &p, &raw), "generate");
        const InstancePtr inst(raw);
        const std::string name = instance_name(i);
        check(sfgp_instance_write(inst.get(), (opts.out / name).string().c_str()), "writing instance");
        instances.push_back({{"name", name},
                             {"deformation_level", g.deformation_level},
                             {"noise_std", g.noise_std},
                             {"missing_width", g.missing_width},
                             {"outlier_ratio", g.outlier_ratio},
                             {"seed_index", g.seed},
                             {"seed", p.seed}});
    }
    check(sfgp_pointset_write_csv(reference.get(), (opts.out / "reference.csv").string().c_str()),
          "writing reference");
    const json manifest = {{"schema_version", 1},
                           {"reference", "reference.csv"},
                           {"master_seed", ax.master_seed},
                           {"instances", instances}};
    write_file(opts.out / "dataset.json", manifest.dump(1) + "\n");
    if (log) log("wrote " + std::to_string(points.size()) + " instances to " + opts.out.string());
}

json read_dataset(const fs::path& dir) {
    const json d = read_json(dir / "dataset.json");
    if (d.value("schema_version", 0) != 1) throw UsageError(dir.string() + ": unsupported dataset schema_version");
    if (!d.contains("instances") || !d["instances"].is_array()) {
        throw UsageError(dir.string() + ": dataset.json has no instance list");
    }
    return d;
}

void register_dataset(const RunConfig& cfg, const RegisterCmdOptions& opts, const LogFn& log) {
    const json d = read_dataset(opts.dataset);
    const PointSetPtr reference =
        read_points(opts.reference.empty() ? opts.dataset / d.value("reference", "reference.csv") : opts.reference,
                    "reading reference");
    const KernelPtr kernel = make_kernel(cfg.kernel, reference.get());
    sfgp_config rc = resolve_registration(cfg, reference.get());
    check(sfgp_config_apply_variant(&rc, opts.variant.c_str()), "variant");

    const auto& instances = d["instances"];
    std::atomic<size_t> n_failed{0};
    std::mutex log_mutex;
    parallel_for(instances.size(), opts.threads, [&](size_t i) {
        const std::string name = instances[i].at("name").get<std::string>();
        const fs::path out = opts.out / name;
        try {
            const PointSetPtr target = read_points(opts.dataset / name / "target.csv", "reading target");
            const sfgp_result_info info = register_into(reference.get(), target.get(), kernel.get(), rc, out, nullptr);
            if (info.failed) ++n_failed;
        } catch (const ApiError& e) {
            ++n_failed;
            write_file(out / "error.txt", std::string(sfgp_status_string(e.status)) + "\n" + e.what() + "\n");
            std::lock_guard lock(log_mutex);
            if (log) log(name + ": " + e.what());
        }
    });
    const json run = {{"schema_version", 1},
                      {"variant", opts.variant},
                      {"instances", instances.size()},
                      {"failed", n_failed.load()}};
    write_file(opts.out / "run.json", run.dump(1) + "\n");
    if (log) {
        log(opts.variant + ": registered " + std::to_string(instances.size()) + " instances, " +
            std::to_string(n_failed.load()) + " failed");
    }
}

std::string fmt_cell(double v, const char* f) {
    if (std::isnan(v)) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string eval_dataset(const EvalOptions& opts) {
    const json d = read_dataset(opts.dataset);
    std::string variant;
    if (fs::exists(opts.results / "run.json")) variant = read_json(opts.results / "run.json").value("variant", "");

    struct Cell {
        int level;
        double noise, width, ratio;
        int n = 0, ok = 0, success = 0;
        double err_sum = 0.0, miss_sum = 0.0, recall_sum = 0.0, prec_sum = 0.0;
        int err_n = 0, miss_n = 0, recall_n = 0, prec_n = 0;
    };
    std::vector<Cell> cells;
    auto add = [](double v, double& sum, int& n) {
        if (!std::isnan(v)) {
            sum += v;
            ++n;
        }
    };

    std::string csv =
        "variant,instance,deformation_level,noise_std,missing_width,outlier_ratio,seed,status,success,error_all,"
        "error_missing,error_nonmissing,recall,precision\n";
    for (const auto& e : d["instances"]) {
        const std::string name = e.at("name").get<std::string>();
        const int level = e.at("deformation_level").get<int>();
        const double noise = e.at("noise_std").get<double>();
        const double width = e.at("missing_width").get<double>();
        const double ratio = e.at("outlier_ratio").get<double>();
        const fs::path result = opts.results / name;

        std::string status = "ok";
        sfgp_metrics m{0, kNaN, kNaN, kNaN, kNaN, kNaN};
        if (fs::exists(result / "error.txt")) {
            std::istringstream in(read_file(result / "error.txt"));
            std::getline(in, status);
        } else if (!fs::exists(result / "summary.json")) {
            status = "missing";
        } else {
            sfgp_instance* raw = nullptr;
            check(sfgp_instance_read((opts.dataset / name).string().c_str(), &raw), "reading instance");
            const InstancePtr inst(raw);
            m = evaluate_dir(inst.get(), result);
        }

        auto it = std::find_if(cells.begin(), cells.end(), [&](const Cell& c) {
            return c.level == level && c.noise == noise && c.width == width && c.ratio == ratio;
        });
        if (it == cells.end()) it = cells.insert(cells.end(), Cell{level, noise, width, ratio});
        ++it->n;
        it->ok += status == "ok";
        it->success += m.success;
        add(m.error_all, it->err_sum, it->err_n);
        add(m.error_missing, it->miss_sum, it->miss_n);
        add(m.recall, it->recall_sum, it->recall_n);
        add(m.precision, it->prec_sum, it->prec_n);

        csv += variant + "," + name + "," + std::to_string(level) + "," + fmt_double(noise) + "," + fmt_double(width) +
               "," + fmt_double(ratio) + "," + std::to_string(e.value("seed_index", 0)) + "," + status + "," +
               std::to_string(m.success) + "," + fmt_double(m.error_all) + "," + fmt_double(m.error_missing) + "," +
               fmt_double(m.error_nonmissing) + "," + fmt_double(m.recall) + "," + fmt_double(m.precision) + "\n";
    }
    if (!opts.out.empty()) write_file(opts.out, csv);

    auto mean = [](double sum, int n) { return n ? sum / n : kNaN; };
    std::string table = variant.empty() ? "" : variant + "\n";
    char line[256];
    std::snprintf(line, sizeof line, "%5s %7s %7s %7s %5s %5s %8s %11s %11s %7s %9s\n", "level", "noise", "width",
                  "ratio", "n", "ok", "success", "error_all", "error_miss", "recall", "precision");
    table += line;
    for (const auto& c : cells) {
        std::snprintf(line, sizeof line, "%5d %7.3g %7.3g %7.3g %5d %5d %8s %11s %11s %7s %9s\n", c.level, c.noise,
                      c.width, c.ratio, c.n, c.ok, fmt_cell(static_cast<double>(c.success) / c.n, "%.3f").c_str(),
                      fmt_cell(mean(c.err_sum, c.err_n), "%.3e").c_str(),
                      fmt_cell(mean(c.miss_sum, c.miss_n), "%.3e").c_str(),
                      fmt_cell(mean(c.recall_sum, c.recall_n), "%.3f").c_str(),
                      fmt_cell(mean(c.prec_sum, c.prec_n), "%.3f").c_str());
        table += line;
    }
    return table;
}

}  // namespace

void cmd_generate(const RunConfig& cfg, const GenerateOptions& opts, const LogFn& log) {
    if (opts.out.empty()) throw UsageError("generate: --out is required");
    if (cfg.dataset) return generate_dataset(cfg, opts, log);
    const PointSetPtr reference = load_reference(cfg);
    sfgp_perturbation p = cfg.perturbation;
    if (opts.seed) p.seed = *opts.seed;
    sfgp_instance* raw = nullptr;
    check(sfgp_generate(reference.get(), &p, &raw), "generate");
    const InstancePtr inst(raw);
    check(sfgp_instance_write(inst.get(), opts.out.string().c_str()), "writing instance");
    check(sfgp_pointset_write_csv(reference.get(), (opts.out / "reference.csv").string().c_str()),
          "writing reference");
    size_t n_missing = 0, n_outliers = 0, n = 0;
    const unsigned char* mm = sfgp_instance_missing_mask(inst.get(), &n);
    for (size_t i = 0; i < n; ++i) n_missing += mm[i];
    const unsigned char* om = sfgp_instance_outlier_mask(inst.get(), &n);
    for (size_t i = 0; i < n; ++i) n_outliers += om[i];
    if (log) {
        log("wrote " + opts.out.string() + ": " + std::to_string(sfgp_pointset_size(sfgp_instance_target(inst.get()))) +
            " target points, " + std::to_string(n_missing) + " missing, " + std::to_string(n_outliers) + " outliers");
    }
}

void cmd_register(const RunConfig& cfg, const RegisterCmdOptions& opts, const LogFn& log) {
    if (opts.out.empty()) throw UsageError("register: --out is required");
    if (opts.target.empty() == opts.dataset.empty()) throw UsageError("register: give exactly one of --target, --dataset");
    if (opts.threads < 1) throw UsageError("register: threads must be at least 1");
    validate_variant(opts.variant);
    if (!opts.dataset.empty()) return register_dataset(cfg, opts, log);

    const PointSetPtr reference =
        opts.reference.empty() ? load_reference(cfg) : read_points(opts.reference, "reading reference");
    const PointSetPtr target = read_points(opts.target, "reading target");
    const KernelPtr kernel = make_kernel(cfg.kernel, reference.get());
    sfgp_config rc = resolve_registration(cfg, reference.get());
    check(sfgp_config_apply_variant(&rc, opts.variant.c_str()), "variant");

    const sfgp_result_info info =
        register_into(reference.get(), target.get(), kernel.get(), rc, opts.out, opts.verbose ? &log : nullptr);
    if (log) {
        log(opts.variant + ": iters=" + std::to_string(info.iters) + " converged=" + std::to_string(info.converged) +
            " failed=" + std::to_string(info.failed) + " inliers=" + std::to_string(info.n_inliers) +
            " missing=" + std::to_string(info.n_missing));
    }
}

void cmd_sweep(const RunConfig& cfg, const SweepCmdOptions& opts, const LogFn& log) {
    if (opts.out.empty()) throw UsageError("sweep: --out is required");
    RunConfig c = cfg;
    if (opts.seed) c.sweep.master_seed = *opts.seed;
    const auto records = run_sweep(c, opts.threads, log);
    const std::string csv = metrics_csv(records);
    write_file(opts.out / "metrics.csv", csv);
    write_file(opts.out / "runtime.csv", runtime_csv(records));
    if (log) log("wrote " + std::to_string(records.size()) + " rows, digest " + digest_hex(csv));
}

std::string cmd_eval(const EvalOptions& opts) {
    const bool single = !opts.instance.empty() || !opts.result.empty();
    const bool dataset = !opts.dataset.empty() || !opts.results.empty();
    if (single == dataset) throw UsageError("eval: give --instance/--result or --dataset/--results");
    if (dataset) {
        if (opts.dataset.empty() || opts.results.empty()) throw UsageError("eval: --dataset needs --results");
        return eval_dataset(opts);
    }
    if (opts.instance.empty() || opts.result.empty()) throw UsageError("eval: --instance needs --result");
    sfgp_instance* raw = nullptr;
    check(sfgp_instance_read(opts.instance.string().c_str(), &raw), "reading instance");
    const InstancePtr inst(raw);
    const std::string text = metrics_json(evaluate_dir(inst.get(), opts.result)).dump(1) + "\n";
    if (!opts.out.empty()) write_file(opts.out, text);
    return text;
}

}  // namespace sfgp::cli
