#include <sfgp/sfgp.h>

#include "io.hpp"
#include "metrics.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <new>

using namespace sfgp;

struct sfgp_pointset {
    PointSet rep;
};

struct sfgp_kernel {
    KernelSpec rep;
};

struct sfgp_result {
    RegistrationResult rep;
    sfgp_pointset deformed;
};

struct sfgp_instance {
    SyntheticInstance rep;
    sfgp_pointset target;
    sfgp_pointset ground_truth;
};

namespace {

thread_local std::string g_last_error;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

sfgp_status fail(sfgp_status status, const std::string& message) {
    g_last_error = message;
    return status;
}

template <typename F>
sfgp_status guard(F&& body) {
    try {
        body();
        g_last_error.clear();
        return SFGP_OK;
    } catch (const Error& e) {
        return fail(static_cast<sfgp_status>(e.code()), e.what());
    } catch (const std::bad_alloc&) {
        return fail(SFGP_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(SFGP_ERR_INTERNAL, e.what());
    }
}

void require(bool cond, const char* what) {
    if (!cond) throw Error(ErrorCode::InvalidArgument, what);
}

RegistrationConfig to_config(const sfgp_config& c) {
    RegistrationConfig cfg;
    cfg.omega = c.omega;
    cfg.p_min = c.p_min;
    if (!std::isnan(c.sigma2_init)) cfg.sigma2_init = c.sigma2_init;
    cfg.max_iters = c.max_iters;
    cfg.rel_tol = c.rel_tol;
    if (!std::isnan(c.jitter)) cfg.jitter = c.jitter;
    cfg.variance_mode = c.variance_mode == SFGP_VARIANCE_SCALAR ? VarianceMode::Scalar : VarianceMode::PerPoint;
    cfg.threshold_mode = c.threshold_mode == SFGP_THRESHOLD_OFF ? ThresholdMode::Off : ThresholdMode::On;
    cfg.correspondence_mode = c.correspondence_mode == SFGP_CORRESPONDENCE_CLOSEST_POINT
                                  ? CorrespondenceMode::ClosestPoint
                                  : CorrespondenceMode::MultiAnnotator;
    cfg.precenter = c.precenter != 0;
    cfg.seed = c.seed;
    return cfg;
}

PerturbationSpec to_spec(const sfgp_perturbation& p) {
    PerturbationSpec s;
    s.warp_amplitude = p.warp_amplitude;
    s.warp_bandwidth = p.warp_bandwidth;
    s.warp_controls = p.warp_controls;
    s.missing_width = p.missing_width;
    if (p.missing_center >= 0) s.missing_center = static_cast<Index>(p.missing_center);
    s.outlier_ratio = p.outlier_ratio;
    s.noise_std = p.noise_std;
    s.rotation_max = p.rotation_max;
    s.seed = p.seed;
    return s;
}

sfgp_iteration to_c(const IterationRecord& r) {
    return {r.iter,
            r.mean_displacement_change,
            static_cast<size_t>(r.n_inliers),
            static_cast<size_t>(r.n_missing),
            r.mean_sigma2,
            r.elapsed_ms};
}

sfgp_instance* wrap(SyntheticInstance inst) {
    auto* out = new sfgp_instance{std::move(inst), {}, {}};
    out->target.rep = out->rep.target;
    out->ground_truth.rep = out->rep.ground_truth;
    return out;
}

double opt_or_nan(const std::optional<double>& v) { return v ? *v : kNaN; }

void fill_metrics(const PointSet& deformed, std::span<const Index> missing, const SyntheticInstance& inst,
                  sfgp_metrics& m) {
    m.error_all = opt_or_nan(mean_sq_distance(deformed, inst, Subset::All));
    m.error_missing = opt_or_nan(mean_sq_distance(deformed, inst, Subset::Missing));
    m.error_nonmissing = opt_or_nan(mean_sq_distance(deformed, inst, Subset::NonMissing));
    const Detection det = missing_detection(missing, inst);
    m.recall = opt_or_nan(det.recall);
    m.precision = opt_or_nan(det.precision);
}

}  // namespace

extern "C" {

const char* sfgp_version(void) { return "0.1.0"; }

const char* sfgp_status_string(sfgp_status status) {
    switch (status) {
        case SFGP_OK: return "ok";
        case SFGP_ERR_INVALID_ARGUMENT: return "invalid argument";
        case SFGP_ERR_INVALID_CONFIG: return "invalid configuration";
        case SFGP_ERR_NUMERICAL: return "numerical failure";
        case SFGP_ERR_ANCHOR_MISMATCH: return "anchor mismatch";
        case SFGP_ERR_RANK_TOO_LARGE: return "rank too large";
        case SFGP_ERR_UNSUPPORTED: return "unsupported operation";
        case SFGP_ERR_DEGENERATE: return "degenerate instance";
        case SFGP_ERR_NO_MASS: return "no correspondence mass";
        case SFGP_ERR_ALL_MISSING: return "all points missing";
        case SFGP_ERR_NO_ANNOTATION: return "no annotation";
        case SFGP_ERR_IO: return "i/o error";
        case SFGP_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

const char* sfgp_last_error(void) { return g_last_error.c_str(); }

sfgp_status sfgp_pointset_create(const double* coords, size_t n, int dim, sfgp_pointset** out) {
    return guard([&] {
        require(out != nullptr, "out is null");
        require(coords != nullptr || n == 0, "coords is null");
        auto flat = std::span<const double>(coords, n * static_cast<size_t>(dim > 0 ? dim : 0));
        *out = new sfgp_pointset{PointSet::from_flat(flat, dim)};
    });
}

void sfgp_pointset_free(sfgp_pointset* points) { delete points; }

size_t sfgp_pointset_size(const sfgp_pointset* points) {
    return points ? static_cast<size_t>(points->rep.size()) : 0;
}

int sfgp_pointset_dim(const sfgp_pointset* points) { return points ? points->rep.dim() : 0; }

const double* sfgp_pointset_coords(const sfgp_pointset* points) {
    return points ? points->rep.coords().data() : nullptr;
}

sfgp_status sfgp_pointset_read_csv(const char* path, sfgp_pointset** out) {
    return guard([&] {
        require(path && out, "null argument");
        *out = new sfgp_pointset{io::read_points_csv(path)};
    });
}

sfgp_status sfgp_pointset_write_csv(const sfgp_pointset* points, const char* path) {
    return guard([&] {
        require(points && path, "null argument");
        io::write_points_csv(points->rep, path);
    });
}

double sfgp_pointset_mean_nn_distance(const sfgp_pointset* points) {
    if (!points || points->rep.size() < 2) return kNaN;
    return mean_nearest_neighbor_distance(points->rep);
}

sfgp_status sfgp_fish_reference(sfgp_pointset** out) {
    return guard([&] {
        require(out != nullptr, "out is null");
        *out = new sfgp_pointset{fish_reference()};
    });
}

void sfgp_config_default(sfgp_config* cfg) {
    if (!cfg) return;
    const RegistrationConfig d;
    cfg->omega = d.omega;
    cfg->p_min = d.p_min;
    cfg->sigma2_init = kNaN;
    cfg->max_iters = d.max_iters;
    cfg->rel_tol = d.rel_tol;
    cfg->jitter = kNaN;
    cfg->variance_mode = SFGP_VARIANCE_PER_POINT;
    cfg->threshold_mode = SFGP_THRESHOLD_ON;
    cfg->correspondence_mode = SFGP_CORRESPONDENCE_MULTI_ANNOTATOR;
    cfg->precenter = 0;
    cfg->seed = 0;
}

sfgp_status sfgp_config_validate(const sfgp_config* cfg) {
    return guard([&] {
        require(cfg != nullptr, "cfg is null");
        validate_config(to_config(*cfg));
    });
}

size_t sfgp_variant_count(void) { return all_variants().size(); }

const char* sfgp_variant_name(size_t index) {
    const auto& v = all_variants();
    if (index >= v.size()) return nullptr;
    return variant_name(v[index]).data();
}

sfgp_status sfgp_config_apply_variant(sfgp_config* cfg, const char* name) {
    return guard([&] {
        require(cfg && name, "null argument");
        const auto variant = parse_variant(name);
        if (!variant) {
            std::string names;
            for (Variant v : all_variants()) {
                if (!names.empty()) names += ", ";
                names += variant_name(v);
            }
            throw Error(ErrorCode::InvalidArgument,
                        std::string("unknown variant '") + name + "' (expected one of: " + names + ")");
        }
        const RegistrationConfig applied = with_variant(to_config(*cfg), *variant);
        cfg->variance_mode =
            applied.variance_mode == VarianceMode::Scalar ? SFGP_VARIANCE_SCALAR : SFGP_VARIANCE_PER_POINT;
        cfg->threshold_mode = applied.threshold_mode == ThresholdMode::Off ? SFGP_THRESHOLD_OFF : SFGP_THRESHOLD_ON;
        cfg->correspondence_mode = applied.correspondence_mode == CorrespondenceMode::ClosestPoint
                                       ? SFGP_CORRESPONDENCE_CLOSEST_POINT
                                       : SFGP_CORRESPONDENCE_MULTI_ANNOTATOR;
    });
}

sfgp_status sfgp_kernel_se(double amplitude2, double lengthscale, sfgp_kernel** out) {
    return guard([&] {
        require(out != nullptr, "out is null");
        *out = new sfgp_kernel{squared_exponential(amplitude2, lengthscale)};
    });
}

sfgp_status sfgp_kernel_sum(const sfgp_kernel* const* terms, size_t n_terms, sfgp_kernel** out) {
    return guard([&] {
        require(out && (terms || n_terms == 0), "null argument");
        std::vector<KernelSpec> specs;
        for (size_t i = 0; i < n_terms; ++i) {
            require(terms[i] != nullptr, "null kernel term");
            specs.push_back(terms[i]->rep);
        }
        *out = new sfgp_kernel{sum_kernel(std::move(specs))};
    });
}

sfgp_status sfgp_kernel_scaled(double factor, const sfgp_kernel* inner, sfgp_kernel** out) {
    return guard([&] {
        require(inner && out, "null argument");
        *out = new sfgp_kernel{scaled_kernel(factor, inner->rep)};
    });
}

sfgp_status sfgp_kernel_pca_build(const double* samples, size_t n_samples, const sfgp_pointset* anchor,
                                  size_t rank, sfgp_kernel** out) {
    return guard([&] {
        require(samples && anchor && out, "null argument");
        const Index len = anchor->rep.size() * anchor->rep.dim();
        const Matrix m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            samples, static_cast<Index>(n_samples), len);
        *out = new sfgp_kernel{build_pca_kernel(m, static_cast<Index>(rank), anchor->rep)};
    });
}

sfgp_status sfgp_kernel_pca_save(const sfgp_kernel* kernel, const char* path) {
    return guard([&] {
        require(kernel && path, "null argument");
        const auto* pca = std::get_if<PcaKernel>(&kernel->rep.node);
        if (!pca) throw Error(ErrorCode::Unsupported, "only a bare PCA kernel can be saved");
        save_pca_spectrum(*pca->spectrum, path);
    });
}

sfgp_status sfgp_kernel_pca_load(const char* path, const sfgp_pointset* anchor, sfgp_kernel** out) {
    return guard([&] {
        require(path && anchor && out, "null argument");
        PcaSpectrum s = load_pca_spectrum(path, anchor->rep);
        *out = new sfgp_kernel{pca_kernel(std::move(s.eigenvalues), std::move(s.eigenvectors), std::move(s.anchor))};
    });
}

sfgp_status sfgp_kernel_eval(const sfgp_kernel* kernel, const double* x, const double* y, int dim, double* out) {
    return guard([&] {
        require(kernel && x && y && out, "null argument");
        require(dim == 2 || dim == 3, "dim must be 2 or 3");
        const auto n = static_cast<size_t>(dim);
        *out = eval_scalar_kernel(kernel->rep, {x, n}, {y, n});
    });
}

void sfgp_kernel_free(sfgp_kernel* kernel) { delete kernel; }

sfgp_status sfgp_register(const sfgp_pointset* reference, const sfgp_pointset* target, const sfgp_kernel* kernel,
                          const sfgp_config* cfg, sfgp_trace_fn trace, void* user, sfgp_result** out) {
    return guard([&] {
        require(reference && target && kernel && cfg && out, "null argument");
        RegisterOptions opts;
        if (trace) {
            opts.on_iteration = [trace, user](const IterationRecord& r) {
                const sfgp_iteration rec = to_c(r);
                trace(&rec, user);
            };
        }
        auto result = std::make_unique<sfgp_result>();
        result->rep = register_shape(reference->rep, target->rep, kernel->rep, to_config(*cfg), opts);
        result->deformed.rep = result->rep.deformed_reference;
        *out = result.release();
    });
}

sfgp_status sfgp_result_info_get(const sfgp_result* result, sfgp_result_info* info) {
    return guard([&] {
        require(result && info, "null argument");
        const auto& r = result->rep;
        info->iters = r.iters;
        info->converged = r.converged;
        info->failed = r.failed;
        info->collapsed = r.collapsed;
        info->n_inliers = r.state.inliers.size();
        info->n_missing = r.state.missing.size();
        info->min_sigma2 = r.min_sigma2;
        info->jitter = r.jitter;
        info->underflow_columns = r.underflow_columns;
        info->all_finite = r.deformed_reference.coords().allFinite() && r.sigma2.allFinite() &&
                           r.posterior.mu.allFinite() && r.posterior.var_diag.allFinite();
    });
}

const sfgp_pointset* sfgp_result_deformed(const sfgp_result* result) {
    return result ? &result->deformed : nullptr;
}

size_t sfgp_result_missing(const sfgp_result* result, size_t* out, size_t capacity) {
    if (!result) return 0;
    const auto& m = result->rep.state.missing;
    if (out) {
        for (size_t i = 0; i < m.size() && i < capacity; ++i) out[i] = static_cast<size_t>(m[i]);
    }
    return m.size();
}

const double* sfgp_result_sigma2(const sfgp_result* result, size_t* n) {
    if (!result) return nullptr;
    if (n) *n = static_cast<size_t>(result->rep.sigma2.size());
    return result->rep.sigma2.data();
}

size_t sfgp_result_trace(const sfgp_result* result, sfgp_iteration* out, size_t capacity) {
    if (!result) return 0;
    const auto& t = result->rep.trace;
    if (out) {
        for (size_t i = 0; i < t.size() && i < capacity; ++i) out[i] = to_c(t[i]);
    }
    return t.size();
}

sfgp_status sfgp_result_write_summary(const sfgp_result* result, const char* path) {
    return guard([&] {
        require(result && path, "null argument");
        io::write_text_atomic(path, io::result_summary_json(result->rep));
    });
}

sfgp_status sfgp_result_write_trace(const sfgp_result* result, const char* path) {
    return guard([&] {
        require(result && path, "null argument");
        std::string text;
        for (const auto& r : result->rep.trace) text += format_trace_record(r) + "\n";
        io::write_text_atomic(path, text);
    });
}

void sfgp_result_free(sfgp_result* result) { delete result; }

void sfgp_perturbation_default(sfgp_perturbation* spec) {
    if (!spec) return;
    const PerturbationSpec d;
    spec->warp_amplitude = d.warp_amplitude;
    spec->warp_bandwidth = d.warp_bandwidth;
    spec->warp_controls = d.warp_controls;
    spec->missing_width = d.missing_width;
    spec->missing_center = -1;
    spec->outlier_ratio = d.outlier_ratio;
    spec->noise_std = d.noise_std;
    spec->rotation_max = d.rotation_max;
    spec->seed = d.seed;
}

sfgp_status sfgp_perturbation_from_levels(int deformation_level, int noise_level, sfgp_perturbation* spec) {
    return guard([&] {
        require(spec != nullptr, "spec is null");
        require(deformation_level >= 0 && noise_level >= 0, "levels must be non-negative");
        sfgp_perturbation_default(spec);
        spec->warp_amplitude = deformation_level_amplitude(deformation_level);
        spec->noise_std = noise_level_std(noise_level);
        spec->rotation_max = 0.1;
    });
}

sfgp_status sfgp_generate(const sfgp_pointset* reference, const sfgp_perturbation* spec, sfgp_instance** out) {
    return guard([&] {
        require(reference && spec && out, "null argument");
        *out = wrap(generate(reference->rep, to_spec(*spec)));
    });
}

const sfgp_pointset* sfgp_instance_target(const sfgp_instance* instance) {
    return instance ? &instance->target : nullptr;
}

const sfgp_pointset* sfgp_instance_ground_truth(const sfgp_instance* instance) {
    return instance ? &instance->ground_truth : nullptr;
}

const unsigned char* sfgp_instance_missing_mask(const sfgp_instance* instance, size_t* n) {
    if (!instance) return nullptr;
    if (n) *n = instance->rep.missing_mask.size();
    return instance->rep.missing_mask.data();
}

const unsigned char* sfgp_instance_outlier_mask(const sfgp_instance* instance, size_t* n) {
    if (!instance) return nullptr;
    if (n) *n = instance->rep.outlier_mask.size();
    return instance->rep.outlier_mask.data();
}

sfgp_status sfgp_instance_write(const sfgp_instance* instance, const char* dir) {
    return guard([&] {
        require(instance && dir, "null argument");
        io::write_instance(instance->rep, dir);
    });
}

sfgp_status sfgp_instance_read(const char* dir, sfgp_instance** out) {
    return guard([&] {
        require(dir && out, "null argument");
        *out = wrap(io::read_instance(dir));
    });
}

void sfgp_instance_free(sfgp_instance* instance) { delete instance; }

uint64_t sfgp_derive_seed(uint64_t master, uint64_t stream, uint64_t index) {
    return derive_seed(master, stream, index);
}

sfgp_status sfgp_evaluate(const sfgp_result* result, const sfgp_instance* instance, sfgp_metrics* out) {
    return guard([&] {
        require(result && instance && out, "null argument");
        out->success = !result->rep.failed;
        if (result->rep.failed) {
            out->error_all = out->error_missing = out->error_nonmissing = kNaN;
            const Detection det = missing_detection(result->rep.state.missing, instance->rep);
            out->recall = opt_or_nan(det.recall);
            out->precision = opt_or_nan(det.precision);
            return;
        }
        fill_metrics(result->rep.deformed_reference, result->rep.state.missing, instance->rep, *out);
    });
}

sfgp_status sfgp_evaluate_points(const sfgp_pointset* deformed, const size_t* missing, size_t n_missing,
                                 const sfgp_instance* instance, sfgp_metrics* out) {
    return guard([&] {
        require(deformed && instance && out && (missing || n_missing == 0), "null argument");
        std::vector<Index> m(missing, missing + n_missing);
        out->success = 1;
        fill_metrics(deformed->rep, m, instance->rep, *out);
    });
}

sfgp_status sfgp_success_ratio(const int* failed, size_t n, double* out) {
    return guard([&] {
        require(out && (failed || n == 0), "null argument");
        std::unique_ptr<bool[]> flags(new bool[n]);
        for (size_t i = 0; i < n; ++i) flags[i] = failed[i] != 0;
        *out = success_ratio(std::span<const bool>(flags.get(), n));
    });
}

}  // extern "C"
