#include "registration.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace sfgp {

std::string format_trace_record(const IterationRecord& rec) {
    std::ostringstream out;
    out.precision(9);
    out << "iter=" << rec.iter << " mean_disp_change=" << rec.mean_displacement_change
        << " n_inliers=" << rec.n_inliers << " n_missing=" << rec.n_missing << " mean_sigma2=" << rec.mean_sigma2
        << " elapsed_ms=" << rec.elapsed_ms;
    return out.str();
}

Vector update_sigma2(const Matrix& P, const Vector& nu, const PointSet& target, const PointSet& deformed_ref,
                     const Vector& post_var, VarianceMode mode, const Vector& previous) {
    const Index nr = deformed_ref.size();
    const int d = deformed_ref.dim();
    if (P.rows() != nr || P.cols() != target.size() || nu.size() != nr || post_var.size() != nr ||
        previous.size() != nr) {
        throw Error(ErrorCode::InvalidArgument, "variance update inputs have inconsistent sizes");
    }
    if ((nu.array() <= 0.0).all()) {
        throw Error(ErrorCode::NoMass, "no reference point carries responsibility mass");
    }

    // Weighted squared residual per reference point.
    Vector residual(nr);
    for (Index i = 0; i < nr; ++i) {
        double acc = 0.0;
        for (Index j = 0; j < P.cols(); ++j) {
            const double p = P(i, j);
            if (p != 0.0) acc += p * (target.point(j) - deformed_ref.point(i)).squaredNorm();
        }
        residual[i] = acc;
    }

    Vector out(nr);
    if (mode == VarianceMode::PerPoint) {
        for (Index i = 0; i < nr; ++i) {
            out[i] = nu[i] > 0.0 ? (residual[i] / nu[i] + d * post_var[i]) / d : previous[i];
        }
    } else {
        const double mass = nu.sum();
        const double value = (residual.sum() + d * nu.dot(post_var)) / (d * mass);
        out.setConstant(value);
    }
    return out.cwiseMax(kSigma2Floor);
}

namespace {

double mean_row_norm(const Coords& m) {
    return m.rows() ? m.rowwise().norm().mean() : 0.0;
}

}  // namespace

RegistrationResult register_shape(const PointSet& reference, const PointSet& target, const KernelSpec& kernel,
                                  const RegistrationConfig& cfg, const RegisterOptions& options) {
    const RegistrationConfig checked = validate_config(cfg);
    const GramMatrix gram = assemble_gram(kernel, reference, checked.jitter);
    return register_shape(reference, gram, target, checked, options);
}

RegistrationResult register_shape(const PointSet& reference, const GramMatrix& gram, const PointSet& target,
                                  const RegistrationConfig& cfg_in, const RegisterOptions& options) {
    const RegistrationConfig cfg = validate_config(cfg_in);
    if (reference.dim() != target.dim()) {
        throw Error(ErrorCode::InvalidArgument, "reference and target differ in dimension");
    }
    if (gram.size() != reference.size() || gram.dim != reference.dim()) {
        throw Error(ErrorCode::InvalidArgument, "Gram matrix was not assembled on this reference");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const Index nr = reference.size();
    const int d = reference.dim();

    PointSet r = reference;
    if (cfg.precenter) {
        Coords shifted = reference.coords();
        shifted.rowwise() += centroid(target) - centroid(reference);
        r = PointSet(std::move(shifted));
    }

    const double nn = mean_nearest_neighbor_distance(reference);
    const double sigma2_0 = cfg.sigma2_init ? *cfg.sigma2_init : (nn > 0.0 ? nn * nn : 1.0);
    const double jitter = cfg.jitter ? *cfg.jitter : gram.jitter;
    const double disp_floor = 1e-12 * (nn > 0.0 ? nn : 1.0);

    RegistrationResult res;
    res.jitter = jitter;
    res.sigma2 = Vector::Constant(nr, sigma2_0);
    res.min_sigma2 = sigma2_0;
    res.deformed_reference = r;
    res.posterior.mu = Coords::Zero(nr, d);
    res.posterior.var_diag = Vector::Zero(nr);

    Vector post_var = Vector::Zero(nr);
    for (int it = 1; it <= cfg.max_iters; ++it) {
        res.iters = it;
        CorrespondenceOutput corr;
        try {
            if (cfg.correspondence_mode == CorrespondenceMode::ClosestPoint) {
                corr = closest_point_correspondence(target, res.deformed_reference, r, sigma2_0);
            } else {
                std::size_t underflow = 0;
                const ResponsibilityInputs in{target, res.deformed_reference, res.sigma2, post_var, cfg.omega};
                corr = get_correspondences(in, r, cfg.p_min, cfg.threshold_mode, &underflow);
                res.underflow_columns += underflow;
            }
        } catch (const Error& e) {
            if (e.code() != ErrorCode::AllMissing) throw;
            if (it == 1) {
                res.failed = true;
            } else {
                res.collapsed = true;
            }
            break;
        }
        auto& [state, labels] = corr;

        PosteriorDeformation post;
        try {
            post = gpr_posterior(gram, state.inliers, labels.delta_hat, labels.sigma2_eff, jitter);
        } catch (const Error& e) {
            throw Error(e.code(), "iteration " + std::to_string(it) + ": " + e.what());
        }

        Coords deformed = r.coords() + post.mu;
        if (!deformed.allFinite() || !post.var_diag.allFinite()) {
            throw Error(ErrorCode::Numerical, "iteration " + std::to_string(it) + ": non-finite deformation");
        }
        const double change = mean_row_norm(post.mu - res.posterior.mu);
        const double magnitude = mean_row_norm(post.mu);

        res.deformed_reference = PointSet(std::move(deformed));
        post_var = post.var_diag.cwiseMax(0.0);
        if (cfg.correspondence_mode == CorrespondenceMode::MultiAnnotator) {
            res.sigma2 = update_sigma2(state.P, state.nu, target, res.deformed_reference, post_var,
                                       cfg.variance_mode, res.sigma2);
            res.min_sigma2 = std::min(res.min_sigma2, res.sigma2.minCoeff());
        }
        res.posterior = std::move(post);
        res.state = std::move(state);

        IterationRecord rec;
        rec.iter = it;
        rec.mean_displacement_change = change;
        rec.n_inliers = static_cast<Index>(res.state.inliers.size());
        rec.n_missing = static_cast<Index>(res.state.missing.size());
        rec.mean_sigma2 = res.sigma2.mean();
        rec.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        res.trace.push_back(rec);
        if (options.on_iteration) options.on_iteration(rec);

        if (change / std::max(magnitude, disp_floor) < cfg.rel_tol) {
            res.converged = true;
            break;
        }
    }
    return res;
}

}  // namespace sfgp
