#include "correspondence.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace sfgp {

namespace {

void check_same_dim(const PointSet& a, const PointSet& b) {
    if (a.dim() != b.dim()) throw Error(ErrorCode::InvalidArgument, "point sets differ in dimension");
}

}  // namespace

Responsibilities responsibilities(const ResponsibilityInputs& in) {
    const PointSet& s = in.target;
    const PointSet& rbar = in.deformed_ref;
    check_same_dim(s, rbar);
    const Index nr = rbar.size();
    const Index ns = s.size();
    const int d = rbar.dim();
    if (in.sigma2.size() != nr || in.post_var.size() != nr) {
        throw Error(ErrorCode::InvalidArgument, "variance vectors must have one entry per reference point");
    }
    if (!(in.omega >= 0.0 && in.omega < 1.0)) throw Error(ErrorCode::InvalidArgument, "omega must be in [0, 1)");

    // Per-row constant part of log <phi_ij>.
    Vector row_const(nr);
    Vector inv_two_s2(nr);
    for (Index i = 0; i < nr; ++i) {
        const double s2 = in.sigma2[i];
        if (!(s2 > 0.0)) throw Error(ErrorCode::InvalidArgument, "registration variances must be positive");
        if (!(in.post_var[i] >= 0.0)) throw Error(ErrorCode::InvalidArgument, "posterior variances must be >= 0");
        inv_two_s2[i] = 0.5 / s2;
        row_const[i] = -0.5 * d * std::log(2.0 * std::numbers::pi * s2) - d * in.post_var[i] * inv_two_s2[i];
    }

    const double log_inlier = std::log1p(-in.omega);
    const double log_outlier =
        in.omega > 0.0 ? std::log(in.omega * static_cast<double>(nr) / static_cast<double>(ns))
                       : -std::numeric_limits<double>::infinity();

    Responsibilities out;
    out.P.resize(nr, ns);
    Vector logphi(nr);
    for (Index j = 0; j < ns; ++j) {
        double top = -std::numeric_limits<double>::infinity();
        for (Index i = 0; i < nr; ++i) {
            const double dist2 = (s.point(j) - rbar.point(i)).squaredNorm();
            logphi[i] = row_const[i] - dist2 * inv_two_s2[i];
            if (logphi[i] > top) top = logphi[i];
        }
        if (!std::isfinite(top)) {
            out.P.col(j).setZero();
            if (in.omega == 0.0) ++out.underflow_columns;
            continue;
        }
        const double lse = top + std::log((logphi.array() - top).exp().sum());
        double log_den = log_inlier + lse;
        if (in.omega > 0.0) {
            const double hi = std::max(log_den, log_outlier);
            log_den = hi + std::log(std::exp(log_den - hi) + std::exp(log_outlier - hi));
        }
        for (Index i = 0; i < nr; ++i) {
            out.P(i, j) = std::min(1.0, std::exp(log_inlier + logphi[i] - log_den));
        }
    }
    return out;
}

std::optional<double> annotator_variance(double sigma2_i, double p_ij) {
    if (!(sigma2_i > 0.0)) throw Error(ErrorCode::InvalidArgument, "registration variance must be positive");
    if (!(p_ij >= 0.0 && p_ij <= 1.0)) throw Error(ErrorCode::InvalidArgument, "responsibility must be in [0, 1]");
    if (p_ij == 0.0) return std::nullopt;
    const double v = sigma2_i / p_ij;
    if (!std::isfinite(v)) return std::nullopt;
    return v;
}

CorrespondenceState threshold(Matrix P, double p_min, ThresholdMode mode) {
    CorrespondenceState state;
    const Index nr = P.rows();
    const double cut = mode == ThresholdMode::On ? p_min : 0.0;
    state.nu = P.rowwise().sum();
    state.corr_sets.resize(static_cast<std::size_t>(nr));
    for (Index i = 0; i < nr; ++i) {
        auto& set = state.corr_sets[static_cast<std::size_t>(i)];
        for (Index j = 0; j < P.cols(); ++j) {
            if (P(i, j) > cut) set.push_back(j);
        }
        (set.empty() ? state.missing : state.inliers).push_back(i);
    }
    state.P = std::move(P);
    return state;
}

CorrespondenceOutput get_correspondences(const ResponsibilityInputs& in, const PointSet& reference, double p_min,
                                         ThresholdMode mode, std::size_t* underflow_columns) {
    check_same_dim(reference, in.deformed_ref);
    if (reference.size() != in.deformed_ref.size()) {
        throw Error(ErrorCode::InvalidArgument, "reference and deformed reference differ in size");
    }
    Responsibilities resp = responsibilities(in);
    if (underflow_columns) *underflow_columns = resp.underflow_columns;
    CorrespondenceState state = threshold(std::move(resp.P), p_min, mode);
    // Without a threshold a pair can carry so little mass that sigma2 / p
    // overflows. Its precision is zero in double precision, so it is dropped,
    // and a point left with no pair at all joins the missing set.
    bool pruned = false;
    for (Index i : state.inliers) {
        auto& set = state.corr_sets[static_cast<std::size_t>(i)];
        const auto n = set.size();
        std::erase_if(set, [&](Index j) { return !annotator_variance(in.sigma2[i], state.P(i, j)); });
        pruned = pruned || set.size() != n;
    }
    if (pruned) {
        state.inliers.clear();
        state.missing.clear();
        for (Index i = 0; i < state.P.rows(); ++i) {
            (state.corr_sets[static_cast<std::size_t>(i)].empty() ? state.missing : state.inliers).push_back(i);
        }
    }
    if (state.inliers.empty()) {
        throw Error(ErrorCode::AllMissing, "no reference point has a correspondence above p_min");
    }

    const int d = reference.dim();
    AnnotatedDeformations labels;
    labels.delta_hat.resize(static_cast<Index>(state.inliers.size()), d);
    labels.sigma2_eff.resize(static_cast<Index>(state.inliers.size()));

    std::vector<Annotation> annotations;
    for (std::size_t c = 0; c < state.inliers.size(); ++c) {
        const Index i = state.inliers[c];
        annotations.clear();
        for (Index j : state.corr_sets[static_cast<std::size_t>(i)]) {
            const auto var = annotator_variance(in.sigma2[i], state.P(i, j));
            if (!var) continue;
            annotations.push_back({i, j, (in.target.point(j) - reference.point(i)).transpose(), *var});
            labels.annotator_var.push_back({i, j, *var});
        }
        const AggregatedLabel label = aggregate_annotations(annotations);
        labels.delta_hat.row(static_cast<Index>(c)) = label.delta_hat.transpose();
        labels.sigma2_eff[static_cast<Index>(c)] = label.sigma2_eff;
    }
    return {std::move(state), std::move(labels)};
}

CorrespondenceOutput closest_point_correspondence(const PointSet& target, const PointSet& deformed_ref,
                                                  const PointSet& reference, double sigma_n2) {
    check_same_dim(target, deformed_ref);
    check_same_dim(reference, deformed_ref);
    if (reference.size() != deformed_ref.size()) {
        throw Error(ErrorCode::InvalidArgument, "reference and deformed reference differ in size");
    }
    if (!(sigma_n2 > 0.0)) throw Error(ErrorCode::InvalidArgument, "closest-point noise variance must be positive");

    const Index nr = deformed_ref.size();
    const Index ns = target.size();
    CorrespondenceState state;
    state.P = Matrix::Zero(nr, ns);
    state.nu = Vector::Ones(nr);
    state.corr_sets.resize(static_cast<std::size_t>(nr));

    AnnotatedDeformations labels;
    labels.delta_hat.resize(nr, deformed_ref.dim());
    labels.sigma2_eff = Vector::Constant(nr, sigma_n2);
    for (Index i = 0; i < nr; ++i) {
        Index best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (Index j = 0; j < ns; ++j) {
            const double d2 = (target.point(j) - deformed_ref.point(i)).squaredNorm();
            if (d2 < best_d2) {
                best_d2 = d2;
                best = j;
            }
        }
        state.P(i, best) = 1.0;
        state.corr_sets[static_cast<std::size_t>(i)] = {best};
        state.inliers.push_back(i);
        labels.delta_hat.row(i) = target.point(best) - reference.point(i);
        labels.annotator_var.push_back({i, best, sigma_n2});
    }
    return {std::move(state), std::move(labels)};
}

}  // namespace sfgp
