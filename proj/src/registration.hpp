// Outer fitting loop: correspondences -> GP posterior -> deformed reference ->
// registration variance, repeated until the displacement field settles.

#pragma once

#include "correspondence.hpp"

#include <functional>

namespace sfgp {

struct IterationRecord {
    int iter = 0;
    double mean_displacement_change = 0.0;
    Index n_inliers = 0;
    Index n_missing = 0;
    double mean_sigma2 = 0.0;
    double elapsed_ms = 0.0;
};

/// One `key=value` line per iteration.
std::string format_trace_record(const IterationRecord& rec);

struct RegistrationResult {
    PointSet deformed_reference;
    CorrespondenceState state;
    Vector sigma2;
    PosteriorDeformation posterior;
    int iters = 0;
    bool converged = false;
    /// No correspondence at all in the first iteration.
    bool failed = false;
    /// Every point became missing after the first iteration; the last valid
    /// estimate is kept.
    bool collapsed = false;
    std::vector<IterationRecord> trace;

    // Numerical diagnostics accumulated over all iterations.
    double min_sigma2 = 0.0;
    std::size_t underflow_columns = 0;
    double jitter = 0.0;
};

struct RegisterOptions {
    std::function<void(const IterationRecord&)> on_iteration;
};

/// Registration variance update. Per-point mode:
///   s2_i = (sum_j p_ij |s_j - rbar_i|^2 / nu_i + d * post_var_i) / d,
/// keeping `previous` where nu_i = 0. Scalar mode pools all points into one
/// value. Output is floored at 1e-12. Throws Error(NoMass) if every nu_i is 0.
Vector update_sigma2(const Matrix& P, const Vector& nu, const PointSet& target, const PointSet& deformed_ref,
                     const Vector& post_var, VarianceMode mode, const Vector& previous);

inline constexpr double kSigma2Floor = 1e-12;

RegistrationResult register_shape(const PointSet& reference, const PointSet& target, const KernelSpec& kernel,
                                  const RegistrationConfig& cfg, const RegisterOptions& options = {});

/// Same, with a Gram matrix already assembled on `reference` (reused across
/// targets in batch runs).
RegistrationResult register_shape(const PointSet& reference, const GramMatrix& gram, const PointSet& target,
                                  const RegistrationConfig& cfg, const RegisterOptions& options = {});

}  // namespace sfgp
