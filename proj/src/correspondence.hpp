// Soft correspondences between the deformed reference and the target, and
// their conversion into multi-annotator labels.

#pragma once

#include "gpr.hpp"

#include <utility>

namespace sfgp {

struct ResponsibilityInputs {
    const PointSet& target;
    const PointSet& deformed_ref;
    const Vector& sigma2;    // per reference point
    const Vector& post_var;  // per reference point, Tr(Sigma^i) = d * post_var_i
    double omega;
};

struct Responsibilities {
    Matrix P;  // N_R x N_S
    /// Columns where every component density underflowed with omega = 0;
    /// those columns are returned as zeros.
    std::size_t underflow_columns = 0;
};

/// p_ij = (1-w)<phi_ij> / (w N_R/N_S + (1-w) sum_i' <phi_i'j>), evaluated in
/// log space per column.
Responsibilities responsibilities(const ResponsibilityInputs& in);

/// sigma2_i / p_ij; nullopt when p_ij == 0 or the quotient overflows (the
/// pair never becomes a label).
std::optional<double> annotator_variance(double sigma2_i, double p_ij);

/// Partitions the reference into inliers and missing points. nu is the full
/// row sum of P regardless of the threshold.
CorrespondenceState threshold(Matrix P, double p_min, ThresholdMode mode);

using CorrespondenceOutput = std::pair<CorrespondenceState, AnnotatedDeformations>;

/// One correspondence step. Labels are deformations of the original
/// `reference` (s_j - r_i); responsibilities are evaluated at the deformed
/// reference carried in `in`. Throws Error(AllMissing) when no inlier remains.
CorrespondenceOutput get_correspondences(const ResponsibilityInputs& in, const PointSet& reference, double p_min,
                                         ThresholdMode mode, std::size_t* underflow_columns = nullptr);

/// Hard assignment baseline: every reference point is labelled by its
/// Euclidean-nearest target point (lowest index on ties) with variance sigma_n2.
CorrespondenceOutput closest_point_correspondence(const PointSet& target, const PointSet& deformed_ref,
                                                  const PointSet& reference, double sigma_n2);

}  // namespace sfgp
