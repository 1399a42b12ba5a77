// Heteroscedastic GP regression of reference deformations and the
// multi-annotator label fusion feeding it.

#pragma once

#include "kernels.hpp"

namespace sfgp {

/// One noisy label for reference point `ref_index`, proposed by target point
/// `target_index`.
struct Annotation {
    Index ref_index;
    Index target_index;
    Vector deformation;
    double variance;
};

struct AggregatedLabel {
    Vector delta_hat;
    double sigma2_eff;
};

/// Precision-weighted fusion: 1/s2 = sum 1/s2_j, delta = s2 * sum delta_j / s2_j.
/// Throws Error(NoAnnotation) on an empty list.
AggregatedLabel aggregate_annotations(std::span<const Annotation> annotations);

/// Posterior over the deformations of every reference point given labels at
/// the inliers:
///   mu    = K_{C,R}^T (K_{C,C} + D)^{-1} delta_hat
///   Sigma = K - K_{C,R}^T (K_{C,C} + D)^{-1} K_{C,R}
/// `delta_hat` and `sigma2_eff` are indexed like `inliers`. The jitter is only
/// added when the plain factorization fails.
PosteriorDeformation gpr_posterior(const GramMatrix& gram, std::span<const Index> inliers,
                                   const Coords& delta_hat, const Vector& sigma2_eff, double jitter);

}  // namespace sfgp
