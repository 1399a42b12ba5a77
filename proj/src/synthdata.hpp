// Seeded benchmark generator: RBF warps, structured missing regions, uniform
// outliers, Gaussian noise and a small rotation.

#pragma once

#include "core.hpp"

namespace sfgp {

struct PerturbationSpec {
    double warp_amplitude = 0.0;  // std of each RBF coefficient
    double warp_bandwidth = 0.5;
    int warp_controls = 8;
    double missing_width = 0.0;  // side of the axis-aligned box
    std::optional<Index> missing_center;  // reference index; unset = random
    double outlier_ratio = 0.0;  // outliers per reference point
    double noise_std = 0.0;
    double rotation_max = 0.0;  // radians
    std::uint64_t seed = 0;
};

void validate_perturbation(const PerturbationSpec& spec);

struct SyntheticInstance {
    PointSet target;
    PointSet ground_truth;  // complete, noise-free, indexed like the reference
    std::vector<std::uint8_t> missing_mask;  // per reference index
    std::vector<std::uint8_t> outlier_mask;  // per target index
    std::vector<Index> target_to_ref;  // -1 for outliers
    PerturbationSpec spec;
};

/// Gaussian RBF displacement field sum_k c_k exp(-|x - z_k|^2 / (2 beta^2)).
struct WarpField {
    Coords controls;
    Coords coefficients;
    double bandwidth = 1.0;

    Coords displacement(const Coords& points) const;
};

WarpField draw_warp_field(const PointSet& points, double amplitude, double bandwidth, int n_controls,
                          std::uint64_t seed);
PointSet warp_rbf(const PointSet& points, double amplitude, double bandwidth, int n_controls, std::uint64_t seed);

struct MissingResult {
    PointSet kept;
    std::vector<std::uint8_t> mask;  // 1 = removed
    std::vector<Index> kept_indices;
};

/// Removes every point inside the axis-aligned box of side `width` centred on
/// point `center_index`. Throws Error(Degenerate) if nothing would remain.
MissingResult apply_structured_missing(const PointSet& points, Index center_index, double width);

struct OutlierResult {
    PointSet points;
    std::vector<std::uint8_t> mask;  // 1 = appended outlier
};

/// Appends round(ratio * n_reference) points drawn uniformly in the bounding
/// box of `points` expanded 1.1x about its centre.
OutlierResult add_outliers(const PointSet& points, double ratio, std::uint64_t seed, Index n_reference);
inline OutlierResult add_outliers(const PointSet& points, double ratio, std::uint64_t seed) {
    return add_outliers(points, ratio, seed, points.size());
}

PointSet add_noise(const PointSet& points, double std_dev, std::uint64_t seed);

/// Rotation about the centroid. In 2D `axis` is ignored.
PointSet rotate_about_centroid(const PointSet& points, double angle, const Eigen::Vector3d& axis = {0, 0, 1});

/// warp -> rotation (ground truth), then missing -> outliers -> noise (target).
SyntheticInstance generate(const PointSet& reference, const PerturbationSpec& spec);

/// 98-point closed fish outline spanning roughly [-1, 1] x [-0.5, 0.6].
PointSet fish_reference();

/// Coefficient std for a deformation level (level 1 is the calibration level).
double deformation_level_amplitude(int level);
/// Noise std for a noise level, 0.01 per level (level 5 = 0.05).
double noise_level_std(int level);

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0);

}  // namespace sfgp
