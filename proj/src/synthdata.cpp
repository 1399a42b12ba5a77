#include "synthdata.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

namespace sfgp {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
    auto splitmix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    return splitmix(splitmix(splitmix(master) ^ stream) ^ index);
}

void validate_perturbation(const PerturbationSpec& spec) {
    auto fail = [](const char* msg) { throw Error(ErrorCode::InvalidArgument, msg); };
    if (!(spec.warp_amplitude >= 0.0)) fail("warp amplitude must be >= 0");
    if (spec.warp_amplitude > 0.0 && !(spec.warp_bandwidth > 0.0)) fail("warp bandwidth must be > 0");
    if (spec.warp_amplitude > 0.0 && spec.warp_controls < 1) fail("warp needs at least one control point");
    if (!(spec.missing_width >= 0.0)) fail("missing width must be >= 0");
    if (!(spec.outlier_ratio >= 0.0)) fail("outlier ratio must be >= 0");
    if (!(spec.noise_std >= 0.0)) fail("noise std must be >= 0");
    if (!(spec.rotation_max >= 0.0)) fail("rotation_max must be >= 0");
}

Coords WarpField::displacement(const Coords& points) const {
    Coords out = Coords::Zero(points.rows(), points.cols());
    const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
    for (Index i = 0; i < points.rows(); ++i) {
        for (Index k = 0; k < controls.rows(); ++k) {
            const double w = std::exp(-(points.row(i) - controls.row(k)).squaredNorm() * inv);
            out.row(i) += w * coefficients.row(k);
        }
    }
    return out;
}

WarpField draw_warp_field(const PointSet& points, double amplitude, double bandwidth, int n_controls,
                          std::uint64_t seed) {
    WarpField field;
    field.bandwidth = bandwidth;
    if (amplitude == 0.0 || n_controls <= 0) {
        field.controls.resize(0, points.dim());
        field.coefficients.resize(0, points.dim());
        return field;
    }
    if (!(bandwidth > 0.0)) throw Error(ErrorCode::InvalidArgument, "warp bandwidth must be > 0");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> pick(0, points.size() - 1);
    std::normal_distribution<double> coef(0.0, amplitude);
    field.controls.resize(n_controls, points.dim());
    field.coefficients.resize(n_controls, points.dim());
    for (int k = 0; k < n_controls; ++k) {
        field.controls.row(k) = points.point(pick(rng));
        for (int c = 0; c < points.dim(); ++c) field.coefficients(k, c) = coef(rng);
    }
    return field;
}

PointSet warp_rbf(const PointSet& points, double amplitude, double bandwidth, int n_controls, std::uint64_t seed) {
    if (amplitude == 0.0) return points;
    const WarpField field = draw_warp_field(points, amplitude, bandwidth, n_controls, seed);
    return PointSet(Coords(points.coords() + field.displacement(points.coords())));
}

MissingResult apply_structured_missing(const PointSet& points, Index center_index, double width) {
    if (center_index < 0 || center_index >= points.size()) {
        throw Error(ErrorCode::InvalidArgument, "missing-region centre index out of range");
    }
    if (!(width >= 0.0)) throw Error(ErrorCode::InvalidArgument, "missing width must be >= 0");
    MissingResult out;
    out.mask.assign(static_cast<std::size_t>(points.size()), 0);
    const auto center = points.point(center_index);
    const double half = 0.5 * width;
    for (Index i = 0; i < points.size(); ++i) {
        const bool inside = width > 0.0 && ((points.point(i) - center).cwiseAbs().array() <= half).all();
        if (inside) {
            out.mask[static_cast<std::size_t>(i)] = 1;
        } else {
            out.kept_indices.push_back(i);
        }
    }
    if (out.kept_indices.empty()) {
        throw Error(ErrorCode::Degenerate, "missing region removes every point");
    }
    out.kept = points.select(out.kept_indices);
    return out;
}

OutlierResult add_outliers(const PointSet& points, double ratio, std::uint64_t seed, Index n_reference) {
    if (!(ratio >= 0.0)) throw Error(ErrorCode::InvalidArgument, "outlier ratio must be >= 0");
    const Index count = static_cast<Index>(std::llround(ratio * static_cast<double>(n_reference)));
    OutlierResult out;
    out.mask.assign(static_cast<std::size_t>(points.size()), 0);
    if (count == 0) {
        out.points = points;
        return out;
    }
    const Eigen::RowVectorXd lo = points.coords().colwise().minCoeff();
    const Eigen::RowVectorXd hi = points.coords().colwise().maxCoeff();
    const Eigen::RowVectorXd mid = 0.5 * (lo + hi);
    const Eigen::RowVectorXd half = 0.55 * (hi - lo);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Coords all(points.size() + count, points.dim());
    all.topRows(points.size()) = points.coords();
    for (Index k = 0; k < count; ++k) {
        for (int c = 0; c < points.dim(); ++c) all(points.size() + k, c) = mid[c] + half[c] * unit(rng);
    }
    out.mask.resize(static_cast<std::size_t>(all.rows()), 1);
    out.points = PointSet(std::move(all));
    return out;
}

PointSet add_noise(const PointSet& points, double std_dev, std::uint64_t seed) {
    if (!(std_dev >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise std must be >= 0");
    if (std_dev == 0.0) return points;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, std_dev);
    Coords out = points.coords();
    for (Index i = 0; i < out.rows(); ++i) {
        for (Index c = 0; c < out.cols(); ++c) out(i, c) += noise(rng);
    }
    return PointSet(std::move(out));
}

PointSet rotate_about_centroid(const PointSet& points, double angle, const Eigen::Vector3d& axis) {
    const Eigen::RowVectorXd c = centroid(points);
    Coords out = points.coords().rowwise() - c;
    if (points.dim() == 2) {
        Eigen::Matrix2d rot;
        rot << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
        out = out * rot.transpose();
    } else {
        const Eigen::Matrix3d rot = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
        out = out * rot.transpose();
    }
    out.rowwise() += c;
    return PointSet(std::move(out));
}

SyntheticInstance generate(const PointSet& reference, const PerturbationSpec& spec) {
    validate_perturbation(spec);
    SyntheticInstance inst;
    inst.spec = spec;

    PointSet truth = warp_rbf(reference, spec.warp_amplitude, spec.warp_bandwidth, spec.warp_controls,
                              derive_seed(spec.seed, 1));
    if (spec.rotation_max > 0.0) {
        std::mt19937_64 rng(derive_seed(spec.seed, 5));
        std::uniform_real_distribution<double> angle(-spec.rotation_max, spec.rotation_max);
        std::normal_distribution<double> gauss(0.0, 1.0);
        const double a = angle(rng);
        Eigen::Vector3d axis{0, 0, 1};
        if (reference.dim() == 3) {
            do {
                axis = Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
            } while (axis.norm() < 1e-9);
        }
        truth = rotate_about_centroid(truth, a, axis);
    }
    inst.ground_truth = truth;

    std::vector<Index> kept(static_cast<std::size_t>(reference.size()));
    std::iota(kept.begin(), kept.end(), Index{0});
    inst.missing_mask.assign(static_cast<std::size_t>(reference.size()), 0);
    PointSet core = truth;
    if (spec.missing_width > 0.0) {
        Index center = 0;
        if (spec.missing_center) {
            center = *spec.missing_center;
        } else {
            std::mt19937_64 rng(derive_seed(spec.seed, 2));
            center = std::uniform_int_distribution<Index>(0, reference.size() - 1)(rng);
        }
        MissingResult miss = apply_structured_missing(truth, center, spec.missing_width);
        inst.missing_mask = std::move(miss.mask);
        kept = std::move(miss.kept_indices);
        core = std::move(miss.kept);
    }

    OutlierResult out = add_outliers(core, spec.outlier_ratio, derive_seed(spec.seed, 3), reference.size());
    inst.outlier_mask = std::move(out.mask);
    inst.target = add_noise(out.points, spec.noise_std, derive_seed(spec.seed, 4));
    inst.target_to_ref = kept;
    inst.target_to_ref.resize(static_cast<std::size_t>(inst.target.size()), -1);
    return inst;
}

PointSet fish_reference() {
    // Closed outline, nose at (-1, 0), traced over the back, around the forked
    // tail and back along the belly.
    static constexpr std::array<std::array<double, 2>, 27> kOutline{{
        {-1.00, 0.00}, {-0.90, 0.15}, {-0.70, 0.28}, {-0.45, 0.36}, {-0.25, 0.40}, {-0.10, 0.55},
        {0.05, 0.62},  {0.10, 0.42},  {0.30, 0.32},  {0.50, 0.20},  {0.65, 0.10},  {0.85, 0.35},
        {1.00, 0.45},  {0.92, 0.10},  {0.88, 0.00},  {0.92, -0.10}, {1.00, -0.45}, {0.85, -0.35},
        {0.65, -0.10}, {0.45, -0.20}, {0.30, -0.28}, {0.20, -0.45}, {0.05, -0.33}, {-0.20, -0.36},
        {-0.45, -0.34}, {-0.70, -0.26}, {-0.90, -0.14},
    }};
    constexpr int kPoints = 98;
    constexpr int kSub = 64;
    const int m = static_cast<int>(kOutline.size());
    auto ctrl = [&](int k) {
        const auto& p = kOutline[static_cast<std::size_t>(((k % m) + m) % m)];
        return Eigen::Vector2d(p[0], p[1]);
    };

    // Dense closed Catmull-Rom curve.
    std::vector<Eigen::Vector2d> dense;
    for (int k = 0; k < m; ++k) {
        const Eigen::Vector2d p0 = ctrl(k - 1), p1 = ctrl(k), p2 = ctrl(k + 1), p3 = ctrl(k + 2);
        for (int s = 0; s < kSub; ++s) {
            const double t = static_cast<double>(s) / kSub;
            const double t2 = t * t, t3 = t2 * t;
            dense.push_back(0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                                   (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3));
        }
    }
    dense.push_back(dense.front());

    std::vector<double> arc(dense.size(), 0.0);
    for (std::size_t k = 1; k < dense.size(); ++k) arc[k] = arc[k - 1] + (dense[k] - dense[k - 1]).norm();
    const double total = arc.back();

    Coords out(kPoints, 2);
    std::size_t seg = 0;
    for (int i = 0; i < kPoints; ++i) {
        const double target = total * i / kPoints;
        while (seg + 1 < arc.size() && arc[seg + 1] < target) ++seg;
        const double len = arc[seg + 1] - arc[seg];
        const double t = len > 0.0 ? (target - arc[seg]) / len : 0.0;
        out.row(i) = ((1.0 - t) * dense[seg] + t * dense[seg + 1]).transpose();
    }
    return PointSet(std::move(out));
}

double deformation_level_amplitude(int level) {
    if (level < 0) throw Error(ErrorCode::InvalidArgument, "deformation level must be >= 0");
    return 0.04 * level;
}

double noise_level_std(int level) {
    if (level < 0) throw Error(ErrorCode::InvalidArgument, "noise level must be >= 0");
    return 0.01 * level;
}

}  // namespace sfgp
