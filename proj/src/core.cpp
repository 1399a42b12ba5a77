#include "core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sfgp {

namespace {

void check_points(const Coords& points) {
    if (points.rows() < 1) {
        throw Error(ErrorCode::InvalidArgument, "point set must contain at least one point");
    }
    if (points.cols() != 2 && points.cols() != 3) {
        throw Error(ErrorCode::InvalidArgument,
                    "point dimension must be 2 or 3, got " + std::to_string(points.cols()));
    }
    if (!points.allFinite()) {
        throw Error(ErrorCode::InvalidArgument, "point set contains non-finite coordinates");
    }
}

}  // namespace

PointSet::PointSet(Coords points) : points_(std::move(points)) {
    check_points(points_);
    ids_.resize(static_cast<std::size_t>(points_.rows()));
    std::iota(ids_.begin(), ids_.end(), Index{0});
}

PointSet::PointSet(Coords points, std::vector<Index> ids) : points_(std::move(points)), ids_(std::move(ids)) {
    check_points(points_);
    if (static_cast<Index>(ids_.size()) != points_.rows()) {
        throw Error(ErrorCode::InvalidArgument, "id count does not match point count");
    }
    std::vector<char> seen(ids_.size(), 0);
    for (Index id : ids_) {
        if (id < 0 || id >= points_.rows() || seen[static_cast<std::size_t>(id)]) {
            throw Error(ErrorCode::InvalidArgument, "ids must be a permutation of 0..N-1");
        }
        seen[static_cast<std::size_t>(id)] = 1;
    }
}

PointSet PointSet::from_flat(std::span<const double> flat, Index dim) {
    if (dim <= 0 || flat.size() % static_cast<std::size_t>(dim) != 0) {
        throw Error(ErrorCode::InvalidArgument, "flat coordinate buffer is not a multiple of the dimension");
    }
    const Index n = static_cast<Index>(flat.size()) / dim;
    return PointSet(Eigen::Map<const Coords>(flat.data(), n, dim));
}

Vector PointSet::flat() const {
    return Eigen::Map<const Vector>(points_.data(), points_.size());
}

PointSet PointSet::select(std::span<const Index> rows) const {
    Coords out(static_cast<Index>(rows.size()), points_.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        out.row(static_cast<Index>(k)) = points_.row(rows[k]);
    }
    return PointSet(std::move(out));
}

double mean_nearest_neighbor_distance(const PointSet& points) {
    const Index n = points.size();
    if (n < 2) return 0.0;
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (Index j = 0; j < n; ++j) {
            if (j == i) continue;
            best = std::min(best, (points.point(i) - points.point(j)).squaredNorm());
        }
        total += std::sqrt(best);
    }
    return total / static_cast<double>(n);
}

Eigen::RowVectorXd centroid(const PointSet& points) {
    return points.coords().colwise().mean();
}

double diameter(const PointSet& points) {
    double best = 0.0;
    for (Index i = 0; i < points.size(); ++i) {
        for (Index j = i + 1; j < points.size(); ++j) {
            best = std::max(best, (points.point(i) - points.point(j)).squaredNorm());
        }
    }
    return std::sqrt(best);
}

RegistrationConfig validate_config(RegistrationConfig cfg) {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
    if (!std::isfinite(cfg.omega) || cfg.omega < 0.0) fail("omega must be in [0, 1)");
    if (cfg.omega >= 1.0) fail("omega must be < 1");
    if (!(cfg.p_min > 0.0 && cfg.p_min < 1.0)) fail("p_min must be in (0, 1)");
    if (cfg.sigma2_init && !(*cfg.sigma2_init > 0.0 && std::isfinite(*cfg.sigma2_init))) {
        fail("sigma2_init must be positive");
    }
    if (cfg.max_iters < 1) fail("max_iters must be at least 1");
    if (!(cfg.rel_tol >= 0.0)) fail("rel_tol must be non-negative");
    if (cfg.jitter && !(*cfg.jitter >= 0.0 && std::isfinite(*cfg.jitter))) fail("jitter must be non-negative");
    return cfg;
}

RegistrationConfig with_variant(RegistrationConfig cfg, Variant variant) {
    cfg.variance_mode = VarianceMode::PerPoint;
    cfg.threshold_mode = ThresholdMode::On;
    cfg.correspondence_mode = CorrespondenceMode::MultiAnnotator;
    switch (variant) {
    case Variant::Full:
        break;
    case Variant::BcpdReg:
        cfg.variance_mode = VarianceMode::Scalar;
        break;
    case Variant::NoThreshold:
        cfg.threshold_mode = ThresholdMode::Off;
        break;
    case Variant::ClosestPoint:
        cfg.correspondence_mode = CorrespondenceMode::ClosestPoint;
        break;
    }
    return cfg;
}

std::string_view variant_name(Variant variant) {
    switch (variant) {
    case Variant::Full: return "SFGP_Full";
    case Variant::BcpdReg: return "SFGP_bcpdReg";
    case Variant::NoThreshold: return "GPReg_noTresh";
    case Variant::ClosestPoint: return "GPClosestPnt";
    }
    return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
    for (Variant v : all_variants()) {
        if (variant_name(v) == name) return v;
    }
    return std::nullopt;
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> variants{Variant::Full, Variant::BcpdReg, Variant::NoThreshold,
                                               Variant::ClosestPoint};
    return variants;
}

}  // namespace sfgp
