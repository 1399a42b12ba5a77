// Shared domain types for the registration engine.
//
// Points are stored row-wise (N x d, row-major) so that the flattened buffer is
// the stacked vector (p_1^T, ..., p_N^T)^T used by the d-block kernel layout:
// coordinate k of point i lives at flat index i*d + k.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sfgp {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Coords = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ErrorCode {
    InvalidArgument = 1,
    InvalidConfig,
    Numerical,
    AnchorMismatch,
    RankTooLarge,
    Unsupported,
    Degenerate,
    NoMass,
    AllMissing,
    NoAnnotation,
    Io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Ordered d-dimensional point set (d = 2 or 3) with stable integer ids.
class PointSet {
public:
    PointSet() = default;
    explicit PointSet(Coords points);
    PointSet(Coords points, std::vector<Index> ids);

    static PointSet from_flat(std::span<const double> flat, Index dim);

    Index size() const noexcept { return points_.rows(); }
    int dim() const noexcept { return static_cast<int>(points_.cols()); }
    bool empty() const noexcept { return points_.rows() == 0; }

    const Coords& coords() const noexcept { return points_; }
    auto point(Index i) const { return points_.row(i); }
    const std::vector<Index>& ids() const noexcept { return ids_; }

    /// Stacked coordinates, length N*d.
    Vector flat() const;

    /// Subset in the given order; ids are renumbered 0..k-1.
    PointSet select(std::span<const Index> rows) const;

    friend bool operator==(const PointSet& a, const PointSet& b) {
        return a.points_.rows() == b.points_.rows() && a.points_.cols() == b.points_.cols() &&
               a.points_ == b.points_ && a.ids_ == b.ids_;
    }

private:
    Coords points_;
    std::vector<Index> ids_;
};

double mean_nearest_neighbor_distance(const PointSet& points);
Eigen::RowVectorXd centroid(const PointSet& points);
/// Largest pairwise distance (brute force).
double diameter(const PointSet& points);

enum class VarianceMode { PerPoint, Scalar };
enum class ThresholdMode { On, Off };
enum class CorrespondenceMode { MultiAnnotator, ClosestPoint };

/// The method variants compared in the experiments.
enum class Variant { Full, BcpdReg, NoThreshold, ClosestPoint };

struct RegistrationConfig {
    double omega = 0.1;
    double p_min = 0.01;
    /// Unset: squared mean nearest-neighbour distance of the reference.
    std::optional<double> sigma2_init;
    int max_iters = 200;
    double rel_tol = 1e-5;
    /// Unset: 1e-8 times the mean diagonal of the kernel.
    std::optional<double> jitter;
    VarianceMode variance_mode = VarianceMode::PerPoint;
    ThresholdMode threshold_mode = ThresholdMode::On;
    CorrespondenceMode correspondence_mode = CorrespondenceMode::MultiAnnotator;
    /// Translate the reference onto the target centroid before fitting.
    bool precenter = false;
    std::uint64_t seed = 0;
};

/// Throws Error(InvalidConfig) naming the offending field.
RegistrationConfig validate_config(RegistrationConfig cfg);

RegistrationConfig with_variant(RegistrationConfig cfg, Variant variant);
std::string_view variant_name(Variant variant);
std::optional<Variant> parse_variant(std::string_view name);
const std::vector<Variant>& all_variants();

/// Responsibilities plus the inlier/missing partition of the reference.
struct CorrespondenceState {
    Matrix P;                                   // N_R x N_S
    Vector nu;                                  // row sums of P
    std::vector<std::vector<Index>> corr_sets;  // C_i
    std::vector<Index> inliers;                 // R_C, ascending
    std::vector<Index> missing;                 // R_M, ascending
};

struct AnnotatorVariance {
    Index ref;
    Index target;
    double variance;
};

/// Aggregated labels, one row per inlier in CorrespondenceState::inliers order.
struct AnnotatedDeformations {
    Coords delta_hat;  // C x d
    Vector sigma2_eff;
    std::vector<AnnotatorVariance> annotator_var;
};

struct PosteriorDeformation {
    Coords mu;        // N_R x d
    Vector var_diag;  // per-point scalar posterior variance
};

}  // namespace sfgp
