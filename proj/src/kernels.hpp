// Kernel definitions and Gram assembly.
//
// Scalar kernels act on each output coordinate independently, so the full
// deformation covariance is K = G (x) I_d with G the N x N scalar Gram matrix.
// The PCA kernel is discrete (defined only on its anchor reference) and couples
// coordinates; it contributes a low-rank term U diag(lambda) U^T on the
// (N*d) x (N*d) stacked layout.

#pragma once

#include "core.hpp"

#include <filesystem>
#include <memory>
#include <variant>

namespace sfgp {

struct SquaredExponential {
    double amplitude2;
    double lengthscale;
};

struct PcaSpectrum {
    Vector eigenvalues;  // nonincreasing, positive
    Matrix eigenvectors;  // (N*d) x m, orthonormal columns
    PointSet anchor;
};

struct PcaKernel {
    std::shared_ptr<const PcaSpectrum> spectrum;
};

struct KernelSpec;

struct SumKernel {
    std::vector<KernelSpec> terms;
};

struct ScaledKernel {
    double factor;
    std::shared_ptr<const KernelSpec> inner;
};

struct KernelSpec {
    std::variant<SquaredExponential, PcaKernel, SumKernel, ScaledKernel> node;
};

KernelSpec squared_exponential(double amplitude2, double lengthscale);
KernelSpec pca_kernel(Vector eigenvalues, Matrix eigenvectors, PointSet anchor);
KernelSpec sum_kernel(std::vector<KernelSpec> terms);
KernelSpec scaled_kernel(double factor, KernelSpec inner);

bool contains_pca(const KernelSpec& spec);

/// k(x, y) for non-discrete kernels. Throws Error(Unsupported) on a PCA term.
double eval_scalar_kernel(const KernelSpec& spec, std::span<const double> x, std::span<const double> y);

enum class BlockStructure { Isotropic, General };

struct GramMatrix {
    Matrix g;  // N x N scalar part, acts as g (x) I_d
    Matrix factor_u;  // (N*d) x r, empty when isotropic
    Vector factor_lambda;
    BlockStructure structure = BlockStructure::Isotropic;
    int dim = 0;
    double jitter = 0.0;

    Index size() const noexcept { return g.rows(); }
    bool isotropic() const noexcept { return structure == BlockStructure::Isotropic; }
    /// Mean of the (N*d) diagonal entries of the full kernel.
    double mean_diagonal() const;
};

double default_jitter(const GramMatrix& gram);

/// Assembles the Gram matrix on `ref`. With no jitter given, the default
/// (1e-8 x mean diagonal) is used. Verifies g + jitter*I is positive definite.
GramMatrix assemble_gram(const KernelSpec& spec, const PointSet& ref, std::optional<double> jitter = std::nullopt);

/// Truncated sample covariance of training deformations (rows of `samples`,
/// each of length N*d in stacked layout).
KernelSpec build_pca_kernel(const Matrix& samples, Index rank, const PointSet& anchor);

std::uint64_t anchor_hash(const PointSet& anchor);

void save_pca_spectrum(const PcaSpectrum& spectrum, const std::filesystem::path& path);
PcaSpectrum load_pca_spectrum(const std::filesystem::path& path, const PointSet& anchor);

}  // namespace sfgp
