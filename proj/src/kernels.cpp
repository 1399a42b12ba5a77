#include "kernels.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sfgp {

KernelSpec squared_exponential(double amplitude2, double lengthscale) {
    if (!(amplitude2 > 0.0) || !std::isfinite(amplitude2)) {
        throw Error(ErrorCode::InvalidArgument, "squared-exponential amplitude must be positive");
    }
    if (!(lengthscale > 0.0) || !std::isfinite(lengthscale)) {
        throw Error(ErrorCode::InvalidArgument, "squared-exponential lengthscale must be positive");
    }
    return KernelSpec{SquaredExponential{amplitude2, lengthscale}};
}

KernelSpec pca_kernel(Vector eigenvalues, Matrix eigenvectors, PointSet anchor) {
    const Index m = eigenvalues.size();
    if (m < 1) throw Error(ErrorCode::InvalidArgument, "pca kernel needs at least one eigenpair");
    if (eigenvectors.cols() != m || eigenvectors.rows() != anchor.size() * anchor.dim()) {
        throw Error(ErrorCode::InvalidArgument, "pca eigenvector shape does not match anchor and rank");
    }
    for (Index k = 0; k < m; ++k) {
        if (!(eigenvalues[k] > 0.0) || !std::isfinite(eigenvalues[k])) {
            throw Error(ErrorCode::InvalidArgument, "pca eigenvalues must be positive");
        }
        if (k > 0 && eigenvalues[k] > eigenvalues[k - 1]) {
            throw Error(ErrorCode::InvalidArgument, "pca eigenvalues must be nonincreasing");
        }
    }
    auto spectrum = std::make_shared<const PcaSpectrum>(
        PcaSpectrum{std::move(eigenvalues), std::move(eigenvectors), std::move(anchor)});
    return KernelSpec{PcaKernel{std::move(spectrum)}};
}

KernelSpec sum_kernel(std::vector<KernelSpec> terms) {
    if (terms.empty()) throw Error(ErrorCode::InvalidArgument, "sum kernel needs at least one term");
    return KernelSpec{SumKernel{std::move(terms)}};
}

KernelSpec scaled_kernel(double factor, KernelSpec inner) {
    if (!(factor > 0.0) || !std::isfinite(factor)) {
        throw Error(ErrorCode::InvalidArgument, "kernel scale factor must be positive");
    }
    return KernelSpec{ScaledKernel{factor, std::make_shared<const KernelSpec>(std::move(inner))}};
}

bool contains_pca(const KernelSpec& spec) {
    return std::visit(
        [](const auto& node) -> bool {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, PcaKernel>) {
                return true;
            } else if constexpr (std::is_same_v<T, SumKernel>) {
                for (const auto& t : node.terms) {
                    if (contains_pca(t)) return true;
                }
                return false;
            } else if constexpr (std::is_same_v<T, ScaledKernel>) {
                return contains_pca(*node.inner);
            } else {
                return false;
            }
        },
        spec.node);
}

namespace {

double squared_distance(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double d = x[k] - y[k];
        s += d * d;
    }
    return s;
}

double se_value(const SquaredExponential& se, double sqdist) {
    return se.amplitude2 * std::exp(-sqdist / (2.0 * se.lengthscale * se.lengthscale));
}

struct GramAccumulator {
    const PointSet& ref;
    Matrix& g;
    std::vector<Matrix> factors;
    std::vector<Vector> lambdas;

    void add(const KernelSpec& spec, double scale) {
        std::visit(
            [&](const auto& node) {
                using T = std::decay_t<decltype(node)>;
                if constexpr (std::is_same_v<T, SquaredExponential>) {
                    add_se(node, scale);
                } else if constexpr (std::is_same_v<T, PcaKernel>) {
                    const PcaSpectrum& s = *node.spectrum;
                    if (s.anchor.size() != ref.size() || s.anchor.dim() != ref.dim() ||
                        s.anchor.coords() != ref.coords()) {
                        throw Error(ErrorCode::AnchorMismatch,
                                    "pca kernel is only defined on its anchor reference");
                    }
                    factors.push_back(s.eigenvectors);
                    lambdas.push_back(scale * s.eigenvalues);
                } else if constexpr (std::is_same_v<T, SumKernel>) {
                    for (const auto& t : node.terms) add(t, scale);
                } else if constexpr (std::is_same_v<T, ScaledKernel>) {
                    add(*node.inner, scale * node.factor);
                }
            },
            spec.node);
    }

    void add_se(const SquaredExponential& se, double scale) {
        const Index n = ref.size();
        const auto& p = ref.coords();
        for (Index i = 0; i < n; ++i) {
            g(i, i) += scale * se.amplitude2;
            for (Index j = i + 1; j < n; ++j) {
                const double v = scale * se_value(se, (p.row(i) - p.row(j)).squaredNorm());
                g(i, j) += v;
                g(j, i) += v;
            }
        }
    }
};

}  // namespace

double eval_scalar_kernel(const KernelSpec& spec, std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw Error(ErrorCode::InvalidArgument, "kernel arguments differ in dimension");
    return std::visit(
        [&](const auto& node) -> double {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, SquaredExponential>) {
                return se_value(node, squared_distance(x, y));
            } else if constexpr (std::is_same_v<T, PcaKernel>) {
                throw Error(ErrorCode::Unsupported, "pca kernel has no evaluation away from its anchor points");
            } else if constexpr (std::is_same_v<T, SumKernel>) {
                double s = 0.0;
                for (const auto& t : node.terms) s += eval_scalar_kernel(t, x, y);
                return s;
            } else {
                return node.factor * eval_scalar_kernel(*node.inner, x, y);
            }
        },
        spec.node);
}

double GramMatrix::mean_diagonal() const {
    const Index n = g.rows();
    if (n == 0) return 0.0;
    double total = g.diagonal().sum() * dim;
    if (factor_u.cols() > 0) {
        total += (factor_u.array().square().rowwise() * factor_lambda.transpose().array()).sum();
    }
    return total / static_cast<double>(n * dim);
}

double default_jitter(const GramMatrix& gram) {
    return 1e-8 * gram.mean_diagonal();
}

GramMatrix assemble_gram(const KernelSpec& spec, const PointSet& ref, std::optional<double> jitter) {
    if (ref.empty()) throw Error(ErrorCode::InvalidArgument, "cannot assemble a Gram matrix on an empty set");
    GramMatrix out;
    out.dim = ref.dim();
    out.g = Matrix::Zero(ref.size(), ref.size());
    GramAccumulator acc{ref, out.g, {}, {}};
    acc.add(spec, 1.0);

    if (!acc.factors.empty()) {
        out.structure = BlockStructure::General;
        Index cols = 0;
        for (const auto& f : acc.factors) cols += f.cols();
        out.factor_u.resize(ref.size() * ref.dim(), cols);
        out.factor_lambda.resize(cols);
        Index c = 0;
        for (std::size_t k = 0; k < acc.factors.size(); ++k) {
            out.factor_u.middleCols(c, acc.factors[k].cols()) = acc.factors[k];
            out.factor_lambda.segment(c, acc.lambdas[k].size()) = acc.lambdas[k];
            c += acc.factors[k].cols();
        }
    }

    out.jitter = jitter ? *jitter : default_jitter(out);
    if (out.jitter < 0.0) throw Error(ErrorCode::InvalidArgument, "jitter must be non-negative");

    Matrix shifted = out.g;
    shifted.diagonal().array() += out.jitter;
    Eigen::LLT<Matrix> llt(shifted);
    if (llt.info() != Eigen::Success) {
        Eigen::LDLT<Matrix> ldlt(shifted);
        std::ostringstream msg;
        msg << "Gram matrix is not positive definite after jitter " << out.jitter
            << "; smallest pivot " << ldlt.vectorD().minCoeff();
        throw Error(ErrorCode::Numerical, msg.str());
    }
    return out;
}

KernelSpec build_pca_kernel(const Matrix& samples, Index rank, const PointSet& anchor) {
    const Index n = samples.rows();
    const Index len = samples.cols();
    if (n < 2) throw Error(ErrorCode::InvalidArgument, "pca kernel needs at least two training samples");
    if (len != anchor.size() * anchor.dim()) {
        throw Error(ErrorCode::InvalidArgument, "training sample length must equal N_R * d of the anchor");
    }
    if (rank < 1 || rank > std::min(n - 1, len)) {
        throw Error(ErrorCode::RankTooLarge, "pca rank must be in [1, min(#samples - 1, N_R * d)]");
    }
    const Matrix centered = samples.rowwise() - samples.colwise().mean();
    Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
    const Vector eig = svd.singularValues().array().square() / static_cast<double>(n - 1);

    const double top = eig.size() > 0 ? eig[0] : 0.0;
    Index nonzero = 0;
    if (top > 0.0) {
        for (Index k = 0; k < eig.size(); ++k) {
            if (eig[k] > 1e-12 * top) ++nonzero;
        }
    }
    if (rank > nonzero) {
        throw Error(ErrorCode::RankTooLarge, "pca rank " + std::to_string(rank) + " exceeds the " +
                                                 std::to_string(nonzero) + " nonzero covariance eigenvalues");
    }
    Matrix vecs = svd.matrixV().leftCols(rank);
    // Fix the sign so the largest-magnitude entry of each eigenvector is positive.
    for (Index k = 0; k < rank; ++k) {
        Index arg = 0;
        vecs.col(k).cwiseAbs().maxCoeff(&arg);
        if (vecs(arg, k) < 0.0) vecs.col(k) *= -1.0;
    }
    return pca_kernel(eig.head(rank), std::move(vecs), anchor);
}

std::uint64_t anchor_hash(const PointSet& anchor) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t k = 0; k < len; ++k) {
            h ^= bytes[k];
            h *= 1099511628211ULL;
        }
    };
    const std::int64_t n = anchor.size();
    const std::int64_t d = anchor.dim();
    mix(&n, sizeof n);
    mix(&d, sizeof d);
    mix(anchor.coords().data(), sizeof(double) * static_cast<std::size_t>(anchor.coords().size()));
    return h;
}

void save_pca_spectrum(const PcaSpectrum& spectrum, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
    out << "sfgp-pca-spectrum 1\n";
    out << "points " << spectrum.anchor.size() << " dim " << spectrum.anchor.dim() << " rank "
        << spectrum.eigenvalues.size() << "\n";
    out << "anchor " << std::hex << anchor_hash(spectrum.anchor) << std::dec << "\n";
    out << std::setprecision(17);
    out << "eigenvalues\n";
    for (Index k = 0; k < spectrum.eigenvalues.size(); ++k) {
        out << (k ? " " : "") << spectrum.eigenvalues[k];
    }
    out << "\neigenvectors\n";
    for (Index r = 0; r < spectrum.eigenvectors.rows(); ++r) {
        for (Index c = 0; c < spectrum.eigenvectors.cols(); ++c) {
            out << (c ? " " : "") << spectrum.eigenvectors(r, c);
        }
        out << "\n";
    }
    if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

PcaSpectrum load_pca_spectrum(const std::filesystem::path& path, const PointSet& anchor) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    auto bad = [&](const std::string& what) {
        return Error(ErrorCode::Io, path.string() + ": malformed spectrum file (" + what + ")");
    };
    std::string tag, word;
    int version = 0;
    if (!(in >> tag >> version) || tag != "sfgp-pca-spectrum" || version != 1) throw bad("header");
    Index n = 0, d = 0, m = 0;
    std::string w1, w2, w3;
    if (!(in >> w1 >> n >> w2 >> d >> w3 >> m) || w1 != "points" || w2 != "dim" || w3 != "rank") {
        throw bad("sizes");
    }
    std::uint64_t hash = 0;
    if (!(in >> word >> std::hex >> hash >> std::dec) || word != "anchor") throw bad("anchor");
    if (n != anchor.size() || d != anchor.dim() || hash != anchor_hash(anchor)) {
        throw Error(ErrorCode::AnchorMismatch, path.string() + ": spectrum was built on a different anchor");
    }
    if (!(in >> word) || word != "eigenvalues") throw bad("eigenvalues");
    Vector eig(m);
    for (Index k = 0; k < m; ++k) {
        if (!(in >> eig[k])) throw bad("eigenvalues");
    }
    if (!(in >> word) || word != "eigenvectors") throw bad("eigenvectors");
    Matrix vecs(n * d, m);
    for (Index r = 0; r < vecs.rows(); ++r) {
        for (Index c = 0; c < m; ++c) {
            if (!(in >> vecs(r, c))) throw bad("eigenvectors");
        }
    }
    const KernelSpec spec = pca_kernel(std::move(eig), std::move(vecs), anchor);
    return *std::get<PcaKernel>(spec.node).spectrum;
}

}  // namespace sfgp
