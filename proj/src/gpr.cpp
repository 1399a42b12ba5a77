#include "gpr.hpp"

#include <cmath>
#include <sstream>

namespace sfgp {

AggregatedLabel aggregate_annotations(std::span<const Annotation> annotations) {
    if (annotations.empty()) {
        throw Error(ErrorCode::NoAnnotation, "reference point has no annotations; route it to the missing set");
    }
    const Index d = annotations.front().deformation.size();
    double precision = 0.0;
    Vector weighted = Vector::Zero(d);
    for (const auto& a : annotations) {
        if (!(a.variance > 0.0) || !std::isfinite(a.variance)) {
            throw Error(ErrorCode::InvalidArgument, "annotation variance must be finite and positive");
        }
        if (a.deformation.size() != d) throw Error(ErrorCode::InvalidArgument, "annotation dimensions differ");
        precision += 1.0 / a.variance;
        weighted += a.deformation / a.variance;
    }
    const double sigma2 = 1.0 / precision;
    return {sigma2 * weighted, sigma2};
}

namespace {

Eigen::LLT<Matrix> factor_with_jitter(Matrix a, double jitter, const char* what) {
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() == Eigen::Success) return llt;
    if (jitter > 0.0) {
        a.diagonal().array() += jitter;
        llt.compute(a);
        if (llt.info() == Eigen::Success) return llt;
    }
    Eigen::LDLT<Matrix> ldlt(a);
    std::ostringstream msg;
    msg << what << " is not positive definite (jitter " << jitter << ", smallest pivot "
        << ldlt.vectorD().minCoeff() << ")";
    throw Error(ErrorCode::Numerical, msg.str());
}

// In-place solve with B = A (x) I_d on a (C*d) x q block in stacked layout.
void solve_kron(const Eigen::LLT<Matrix>& llt, Matrix& m, int d) {
    const Index c = m.rows() / d;
    Matrix slab(c, m.cols());
    for (int k = 0; k < d; ++k) {
        for (Index i = 0; i < c; ++i) slab.row(i) = m.row(i * d + k);
        llt.solveInPlace(slab);
        for (Index i = 0; i < c; ++i) m.row(i * d + k) = slab.row(i);
    }
}

PosteriorDeformation isotropic_posterior(const GramMatrix& gram, std::span<const Index> inliers,
                                         const Coords& delta_hat, const Vector& sigma2_eff, double jitter) {
    const Index c = static_cast<Index>(inliers.size());
    const Eigen::Map<const Eigen::Matrix<Index, Eigen::Dynamic, 1>> idx(inliers.data(), c);

    Matrix a = gram.g(idx, idx);
    a.diagonal() += sigma2_eff;
    const auto llt = factor_with_jitter(std::move(a), jitter, "inlier kernel plus noise");

    const Matrix k_cr = gram.g(idx, Eigen::all);
    const Matrix alpha = llt.solve(Matrix(delta_hat));

    PosteriorDeformation post;
    post.mu = k_cr.transpose() * alpha;
    const Matrix w = llt.matrixL().solve(k_cr);
    post.var_diag = gram.g.diagonal() - w.colwise().squaredNorm().transpose();
    return post;
}

// K = g (x) I + U diag(lambda) U^T; the inverse of (K_CC + D (x) I) is applied
// through the matrix inversion lemma around the isotropic base (g_CC + D) (x) I.
PosteriorDeformation general_posterior(const GramMatrix& gram, std::span<const Index> inliers,
                                       const Coords& delta_hat, const Vector& sigma2_eff, double jitter) {
    const int d = gram.dim;
    const Index n = gram.size();
    const Index c = static_cast<Index>(inliers.size());
    const Index r = gram.factor_u.cols();
    const Eigen::Map<const Eigen::Matrix<Index, Eigen::Dynamic, 1>> idx(inliers.data(), c);

    Matrix a = gram.g(idx, idx);
    a.diagonal() += sigma2_eff;
    const auto llt = factor_with_jitter(std::move(a), jitter, "inlier kernel plus noise");

    Matrix u_c(c * d, r);
    for (Index i = 0; i < c; ++i) u_c.middleRows(i * d, d) = gram.factor_u.middleRows(inliers[i] * d, d);

    Matrix binv_u = u_c;
    solve_kron(llt, binv_u, d);
    Matrix s = u_c.transpose() * binv_u;
    s.diagonal() += gram.factor_lambda.cwiseInverse();
    const auto s_llt = factor_with_jitter(std::move(s), 0.0, "low-rank capacitance matrix");

    auto apply_inverse = [&](Matrix& m) {
        solve_kron(llt, m, d);
        const Matrix t = s_llt.solve(u_c.transpose() * m);
        m -= binv_u * t;
    };

    // K_{C,R}: (C*d) x (N*d)
    Matrix k_cr = u_c * gram.factor_lambda.asDiagonal() * gram.factor_u.transpose();
    for (Index i = 0; i < c; ++i) {
        for (Index j = 0; j < n; ++j) {
            const double v = gram.g(inliers[i], j);
            for (int k = 0; k < d; ++k) k_cr(i * d + k, j * d + k) += v;
        }
    }

    Matrix y = Eigen::Map<const Vector>(delta_hat.data(), c * d);
    apply_inverse(y);
    const Vector mu_flat = k_cr.transpose() * y;

    Matrix z = k_cr;
    apply_inverse(z);
    const Vector quad = (k_cr.array() * z.array()).colwise().sum().transpose();
    const Vector k_diag = (gram.factor_u.array().square().rowwise() * gram.factor_lambda.transpose().array())
                              .rowwise()
                              .sum()
                              .matrix();

    PosteriorDeformation post;
    post.mu = Eigen::Map<const Coords>(mu_flat.data(), n, d);
    post.var_diag.resize(n);
    for (Index j = 0; j < n; ++j) {
        double tr = 0.0;
        for (int k = 0; k < d; ++k) tr += gram.g(j, j) + k_diag[j * d + k] - quad[j * d + k];
        post.var_diag[j] = tr / d;
    }
    return post;
}

}  // namespace

PosteriorDeformation gpr_posterior(const GramMatrix& gram, std::span<const Index> inliers,
                                   const Coords& delta_hat, const Vector& sigma2_eff, double jitter) {
    const Index c = static_cast<Index>(inliers.size());
    if (c == 0) throw Error(ErrorCode::AllMissing, "GP posterior needs at least one inlier");
    if (delta_hat.rows() != c || sigma2_eff.size() != c || delta_hat.cols() != gram.dim) {
        throw Error(ErrorCode::InvalidArgument, "label arrays do not match the inlier set");
    }
    for (Index i = 0; i < c; ++i) {
        if (inliers[i] < 0 || inliers[i] >= gram.size()) {
            throw Error(ErrorCode::InvalidArgument, "inlier index out of range");
        }
        if (!(sigma2_eff[i] > 0.0)) throw Error(ErrorCode::InvalidArgument, "label variances must be positive");
    }
    return gram.isotropic() ? isotropic_posterior(gram, inliers, delta_hat, sigma2_eff, jitter)
                            : general_posterior(gram, inliers, delta_hat, sigma2_eff, jitter);
}

}  // namespace sfgp
