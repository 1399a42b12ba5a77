#include "metrics.hpp"
#include "oracles.hpp"
#include "registration.hpp"

#include <gtest/gtest.h>

#include <random>
#include <regex>

using namespace sfgp;

TEST(UpdateSigma2, ZeroResidualIsFloored) {
    Coords c(1, 2);
    c << 0.4, 0.2;
    const PointSet p(c);
    const Vector out = update_sigma2(Matrix::Ones(1, 1), Vector::Ones(1), p, p, Vector::Zero(1),
                                     VarianceMode::PerPoint, Vector::Ones(1));
    EXPECT_EQ(out[0], 1e-12);
}

TEST(UpdateSigma2, SinglePairResidual) {
    Coords a(1, 2), b(1, 2);
    a << 0, 0;
    b << 2, 2;  // squared distance 8
    const Vector out = update_sigma2(Matrix::Ones(1, 1), Vector::Ones(1), PointSet(b), PointSet(a), Vector::Zero(1),
                                     VarianceMode::PerPoint, Vector::Ones(1));
    EXPECT_DOUBLE_EQ(out[0], 4.0);
}

TEST(UpdateSigma2, MatchesMatrixForm) {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 50; ++rep) {
        const int d = 2 + rep % 2;
        const PointSet deformed = oracle::random_points(rng, 4, d);
        const PointSet target = oracle::random_points(rng, 6, d);
        Matrix P(4, 6);
        for (Index k = 0; k < P.size(); ++k) P.data()[k] = u(rng);
        Vector pv(4);
        for (Index i = 0; i < 4; ++i) pv[i] = 0.1 * u(rng);
        const Vector nu = P.rowwise().sum();
        const Vector got = update_sigma2(P, nu, target, deformed, pv, VarianceMode::PerPoint, Vector::Ones(4));
        const Vector want = oracle::variance_matrix_form(P, target, deformed, pv);
        EXPECT_LE(oracle::rel_err(got, want), 1e-10);
    }
}

TEST(UpdateSigma2, ScalarModeFormula) {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
        const PointSet deformed = oracle::random_points(rng, 5, 2);
        const PointSet target = oracle::random_points(rng, 7, 2);
        Matrix P(5, 7);
        for (Index k = 0; k < P.size(); ++k) P.data()[k] = u(rng);
        Vector pv(5);
        for (Index i = 0; i < 5; ++i) pv[i] = 0.1 * u(rng);
        const Vector nu = P.rowwise().sum();
        double num = 0.0;
        for (Index i = 0; i < 5; ++i) {
            for (Index j = 0; j < 7; ++j) num += P(i, j) * (target.point(j) - deformed.point(i)).squaredNorm();
            num += 2 * nu[i] * pv[i];
        }
        const double want = num / (2 * nu.sum());
        const Vector got = update_sigma2(P, nu, target, deformed, pv, VarianceMode::Scalar, Vector::Ones(5));
        for (Index i = 0; i < 5; ++i) EXPECT_NEAR(got[i], want, 1e-14 * want);
    }
}

TEST(UpdateSigma2, ModesAgreeOnBalancedInstances) {
    // Every reference point sees the same mass and the same mean residual.
    for (double angle : {0.0, 0.4, 1.3}) {
        Coords r(3, 2), s(3, 2);
        r << 0, 0, 2, 0, 0, 2;
        for (Index i = 0; i < 3; ++i) {
            const double a = angle + 2.0 * static_cast<double>(i);
            s.row(i) = r.row(i) + 0.5 * Eigen::RowVector2d(std::cos(a), std::sin(a));
        }
        const Matrix P = 0.8 * Matrix::Identity(3, 3);
        const Vector nu = P.rowwise().sum();
        const Vector pv = Vector::Constant(3, 0.01);
        const Vector a = update_sigma2(P, nu, PointSet(s), PointSet(r), pv, VarianceMode::PerPoint, Vector::Ones(3));
        const Vector b = update_sigma2(P, nu, PointSet(s), PointSet(r), pv, VarianceMode::Scalar, Vector::Ones(3));
        EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(UpdateSigma2, MasslessPointsKeepPreviousValue) {
    std::mt19937_64 rng(43);
    const PointSet deformed = oracle::random_points(rng, 3, 2);
    const PointSet target = oracle::random_points(rng, 4, 2);
    Matrix P = Matrix::Constant(3, 4, 0.2);
    P.row(1).setZero();
    const Vector prev = Vector::Constant(3, 0.123);
    const Vector out = update_sigma2(P, P.rowwise().sum(), target, deformed, Vector::Zero(3), VarianceMode::PerPoint,
                                     prev);
    EXPECT_EQ(out[1], 0.123);
    EXPECT_NE(out[0], 0.123);

    try {
        update_sigma2(Matrix::Zero(3, 4), Vector::Zero(3), target, deformed, Vector::Zero(3), VarianceMode::PerPoint,
                      prev);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoMass);
    }
}

namespace {

RegistrationConfig one_step(double sigma2) {
    RegistrationConfig cfg;
    cfg.omega = 0.2;
    cfg.sigma2_init = sigma2;
    cfg.max_iters = 1;
    cfg.threshold_mode = ThresholdMode::Off;
    cfg.jitter = 0.0;
    return cfg;
}

}  // namespace

TEST(Register, FirstIterationIsVariationalPosterior) {
    std::mt19937_64 rng(44);
    for (int rep = 0; rep < 10; ++rep) {
        const Index n = 3 + rep % 6;
        const PointSet ref = oracle::random_points(rng, n, 2, 0.0, 3.0);
        const PointSet tgt(Coords(ref.coords() + oracle::random_points(rng, n, 2, -0.3, 0.3).coords()));
        const double a2 = 0.5, l = 0.6, s2 = 0.2;
        const auto res = register_shape(ref, tgt, squared_exponential(a2, l), one_step(s2));
        ASSERT_EQ(res.iters, 1);
        const Matrix P = oracle::responsibilities(tgt, ref, Vector::Constant(n, s2), Vector::Zero(n), 0.2);
        const auto want = oracle::variational_posterior(oracle::kron_identity(oracle::se_gram(ref, a2, l), 2), P, tgt,
                                                        ref, Vector::Constant(n, s2));
        EXPECT_LE(oracle::rel_err(res.posterior.mu, want.mu), 1e-8);
        EXPECT_LE(oracle::rel_err(res.posterior.var_diag, want.var), 1e-8);
    }
}

TEST(Register, CorrespondenceStepWithPerPointVariances) {
    std::mt19937_64 rng(45);
    for (int rep = 0; rep < 10; ++rep) {
        const Index n = 4 + rep % 4;
        const PointSet ref = oracle::random_points(rng, n, 3, 0.0, 3.0);
        const PointSet tgt = oracle::random_points(rng, n + 2, 3, 0.0, 3.0);
        Vector s2(n);
        for (Index i = 0; i < n; ++i) s2[i] = 0.5 + 0.1 * static_cast<double>(i);
        const Vector pv = Vector::Zero(n);
        const auto [state, labels] = get_correspondences({tgt, ref, s2, pv, 0.1}, ref, 0.01, ThresholdMode::Off);
        ASSERT_TRUE(state.missing.empty());
        const GramMatrix gram = assemble_gram(squared_exponential(1.0, 0.7), ref, 0.0);
        const auto post = gpr_posterior(gram, state.inliers, labels.delta_hat, labels.sigma2_eff, 0.0);
        const auto want =
            oracle::variational_posterior(oracle::kron_identity(oracle::se_gram(ref, 1.0, 0.7), 3), state.P, tgt, ref, s2);
        EXPECT_LE(oracle::rel_err(post.mu, want.mu), 1e-8);
        EXPECT_LE(oracle::rel_err(post.var_diag, want.var), 1e-8);
    }
}

TEST(Register, SelfRegistrationStaysPut) {
    const PointSet fish = fish_reference();
    const auto res = register_shape(fish, fish, squared_exponential(0.01, 1.0), RegistrationConfig{});
    EXPECT_FALSE(res.failed);
    EXPECT_TRUE(res.converged);
    EXPECT_TRUE(res.state.missing.empty());
    EXPECT_LE(res.posterior.mu.rowwise().norm().mean(), 1e-3 * diameter(fish));
    EXPECT_EQ(res.deformed_reference.size(), fish.size());
    EXPECT_EQ(res.deformed_reference.dim(), 2);
}

TEST(Register, HeavyOutliersStillSucceed) {
    const PointSet fish = fish_reference();
    PerturbationSpec spec;
    spec.warp_amplitude = deformation_level_amplitude(2);
    spec.outlier_ratio = 2.0;
    spec.noise_std = 0.01;
    spec.seed = 3;
    const SyntheticInstance inst = generate(fish, spec);
    RegistrationConfig cfg;
    cfg.omega = 0.3;
    const auto res = register_shape(fish, inst.target, squared_exponential(0.01, 1.0), cfg);
    EXPECT_FALSE(res.failed);
    EXPECT_TRUE(res.deformed_reference.coords().allFinite());
}

TEST(Register, NoCorrespondenceFailsInFirstIteration) {
    const PointSet fish = fish_reference();
    const PointSet far(Coords(fish.coords().array() + 100.0));
    RegistrationConfig cfg;
    cfg.omega = 0.5;
    const auto res = register_shape(fish, far, squared_exponential(0.01, 1.0), cfg);
    EXPECT_TRUE(res.failed);
    EXPECT_EQ(res.iters, 1);
    EXPECT_FALSE(res.converged);
    EXPECT_EQ(res.deformed_reference, fish);
}

TEST(Register, IterationInvariantsAndDeterminism) {
    const PointSet fish = fish_reference();
    PerturbationSpec spec;
    spec.warp_amplitude = deformation_level_amplitude(2);
    spec.missing_width = 0.3;
    spec.outlier_ratio = 0.5;
    spec.noise_std = 0.02;
    spec.rotation_max = 0.1;
    spec.seed = 9;
    const SyntheticInstance inst = generate(fish, spec);
    for (Variant v : all_variants()) {
        RegistrationConfig cfg = with_variant({}, v);
        cfg.p_min = 0.05;
        std::vector<IterationRecord> seen;
        RegisterOptions opts;
        opts.on_iteration = [&](const IterationRecord& r) { seen.push_back(r); };
        const auto a = register_shape(fish, inst.target, squared_exponential(0.01, 1.0), cfg, opts);
        const auto b = register_shape(fish, inst.target, squared_exponential(0.01, 1.0), cfg);
        ASSERT_FALSE(a.failed) << variant_name(v);
        EXPECT_LE(a.iters, cfg.max_iters);
        EXPECT_EQ(static_cast<int>(seen.size()), a.iters);
        for (const auto& r : seen) EXPECT_EQ(r.n_inliers + r.n_missing, fish.size());
        EXPECT_GE(a.min_sigma2, kSigma2Floor);
        EXPECT_TRUE(a.deformed_reference.coords().allFinite());

        EXPECT_EQ(a.deformed_reference, b.deformed_reference);
        EXPECT_EQ(a.sigma2, b.sigma2);
        EXPECT_EQ(a.state.P, b.state.P);
        EXPECT_EQ(a.iters, b.iters);
        if (v == Variant::ClosestPoint) EXPECT_TRUE(a.state.missing.empty());
        if (v == Variant::BcpdReg) EXPECT_EQ(a.sigma2.minCoeff(), a.sigma2.maxCoeff());
    }
}

TEST(Register, TraceRecordsAreKeyValue) {
    IterationRecord r;
    r.iter = 3;
    r.mean_displacement_change = 0.25;
    r.n_inliers = 90;
    r.n_missing = 8;
    r.mean_sigma2 = 1e-4;
    r.elapsed_ms = 12.5;
    const std::string line = format_trace_record(r);
    EXPECT_TRUE(std::regex_match(line, std::regex(R"((\w+=\S+)( \w+=\S+)*)"))) << line;
    EXPECT_NE(line.find("iter=3"), std::string::npos);
    EXPECT_NE(line.find("n_missing=8"), std::string::npos);
}

TEST(Register, RejectsMismatchedInputs) {
    std::mt19937_64 rng(46);
    const PointSet a = oracle::random_points(rng, 5, 2);
    const PointSet b = oracle::random_points(rng, 5, 3);
    EXPECT_THROW(register_shape(a, b, squared_exponential(1, 1), {}), Error);
    const GramMatrix g = assemble_gram(squared_exponential(1, 1), oracle::random_points(rng, 4, 2));
    EXPECT_THROW(register_shape(a, g, a, {}), Error);
    RegistrationConfig bad;
    bad.omega = 1.0;
    EXPECT_THROW(register_shape(a, a, squared_exponential(1, 1), bad), Error);
}

TEST(Register, PrecenterMovesReferenceOntoTargetCentroid) {
    const PointSet fish = fish_reference();
    const PointSet shifted(Coords(fish.coords().rowwise() + Eigen::RowVector2d(0.3, -0.2)));
    RegistrationConfig cfg;
    cfg.precenter = true;
    const auto res = register_shape(fish, shifted, squared_exponential(0.01, 1.0), cfg);
    EXPECT_FALSE(res.failed);
    EXPECT_LE(mean_sq_distance(res.deformed_reference,
                               SyntheticInstance{shifted, shifted, std::vector<std::uint8_t>(98, 0), {}, {}, {}},
                               Subset::All)
                  .value(),
              1e-6);
}
