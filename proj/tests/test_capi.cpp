#include <sfgp/sfgp.h>

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Free {
    void operator()(sfgp_pointset* p) const { sfgp_pointset_free(p); }
    void operator()(sfgp_kernel* k) const { sfgp_kernel_free(k); }
    void operator()(sfgp_result* r) const { sfgp_result_free(r); }
    void operator()(sfgp_instance* i) const { sfgp_instance_free(i); }
};
template <typename T>
using Owned = std::unique_ptr<T, Free>;

Owned<sfgp_pointset> fish() {
    sfgp_pointset* p = nullptr;
    EXPECT_EQ(sfgp_fish_reference(&p), SFGP_OK);
    return Owned<sfgp_pointset>(p);
}

Owned<sfgp_kernel> benchmark_kernel() {
    sfgp_kernel* k = nullptr;
    EXPECT_EQ(sfgp_kernel_se(0.01, 1.0, &k), SFGP_OK);
    return Owned<sfgp_kernel>(k);
}

Owned<sfgp_instance> make_instance(const sfgp_pointset* ref, double width, std::uint64_t seed) {
    sfgp_perturbation spec;
    sfgp_perturbation_default(&spec);
    EXPECT_EQ(sfgp_perturbation_from_levels(2, 1, &spec), SFGP_OK);
    spec.missing_width = width;
    spec.seed = seed;
    sfgp_instance* inst = nullptr;
    EXPECT_EQ(sfgp_generate(ref, &spec, &inst), SFGP_OK) << sfgp_last_error();
    return Owned<sfgp_instance>(inst);
}

}  // namespace

TEST(CApi, StatusStringsAndLastError) {
    EXPECT_STREQ(sfgp_status_string(SFGP_OK), "ok");
    EXPECT_STRNE(sfgp_status_string(SFGP_ERR_NO_MASS), "");
    sfgp_kernel* k = nullptr;
    EXPECT_EQ(sfgp_kernel_se(-1.0, 1.0, &k), SFGP_ERR_INVALID_ARGUMENT);
    EXPECT_EQ(k, nullptr);
    EXPECT_STRNE(sfgp_last_error(), "");
    auto kernel = benchmark_kernel();
    EXPECT_STREQ(sfgp_last_error(), "");
}

TEST(CApi, PointSetLifecycle) {
    const std::vector<double> xy{0, 0, 1, 0, 0, 2};
    sfgp_pointset* raw = nullptr;
    ASSERT_EQ(sfgp_pointset_create(xy.data(), 3, 2, &raw), SFGP_OK);
    Owned<sfgp_pointset> p(raw);
    EXPECT_EQ(sfgp_pointset_size(p.get()), 3u);
    EXPECT_EQ(sfgp_pointset_dim(p.get()), 2);
    for (size_t i = 0; i < xy.size(); ++i) EXPECT_EQ(sfgp_pointset_coords(p.get())[i], xy[i]);
    EXPECT_DOUBLE_EQ(sfgp_pointset_mean_nn_distance(p.get()), (1.0 + 1.0 + 2.0) / 3.0);

    EXPECT_EQ(sfgp_pointset_create(xy.data(), 3, 4, &raw), SFGP_ERR_INVALID_ARGUMENT);
    EXPECT_EQ(sfgp_pointset_create(xy.data(), 0, 2, &raw), SFGP_ERR_INVALID_ARGUMENT);
    const std::vector<double> bad{0, NAN};
    EXPECT_EQ(sfgp_pointset_create(bad.data(), 1, 2, &raw), SFGP_ERR_INVALID_ARGUMENT);

    const fs::path path = fs::temp_directory_path() / "sfgp_capi_points.csv";
    ASSERT_EQ(sfgp_pointset_write_csv(p.get(), path.c_str()), SFGP_OK);
    ASSERT_EQ(sfgp_pointset_read_csv(path.c_str(), &raw), SFGP_OK);
    Owned<sfgp_pointset> back(raw);
    EXPECT_EQ(sfgp_pointset_size(back.get()), 3u);
    EXPECT_EQ(sfgp_pointset_coords(back.get())[5], 2.0);
    fs::remove(path);
    EXPECT_EQ(sfgp_pointset_read_csv(path.c_str(), &raw), SFGP_ERR_IO);
}

TEST(CApi, ConfigDefaultsAndValidation) {
    sfgp_config cfg;
    sfgp_config_default(&cfg);
    EXPECT_TRUE(std::isnan(cfg.sigma2_init));
    EXPECT_TRUE(std::isnan(cfg.jitter));
    EXPECT_EQ(cfg.threshold_mode, SFGP_THRESHOLD_ON);
    EXPECT_EQ(sfgp_config_validate(&cfg), SFGP_OK);
    cfg.omega = 1.0;
    EXPECT_EQ(sfgp_config_validate(&cfg), SFGP_ERR_INVALID_CONFIG);
    EXPECT_NE(std::string(sfgp_last_error()).find("omega"), std::string::npos);
    sfgp_config_default(&cfg);
    cfg.max_iters = 0;
    EXPECT_EQ(sfgp_config_validate(&cfg), SFGP_ERR_INVALID_CONFIG);
}

TEST(CApi, VariantsByName) {
    ASSERT_EQ(sfgp_variant_count(), 4u);
    sfgp_config cfg;
    for (size_t i = 0; i < sfgp_variant_count(); ++i) {
        sfgp_config_default(&cfg);
        EXPECT_EQ(sfgp_config_apply_variant(&cfg, sfgp_variant_name(i)), SFGP_OK);
    }
    sfgp_config_default(&cfg);
    ASSERT_EQ(sfgp_config_apply_variant(&cfg, "GPClosestPnt"), SFGP_OK);
    EXPECT_EQ(cfg.correspondence_mode, SFGP_CORRESPONDENCE_CLOSEST_POINT);
    ASSERT_EQ(sfgp_config_apply_variant(&cfg, "SFGP_bcpdReg"), SFGP_OK);
    EXPECT_EQ(cfg.variance_mode, SFGP_VARIANCE_SCALAR);
    EXPECT_EQ(cfg.correspondence_mode, SFGP_CORRESPONDENCE_MULTI_ANNOTATOR);

    EXPECT_EQ(sfgp_config_apply_variant(&cfg, "SFGP_Fast"), SFGP_ERR_INVALID_ARGUMENT);
    const std::string msg = sfgp_last_error();
    for (size_t i = 0; i < sfgp_variant_count(); ++i) {
        EXPECT_NE(msg.find(sfgp_variant_name(i)), std::string::npos) << msg;
    }
}

TEST(CApi, KernelComposition) {
    auto se = benchmark_kernel();
    const double x[2] = {0, 0}, y[2] = {1, 0};
    double v = 0;
    ASSERT_EQ(sfgp_kernel_eval(se.get(), x, y, 2, &v), SFGP_OK);
    EXPECT_NEAR(v, 0.01 * std::exp(-0.5), 1e-17);

    sfgp_kernel *sum = nullptr, *scaled = nullptr;
    const sfgp_kernel* terms[2] = {se.get(), se.get()};
    ASSERT_EQ(sfgp_kernel_sum(terms, 2, &sum), SFGP_OK);
    Owned<sfgp_kernel> sum_owned(sum);
    ASSERT_EQ(sfgp_kernel_scaled(0.25, sum, &scaled), SFGP_OK);
    Owned<sfgp_kernel> scaled_owned(scaled);
    double w = 0;
    ASSERT_EQ(sfgp_kernel_eval(scaled, x, y, 2, &w), SFGP_OK);
    EXPECT_NEAR(w, 0.5 * v, 1e-17);
}

TEST(CApi, PcaKernelRoundTrip) {
    auto ref = fish();
    const size_t n = sfgp_pointset_size(ref.get()) * 2;
    std::vector<double> samples(3 * n);
    for (size_t s = 0; s < 3; ++s) {
        for (size_t k = 0; k < n; ++k) samples[s * n + k] = std::sin(0.1 * static_cast<double>(k * (s + 1)));
    }
    sfgp_kernel* k = nullptr;
    ASSERT_EQ(sfgp_kernel_pca_build(samples.data(), 3, ref.get(), 2, &k), SFGP_OK) << sfgp_last_error();
    Owned<sfgp_kernel> pca(k);
    double v = 0;
    const double x[2] = {0, 0};
    EXPECT_EQ(sfgp_kernel_eval(pca.get(), x, x, 2, &v), SFGP_ERR_UNSUPPORTED);
    EXPECT_EQ(sfgp_kernel_pca_build(samples.data(), 3, ref.get(), 5, &k), SFGP_ERR_RANK_TOO_LARGE);

    const fs::path path = fs::temp_directory_path() / "sfgp_capi_pca.json";
    ASSERT_EQ(sfgp_kernel_pca_save(pca.get(), path.c_str()), SFGP_OK);
    ASSERT_EQ(sfgp_kernel_pca_load(path.c_str(), ref.get(), &k), SFGP_OK);
    sfgp_kernel_free(k);
    const std::vector<double> xy{0, 0, 1, 1};
    sfgp_pointset* other = nullptr;
    ASSERT_EQ(sfgp_pointset_create(xy.data(), 2, 2, &other), SFGP_OK);
    Owned<sfgp_pointset> other_owned(other);
    EXPECT_EQ(sfgp_kernel_pca_load(path.c_str(), other, &k), SFGP_ERR_ANCHOR_MISMATCH);
    fs::remove(path);
}

namespace {

void record(const sfgp_iteration* it, void* user) {
    static_cast<std::vector<sfgp_iteration>*>(user)->push_back(*it);
}

}  // namespace

TEST(CApi, RegisterAndEvaluate) {
    auto ref = fish();
    auto inst = make_instance(ref.get(), 0.4, 11);
    auto kernel = benchmark_kernel();
    sfgp_config cfg;
    sfgp_config_default(&cfg);
    const double nn = sfgp_pointset_mean_nn_distance(ref.get());
    cfg.sigma2_init = 4 * nn * nn;
    cfg.p_min = 0.05;

    std::vector<sfgp_iteration> seen;
    sfgp_result* raw = nullptr;
    ASSERT_EQ(sfgp_register(ref.get(), sfgp_instance_target(inst.get()), kernel.get(), &cfg, record, &seen, &raw),
              SFGP_OK)
        << sfgp_last_error();
    Owned<sfgp_result> res(raw);
    sfgp_result_info info;
    ASSERT_EQ(sfgp_result_info_get(res.get(), &info), SFGP_OK);
    EXPECT_FALSE(info.failed);
    EXPECT_TRUE(info.all_finite);
    EXPECT_GE(info.min_sigma2, 1e-12);
    EXPECT_EQ(static_cast<size_t>(info.iters), seen.size());
    EXPECT_GT(info.n_missing, 0u);

    std::vector<sfgp_iteration> stored(seen.size());
    EXPECT_EQ(sfgp_result_trace(res.get(), stored.data(), stored.size()), seen.size());
    for (size_t i = 0; i < seen.size(); ++i) {
        EXPECT_EQ(stored[i].iter, static_cast<int>(i) + 1);
        EXPECT_EQ(stored[i].n_inliers, seen[i].n_inliers);
    }

    size_t n_sigma = 0;
    const double* sigma2 = sfgp_result_sigma2(res.get(), &n_sigma);
    EXPECT_EQ(n_sigma, sfgp_pointset_size(ref.get()));
    for (size_t i = 0; i < n_sigma; ++i) EXPECT_GE(sigma2[i], 1e-12);

    const size_t n_missing = sfgp_result_missing(res.get(), nullptr, 0);
    EXPECT_EQ(n_missing, info.n_missing);
    std::vector<size_t> missing(n_missing);
    sfgp_result_missing(res.get(), missing.data(), missing.size());

    sfgp_metrics m1, m2;
    ASSERT_EQ(sfgp_evaluate(res.get(), inst.get(), &m1), SFGP_OK);
    ASSERT_EQ(sfgp_evaluate_points(sfgp_result_deformed(res.get()), missing.data(), missing.size(), inst.get(), &m2),
              SFGP_OK);
    EXPECT_EQ(m1.success, 1);
    EXPECT_EQ(m1.error_all, m2.error_all);
    EXPECT_EQ(m1.error_missing, m2.error_missing);
    EXPECT_EQ(m1.recall, m2.recall);
    EXPECT_EQ(m1.precision, m2.precision);
    EXPECT_LT(m1.error_all, 0.01);

    const fs::path dir = fs::temp_directory_path() / "sfgp_capi_result";
    fs::create_directories(dir);
    EXPECT_EQ(sfgp_result_write_summary(res.get(), (dir / "summary.json").c_str()), SFGP_OK);
    EXPECT_EQ(sfgp_result_write_trace(res.get(), (dir / "trace.log").c_str()), SFGP_OK);
    EXPECT_GT(fs::file_size(dir / "summary.json"), 0u);
    fs::remove_all(dir);
}

TEST(CApi, FailedRunEvaluatesToNaN) {
    auto ref = fish();
    std::vector<double> far(2 * 10);
    for (size_t i = 0; i < far.size(); ++i) far[i] = 1e3 + static_cast<double>(i);
    sfgp_pointset* target = nullptr;
    ASSERT_EQ(sfgp_pointset_create(far.data(), 10, 2, &target), SFGP_OK);
    Owned<sfgp_pointset> t(target);
    auto kernel = benchmark_kernel();
    sfgp_config cfg;
    sfgp_config_default(&cfg);
    sfgp_result* raw = nullptr;
    ASSERT_EQ(sfgp_register(ref.get(), t.get(), kernel.get(), &cfg, nullptr, nullptr, &raw), SFGP_OK)
        << sfgp_last_error();
    Owned<sfgp_result> res(raw);
    sfgp_result_info info;
    sfgp_result_info_get(res.get(), &info);
    EXPECT_TRUE(info.failed);

    auto inst = make_instance(ref.get(), 0.0, 1);
    sfgp_metrics m;
    ASSERT_EQ(sfgp_evaluate(res.get(), inst.get(), &m), SFGP_OK);
    EXPECT_EQ(m.success, 0);
    EXPECT_TRUE(std::isnan(m.error_all));
    EXPECT_TRUE(std::isnan(m.error_missing));
    EXPECT_TRUE(std::isnan(m.error_nonmissing));

    const int failed[4] = {0, 1, 0, 0};
    double ratio = 0;
    ASSERT_EQ(sfgp_success_ratio(failed, 4, &ratio), SFGP_OK);
    EXPECT_EQ(ratio, 0.75);
}

TEST(CApi, InstanceDirectoryRoundTrip) {
    auto ref = fish();
    auto inst = make_instance(ref.get(), 0.3, 9);
    const fs::path dir = fs::temp_directory_path() / "sfgp_capi_instance";
    fs::remove_all(dir);
    ASSERT_EQ(sfgp_instance_write(inst.get(), dir.c_str()), SFGP_OK);
    sfgp_instance* raw = nullptr;
    ASSERT_EQ(sfgp_instance_read(dir.c_str(), &raw), SFGP_OK);
    Owned<sfgp_instance> back(raw);
    size_t n1 = 0, n2 = 0;
    const unsigned char* m1 = sfgp_instance_missing_mask(inst.get(), &n1);
    const unsigned char* m2 = sfgp_instance_missing_mask(back.get(), &n2);
    ASSERT_EQ(n1, n2);
    EXPECT_TRUE(std::equal(m1, m1 + n1, m2));
    const sfgp_pointset* t1 = sfgp_instance_target(inst.get());
    const sfgp_pointset* t2 = sfgp_instance_target(back.get());
    ASSERT_EQ(sfgp_pointset_size(t1), sfgp_pointset_size(t2));
    const size_t len = sfgp_pointset_size(t1) * 2;
    EXPECT_TRUE(std::equal(sfgp_pointset_coords(t1), sfgp_pointset_coords(t1) + len, sfgp_pointset_coords(t2)));
    fs::remove_all(dir);
    EXPECT_EQ(sfgp_instance_read(dir.c_str(), &raw), SFGP_ERR_IO);
}

TEST(CApi, NullArguments) {
    EXPECT_EQ(sfgp_pointset_create(nullptr, 3, 2, nullptr), SFGP_ERR_INVALID_ARGUMENT);
    EXPECT_EQ(sfgp_register(nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr), SFGP_ERR_INVALID_ARGUMENT);
    EXPECT_EQ(sfgp_config_validate(nullptr), SFGP_ERR_INVALID_ARGUMENT);
    sfgp_pointset_free(nullptr);
    sfgp_result_free(nullptr);
}
