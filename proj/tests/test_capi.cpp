#include "drkit/drkit.h"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>

TEST_CASE("status names and exit codes")
{
    CHECK(std::string(drk_status_name(DRK_OK)) == "ok");
    CHECK(drk_exit_code(DRK_OK) == 0);
    CHECK(drk_exit_code(DRK_SCHEMA) == 2);
    CHECK(drk_exit_code(DRK_MISSING_DEPENDENCY) == 3);
    CHECK(drk_exit_code(DRK_CONSISTENCY) == 4);
    CHECK(drk_exit_code(DRK_NUMERICAL) == 5);
    CHECK(drk_exit_code(DRK_DEGENERATE_COVARIANCE) == 5);
    CHECK(drk_exit_code(DRK_NO_CONSENSUS) == 1);
    CHECK(std::strlen(drk_version()) > 0);
}

TEST_CASE("series handle")
{
    drk_series* s = nullptr;
    REQUIRE(drk_series_create("imu", "yaw_rate", 1, &s) == DRK_OK);
    for (int i = 0; i < 10; ++i) {
        const double v = 2.0 * i;
        REQUIRE(drk_series_push(s, 0.1 * i, &v) == DRK_OK);
    }
    const double v = 0.0;
    CHECK(drk_series_push(s, 0.0, &v) == DRK_INVALID_ARGUMENT);
    CHECK(std::string(drk_last_error()).size() > 0);
    CHECK(drk_series_size(s) == 10);
    double out = 0.0;
    CHECK(drk_series_interpolate(s, 0.25, &out) == DRK_OK);
    CHECK(out == doctest::Approx(5.0));
    CHECK(drk_series_interpolate(s, 5.0, &out) == DRK_INVALID_ARGUMENT);
    drk_series_destroy(s);
    CHECK(drk_series_create("a", "b", 1, nullptr) == DRK_INVALID_ARGUMENT);
}

TEST_CASE("delay estimation through the C API")
{
    drk_series* ref = nullptr;
    drk_series* late = nullptr;
    REQUIRE(drk_series_create("imu", "yaw_rate", 1, &ref) == DRK_OK);
    REQUIRE(drk_series_create("gnss", "yaw_rate", 1, &late) == DRK_OK);
    for (int i = 0; i < 3000; ++i) {
        const double t = 0.01 * i;
        const double v = std::sin(t) + 0.5 * std::sin(3.3 * t);
        drk_series_push(ref, t, &v);
    }
    for (int i = 1; i < 300; ++i) {
        const double t = 0.1 * i;
        const double v = std::sin(t - 0.13) + 0.5 * std::sin(3.3 * (t - 0.13));
        drk_series_push(late, t, &v);
    }
    double delay = 0.0, peak = 0.0;
    CHECK(drk_estimate_time_delay(ref, late, 0.5, 1, &delay, &peak) == DRK_OK);
    CHECK(delay == doctest::Approx(0.13).epsilon(1e-3 / 0.13));
    drk_series_destroy(ref);
    drk_series_destroy(late);
}

TEST_CASE("RLS handle")
{
    drk_rls* rls = nullptr;
    REQUIRE(drk_rls_create(1.0, &rls) == DRK_OK);
    double scale = 0.0, offset = 0.0, cov[4];
    CHECK(drk_rls_result(rls, &scale, &offset, cov) == DRK_UNOBSERVABLE);
    for (int i = 0; i < 100; ++i) {
        const double x = std::sin(0.1 * i);
        drk_rls_update(rls, x, 1.0576 * x - 0.0028);
    }
    CHECK(drk_rls_result(rls, &scale, &offset, cov) == DRK_OK);
    CHECK(scale == doctest::Approx(1.0576).epsilon(1e-12));
    CHECK(offset == doctest::Approx(-0.0028).epsilon(1e-9));
    CHECK(cov[1] == doctest::Approx(cov[2]));
    drk_rls_destroy(rls);
    CHECK(drk_rls_create(1.5, &rls) == DRK_INVALID_ARGUMENT);
}

TEST_CASE("covariance estimator handle")
{
    const size_t pairs[] = {0, 1};
    drk_covest* est = nullptr;
    REQUIRE(drk_covest_create(4, 2000, pairs, 1, &est) == DRK_OK);
    CHECK(drk_covest_estimate(est) == DRK_INSUFFICIENT_EPOCHS);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    const double sigma[4] = {0.1, 0.2, 0.3, 0.4};
    for (int e = 0; e < 2000; ++e) {
        double t[12];
        const double shared = n(rng);
        for (int i = 0; i < 4; ++i) {
            t[3 * i] = 1.0 + sigma[i] * n(rng) + (i < 2 ? 0.1 * shared : 0.0);
            t[3 * i + 1] = sigma[i] * n(rng);
            t[3 * i + 2] = 0.1 * sigma[i] * n(rng);
        }
        REQUIRE(drk_covest_push(est, t) == DRK_OK);
    }
    REQUIRE(drk_covest_estimate(est) == DRK_OK);
    double cov[9], cross[9], cross_t[9];
    for (int i = 0; i < 4; ++i) {
        REQUIRE(drk_covest_covariance(est, i, cov) == DRK_OK);
        CHECK(cov[4] == doctest::Approx(sigma[i] * sigma[i]).epsilon(0.15));
    }
    REQUIRE(drk_covest_cross(est, 0, 1, cross) == DRK_OK);
    REQUIRE(drk_covest_cross(est, 1, 0, cross_t) == DRK_OK);
    CHECK(cross[0] == doctest::Approx(0.01).epsilon(0.5));
    CHECK(cross[1] == doctest::Approx(cross_t[3]));
    CHECK(drk_covest_cross(est, 2, 3, cross) == DRK_INVALID_ARGUMENT);
    CHECK(drk_covest_covariance(est, 9, cov) == DRK_INVALID_ARGUMENT);
    drk_covest_destroy(est);
}

TEST_CASE("scalar helpers")
{
    double q = 0.0;
    CHECK(drk_chi2_quantile(0.95, 3, &q) == DRK_OK);
    CHECK(std::abs(q - 7.815) <= 1e-3);
    CHECK(drk_chi2_quantile(0.95, 2, &q) == DRK_OK);
    CHECK(std::abs(q - 5.991) <= 1e-3);

    const double zero[3] = {0, 0, 0}, one[3] = {1, 0, 0};
    const double half[9] = {0.5, 0, 0, 0, 0.5, 0, 0, 0, 0.5};
    double nis = 0.0, threshold = 0.0;
    int accepted = 0;
    CHECK(drk_nis_test(one, half, zero, half, nullptr, 0.95, &nis, &threshold, &accepted) == DRK_OK);
    CHECK(nis == doctest::Approx(1.0));
    CHECK(accepted == 1);

    const double ident[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    const double two[3] = {2, 0, 0};
    double fused[3], fused_cov[9];
    CHECK(drk_fuse_pair(zero, ident, two, ident, nullptr, fused, fused_cov) == DRK_OK);
    CHECK(fused[0] == doctest::Approx(1.0));
    CHECK(fused_cov[0] == doctest::Approx(0.5));
    CHECK(fused_cov[4] == doctest::Approx(0.5));

    double d = 0.0;
    CHECK(drk_correct_segment_distance(10.2, 1.0, 1.0, &d) == DRK_OK);
    CHECK(d == doctest::Approx(10.0));
    CHECK(drk_correct_segment_distance(1.0, 1.0, 1.0, &d) == DRK_SEGMENT_TOO_SHORT);
}

TEST_CASE("drk_run reports status and summary")
{
    char* summary = nullptr;
    CHECK(drk_run("simulate", "{\"scenario\": \"/nonexistent.json\", \"out\": \"/tmp/x\"}", &summary) ==
          DRK_MISSING_DEPENDENCY);
    CHECK(summary == nullptr);
    CHECK(drk_run("simulate", "not json", &summary) == DRK_SCHEMA);
    CHECK(drk_run(nullptr, "{}", &summary) == DRK_INVALID_ARGUMENT);

    const auto dir = std::filesystem::temp_directory_path() / "drkit_test_capi";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    {
        std::FILE* f = std::fopen((dir / "a.json").c_str(), "w");
        std::fputs("{\"x\": [1.5, 2.5]}", f);
        std::fclose(f);
    }
    const std::string cfg = "{\"input\": \"" + (dir / "a.json").string() + "\", \"out\": \"" + (dir / "p").string() + "\"}";
    REQUIRE(drk_run("plotdata", cfg.c_str(), &summary) == DRK_OK);
    REQUIRE(summary != nullptr);
    CHECK(std::string(summary).find("\"records\":1") != std::string::npos);
    drk_free_string(summary);
    CHECK(std::filesystem::exists(dir / "p" / "a.csv"));
}
