#include "drkit/drkit.h"

#include "drkit/app.hpp"
#include "drkit/calib.hpp"
#include "drkit/covest.hpp"
#include "drkit/fusion.hpp"

#include <cstring>
#include <new>
#include <optional>
#include <string>

struct drk_series {
    drk::SensorSeries series;
};

struct drk_rls {
    drk::calib::RecursiveLinearRegression rls;
};

struct drk_covest {
    drk::covest::OnlineCovEstimator estimator;
    std::size_t k;
    std::optional<drk::covest::CovEstimate> estimate;
};

namespace {

thread_local std::string last_error;

int status_of(drk::ErrorCode code)
{
    using drk::ErrorCode;
    switch (code) {
    case ErrorCode::InvalidArgument: return DRK_INVALID_ARGUMENT;
    case ErrorCode::Schema: return DRK_SCHEMA;
    case ErrorCode::MissingDependency: return DRK_MISSING_DEPENDENCY;
    case ErrorCode::Consistency: return DRK_CONSISTENCY;
    case ErrorCode::Numerical: return DRK_NUMERICAL;
    case ErrorCode::Unobservable: return DRK_UNOBSERVABLE;
    case ErrorCode::Domain: return DRK_DOMAIN;
    case ErrorCode::DegenerateCovariance: return DRK_DEGENERATE_COVARIANCE;
    case ErrorCode::NoConsensus: return DRK_NO_CONSENSUS;
    case ErrorCode::TooManyCorrelated: return DRK_TOO_MANY_CORRELATED;
    case ErrorCode::InsufficientEpochs: return DRK_INSUFFICIENT_EPOCHS;
    case ErrorCode::DirectionUndefined: return DRK_DIRECTION_UNDEFINED;
    case ErrorCode::ChainBroken: return DRK_CHAIN_BROKEN;
    case ErrorCode::SegmentTooShort: return DRK_SEGMENT_TOO_SHORT;
    }
    return DRK_INTERNAL;
}

int fail(int status, const std::string& message)
{
    last_error = message;
    return status;
}

template <class F>
int guard(F&& body)
{
    last_error.clear();
    try {
        body();
        return DRK_OK;
    } catch (const drk::Error& e) {
        return fail(status_of(e.code()), e.what());
    } catch (const std::bad_alloc&) {
        return fail(DRK_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(DRK_INTERNAL, e.what());
    }
}

void require(bool condition, const char* message)
{
    if (!condition) {
        throw drk::Error(drk::ErrorCode::InvalidArgument, message);
    }
}

Eigen::Matrix3d matrix3(const double* m)
{
    return Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(m);
}

void store3(const Eigen::Matrix3d& m, double* out)
{
    Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> target(out);
    target = m;
}

drk::fusion::OdometryEstimate estimate(const char* id, const double* t, const double* cov)
{
    drk::fusion::OdometryEstimate e;
    e.odometer_id = id;
    e.transform = drk::Transform2(t[0], t[1], t[2]);
    e.cov = matrix3(cov);
    return e;
}

} // namespace

extern "C" {

const char* drk_version(void)
{
    return "0.1.0";
}

const char* drk_last_error(void)
{
    return last_error.c_str();
}

const char* drk_status_name(int status)
{
    switch (status) {
    case DRK_OK: return "ok";
    case DRK_INVALID_ARGUMENT: return "invalid_argument";
    case DRK_SCHEMA: return "schema";
    case DRK_MISSING_DEPENDENCY: return "missing_dependency";
    case DRK_CONSISTENCY: return "consistency";
    case DRK_NUMERICAL: return "numerical";
    case DRK_UNOBSERVABLE: return "unobservable";
    case DRK_DOMAIN: return "domain";
    case DRK_DEGENERATE_COVARIANCE: return "degenerate_covariance";
    case DRK_NO_CONSENSUS: return "no_consensus";
    case DRK_TOO_MANY_CORRELATED: return "too_many_correlated";
    case DRK_INSUFFICIENT_EPOCHS: return "insufficient_epochs";
    case DRK_DIRECTION_UNDEFINED: return "direction_undefined";
    case DRK_CHAIN_BROKEN: return "chain_broken";
    case DRK_SEGMENT_TOO_SHORT: return "segment_too_short";
    case DRK_INTERNAL: return "internal";
    default: return "unknown";
    }
}

int drk_exit_code(int status)
{
    switch (status) {
    case DRK_OK: return 0;
    case DRK_SCHEMA: return 2;
    case DRK_MISSING_DEPENDENCY: return 3;
    case DRK_CONSISTENCY: return 4;
    case DRK_NUMERICAL:
    case DRK_DEGENERATE_COVARIANCE: return 5;
    default: return 1;
    }
}

int drk_run(const char* command, const char* config_json, char** summary_json)
{
    if (summary_json) {
        *summary_json = nullptr;
    }
    return guard([&] {
        require(command && config_json, "drk_run: command and config must not be NULL");
        drk::io::json config;
        try {
            config = drk::io::json::parse(config_json);
        } catch (const drk::io::json::parse_error& e) {
            throw drk::Error(drk::ErrorCode::Schema, std::string("config: invalid JSON: ") + e.what());
        }
        const drk::io::json summary = drk::app::run(command, config);
        if (summary_json) {
            const std::string text = summary.dump();
            char* out = static_cast<char*>(std::malloc(text.size() + 1));
            if (!out) {
                throw std::bad_alloc();
            }
            std::memcpy(out, text.c_str(), text.size() + 1);
            *summary_json = out;
        }
    });
}

void drk_free_string(char* s)
{
    std::free(s);
}

int drk_series_create(const char* sensor_id, const char* channel, size_t dim, drk_series** out)
{
    return guard([&] {
        require(sensor_id && channel && out, "drk_series_create: NULL argument");
        require(dim >= 1, "drk_series_create: dim must be >= 1");
        *out = new drk_series{drk::SensorSeries(sensor_id, channel, dim)};
    });
}

void drk_series_destroy(drk_series* series)
{
    delete series;
}

int drk_series_push(drk_series* series, double t, const double* values)
{
    return guard([&] {
        require(series && values, "drk_series_push: NULL argument");
        series->series.push_back(t, std::span<const double>(values, series->series.dim()));
    });
}

size_t drk_series_size(const drk_series* series)
{
    return series ? series->series.size() : 0;
}

int drk_series_interpolate(const drk_series* series, double t, double* values)
{
    return guard([&] {
        require(series && values, "drk_series_interpolate: NULL argument");
        const Eigen::VectorXd v = series->series.interpolate(t);
        std::copy(v.data(), v.data() + v.size(), values);
    });
}

int drk_estimate_time_delay(const drk_series* reference, const drk_series* delayed, double search_window,
                            size_t filter_window, double* delay, double* correlation_peak)
{
    return guard([&] {
        require(reference && delayed && delay, "drk_estimate_time_delay: NULL argument");
        const auto d =
            drk::calib::estimate_time_delay(reference->series, delayed->series, search_window, filter_window);
        *delay = d.delay;
        if (correlation_peak) {
            *correlation_peak = d.correlation_peak;
        }
    });
}

int drk_rls_create(double forgetting, drk_rls** out)
{
    return guard([&] {
        require(out != nullptr, "drk_rls_create: NULL argument");
        *out = new drk_rls{drk::calib::RecursiveLinearRegression(forgetting)};
    });
}

void drk_rls_destroy(drk_rls* rls)
{
    delete rls;
}

int drk_rls_update(drk_rls* rls, double x, double y)
{
    return guard([&] {
        require(rls != nullptr, "drk_rls_update: NULL handle");
        rls->rls.update(x, y);
    });
}

int drk_rls_result(const drk_rls* rls, double* scale, double* offset, double* covariance)
{
    return guard([&] {
        require(rls && scale && offset, "drk_rls_result: NULL argument");
        const auto fit = rls->rls.result();
        *scale = fit.scale;
        *offset = fit.offset;
        if (covariance) {
            Eigen::Map<Eigen::Matrix<double, 2, 2, Eigen::RowMajor>> target(covariance);
            target = fit.covariance;
        }
    });
}

int drk_covest_create(size_t k, size_t window, const size_t* correlated_pairs, size_t n_pairs, drk_covest** out)
{
    return guard([&] {
        require(out != nullptr, "drk_covest_create: NULL argument");
        require(k >= 2, "drk_covest_create: need at least two odometers");
        require(n_pairs == 0 || correlated_pairs, "drk_covest_create: NULL pair list");
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < k; ++i) {
            ids.push_back("odo" + std::to_string(i));
        }
        std::set<drk::covest::PairKey> pairs;
        for (std::size_t p = 0; p < n_pairs; ++p) {
            const std::size_t a = correlated_pairs[2 * p];
            const std::size_t b = correlated_pairs[2 * p + 1];
            require(a < k && b < k && a != b, "drk_covest_create: correlated pair index out of range");
            pairs.insert(drk::covest::make_pair_key(a, b));
        }
        *out = new drk_covest{drk::covest::OnlineCovEstimator(ids, 3, window, pairs, {false, false, true}), k,
                              std::nullopt};
    });
}

void drk_covest_destroy(drk_covest* est)
{
    delete est;
}

int drk_covest_push(drk_covest* est, const double* transforms)
{
    return guard([&] {
        require(est && transforms, "drk_covest_push: NULL argument");
        std::vector<Eigen::VectorXd> values;
        for (std::size_t i = 0; i < est->k; ++i) {
            values.emplace_back(Eigen::Vector3d(transforms[3 * i], transforms[3 * i + 1], transforms[3 * i + 2]));
        }
        est->estimator.push(values);
    });
}

int drk_covest_estimate(drk_covest* est)
{
    return guard([&] {
        require(est != nullptr, "drk_covest_estimate: NULL handle");
        est->estimate = est->estimator.estimate();
    });
}

int drk_covest_covariance(const drk_covest* est, size_t index, double* cov)
{
    return guard([&] {
        require(est && cov, "drk_covest_covariance: NULL argument");
        require(est->estimate.has_value(), "drk_covest_covariance: call drk_covest_estimate first");
        require(index < est->k, "drk_covest_covariance: index out of range");
        store3(est->estimate->covariances[index], cov);
    });
}

int drk_covest_cross(const drk_covest* est, size_t a, size_t b, double* cross)
{
    return guard([&] {
        require(est && cross, "drk_covest_cross: NULL argument");
        require(est->estimate.has_value(), "drk_covest_cross: call drk_covest_estimate first");
        require(a < est->k && b < est->k && a != b, "drk_covest_cross: index out of range");
        const auto it = est->estimate->cross.find(drk::covest::make_pair_key(a, b));
        require(it != est->estimate->cross.end(), "drk_covest_cross: pair was not declared correlated");
        const Eigen::Matrix3d m = it->second;
        store3(a < b ? m : Eigen::Matrix3d(m.transpose()), cross);
    });
}

int drk_chi2_quantile(double p, int dof, double* quantile)
{
    return guard([&] {
        require(quantile != nullptr, "drk_chi2_quantile: NULL argument");
        *quantile = drk::fusion::chi2_quantile(p, dof);
    });
}

int drk_nis_test(const double* candidate, const double* candidate_cov, const double* reference,
                 const double* reference_cov, const double* cross, double alpha, double* nis, double* threshold,
                 int* accepted)
{
    return guard([&] {
        require(candidate && candidate_cov && reference && reference_cov && nis,
                "drk_nis_test: NULL argument");
        const auto c = estimate("candidate", candidate, candidate_cov);
        const auto r = estimate("reference", reference, reference_cov);
        std::optional<Eigen::Matrix3d> x;
        if (cross) {
            x = matrix3(cross);
        }
        const auto v = drk::fusion::nis_test(c, r, alpha, x ? &*x : nullptr);
        *nis = v.nis;
        if (threshold) {
            *threshold = v.threshold;
        }
        if (accepted) {
            *accepted = v.accepted ? 1 : 0;
        }
    });
}

int drk_fuse_pair(const double* a, const double* a_cov, const double* b, const double* b_cov, const double* cross,
                  double* fused, double* fused_cov)
{
    return guard([&] {
        require(a && a_cov && b && b_cov && fused, "drk_fuse_pair: NULL argument");
        std::optional<Eigen::Matrix3d> x;
        if (cross) {
            x = matrix3(cross);
        }
        const auto f = drk::fusion::fuse_pair(estimate("a", a, a_cov), estimate("b", b, b_cov), x ? &*x : nullptr);
        const Eigen::Vector3d v = f.transform.vector();
        std::copy(v.data(), v.data() + 3, fused);
        if (fused_cov) {
            store3(f.cov, fused_cov);
        }
    });
}

int drk_correct_segment_distance(double measured, double sigma1, double sigma2, double* distance)
{
    return guard([&] {
        require(distance != nullptr, "drk_correct_segment_distance: NULL argument");
        *distance = drk::calib::correct_segment_distance(measured, drk::IsotropicNoiseModel::isotropic(sigma1),
                                                         drk::IsotropicNoiseModel::isotropic(sigma2));
    });
}

} // extern "C"
