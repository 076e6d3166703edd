// Sensor calibration: time delays, lever arm, offset/scale regression,
// steering ratio and the noise-corrected wheel circumference estimator.
#pragma once

#include "drkit/core.hpp"
#include "drkit/simkit.hpp"

#include <optional>
#include <span>
#include <vector>

namespace drk::calib {

struct DelayEstimate {
    double delay = 0.0;            ///< [s], positive when `delayed` lags `reference`
    double correlation_peak = 0.0; ///< normalized correlation at the peak
    double search_window = 0.0;    ///< [s]
    int lag_samples = 0;           ///< discrete lag of the peak in reference samples
};

/// Cross-correlates `delayed` against the `reference` rate signal.
///
/// Orientation or position channels of `delayed` are unwrapped and
/// differentiated first; the result is smoothed with a centered mean filter,
/// resampled onto the reference clock and correlated at every lag within the
/// window. The peak is refined by a parabola through the three lags around it;
/// exact ties go to the smallest |lag|.
DelayEstimate estimate_time_delay(const SensorSeries& reference, const SensorSeries& delayed, double search_window,
                                  std::size_t filter_window);

/// True when the delay estimator differentiates this channel before use.
bool is_integrated_channel(const std::string& channel);

/// Central differences on interior samples, one-sided at the edges.
SensorSeries differentiate(const SensorSeries& series);
std::vector<double> differentiate(std::span<const double> t, std::span<const double> v);

/// Fit of y = scale * x + offset.
struct LinearFit {
    double scale = 1.0;
    double offset = 0.0;
    Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero(); ///< of (scale, offset)
    std::size_t n_samples = 0;
    double residual_sigma = 0.0;
};

/// ω_meas = s·ω + o  <=>  ω = (1/s)·ω_meas − o/s, covariance propagated to first order.
LinearFit invert_fit(const LinearFit& fit);

/// Recursive least squares for y = scale * x + offset with exponential
/// forgetting. The estimate stays at the prior (scale 1, offset 0) until two
/// samples with distinct regressors arrive; from there the filter is started
/// from the exact batch solution of the buffered samples, so with forgetting 1
/// the running estimate always equals batch least squares.
class RecursiveLinearRegression {
public:
    explicit RecursiveLinearRegression(double forgetting = 1.0);

    void update(double x, double y);

    bool initialized() const noexcept { return initialized_; }
    std::size_t count() const noexcept { return count_; }
    Eigen::Vector2d estimate() const noexcept { return theta_; }

    /// Throws ErrorCode::Unobservable while the regressor has been constant.
    LinearFit result() const;

    /// Estimate after each sample, for convergence plots.
    const std::vector<Eigen::Vector2d>& trace() const noexcept { return trace_; }

private:
    void start_from_buffer();

    double forgetting_;
    bool initialized_ = false;
    std::size_t count_ = 0;
    double weight_sum_ = 0.0;
    double sse_ = 0.0;
    Eigen::Vector2d theta_{1.0, 0.0};
    Eigen::Matrix2d p_ = 1e6 * Eigen::Matrix2d::Identity();
    std::vector<Eigen::Vector2d> buffer_;
    std::vector<Eigen::Vector2d> trace_;
};

struct RlsResult {
    LinearFit fit;
    std::vector<Eigen::Vector2d> trace;
};

RlsResult rls_fit(std::span<const double> x, std::span<const double> y, double forgetting = 1.0);
/// Series must share timestamps.
RlsResult rls_fit(const SensorSeries& x, const SensorSeries& y, double forgetting = 1.0);

/// Integral of a scalar series under a piecewise cubic Hermite interpolant
/// (derivatives from finite differences).
class CumulativeIntegral {
public:
    CumulativeIntegral(const SensorSeries& series, std::size_t channel = 0);
    double at(double t) const;
    double between(double t0, double t1) const { return at(t1) - at(t0); }
    bool covers(double t) const { return t >= times_.front() && t <= times_.back(); }

private:
    std::vector<double> times_;
    std::vector<double> values_;
    std::vector<double> slopes_;
    std::vector<double> cumulative_;
};

struct ImuYawCalibration {
    LinearFit correction;                      ///< ω_true = scale·ω_meas + offset
    LinearFit sensor;                          ///< ω_meas = scale·ω_true + offset
    std::vector<Eigen::Vector2d> sensor_trace; ///< sensor model after each interval
    std::size_t intervals = 0;
};

/// Pairs GNSS heading increments with the integrated IMU yaw rate over the
/// same interval and regresses the interval-mean rates. When `delay` is given
/// its value is first removed from the GNSS timestamps.
ImuYawCalibration calibrate_imu_yaw(const SensorSeries& gnss_heading, const SensorSeries& imu_yaw_rate,
                                    const std::optional<DelayEstimate>& delay = std::nullopt,
                                    double forgetting = 1.0);

/// Applies ω_true = scale·ω_meas + offset to every sample.
SensorSeries apply_correction(const SensorSeries& series, const LinearFit& correction);

/// Regresses the single-track road-wheel angle ψ̇·(l_f + l_r)/v on the measured
/// steering angle, using samples with v > min_speed. scale is the inverse
/// steering ratio, offset the road-wheel angle offset.
LinearFit calibrate_steering(const SensorSeries& steering, const SensorSeries& speed,
                             const SensorSeries& yaw_rate_calibrated, const sim::VehicleParams& vehicle,
                             double min_speed = 1.0);

struct LeverArmEstimate {
    Eigen::Vector3d r_rel = Eigen::Vector3d::Zero(); ///< z is not observable with a yaw-only gyro
    bool z_observable = false;
    double residual_rms = 0.0;  ///< [m/s^2]
    double observability = 0.0; ///< smallest singular value of the stacked system / sqrt(rows)
    std::size_t n_samples = 0;
};

/// Lever arm of a GNSS antenna relative to the IMU from planar rigid-body
/// kinematics: a_gnss - a_imu = ω̇ × r + ω × (ω × r).
///
/// The Doppler velocity is rotated into the body frame with `heading` and
/// differentiated there (a_body = dv_body/dt + ω × v_body).
LeverArmEstimate estimate_lever_arm(const SensorSeries& gnss_velocity, const SensorSeries& imu_accel,
                                    const SensorSeries& imu_yaw_rate, const SensorSeries& heading);

/// Mean distance between points on two spheres of radii r1, r2 whose centers
/// are d apart: d + (r1² + r2²)/(3d). Requires d > r1 + r2.
double mean_sphere_distance(double d, double r1, double r2);

/// Per-endpoint variance used by the path-inflation closed form:
/// (σ_yy² + σ_zz²)/2, which is σ² in the isotropic case.
double effective_variance(const IsotropicNoiseModel& noise);

struct InflatedDistance {
    double value = 0.0;
    bool below_regime = false; ///< d < 3·max(σ_est); the closed form is increasingly biased there
};

/// Expected measured distance between two noisy position fixes whose true
/// distance is d: d + (σ_est,1² + σ_est,2²)/d.
InflatedDistance expected_inflated_distance(double d, const IsotropicNoiseModel& noise1,
                                            const IsotropicNoiseModel& noise2);

/// Inverts expected_inflated_distance: the larger root of d² − m·d + σ_tot² = 0.
/// Throws ErrorCode::SegmentTooShort when no real root exists.
double correct_segment_distance(double measured, const IsotropicNoiseModel& noise1,
                                const IsotropicNoiseModel& noise2);

/// Total length of a polyline through noisy fixes, summed chord by chord.
/// When `corrected` is set every chord is corrected for noise inflation;
/// chords too short to correct are merged with the following one.
double path_length(std::span<const Eigen::Vector3d> points, const IsotropicNoiseModel& noise, bool corrected);

struct WheelCalibrationOptions {
    double max_heading_change = 10.0 * 3.14159265358979323846 / 180.0;
    std::size_t max_phases = 64;
    std::size_t min_segments = 100;
};

struct WheelCalibration {
    LinearFit corrected;  ///< scale = circumference correction factor (noise-corrected chords)
    LinearFit naive;      ///< same fit on raw chords
    std::size_t segments_used = 0;
    std::size_t segments_discarded = 0; ///< curvature guard
    std::size_t segments_merged = 0;    ///< too short to correct
    std::size_t phases = 0;
    double confidence_halfwidth = 0.0;  ///< 95 % on the corrected factor
};

/// Fits true distance = factor · (ticks / ticks_per_rev) · nominal circumference
/// through the origin over segments of ≈ segment_length_target.
///
/// Segments are cut on the wheel odometer's distance so segment boundaries do
/// not depend on GNSS noise; every possible starting fix within one segment
/// length yields one partition (phase) and all phases enter the fit. With a
/// yaw-rate series, segments turning by more than max_heading_change are
/// discarded.
WheelCalibration estimate_wheel_circumference(const SensorSeries& ticks, const SensorSeries& gnss_position,
                                              const IsotropicNoiseModel& noise, double segment_length_target,
                                              const sim::VehicleParams& nominal,
                                              const SensorSeries* yaw_rate = nullptr,
                                              const WheelCalibrationOptions& options = {});

} // namespace drk::calib
