#include "drkit/calib.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace drk::calib {
namespace {

[[noreturn]] void invalid(const std::string& what)
{
    throw Error(ErrorCode::InvalidArgument, what);
}

[[noreturn]] void unobservable(const std::string& what)
{
    throw Error(ErrorCode::Unobservable, what);
}

bool is_orientation_channel(const std::string& channel)
{
    return channel == "heading" || channel == "orientation" || channel == "yaw";
}

double median_step(const std::vector<double>& t)
{
    std::vector<double> steps(t.size() - 1);
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
        steps[i] = t[i + 1] - t[i];
    }
    std::nth_element(steps.begin(), steps.begin() + static_cast<std::ptrdiff_t>(steps.size() / 2), steps.end());
    return steps[steps.size() / 2];
}

// Normalized (Pearson) correlation of a[i] with b[i + lag] over samples where
// both are defined; NaN when either side has no variance.
double correlation_at(const std::vector<double>& a, const std::vector<double>& b, long lag, std::size_t* count)
{
    const long n = static_cast<long>(a.size());
    double sa = 0, sb = 0;
    std::size_t m = 0;
    for (long i = std::max(0L, -lag); i < n && i + lag < n; ++i) {
        const double bv = b[static_cast<std::size_t>(i + lag)];
        if (std::isnan(bv)) {
            continue;
        }
        sa += a[static_cast<std::size_t>(i)];
        sb += bv;
        ++m;
    }
    *count = m;
    if (m < 3) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    const double ma = sa / static_cast<double>(m);
    const double mb = sb / static_cast<double>(m);
    double saa = 0, sbb = 0, sab = 0;
    for (long i = std::max(0L, -lag); i < n && i + lag < n; ++i) {
        const double bv = b[static_cast<std::size_t>(i + lag)];
        if (std::isnan(bv)) {
            continue;
        }
        const double da = a[static_cast<std::size_t>(i)] - ma;
        const double db = bv - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    const double scale_a = std::max(1.0, ma * ma) * static_cast<double>(m);
    const double scale_b = std::max(1.0, mb * mb) * static_cast<double>(m);
    if (saa <= 1e-24 * scale_a || sbb <= 1e-24 * scale_b) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return sab / std::sqrt(saa * sbb);
}

} // namespace

bool is_integrated_channel(const std::string& channel)
{
    return is_orientation_channel(channel) || channel == "position" || channel == "distance" || channel == "ticks";
}

std::vector<double> differentiate(std::span<const double> t, std::span<const double> v)
{
    if (t.size() != v.size()) {
        invalid("differentiate: time and value lengths differ");
    }
    if (t.size() < 2) {
        invalid("differentiate: need at least two samples");
    }
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
        if (!(t[i + 1] > t[i])) {
            invalid("differentiate: duplicate or decreasing timestamps");
        }
    }
    const std::size_t n = t.size();
    std::vector<double> out(n);
    out[0] = (v[1] - v[0]) / (t[1] - t[0]);
    out[n - 1] = (v[n - 1] - v[n - 2]) / (t[n - 1] - t[n - 2]);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        out[i] = (v[i + 1] - v[i - 1]) / (t[i + 1] - t[i - 1]);
    }
    return out;
}

SensorSeries differentiate(const SensorSeries& series)
{
    const std::size_t d = series.dim();
    std::vector<std::vector<double>> channels(d);
    for (std::size_t c = 0; c < d; ++c) {
        channels[c] = differentiate(series.times(), series.column(c));
    }
    SensorSeries out(series.sensor_id(), series.channel() + "_rate", d);
    out.reserve(series.size());
    std::vector<double> sample(d);
    for (std::size_t i = 0; i < series.size(); ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            sample[c] = channels[c][i];
        }
        out.push_back(series.time(i), sample);
    }
    return out;
}

DelayEstimate estimate_time_delay(const SensorSeries& reference, const SensorSeries& delayed, double search_window,
                                  std::size_t filter_window)
{
    if (reference.dim() != 1 || delayed.dim() != 1) {
        invalid("estimate_time_delay: both series must be scalar");
    }
    if (reference.size() < 3 || delayed.size() < 3) {
        invalid("estimate_time_delay: series too short");
    }
    if (!(search_window > 0.0)) {
        invalid("estimate_time_delay: search window must be > 0");
    }

    SensorSeries signal = delayed;
    if (is_orientation_channel(delayed.channel())) {
        const std::vector<double> unwrapped = unwrap_angles(delayed.column(0));
        SensorSeries u(delayed.sensor_id(), delayed.channel(), 1);
        u.reserve(delayed.size());
        for (std::size_t i = 0; i < delayed.size(); ++i) {
            u.push_back(delayed.time(i), unwrapped[i]);
        }
        signal = differentiate(u);
    } else if (is_integrated_channel(delayed.channel())) {
        signal = differentiate(delayed);
    }
    if (filter_window > 1) {
        signal = sliding_mean_filter(signal, filter_window);
    }

    const double h_ref = median_step(reference.times());
    const double h_delayed = median_step(signal.times());
    if (h_ref > h_delayed * (1.0 + 1e-6)) {
        invalid("estimate_time_delay: reference rate must be at least the delayed rate");
    }

    const std::vector<double> ref = reference.column(0);
    std::vector<double> resampled(reference.size(), std::numeric_limits<double>::quiet_NaN());
    std::size_t valid = 0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        if (signal.covers(reference.time(i))) {
            resampled[i] = signal.interpolate(reference.time(i), 0);
            ++valid;
        }
    }
    if (static_cast<double>(valid) * h_ref < 10.0) {
        invalid("estimate_time_delay: series overlap shorter than 10 s");
    }

    const long max_lag = static_cast<long>(std::floor(search_window / h_ref + 1e-9));
    std::vector<double> corr(static_cast<std::size_t>(2 * max_lag + 1), std::numeric_limits<double>::quiet_NaN());
    for (long lag = -max_lag; lag <= max_lag; ++lag) {
        std::size_t count = 0;
        corr[static_cast<std::size_t>(lag + max_lag)] = correlation_at(ref, resampled, lag, &count);
    }
    auto c_at = [&](long lag) { return corr[static_cast<std::size_t>(lag + max_lag)]; };

    // Visit lags by increasing |lag| so exact ties keep the smallest delay.
    long best = 0;
    double best_value = -std::numeric_limits<double>::infinity();
    bool found = false;
    for (long m = 0; m <= max_lag; ++m) {
        for (long lag : {m, -m}) {
            if (m == 0 && lag < 0) {
                continue;
            }
            const double c = c_at(lag);
            if (!std::isnan(c) && c > best_value) {
                best_value = c;
                best = lag;
                found = true;
            }
        }
    }
    if (!found) {
        unobservable("estimate_time_delay: correlation undefined (signal without variation)");
    }
    if (best_value < 0.5) {
        std::ostringstream os;
        os << "estimate_time_delay: correlation peak " << best_value << " below 0.5";
        unobservable(os.str());
    }

    double offset = 0.0;
    if (best > -max_lag && best < max_lag) {
        const double cm = c_at(best - 1);
        const double cp = c_at(best + 1);
        const double denom = cm - 2.0 * best_value + cp;
        if (!std::isnan(cm) && !std::isnan(cp) && denom < 0.0) {
            offset = std::clamp(0.5 * (cm - cp) / denom, -0.5, 0.5);
        }
    }
    DelayEstimate out;
    out.lag_samples = static_cast<int>(best);
    out.delay = std::clamp((static_cast<double>(best) + offset) * h_ref, -search_window, search_window);
    out.correlation_peak = best_value;
    out.search_window = search_window;
    return out;
}

LinearFit invert_fit(const LinearFit& fit)
{
    if (fit.scale == 0.0) {
        throw Error(ErrorCode::Numerical, "invert_fit: zero scale");
    }
    const double a = fit.scale;
    const double b = fit.offset;
    Eigen::Matrix2d jac;
    jac << -1.0 / (a * a), 0.0, b / (a * a), -1.0 / a;
    LinearFit out = fit;
    out.scale = 1.0 / a;
    out.offset = -b / a;
    out.covariance = symmetrize(jac * fit.covariance * jac.transpose());
    out.residual_sigma = fit.residual_sigma / std::abs(a);
    return out;
}

RecursiveLinearRegression::RecursiveLinearRegression(double forgetting) : forgetting_(forgetting)
{
    if (!(forgetting > 0.0 && forgetting <= 1.0)) {
        invalid("recursive regression: forgetting factor must be in (0, 1]");
    }
}

void RecursiveLinearRegression::start_from_buffer()
{
    Eigen::Matrix2d info = Eigen::Matrix2d::Zero();
    Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
    double w = 1.0;
    weight_sum_ = 0.0;
    for (auto it = buffer_.rbegin(); it != buffer_.rend(); ++it) {
        const Eigen::Vector2d phi((*it)(0), 1.0);
        info += w * phi * phi.transpose();
        rhs += w * phi * (*it)(1);
        weight_sum_ += w;
        w *= forgetting_;
    }
    p_ = symmetrize(info.inverse());
    theta_ = p_ * rhs;
    sse_ = 0.0;
    w = 1.0;
    for (auto it = buffer_.rbegin(); it != buffer_.rend(); ++it) {
        const double e = (*it)(1) - (theta_(0) * (*it)(0) + theta_(1));
        sse_ += w * e * e;
        w *= forgetting_;
    }
    buffer_.clear();
    initialized_ = true;
}

void RecursiveLinearRegression::update(double x, double y)
{
    if (!std::isfinite(x) || !std::isfinite(y)) {
        invalid("recursive regression: non-finite sample");
    }
    ++count_;
    if (!initialized_) {
        buffer_.emplace_back(x, y);
        const double x0 = buffer_.front()(0);
        if (std::abs(x - x0) > 1e-9 * std::max(1.0, std::abs(x0))) {
            start_from_buffer();
        }
        trace_.push_back(theta_);
        return;
    }
    const Eigen::Vector2d phi(x, 1.0);
    const double e = y - phi.dot(theta_);
    const Eigen::Vector2d p_phi = p_ * phi;
    const double denom = forgetting_ + phi.dot(p_phi);
    const Eigen::Vector2d gain = p_phi / denom;
    theta_ += gain * e;
    p_ = symmetrize((p_ - gain * p_phi.transpose()) / forgetting_);
    sse_ = forgetting_ * sse_ + forgetting_ * e * e / denom;
    weight_sum_ = forgetting_ * weight_sum_ + 1.0;
    trace_.push_back(theta_);
}

LinearFit RecursiveLinearRegression::result() const
{
    if (!initialized_) {
        unobservable("recursive regression: regressor is constant (degenerate)");
    }
    LinearFit fit;
    fit.scale = theta_(0);
    fit.offset = theta_(1);
    fit.n_samples = count_;
    const double dof = weight_sum_ - 2.0;
    const double sigma2 = dof > 1e-12 ? std::max(0.0, sse_) / dof : 0.0;
    fit.residual_sigma = std::sqrt(sigma2);
    fit.covariance = symmetrize(sigma2 * p_);
    return fit;
}

RlsResult rls_fit(std::span<const double> x, std::span<const double> y, double forgetting)
{
    if (x.size() != y.size()) {
        invalid("rls_fit: x and y lengths differ");
    }
    if (x.size() < 2) {
        invalid("rls_fit: need at least two samples");
    }
    RecursiveLinearRegression rls(forgetting);
    for (std::size_t i = 0; i < x.size(); ++i) {
        rls.update(x[i], y[i]);
    }
    return {rls.result(), rls.trace()};
}

RlsResult rls_fit(const SensorSeries& x, const SensorSeries& y, double forgetting)
{
    if (x.dim() != 1 || y.dim() != 1) {
        invalid("rls_fit: series must be scalar");
    }
    if (x.size() != y.size()) {
        invalid("rls_fit: series must be time-aligned");
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::abs(x.time(i) - y.time(i)) > 1e-9) {
            invalid("rls_fit: series must be time-aligned");
        }
    }
    return rls_fit(x.column(0), y.column(0), forgetting);
}

CumulativeIntegral::CumulativeIntegral(const SensorSeries& series, std::size_t channel)
    : times_(series.times()), values_(series.column(channel))
{
    if (times_.size() < 2) {
        invalid("cumulative integral: need at least two samples");
    }
    slopes_ = differentiate(times_, values_);
    cumulative_.resize(times_.size());
    cumulative_[0] = 0.0;
    for (std::size_t i = 0; i + 1 < times_.size(); ++i) {
        const double h = times_[i + 1] - times_[i];
        cumulative_[i + 1] = cumulative_[i] + 0.5 * h * (values_[i] + values_[i + 1]) +
                             h * h / 12.0 * (slopes_[i] - slopes_[i + 1]);
    }
}

double CumulativeIntegral::at(double t) const
{
    if (!covers(t)) {
        invalid("cumulative integral: time outside covered range");
    }
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    std::size_t i = static_cast<std::size_t>(it - times_.begin());
    i = i == 0 ? 0 : i - 1;
    if (i + 1 >= times_.size()) {
        return cumulative_.back();
    }
    const double h = times_[i + 1] - times_[i];
    const double s = (t - times_[i]) / h;
    const double s2 = s * s, s3 = s2 * s, s4 = s3 * s;
    const double i00 = s4 / 2 - s3 + s;
    const double i10 = s4 / 4 - 2 * s3 / 3 + s2 / 2;
    const double i01 = -s4 / 2 + s3;
    const double i11 = s4 / 4 - s3 / 3;
    return cumulative_[i] +
           h * (values_[i] * i00 + h * slopes_[i] * i10 + values_[i + 1] * i01 + h * slopes_[i + 1] * i11);
}

ImuYawCalibration calibrate_imu_yaw(const SensorSeries& gnss_heading, const SensorSeries& imu_yaw_rate,
                                    const std::optional<DelayEstimate>& delay, double forgetting)
{
    if (gnss_heading.dim() != 1 || imu_yaw_rate.dim() != 1) {
        invalid("calibrate_imu_yaw: heading and yaw rate must be scalar");
    }
    const SensorSeries heading = delay ? gnss_heading.shifted(-delay->delay) : gnss_heading;
    const CumulativeIntegral imu(imu_yaw_rate);

    RecursiveLinearRegression rls(forgetting);
    ImuYawCalibration out;
    for (std::size_t i = 0; i + 1 < heading.size(); ++i) {
        const double t0 = heading.time(i);
        const double t1 = heading.time(i + 1);
        if (!imu.covers(t0) || !imu.covers(t1)) {
            continue;
        }
        const double dt = t1 - t0;
        const double gnss_rate = wrap_angle(heading.value(i + 1) - heading.value(i)) / dt;
        const double imu_rate = imu.between(t0, t1) / dt;
        rls.update(imu_rate, gnss_rate);
        ++out.intervals;
        const Eigen::Vector2d c = rls.estimate();
        out.sensor_trace.emplace_back(1.0 / c(0), -c(1) / c(0));
    }
    if (out.intervals < 2) {
        invalid("calibrate_imu_yaw: fewer than two heading intervals overlap the IMU series");
    }
    out.correction = rls.result();
    out.sensor = invert_fit(out.correction);
    return out;
}

SensorSeries apply_correction(const SensorSeries& series, const LinearFit& correction)
{
    SensorSeries out(series.sensor_id(), series.channel(), series.dim());
    out.reserve(series.size());
    std::vector<double> v(series.dim());
    for (std::size_t i = 0; i < series.size(); ++i) {
        for (std::size_t c = 0; c < series.dim(); ++c) {
            v[c] = correction.scale * series.value(i, c) + correction.offset;
        }
        out.push_back(series.time(i), v);
    }
    return out;
}

LinearFit calibrate_steering(const SensorSeries& steering, const SensorSeries& speed,
                             const SensorSeries& yaw_rate_calibrated, const sim::VehicleParams& vehicle,
                             double min_speed)
{
    vehicle.validate();
    std::vector<double> xs;
    std::vector<double> ys;
    const double wheelbase = vehicle.wheelbase();
    for (std::size_t i = 0; i < steering.size(); ++i) {
        const double t = steering.time(i);
        if (!speed.covers(t) || !yaw_rate_calibrated.covers(t)) {
            continue;
        }
        const double v = speed.interpolate(t, 0);
        if (!(v > min_speed)) {
            continue;
        }
        xs.push_back(steering.value(i));
        ys.push_back(yaw_rate_calibrated.interpolate(t, 0) * wheelbase / v);
    }
    if (xs.size() < 2) {
        unobservable("calibrate_steering: no samples above the minimum speed");
    }
    const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
    if (*hi - *lo <= 1e-9 * std::max(1.0, std::abs(*lo))) {
        unobservable("calibrate_steering: steering angle has no variation");
    }
    return rls_fit(xs, ys).fit;
}

LeverArmEstimate estimate_lever_arm(const SensorSeries& gnss_velocity, const SensorSeries& imu_accel,
                                    const SensorSeries& imu_yaw_rate, const SensorSeries& heading)
{
    if (gnss_velocity.dim() < 2 || imu_accel.dim() < 2 || imu_yaw_rate.dim() != 1 || heading.dim() != 1) {
        invalid("estimate_lever_arm: need 2D velocity and acceleration, scalar yaw rate and heading");
    }
    SensorSeries unwrapped(heading.sensor_id(), heading.channel(), 1);
    {
        const std::vector<double> u = unwrap_angles(heading.column(0));
        for (std::size_t i = 0; i < heading.size(); ++i) {
            unwrapped.push_back(heading.time(i), u[i]);
        }
    }
    SensorSeries body_velocity(gnss_velocity.sensor_id(), "body_velocity", 2);
    for (std::size_t i = 0; i < gnss_velocity.size(); ++i) {
        const double t = gnss_velocity.time(i);
        if (!unwrapped.covers(t) || !imu_yaw_rate.covers(t) || !imu_accel.covers(t)) {
            continue;
        }
        const Eigen::Vector2d vw(gnss_velocity.value(i, 0), gnss_velocity.value(i, 1));
        const Eigen::Vector2d vb = rotation(-unwrapped.interpolate(t, 0)) * vw;
        body_velocity.push_back(t, Eigen::VectorXd(vb));
    }
    if (body_velocity.size() < 4) {
        invalid("estimate_lever_arm: too few overlapping samples");
    }
    const SensorSeries body_accel = differentiate(body_velocity);
    // IMU quantities are taken over the same stencil as the central difference
    // of the GNSS velocity, so gyro noise is not amplified by a 100 Hz derivative.
    const CumulativeIntegral accel_lon(imu_accel, 0);
    const CumulativeIntegral accel_lat(imu_accel, 1);

    const std::size_t m = body_velocity.size() - 2;
    Eigen::MatrixXd a(2 * static_cast<Eigen::Index>(m), 2);
    Eigen::VectorXd b(2 * static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t i = k + 1;
        const double t = body_velocity.time(i);
        const double t0 = body_velocity.time(i - 1);
        const double t1 = body_velocity.time(i + 1);
        const double w = imu_yaw_rate.interpolate(t, 0);
        const double wd = (imu_yaw_rate.interpolate(t1, 0) - imu_yaw_rate.interpolate(t0, 0)) / (t1 - t0);
        const double vx = body_velocity.value(i, 0);
        const double vy = body_velocity.value(i, 1);
        const double ax = body_accel.value(i, 0) - w * vy;
        const double ay = body_accel.value(i, 1) + w * vx;
        const auto r = static_cast<Eigen::Index>(2 * k);
        a(r, 0) = -w * w;
        a(r, 1) = -wd;
        a(r + 1, 0) = wd;
        a(r + 1, 1) = -w * w;
        b(r) = ax - accel_lon.between(t0, t1) / (t1 - t0);
        b(r + 1) = ay - accel_lat.between(t0, t1) / (t1 - t0);
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    LeverArmEstimate out;
    out.n_samples = m;
    out.observability = svd.singularValues().minCoeff() / std::sqrt(static_cast<double>(m));
    if (out.observability < 1e-3) {
        std::ostringstream os;
        os << "estimate_lever_arm: observability " << out.observability
           << " below 1e-3 (needs yaw rate / yaw acceleration excitation)";
        unobservable(os.str());
    }
    const Eigen::Vector2d r = svd.solve(b);
    out.r_rel = Eigen::Vector3d(r.x(), r.y(), 0.0);
    out.residual_rms = std::sqrt((a * r - b).squaredNorm() / static_cast<double>(b.size()));
    return out;
}

double mean_sphere_distance(double d, double r1, double r2)
{
    if (!(r1 >= 0.0) || !(r2 >= 0.0)) {
        throw Error(ErrorCode::Domain, "mean_sphere_distance: radii must be non-negative");
    }
    if (!(d > r1 + r2)) {
        throw Error(ErrorCode::Domain, "mean_sphere_distance: requires d > r1 + r2");
    }
    return d + (r1 * r1 + r2 * r2) / (3.0 * d);
}

double effective_variance(const IsotropicNoiseModel& noise)
{
    if (!(noise.sigma_xx >= 0.0) || !(noise.sigma_yy >= 0.0) || !(noise.sigma_zz >= 0.0)) {
        invalid("noise model sigmas must be non-negative");
    }
    return noise.perpendicular_variance();
}

InflatedDistance expected_inflated_distance(double d, const IsotropicNoiseModel& noise1,
                                            const IsotropicNoiseModel& noise2)
{
    if (!(d > 0.0)) {
        throw Error(ErrorCode::Domain, "expected_inflated_distance: d must be > 0");
    }
    const double v1 = effective_variance(noise1);
    const double v2 = effective_variance(noise2);
    InflatedDistance out;
    out.value = d + (v1 + v2) / d;
    out.below_regime = d < 3.0 * std::sqrt(std::max(v1, v2));
    return out;
}

double correct_segment_distance(double measured, const IsotropicNoiseModel& noise1,
                                const IsotropicNoiseModel& noise2)
{
    if (!(measured > 0.0)) {
        throw Error(ErrorCode::Domain, "correct_segment_distance: measured distance must be > 0");
    }
    const double total = effective_variance(noise1) + effective_variance(noise2);
    const double disc = measured * measured - 4.0 * total;
    if (disc < 0.0) {
        throw Error(ErrorCode::SegmentTooShort, "correct_segment_distance: segment too short to correct");
    }
    return 0.5 * (measured + std::sqrt(disc));
}

double path_length(std::span<const Eigen::Vector3d> points, const IsotropicNoiseModel& noise, bool corrected)
{
    double total = 0.0;
    if (points.size() < 2) {
        return total;
    }
    if (!corrected) {
        for (std::size_t i = 0; i + 1 < points.size(); ++i) {
            total += (points[i + 1] - points[i]).norm();
        }
        return total;
    }
    const double variance = 2.0 * effective_variance(noise);
    std::size_t anchor = 0;
    for (std::size_t k = 1; k < points.size(); ++k) {
        const double m = (points[k] - points[anchor]).norm();
        if (m > 0.0 && m * m >= 4.0 * variance) {
            total += correct_segment_distance(m, noise, noise);
            anchor = k;
        }
    }
    if (anchor + 1 < points.size()) {
        const double m = (points.back() - points[anchor]).norm();
        total += 0.5 * (m + std::sqrt(std::max(0.0, m * m - 4.0 * variance)));
    }
    return total;
}

namespace {

LinearFit fit_through_origin(const std::vector<double>& x, const std::vector<double>& y)
{
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    LinearFit fit;
    fit.n_samples = x.size();
    fit.offset = 0.0;
    fit.scale = sxy / sxx;
    double sse = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - fit.scale * x[i];
        sse += e * e;
    }
    const double sigma2 = x.size() > 1 ? sse / static_cast<double>(x.size() - 1) : 0.0;
    fit.residual_sigma = std::sqrt(sigma2);
    fit.covariance(0, 0) = sigma2 / sxx;
    return fit;
}

} // namespace

WheelCalibration estimate_wheel_circumference(const SensorSeries& ticks, const SensorSeries& gnss_position,
                                              const IsotropicNoiseModel& noise, double segment_length_target,
                                              const sim::VehicleParams& nominal, const SensorSeries* yaw_rate,
                                              const WheelCalibrationOptions& options)
{
    nominal.validate();
    effective_variance(noise);
    if (!(segment_length_target > 0.0)) {
        invalid("estimate_wheel_circumference: segment length must be > 0");
    }
    if (ticks.dim() != 1 || gnss_position.dim() < 2) {
        invalid("estimate_wheel_circumference: need scalar ticks and 2D/3D positions");
    }

    struct Fix {
        double t;
        Eigen::Vector3d p;
        double wheel;
    };
    const double metres_per_tick = nominal.wheel_circumference / nominal.ticks_per_rev;
    std::vector<Fix> fixes;
    for (std::size_t i = 0; i < gnss_position.size(); ++i) {
        const double t = gnss_position.time(i);
        if (!ticks.covers(t)) {
            continue;
        }
        const double z = gnss_position.dim() > 2 ? gnss_position.value(i, 2) : 0.0;
        fixes.push_back({t, {gnss_position.value(i, 0), gnss_position.value(i, 1), z},
                         ticks.interpolate(t, 0) * metres_per_tick});
    }
    if (fixes.size() < 2) {
        invalid("estimate_wheel_circumference: GNSS and wheel tick series do not overlap");
    }
    const double total = fixes.back().wheel - fixes.front().wheel;
    if (total < static_cast<double>(options.min_segments) * segment_length_target * (1.0 - 1e-9)) {
        std::ostringstream os;
        os << "estimate_wheel_circumference: drive of " << total << " m is shorter than " << options.min_segments
           << " segments of " << segment_length_target << " m";
        invalid(os.str());
    }

    std::optional<CumulativeIntegral> heading_change;
    if (yaw_rate) {
        heading_change.emplace(*yaw_rate);
    }

    const double spacing = total / static_cast<double>(fixes.size() - 1);
    const std::size_t phases = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(segment_length_target / std::max(spacing, 1e-12))), 1,
        std::min(options.max_phases, fixes.size() - 1));

    WheelCalibration out;
    out.phases = phases;
    std::vector<double> wheel, corrected, naive;
    const double variance = 2.0 * effective_variance(noise);
    for (std::size_t phase = 0; phase < phases; ++phase) {
        std::size_t anchor = phase;
        for (std::size_t k = anchor + 1; k < fixes.size(); ++k) {
            const double w = fixes[k].wheel - fixes[anchor].wheel;
            if (w < segment_length_target * (1.0 - 1e-9)) {
                continue;
            }
            const double m = (fixes[k].p - fixes[anchor].p).norm();
            if (!(m > 0.0) || m * m < 4.0 * variance) {
                ++out.segments_merged;
                continue;
            }
            bool keep = true;
            if (heading_change) {
                keep = heading_change->covers(fixes[anchor].t) && heading_change->covers(fixes[k].t) &&
                       std::abs(heading_change->between(fixes[anchor].t, fixes[k].t)) <= options.max_heading_change;
            }
            if (keep) {
                wheel.push_back(w);
                corrected.push_back(correct_segment_distance(m, noise, noise));
                naive.push_back(m);
            } else {
                ++out.segments_discarded;
            }
            anchor = k;
        }
    }
    if (wheel.empty()) {
        unobservable("estimate_wheel_circumference: no usable segments");
    }
    // Phases reuse the same fixes, so segment residuals are correlated and the
    // reported variance is conservative.
    out.corrected = fit_through_origin(wheel, corrected);
    out.naive = fit_through_origin(wheel, naive);
    out.segments_used = wheel.size();
    out.confidence_halfwidth = 1.96 * std::sqrt(out.corrected.covariance(0, 0));
    return out;
}

} // namespace drk::calib
