// Shared domain types for the dead-reckoning toolkit: planar transforms,
// Gaussian estimates, timestamped sensor series and small matrix helpers.
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace drk {

enum class ErrorCode {
    InvalidArgument,
    Schema,
    MissingDependency,
    Consistency,
    Numerical,
    Unobservable,
    Domain,
    DegenerateCovariance,
    NoConsensus,
    TooManyCorrelated,
    InsufficientEpochs,
    DirectionUndefined,
    ChainBroken,
    SegmentTooShort,
};

const char* to_string(ErrorCode code) noexcept;

/// Every failure raised by the toolkit carries a stable code so the C API and
/// the CLI can map it onto status values and exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double angle) noexcept;

/// Unwraps a sequence of wrapped angles into a continuous signal.
std::vector<double> unwrap_angles(std::span<const double> angles);

/// Planar rigid motion increment expressed in the frame at the start of the
/// motion. The rotation is normalized at construction.
class Transform2 {
public:
    Transform2() = default;
    Transform2(double dx, double dy, double dpsi);

    static Transform2 identity() { return {}; }
    static Transform2 from_vector(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

    double dx() const noexcept { return dx_; }
    double dy() const noexcept { return dy_; }
    double dpsi() const noexcept { return dpsi_; }
    Eigen::Vector2d translation() const { return {dx_, dy_}; }
    Eigen::Vector3d vector() const { return {dx_, dy_, dpsi_}; }

    Transform2 inverse() const;

private:
    double dx_ = 0.0;
    double dy_ = 0.0;
    double dpsi_ = 0.0;
};

/// Applies `a` then `b` (b is expressed in the frame reached after a).
Transform2 compose(const Transform2& a, const Transform2& b);

/// Component-wise difference with the heading residual wrapped.
Eigen::Vector3d difference(const Transform2& a, const Transform2& b);

struct GaussianEstimate {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Symmetry and positive semi-definiteness check shared by every module.
/// Returns false and fills `why` when the matrix is not a valid covariance.
bool is_valid_covariance(const Eigen::MatrixXd& cov, std::string* why = nullptr);

/// Throws ErrorCode::Numerical when `cov` is not a valid covariance.
void check_covariance(const Eigen::MatrixXd& cov, const std::string& what);
void check_estimate(const GaussianEstimate& estimate, const std::string& what);

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m);

/// Nearest PSD matrix by clipping negative eigenvalues to zero.
Eigen::MatrixXd project_psd(const Eigen::MatrixXd& m);

/// Inverse of a covariance-like matrix. When the condition number exceeds
/// 1e12 the matrix is regularized with 1e-12 * trace * I first; a matrix that
/// is still singular raises ErrorCode::DegenerateCovariance.
Eigen::MatrixXd regularized_inverse(const Eigen::MatrixXd& m);

Eigen::Matrix2d rotation(double angle);

/// Zero-mean position error with per-axis standard deviations; x is the
/// direction of motion whenever the distinction matters.
struct IsotropicNoiseModel {
    double sigma_xx = 0.0;
    double sigma_yy = 0.0;
    double sigma_zz = 0.0;

    static IsotropicNoiseModel isotropic(double sigma) { return {sigma, sigma, sigma}; }

    /// Throws InvalidArgument unless all three sigmas are strictly positive.
    void validate() const;

    /// Mean of the two variances perpendicular to the motion direction.
    double perpendicular_variance() const noexcept
    {
        return 0.5 * (sigma_yy * sigma_yy + sigma_zz * sigma_zz);
    }
};

/// Timestamped samples of a d-dimensional signal. Timestamps are strictly
/// increasing and every sample has the same dimension.
class SensorSeries {
public:
    SensorSeries() = default;
    SensorSeries(std::string sensor_id, std::string channel, std::size_t dim);

    const std::string& sensor_id() const noexcept { return sensor_id_; }
    const std::string& channel() const noexcept { return channel_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return times_.size(); }
    bool empty() const noexcept { return times_.empty(); }

    void reserve(std::size_t n);
    void push_back(double t, std::span<const double> value);
    void push_back(double t, double value) { push_back(t, std::span<const double>(&value, 1)); }
    void push_back(double t, const Eigen::VectorXd& value)
    {
        push_back(t, std::span<const double>(value.data(), static_cast<std::size_t>(value.size())));
    }

    double time(std::size_t i) const { return times_[i]; }
    double value(std::size_t i, std::size_t channel = 0) const { return values_[i * dim_ + channel]; }
    Eigen::VectorXd vector(std::size_t i) const;
    std::span<const double> sample(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }

    const std::vector<double>& times() const noexcept { return times_; }
    std::vector<double> column(std::size_t channel) const;

    double front_time() const { return times_.front(); }
    double back_time() const { return times_.back(); }
    bool covers(double t) const { return !empty() && t >= times_.front() && t <= times_.back(); }

    /// Linear interpolation of every channel at `t`; throws InvalidArgument
    /// outside the covered range.
    Eigen::VectorXd interpolate(double t) const;
    double interpolate(double t, std::size_t channel) const;

    /// Same samples with every timestamp moved by `dt`.
    SensorSeries shifted(double dt) const;
    SensorSeries renamed(std::string sensor_id, std::string channel) const;

private:
    std::size_t lower_index(double t) const;

    std::string sensor_id_;
    std::string channel_;
    std::size_t dim_ = 1;
    std::vector<double> times_;
    std::vector<double> values_;
};

/// Centered moving average with truncated windows at the edges. `window` must
/// be odd and not larger than the series.
SensorSeries sliding_mean_filter(const SensorSeries& series, std::size_t window);

} // namespace drk
