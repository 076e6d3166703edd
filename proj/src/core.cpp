#include "drkit/core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace drk {

const char* to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::Schema: return "schema violation";
    case ErrorCode::MissingDependency: return "missing dependency";
    case ErrorCode::Consistency: return "inconsistent input";
    case ErrorCode::Numerical: return "numerical failure";
    case ErrorCode::Unobservable: return "unobservable";
    case ErrorCode::Domain: return "domain error";
    case ErrorCode::DegenerateCovariance: return "degenerate covariance";
    case ErrorCode::NoConsensus: return "no consensus";
    case ErrorCode::TooManyCorrelated: return "too many correlated pairs";
    case ErrorCode::InsufficientEpochs: return "insufficient epochs";
    case ErrorCode::DirectionUndefined: return "direction undefined";
    case ErrorCode::ChainBroken: return "chain broken";
    case ErrorCode::SegmentTooShort: return "segment too short to correct";
    }
    return "unknown";
}

double wrap_angle(double angle) noexcept
{
    constexpr double pi = std::numbers::pi;
    double a = std::remainder(angle, 2.0 * pi);
    if (a <= -pi) {
        a += 2.0 * pi;
    }
    return a;
}

std::vector<double> unwrap_angles(std::span<const double> angles)
{
    std::vector<double> out(angles.begin(), angles.end());
    for (std::size_t i = 1; i < out.size(); ++i) {
        out[i] = out[i - 1] + wrap_angle(angles[i] - angles[i - 1]);
    }
    return out;
}

Transform2::Transform2(double dx, double dy, double dpsi) : dx_(dx), dy_(dy), dpsi_(wrap_angle(dpsi)) {}

Transform2 Transform2::inverse() const
{
    const Eigen::Vector2d t = -(rotation(-dpsi_) * translation());
    return {t.x(), t.y(), -dpsi_};
}

Transform2 compose(const Transform2& a, const Transform2& b)
{
    const Eigen::Vector2d t = a.translation() + rotation(a.dpsi()) * b.translation();
    return {t.x(), t.y(), a.dpsi() + b.dpsi()};
}

Eigen::Vector3d difference(const Transform2& a, const Transform2& b)
{
    return {a.dx() - b.dx(), a.dy() - b.dy(), wrap_angle(a.dpsi() - b.dpsi())};
}

Eigen::Matrix2d rotation(double angle)
{
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    Eigen::Matrix2d r;
    r << c, -s, s, c;
    return r;
}

bool is_valid_covariance(const Eigen::MatrixXd& cov, std::string* why)
{
    auto fail = [why](const std::string& msg) {
        if (why) {
            *why = msg;
        }
        return false;
    };
    if (cov.rows() != cov.cols()) {
        return fail("matrix is not square");
    }
    if (cov.size() == 0) {
        return true;
    }
    if (!cov.allFinite()) {
        return fail("matrix has non-finite entries");
    }
    const double max_abs = cov.cwiseAbs().maxCoeff();
    if (max_abs == 0.0) {
        return true;
    }
    const double asym = (cov - cov.transpose()).cwiseAbs().maxCoeff();
    if (asym >= 1e-9 * max_abs) {
        return fail("matrix is not symmetric");
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrize(cov), Eigen::EigenvaluesOnly);
    const double trace = cov.trace();
    if (eig.eigenvalues().minCoeff() < -1e-9 * std::abs(trace)) {
        return fail("matrix is not positive semi-definite");
    }
    return true;
}

void check_covariance(const Eigen::MatrixXd& cov, const std::string& what)
{
    std::string why;
    if (!is_valid_covariance(cov, &why)) {
        throw Error(ErrorCode::Numerical, what + ": " + why);
    }
}

void check_estimate(const GaussianEstimate& estimate, const std::string& what)
{
    if (estimate.cov.rows() != estimate.mean.size()) {
        throw Error(ErrorCode::Numerical, what + ": mean/covariance dimension mismatch");
    }
    check_covariance(estimate.cov, what);
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m)
{
    return 0.5 * (m + m.transpose());
}

Eigen::MatrixXd project_psd(const Eigen::MatrixXd& m)
{
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrize(m));
    const Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
    return symmetrize(eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose());
}

Eigen::MatrixXd regularized_inverse(const Eigen::MatrixXd& m)
{
    if (m.rows() != m.cols() || m.size() == 0) {
        throw Error(ErrorCode::InvalidArgument, "regularized_inverse: matrix must be square and non-empty");
    }
    Eigen::MatrixXd s = symmetrize(m);
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(s);
    const auto& sv = svd.singularValues();
    const double largest = sv(0);
    const double smallest = sv(sv.size() - 1);
    if (!(largest > 0.0) || !std::isfinite(largest)) {
        throw Error(ErrorCode::DegenerateCovariance, "covariance is zero or non-finite");
    }
    if (smallest <= 0.0 || largest / smallest > 1e12) {
        s += 1e-12 * s.trace() * Eigen::MatrixXd::Identity(s.rows(), s.cols());
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd2(s);
        const auto& sv2 = svd2.singularValues();
        if (!(sv2(sv2.size() - 1) > 0.0) || sv2(0) / sv2(sv2.size() - 1) > 1e15) {
            throw Error(ErrorCode::DegenerateCovariance, "covariance is singular after regularization");
        }
    }
    return symmetrize(s.ldlt().solve(Eigen::MatrixXd::Identity(s.rows(), s.cols())));
}

void IsotropicNoiseModel::validate() const
{
    if (!(sigma_xx > 0.0) || !(sigma_yy > 0.0) || !(sigma_zz > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "noise model sigmas must be strictly positive");
    }
}

SensorSeries::SensorSeries(std::string sensor_id, std::string channel, std::size_t dim)
    : sensor_id_(std::move(sensor_id)), channel_(std::move(channel)), dim_(dim)
{
    if (dim_ == 0) {
        throw Error(ErrorCode::InvalidArgument, "sensor series dimension must be positive");
    }
}

void SensorSeries::reserve(std::size_t n)
{
    times_.reserve(n);
    values_.reserve(n * dim_);
}

void SensorSeries::push_back(double t, std::span<const double> value)
{
    if (value.size() != dim_) {
        std::ostringstream os;
        os << "sensor series '" << sensor_id_ << "': sample dimension " << value.size() << " != " << dim_;
        throw Error(ErrorCode::InvalidArgument, os.str());
    }
    if (!std::isfinite(t)) {
        throw Error(ErrorCode::InvalidArgument, "sensor series '" + sensor_id_ + "': non-finite timestamp");
    }
    if (!times_.empty() && !(t > times_.back())) {
        std::ostringstream os;
        os.precision(17);
        os << "sensor series '" << sensor_id_ << "': timestamp " << t << " does not increase (previous "
           << times_.back() << ")";
        throw Error(ErrorCode::InvalidArgument, os.str());
    }
    times_.push_back(t);
    values_.insert(values_.end(), value.begin(), value.end());
}

Eigen::VectorXd SensorSeries::vector(std::size_t i) const
{
    return Eigen::Map<const Eigen::VectorXd>(values_.data() + i * dim_, static_cast<Eigen::Index>(dim_));
}

std::vector<double> SensorSeries::column(std::size_t channel) const
{
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) {
        out[i] = value(i, channel);
    }
    return out;
}

std::size_t SensorSeries::lower_index(double t) const
{
    if (!covers(t)) {
        std::ostringstream os;
        os.precision(17);
        os << "sensor series '" << sensor_id_ << "': time " << t << " outside covered range";
        throw Error(ErrorCode::InvalidArgument, os.str());
    }
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    std::size_t hi = static_cast<std::size_t>(it - times_.begin());
    if (hi >= times_.size()) {
        hi = times_.size() - 1;
    }
    return hi == 0 ? 0 : hi - 1;
}

double SensorSeries::interpolate(double t, std::size_t channel) const
{
    const std::size_t i = lower_index(t);
    if (i + 1 >= size()) {
        return value(i, channel);
    }
    const double t0 = times_[i];
    const double t1 = times_[i + 1];
    const double w = (t - t0) / (t1 - t0);
    const double v0 = value(i, channel);
    const double v1 = value(i + 1, channel);
    if (w == 0.0) {
        return v0;
    }
    if (w == 1.0) {
        return v1;
    }
    return v0 + w * (v1 - v0);
}

Eigen::VectorXd SensorSeries::interpolate(double t) const
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(dim_));
    for (std::size_t c = 0; c < dim_; ++c) {
        out(static_cast<Eigen::Index>(c)) = interpolate(t, c);
    }
    return out;
}

SensorSeries SensorSeries::shifted(double dt) const
{
    SensorSeries out = *this;
    for (double& t : out.times_) {
        t += dt;
    }
    return out;
}

SensorSeries SensorSeries::renamed(std::string sensor_id, std::string channel) const
{
    SensorSeries out = *this;
    out.sensor_id_ = std::move(sensor_id);
    out.channel_ = std::move(channel);
    return out;
}

SensorSeries sliding_mean_filter(const SensorSeries& series, std::size_t window)
{
    if (window == 0 || window % 2 == 0) {
        throw Error(ErrorCode::InvalidArgument, "sliding_mean_filter: window must be odd and positive");
    }
    if (window > series.size()) {
        throw Error(ErrorCode::InvalidArgument, "sliding_mean_filter: window larger than series");
    }
    const std::size_t n = series.size();
    const std::size_t d = series.dim();
    const std::size_t half = window / 2;

    SensorSeries out(series.sensor_id(), series.channel(), d);
    out.reserve(n);
    std::vector<double> acc(d);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= half ? i - half : 0;
        const std::size_t hi = std::min(n - 1, i + half);
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = lo; j <= hi; ++j) {
            for (std::size_t c = 0; c < d; ++c) {
                acc[c] += series.value(j, c);
            }
        }
        const double count = static_cast<double>(hi - lo + 1);
        for (double& a : acc) {
            a /= count;
        }
        out.push_back(series.time(i), acc);
    }
    return out;
}

} // namespace drk
