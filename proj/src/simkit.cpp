#include "drkit/simkit.hpp"

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

namespace drk::sim {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

[[noreturn]] void invalid(const std::string& what)
{
    throw Error(ErrorCode::InvalidArgument, what);
}

} // namespace

void VehicleParams::validate() const
{
    if (!(l_f > 0.0) || !(l_r > 0.0) || !(wheel_circumference > 0.0) || ticks_per_rev <= 0) {
        invalid("vehicle parameters must all be strictly positive");
    }
}

std::optional<SensorKind> parse_sensor_kind(std::string_view name)
{
    static constexpr std::array<std::pair<std::string_view, SensorKind>, 8> table{{
        {"imu_yaw_rate", SensorKind::ImuYawRate},
        {"imu_accel", SensorKind::ImuAccel},
        {"gnss_position", SensorKind::GnssPosition},
        {"gnss_velocity", SensorKind::GnssVelocity},
        {"gnss_heading", SensorKind::GnssHeading},
        {"wheel_ticks", SensorKind::WheelTicks},
        {"wheel_speed", SensorKind::WheelSpeed},
        {"steering", SensorKind::Steering},
    }};
    for (const auto& [key, kind] : table) {
        if (key == name) {
            return kind;
        }
    }
    return std::nullopt;
}

std::string_view to_string(SensorKind kind)
{
    switch (kind) {
    case SensorKind::ImuYawRate: return "imu_yaw_rate";
    case SensorKind::ImuAccel: return "imu_accel";
    case SensorKind::GnssPosition: return "gnss_position";
    case SensorKind::GnssVelocity: return "gnss_velocity";
    case SensorKind::GnssHeading: return "gnss_heading";
    case SensorKind::WheelTicks: return "wheel_ticks";
    case SensorKind::WheelSpeed: return "wheel_speed";
    case SensorKind::Steering: return "steering";
    }
    return "unknown";
}

std::string_view channel_name(SensorKind kind)
{
    switch (kind) {
    case SensorKind::ImuYawRate: return "yaw_rate";
    case SensorKind::ImuAccel: return "accel";
    case SensorKind::GnssPosition: return "position";
    case SensorKind::GnssVelocity: return "velocity";
    case SensorKind::GnssHeading: return "heading";
    case SensorKind::WheelTicks: return "ticks";
    case SensorKind::WheelSpeed: return "speed";
    case SensorKind::Steering: return "steering";
    }
    return "unknown";
}

std::size_t channel_dim(SensorKind kind)
{
    switch (kind) {
    case SensorKind::ImuAccel:
    case SensorKind::GnssVelocity: return 2;
    case SensorKind::GnssPosition: return 3;
    default: return 1;
    }
}

bool is_position_sensor(SensorKind kind)
{
    return kind == SensorKind::GnssPosition || kind == SensorKind::GnssVelocity;
}

void SensorErrorSpec::validate(const std::string& sensor_id) const
{
    const std::string where = "sensor '" + sensor_id + "': ";
    if (!(scale > 0.0)) {
        invalid(where + "scale must be > 0");
    }
    if (!(noise_sigma >= 0.0) || (noise_sigma_z && !(*noise_sigma_z >= 0.0))) {
        invalid(where + "noise_sigma must be >= 0");
    }
    if (!(rate_hz > 0.0)) {
        invalid(where + "rate_hz must be > 0");
    }
    if (!(time_delay >= 0.0)) {
        invalid(where + "time_delay must be >= 0");
    }
    if (!std::isfinite(offset) || !lever_arm.allFinite()) {
        invalid(where + "offset and lever_arm must be finite");
    }
    if (!is_position_sensor(kind) && !lever_arm.isZero(0.0)) {
        invalid(where + "lever_arm applies to position sensors only");
    }
    if (kind == SensorKind::WheelTicks && (offset != 0.0 || scale != 1.0 || noise_sigma != 0.0)) {
        invalid(where + "wheel ticks are quantized truth; offset/scale/noise must be left at defaults");
    }
}

std::optional<Maneuver::Kind> parse_maneuver_kind(std::string_view name)
{
    if (name == "straight") return Maneuver::Kind::Straight;
    if (name == "constant-turn") return Maneuver::Kind::ConstantTurn;
    if (name == "slalom") return Maneuver::Kind::Slalom;
    if (name == "figure-eight") return Maneuver::Kind::FigureEight;
    if (name == "composite") return Maneuver::Kind::Composite;
    return std::nullopt;
}

std::string_view to_string(Maneuver::Kind kind)
{
    switch (kind) {
    case Maneuver::Kind::Straight: return "straight";
    case Maneuver::Kind::ConstantTurn: return "constant-turn";
    case Maneuver::Kind::Slalom: return "slalom";
    case Maneuver::Kind::FigureEight: return "figure-eight";
    case Maneuver::Kind::Composite: return "composite";
    }
    return "unknown";
}

namespace {

struct LegState {
    double v0, v1, d0, d1, t0, duration;
};

// Leg containing t for composite scripts; past the end the last values hold.
LegState composite_leg(const std::vector<ManeuverLeg>& legs, double t)
{
    double t0 = 0.0;
    for (std::size_t k = 0; k < legs.size(); ++k) {
        const ManeuverLeg& leg = legs[k];
        const ManeuverLeg& prev = k == 0 ? leg : legs[k - 1];
        if (t < t0 + leg.duration || k + 1 == legs.size()) {
            if (t >= t0 + leg.duration) {
                return {leg.speed, leg.speed, leg.steering, leg.steering, t0 + leg.duration, 0.0};
            }
            return {prev.speed, leg.speed, prev.steering, leg.steering, t0, leg.duration};
        }
        t0 += leg.duration;
    }
    return {0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
}

double figure_eight_half_period(const Maneuver& m, double wheelbase)
{
    return kTwoPi * wheelbase / (m.speed * std::abs(m.steering));
}

} // namespace

double Maneuver::speed_at(double t) const
{
    if (kind != Kind::Composite) {
        return speed;
    }
    const LegState s = composite_leg(legs, t);
    if (s.duration <= 0.0) {
        return s.v1;
    }
    const double w = std::clamp((t - s.t0) / s.duration, 0.0, 1.0);
    return s.v0 + w * (s.v1 - s.v0);
}

double Maneuver::acceleration_at(double t) const
{
    if (kind != Kind::Composite) {
        return 0.0;
    }
    const LegState s = composite_leg(legs, t);
    return s.duration > 0.0 ? (s.v1 - s.v0) / s.duration : 0.0;
}

double Maneuver::steering_at(double t, double wheelbase) const
{
    switch (kind) {
    case Kind::Straight: return 0.0;
    case Kind::ConstantTurn: return steering;
    case Kind::Slalom: return steering * std::sin(kTwoPi * t / period);
    case Kind::FigureEight: {
        const double half = figure_eight_half_period(*this, wheelbase);
        return std::fmod(t, 2.0 * half) < half ? steering : -steering;
    }
    case Kind::Composite: {
        const LegState s = composite_leg(legs, t);
        if (s.duration <= 0.0) {
            return s.d1;
        }
        const double w = std::clamp((t - s.t0) / s.duration, 0.0, 1.0);
        return s.d0 + w * (s.d1 - s.d0);
    }
    }
    return 0.0;
}

double Maneuver::steering_rate_at(double t, double /*wheelbase*/) const
{
    switch (kind) {
    case Kind::Slalom: return steering * (kTwoPi / period) * std::cos(kTwoPi * t / period);
    case Kind::Composite: {
        const LegState s = composite_leg(legs, t);
        return s.duration > 0.0 ? (s.d1 - s.d0) / s.duration : 0.0;
    }
    default: return 0.0;
    }
}

std::vector<double> Maneuver::breakpoints(double horizon, double wheelbase) const
{
    std::vector<double> out;
    if (kind == Kind::FigureEight) {
        const double half = figure_eight_half_period(*this, wheelbase);
        for (double t = half; t < horizon; t += half) {
            out.push_back(t);
        }
    } else if (kind == Kind::Composite) {
        double t = 0.0;
        for (const ManeuverLeg& leg : legs) {
            t += leg.duration;
            if (t < horizon) {
                out.push_back(t);
            }
        }
    }
    return out;
}

void Maneuver::validate() const
{
    if (!std::isfinite(speed) || !std::isfinite(steering)) {
        invalid("maneuver: speed and steering must be finite");
    }
    switch (kind) {
    case Kind::Slalom:
        if (!(period > 0.0)) {
            invalid("maneuver: slalom period must be > 0");
        }
        break;
    case Kind::FigureEight:
        if (!(speed > 0.0) || steering == 0.0) {
            invalid("maneuver: figure-eight needs positive speed and non-zero steering");
        }
        break;
    case Kind::Composite:
        if (legs.empty()) {
            invalid("maneuver: composite script needs at least one leg");
        }
        for (const ManeuverLeg& leg : legs) {
            if (!(leg.duration > 0.0) || !std::isfinite(leg.speed) || !std::isfinite(leg.steering)) {
                invalid("maneuver: every leg needs a positive duration and finite values");
            }
        }
        break;
    default: break;
    }
}

void OdometrySpec::validate() const
{
    if (!(epoch_length > 0.0)) {
        invalid("odometry: epoch_length must be > 0");
    }
    if (odometers.size() < 2) {
        invalid("odometry: at least two odometers are required");
    }
    std::set<std::string> ids;
    for (const OdometerSpec& o : odometers) {
        if (o.id.empty() || !ids.insert(o.id).second) {
            invalid("odometry: odometer ids must be unique and non-empty");
        }
        if (!is_valid_covariance(o.cov)) {
            invalid("odometry: covariance of '" + o.id + "' is not symmetric PSD");
        }
        if (!(o.dropout_probability >= 0.0 && o.dropout_probability < 1.0)) {
            invalid("odometry: dropout_probability of '" + o.id + "' must be in [0, 1)");
        }
    }
    for (const OdometerCorrelation& c : correlations) {
        if (!ids.count(c.a) || !ids.count(c.b) || c.a == c.b) {
            invalid("odometry: correlation refers to unknown or identical odometers");
        }
    }
    if (corruption) {
        if (!ids.count(corruption->odometer)) {
            invalid("odometry: corruption refers to unknown odometer '" + corruption->odometer + "'");
        }
        if (!(corruption->probability >= 0.0 && corruption->probability <= 1.0) ||
            !(corruption->bias_sigma >= 0.0)) {
            invalid("odometry: corruption probability must be in [0, 1] and bias_sigma >= 0");
        }
    }
}

void Scenario::validate() const
{
    if (!(duration > 0.0)) {
        invalid("scenario: duration must be > 0");
    }
    if (!(dt > 0.0) || duration / dt < 2.0) {
        invalid("scenario: dt must be > 0 with at least two steps");
    }
    vehicle.validate();
    maneuver.validate();
    for (const auto& [id, spec] : sensors) {
        spec.validate(id);
    }
    if (odometry) {
        odometry->validate();
    }
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

Rng Rng::substream(std::string_view key) const
{
    return Rng(splitmix64(seed_ ^ splitmix64(fnv1a(key))));
}

double Rng::normal()
{
    boost::random::normal_distribution<double> dist(0.0, 1.0);
    return dist(engine_);
}

double Rng::uniform()
{
    boost::random::uniform_01<double> dist;
    return dist(engine_);
}

TruthTrajectory::TruthTrajectory(std::vector<TruthSample> samples, Maneuver maneuver, VehicleParams vehicle)
    : samples_(std::move(samples)), maneuver_(std::move(maneuver)), vehicle_(vehicle)
{
    if (samples_.size() < 2) {
        invalid("truth trajectory needs at least two samples");
    }
}

namespace {

void fill_kinematics(TruthSample& s, const Maneuver& m, double wheelbase)
{
    const double v = m.speed_at(s.t);
    const double a = m.acceleration_at(s.t);
    const double delta = m.steering_at(s.t, wheelbase);
    const double delta_rate = m.steering_rate_at(s.t, wheelbase);
    s.speed = v;
    s.steering = delta;
    s.yaw_rate = v * delta / wheelbase;
    s.yaw_accel = (a * delta + v * delta_rate) / wheelbase;
    s.a_lon = a;
    s.a_lat = v * s.yaw_rate;
}

double hermite(double p0, double m0, double p1, double m1, double h, double s)
{
    const double s2 = s * s;
    const double s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * h * m0 + (-2 * s3 + 3 * s2) * p1 +
           (s3 - s2) * h * m1;
}

} // namespace

TruthSample TruthTrajectory::at(double t) const
{
    if (t < start_time() - 1e-12 || t > end_time() + 1e-12) {
        std::ostringstream os;
        os << "truth trajectory: time " << t << " outside [" << start_time() << ", " << end_time() << "]";
        invalid(os.str());
    }
    t = std::clamp(t, start_time(), end_time());
    auto it = std::upper_bound(samples_.begin(), samples_.end(), t,
                               [](double value, const TruthSample& s) { return value < s.t; });
    std::size_t hi = static_cast<std::size_t>(it - samples_.begin());
    hi = std::clamp<std::size_t>(hi, 1, samples_.size() - 1);
    const TruthSample& a = samples_[hi - 1];
    const TruthSample& b = samples_[hi];

    TruthSample out;
    out.t = t;
    fill_kinematics(out, maneuver_, vehicle_.wheelbase());
    if (t == a.t) {
        out.position = a.position;
        out.heading = a.heading;
        out.path_length = a.path_length;
        return out;
    }
    if (t == b.t) {
        out.position = b.position;
        out.heading = b.heading;
        out.path_length = b.path_length;
        return out;
    }
    const double h = b.t - a.t;
    const double s = (t - a.t) / h;
    const double ax = a.speed * std::cos(a.heading);
    const double ay = a.speed * std::sin(a.heading);
    const double bx = b.speed * std::cos(b.heading);
    const double by = b.speed * std::sin(b.heading);
    out.position.x() = hermite(a.position.x(), ax, b.position.x(), bx, h, s);
    out.position.y() = hermite(a.position.y(), ay, b.position.y(), by, h, s);
    out.heading = hermite(a.heading, a.yaw_rate, b.heading, b.yaw_rate, h, s);
    out.path_length = hermite(a.path_length, a.speed, b.path_length, b.speed, h, s);
    return out;
}

Transform2 TruthTrajectory::interval_transform(double t0, double t1) const
{
    const TruthSample a = at(t0);
    const TruthSample b = at(t1);
    const Eigen::Vector2d d = rotation(-a.heading) * (b.position - a.position);
    return {d.x(), d.y(), b.heading - a.heading};
}

TruthTrajectory generate_truth(const Scenario& scenario)
{
    return generate_truth(scenario, scenario.dt);
}

TruthTrajectory generate_truth(const Scenario& scenario, double dt)
{
    if (!(dt > 0.0) || !(scenario.duration > 0.0) || scenario.duration / dt < 2.0) {
        invalid("generate_truth: need dt > 0 and duration / dt >= 2");
    }
    scenario.maneuver.validate();
    scenario.vehicle.validate();
    const Maneuver& m = scenario.maneuver;
    const double wheelbase = scenario.vehicle.wheelbase();

    // state: x, y, heading, path length
    using State = Eigen::Vector4d;
    auto deriv = [&](double t, const State& s) {
        const double v = m.speed_at(t);
        const double delta = m.steering_at(t, wheelbase);
        return State(v * std::cos(s(2)), v * std::sin(s(2)), v * delta / wheelbase, v);
    };
    auto rk4 = [&](double t, const State& s, double h) {
        const State k1 = deriv(t, s);
        const State k2 = deriv(t + 0.5 * h, s + 0.5 * h * k1);
        const State k3 = deriv(t + 0.5 * h, s + 0.5 * h * k2);
        const State k4 = deriv(t + h, s + h * k3);
        return State(s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    };

    const auto steps = static_cast<std::size_t>(std::ceil(scenario.duration / dt - 1e-9));
    const std::vector<double> breaks = m.breakpoints(scenario.duration, wheelbase);

    std::vector<TruthSample> samples;
    samples.reserve(steps + 1);
    State state = State::Zero();
    double t = 0.0;
    TruthSample first;
    first.t = 0.0;
    fill_kinematics(first, m, wheelbase);
    samples.push_back(first);

    auto next_break = breaks.begin();
    for (std::size_t i = 1; i <= steps; ++i) {
        const double t_next = std::min(static_cast<double>(i) * dt, scenario.duration);
        // Split the step at profile discontinuities so RK4 stays high order.
        while (next_break != breaks.end() && *next_break <= t) {
            ++next_break;
        }
        double t_cur = t;
        while (next_break != breaks.end() && *next_break < t_next) {
            state = rk4(t_cur, state, *next_break - t_cur);
            t_cur = *next_break;
            ++next_break;
        }
        state = rk4(t_cur, state, t_next - t_cur);
        t = t_next;

        TruthSample s;
        s.t = t;
        s.position = {state(0), state(1)};
        s.heading = state(2);
        s.path_length = state(3);
        fill_kinematics(s, m, wheelbase);
        samples.push_back(s);
    }
    return TruthTrajectory(std::move(samples), m, scenario.vehicle);
}

namespace {

Eigen::VectorXd true_value(const TruthSample& s, const SensorErrorSpec& spec, const VehicleParams& vp)
{
    const Eigen::Vector2d lever(spec.lever_arm.x(), spec.lever_arm.y());
    switch (spec.kind) {
    case SensorKind::ImuYawRate: return Eigen::VectorXd::Constant(1, s.yaw_rate);
    case SensorKind::ImuAccel: return Eigen::Vector2d(s.a_lon, s.a_lat);
    case SensorKind::GnssPosition: {
        const Eigen::Vector2d p = s.position + rotation(s.heading) * lever;
        return Eigen::Vector3d(p.x(), p.y(), spec.lever_arm.z());
    }
    case SensorKind::GnssVelocity: {
        const Eigen::Vector2d body(s.speed - s.yaw_rate * lever.y(), s.yaw_rate * lever.x());
        return rotation(s.heading) * body;
    }
    case SensorKind::GnssHeading: return Eigen::VectorXd::Constant(1, s.heading);
    case SensorKind::WheelTicks: {
        const double revs = s.path_length / vp.wheel_circumference;
        return Eigen::VectorXd::Constant(1, std::floor(revs * vp.ticks_per_rev + 1e-9));
    }
    case SensorKind::WheelSpeed: return Eigen::VectorXd::Constant(1, s.speed);
    case SensorKind::Steering: return Eigen::VectorXd::Constant(1, s.steering);
    }
    return {};
}

} // namespace

std::map<std::string, SensorSeries> synthesize_sensors(const TruthTrajectory& truth, const Scenario& scenario)
{
    std::map<std::string, SensorSeries> out;
    const Rng root(scenario.seed);
    for (const auto& [id, spec] : scenario.sensors) {
        spec.validate(id);
        Rng rng = root.substream("sensor/" + id);
        const std::size_t dim = channel_dim(spec.kind);
        SensorSeries series(id, std::string(channel_name(spec.kind)), dim);

        const double t_end = truth.end_time();
        const auto k0 = static_cast<long long>(std::ceil(spec.time_delay * spec.rate_hz - 1e-9));
        const auto k1 = static_cast<long long>(std::floor(t_end * spec.rate_hz + 1e-9));
        series.reserve(static_cast<std::size_t>(std::max(0LL, k1 - k0 + 1)));
        for (long long k = k0; k <= k1; ++k) {
            const double t = static_cast<double>(k) / spec.rate_hz;
            const double source_time = std::clamp(t - spec.time_delay, truth.start_time(), t_end);
            const TruthSample s = truth.at(source_time);
            Eigen::VectorXd v = true_value(s, spec, truth.vehicle());
            for (Eigen::Index c = 0; c < v.size(); ++c) {
                const double sigma = (spec.kind == SensorKind::GnssPosition && c == 2) ? spec.altitude_sigma()
                                                                                        : spec.noise_sigma;
                const double n = rng.normal();
                if (spec.kind != SensorKind::WheelTicks) {
                    v(c) = spec.scale * v(c) + spec.offset + sigma * n;
                }
            }
            if (spec.kind == SensorKind::GnssHeading) {
                v(0) = wrap_angle(v(0));
            }
            series.push_back(t, v);
        }
        out.emplace(id, std::move(series));
    }
    return out;
}

std::vector<OdometryEpoch> synthesize_odometry(const TruthTrajectory& truth, const Scenario& scenario)
{
    if (!scenario.odometry) {
        return {};
    }
    const OdometrySpec& spec = *scenario.odometry;
    spec.validate();
    const std::size_t k = spec.odometers.size();

    Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(3 * static_cast<Eigen::Index>(k), 3 * static_cast<Eigen::Index>(k));
    std::map<std::string, Eigen::Index> index;
    for (std::size_t i = 0; i < k; ++i) {
        index[spec.odometers[i].id] = static_cast<Eigen::Index>(i);
        joint.block<3, 3>(3 * static_cast<Eigen::Index>(i), 3 * static_cast<Eigen::Index>(i)) = spec.odometers[i].cov;
    }
    for (const OdometerCorrelation& c : spec.correlations) {
        const Eigen::Index a = index.at(c.a);
        const Eigen::Index b = index.at(c.b);
        joint.block<3, 3>(3 * a, 3 * b) = c.cross;
        joint.block<3, 3>(3 * b, 3 * a) = c.cross.transpose();
    }
    // Cholesky of the joint covariance; a tiny jitter admits exactly singular
    // (e.g. zero-noise) odometers.
    const Eigen::MatrixXd jitter = 1e-300 * Eigen::MatrixXd::Identity(joint.rows(), joint.cols());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(joint + jitter);
    if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() < -1e-12 * joint.trace()).any()) {
        invalid("odometry: joint covariance of odometers and correlations is not PSD");
    }
    Eigen::MatrixXd factor = ldlt.transpositionsP().transpose() * Eigen::MatrixXd(ldlt.matrixL()) *
                             ldlt.vectorD().cwiseMax(0.0).cwiseSqrt().asDiagonal();

    std::vector<Eigen::Matrix3d> chol(k);
    for (std::size_t i = 0; i < k; ++i) {
        Eigen::LLT<Eigen::Matrix3d> llt(spec.odometers[i].cov);
        chol[i] = llt.info() == Eigen::Success ? Eigen::Matrix3d(llt.matrixL())
                                                : Eigen::Matrix3d(project_psd(spec.odometers[i].cov).cwiseSqrt());
    }

    const Rng root(scenario.seed);
    Rng noise_rng = root.substream("odometry/noise");
    Rng corruption_rng = root.substream("odometry/corruption");
    Rng dropout_rng = root.substream("odometry/dropout");

    std::vector<OdometryEpoch> epochs;
    const double t_end = truth.end_time();
    for (int e = 0;; ++e) {
        const double t0 = static_cast<double>(e) * spec.epoch_length;
        const double t1 = static_cast<double>(e + 1) * spec.epoch_length;
        if (t1 > t_end + 1e-9) {
            break;
        }
        OdometryEpoch epoch;
        epoch.index = e;
        epoch.t_start = t0;
        epoch.t_end = std::min(t1, t_end);
        epoch.truth = truth.interval_transform(t0, epoch.t_end);

        Eigen::VectorXd z(joint.rows());
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            z(i) = noise_rng.normal();
        }
        const Eigen::VectorXd noise = factor * z;

        const double u = corruption_rng.uniform();
        Eigen::Vector3d w(corruption_rng.normal(), corruption_rng.normal(), corruption_rng.normal());

        for (std::size_t i = 0; i < k; ++i) {
            const OdometerSpec& o = spec.odometers[i];
            const bool dropped = dropout_rng.uniform() < o.dropout_probability;
            Eigen::Vector3d v = epoch.truth.vector() + noise.segment<3>(3 * static_cast<Eigen::Index>(i));
            if (spec.corruption && spec.corruption->odometer == o.id && u < spec.corruption->probability) {
                if (w.norm() == 0.0) {
                    w = Eigen::Vector3d::UnitX();
                }
                v += spec.corruption->bias_sigma * (chol[i] * w.normalized());
                if (!dropped) {
                    epoch.corrupted.insert(o.id);
                }
            }
            if (!dropped) {
                epoch.estimates.emplace(o.id, Transform2::from_vector(v));
            }
        }
        epochs.push_back(std::move(epoch));
    }
    return epochs;
}

} // namespace drk::sim
