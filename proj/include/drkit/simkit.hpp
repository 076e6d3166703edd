// Deterministic synthetic vehicle: a kinematic single-track model driven by a
// scripted maneuver, plus a sensor suite and a set of redundant odometers whose
// error parameters are all known.
#pragma once

#include "drkit/core.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace drk::sim {

struct VehicleParams {
    double l_f = 1.3;                 ///< COG to front axle [m]
    double l_r = 1.5;                 ///< COG to rear axle [m]
    double wheel_circumference = 2.0; ///< [m]
    int ticks_per_rev = 48;

    double wheelbase() const noexcept { return l_f + l_r; }
    void validate() const;
};

enum class SensorKind {
    ImuYawRate,   ///< yaw rate [rad/s]
    ImuAccel,     ///< longitudinal / lateral acceleration in the body frame [m/s^2]
    GnssPosition, ///< antenna position x, y, z in the world frame [m]
    GnssVelocity, ///< antenna Doppler velocity x, y in the world frame [m/s]
    GnssHeading,  ///< vehicle heading [rad]
    WheelTicks,   ///< cumulative quantized wheel ticks
    WheelSpeed,   ///< reference point speed [m/s]
    Steering,     ///< steering wheel angle; truth is the road-wheel angle [rad]
};

std::optional<SensorKind> parse_sensor_kind(std::string_view name);
std::string_view to_string(SensorKind kind);
/// Channel name written into sensor logs; calibration steps look series up by it.
std::string_view channel_name(SensorKind kind);
std::size_t channel_dim(SensorKind kind);
bool is_position_sensor(SensorKind kind);

/// Error model applied as value = scale * truth + offset + N(0, noise_sigma^2),
/// reported under timestamps that lag the truth by `time_delay`.
struct SensorErrorSpec {
    SensorKind kind = SensorKind::ImuYawRate;
    double offset = 0.0;
    double scale = 1.0;
    double noise_sigma = 0.0;
    std::optional<double> noise_sigma_z; ///< altitude noise of position sensors
    double time_delay = 0.0;
    Eigen::Vector3d lever_arm = Eigen::Vector3d::Zero(); ///< position sensors only, body frame
    double rate_hz = 10.0;

    double altitude_sigma() const { return noise_sigma_z.value_or(noise_sigma); }
    void validate(const std::string& sensor_id) const;
};

struct ManeuverLeg {
    double speed = 0.0;    ///< [m/s] reached at the end of the leg
    double steering = 0.0; ///< road-wheel angle [rad] reached at the end of the leg
    double duration = 0.0; ///< [s]
};

/// Scripted speed and road-wheel steering profile.
///
/// Composite legs ramp linearly from the end values of the previous leg to
/// their own values; the first leg starts at its own values, so a hold is a
/// leg that repeats the previous values. After the script ends the last values
/// are held.
struct Maneuver {
    enum class Kind { Straight, ConstantTurn, Slalom, FigureEight, Composite };

    Kind kind = Kind::Straight;
    double speed = 10.0;
    double steering = 0.0; ///< turn angle, slalom amplitude or figure-eight angle
    double period = 10.0;  ///< slalom period [s]
    std::vector<ManeuverLeg> legs;

    double speed_at(double t) const;
    double acceleration_at(double t) const;
    double steering_at(double t, double wheelbase) const;
    double steering_rate_at(double t, double wheelbase) const;
    /// Times inside [0, horizon] where the profile has a kink or jump.
    std::vector<double> breakpoints(double horizon, double wheelbase) const;
    void validate() const;
};

std::optional<Maneuver::Kind> parse_maneuver_kind(std::string_view name);
std::string_view to_string(Maneuver::Kind kind);

struct OdometerSpec {
    std::string id;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Identity();
    double dropout_probability = 0.0;
};

struct OdometerCorrelation {
    std::string a;
    std::string b;
    Eigen::Matrix3d cross = Eigen::Matrix3d::Zero(); ///< E[e_a e_b^T]
};

/// Adds a bias of Mahalanobis length `bias_sigma` (random direction in the
/// whitened space) to one odometer in randomly chosen epochs.
struct CorruptionSpec {
    std::string odometer;
    double bias_sigma = 10.0;
    double probability = 0.0;
};

struct OdometrySpec {
    double epoch_length = 0.1;
    std::vector<OdometerSpec> odometers;
    std::vector<OdometerCorrelation> correlations;
    std::optional<CorruptionSpec> corruption;

    void validate() const;
};

struct Scenario {
    std::uint64_t seed = 0;
    double duration = 0.0;
    double dt = 0.01; ///< ground-truth integration step
    Maneuver maneuver;
    VehicleParams vehicle;
    std::map<std::string, SensorErrorSpec> sensors;
    std::optional<OdometrySpec> odometry;

    void validate() const;
};

/// Seedable, splittable PRNG. Substreams are keyed by name so adding a
/// consumer never perturbs the draws of another.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    Rng substream(std::string_view key) const;

    double normal();
    double uniform();
    std::uint64_t seed() const noexcept { return seed_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

struct TruthSample {
    double t = 0.0;
    Eigen::Vector2d position = Eigen::Vector2d::Zero(); ///< reference point (rear axle)
    double heading = 0.0;                               ///< unwrapped [rad]
    double speed = 0.0;
    double yaw_rate = 0.0;
    double yaw_accel = 0.0;
    double a_lon = 0.0;
    double a_lat = 0.0;
    double steering = 0.0;
    double path_length = 0.0;
};

class TruthTrajectory {
public:
    TruthTrajectory(std::vector<TruthSample> samples, Maneuver maneuver, VehicleParams vehicle);

    const std::vector<TruthSample>& samples() const noexcept { return samples_; }
    double start_time() const { return samples_.front().t; }
    double end_time() const { return samples_.back().t; }

    /// State at an arbitrary time: pose and path length by cubic Hermite
    /// interpolation of the integrated samples, kinematic inputs evaluated
    /// from the maneuver directly.
    TruthSample at(double t) const;

    /// Motion from t0 to t1 expressed in the body frame at t0.
    Transform2 interval_transform(double t0, double t1) const;

    const Maneuver& maneuver() const noexcept { return maneuver_; }
    const VehicleParams& vehicle() const noexcept { return vehicle_; }

private:
    std::vector<TruthSample> samples_;
    Maneuver maneuver_;
    VehicleParams vehicle_;
};

/// Integrates the kinematic single-track model: yaw_rate = v * delta / (l_f + l_r).
TruthTrajectory generate_truth(const Scenario& scenario, double dt);
TruthTrajectory generate_truth(const Scenario& scenario);

std::map<std::string, SensorSeries> synthesize_sensors(const TruthTrajectory& truth, const Scenario& scenario);

struct OdometryEpoch {
    int index = 0;
    double t_start = 0.0;
    double t_end = 0.0;
    Transform2 truth;
    std::map<std::string, Transform2> estimates;
    std::set<std::string> corrupted;
};

/// Per-epoch noisy interval transforms for every configured odometer.
std::vector<OdometryEpoch> synthesize_odometry(const TruthTrajectory& truth, const Scenario& scenario);

} // namespace drk::sim
