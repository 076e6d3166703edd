#include "drkit/simkit.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace drk;
using namespace drk::sim;

namespace {

Scenario base(Maneuver::Kind kind, double speed, double steering, double duration)
{
    Scenario s;
    s.seed = 1;
    s.duration = duration;
    s.dt = 0.01;
    s.maneuver.kind = kind;
    s.maneuver.speed = speed;
    s.maneuver.steering = steering;
    return s;
}

} // namespace

TEST_CASE("straight drive at constant speed")
{
    const TruthTrajectory t = generate_truth(base(Maneuver::Kind::Straight, 10.0, 0.0, 10.0));
    const TruthSample end = t.samples().back();
    CHECK(end.t == doctest::Approx(10.0));
    CHECK(end.position.x() == doctest::Approx(100.0).epsilon(1e-9));
    CHECK(std::abs(end.position.y()) < 1e-12);
    CHECK(end.path_length == doctest::Approx(100.0).epsilon(1e-9));
    CHECK(end.yaw_rate == 0.0);
}

TEST_CASE("constant turn follows the single-track yaw rate")
{
    const double v = 5.0, delta = 0.1;
    Scenario s = base(Maneuver::Kind::ConstantTurn, v, delta, 20.0);
    const TruthTrajectory t = generate_truth(s);
    const double wheelbase = s.vehicle.wheelbase();
    const double omega = v * delta / wheelbase;
    for (const TruthSample& x : t.samples()) {
        CHECK(x.yaw_rate == doctest::Approx(omega));
        CHECK(x.heading == doctest::Approx(omega * x.t).epsilon(1e-9));
        // on a circle of radius v / omega centred at (0, R)
        const double radius = v / omega;
        CHECK((x.position - Eigen::Vector2d(0.0, radius)).norm() == doctest::Approx(radius).epsilon(1e-8));
        CHECK(x.a_lat == doctest::Approx(v * omega));
    }
}

TEST_CASE("interval_transform matches world poses")
{
    const TruthTrajectory t = generate_truth(base(Maneuver::Kind::Slalom, 8.0, 0.06, 30.0));
    for (double t0 : {1.0, 7.3, 20.05}) {
        const double t1 = t0 + 0.1;
        const Transform2 m = t.interval_transform(t0, t1);
        const TruthSample a = t.at(t0);
        const TruthSample b = t.at(t1);
        const Eigen::Vector2d world = a.position + rotation(a.heading) * m.translation();
        CHECK((world - b.position).norm() < 1e-9);
        CHECK(m.dpsi() == doctest::Approx(b.heading - a.heading));
    }
}

TEST_CASE("figure-eight returns close to its start")
{
    const Scenario s = base(Maneuver::Kind::FigureEight, 8.0, 0.08, 400.0);
    const TruthTrajectory t = generate_truth(s);
    // heading never drifts: the two lobes cancel
    double max_heading = 0.0;
    for (const auto& x : t.samples()) {
        max_heading = std::max(max_heading, std::abs(x.heading));
    }
    CHECK(max_heading <= 2.0 * std::numbers::pi + 1e-2);
}

TEST_CASE("noiseless sensors apply delay, scale and offset exactly")
{
    Scenario s = base(Maneuver::Kind::Slalom, 10.0, 0.05, 20.0);
    SensorErrorSpec gyro;
    gyro.kind = SensorKind::ImuYawRate;
    gyro.rate_hz = 100.0;
    gyro.scale = 1.0576;
    gyro.offset = -0.0028;
    SensorErrorSpec heading;
    heading.kind = SensorKind::GnssHeading;
    heading.rate_hz = 10.0;
    heading.time_delay = 0.13;
    s.sensors = {{"gyro", gyro}, {"heading", heading}};
    const TruthTrajectory t = generate_truth(s);
    const auto logs = synthesize_sensors(t, s);
    const SensorSeries& g = logs.at("gyro");
    const SensorSeries& h = logs.at("heading");
    CHECK(g.channel() == "yaw_rate");
    CHECK(h.channel() == "heading");
    for (std::size_t i = 0; i < g.size(); i += 37) {
        CHECK(g.value(i) == doctest::Approx(1.0576 * t.at(g.time(i)).yaw_rate - 0.0028).epsilon(1e-12));
    }
    CHECK(h.front_time() >= 0.13 - 1e-12);
    for (std::size_t i = 0; i < h.size(); i += 11) {
        CHECK(h.value(i) == doctest::Approx(wrap_angle(t.at(h.time(i) - 0.13).heading)).epsilon(1e-12));
    }
}

TEST_CASE("GNSS position includes the rotated lever arm")
{
    Scenario s = base(Maneuver::Kind::ConstantTurn, 5.0, 0.1, 10.0);
    SensorErrorSpec pos;
    pos.kind = SensorKind::GnssPosition;
    pos.rate_hz = 10.0;
    pos.lever_arm = Eigen::Vector3d(1.0, 0.5, 1.5);
    s.sensors = {{"gnss", pos}};
    const TruthTrajectory t = generate_truth(s);
    const SensorSeries p = synthesize_sensors(t, s).at("gnss");
    for (std::size_t i = 0; i < p.size(); i += 13) {
        const TruthSample x = t.at(p.time(i));
        const Eigen::Vector2d expected = x.position + rotation(x.heading) * Eigen::Vector2d(1.0, 0.5);
        CHECK(p.value(i, 0) == doctest::Approx(expected.x()));
        CHECK(p.value(i, 1) == doctest::Approx(expected.y()));
        CHECK(p.value(i, 2) == doctest::Approx(1.5));
    }
}

TEST_CASE("wheel ticks count whole ticks of path length")
{
    Scenario s = base(Maneuver::Kind::Straight, 10.0, 0.0, 10.0);
    SensorErrorSpec ticks;
    ticks.kind = SensorKind::WheelTicks;
    ticks.rate_hz = 50.0;
    s.sensors = {{"ticks", ticks}};
    s.vehicle.wheel_circumference = 2.1;
    const TruthTrajectory t = generate_truth(s);
    const SensorSeries w = synthesize_sensors(t, s).at("ticks");
    for (std::size_t i = 0; i < w.size(); i += 23) {
        CHECK(w.value(i) == std::floor(t.at(w.time(i)).path_length / 2.1 * 48.0 + 1e-9));
    }
}

TEST_CASE("same seed reproduces, another seed differs")
{
    Scenario s = test::reference_slalom(7);
    const TruthTrajectory t = generate_truth(s);
    const auto a = synthesize_sensors(t, s);
    const auto b = synthesize_sensors(t, s);
    s.seed = 8;
    const auto c = synthesize_sensors(t, s);
    bool differs = false;
    for (const auto& [id, series] : a) {
        REQUIRE(b.at(id).size() == series.size());
        for (std::size_t i = 0; i < series.size(); ++i) {
            for (std::size_t d = 0; d < series.dim(); ++d) {
                CHECK(b.at(id).value(i, d) == series.value(i, d));
                differs = differs || c.at(id).value(i, d) != series.value(i, d);
            }
        }
    }
    CHECK(differs);
}

TEST_CASE("Rng substreams are independent of one another")
{
    const Rng root(42);
    Rng a1 = root.substream("a");
    Rng a2 = root.substream("a");
    Rng b = root.substream("b");
    const double x = a1.normal();
    CHECK(x == a2.normal());
    CHECK(x != b.normal());
    for (int i = 0; i < 1000; ++i) {
        const double u = a1.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("odometry noise matches the declared covariance")
{
    Scenario s = test::four_odometers(11, false);
    s.duration = 600.0;
    const TruthTrajectory t = generate_truth(s);
    const auto epochs = synthesize_odometry(t, s);
    REQUIRE(epochs.size() == 6000);
    for (const auto& spec : s.odometry->odometers) {
        Eigen::Matrix3d sum = Eigen::Matrix3d::Zero();
        for (const auto& e : epochs) {
            const Eigen::Vector3d r = difference(e.estimates.at(spec.id), e.truth);
            sum += r * r.transpose();
        }
        const Eigen::Matrix3d cov = sum / static_cast<double>(epochs.size());
        // 6000 samples: relative sampling error of a variance is about sqrt(2/6000) = 1.8 %
        for (int d = 0; d < 3; ++d) {
            CHECK(cov(d, d) == doctest::Approx(spec.cov(d, d)).epsilon(0.08));
        }
    }
    // declared cross-covariance between the correlated pair
    const auto& corr = s.odometry->correlations.front();
    Eigen::Matrix3d cross = Eigen::Matrix3d::Zero();
    for (const auto& e : epochs) {
        cross += difference(e.estimates.at(corr.a), e.truth) * difference(e.estimates.at(corr.b), e.truth).transpose();
    }
    cross /= static_cast<double>(epochs.size());
    CHECK(cross(0, 0) == doctest::Approx(corr.cross(0, 0)).epsilon(0.15));
    CHECK(cross(2, 2) == doctest::Approx(corr.cross(2, 2)).epsilon(0.15));
}

TEST_CASE("corruption flags only emitted estimates and only the configured odometer")
{
    Scenario s = test::four_odometers(12, true);
    s.odometry->odometers[2].dropout_probability = 0.3;
    const TruthTrajectory t = generate_truth(s);
    const auto epochs = synthesize_odometry(t, s);
    std::size_t corrupted = 0;
    for (const auto& e : epochs) {
        for (const auto& id : e.corrupted) {
            CHECK(id == s.odometry->corruption->odometer);
            CHECK(e.estimates.count(id) == 1);
            ++corrupted;
        }
    }
    const double rate = static_cast<double>(corrupted) / static_cast<double>(epochs.size());
    // probability 0.1 of the 70 % of epochs where the odometer reports
    CHECK(rate == doctest::Approx(0.07).epsilon(0.3));
}

TEST_CASE("validation rejects bad scenarios")
{
    Scenario s = base(Maneuver::Kind::Straight, 10.0, 0.0, 0.0);
    CHECK_THROWS_AS(s.validate(), Error);
    s.duration = 10.0;
    CHECK_NOTHROW(s.validate());
    s.maneuver.kind = Maneuver::Kind::Slalom;
    s.maneuver.period = 0.0;
    CHECK_THROWS_AS(s.validate(), Error);

    SensorErrorSpec bad;
    bad.kind = SensorKind::ImuYawRate;
    bad.lever_arm = Eigen::Vector3d(1, 0, 0);
    CHECK_THROWS_AS(bad.validate("gyro"), Error);
    bad.lever_arm.setZero();
    bad.scale = 0.0;
    CHECK_THROWS_AS(bad.validate("gyro"), Error);
}

TEST_CASE("sensor kind names round trip")
{
    for (const char* name : {"imu_yaw_rate", "imu_accel", "gnss_position", "gnss_velocity", "gnss_heading",
                             "wheel_ticks", "wheel_speed", "steering"}) {
        const auto kind = parse_sensor_kind(name);
        REQUIRE(kind.has_value());
        CHECK(to_string(*kind) == std::string(name));
    }
    CHECK_FALSE(parse_sensor_kind("lidar").has_value());
}
