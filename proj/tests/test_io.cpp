#include "drkit/io.hpp"

#include "support.hpp"

#include <doctest.h>

#include <fstream>
#include <functional>
#include <optional>

using namespace drk;
using namespace drk::io;

namespace {

std::optional<ErrorCode> code_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

} // namespace

TEST_CASE("format_double round trips")
{
    for (double v : {0.0, 1.0, -2.5, 0.1, 1e-300, 123456789.123456789, 3.141592653589793}) {
        CHECK(parse_double(format_double(v), "v") == v);
    }
    CHECK(format_time(1.5) == "1.500000000");
    CHECK(code_of([] { parse_double("1.0x", "field"); }) == ErrorCode::Schema);
}

TEST_CASE("sha256 of a known string")
{
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("series CSV round trip")
{
    SensorSeries s("gnss", "position", 3);
    s.push_back(0.1, Eigen::VectorXd(Eigen::Vector3d(1.0, 2.0, 3.0)));
    s.push_back(0.2, Eigen::VectorXd(Eigen::Vector3d(-1.0 / 3.0, 1e-9, 7.0)));
    const std::string csv = series_to_csv(s);
    CHECK(csv.rfind("t,sensor_id,channel,v0,v1,v2\n", 0) == 0);
    const SensorSeries back = series_from_csv(csv, "x.csv");
    CHECK(back.sensor_id() == "gnss");
    CHECK(back.channel() == "position");
    REQUIRE(back.size() == 2);
    CHECK(back.value(1, 0) == -1.0 / 3.0);
    CHECK(back.time(1) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(series_to_csv(back) == csv);
}

TEST_CASE("malformed CSVs are schema errors")
{
    CHECK(code_of([] { series_from_csv("t,sensor_id,channel\n", "a"); }) == ErrorCode::Schema);
    CHECK(code_of([] { series_from_csv("t,sensor_id,channel,v0\n0.1,a,b,1,2\n", "a"); }) == ErrorCode::Schema);
    CHECK(code_of([] { series_from_csv("t,sensor_id,channel,v0\n0.2,a,b,1\n0.1,a,b,1\n", "a"); }).has_value());
}

TEST_CASE("scenario JSON round trip")
{
    const sim::Scenario s = test::four_odometers(4004, true);
    const json j = scenario_to_json(s);
    const sim::Scenario back = parse_scenario(j);
    CHECK(scenario_to_json(back) == j);
    CHECK(back.odometry->odometers.size() == 4);
    CHECK(back.odometry->corruption->bias_sigma == 10.0);
}

TEST_CASE("scenario schema errors name the field")
{
    json j = scenario_to_json(test::reference_slalom(1));
    j["sensors"]["imu_gyro"]["rate_hz"] = "fast";
    try {
        parse_scenario(j);
        FAIL("expected schema error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Schema);
        CHECK(std::string(e.what()).find("sensors.imu_gyro.rate_hz") != std::string::npos);
    }
    json k = scenario_to_json(test::reference_slalom(1));
    k["duration"] = 0.0;
    CHECK(code_of([&] { parse_scenario(k); }) == ErrorCode::Schema);
    json u = scenario_to_json(test::reference_slalom(1));
    u["sensors"]["imu_gyro"]["kind"] = "lidar";
    CHECK(code_of([&] { parse_scenario(u); }) == ErrorCode::Schema);
}

TEST_CASE("missing files")
{
    CHECK(code_of([] { read_file("/nonexistent/drkit/file.json"); }) == ErrorCode::MissingDependency);
    CHECK(code_of([] { read_log_dir("/nonexistent/drkit"); }) == ErrorCode::MissingDependency);
}

TEST_CASE("odometry CSV round trip keeps corruption flags")
{
    const sim::Scenario s = test::four_odometers(3, true);
    sim::Scenario shorter = s;
    shorter.duration = 20.0;
    const auto epochs = sim::synthesize_odometry(sim::generate_truth(shorter), shorter);
    const auto dir = test::scratch("io_odometry");
    write_file_atomic(dir / "odometry.csv", odometry_to_csv(epochs));
    write_file_atomic(dir / "odometry_truth.csv", odometry_truth_to_csv(epochs));
    const auto back = read_odometry_csv(dir / "odometry.csv", dir / "odometry_truth.csv");
    REQUIRE(back.size() == epochs.size());
    for (std::size_t i = 0; i < epochs.size(); ++i) {
        CHECK(back[i].estimates.size() == epochs[i].estimates.size());
        CHECK(back[i].corrupted == epochs[i].corrupted);
        CHECK(difference(back[i].truth, epochs[i].truth).norm() < 1e-12);
        for (const auto& [id, t] : epochs[i].estimates) {
            CHECK(difference(back[i].estimates.at(id), t).norm() < 1e-12);
        }
    }
    CHECK(odometry_to_csv(back) == odometry_to_csv(epochs));
}

TEST_CASE("manifest detects tampering")
{
    const auto dir = test::scratch("io_manifest");
    write_file_atomic(dir / "a.json", "{\"x\": 1}\n");
    write_manifest(dir, "test", json{{"k", 1}}, {"a.json"});
    CHECK_NOTHROW(verify_against_manifest(dir / "a.json"));
    {
        std::ofstream(dir / "a.json") << "{\"x\": 2}\n";
    }
    CHECK(code_of([&] { verify_against_manifest(dir / "a.json"); }) == ErrorCode::Consistency);
    // files the manifest does not list are accepted as they are
    write_file_atomic(dir / "b.json", "{}");
    CHECK_NOTHROW(verify_against_manifest(dir / "b.json"));
}
