// Drives the drkit executable as a user would.
#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result drkit(const std::string& args)
{
    const std::string cmd = std::string(DRK_CLI) + " " + args + " 2>/dev/null";
    Result r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) {
        r.out.append(buf, n);
    }
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path scratch(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("drkit_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

const std::string scenarios = DRK_SCENARIO_DIR;

} // namespace

TEST_CASE("usage errors exit with 2")
{
    CHECK(drkit("").code == 2);
    CHECK(drkit("simulate --bogus 1").code == 2);
    CHECK(drkit("simulate --seed notanumber --scenario x --out y").code == 2);
    CHECK(drkit("--help").code == 0);
}

TEST_CASE("missing inputs exit with 3")
{
    const auto dir = scratch("missing");
    CHECK(drkit("simulate --scenario /nonexistent.json --out " + dir.string()).code == 3);
    CHECK(drkit("simulate --config /nonexistent.json").code == 3);
    CHECK(drkit("fuse --odometry /nonexistent.csv --truth " + scenarios + "/four_odometers.json --out " +
                dir.string())
              .code == 3);
}

TEST_CASE("invalid scenario exits with 2")
{
    const auto dir = scratch("invalid");
    json s = json::parse(slurp(scenarios + "/reference_slalom.json"));
    s["duration"] = 0;
    std::ofstream(dir / "bad.json") << s.dump();
    CHECK(drkit("simulate --scenario " + (dir / "bad.json").string() + " --out " + (dir / "o").string()).code == 2);
}

TEST_CASE("same seed gives byte-identical outputs")
{
    const auto dir = scratch("determinism");
    const std::string base = "simulate --scenario " + scenarios + "/reference_slalom.json --seed 5 --out ";
    REQUIRE(drkit(base + (dir / "a").string()).code == 0);
    REQUIRE(drkit(base + (dir / "b").string()).code == 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        const auto name = e.path().filename();
        if (name == "manifest.json") {
            // the manifest echoes the output directory; its hashes must agree
            const json a = json::parse(slurp(e.path()));
            const json b = json::parse(slurp(dir / "b" / name));
            CHECK(a["runs"]["simulate"]["outputs"] == b["runs"]["simulate"]["outputs"]);
            continue;
        }
        CHECK(slurp(e.path()) == slurp(dir / "b" / name));
        ++files;
    }
    CHECK(files >= 10);
    REQUIRE(drkit("simulate --scenario " + scenarios + "/reference_slalom.json --seed 6 --out " + (dir / "c").string())
                .code == 0);
    CHECK(slurp(dir / "a" / "imu_gyro.csv") != slurp(dir / "c" / "imu_gyro.csv"));
}

TEST_CASE("calibrate a single step and the whole chain")
{
    const auto dir = scratch("calibrate");
    REQUIRE(drkit("simulate --scenario " + scenarios + "/reference_slalom.json --out " + (dir / "logs").string()).code ==
            0);
    const Result delay = drkit("calibrate --logs " + (dir / "logs").string() + " --step delay --out " +
                               (dir / "delay").string());
    REQUIRE(delay.code == 0);
    const json report = json::parse(slurp(dir / "delay" / "calibration-report.json"));
    CHECK(report["schema_version"] == 1);
    CHECK(report["steps"]["delay"]["delay_s"].get<double>() == doctest::Approx(0.130).epsilon(0.01 / 0.13));
    CHECK_FALSE(report["steps"].contains("imu"));

    const Result all = drkit("calibrate --logs " + (dir / "logs").string() + " --gnss-sigma 0.5 --truth " + scenarios +
                             "/reference_slalom.json --out " + (dir / "all").string());
    REQUIRE(all.code == 0);
    const json full = json::parse(slurp(dir / "all" / "calibration-report.json"));
    for (const char* step : {"delay", "imu", "lever", "steering", "wheel"}) {
        CHECK(full["steps"][step]["status"] == "ok");
    }
    CHECK(full["recovery"].size() >= 8);
}

TEST_CASE("a missing channel skips its step")
{
    const auto dir = scratch("skip");
    json s = json::parse(slurp(scenarios + "/reference_slalom.json"));
    s["sensors"].erase("steering");
    std::ofstream(dir / "no_steering.json") << s.dump();
    REQUIRE(drkit("simulate --scenario " + (dir / "no_steering.json").string() + " --out " + (dir / "logs").string())
                .code == 0);
    const Result r = drkit("calibrate --logs " + (dir / "logs").string() + " --gnss-sigma 0.5 --out " +
                           (dir / "cal").string());
    REQUIRE(r.code == 0);
    const json report = json::parse(slurp(dir / "cal" / "calibration-report.json"));
    CHECK(report["steps"]["steering"]["status"] == "skipped: missing channel");
    CHECK(report["steps"]["steering"]["channel"] == "steering");
    CHECK(report["steps"]["imu"]["status"] == "ok");
    // asking for the step alone is an error
    CHECK(drkit("calibrate --logs " + (dir / "logs").string() + " --step steering --out " + (dir / "c2").string())
              .code == 3);
}

TEST_CASE("pipeline with config file and tamper detection")
{
    const auto dir = scratch("pipeline");
    json s = json::parse(slurp(scenarios + "/four_odometers.json"));
    s["duration"] = 60;
    std::ofstream(dir / "short.json") << s.dump();
    REQUIRE(drkit("simulate --scenario " + (dir / "short.json").string() + " --out " + (dir / "sim").string()).code ==
            0);
    std::ofstream(dir / "covest.json") << json{{"odometry", (dir / "sim/odometry.csv").string()},
                                               {"out", (dir / "cov").string()},
                                               {"epochs", {10, 100}}}
                                              .dump();
    const Result cov = drkit("covest --config " + (dir / "covest.json").string() +
                             " --correlated wheel_imu:single_track --epochs 10 100 500");
    REQUIRE(cov.code == 0);
    CHECK(json::parse(cov.out)["epochs"] == json({10, 100, 500}));

    const std::string fuse = "fuse --odometry " + (dir / "sim/odometry.csv").string() + " --covariance " +
                             (dir / "cov/covariance-report.json").string() + " --out " + (dir / "fuse").string();
    REQUIRE(drkit(fuse).code == 0);
    {
        std::ofstream(dir / "cov/covariance-report.json", std::ios::app) << "\n";
    }
    CHECK(drkit(fuse).code == 4);
}
