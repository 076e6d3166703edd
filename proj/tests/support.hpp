// Scenario builders and helpers shared by the test programs.
#pragma once

#include "drkit/io.hpp"
#include "drkit/simkit.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>

namespace drk::test {

inline std::filesystem::path scenario_path(const std::string& name)
{
    return std::filesystem::path(DRK_SCENARIO_DIR) / name;
}

inline double deg(double d)
{
    return d * std::numbers::pi / 180.0;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("drkit_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Reference slalom drive: slalom, 10 Hz GNSS delayed by 130 ms, 100 Hz IMU with
/// offset -0.1626 deg/s and scale 1.0576.
inline sim::Scenario reference_slalom(std::uint64_t seed, bool noisy = true)
{
    sim::Scenario s = io::load_scenario(scenario_path("reference_slalom.json"));
    s.seed = seed;
    if (!noisy) {
        for (auto& [id, spec] : s.sensors) {
            spec.noise_sigma = 0.0;
            spec.noise_sigma_z.reset();
        }
    }
    return s;
}

inline sim::Scenario four_odometers(std::uint64_t seed, bool corrupted)
{
    sim::Scenario s = io::load_scenario(scenario_path("four_odometers.json"));
    s.seed = seed;
    if (!corrupted) {
        s.odometry->corruption.reset();
    }
    return s;
}

} // namespace drk::test
