// File formats: scenario JSON, sensor-log and odometry CSVs, atomic writes
// and the run manifest with output hashes.
#pragma once

#include "drkit/core.hpp"
#include "drkit/simkit.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace drk::io {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);
/// Seconds with 9 fractional digits.
std::string format_time(double t);
double parse_double(std::string_view text, const std::string& where);

/// Throws ErrorCode::MissingDependency when the file is absent.
std::string read_file(const fs::path& path);
/// Writes to a temporary sibling and renames it over `path`.
void write_file_atomic(const fs::path& path, const std::string& content);

/// Schema errors name the offending field path, e.g. `sensors.gps.rate_hz`.
json read_json(const fs::path& path);
void write_json(const fs::path& path, const json& j);

sim::Scenario parse_scenario(const json& j);
json scenario_to_json(const sim::Scenario& scenario);
sim::Scenario load_scenario(const fs::path& path);

/// Matrices travel as row-major nested arrays.
json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j, const std::string& where);
json transform_to_json(const Transform2& t);

/// Header `t,sensor_id,channel,v0[,v1,v2]`, one sample per row.
std::string series_to_csv(const SensorSeries& series);
SensorSeries series_from_csv(const std::string& content, const std::string& where);
SensorSeries read_series_csv(const fs::path& path);

/// Every sensor-log CSV in a directory, keyed by sensor id.
std::map<std::string, SensorSeries> read_log_dir(const fs::path& dir);

std::string truth_to_csv(const sim::TruthTrajectory& truth);

/// Columns `epoch,t_start,t_end,odometer_id,dx,dy,dpsi,corrupted`.
std::string odometry_to_csv(const std::vector<sim::OdometryEpoch>& epochs);
/// Columns `epoch,t_start,t_end,dx,dy,dpsi`.
std::string odometry_truth_to_csv(const std::vector<sim::OdometryEpoch>& epochs);
/// Epoch truth is filled in when `truth_path` is given.
std::vector<sim::OdometryEpoch> read_odometry_csv(const fs::path& path, const fs::path& truth_path = {});

std::string sha256_hex(const std::string& content);

/// manifest.json: per command, the resolved config and the SHA-256 of every output.
void write_manifest(const fs::path& dir, const std::string& command, const json& config,
                    const std::vector<std::string>& outputs);

/// When `dir` holds a manifest listing `file`, its hash must match; a
/// mismatch throws ErrorCode::Consistency.
void verify_against_manifest(const fs::path& file);

} // namespace drk::io
