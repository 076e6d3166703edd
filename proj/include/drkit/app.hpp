// Subcommand drivers shared by the C API and the command-line tool. Every
// command takes a JSON config, writes its outputs atomically into the output
// directory together with a manifest, and returns a short JSON summary.
#pragma once

#include "drkit/covest.hpp"
#include "drkit/fusion.hpp"
#include "drkit/io.hpp"
#include "drkit/simkit.hpp"

#include <string>
#include <vector>

namespace drk::app {

using io::json;

/// simulate | calibrate | covest | fuse | monitor | plotdata
json run(const std::string& command, const json& config);

const std::vector<std::string>& commands();

/// 0 ok, 2 schema, 3 missing dependency, 4 consistency, 5 numerical; other
/// library errors map to 1.
int exit_code(ErrorCode code);

struct OdometerModel {
    std::vector<std::string> ids;
    std::map<std::string, Eigen::Matrix3d> covariances;
    fusion::CorrelationTable correlations;
};

/// Odometer covariances as simulated (ground truth of a scenario).
OdometerModel model_from_scenario(const sim::Scenario& scenario);
/// Odometer covariances from a covariance report, projected onto the PSD cone.
OdometerModel model_from_report(const json& report);

struct FuseOutcome {
    std::vector<fusion::FusionRecord> records;
    std::map<std::string, std::vector<fusion::Pose2>> paths; ///< per source, one pose per epoch end
    json summary;
};

FuseOutcome fuse_epochs(const std::vector<sim::OdometryEpoch>& epochs, const OdometerModel& model,
                        const fusion::FusionOptions& options, const SensorSeries* imu_accel, bool have_truth);

json record_to_json(const fusion::FusionRecord& record);
fusion::OdometryEstimate record_from_json(const json& j, const std::string& where);

struct FixVerdict {
    fusion::PositionFix fix;
    fusion::MonitorResult result;
    std::size_t priors = 0;
};

/// Tests every fix inside the chain's span against up to `window` previously
/// accepted fixes; the first fix seeds the priors. The chain's heading before
/// the oldest prior is accumulated, with its variance, into the options.
std::vector<FixVerdict> monitor_fixes(std::vector<fusion::OdometryEstimate> chain,
                                      const std::vector<fusion::PositionFix>& fixes,
                                      const fusion::MonitorOptions& options, std::size_t window);

struct SweepPoint {
    std::size_t epochs = 0;
    covest::CovEstimate estimate;
    covest::DifferenceStats stats;
};

/// Batch estimates over the first n complete epochs for each requested n.
std::vector<SweepPoint> covest_sweep(const std::vector<sim::OdometryEpoch>& epochs,
                                     const std::vector<std::string>& ids, const std::set<covest::PairKey>& correlated,
                                     const std::vector<std::size_t>& sizes);

/// One row per record (a JSON document is a single record, JSON lines one
/// each). Columns are leaf pointers such as `/verdicts/#0/nis`, where `#n`
/// marks an array index; cells hold the leaf as JSON text, empty when the
/// record lacks it.
std::string flatten_to_csv(const std::vector<json>& records);
std::vector<json> unflatten_csv(const std::string& csv);

} // namespace drk::app
