// Runtime fusion of redundant odometers: NIS gating with leave-one-out
// consensus, propagation of stale transforms, Kalman fusion and integrity
// monitoring of absolute position fixes.
#pragma once

#include "drkit/core.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace drk::fusion {

struct OdometryEstimate {
    std::string odometer_id;
    double t_start = 0.0;
    double t_end = 0.0;
    Transform2 transform;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Identity();
    bool propagated = false; ///< past transform carried forward; usable as a reference only

    void validate() const;
};

struct NisVerdict {
    std::string odometer_id;
    double nis = 0.0;
    double threshold = 0.0;
    int dof = 3;
    bool accepted = true;
};

struct PositionFix {
    double t = 0.0;
    Eigen::Vector2d position = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
};

/// Declared cross-covariances E[e_a e_b^T] between odometer errors.
class CorrelationTable {
public:
    void set(const std::string& a, const std::string& b, const Eigen::Matrix3d& cross);
    /// Cross-covariance oriented as E[e_a e_b^T], or nothing when undeclared.
    std::optional<Eigen::Matrix3d> get(const std::string& a, const std::string& b) const;
    bool empty() const noexcept { return table_.empty(); }
    const std::map<std::pair<std::string, std::string>, Eigen::Matrix3d>& entries() const noexcept { return table_; }

private:
    std::map<std::pair<std::string, std::string>, Eigen::Matrix3d> table_;
};

/// Chi-squared distribution via the regularized incomplete gamma function.
double chi2_cdf(double x, int dof);
double chi2_quantile(double p, int dof);

/// Squared Mahalanobis distance of candidate − reference against the χ²
/// quantile at `alpha`. `cross` is E[e_candidate e_reference^T]; the
/// innovation covariance is P_c + P_r − C − Cᵀ.
NisVerdict nis_test(const OdometryEstimate& candidate, const OdometryEstimate& reference, double alpha,
                    const Eigen::Matrix3d* cross = nullptr, int dof = 3);

/// Raised when no two estimates agree; carries every verdict of the last round.
class NoConsensusError : public Error {
public:
    NoConsensusError(const std::string& what, std::vector<NisVerdict> verdicts)
        : Error(ErrorCode::NoConsensus, what), verdicts_(std::move(verdicts))
    {
    }
    const std::vector<NisVerdict>& verdicts() const noexcept { return verdicts_; }

private:
    std::vector<NisVerdict> verdicts_;
};

struct InlierSelection {
    std::vector<OdometryEstimate> inliers;  ///< current estimates that passed, sorted by id
    std::vector<NisVerdict> verdicts;       ///< one per current estimate, sorted by id
    std::vector<std::string> rejected;      ///< in removal order
    std::vector<std::string> references;    ///< propagated estimates admitted as references
};

/// Leave-one-out consensus: every current estimate is tested against the
/// fusion of all other estimates, and the worst failing estimate is removed
/// per round until every survivor passes. Propagated estimates only join the
/// reference pool, and only when fewer than two current estimates exist.
InlierSelection select_inliers(const std::vector<OdometryEstimate>& current, double alpha,
                               const CorrelationTable& correlations = {},
                               const std::vector<OdometryEstimate>& propagated = {}, int dof = 3);

/// Carries a past transform forward by `displacement_lon` along its own
/// translation direction and `displacement_lat` to the left of it; the
/// covariance grows by inflation · dt.
OdometryEstimate propagate_transform(const OdometryEstimate& past, double displacement_lon,
                                     double displacement_lat, const Eigen::Matrix3d& inflation, double dt);

/// Same with the displacements obtained by integrating the calibrated body
/// accelerations (channel 0 longitudinal, 1 lateral) twice over
/// [past.t_end, t_now]. The result covers [past.t_end, t_now].
OdometryEstimate propagate_transform(const OdometryEstimate& past, const SensorSeries& imu_accel, double t_now,
                                     const Eigen::Matrix3d& inflation);

/// Double integral of a scalar channel from t0, evaluated at t1 (trapezoid on
/// the samples plus interpolated end points).
double double_integral(const SensorSeries& series, std::size_t channel, double t0, double t1);

/// Kalman update of a with b (identity measurement). With `cross` the gain uses
/// the covariances as given and `cross` is added to the result.
OdometryEstimate fuse_pair(const OdometryEstimate& a, const OdometryEstimate& b,
                           const Eigen::Matrix3d* cross = nullptr);

/// Left fold of fuse_pair in odometer-id order. The cross term for each step is
/// the sum of the declared cross-covariances between the incoming estimate and
/// the estimates already folded in.
OdometryEstimate fuse_all(std::vector<OdometryEstimate> inliers, const CorrelationTable& correlations = {});

struct MonitorOptions {
    double alpha = 0.95;
    double max_gap = 1.0;                               ///< [s] largest hole allowed in the chain
    double initial_heading = 0.0;                       ///< world heading at the start of the chain
    double initial_heading_variance = 0.0;              ///< [rad^2]
    Eigen::Vector2d lever_arm = Eigen::Vector2d::Zero(); ///< antenna in the body frame
};

struct MonitorResult {
    NisVerdict verdict;
    Eigen::Vector2d predicted = Eigen::Vector2d::Zero();
    Eigen::Matrix2d predicted_cov = Eigen::Matrix2d::Zero();
};

/// Transports every prior fix to new_fix.t along the fused odometry chain
/// (first-order covariance, shared chain segments correlated), combines the
/// predictions by generalized least squares and NIS-tests the new fix with
/// dof 2. Chain epochs are fractionally used when a fix falls inside one.
MonitorResult monitor_position(const std::vector<PositionFix>& prior_fixes,
                               const std::vector<OdometryEstimate>& chain, const PositionFix& new_fix,
                               const MonitorOptions& options = {});

/// World pose after applying the chain from the start up to time t.
struct Pose2 {
    Eigen::Vector2d position = Eigen::Vector2d::Zero();
    double heading = 0.0;
};
Pose2 apply(const Pose2& pose, const Transform2& motion);

struct FusionOptions {
    double alpha = 0.95;
    int dof = 3;
    Eigen::Matrix3d inflation = Eigen::Matrix3d::Identity() * 1e-4; ///< per second of propagation
};

enum class EpochStatus { Fused, Single, NoConsensus, Empty };
const char* to_string(EpochStatus status);

struct FusionRecord {
    int epoch = 0;
    double t_start = 0.0;
    double t_end = 0.0;
    EpochStatus status = EpochStatus::Fused;
    Transform2 fused;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    std::vector<NisVerdict> verdicts;
    std::vector<std::string> inlier_ids;
    std::vector<std::string> rejected_ids;
    std::vector<std::string> reference_ids;
};

/// Per-epoch gate → propagate → fuse. Stale transforms for odometers missing
/// from an epoch are propagated from their previous estimate with the IMU
/// accelerations; an epoch without consensus falls back to the previous fused
/// transform, propagated the same way.
class FusionPipeline {
public:
    FusionPipeline(FusionOptions options, CorrelationTable correlations, const SensorSeries* imu_accel = nullptr);

    FusionRecord process(int epoch, double t_start, double t_end, const std::vector<OdometryEstimate>& current);

private:
    std::optional<OdometryEstimate> carry_forward(const OdometryEstimate& past, double t_start, double t_end) const;

    FusionOptions options_;
    CorrelationTable correlations_;
    const SensorSeries* imu_accel_;
    std::map<std::string, OdometryEstimate> last_;
    std::optional<OdometryEstimate> last_fused_;
};

} // namespace drk::fusion
