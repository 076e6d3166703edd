// Per-odometer covariances and pairwise cross-covariances from redundant
// odometry by pairwise differencing.
#pragma once

#include "drkit/core.hpp"

#include <deque>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace drk::covest {

/// Unordered odometer pair as indices into the batch ids, always first < second.
using PairKey = std::pair<std::size_t, std::size_t>;

PairKey make_pair_key(std::size_t a, std::size_t b);

/// Length of the vectorized upper triangle including the diagonal.
constexpr std::size_t vector_length(std::size_t n) { return n * (n + 1) / 2; }

/// Synchronized estimates of the same motion from k odometers. Components
/// flagged in `angular` are differenced with wrapping.
struct OdometerBatch {
    std::vector<std::string> odometer_ids;
    std::vector<std::vector<Eigen::VectorXd>> epochs; ///< epochs[e][i] belongs to odometer_ids[i]
    std::vector<bool> angular;

    OdometerBatch() = default;
    OdometerBatch(std::vector<std::string> ids, std::size_t dim, std::vector<bool> angular_mask = {});

    /// Batch of planar transforms (dx, dy, dpsi), dpsi angular.
    static OdometerBatch planar(std::vector<std::string> ids);

    std::size_t k() const noexcept { return odometer_ids.size(); }
    std::size_t dim() const noexcept { return angular.size(); }
    std::size_t size() const noexcept { return epochs.size(); }
    std::size_t index_of(const std::string& id) const;

    void add_epoch(std::vector<Eigen::VectorXd> values);
    /// Epochs missing any odometer are skipped; returns whether it was added.
    bool add_epoch(const std::map<std::string, Transform2>& estimates);
    void validate() const;
};

Eigen::VectorXd difference(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const std::vector<bool>& angular);

struct DifferenceStats {
    std::map<PairKey, Eigen::MatrixXd> covariance; ///< about zero
    std::map<PairKey, Eigen::VectorXd> mean;       ///< diagnostic: nonzero means uncalibrated bias
    std::size_t epochs = 0;
};

DifferenceStats difference_covariances(const OdometerBatch& batch);

Eigen::VectorXd vectorize_upper(const Eigen::MatrixXd& m);
Eigen::MatrixXd unvectorize_upper(const Eigen::VectorXd& v, std::size_t n);

struct CovSystem {
    Eigen::MatrixXd design; ///< rows = retained pairs, cols = k
    Eigen::MatrixXd rhs;    ///< rows = retained pairs, cols = n(n+1)/2
    std::vector<PairKey> rows;
    std::set<PairKey> correlated_pairs;
    std::size_t k = 0;
    std::size_t n = 0;
};

CovSystem build_cov_system(const std::map<PairKey, Eigen::MatrixXd>& diffs, std::size_t k,
                           const std::set<PairKey>& correlated_pairs);

struct CovEstimate {
    std::vector<Eigen::MatrixXd> covariances;  ///< per odometer index
    std::map<PairKey, Eigen::MatrixXd> cross;  ///< E[e_a e_b^T] for each correlated pair
    std::size_t sample_count = 0;
    std::vector<std::string> warnings;
};

/// Least-squares solve of the differencing system, one back-substitution per
/// matrix element, then cross-covariances Σ_ab = ½(Σ_a + Σ_b − Σ_{a−b}) for the
/// correlated pairs. Negative variances are clamped to zero with a warning.
CovEstimate solve_cov_system(const std::map<PairKey, Eigen::MatrixXd>& diffs, std::size_t k,
                             const std::set<PairKey>& correlated_pairs, std::size_t sample_count = 0);

CovEstimate estimate_batch(const OdometerBatch& batch, const std::set<PairKey>& correlated_pairs);

/// Sliding-window estimator over the most recent `window` epochs. Running sums
/// are rebuilt from the stored window every `window` pushes so rounding cannot
/// accumulate.
class OnlineCovEstimator {
public:
    OnlineCovEstimator(std::vector<std::string> ids, std::size_t dim, std::size_t window,
                       std::set<PairKey> correlated_pairs, std::vector<bool> angular_mask = {});

    void push(const std::vector<Eigen::VectorXd>& values);
    bool push(const std::map<std::string, Transform2>& estimates);

    std::size_t size() const noexcept { return window_epochs_.size(); }
    std::size_t minimum_epochs() const noexcept { return vector_length(dim_) + 1; }

    /// Throws ErrorCode::InsufficientEpochs until the window holds n(n+1)/2 + 1 epochs.
    CovEstimate estimate() const;

private:
    void rebuild();

    std::vector<std::string> ids_;
    std::size_t dim_;
    std::size_t window_;
    std::set<PairKey> correlated_;
    std::vector<bool> angular_;
    std::vector<PairKey> pairs_;
    std::deque<std::vector<Eigen::VectorXd>> window_epochs_;
    std::vector<Eigen::MatrixXd> sums_;
    std::size_t since_rebuild_ = 0;
};

/// Closed polyline of the `scale`-sigma ellipse of a 2x2 covariance.
std::vector<Eigen::Vector2d> covariance_ellipse(const Eigen::Matrix2d& cov, double scale = 1.0,
                                                std::size_t points = 73,
                                                const Eigen::Vector2d& center = Eigen::Vector2d::Zero());

} // namespace drk::covest
