#include "drkit/covest.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace drk::covest {
namespace {

[[noreturn]] void invalid(const std::string& what)
{
    throw Error(ErrorCode::InvalidArgument, what);
}

std::vector<PairKey> all_pairs(std::size_t k)
{
    std::vector<PairKey> out;
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a + 1; b < k; ++b) {
            out.emplace_back(a, b);
        }
    }
    return out;
}

} // namespace

PairKey make_pair_key(std::size_t a, std::size_t b)
{
    if (a == b) {
        invalid("odometer pair must name two distinct odometers");
    }
    return a < b ? PairKey{a, b} : PairKey{b, a};
}

OdometerBatch::OdometerBatch(std::vector<std::string> ids, std::size_t dim, std::vector<bool> angular_mask)
    : odometer_ids(std::move(ids)), angular(std::move(angular_mask))
{
    if (angular.empty()) {
        angular.assign(dim, false);
    }
    if (angular.size() != dim || dim == 0) {
        invalid("odometer batch: angular mask length must equal the dimension");
    }
}

OdometerBatch OdometerBatch::planar(std::vector<std::string> ids)
{
    return OdometerBatch(std::move(ids), 3, {false, false, true});
}

std::size_t OdometerBatch::index_of(const std::string& id) const
{
    const auto it = std::find(odometer_ids.begin(), odometer_ids.end(), id);
    if (it == odometer_ids.end()) {
        invalid("unknown odometer '" + id + "'");
    }
    return static_cast<std::size_t>(it - odometer_ids.begin());
}

void OdometerBatch::add_epoch(std::vector<Eigen::VectorXd> values)
{
    if (values.size() != k()) {
        invalid("odometer batch: epoch must contain every odometer");
    }
    for (const auto& v : values) {
        if (static_cast<std::size_t>(v.size()) != dim()) {
            invalid("odometer batch: estimate dimension mismatch");
        }
    }
    epochs.push_back(std::move(values));
}

bool OdometerBatch::add_epoch(const std::map<std::string, Transform2>& estimates)
{
    if (dim() != 3) {
        invalid("odometer batch: transforms need a 3-dimensional batch");
    }
    std::vector<Eigen::VectorXd> values;
    values.reserve(k());
    for (const auto& id : odometer_ids) {
        const auto it = estimates.find(id);
        if (it == estimates.end()) {
            return false;
        }
        values.emplace_back(it->second.vector());
    }
    epochs.push_back(std::move(values));
    return true;
}

void OdometerBatch::validate() const
{
    if (k() < 2) {
        invalid("odometer batch: need at least two odometers");
    }
    std::set<std::string> unique(odometer_ids.begin(), odometer_ids.end());
    if (unique.size() != k()) {
        invalid("odometer batch: duplicate odometer ids");
    }
}

Eigen::VectorXd difference(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const std::vector<bool>& angular)
{
    Eigen::VectorXd d = a - b;
    for (std::size_t c = 0; c < angular.size(); ++c) {
        if (angular[c]) {
            d(static_cast<Eigen::Index>(c)) = wrap_angle(d(static_cast<Eigen::Index>(c)));
        }
    }
    return d;
}

DifferenceStats difference_covariances(const OdometerBatch& batch)
{
    batch.validate();
    if (batch.size() < 1) {
        invalid("difference_covariances: no epochs");
    }
    const auto n = static_cast<Eigen::Index>(batch.dim());
    DifferenceStats out;
    out.epochs = batch.size();
    for (const PairKey& p : all_pairs(batch.k())) {
        Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, n);
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
        for (const auto& epoch : batch.epochs) {
            const Eigen::VectorXd d = difference(epoch[p.first], epoch[p.second], batch.angular);
            sum.noalias() += d * d.transpose();
            mean += d;
        }
        const double count = static_cast<double>(batch.size());
        out.covariance[p] = symmetrize(sum / count);
        out.mean[p] = mean / count;
    }
    return out;
}

Eigen::VectorXd vectorize_upper(const Eigen::MatrixXd& m)
{
    const auto n = m.rows();
    Eigen::VectorXd v(n * (n + 1) / 2);
    Eigen::Index idx = 0;
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = r; c < n; ++c) {
            v(idx++) = m(r, c);
        }
    }
    return v;
}

Eigen::MatrixXd unvectorize_upper(const Eigen::VectorXd& v, std::size_t n)
{
    const auto nn = static_cast<Eigen::Index>(n);
    if (v.size() != nn * (nn + 1) / 2) {
        invalid("unvectorize_upper: length mismatch");
    }
    Eigen::MatrixXd m(nn, nn);
    Eigen::Index idx = 0;
    for (Eigen::Index r = 0; r < nn; ++r) {
        for (Eigen::Index c = r; c < nn; ++c) {
            m(r, c) = v(idx);
            m(c, r) = v(idx);
            ++idx;
        }
    }
    return m;
}

CovSystem build_cov_system(const std::map<PairKey, Eigen::MatrixXd>& diffs, std::size_t k,
                           const std::set<PairKey>& correlated_pairs)
{
    if (k < 2) {
        invalid("covariance system: need at least two odometers");
    }
    CovSystem sys;
    sys.k = k;
    sys.correlated_pairs = correlated_pairs;
    for (const PairKey& p : correlated_pairs) {
        if (p.first >= p.second || p.second >= k) {
            invalid("covariance system: correlated pair out of range");
        }
    }
    for (const PairKey& p : all_pairs(k)) {
        if (correlated_pairs.count(p) == 0) {
            sys.rows.push_back(p);
        }
    }
    if (diffs.empty()) {
        invalid("covariance system: no difference covariances");
    }
    sys.n = static_cast<std::size_t>(diffs.begin()->second.rows());
    const auto rows = static_cast<Eigen::Index>(sys.rows.size());
    sys.design = Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(k));
    sys.rhs.resize(rows, static_cast<Eigen::Index>(vector_length(sys.n)));
    for (Eigen::Index r = 0; r < rows; ++r) {
        const PairKey& p = sys.rows[static_cast<std::size_t>(r)];
        const auto it = diffs.find(p);
        if (it == diffs.end()) {
            std::ostringstream os;
            os << "covariance system: missing difference covariance for pair (" << p.first << ", " << p.second
               << ")";
            invalid(os.str());
        }
        if (static_cast<std::size_t>(it->second.rows()) != sys.n || it->second.cols() != it->second.rows()) {
            invalid("covariance system: difference covariances must share one square shape");
        }
        sys.design(r, static_cast<Eigen::Index>(p.first)) = 1.0;
        sys.design(r, static_cast<Eigen::Index>(p.second)) = 1.0;
        sys.rhs.row(r) = vectorize_upper(it->second).transpose();
    }
    return sys;
}

CovEstimate solve_cov_system(const std::map<PairKey, Eigen::MatrixXd>& diffs, std::size_t k,
                             const std::set<PairKey>& correlated_pairs, std::size_t sample_count)
{
    const CovSystem sys = build_cov_system(diffs, k, correlated_pairs);
    const Eigen::MatrixXd normal = sys.design.transpose() * sys.design;
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(normal);
    if (sys.design.rows() < static_cast<Eigen::Index>(k) || lu.rank() < static_cast<Eigen::Index>(k)) {
        std::ostringstream os;
        os << "covariance system: rank " << lu.rank() << " < " << k
           << " after striking correlated pairs; too many correlated pairs";
        throw Error(ErrorCode::TooManyCorrelated, os.str());
    }
    // One factorization of the shared design, one back-substitution per element.
    const Eigen::MatrixXd solution = lu.solve(sys.design.transpose() * sys.rhs);

    CovEstimate out;
    out.sample_count = sample_count;
    for (std::size_t i = 0; i < k; ++i) {
        Eigen::MatrixXd cov = unvectorize_upper(solution.row(static_cast<Eigen::Index>(i)).transpose(), sys.n);
        for (Eigen::Index d = 0; d < cov.rows(); ++d) {
            if (cov(d, d) < 0.0) {
                std::ostringstream os;
                os << "odometer " << i << ": negative variance " << cov(d, d) << " on axis " << d
                   << " clamped to zero";
                out.warnings.push_back(os.str());
                cov(d, d) = 0.0;
            }
        }
        out.covariances.push_back(symmetrize(cov));
    }
    for (const PairKey& p : correlated_pairs) {
        const auto it = diffs.find(p);
        if (it == diffs.end()) {
            std::ostringstream os;
            os << "covariance system: correlated pair (" << p.first << ", " << p.second
               << ") has no difference covariance";
            invalid(os.str());
        }
        out.cross[p] = symmetrize(0.5 * (out.covariances[p.first] + out.covariances[p.second] - it->second));
    }
    return out;
}

CovEstimate estimate_batch(const OdometerBatch& batch, const std::set<PairKey>& correlated_pairs)
{
    const DifferenceStats stats = difference_covariances(batch);
    return solve_cov_system(stats.covariance, batch.k(), correlated_pairs, stats.epochs);
}

OnlineCovEstimator::OnlineCovEstimator(std::vector<std::string> ids, std::size_t dim, std::size_t window,
                                       std::set<PairKey> correlated_pairs, std::vector<bool> angular_mask)
    : ids_(std::move(ids)),
      dim_(dim),
      window_(window),
      correlated_(std::move(correlated_pairs)),
      angular_(std::move(angular_mask))
{
    if (ids_.size() < 2) {
        invalid("online covariance: need at least two odometers");
    }
    if (dim_ == 0 || window_ == 0) {
        invalid("online covariance: dimension and window must be positive");
    }
    if (angular_.empty()) {
        angular_.assign(dim_, false);
    }
    if (angular_.size() != dim_) {
        invalid("online covariance: angular mask length must equal the dimension");
    }
    pairs_ = all_pairs(ids_.size());
    const auto n = static_cast<Eigen::Index>(dim_);
    sums_.assign(pairs_.size(), Eigen::MatrixXd::Zero(n, n));
}

void OnlineCovEstimator::push(const std::vector<Eigen::VectorXd>& values)
{
    if (values.size() != ids_.size()) {
        invalid("online covariance: epoch must contain every odometer");
    }
    for (const auto& v : values) {
        if (static_cast<std::size_t>(v.size()) != dim_) {
            invalid("online covariance: estimate dimension mismatch");
        }
    }
    window_epochs_.push_back(values);
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
        const Eigen::VectorXd d = difference(values[pairs_[p].first], values[pairs_[p].second], angular_);
        sums_[p].noalias() += d * d.transpose();
    }
    if (window_epochs_.size() > window_) {
        const auto& old = window_epochs_.front();
        for (std::size_t p = 0; p < pairs_.size(); ++p) {
            const Eigen::VectorXd d = difference(old[pairs_[p].first], old[pairs_[p].second], angular_);
            sums_[p].noalias() -= d * d.transpose();
        }
        window_epochs_.pop_front();
    }
    if (++since_rebuild_ >= window_) {
        rebuild();
    }
}

bool OnlineCovEstimator::push(const std::map<std::string, Transform2>& estimates)
{
    if (dim_ != 3) {
        invalid("online covariance: transforms need a 3-dimensional estimator");
    }
    std::vector<Eigen::VectorXd> values;
    for (const auto& id : ids_) {
        const auto it = estimates.find(id);
        if (it == estimates.end()) {
            return false;
        }
        values.emplace_back(it->second.vector());
    }
    push(values);
    return true;
}

void OnlineCovEstimator::rebuild()
{
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
        sums_[p].setZero();
        for (const auto& epoch : window_epochs_) {
            const Eigen::VectorXd d = difference(epoch[pairs_[p].first], epoch[pairs_[p].second], angular_);
            sums_[p].noalias() += d * d.transpose();
        }
    }
    since_rebuild_ = 0;
}

CovEstimate OnlineCovEstimator::estimate() const
{
    if (window_epochs_.size() < minimum_epochs()) {
        std::ostringstream os;
        os << "online covariance: " << window_epochs_.size() << " epochs in window, need " << minimum_epochs();
        throw Error(ErrorCode::InsufficientEpochs, os.str());
    }
    std::map<PairKey, Eigen::MatrixXd> diffs;
    const double count = static_cast<double>(window_epochs_.size());
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
        diffs[pairs_[p]] = symmetrize(sums_[p] / count);
    }
    return solve_cov_system(diffs, ids_.size(), correlated_, window_epochs_.size());
}

std::vector<Eigen::Vector2d> covariance_ellipse(const Eigen::Matrix2d& cov, double scale, std::size_t points,
                                                const Eigen::Vector2d& center)
{
    if (points < 3) {
        invalid("covariance_ellipse: need at least three points");
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(Eigen::Matrix2d(symmetrize(cov)));
    const Eigen::Vector2d radii = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt() * scale;
    std::vector<Eigen::Vector2d> out;
    out.reserve(points);
    for (std::size_t i = 0; i < points; ++i) {
        const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(points - 1);
        const Eigen::Vector2d unit(radii(0) * std::cos(a), radii(1) * std::sin(a));
        out.push_back(center + eig.eigenvectors() * unit);
    }
    return out;
}

} // namespace drk::covest
