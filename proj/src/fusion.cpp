#include "drkit/fusion.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace drk::fusion {
namespace {

[[noreturn]] void invalid(const std::string& what)
{
    throw Error(ErrorCode::InvalidArgument, what);
}

bool same_time(double a, double b)
{
    return std::abs(a - b) <= 1e-6 * std::max(1.0, std::abs(a));
}

void require_same_interval(const OdometryEstimate& a, const OdometryEstimate& b, const char* what)
{
    if (!same_time(a.t_start, b.t_start) || !same_time(a.t_end, b.t_end)) {
        std::ostringstream os;
        os.precision(12);
        os << what << ": estimates '" << a.odometer_id << "' [" << a.t_start << ", " << a.t_end << "] and '"
           << b.odometer_id << "' [" << b.t_start << ", " << b.t_end << "] cover different intervals";
        invalid(os.str());
    }
}

Eigen::Matrix2d perp()
{
    Eigen::Matrix2d s;
    s << 0.0, -1.0, 1.0, 0.0;
    return s;
}

} // namespace

void OdometryEstimate::validate() const
{
    if (!(t_end > t_start)) {
        invalid("odometry estimate '" + odometer_id + "': t_end must be after t_start");
    }
    check_covariance(cov, "odometry estimate '" + odometer_id + "'");
}

void CorrelationTable::set(const std::string& a, const std::string& b, const Eigen::Matrix3d& cross)
{
    if (a == b) {
        invalid("correlation table: pair must name two distinct odometers");
    }
    if (a < b) {
        table_[{a, b}] = cross;
    } else {
        table_[{b, a}] = cross.transpose();
    }
}

std::optional<Eigen::Matrix3d> CorrelationTable::get(const std::string& a, const std::string& b) const
{
    if (a < b) {
        const auto it = table_.find({a, b});
        if (it != table_.end()) {
            return it->second;
        }
    } else {
        const auto it = table_.find({b, a});
        if (it != table_.end()) {
            return Eigen::Matrix3d(it->second.transpose());
        }
    }
    return std::nullopt;
}

double chi2_cdf(double x, int dof)
{
    if (dof < 1) {
        invalid("chi2_cdf: dof must be >= 1");
    }
    if (!(x > 0.0)) {
        return 0.0;
    }
    return boost::math::gamma_p(0.5 * dof, 0.5 * x);
}

double chi2_quantile(double p, int dof)
{
    if (dof < 1) {
        invalid("chi2_quantile: dof must be >= 1");
    }
    if (!(p > 0.0 && p < 1.0)) {
        invalid("chi2_quantile: probability must be in (0, 1)");
    }
    return 2.0 * boost::math::gamma_p_inv(0.5 * dof, p);
}

NisVerdict nis_test(const OdometryEstimate& candidate, const OdometryEstimate& reference, double alpha,
                    const Eigen::Matrix3d* cross, int dof)
{
    require_same_interval(candidate, reference, "nis_test");
    const Eigen::Vector3d r = difference(candidate.transform, reference.transform);
    Eigen::Matrix3d s = candidate.cov + reference.cov;
    if (cross) {
        s -= *cross + cross->transpose();
    }
    const Eigen::MatrixXd s_inv = regularized_inverse(s);
    NisVerdict v;
    v.odometer_id = candidate.odometer_id;
    v.nis = r.dot(s_inv * r);
    v.dof = dof;
    v.threshold = chi2_quantile(alpha, dof);
    v.accepted = v.nis <= v.threshold;
    return v;
}

namespace {

// Candidate tested against the fusion of `others`; the reference error is
// approximated as the information-weighted combination of the others' errors
// when forming the cross term.
NisVerdict leave_one_out(const OdometryEstimate& candidate, const std::vector<OdometryEstimate>& others,
                         double alpha, const CorrelationTable& correlations, int dof)
{
    const OdometryEstimate reference = fuse_all(others, correlations);
    Eigen::Matrix3d cross = Eigen::Matrix3d::Zero();
    bool correlated = false;
    for (const auto& o : others) {
        if (const auto c = correlations.get(candidate.odometer_id, o.odometer_id)) {
            const Eigen::Matrix3d weight = reference.cov * Eigen::Matrix3d(regularized_inverse(o.cov));
            cross += *c * weight.transpose();
            correlated = true;
        }
    }
    return nis_test(candidate, reference, alpha, correlated ? &cross : nullptr, dof);
}

} // namespace

InlierSelection select_inliers(const std::vector<OdometryEstimate>& current, double alpha,
                               const CorrelationTable& correlations, const std::vector<OdometryEstimate>& propagated,
                               int dof)
{
    std::vector<OdometryEstimate> alive = current;
    std::sort(alive.begin(), alive.end(),
              [](const auto& a, const auto& b) { return a.odometer_id < b.odometer_id; });
    std::vector<OdometryEstimate> refs;
    InlierSelection out;
    if (current.size() < 2) {
        refs = propagated;
        for (const auto& r : refs) {
            out.references.push_back(r.odometer_id);
        }
    }
    if (alive.size() + refs.size() < 2) {
        invalid("select_inliers: need at least two estimates (current or propagated)");
    }

    std::map<std::string, NisVerdict> removed;
    std::vector<NisVerdict> round;
    while (true) {
        round.clear();
        for (std::size_t i = 0; i < alive.size(); ++i) {
            std::vector<OdometryEstimate> others;
            for (std::size_t j = 0; j < alive.size(); ++j) {
                if (j != i) {
                    others.push_back(alive[j]);
                }
            }
            others.insert(others.end(), refs.begin(), refs.end());
            round.push_back(leave_one_out(alive[i], others, alpha, correlations, dof));
        }
        std::size_t worst = alive.size();
        double worst_ratio = 1.0;
        for (std::size_t i = 0; i < round.size(); ++i) {
            const double ratio = round[i].nis / round[i].threshold;
            if (!round[i].accepted && (worst == alive.size() || ratio > worst_ratio)) {
                worst = i;
                worst_ratio = ratio;
            }
        }
        if (worst == alive.size()) {
            break;
        }
        removed[alive[worst].odometer_id] = round[worst];
        out.rejected.push_back(alive[worst].odometer_id);
        alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(worst));
        if (alive.empty() || alive.size() + refs.size() < 2) {
            std::vector<NisVerdict> all;
            for (const auto& [id, v] : removed) {
                all.push_back(v);
            }
            for (std::size_t i = 0; i < round.size(); ++i) {
                if (i != worst) {
                    all.push_back(round[i]);
                }
            }
            std::sort(all.begin(), all.end(),
                      [](const auto& a, const auto& b) { return a.odometer_id < b.odometer_id; });
            throw NoConsensusError("select_inliers: no two estimates agree", std::move(all));
        }
    }
    for (const auto& [id, v] : removed) {
        out.verdicts.push_back(v);
    }
    out.verdicts.insert(out.verdicts.end(), round.begin(), round.end());
    std::sort(out.verdicts.begin(), out.verdicts.end(),
              [](const auto& a, const auto& b) { return a.odometer_id < b.odometer_id; });
    out.inliers = std::move(alive);
    return out;
}

OdometryEstimate propagate_transform(const OdometryEstimate& past, double displacement_lon,
                                     double displacement_lat, const Eigen::Matrix3d& inflation, double dt)
{
    if (!(dt >= 0.0)) {
        invalid("propagate_transform: propagation interval must be non-negative");
    }
    const Eigen::Vector2d t = past.transform.translation();
    const double norm = t.norm();
    if (!(norm > 1e-6)) {
        throw Error(ErrorCode::DirectionUndefined,
                    "propagate_transform: translation of '" + past.odometer_id + "' too short to define a direction");
    }
    const Eigen::Vector2d n = t / norm;
    const Eigen::Vector2d n_perp(-n.y(), n.x());
    const Eigen::Vector2d moved = t + n * displacement_lon + n_perp * displacement_lat;
    OdometryEstimate out = past;
    out.transform = Transform2(moved.x(), moved.y(), past.transform.dpsi());
    out.cov = symmetrize(past.cov + inflation * dt);
    out.t_start = past.t_end;
    out.t_end = past.t_end + dt;
    out.propagated = true;
    return out;
}

double double_integral(const SensorSeries& series, std::size_t channel, double t0, double t1)
{
    if (!(t1 >= t0)) {
        invalid("double_integral: t1 must not precede t0");
    }
    if (!series.covers(t0) || !series.covers(t1)) {
        invalid("double_integral: window not covered by the acceleration series");
    }
    std::vector<double> knots{t0};
    const auto& times = series.times();
    for (auto it = std::upper_bound(times.begin(), times.end(), t0); it != times.end() && *it < t1; ++it) {
        knots.push_back(*it);
    }
    if (t1 > t0) {
        knots.push_back(t1);
    }
    double velocity = 0.0;
    double displacement = 0.0;
    double a_prev = series.interpolate(knots[0], channel);
    for (std::size_t i = 1; i < knots.size(); ++i) {
        const double h = knots[i] - knots[i - 1];
        const double a = series.interpolate(knots[i], channel);
        const double v_next = velocity + 0.5 * h * (a_prev + a);
        displacement += 0.5 * h * (velocity + v_next) - h * h * (a - a_prev) / 12.0;
        velocity = v_next;
        a_prev = a;
    }
    return displacement;
}

OdometryEstimate propagate_transform(const OdometryEstimate& past, const SensorSeries& imu_accel, double t_now,
                                     const Eigen::Matrix3d& inflation)
{
    if (imu_accel.dim() < 2) {
        invalid("propagate_transform: acceleration series needs longitudinal and lateral channels");
    }
    const double d_lon = double_integral(imu_accel, 0, past.t_end, t_now);
    const double d_lat = double_integral(imu_accel, 1, past.t_end, t_now);
    return propagate_transform(past, d_lon, d_lat, inflation, t_now - past.t_end);
}

OdometryEstimate fuse_pair(const OdometryEstimate& a, const OdometryEstimate& b, const Eigen::Matrix3d* cross)
{
    require_same_interval(a, b, "fuse_pair");
    const Eigen::Vector3d r = difference(b.transform, a.transform);
    const Eigen::Matrix3d s_inv = regularized_inverse(a.cov + b.cov);
    const Eigen::Matrix3d gain = a.cov * s_inv;
    OdometryEstimate out;
    out.odometer_id = a.odometer_id + "+" + b.odometer_id;
    out.t_start = a.t_start;
    out.t_end = a.t_end;
    out.propagated = a.propagated && b.propagated;
    out.transform = Transform2::from_vector(a.transform.vector() + gain * r);
    Eigen::Matrix3d p = a.cov - gain * a.cov;
    if (cross) {
        p += *cross;
    }
    out.cov = symmetrize(p);
    return out;
}

OdometryEstimate fuse_all(std::vector<OdometryEstimate> inliers, const CorrelationTable& correlations)
{
    if (inliers.empty()) {
        throw NoConsensusError("fuse_all: no inliers to fuse", {});
    }
    std::stable_sort(inliers.begin(), inliers.end(),
                     [](const auto& a, const auto& b) { return a.odometer_id < b.odometer_id; });
    if (inliers.size() == 1) {
        return inliers.front();
    }
    OdometryEstimate acc = inliers.front();
    for (std::size_t i = 1; i < inliers.size(); ++i) {
        Eigen::Matrix3d cross = Eigen::Matrix3d::Zero();
        bool correlated = false;
        for (std::size_t m = 0; m < i; ++m) {
            if (const auto c = correlations.get(inliers[m].odometer_id, inliers[i].odometer_id)) {
                cross += *c;
                correlated = true;
            }
        }
        acc = fuse_pair(acc, inliers[i], correlated ? &cross : nullptr);
    }
    acc.odometer_id = "fused";
    return acc;
}

Pose2 apply(const Pose2& pose, const Transform2& motion)
{
    return {pose.position + rotation(pose.heading) * motion.translation(), pose.heading + motion.dpsi()};
}

MonitorResult monitor_position(const std::vector<PositionFix>& prior_fixes,
                               const std::vector<OdometryEstimate>& chain, const PositionFix& new_fix,
                               const MonitorOptions& options)
{
    if (prior_fixes.empty()) {
        invalid("monitor_position: need at least one prior fix");
    }
    if (chain.empty()) {
        throw Error(ErrorCode::ChainBroken, "monitor_position: empty odometry chain");
    }
    std::vector<OdometryEstimate> epochs = chain;
    std::sort(epochs.begin(), epochs.end(), [](const auto& a, const auto& b) { return a.t_start < b.t_start; });
    for (std::size_t k = 0; k < epochs.size(); ++k) {
        if (!(epochs[k].t_end > epochs[k].t_start)) {
            invalid("monitor_position: chain epoch with empty interval");
        }
        if (k > 0) {
            const double gap = epochs[k].t_start - epochs[k - 1].t_end;
            if (gap > options.max_gap) {
                std::ostringstream os;
                os << "monitor_position: gap of " << gap << " s in the odometry chain at t = " << epochs[k - 1].t_end;
                throw Error(ErrorCode::ChainBroken, os.str());
            }
            if (gap < -1e-9) {
                invalid("monitor_position: overlapping chain epochs");
            }
        }
    }
    const double chain_start = epochs.front().t_start;
    const double chain_end = epochs.back().t_end;
    const double tol = 1e-9 * std::max(1.0, std::abs(chain_end));
    auto covered = [&](double t) { return t >= chain_start - tol && t <= chain_end + tol; };
    if (!covered(new_fix.t)) {
        throw Error(ErrorCode::ChainBroken, "monitor_position: odometry chain does not reach the new fix");
    }
    for (const auto& f : prior_fixes) {
        if (!covered(f.t) || f.t > new_fix.t + tol) {
            throw Error(ErrorCode::ChainBroken, "monitor_position: odometry chain does not span a prior fix");
        }
    }

    const Eigen::Matrix2d s = perp();
    const std::size_t nk = epochs.size();
    const std::size_t np = prior_fixes.size();
    std::vector<Eigen::Vector2d> predictions(np);
    std::vector<Eigen::Vector2d> heading_jac(np);
    // jac[i][k]: sensitivity of prediction i to the error of epoch k
    std::vector<std::vector<Eigen::Matrix<double, 2, 3>>> jac(
        np, std::vector<Eigen::Matrix<double, 2, 3>>(nk, Eigen::Matrix<double, 2, 3>::Zero()));

    auto overlap = [](const OdometryEstimate& e, double a, double b) {
        const double lo = std::max(a, e.t_start);
        const double hi = std::min(b, e.t_end);
        return hi > lo ? (hi - lo) / (e.t_end - e.t_start) : 0.0;
    };
    auto scaled = [](const OdometryEstimate& e, double f) { return Transform2::from_vector(f * e.transform.vector()); };

    for (std::size_t i = 0; i < np; ++i) {
        const PositionFix& fix = prior_fixes[i];
        Pose2 pose{Eigen::Vector2d::Zero(), options.initial_heading};
        std::vector<double> pre(nk, 0.0);
        for (std::size_t k = 0; k < nk; ++k) {
            pre[k] = overlap(epochs[k], chain_start, fix.t);
            if (pre[k] > 0.0) {
                pose = apply(pose, scaled(epochs[k], pre[k]));
            }
        }
        const Pose2 at_fix = pose;
        struct Piece {
            std::size_t k;
            double f;
            Pose2 before;
            Pose2 after;
        };
        std::vector<Piece> pieces;
        for (std::size_t k = 0; k < nk; ++k) {
            const double f = overlap(epochs[k], fix.t, new_fix.t);
            if (f > 0.0) {
                const Pose2 before = pose;
                pose = apply(pose, scaled(epochs[k], f));
                pieces.push_back({k, f, before, pose});
            }
        }
        const Eigen::Vector2d lever_at_fix = rotation(at_fix.heading) * options.lever_arm;
        const Eigen::Vector2d antenna_new = pose.position + rotation(pose.heading) * options.lever_arm;
        const Eigen::Vector2d displacement = antenna_new - (at_fix.position + lever_at_fix);
        predictions[i] = fix.position + displacement;
        heading_jac[i] = s * displacement;

        for (std::size_t k = 0; k < nk; ++k) {
            if (pre[k] > 0.0) {
                jac[i][k].col(2) += pre[k] * (s * displacement);
            }
        }
        for (const Piece& p : pieces) {
            jac[i][p.k].leftCols<2>() += p.f * rotation(p.before.heading);
            jac[i][p.k].col(2) += p.f * (s * (antenna_new - p.after.position));
        }
    }

    const auto dim = static_cast<Eigen::Index>(2 * np);
    Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd stacked(dim);
    for (std::size_t i = 0; i < np; ++i) {
        const auto ri = static_cast<Eigen::Index>(2 * i);
        stacked.segment<2>(ri) = predictions[i];
        joint.block<2, 2>(ri, ri) += prior_fixes[i].cov;
        for (std::size_t j = 0; j < np; ++j) {
            const auto rj = static_cast<Eigen::Index>(2 * j);
            for (std::size_t k = 0; k < nk; ++k) {
                joint.block<2, 2>(ri, rj) += jac[i][k] * epochs[k].cov * jac[j][k].transpose();
            }
            joint.block<2, 2>(ri, rj) += options.initial_heading_variance * heading_jac[i] * heading_jac[j].transpose();
        }
    }
    Eigen::MatrixXd h(dim, 2);
    for (std::size_t i = 0; i < np; ++i) {
        h.block<2, 2>(static_cast<Eigen::Index>(2 * i), 0).setIdentity();
    }
    const Eigen::MatrixXd joint_inv = regularized_inverse(joint);
    const Eigen::Matrix2d predicted_cov = regularized_inverse(h.transpose() * joint_inv * h);
    const Eigen::Vector2d predicted = predicted_cov * (h.transpose() * joint_inv * stacked);

    MonitorResult out;
    out.predicted = predicted;
    out.predicted_cov = symmetrize(predicted_cov);
    const Eigen::Vector2d r = new_fix.position - predicted;
    const Eigen::Matrix2d innovation_inv = regularized_inverse(out.predicted_cov + new_fix.cov);
    out.verdict.odometer_id = "position";
    out.verdict.dof = 2;
    out.verdict.nis = r.dot(innovation_inv * r);
    out.verdict.threshold = chi2_quantile(options.alpha, 2);
    out.verdict.accepted = out.verdict.nis <= out.verdict.threshold;
    return out;
}

const char* to_string(EpochStatus status)
{
    switch (status) {
    case EpochStatus::Fused: return "fused";
    case EpochStatus::Single: return "single";
    case EpochStatus::NoConsensus: return "no_consensus";
    case EpochStatus::Empty: return "empty";
    }
    return "unknown";
}

FusionPipeline::FusionPipeline(FusionOptions options, CorrelationTable correlations, const SensorSeries* imu_accel)
    : options_(std::move(options)), correlations_(std::move(correlations)), imu_accel_(imu_accel)
{
}

std::optional<OdometryEstimate> FusionPipeline::carry_forward(const OdometryEstimate& past, double t_start,
                                                              double t_end) const
{
    if (!same_time(past.t_end, t_start)) {
        return std::nullopt;
    }
    try {
        OdometryEstimate out;
        if (imu_accel_ && imu_accel_->covers(past.t_end) && imu_accel_->covers(t_end)) {
            out = propagate_transform(past, *imu_accel_, t_end, options_.inflation);
        } else {
            out = propagate_transform(past, 0.0, 0.0, options_.inflation, t_end - past.t_end);
        }
        out.t_start = t_start;
        out.t_end = t_end;
        return out;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::DirectionUndefined) {
            return std::nullopt;
        }
        throw;
    }
}

FusionRecord FusionPipeline::process(int epoch, double t_start, double t_end,
                                     const std::vector<OdometryEstimate>& current)
{
    FusionRecord rec;
    rec.epoch = epoch;
    rec.t_start = t_start;
    rec.t_end = t_end;
    for (const auto& e : current) {
        if (!same_time(e.t_start, t_start) || !same_time(e.t_end, t_end)) {
            invalid("fusion pipeline: estimate '" + e.odometer_id + "' does not cover the epoch interval");
        }
    }

    std::vector<OdometryEstimate> propagated;
    if (current.size() < 2) {
        std::set<std::string> present;
        for (const auto& e : current) {
            present.insert(e.odometer_id);
        }
        for (const auto& [id, past] : last_) {
            if (present.count(id) == 0) {
                if (auto p = carry_forward(past, t_start, t_end)) {
                    propagated.push_back(std::move(*p));
                }
            }
        }
    }

    auto fallback = [&]() -> OdometryEstimate {
        if (last_fused_) {
            if (auto p = carry_forward(*last_fused_, t_start, t_end)) {
                return *p;
            }
        }
        OdometryEstimate none;
        none.odometer_id = "none";
        none.t_start = t_start;
        none.t_end = t_end;
        none.cov = options_.inflation * (t_end - t_start);
        none.propagated = true;
        return none;
    };

    OdometryEstimate fused;
    if (current.empty()) {
        rec.status = EpochStatus::Empty;
        fused = fallback();
    } else if (current.size() == 1 && propagated.empty()) {
        rec.status = EpochStatus::Single;
        fused = current.front();
        rec.inlier_ids.push_back(fused.odometer_id);
    } else {
        try {
            InlierSelection sel = select_inliers(current, options_.alpha, correlations_, propagated, options_.dof);
            fused = fuse_all(sel.inliers, correlations_);
            rec.status = EpochStatus::Fused;
            rec.verdicts = std::move(sel.verdicts);
            rec.rejected_ids = std::move(sel.rejected);
            rec.reference_ids = std::move(sel.references);
            for (const auto& e : sel.inliers) {
                rec.inlier_ids.push_back(e.odometer_id);
            }
        } catch (const NoConsensusError& e) {
            rec.status = EpochStatus::NoConsensus;
            rec.verdicts = e.verdicts();
            for (const auto& v : rec.verdicts) {
                rec.rejected_ids.push_back(v.odometer_id);
            }
            fused = fallback();
        }
    }
    rec.fused = fused.transform;
    rec.cov = fused.cov;

    for (const auto& e : current) {
        last_[e.odometer_id] = e;
    }
    fused.t_start = t_start;
    fused.t_end = t_end;
    last_fused_ = fused;
    return rec;
}

} // namespace drk::fusion
