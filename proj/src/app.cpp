#include "drkit/app.hpp"

#include "drkit/calib.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

namespace drk::app {
namespace {

namespace fs = std::filesystem;

[[noreturn]] void schema(const std::string& what)
{
    throw Error(ErrorCode::Schema, what);
}

// Config access: missing keys fall back to defaults; wrong types are schema errors.
double cfg_number(const json& cfg, const char* key, double fallback)
{
    const auto it = cfg.find(key);
    if (it == cfg.end() || it->is_null()) {
        return fallback;
    }
    if (!it->is_number()) {
        schema(std::string("config.") + key + ": expected a number");
    }
    return it->get<double>();
}

std::optional<double> cfg_optional(const json& cfg, const char* key)
{
    const auto it = cfg.find(key);
    if (it == cfg.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_number()) {
        schema(std::string("config.") + key + ": expected a number");
    }
    return it->get<double>();
}

std::string cfg_string(const json& cfg, const char* key, std::optional<std::string> fallback = std::nullopt)
{
    const auto it = cfg.find(key);
    if (it == cfg.end() || it->is_null()) {
        if (fallback) {
            return *fallback;
        }
        schema(std::string("config.") + key + ": missing required setting");
    }
    if (!it->is_string()) {
        schema(std::string("config.") + key + ": expected a string");
    }
    return it->get<std::string>();
}

json read_upstream_json(const fs::path& path)
{
    io::verify_against_manifest(path);
    return io::read_json(path);
}

void write_outputs(const fs::path& out, const std::string& command, const json& config,
                   const std::vector<std::pair<std::string, std::string>>& files)
{
    fs::create_directories(out);
    std::vector<std::string> names;
    for (const auto& [name, content] : files) {
        io::write_file_atomic(out / name, content);
        names.push_back(name);
    }
    io::write_manifest(out, command, config, names);
}

std::string dump(const json& j)
{
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- simulate

json cmd_simulate(json cfg)
{
    const fs::path scenario_path = cfg_string(cfg, "scenario");
    const fs::path out = cfg_string(cfg, "out");
    sim::Scenario scenario = io::load_scenario(scenario_path);
    if (const auto it = cfg.find("seed"); it != cfg.end() && !it->is_null()) {
        if (!it->is_number_integer() || it->get<long long>() < 0) {
            schema("config.seed: expected a non-negative integer");
        }
        scenario.seed = it->get<std::uint64_t>();
    }
    cfg["seed"] = scenario.seed;

    const sim::TruthTrajectory truth = sim::generate_truth(scenario);
    const auto sensors = sim::synthesize_sensors(truth, scenario);
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto& [id, series] : sensors) {
        files.emplace_back(id + ".csv", io::series_to_csv(series));
    }
    files.emplace_back("truth.csv", io::truth_to_csv(truth));
    files.emplace_back("scenario.json", dump(io::scenario_to_json(scenario)));
    std::size_t epoch_count = 0;
    if (scenario.odometry) {
        const auto epochs = sim::synthesize_odometry(truth, scenario);
        epoch_count = epochs.size();
        files.emplace_back("odometry.csv", io::odometry_to_csv(epochs));
        files.emplace_back("odometry_truth.csv", io::odometry_truth_to_csv(epochs));
    }
    write_outputs(out, "simulate", cfg, files);

    json summary;
    summary["command"] = "simulate";
    summary["out"] = out.string();
    summary["sensors"] = json::array();
    for (const auto& [id, series] : sensors) {
        summary["sensors"].push_back({{"id", id}, {"channel", series.channel()}, {"samples", series.size()}});
    }
    summary["truth_samples"] = truth.samples().size();
    summary["odometry_epochs"] = epoch_count;
    return summary;
}

// --------------------------------------------------------------- calibrate

const SensorSeries* find_channel(const std::map<std::string, SensorSeries>& logs, const std::string& channel)
{
    for (const auto& [id, s] : logs) {
        if (s.channel() == channel) {
            return &s;
        }
    }
    return nullptr;
}

const SensorSeries& require_channel(const std::map<std::string, SensorSeries>& logs, const std::string& channel)
{
    const SensorSeries* s = find_channel(logs, channel);
    if (!s) {
        throw Error(ErrorCode::MissingDependency, "missing channel '" + channel + "'");
    }
    return *s;
}

// GNSS heading channel, or the Doppler track angle when only velocity exists.
SensorSeries heading_source(const std::map<std::string, SensorSeries>& logs)
{
    if (const SensorSeries* h = find_channel(logs, "heading")) {
        return *h;
    }
    const SensorSeries* v = find_channel(logs, "velocity");
    if (!v) {
        throw Error(ErrorCode::MissingDependency, "missing channel 'heading' (no 'velocity' for a track angle either)");
    }
    SensorSeries out(v->sensor_id(), "heading", 1);
    for (std::size_t i = 0; i < v->size(); ++i) {
        const double vx = v->value(i, 0);
        const double vy = v->value(i, 1);
        if (std::hypot(vx, vy) > 0.5) {
            out.push_back(v->time(i), std::atan2(vy, vx));
        }
    }
    return out;
}

json fit_to_json(const calib::LinearFit& f)
{
    return {{"scale", f.scale},
            {"offset", f.offset},
            {"covariance", io::matrix_to_json(f.covariance)},
            {"n_samples", f.n_samples},
            {"residual_sigma", f.residual_sigma}};
}

const sim::SensorErrorSpec* scenario_sensor(const sim::Scenario& s, sim::SensorKind kind)
{
    for (const auto& [id, spec] : s.sensors) {
        if (spec.kind == kind) {
            return &spec;
        }
    }
    return nullptr;
}

json cmd_calibrate(json cfg)
{
    const fs::path logs_dir = cfg_string(cfg, "logs");
    const fs::path out = cfg_string(cfg, "out");
    const std::string step = cfg_string(cfg, "step", std::string("all"));
    static const std::vector<std::string> order{"delay", "imu", "lever", "steering", "wheel"};
    if (step != "all" && std::find(order.begin(), order.end(), step) == order.end()) {
        schema("config.step: expected one of all, delay, lever, imu, steering, wheel");
    }
    const double search_window = cfg_number(cfg, "search_window", 0.5);
    const double filter_window_d = cfg_number(cfg, "filter_window", 1);
    if (filter_window_d < 1 || filter_window_d != std::floor(filter_window_d) ||
        static_cast<long>(filter_window_d) % 2 == 0) {
        schema("config.filter_window: expected an odd positive integer");
    }
    const auto filter_window = static_cast<std::size_t>(filter_window_d);
    const double forgetting = cfg_number(cfg, "forgetting", 1.0);
    const double segment_length = cfg_number(cfg, "segment_length", 10.0);
    const double min_speed = cfg_number(cfg, "min_speed", 1.0);
    const double max_heading_change_deg = cfg_number(cfg, "max_heading_change_deg", 10.0);
    sim::VehicleParams vehicle;
    vehicle.l_f = cfg_number(cfg, "l_f", vehicle.l_f);
    vehicle.l_r = cfg_number(cfg, "l_r", vehicle.l_r);
    vehicle.wheel_circumference = cfg_number(cfg, "nominal_circumference", vehicle.wheel_circumference);
    vehicle.ticks_per_rev = static_cast<int>(cfg_number(cfg, "ticks_per_rev", vehicle.ticks_per_rev));
    const std::optional<double> gnss_sigma = cfg_optional(cfg, "gnss_sigma");
    const std::optional<double> gnss_sigma_z = cfg_optional(cfg, "gnss_sigma_z");
    const std::optional<double> gnss_delay = cfg_optional(cfg, "gnss_delay");
    try {
        vehicle.validate();
    } catch (const Error& e) {
        schema(std::string("config: ") + e.what());
    }
    cfg["step"] = step;
    cfg["search_window"] = search_window;
    cfg["filter_window"] = filter_window;
    cfg["forgetting"] = forgetting;
    cfg["segment_length"] = segment_length;
    cfg["min_speed"] = min_speed;
    cfg["max_heading_change_deg"] = max_heading_change_deg;
    cfg["l_f"] = vehicle.l_f;
    cfg["l_r"] = vehicle.l_r;
    cfg["nominal_circumference"] = vehicle.wheel_circumference;
    cfg["ticks_per_rev"] = vehicle.ticks_per_rev;

    std::optional<sim::Scenario> truth;
    if (cfg.contains("truth") && !cfg["truth"].is_null()) {
        truth = io::load_scenario(cfg_string(cfg, "truth"));
    }
    const auto logs = io::read_log_dir(logs_dir);

    std::optional<calib::DelayEstimate> delay;
    if (gnss_delay) {
        delay = calib::DelayEstimate{*gnss_delay, 1.0, search_window, 0};
    }
    std::optional<calib::LinearFit> imu_correction;
    auto gnss = [&](const SensorSeries& s) { return delay ? s.shifted(-delay->delay) : s; };
    auto yaw_rate = [&]() {
        const SensorSeries& raw = require_channel(logs, "yaw_rate");
        return imu_correction ? calib::apply_correction(raw, *imu_correction) : raw;
    };

    json report;
    report["schema_version"] = io::kSchemaVersion;
    report["command"] = "calibrate";
    report["step"] = step;
    json steps = json::object();

    auto run_step = [&](const std::string& name, const std::function<json()>& body) {
        if (step != "all" && step != name) {
            return;
        }
        try {
            json r = body();
            r["status"] = "ok";
            steps[name] = std::move(r);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::MissingDependency && step == "all") {
                const std::string msg = e.what();
                const auto q = msg.find('\'');
                const std::string channel =
                    q == std::string::npos ? msg : msg.substr(q + 1, msg.find('\'', q + 1) - q - 1);
                steps[name] = {{"status", "skipped: missing channel"}, {"channel", channel}, {"message", msg}};
            } else if (e.code() == ErrorCode::Unobservable || e.code() == ErrorCode::SegmentTooShort) {
                steps[name] = {{"status", "unobservable"}, {"message", e.what()}};
            } else {
                throw;
            }
        }
    };

    run_step("delay", [&] {
        const SensorSeries& ref = require_channel(logs, "yaw_rate");
        const SensorSeries heading = heading_source(logs);
        const calib::DelayEstimate d = calib::estimate_time_delay(ref, heading, search_window, filter_window);
        delay = d;
        return json{{"delay_s", d.delay},
                    {"correlation_peak", d.correlation_peak},
                    {"search_window_s", d.search_window},
                    {"lag_samples", d.lag_samples},
                    {"reference", ref.sensor_id()},
                    {"delayed", heading.sensor_id()}};
    });

    run_step("imu", [&] {
        const SensorSeries& raw = require_channel(logs, "yaw_rate");
        const SensorSeries heading = heading_source(logs);
        const calib::ImuYawCalibration c = calib::calibrate_imu_yaw(heading, raw, delay, forgetting);
        imu_correction = c.correction;
        json trace = json::array();
        for (const auto& t : c.sensor_trace) {
            trace.push_back({t(0), t(1)});
        }
        json r = fit_to_json(c.sensor);
        r["sensor"] = raw.sensor_id();
        r["correction"] = fit_to_json(c.correction);
        r["intervals"] = c.intervals;
        r["delay_applied_s"] = delay ? delay->delay : 0.0;
        r["trace"] = std::move(trace);
        return r;
    });

    run_step("lever", [&] {
        const SensorSeries velocity = gnss(require_channel(logs, "velocity"));
        const SensorSeries& accel = require_channel(logs, "accel");
        const SensorSeries heading = gnss(heading_source(logs));
        const calib::LeverArmEstimate l = calib::estimate_lever_arm(velocity, accel, yaw_rate(), heading);
        return json{{"sensor", velocity.sensor_id()},
                    {"lever_arm_m", {l.r_rel.x(), l.r_rel.y(), l.r_rel.z()}},
                    {"z_observable", l.z_observable},
                    {"residual_rms", l.residual_rms},
                    {"observability", l.observability},
                    {"n_samples", l.n_samples},
                    {"yaw_rate_calibrated", imu_correction.has_value()}};
    });

    run_step("steering", [&] {
        const SensorSeries& steer = require_channel(logs, "steering");
        const SensorSeries& speed = require_channel(logs, "speed");
        const calib::LinearFit f = calib::calibrate_steering(steer, speed, yaw_rate(), vehicle, min_speed);
        json r = fit_to_json(f);
        r["sensor"] = steer.sensor_id();
        r["steering_ratio"] = 1.0 / f.scale;
        r["yaw_rate_calibrated"] = imu_correction.has_value();
        return r;
    });

    run_step("wheel", [&] {
        const SensorSeries& ticks = require_channel(logs, "ticks");
        const SensorSeries position = gnss(require_channel(logs, "position"));
        if (!gnss_sigma) {
            throw Error(ErrorCode::MissingDependency, "missing parameter 'gnss_sigma'");
        }
        const IsotropicNoiseModel noise{*gnss_sigma, *gnss_sigma, gnss_sigma_z.value_or(*gnss_sigma)};
        calib::WheelCalibrationOptions opts;
        opts.max_heading_change = max_heading_change_deg * std::numbers::pi / 180.0;
        const SensorSeries* yaw = find_channel(logs, "yaw_rate");
        const calib::WheelCalibration w =
            calib::estimate_wheel_circumference(ticks, position, noise, segment_length, vehicle, yaw, opts);
        return json{{"sensor", ticks.sensor_id()},
                    {"circumference_factor", w.corrected.scale},
                    {"circumference_m", w.corrected.scale * vehicle.wheel_circumference},
                    {"naive_factor", w.naive.scale},
                    {"confidence_halfwidth", w.confidence_halfwidth},
                    {"factor_variance", w.corrected.covariance(0, 0)},
                    {"segments_used", w.segments_used},
                    {"segments_discarded", w.segments_discarded},
                    {"segments_merged", w.segments_merged},
                    {"phases", w.phases}};
    });

    json table = json::array();
    if (truth) {
        auto add = [&](const std::string& stepname, const std::string& quantity, double estimate, double expected,
                       double tolerance) {
            const double error = estimate - expected;
            table.push_back({{"step", stepname},
                             {"quantity", quantity},
                             {"estimate", estimate},
                             {"truth", expected},
                             {"error", error},
                             {"noiseless_tolerance", tolerance},
                             {"within_noiseless_tolerance", std::abs(error) <= tolerance}});
        };
        auto ok = [&](const char* name) { return steps.contains(name) && steps[name]["status"] == "ok"; };
        if (ok("delay")) {
            const auto* s = scenario_sensor(*truth, sim::SensorKind::GnssHeading);
            if (!s) {
                s = scenario_sensor(*truth, sim::SensorKind::GnssVelocity);
            }
            if (s) {
                add("delay", "delay_s", steps["delay"]["delay_s"].get<double>(), s->time_delay, 1e-6);
            }
        }
        if (ok("imu")) {
            if (const auto* s = scenario_sensor(*truth, sim::SensorKind::ImuYawRate)) {
                add("imu", "scale", steps["imu"]["scale"].get<double>(), s->scale, 1e-6);
                add("imu", "offset", steps["imu"]["offset"].get<double>(), s->offset, 1e-6);
            }
        }
        if (ok("lever")) {
            if (const auto* s = scenario_sensor(*truth, sim::SensorKind::GnssVelocity)) {
                add("lever", "lever_arm_x_m", steps["lever"]["lever_arm_m"][0].get<double>(), s->lever_arm.x(), 1e-6);
                add("lever", "lever_arm_y_m", steps["lever"]["lever_arm_m"][1].get<double>(), s->lever_arm.y(), 1e-6);
            }
        }
        if (ok("steering")) {
            if (const auto* s = scenario_sensor(*truth, sim::SensorKind::Steering)) {
                add("steering", "scale", steps["steering"]["scale"].get<double>(), 1.0 / s->scale, 1e-6);
                add("steering", "offset", steps["steering"]["offset"].get<double>(), -s->offset / s->scale, 1e-6);
            }
        }
        if (ok("wheel")) {
            const double quantum = vehicle.wheel_circumference / vehicle.ticks_per_rev / segment_length;
            add("wheel", "circumference_factor", steps["wheel"]["circumference_factor"].get<double>(),
                truth->vehicle.wheel_circumference / vehicle.wheel_circumference, quantum);
        }
    }
    report["steps"] = steps;
    if (truth) {
        report["recovery"] = table;
    }

    write_outputs(out, "calibrate", cfg, {{"calibration-report.json", dump(report)}});

    json summary;
    summary["command"] = "calibrate";
    summary["out"] = out.string();
    for (const auto& [name, r] : steps.items()) {
        summary["steps"][name] = r["status"];
    }
    if (report.contains("recovery")) {
        summary["recovery"] = report["recovery"];
    }
    return summary;
}

// ------------------------------------------------------------------ covest

std::string pair_name(const std::string& a, const std::string& b)
{
    return a + "|" + b;
}

std::vector<std::string> odometer_ids(const std::vector<sim::OdometryEpoch>& epochs)
{
    std::set<std::string> ids;
    for (const auto& e : epochs) {
        for (const auto& [id, t] : e.estimates) {
            ids.insert(id);
        }
    }
    return {ids.begin(), ids.end()};
}

std::set<covest::PairKey> parse_correlated(const json& cfg, const std::vector<std::string>& ids)
{
    std::set<covest::PairKey> out;
    const auto it = cfg.find("correlated");
    if (it == cfg.end() || it->is_null()) {
        return out;
    }
    if (!it->is_array()) {
        schema("config.correlated: expected an array of [a, b] id pairs");
    }
    for (std::size_t i = 0; i < it->size(); ++i) {
        const json& p = (*it)[i];
        if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string()) {
            schema("config.correlated[" + std::to_string(i) + "]: expected [a, b]");
        }
        auto index = [&](const std::string& id) {
            const auto f = std::find(ids.begin(), ids.end(), id);
            if (f == ids.end()) {
                schema("config.correlated[" + std::to_string(i) + "]: unknown odometer '" + id + "'");
            }
            return static_cast<std::size_t>(f - ids.begin());
        };
        out.insert(covest::make_pair_key(index(p[0].get<std::string>()), index(p[1].get<std::string>())));
    }
    return out;
}

json estimate_to_json(const covest::CovEstimate& est, const covest::DifferenceStats& stats,
                      const std::vector<std::string>& ids, std::size_t epochs)
{
    json j;
    j["epochs"] = epochs;
    j["covariances"] = json::object();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        j["covariances"][ids[i]] = io::matrix_to_json(est.covariances[i]);
    }
    j["cross"] = json::array();
    for (const auto& [p, m] : est.cross) {
        j["cross"].push_back({{"a", ids[p.first]}, {"b", ids[p.second]}, {"matrix", io::matrix_to_json(m)}});
    }
    j["difference_mean"] = json::object();
    for (const auto& [p, v] : stats.mean) {
        j["difference_mean"][pair_name(ids[p.first], ids[p.second])] = {v(0), v(1), v(2)};
    }
    j["warnings"] = est.warnings;
    return j;
}

std::string ellipse_csv(const std::vector<std::string>& ids, const covest::CovEstimate& est,
                        const std::optional<OdometerModel>& truth)
{
    std::string out = "odometer_id,source,point,x,y\n";
    auto emit = [&](const std::string& id, const char* source, const Eigen::Matrix3d& cov) {
        const auto pts = covest::covariance_ellipse(cov.topLeftCorner<2, 2>());
        for (std::size_t k = 0; k < pts.size(); ++k) {
            out += id + "," + source + "," + std::to_string(k) + "," + io::format_double(pts[k].x()) + "," +
                   io::format_double(pts[k].y()) + "\n";
        }
    };
    for (std::size_t i = 0; i < ids.size(); ++i) {
        emit(ids[i], "estimate", est.covariances[i]);
        if (truth && truth->covariances.count(ids[i])) {
            emit(ids[i], "truth", truth->covariances.at(ids[i]));
        }
    }
    return out;
}

json cmd_covest(json cfg)
{
    const fs::path odometry = cfg_string(cfg, "odometry");
    const fs::path out = cfg_string(cfg, "out");
    std::vector<std::size_t> sizes{10, 100, 1000, 10000};
    if (const auto it = cfg.find("epochs"); it != cfg.end() && !it->is_null()) {
        sizes.clear();
        if (!it->is_array() || it->empty()) {
            schema("config.epochs: expected a non-empty array of epoch counts");
        }
        for (const auto& n : *it) {
            if (!n.is_number_integer() || n.get<long long>() <= 0) {
                schema("config.epochs: epoch counts must be positive integers");
            }
            sizes.push_back(n.get<std::size_t>());
        }
    }
    cfg["epochs"] = sizes;
    std::optional<OdometerModel> truth;
    if (cfg.contains("truth") && !cfg["truth"].is_null()) {
        truth = model_from_scenario(io::load_scenario(cfg_string(cfg, "truth")));
    }

    const auto epochs = io::read_odometry_csv(odometry);
    const std::vector<std::string> ids = odometer_ids(epochs);
    if (ids.size() < 2) {
        throw Error(ErrorCode::MissingDependency, odometry.string() + ": need at least two odometers");
    }
    const auto correlated = parse_correlated(cfg, ids);
    const auto sweep = covest_sweep(epochs, ids, correlated, sizes);
    if (sweep.empty()) {
        throw Error(ErrorCode::InsufficientEpochs, "covest: fewer complete epochs than the smallest requested count");
    }

    json report;
    report["schema_version"] = io::kSchemaVersion;
    report["command"] = "covest";
    report["odometer_ids"] = ids;
    report["correlated_pairs"] = json::array();
    for (const auto& p : correlated) {
        report["correlated_pairs"].push_back({ids[p.first], ids[p.second]});
    }
    report["sweep"] = json::array();
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto& point : sweep) {
        json j = estimate_to_json(point.estimate, point.stats, ids, point.epochs);
        if (truth) {
            json errors = json::object();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const auto it = truth->covariances.find(ids[i]);
                if (it != truth->covariances.end()) {
                    errors[ids[i]] = (point.estimate.covariances[i] - Eigen::MatrixXd(it->second)).norm() /
                                     it->second.norm();
                }
            }
            for (const auto& [p, m] : point.estimate.cross) {
                if (const auto c = truth->correlations.get(ids[p.first], ids[p.second])) {
                    errors[pair_name(ids[p.first], ids[p.second])] = (m - Eigen::MatrixXd(*c)).norm() / c->norm();
                }
            }
            j["relative_frobenius_error"] = std::move(errors);
        }
        report["sweep"].push_back(std::move(j));
        files.emplace_back("ellipse_" + std::to_string(point.epochs) + ".csv", ellipse_csv(ids, point.estimate, truth));
    }
    json final_estimate = report["sweep"].back();
    report["final"] = std::move(final_estimate);
    std::vector<std::size_t> skipped;
    for (std::size_t n : sizes) {
        if (std::none_of(sweep.begin(), sweep.end(), [&](const SweepPoint& p) { return p.epochs == n; })) {
            skipped.push_back(n);
        }
    }
    report["skipped_epoch_counts"] = skipped;
    files.emplace_back("covariance-report.json", dump(report));
    write_outputs(out, "covest", cfg, files);

    json summary;
    summary["command"] = "covest";
    summary["out"] = out.string();
    summary["epochs"] = json::array();
    for (const auto& p : sweep) {
        summary["epochs"].push_back(p.epochs);
    }
    summary["skipped_epoch_counts"] = skipped;
    return summary;
}

// -------------------------------------------------------------------- fuse

std::string paths_csv(const FuseOutcome& outcome, const std::vector<sim::OdometryEpoch>& epochs)
{
    std::string out = "epoch,t,source,x,y,heading\n";
    for (const auto& [source, poses] : outcome.paths) {
        for (std::size_t k = 0; k < poses.size(); ++k) {
            out += std::to_string(epochs[k].index) + "," + io::format_time(epochs[k].t_end) + "," + source + "," +
                   io::format_double(poses[k].position.x()) + "," + io::format_double(poses[k].position.y()) + "," +
                   io::format_double(poses[k].heading) + "\n";
        }
    }
    return out;
}

json cmd_fuse(json cfg)
{
    const fs::path odometry = cfg_string(cfg, "odometry");
    const fs::path out = cfg_string(cfg, "out");
    fusion::FusionOptions options;
    options.alpha = cfg_number(cfg, "alpha", options.alpha);
    const double inflation = cfg_number(cfg, "inflation", 1e-4);
    options.inflation = Eigen::Matrix3d::Identity() * inflation;
    if (!(options.alpha > 0.0 && options.alpha < 1.0)) {
        schema("config.alpha: must be in (0, 1)");
    }
    cfg["alpha"] = options.alpha;
    cfg["inflation"] = inflation;

    OdometerModel model;
    if (cfg.contains("covariance") && !cfg["covariance"].is_null()) {
        model = model_from_report(read_upstream_json(cfg_string(cfg, "covariance")));
    } else if (cfg.contains("truth") && !cfg["truth"].is_null()) {
        model = model_from_scenario(io::load_scenario(cfg_string(cfg, "truth")));
    } else {
        schema("config: fuse needs 'covariance' (covariance report) or 'truth' (scenario) for odometer covariances");
    }
    fs::path truth_path;
    if (cfg.contains("odometry_truth") && !cfg["odometry_truth"].is_null()) {
        truth_path = cfg_string(cfg, "odometry_truth");
    }
    const auto epochs = io::read_odometry_csv(odometry, truth_path);
    std::optional<SensorSeries> accel;
    if (cfg.contains("logs") && !cfg["logs"].is_null()) {
        const auto logs = io::read_log_dir(cfg_string(cfg, "logs"));
        if (const SensorSeries* a = find_channel(logs, "accel")) {
            accel = *a;
        }
    }
    const FuseOutcome outcome = fuse_epochs(epochs, model, options, accel ? &*accel : nullptr, !truth_path.empty());

    std::string lines;
    for (const auto& r : outcome.records) {
        lines += record_to_json(r).dump() + "\n";
    }
    json summary_doc = outcome.summary;
    summary_doc["schema_version"] = io::kSchemaVersion;
    summary_doc["command"] = "fuse";
    write_outputs(out, "fuse", cfg,
                  {{"fusion.jsonl", lines}, {"paths.csv", paths_csv(outcome, epochs)},
                   {"fusion-summary.json", dump(summary_doc)}});
    json summary = outcome.summary;
    summary["command"] = "fuse";
    summary["out"] = out.string();
    return summary;
}

// ----------------------------------------------------------------- monitor

json cmd_monitor(json cfg)
{
    const fs::path fusion_path = cfg_string(cfg, "fusion");
    const fs::path logs_dir = cfg_string(cfg, "logs");
    const fs::path out = cfg_string(cfg, "out");
    fusion::MonitorOptions options;
    options.alpha = cfg_number(cfg, "alpha", options.alpha);
    options.max_gap = cfg_number(cfg, "max_gap", options.max_gap);
    options.initial_heading = cfg_number(cfg, "initial_heading", 0.0);
    const double window_d = cfg_number(cfg, "window", 5);
    const double gnss_delay = cfg_number(cfg, "gnss_delay", 0.0);
    const std::optional<double> sigma = cfg_optional(cfg, "gnss_sigma");
    if (!sigma || !(*sigma > 0.0)) {
        schema("config.gnss_sigma: required, must be > 0");
    }
    if (window_d < 1 || window_d != std::floor(window_d)) {
        schema("config.window: expected a positive integer");
    }
    if (const auto it = cfg.find("lever_arm"); it != cfg.end() && !it->is_null()) {
        if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number()) {
            schema("config.lever_arm: expected [x, y]");
        }
        options.lever_arm = {(*it)[0].get<double>(), (*it)[1].get<double>()};
    }
    const auto window = static_cast<std::size_t>(window_d);
    cfg["alpha"] = options.alpha;
    cfg["max_gap"] = options.max_gap;
    cfg["initial_heading"] = options.initial_heading;
    cfg["window"] = window;
    cfg["gnss_delay"] = gnss_delay;
    cfg["lever_arm"] = {options.lever_arm.x(), options.lever_arm.y()};

    io::verify_against_manifest(fusion_path);
    std::vector<fusion::OdometryEstimate> chain;
    {
        std::istringstream in(io::read_file(fusion_path));
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            if (line.empty()) {
                continue;
            }
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error& e) {
                schema(fusion_path.string() + ":" + std::to_string(n) + ": invalid JSON");
            }
            chain.push_back(record_from_json(j, fusion_path.string() + ":" + std::to_string(n)));
        }
    }
    if (chain.empty()) {
        throw Error(ErrorCode::MissingDependency, fusion_path.string() + ": no fusion records");
    }
    const auto logs = io::read_log_dir(logs_dir);
    const SensorSeries fixes = require_channel(logs, "position").shifted(-gnss_delay);
    const Eigen::Matrix2d fix_cov = Eigen::Matrix2d::Identity() * (*sigma) * (*sigma);

    std::vector<fusion::PositionFix> fix_list;
    for (std::size_t i = 0; i < fixes.size(); ++i) {
        fix_list.push_back({fixes.time(i), {fixes.value(i, 0), fixes.value(i, 1)}, fix_cov});
    }
    const auto verdicts = monitor_fixes(chain, fix_list, options, window);
    std::string csv = "t,x,y,predicted_x,predicted_y,nis,threshold,accepted,priors\n";
    std::size_t tested = 0, accepted = 0;
    for (const auto& v : verdicts) {
        ++tested;
        accepted += v.result.verdict.accepted ? 1 : 0;
        csv += io::format_time(v.fix.t) + "," + io::format_double(v.fix.position.x()) + "," +
               io::format_double(v.fix.position.y()) + "," + io::format_double(v.result.predicted.x()) + "," +
               io::format_double(v.result.predicted.y()) + "," + io::format_double(v.result.verdict.nis) + "," +
               io::format_double(v.result.verdict.threshold) + "," + (v.result.verdict.accepted ? "1" : "0") + "," +
               std::to_string(v.priors) + "\n";
    }
    json summary;
    summary["schema_version"] = io::kSchemaVersion;
    summary["command"] = "monitor";
    summary["fixes_tested"] = tested;
    summary["fixes_accepted"] = accepted;
    summary["acceptance_rate"] = tested ? static_cast<double>(accepted) / static_cast<double>(tested) : 0.0;
    write_outputs(out, "monitor", cfg, {{"monitor.csv", csv}, {"monitor-summary.json", dump(summary)}});
    summary["out"] = out.string();
    return summary;
}

// ---------------------------------------------------------------- plotdata

json cmd_plotdata(json cfg)
{
    const fs::path input = cfg_string(cfg, "input");
    const fs::path out = cfg_string(cfg, "out");
    io::verify_against_manifest(input);
    const std::string content = io::read_file(input);
    std::vector<json> records;
    if (input.extension() == ".jsonl") {
        std::istringstream in(content);
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            if (line.empty()) {
                continue;
            }
            try {
                records.push_back(json::parse(line));
            } catch (const json::parse_error&) {
                schema(input.string() + ":" + std::to_string(n) + ": invalid JSON");
            }
        }
    } else {
        try {
            records.push_back(json::parse(content));
        } catch (const json::parse_error&) {
            schema(input.string() + ": invalid JSON");
        }
    }
    const std::string name = input.stem().string() + ".csv";
    const std::string csv = flatten_to_csv(records);
    write_outputs(out, "plotdata", cfg, {{name, csv}});
    json summary;
    summary["command"] = "plotdata";
    summary["out"] = (out / name).string();
    summary["records"] = records.size();
    return summary;
}

// ------------------------------------------------------------ flatten/csv

std::string csv_escape(const std::string& s)
{
    if (s.find_first_of(",\"\n\r") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + "\"";
}

// Object keys escape '~', '/' and a leading '#'; array indices are written '#<n>'.
std::string pointer_token(const std::string& key)
{
    std::string out;
    for (std::size_t i = 0; i < key.size(); ++i) {
        const char c = key[i];
        if (c == '~') {
            out += "~0";
        } else if (c == '/') {
            out += "~1";
        } else if (c == '#' && i == 0) {
            out += "~2";
        } else {
            out += c;
        }
    }
    return out;
}

std::string unescape_token(const std::string& token)
{
    std::string out;
    for (std::size_t i = 0; i < token.size(); ++i) {
        if (token[i] == '~' && i + 1 < token.size()) {
            const char n = token[++i];
            out += n == '0' ? '~' : n == '1' ? '/' : '#';
        } else {
            out += token[i];
        }
    }
    return out;
}

void collect_leaves(const json& j, const std::string& pointer, std::vector<std::pair<std::string, std::string>>& out)
{
    if (j.is_object() && !j.empty()) {
        for (const auto& [key, value] : j.items()) {
            collect_leaves(value, pointer + "/" + pointer_token(key), out);
        }
    } else if (j.is_array() && !j.empty()) {
        for (std::size_t i = 0; i < j.size(); ++i) {
            collect_leaves(j[i], pointer + "/#" + std::to_string(i), out);
        }
    } else if (j.is_number_float()) {
        // Keep a float marker so 1.0 does not come back as an integer.
        std::string text = io::format_double(j.get<double>());
        if (text.find_first_of(".eEn") == std::string::npos) {
            text += ".0";
        }
        out.emplace_back(pointer, text);
    } else {
        out.emplace_back(pointer, j.dump());
    }
}

std::vector<std::string> parse_csv_row(const std::string& text, std::size_t& pos)
{
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    while (pos < text.size()) {
        const char c = text[pos++];
        if (quoted) {
            if (c == '"') {
                if (pos < text.size() && text[pos] == '"') {
                    cell += '"';
                    ++pos;
                } else {
                    quoted = false;
                }
            } else {
                cell += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
        } else if (c == '\n') {
            break;
        } else {
            cell += c;
        }
    }
    cells.push_back(std::move(cell));
    return cells;
}

void place(json& root, const std::string& pointer, json value)
{
    if (pointer.empty()) {
        root = std::move(value);
        return;
    }
    if (pointer.front() != '/') {
        schema("plotdata csv: column '" + pointer + "' is not a pointer");
    }
    json* node = &root;
    std::size_t start = 1;
    while (true) {
        const std::size_t slash = pointer.find('/', start);
        const bool last = slash == std::string::npos;
        const std::string raw = pointer.substr(start, last ? std::string::npos : slash - start);
        json* child = nullptr;
        if (!raw.empty() && raw.front() == '#') {
            if (node->is_null()) {
                *node = json::array();
            }
            if (!node->is_array()) {
                schema("plotdata csv: column '" + pointer + "' mixes arrays and objects");
            }
            const auto index = static_cast<std::size_t>(std::stoull(raw.substr(1)));
            while (node->size() <= index) {
                node->push_back(nullptr);
            }
            child = &(*node)[index];
        } else {
            if (node->is_null()) {
                *node = json::object();
            }
            if (!node->is_object()) {
                schema("plotdata csv: column '" + pointer + "' mixes arrays and objects");
            }
            child = &(*node)[unescape_token(raw)];
        }
        if (last) {
            *child = std::move(value);
            return;
        }
        node = child;
        start = slash + 1;
    }
}

} // namespace

std::string flatten_to_csv(const std::vector<json>& records)
{
    std::vector<std::vector<std::pair<std::string, std::string>>> leaves(records.size());
    std::vector<std::string> columns;
    std::map<std::string, std::size_t> column_index;
    for (std::size_t r = 0; r < records.size(); ++r) {
        collect_leaves(records[r], "", leaves[r]);
        for (const auto& [pointer, value] : leaves[r]) {
            if (column_index.emplace(pointer, columns.size()).second) {
                columns.push_back(pointer);
            }
        }
    }
    std::string out = "record";
    for (const auto& c : columns) {
        out += "," + csv_escape(c);
    }
    out += "\n";
    for (std::size_t r = 0; r < records.size(); ++r) {
        std::vector<std::string> row(columns.size());
        for (const auto& [pointer, value] : leaves[r]) {
            row[column_index[pointer]] = value;
        }
        out += std::to_string(r);
        for (const auto& cell : row) {
            out += "," + csv_escape(cell);
        }
        out += "\n";
    }
    return out;
}

std::vector<json> unflatten_csv(const std::string& csv)
{
    std::size_t pos = 0;
    const auto header = parse_csv_row(csv, pos);
    if (header.empty() || header.front() != "record") {
        schema("plotdata csv: first column must be 'record'");
    }
    std::vector<json> records;
    while (pos < csv.size()) {
        const auto cells = parse_csv_row(csv, pos);
        if (cells.size() == 1 && cells[0].empty()) {
            continue;
        }
        if (cells.size() != header.size()) {
            schema("plotdata csv: row " + std::to_string(records.size()) + " has " + std::to_string(cells.size()) +
                   " cells, header has " + std::to_string(header.size()));
        }
        json record;
        for (std::size_t c = 1; c < cells.size(); ++c) {
            if (cells[c].empty()) {
                continue;
            }
            json value;
            try {
                value = json::parse(cells[c]);
            } catch (const json::parse_error&) {
                schema("plotdata csv: cell in column '" + header[c] + "' is not JSON");
            }
            place(record, header[c], std::move(value));
        }
        records.push_back(std::move(record));
    }
    return records;
}

OdometerModel model_from_scenario(const sim::Scenario& scenario)
{
    if (!scenario.odometry) {
        throw Error(ErrorCode::MissingDependency, "scenario has no odometry section");
    }
    OdometerModel m;
    for (const auto& o : scenario.odometry->odometers) {
        m.ids.push_back(o.id);
        m.covariances[o.id] = o.cov;
    }
    std::sort(m.ids.begin(), m.ids.end());
    for (const auto& c : scenario.odometry->correlations) {
        m.correlations.set(c.a, c.b, c.cross);
    }
    return m;
}

OdometerModel model_from_report(const json& report)
{
    if (!report.contains("final") || !report["final"].contains("covariances")) {
        schema("covariance report: missing final.covariances");
    }
    const json& fin = report["final"];
    OdometerModel m;
    for (const auto& [id, mat] : fin["covariances"].items()) {
        const Eigen::MatrixXd cov = io::matrix_from_json(mat, "final.covariances." + id);
        if (cov.rows() != 3 || cov.cols() != 3) {
            schema("final.covariances." + id + ": expected a 3x3 matrix");
        }
        m.ids.push_back(id);
        m.covariances[id] = project_psd(cov);
    }
    if (fin.contains("cross")) {
        for (const auto& c : fin["cross"]) {
            if (!c.contains("a") || !c.contains("b") || !c.contains("matrix")) {
                schema("final.cross: entries need a, b and matrix");
            }
            const Eigen::MatrixXd cross = io::matrix_from_json(c["matrix"], "final.cross.matrix");
            if (cross.rows() != 3 || cross.cols() != 3) {
                schema("final.cross.matrix: expected a 3x3 matrix");
            }
            m.correlations.set(c["a"].get<std::string>(), c["b"].get<std::string>(), cross);
        }
    }
    return m;
}

json record_to_json(const fusion::FusionRecord& r)
{
    json j;
    j["epoch"] = r.epoch;
    j["t"] = r.t_end;
    j["t_start"] = r.t_start;
    j["t_end"] = r.t_end;
    j["status"] = fusion::to_string(r.status);
    j["fused"] = io::transform_to_json(r.fused);
    j["covariance"] = io::matrix_to_json(r.cov);
    j["verdicts"] = json::array();
    for (const auto& v : r.verdicts) {
        j["verdicts"].push_back({{"odometer_id", v.odometer_id},
                                 {"nis", v.nis},
                                 {"threshold", v.threshold},
                                 {"dof", v.dof},
                                 {"accepted", v.accepted}});
    }
    j["inlier_ids"] = r.inlier_ids;
    j["rejected_ids"] = r.rejected_ids;
    j["reference_ids"] = r.reference_ids;
    return j;
}

fusion::OdometryEstimate record_from_json(const json& j, const std::string& where)
{
    fusion::OdometryEstimate e;
    try {
        e.odometer_id = "fused";
        e.t_start = j.at("t_start").get<double>();
        e.t_end = j.at("t_end").get<double>();
        const json& f = j.at("fused");
        e.transform = Transform2(f.at(0).get<double>(), f.at(1).get<double>(), f.at(2).get<double>());
    } catch (const json::exception& ex) {
        schema(where + ": malformed fusion record (" + ex.what() + ")");
    }
    const Eigen::MatrixXd cov = io::matrix_from_json(j.at("covariance"), where + ".covariance");
    if (cov.rows() != 3 || cov.cols() != 3) {
        schema(where + ".covariance: expected a 3x3 matrix");
    }
    e.cov = cov;
    return e;
}

FuseOutcome fuse_epochs(const std::vector<sim::OdometryEpoch>& epochs, const OdometerModel& model,
                        const fusion::FusionOptions& options, const SensorSeries* imu_accel, bool have_truth)
{
    fusion::FusionPipeline pipeline(options, model.correlations, imu_accel);
    FuseOutcome out;
    std::map<std::string, fusion::Pose2> pose;
    std::map<std::string, Transform2> last_motion;
    std::vector<std::string> sources = model.ids;
    sources.push_back("fused");
    if (have_truth) {
        sources.push_back("truth");
    }
    for (const auto& s : sources) {
        pose[s] = fusion::Pose2{};
        out.paths[s] = {};
    }
    std::size_t corrupted_epochs = 0, corrupted_flagged = 0, false_rejections = 0, estimates_seen = 0;
    std::map<std::string, std::size_t> status_counts;
    std::map<std::string, double> sq_error;
    for (const auto& ep : epochs) {
        std::vector<fusion::OdometryEstimate> current;
        for (const auto& [id, t] : ep.estimates) {
            const auto cov = model.covariances.find(id);
            if (cov == model.covariances.end()) {
                throw Error(ErrorCode::Consistency, "odometer '" + id + "' has no covariance in the model");
            }
            current.push_back({id, ep.t_start, ep.t_end, t, cov->second, false});
        }
        fusion::FusionRecord rec = pipeline.process(ep.index, ep.t_start, ep.t_end, current);
        ++status_counts[fusion::to_string(rec.status)];
        estimates_seen += current.size();
        for (const auto& id : rec.rejected_ids) {
            if (!ep.corrupted.count(id)) {
                ++false_rejections;
            }
        }
        for (const auto& id : ep.corrupted) {
            ++corrupted_epochs;
            if (std::find(rec.rejected_ids.begin(), rec.rejected_ids.end(), id) != rec.rejected_ids.end()) {
                ++corrupted_flagged;
            }
        }
        for (const auto& id : model.ids) {
            const auto it = ep.estimates.find(id);
            if (it != ep.estimates.end()) {
                last_motion[id] = it->second;
            }
            pose[id] = fusion::apply(pose[id], last_motion.count(id) ? last_motion[id] : rec.fused);
        }
        pose["fused"] = fusion::apply(pose["fused"], rec.fused);
        if (have_truth) {
            pose["truth"] = fusion::apply(pose["truth"], ep.truth);
        }
        for (const auto& s : sources) {
            out.paths[s].push_back(pose[s]);
            if (have_truth) {
                sq_error[s] += (pose[s].position - pose["truth"].position).squaredNorm();
            }
        }
        out.records.push_back(std::move(rec));
    }
    json& sum = out.summary;
    sum["epochs"] = epochs.size();
    sum["status_counts"] = json::object();
    for (const auto& [k, v] : status_counts) {
        sum["status_counts"][k] = v;
    }
    sum["corrupted_estimates"] = corrupted_epochs;
    sum["corrupted_flagged"] = corrupted_flagged;
    sum["corrupted_flag_rate"] =
        corrupted_epochs ? static_cast<double>(corrupted_flagged) / static_cast<double>(corrupted_epochs) : 1.0;
    sum["false_rejections"] = false_rejections;
    sum["estimates"] = estimates_seen;
    if (have_truth && !epochs.empty()) {
        json rms = json::object();
        json final_error = json::object();
        for (const auto& s : sources) {
            rms[s] = std::sqrt(sq_error[s] / static_cast<double>(epochs.size()));
            final_error[s] = (out.paths[s].back().position - out.paths["truth"].back().position).norm();
        }
        sum["rms_position_error"] = std::move(rms);
        sum["final_position_error"] = std::move(final_error);
    }
    return out;
}

std::vector<SweepPoint> covest_sweep(const std::vector<sim::OdometryEpoch>& epochs,
                                     const std::vector<std::string>& ids, const std::set<covest::PairKey>& correlated,
                                     const std::vector<std::size_t>& sizes)
{
    covest::OdometerBatch all = covest::OdometerBatch::planar(ids);
    for (const auto& e : epochs) {
        all.add_epoch(e.estimates);
    }
    std::vector<SweepPoint> out;
    for (std::size_t n : sizes) {
        if (n > all.size()) {
            continue;
        }
        covest::OdometerBatch batch = covest::OdometerBatch::planar(ids);
        batch.epochs.assign(all.epochs.begin(), all.epochs.begin() + static_cast<std::ptrdiff_t>(n));
        SweepPoint p;
        p.epochs = n;
        p.stats = covest::difference_covariances(batch);
        p.estimate = covest::solve_cov_system(p.stats.covariance, batch.k(), correlated, n);
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<FixVerdict> monitor_fixes(std::vector<fusion::OdometryEstimate> chain,
                                      const std::vector<fusion::PositionFix>& fixes,
                                      const fusion::MonitorOptions& options, std::size_t window)
{
    if (chain.empty() || window == 0) {
        return {};
    }
    std::sort(chain.begin(), chain.end(), [](const auto& a, const auto& b) { return a.t_start < b.t_start; });
    const double chain_start = chain.front().t_start;
    const double chain_end = chain.back().t_end;
    std::vector<FixVerdict> out;
    std::vector<fusion::PositionFix> priors;
    // Epochs before `first` are summarized by the heading they accumulate.
    std::size_t first = 0;
    fusion::MonitorOptions slice = options;
    for (const auto& fix : fixes) {
        if (fix.t < chain_start || fix.t > chain_end) {
            continue;
        }
        if (priors.empty()) {
            priors.push_back(fix);
            continue;
        }
        while (first < chain.size() && chain[first].t_end <= priors.front().t) {
            slice.initial_heading += chain[first].transform.dpsi();
            slice.initial_heading_variance += chain[first].cov(2, 2);
            ++first;
        }
        std::vector<fusion::OdometryEstimate> segment;
        for (std::size_t k = first; k < chain.size() && chain[k].t_start < fix.t; ++k) {
            segment.push_back(chain[k]);
        }
        FixVerdict v{fix, fusion::monitor_position(priors, segment, fix, slice), priors.size()};
        if (v.result.verdict.accepted) {
            priors.push_back(fix);
            if (priors.size() > window) {
                priors.erase(priors.begin());
            }
        }
        out.push_back(std::move(v));
    }
    return out;
}

const std::vector<std::string>& commands()
{
    static const std::vector<std::string> names{"simulate", "calibrate", "covest", "fuse", "monitor", "plotdata"};
    return names;
}

int exit_code(ErrorCode code)
{
    switch (code) {
    case ErrorCode::Schema: return 2;
    case ErrorCode::MissingDependency: return 3;
    case ErrorCode::Consistency: return 4;
    case ErrorCode::Numerical:
    case ErrorCode::DegenerateCovariance: return 5;
    default: return 1;
    }
}

json run(const std::string& command, const json& config)
{
    if (!config.is_object()) {
        schema("config: expected a JSON object");
    }
    if (command == "simulate") {
        return cmd_simulate(config);
    }
    if (command == "calibrate") {
        return cmd_calibrate(config);
    }
    if (command == "covest") {
        return cmd_covest(config);
    }
    if (command == "fuse") {
        return cmd_fuse(config);
    }
    if (command == "monitor") {
        return cmd_monitor(config);
    }
    if (command == "plotdata") {
        return cmd_plotdata(config);
    }
    throw Error(ErrorCode::InvalidArgument, "unknown command '" + command + "'");
}

} // namespace drk::app
