#include "drkit/io.hpp"

#include <openssl/evp.h>

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace drk::io {
namespace {

[[noreturn]] void schema(const std::string& what)
{
    throw Error(ErrorCode::Schema, what);
}

std::string join(const std::string& path, const std::string& key)
{
    return path.empty() ? key : path + "." + key;
}

void require_object(const json& j, const std::string& path, std::initializer_list<const char*> allowed)
{
    if (!j.is_object()) {
        schema((path.empty() ? std::string("document") : path) + ": expected an object");
    }
    for (const auto& [key, value] : j.items()) {
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
            schema(join(path, key) + ": unknown field");
        }
    }
}

double number(const json& j, const char* key, const std::string& path, std::optional<double> fallback = {})
{
    const auto it = j.find(key);
    if (it == j.end()) {
        if (fallback) {
            return *fallback;
        }
        schema(join(path, key) + ": missing required field");
    }
    if (!it->is_number()) {
        schema(join(path, key) + ": expected a number");
    }
    const double v = it->get<double>();
    if (!std::isfinite(v)) {
        schema(join(path, key) + ": must be finite");
    }
    return v;
}

std::string text(const json& j, const char* key, const std::string& path)
{
    const auto it = j.find(key);
    if (it == j.end()) {
        schema(join(path, key) + ": missing required field");
    }
    if (!it->is_string()) {
        schema(join(path, key) + ": expected a string");
    }
    return it->get<std::string>();
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (comma == std::string::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

std::vector<std::string> lines_of(const std::string& content)
{
    std::vector<std::string> out;
    std::istringstream in(content);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (!line.empty()) {
            out.push_back(line);
        }
    }
    return out;
}

// Simulator and config validation report InvalidArgument; inside a file they
// are schema violations.
template <typename F>
auto as_schema(F&& f) -> decltype(f())
{
    try {
        return f();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidArgument) {
            schema(e.what());
        }
        throw;
    }
}

} // namespace

std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string format_time(double t)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9f", t);
    return buf;
}

double parse_double(std::string_view s, const std::string& where)
{
    while (!s.empty() && s.front() == ' ') {
        s.remove_prefix(1);
    }
    while (!s.empty() && s.back() == ' ') {
        s.remove_suffix(1);
    }
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
        schema(where + ": '" + std::string(s) + "' is not a finite number");
    }
    return v;
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::MissingDependency, "missing file: " + path.string());
    }
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file_atomic(const fs::path& path, const std::string& content)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorCode::InvalidArgument, "cannot write " + tmp.string());
        }
        out << content;
        out.flush();
        if (!out) {
            throw Error(ErrorCode::InvalidArgument, "write failed for " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

json read_json(const fs::path& path)
{
    const std::string content = read_file(path);
    try {
        return json::parse(content);
    } catch (const json::parse_error& e) {
        schema(path.string() + ": invalid JSON (" + e.what() + ")");
    }
}

void write_json(const fs::path& path, const json& j)
{
    write_file_atomic(path, j.dump(2) + "\n");
}

json matrix_to_json(const Eigen::MatrixXd& m)
{
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            row.push_back(m(r, c));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& where)
{
    if (!j.is_array() || j.empty()) {
        schema(where + ": expected a non-empty array of rows");
    }
    const std::size_t rows = j.size();
    const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
    if (cols == 0) {
        schema(where + ": expected a non-empty array of rows");
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        if (!j[r].is_array() || j[r].size() != cols) {
            schema(where + "[" + std::to_string(r) + "]: rows must have equal length");
        }
        for (std::size_t c = 0; c < cols; ++c) {
            if (!j[r][c].is_number()) {
                schema(where + "[" + std::to_string(r) + "][" + std::to_string(c) + "]: expected a number");
            }
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
        }
    }
    return m;
}

json transform_to_json(const Transform2& t)
{
    return json::array({t.dx(), t.dy(), t.dpsi()});
}

namespace {

Eigen::Matrix3d matrix3(const json& j, const std::string& where)
{
    const Eigen::MatrixXd m = matrix_from_json(j, where);
    if (m.rows() != 3 || m.cols() != 3) {
        schema(where + ": expected a 3x3 matrix");
    }
    return m;
}

sim::Maneuver parse_maneuver(const json& j, const std::string& path)
{
    require_object(j, path, {"kind", "speed", "steering", "period", "legs"});
    sim::Maneuver m;
    const std::string kind = text(j, "kind", path);
    const auto parsed = sim::parse_maneuver_kind(kind);
    if (!parsed) {
        schema(join(path, "kind") + ": unknown maneuver '" + kind +
               "' (straight, constant-turn, slalom, figure-eight, composite)");
    }
    m.kind = *parsed;
    m.speed = number(j, "speed", path, m.kind == sim::Maneuver::Kind::Composite ? std::optional(0.0) : std::nullopt);
    m.steering = number(j, "steering", path, 0.0);
    m.period = number(j, "period", path, m.period);
    if (const auto it = j.find("legs"); it != j.end()) {
        if (!it->is_array()) {
            schema(join(path, "legs") + ": expected an array");
        }
        for (std::size_t i = 0; i < it->size(); ++i) {
            const std::string lp = join(path, "legs") + "[" + std::to_string(i) + "]";
            const json& leg = (*it)[i];
            require_object(leg, lp, {"speed", "steering", "duration"});
            m.legs.push_back({number(leg, "speed", lp), number(leg, "steering", lp, 0.0), number(leg, "duration", lp)});
        }
    }
    as_schema([&] { m.validate(); });
    return m;
}

sim::SensorErrorSpec parse_sensor(const json& j, const std::string& path)
{
    require_object(j, path,
                   {"kind", "offset", "scale", "noise_sigma", "noise_sigma_z", "time_delay", "lever_arm", "rate_hz"});
    sim::SensorErrorSpec s;
    const std::string kind = text(j, "kind", path);
    const auto parsed = sim::parse_sensor_kind(kind);
    if (!parsed) {
        schema(join(path, "kind") + ": unknown sensor kind '" + kind + "'");
    }
    s.kind = *parsed;
    s.offset = number(j, "offset", path, 0.0);
    s.scale = number(j, "scale", path, 1.0);
    s.noise_sigma = number(j, "noise_sigma", path, 0.0);
    if (j.contains("noise_sigma_z")) {
        s.noise_sigma_z = number(j, "noise_sigma_z", path);
    }
    s.time_delay = number(j, "time_delay", path, 0.0);
    s.rate_hz = number(j, "rate_hz", path);
    if (const auto it = j.find("lever_arm"); it != j.end()) {
        if (!it->is_array() || it->size() < 2 || it->size() > 3) {
            schema(join(path, "lever_arm") + ": expected [x, y] or [x, y, z]");
        }
        for (std::size_t c = 0; c < it->size(); ++c) {
            if (!(*it)[c].is_number()) {
                schema(join(path, "lever_arm") + "[" + std::to_string(c) + "]: expected a number");
            }
            s.lever_arm(static_cast<Eigen::Index>(c)) = (*it)[c].get<double>();
        }
    }
    return s;
}

sim::OdometrySpec parse_odometry(const json& j, const std::string& path)
{
    require_object(j, path, {"epoch_length", "odometers", "correlations", "corruption"});
    sim::OdometrySpec o;
    o.epoch_length = number(j, "epoch_length", path, o.epoch_length);
    const auto odos = j.find("odometers");
    if (odos == j.end() || !odos->is_array()) {
        schema(join(path, "odometers") + ": expected an array");
    }
    for (std::size_t i = 0; i < odos->size(); ++i) {
        const std::string op = join(path, "odometers") + "[" + std::to_string(i) + "]";
        const json& e = (*odos)[i];
        require_object(e, op, {"id", "cov", "dropout_probability"});
        sim::OdometerSpec spec;
        spec.id = text(e, "id", op);
        if (!e.contains("cov")) {
            schema(join(op, "cov") + ": missing required field");
        }
        spec.cov = matrix3(e["cov"], join(op, "cov"));
        spec.dropout_probability = number(e, "dropout_probability", op, 0.0);
        o.odometers.push_back(std::move(spec));
    }
    if (const auto it = j.find("correlations"); it != j.end()) {
        if (!it->is_array()) {
            schema(join(path, "correlations") + ": expected an array");
        }
        for (std::size_t i = 0; i < it->size(); ++i) {
            const std::string cp = join(path, "correlations") + "[" + std::to_string(i) + "]";
            const json& e = (*it)[i];
            require_object(e, cp, {"a", "b", "cross"});
            if (!e.contains("cross")) {
                schema(join(cp, "cross") + ": missing required field");
            }
            o.correlations.push_back({text(e, "a", cp), text(e, "b", cp), matrix3(e["cross"], join(cp, "cross"))});
        }
    }
    if (const auto it = j.find("corruption"); it != j.end()) {
        const std::string cp = join(path, "corruption");
        require_object(*it, cp, {"odometer", "bias_sigma", "probability"});
        o.corruption = sim::CorruptionSpec{text(*it, "odometer", cp), number(*it, "bias_sigma", cp, 10.0),
                                           number(*it, "probability", cp)};
    }
    return o;
}

} // namespace

sim::Scenario parse_scenario(const json& j)
{
    require_object(j, "", {"schema_version", "seed", "duration", "dt", "maneuver", "vehicle", "sensors", "odometry"});
    if (j.contains("schema_version")) {
        if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kSchemaVersion) {
            schema("schema_version: unsupported version (expected " + std::to_string(kSchemaVersion) + ")");
        }
    }
    sim::Scenario s;
    if (!j.contains("seed") || !j["seed"].is_number_integer() || j["seed"].get<long long>() < 0) {
        schema("seed: expected a non-negative integer");
    }
    s.seed = j["seed"].get<std::uint64_t>();
    s.duration = number(j, "duration", "");
    if (!(s.duration > 0.0)) {
        schema("duration: must be > 0");
    }
    s.dt = number(j, "dt", "", s.dt);
    if (!j.contains("maneuver")) {
        schema("maneuver: missing required field");
    }
    s.maneuver = parse_maneuver(j["maneuver"], "maneuver");
    if (const auto it = j.find("vehicle"); it != j.end()) {
        require_object(*it, "vehicle", {"l_f", "l_r", "wheel_circumference", "ticks_per_rev"});
        s.vehicle.l_f = number(*it, "l_f", "vehicle", s.vehicle.l_f);
        s.vehicle.l_r = number(*it, "l_r", "vehicle", s.vehicle.l_r);
        s.vehicle.wheel_circumference = number(*it, "wheel_circumference", "vehicle", s.vehicle.wheel_circumference);
        const double tpr = number(*it, "ticks_per_rev", "vehicle", s.vehicle.ticks_per_rev);
        if (tpr != std::floor(tpr) || tpr < 1.0) {
            schema("vehicle.ticks_per_rev: expected a positive integer");
        }
        s.vehicle.ticks_per_rev = static_cast<int>(tpr);
    }
    if (const auto it = j.find("sensors"); it != j.end()) {
        if (!it->is_object()) {
            schema("sensors: expected an object keyed by sensor id");
        }
        for (const auto& [id, spec] : it->items()) {
            const std::string sp = join("sensors", id);
            s.sensors[id] = parse_sensor(spec, sp);
            as_schema([&] { s.sensors[id].validate(id); });
        }
    }
    if (const auto it = j.find("odometry"); it != j.end()) {
        s.odometry = parse_odometry(*it, "odometry");
    }
    as_schema([&] { s.validate(); });
    return s;
}

json scenario_to_json(const sim::Scenario& s)
{
    json j;
    j["schema_version"] = kSchemaVersion;
    j["seed"] = s.seed;
    j["duration"] = s.duration;
    j["dt"] = s.dt;
    json m;
    m["kind"] = std::string(sim::to_string(s.maneuver.kind));
    m["speed"] = s.maneuver.speed;
    m["steering"] = s.maneuver.steering;
    m["period"] = s.maneuver.period;
    if (!s.maneuver.legs.empty()) {
        json legs = json::array();
        for (const auto& leg : s.maneuver.legs) {
            legs.push_back({{"speed", leg.speed}, {"steering", leg.steering}, {"duration", leg.duration}});
        }
        m["legs"] = std::move(legs);
    }
    j["maneuver"] = std::move(m);
    j["vehicle"] = {{"l_f", s.vehicle.l_f},
                    {"l_r", s.vehicle.l_r},
                    {"wheel_circumference", s.vehicle.wheel_circumference},
                    {"ticks_per_rev", s.vehicle.ticks_per_rev}};
    json sensors = json::object();
    for (const auto& [id, spec] : s.sensors) {
        json e;
        e["kind"] = std::string(sim::to_string(spec.kind));
        e["rate_hz"] = spec.rate_hz;
        e["offset"] = spec.offset;
        e["scale"] = spec.scale;
        e["noise_sigma"] = spec.noise_sigma;
        if (spec.noise_sigma_z) {
            e["noise_sigma_z"] = *spec.noise_sigma_z;
        }
        e["time_delay"] = spec.time_delay;
        if (sim::is_position_sensor(spec.kind)) {
            e["lever_arm"] = {spec.lever_arm.x(), spec.lever_arm.y(), spec.lever_arm.z()};
        }
        sensors[id] = std::move(e);
    }
    j["sensors"] = std::move(sensors);
    if (s.odometry) {
        json o;
        o["epoch_length"] = s.odometry->epoch_length;
        json odos = json::array();
        for (const auto& od : s.odometry->odometers) {
            odos.push_back({{"id", od.id}, {"cov", matrix_to_json(od.cov)}, {"dropout_probability", od.dropout_probability}});
        }
        o["odometers"] = std::move(odos);
        json cors = json::array();
        for (const auto& c : s.odometry->correlations) {
            cors.push_back({{"a", c.a}, {"b", c.b}, {"cross", matrix_to_json(c.cross)}});
        }
        o["correlations"] = std::move(cors);
        if (s.odometry->corruption) {
            o["corruption"] = {{"odometer", s.odometry->corruption->odometer},
                               {"bias_sigma", s.odometry->corruption->bias_sigma},
                               {"probability", s.odometry->corruption->probability}};
        }
        j["odometry"] = std::move(o);
    }
    return j;
}

sim::Scenario load_scenario(const fs::path& path)
{
    const json j = read_json(path);
    try {
        return parse_scenario(j);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Schema) {
            schema(path.string() + ": " + e.what());
        }
        throw;
    }
}

std::string series_to_csv(const SensorSeries& series)
{
    std::string out = "t,sensor_id,channel";
    for (std::size_t c = 0; c < series.dim(); ++c) {
        out += ",v" + std::to_string(c);
    }
    out += "\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        out += format_time(series.time(i));
        out += ',';
        out += series.sensor_id();
        out += ',';
        out += series.channel();
        for (std::size_t c = 0; c < series.dim(); ++c) {
            out += ',';
            out += format_double(series.value(i, c));
        }
        out += '\n';
    }
    return out;
}

SensorSeries series_from_csv(const std::string& content, const std::string& where)
{
    const std::vector<std::string> lines = lines_of(content);
    if (lines.empty()) {
        schema(where + ": empty sensor log");
    }
    const std::vector<std::string> header = split_csv_line(lines[0]);
    if (header.size() < 4 || header.size() > 6 || header[0] != "t" || header[1] != "sensor_id" ||
        header[2] != "channel") {
        schema(where + ": header must be t,sensor_id,channel,v0[,v1,v2]");
    }
    for (std::size_t c = 3; c < header.size(); ++c) {
        if (header[c] != "v" + std::to_string(c - 3)) {
            schema(where + ": header must be t,sensor_id,channel,v0[,v1,v2]");
        }
    }
    const std::size_t dim = header.size() - 3;
    if (lines.size() < 2) {
        schema(where + ": sensor log has no samples");
    }
    const std::vector<std::string> first = split_csv_line(lines[1]);
    if (first.size() != header.size()) {
        schema(where + ":2: expected " + std::to_string(header.size()) + " columns");
    }
    SensorSeries series(first[1], first[2], dim);
    series.reserve(lines.size() - 1);
    std::vector<double> v(dim);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::string at = where + ":" + std::to_string(i + 1);
        const std::vector<std::string> cells = split_csv_line(lines[i]);
        if (cells.size() != header.size()) {
            schema(at + ": expected " + std::to_string(header.size()) + " columns");
        }
        if (cells[1] != series.sensor_id() || cells[2] != series.channel()) {
            schema(at + ": one sensor and channel per file");
        }
        const double t = parse_double(cells[0], at);
        for (std::size_t c = 0; c < dim; ++c) {
            v[c] = parse_double(cells[3 + c], at);
        }
        if (series.size() > 0 && !(t > series.back_time())) {
            schema(at + ": timestamps must strictly increase");
        }
        series.push_back(t, v);
    }
    return series;
}

SensorSeries read_series_csv(const fs::path& path)
{
    return series_from_csv(read_file(path), path.string());
}

std::map<std::string, SensorSeries> read_log_dir(const fs::path& dir)
{
    if (!fs::is_directory(dir)) {
        throw Error(ErrorCode::MissingDependency, "missing log directory: " + dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".csv") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::map<std::string, SensorSeries> out;
    for (const auto& f : files) {
        const std::string content = read_file(f);
        if (content.rfind("t,sensor_id,channel,", 0) != 0) {
            continue;
        }
        verify_against_manifest(f);
        SensorSeries s = series_from_csv(content, f.string());
        const std::string id = s.sensor_id();
        if (!out.emplace(id, std::move(s)).second) {
            schema(f.string() + ": duplicate sensor id '" + id + "'");
        }
    }
    return out;
}

std::string truth_to_csv(const sim::TruthTrajectory& truth)
{
    std::string out = "t,x,y,heading,speed,yaw_rate,yaw_accel,a_lon,a_lat,steering,path_length\n";
    for (const auto& s : truth.samples()) {
        out += format_time(s.t);
        for (double v : {s.position.x(), s.position.y(), s.heading, s.speed, s.yaw_rate, s.yaw_accel, s.a_lon,
                         s.a_lat, s.steering, s.path_length}) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

std::string odometry_to_csv(const std::vector<sim::OdometryEpoch>& epochs)
{
    std::string out = "epoch,t_start,t_end,odometer_id,dx,dy,dpsi,corrupted\n";
    for (const auto& e : epochs) {
        for (const auto& [id, t] : e.estimates) {
            out += std::to_string(e.index) + "," + format_time(e.t_start) + "," + format_time(e.t_end) + "," + id +
                   "," + format_double(t.dx()) + "," + format_double(t.dy()) + "," + format_double(t.dpsi()) + "," +
                   (e.corrupted.count(id) ? "1" : "0") + "\n";
        }
    }
    return out;
}

std::string odometry_truth_to_csv(const std::vector<sim::OdometryEpoch>& epochs)
{
    std::string out = "epoch,t_start,t_end,dx,dy,dpsi\n";
    for (const auto& e : epochs) {
        out += std::to_string(e.index) + "," + format_time(e.t_start) + "," + format_time(e.t_end) + "," +
               format_double(e.truth.dx()) + "," + format_double(e.truth.dy()) + "," + format_double(e.truth.dpsi()) +
               "\n";
    }
    return out;
}

std::vector<sim::OdometryEpoch> read_odometry_csv(const fs::path& path, const fs::path& truth_path)
{
    verify_against_manifest(path);
    const std::vector<std::string> lines = lines_of(read_file(path));
    if (lines.empty() || lines[0] != "epoch,t_start,t_end,odometer_id,dx,dy,dpsi,corrupted") {
        schema(path.string() + ": header must be epoch,t_start,t_end,odometer_id,dx,dy,dpsi,corrupted");
    }
    std::vector<sim::OdometryEpoch> epochs;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::string at = path.string() + ":" + std::to_string(i + 1);
        const auto c = split_csv_line(lines[i]);
        if (c.size() != 8) {
            schema(at + ": expected 8 columns");
        }
        const double index = parse_double(c[0], at);
        if (index != std::floor(index) || index < 0) {
            schema(at + ": epoch must be a non-negative integer");
        }
        const int e = static_cast<int>(index);
        if (epochs.empty() || epochs.back().index != e) {
            if (!epochs.empty() && e < epochs.back().index) {
                schema(at + ": epochs must be in increasing order");
            }
            sim::OdometryEpoch ep;
            ep.index = e;
            ep.t_start = parse_double(c[1], at);
            ep.t_end = parse_double(c[2], at);
            if (!(ep.t_end > ep.t_start)) {
                schema(at + ": t_end must be after t_start");
            }
            epochs.push_back(std::move(ep));
        }
        auto& ep = epochs.back();
        const Transform2 t(parse_double(c[4], at), parse_double(c[5], at), parse_double(c[6], at));
        if (!ep.estimates.emplace(c[3], t).second) {
            schema(at + ": duplicate odometer '" + c[3] + "' in epoch");
        }
        if (c[7] == "1") {
            ep.corrupted.insert(c[3]);
        } else if (c[7] != "0") {
            schema(at + ": corrupted must be 0 or 1");
        }
    }
    if (!truth_path.empty()) {
        verify_against_manifest(truth_path);
        const std::vector<std::string> tl = lines_of(read_file(truth_path));
        if (tl.empty() || tl[0] != "epoch,t_start,t_end,dx,dy,dpsi") {
            schema(truth_path.string() + ": header must be epoch,t_start,t_end,dx,dy,dpsi");
        }
        std::map<int, Transform2> truth;
        for (std::size_t i = 1; i < tl.size(); ++i) {
            const std::string at = truth_path.string() + ":" + std::to_string(i + 1);
            const auto c = split_csv_line(tl[i]);
            if (c.size() != 6) {
                schema(at + ": expected 6 columns");
            }
            truth[static_cast<int>(parse_double(c[0], at))] =
                Transform2(parse_double(c[3], at), parse_double(c[4], at), parse_double(c[5], at));
        }
        for (auto& ep : epochs) {
            const auto it = truth.find(ep.index);
            if (it == truth.end()) {
                throw Error(ErrorCode::Consistency,
                            truth_path.string() + ": no truth for epoch " + std::to_string(ep.index));
            }
            ep.truth = it->second;
        }
    }
    return epochs;
}

std::string sha256_hex(const std::string& content)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(content.data(), content.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorCode::Numerical, "sha256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

void write_manifest(const fs::path& dir, const std::string& command, const json& config,
                    const std::vector<std::string>& outputs)
{
    // One entry per command so several commands may share an output directory.
    const fs::path path = dir / "manifest.json";
    json m;
    if (fs::exists(path)) {
        try {
            m = json::parse(read_file(path));
        } catch (const json::parse_error&) {
            m = json();
        }
    }
    if (!m.is_object() || !m.contains("runs") || !m["runs"].is_object()) {
        m = json::object();
        m["runs"] = json::object();
    }
    m["schema_version"] = kSchemaVersion;
    json run;
    run["config"] = config;
    json hashes = json::object();
    std::vector<std::string> sorted = outputs;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& name : sorted) {
        hashes[name] = sha256_hex(read_file(dir / name));
    }
    run["outputs"] = std::move(hashes);
    m["runs"][command] = std::move(run);
    json ordered;
    ordered["schema_version"] = kSchemaVersion;
    std::vector<std::string> names;
    for (const auto& [name, r] : m["runs"].items()) {
        names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    ordered["runs"] = json::object();
    for (const auto& name : names) {
        ordered["runs"][name] = m["runs"][name];
    }
    write_json(path, ordered);
}

void verify_against_manifest(const fs::path& file)
{
    const fs::path manifest = file.parent_path() / "manifest.json";
    if (!fs::exists(manifest)) {
        return;
    }
    json m;
    try {
        m = json::parse(read_file(manifest));
    } catch (const json::parse_error&) {
        throw Error(ErrorCode::Consistency, manifest.string() + ": unreadable manifest");
    }
    const auto runs = m.find("runs");
    if (runs == m.end() || !runs->is_object()) {
        throw Error(ErrorCode::Consistency, manifest.string() + ": manifest lists no runs");
    }
    const std::string name = file.filename().string();
    std::optional<std::string> hash;
    for (const auto& [command, run] : runs->items()) {
        if (run.contains("outputs") && run["outputs"].contains(name)) {
            hash = run["outputs"][name].is_string() ? run["outputs"][name].get<std::string>() : std::string();
        }
    }
    if (hash && *hash != sha256_hex(read_file(file))) {
        throw Error(ErrorCode::Consistency, file.string() + ": content does not match the hash in " +
                                                manifest.string());
    }
}

} // namespace drk::io
