// Command-line front end. Every subcommand turns its flags into a JSON config
// (layered over an optional --config file) and hands it to drk_run.
#include "drkit/drkit.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

using json = nlohmann::ordered_json;

namespace {

enum class Kind { String, Number, Integer, NumberList, IntegerList, PairList };

struct Flag {
    const char* name;
    const char* key;
    Kind kind;
    const char* help;
};

struct Subcommand {
    const char* name;
    const char* help;
    std::vector<Flag> flags;
};

const std::vector<Subcommand>& subcommands()
{
    static const std::vector<Subcommand> table{
        {"simulate",
         "Generate truth, sensor logs and odometry from a scenario",
         {{"--scenario", "scenario", Kind::String, "scenario JSON"},
          {"--out", "out", Kind::String, "output directory"},
          {"--seed", "seed", Kind::Integer, "override the scenario seed"}}},
        {"calibrate",
         "Estimate sensor delay, IMU offset/scale, lever arm, steering and wheel circumference",
         {{"--logs", "logs", Kind::String, "sensor log directory"},
          {"--out", "out", Kind::String, "output directory"},
          {"--step", "step", Kind::String, "all | delay | imu | lever | steering | wheel"},
          {"--truth", "truth", Kind::String, "scenario JSON for the recovery table"},
          {"--search-window", "search_window", Kind::Number, "delay search window [s]"},
          {"--filter-window", "filter_window", Kind::Integer, "odd mean-filter width for delay estimation"},
          {"--forgetting", "forgetting", Kind::Number, "RLS forgetting factor in (0, 1]"},
          {"--segment-length", "segment_length", Kind::Number, "wheel calibration segment length [m]"},
          {"--min-speed", "min_speed", Kind::Number, "steering calibration speed gate [m/s]"},
          {"--max-heading-change", "max_heading_change_deg", Kind::Number, "wheel segment curvature guard [deg]"},
          {"--gnss-sigma", "gnss_sigma", Kind::Number, "GNSS horizontal position sigma [m]"},
          {"--gnss-sigma-z", "gnss_sigma_z", Kind::Number, "GNSS vertical position sigma [m]"},
          {"--gnss-delay", "gnss_delay", Kind::Number, "known GNSS delay [s] when not estimated"},
          {"--nominal-circumference", "nominal_circumference", Kind::Number, "nominal wheel circumference [m]"},
          {"--ticks-per-rev", "ticks_per_rev", Kind::Integer, "wheel encoder ticks per revolution"},
          {"--l-f", "l_f", Kind::Number, "CG to front axle [m]"},
          {"--l-r", "l_r", Kind::Number, "CG to rear axle [m]"}}},
        {"covest",
         "Estimate odometer covariances from redundant odometry",
         {{"--odometry", "odometry", Kind::String, "odometry CSV"},
          {"--out", "out", Kind::String, "output directory"},
          {"--correlated", "correlated", Kind::PairList, "correlated odometer pair a:b (repeatable)"},
          {"--epochs", "epochs", Kind::IntegerList, "epoch counts for the convergence sweep"},
          {"--truth", "truth", Kind::String, "scenario JSON for error columns and truth ellipses"}}},
        {"fuse",
         "Fuse odometry with NIS consensus gating",
         {{"--odometry", "odometry", Kind::String, "odometry CSV"},
          {"--odometry-truth", "odometry_truth", Kind::String, "true epoch transforms CSV"},
          {"--covariance", "covariance", Kind::String, "covariance report JSON"},
          {"--truth", "truth", Kind::String, "scenario JSON supplying covariances"},
          {"--logs", "logs", Kind::String, "sensor logs with IMU accelerations for propagation"},
          {"--out", "out", Kind::String, "output directory"},
          {"--alpha", "alpha", Kind::Number, "NIS confidence level"},
          {"--inflation", "inflation", Kind::Number, "propagation covariance growth per second"}}},
        {"monitor",
         "Integrity-check GNSS fixes against the fused odometry chain",
         {{"--fusion", "fusion", Kind::String, "fusion.jsonl"},
          {"--logs", "logs", Kind::String, "sensor log directory with GNSS position"},
          {"--out", "out", Kind::String, "output directory"},
          {"--gnss-sigma", "gnss_sigma", Kind::Number, "GNSS position sigma [m]"},
          {"--gnss-delay", "gnss_delay", Kind::Number, "GNSS delay removed from fix times [s]"},
          {"--window", "window", Kind::Integer, "accepted fixes used as priors"},
          {"--alpha", "alpha", Kind::Number, "NIS confidence level"},
          {"--max-gap", "max_gap", Kind::Number, "largest chain gap [s]"},
          {"--initial-heading", "initial_heading", Kind::Number, "world heading at chain start [rad]"},
          {"--lever-arm", "lever_arm", Kind::NumberList, "antenna position in the body frame x y [m]"}}},
        {"plotdata",
         "Flatten a JSON or JSON-lines result into tidy CSV",
         {{"--input", "input", Kind::String, "JSON or JSONL file"},
          {"--out", "out", Kind::String, "output directory"}}},
    };
    return table;
}

json load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config file " + path);
    }
    return json::parse(in);
}

json convert(const Flag& flag, const std::vector<std::string>& raw)
{
    auto number = [&](const std::string& s) {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    };
    auto integer = [&](const std::string& s) {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    };
    switch (flag.kind) {
    case Kind::String: return raw.back();
    case Kind::Number: return number(raw.back());
    case Kind::Integer: return integer(raw.back());
    case Kind::NumberList: {
        json a = json::array();
        for (const auto& s : raw) {
            a.push_back(number(s));
        }
        return a;
    }
    case Kind::IntegerList: {
        json a = json::array();
        for (const auto& s : raw) {
            a.push_back(integer(s));
        }
        return a;
    }
    case Kind::PairList: {
        json a = json::array();
        for (const auto& s : raw) {
            const auto colon = s.find(':');
            if (colon == std::string::npos) {
                throw std::invalid_argument(s);
            }
            a.push_back({s.substr(0, colon), s.substr(colon + 1)});
        }
        return a;
    }
    }
    return nullptr;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Dead-reckoning toolkit: simulation, calibration, covariance estimation and fusion"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(drk_version()));

    std::map<std::string, std::string> config_files;
    std::map<std::string, std::map<std::string, std::vector<std::string>>> values;
    for (const auto& sub : subcommands()) {
        CLI::App* cmd = app.add_subcommand(sub.name, sub.help);
        cmd->add_option("--config", config_files[sub.name], "JSON config; flags override its keys");
        for (const auto& flag : sub.flags) {
            auto* opt = cmd->add_option(flag.name, values[sub.name][flag.key], flag.help);
            if (flag.kind == Kind::NumberList || flag.kind == Kind::IntegerList || flag.kind == Kind::PairList) {
                opt->allow_extra_args(true)->take_all();
            } else {
                opt->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
            }
        }
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // CLI usage errors share the schema exit code with malformed configs.
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    for (const auto& sub : subcommands()) {
        const CLI::App* cmd = app.get_subcommand(sub.name);
        if (!cmd->parsed()) {
            continue;
        }
        json config = json::object();
        try {
            if (!config_files[sub.name].empty()) {
                if (!std::ifstream(config_files[sub.name])) {
                    std::cerr << "error: cannot open config file " << config_files[sub.name] << "\n";
                    return 3;
                }
                config = load_config(config_files[sub.name]);
            }
            for (const auto& flag : sub.flags) {
                const auto& raw = values[sub.name][flag.key];
                if (!raw.empty()) {
                    config[flag.key] = convert(flag, raw);
                }
            }
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 2;
        }
        char* summary = nullptr;
        const int status = drk_run(sub.name, config.dump().c_str(), &summary);
        if (status != DRK_OK) {
            std::cerr << "error [" << drk_status_name(status) << "]: " << drk_last_error() << "\n";
            return drk_exit_code(status);
        }
        std::cout << json::parse(summary).dump(2) << "\n";
        drk_free_string(summary);
        return 0;
    }
    return 1;
}
