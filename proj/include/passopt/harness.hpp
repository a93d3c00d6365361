#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "passopt/grouping.hpp"
#include "passopt/mmpdd.hpp"
#include "passopt/psozf.hpp"

namespace passopt {

// ---------------------------------------------------------------------------
// Logging. Controlled by the PASSOPT_LOG environment variable
// (error | info | debug); anything else, or unset, logs errors only.
// ---------------------------------------------------------------------------

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_threshold() {
    static const LogLevel lvl = [] {
        const char* env = std::getenv("PASSOPT_LOG");
        if (env != nullptr) {
            if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
            if (std::strcmp(env, "info") == 0) return LogLevel::info;
        }
        return LogLevel::error;
    }();
    return lvl;
}

inline void log_line(LogLevel lvl, const std::string& msg) {
    if (lvl > log_threshold()) return;
    static std::mutex mu;
    const std::lock_guard<std::mutex> lock(mu);
    std::cerr << msg << '\n';
}

// ---------------------------------------------------------------------------
// Experiment specification and configuration parsing.
// ---------------------------------------------------------------------------

// Raised for malformed or inconsistent configuration; the CLI maps it to a
// distinct exit status.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One experiment description: geometry, requirements, algorithm knobs and the
// sweep/trial layout. Defaults reproduce the reference operating point
// (4 waveguides x 4 antennas, 4 clusters of 2 users over a 30 m segment,
// 15 GHz carrier, -80 dBm noise, 20 dB SINR floors).
struct ExperimentSpec {
    int n_guides = 4;
    int pas_per_guide = 4;
    int n_clusters = 4;
    int users_per_cluster = 2;
    double x_max = 30.0;
    double d0y = 3.0;
    double height = 10.0;
    double min_spacing = 0.1;
    double f_c = 15e9;
    double n_eff = 1.4;
    double noise_dbm = -80.0;

    // When rate_min_bps_hz > 0 it defines the SINR floors; otherwise
    // sinr_min_db applies uniformly.
    double sinr_min_db = 20.0;
    double rate_min_bps_hz = 0.0;

    std::string algo = "mmpdd";  // mmpdd | psozf | fixed

    MmPddConfig mmpdd;
    PsoConfig pso;
    GroupingConfig grouping;

    // Sweep layout: empty sweep_param means a single point.
    std::string sweep_param;
    std::vector<double> sweep_values;
    int trials = 1;
    std::uint64_t seed = 1;
    int workers = 1;

    std::string out_path;        // empty: stdout
    std::string format = "csv";  // csv | json
};

inline void validate_spec(const ExperimentSpec& s) {
    if (s.n_guides < 1 || s.pas_per_guide < 1 || s.n_clusters < 1 || s.users_per_cluster < 1)
        throw ConfigError("spec: counts must be positive");
    if (s.x_max <= 0.0 || s.height <= 0.0 || s.d0y < 0.0 || s.min_spacing < 0.0)
        throw ConfigError("spec: nonpositive dimension");
    if (s.f_c <= 0.0 || s.n_eff < 1.0) throw ConfigError("spec: invalid carrier parameters");
    if (s.trials < 1) throw ConfigError("spec: trials must be >= 1");
    if (s.workers < 1) throw ConfigError("spec: workers must be >= 1");
    if (s.algo != "mmpdd" && s.algo != "psozf" && s.algo != "fixed")
        throw ConfigError("spec: unknown algorithm '" + s.algo + "'");
    if (s.format != "csv" && s.format != "json")
        throw ConfigError("spec: unknown output format '" + s.format + "'");
    if (s.sweep_param.empty() != s.sweep_values.empty())
        throw ConfigError("spec: sweep parameter and values must be given together");
    if (s.rate_min_bps_hz < 0.0) throw ConfigError("spec: negative rate floor");
}

namespace hdetail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw ConfigError("");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
}

inline int to_int(const std::string& key, const std::string& v) {
    const double x = to_double(key, v);
    const int i = static_cast<int>(x);
    if (static_cast<double>(i) != x)
        throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
    return i;
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<double> to_doubles(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(to_double(key, item));
    }
    if (out.empty()) throw ConfigError("config: '" + key + "' expects a comma-separated list");
    return out;
}

inline std::vector<std::string> to_strings(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace hdetail

// Applies one key=value setting. Shared by the config-file parser and
// command-line overrides so both accept the same vocabulary.
inline void apply_setting(ExperimentSpec& s, const std::string& key, const std::string& value) {
    using hdetail::to_bool;
    using hdetail::to_double;
    using hdetail::to_doubles;
    using hdetail::to_int;
    if (key == "n_guides")
        s.n_guides = to_int(key, value);
    else if (key == "pas_per_guide")
        s.pas_per_guide = to_int(key, value);
    else if (key == "n_clusters")
        s.n_clusters = to_int(key, value);
    else if (key == "users_per_cluster")
        s.users_per_cluster = to_int(key, value);
    else if (key == "x_max")
        s.x_max = to_double(key, value);
    else if (key == "d0y")
        s.d0y = to_double(key, value);
    else if (key == "height")
        s.height = to_double(key, value);
    else if (key == "min_spacing")
        s.min_spacing = to_double(key, value);
    else if (key == "f_c")
        s.f_c = to_double(key, value);
    else if (key == "n_eff")
        s.n_eff = to_double(key, value);
    else if (key == "noise_dbm")
        s.noise_dbm = to_double(key, value);
    else if (key == "sinr_min_db")
        s.sinr_min_db = to_double(key, value);
    else if (key == "rate_min_bps_hz")
        s.rate_min_bps_hz = to_double(key, value);
    else if (key == "algo")
        s.algo = value;
    else if (key == "trials")
        s.trials = to_int(key, value);
    else if (key == "seed")
        s.seed = static_cast<std::uint64_t>(std::strtoull(value.c_str(), nullptr, 10));
    else if (key == "workers")
        s.workers = to_int(key, value);
    else if (key == "out")
        s.out_path = value;
    else if (key == "format")
        s.format = value;
    else if (key == "sweep_param")
        s.sweep_param = value;
    else if (key == "sweep_values")
        s.sweep_values = to_doubles(key, value);
    else if (key == "mmpdd.rho0")
        s.mmpdd.rho0 = to_double(key, value);
    else if (key == "mmpdd.max_outer")
        s.mmpdd.max_outer = to_int(key, value);
    else if (key == "mmpdd.inner_sweeps")
        s.mmpdd.inner_sweeps = to_int(key, value);
    else if (key == "mmpdd.tol")
        s.mmpdd.tol = to_double(key, value);
    else if (key == "mmpdd.placements")
        s.mmpdd.placements = hdetail::to_strings(value);
    else if (key == "pso.particles")
        s.pso.particles = to_int(key, value);
    else if (key == "pso.iterations")
        s.pso.iterations = to_int(key, value);
    else if (key == "pso.inertia")
        s.pso.inertia = to_double(key, value);
    else if (key == "pso.c_personal")
        s.pso.c_personal = to_double(key, value);
    else if (key == "pso.c_global")
        s.pso.c_global = to_double(key, value);
    else if (key == "pso.inertia_decay")
        s.pso.inertia_decay = to_bool(key, value);
    else if (key == "pso.velocity_cap_frac")
        s.pso.velocity_cap_frac = to_double(key, value);
    else if (key == "grouping.channel_weight")
        s.grouping.channel_weight = to_double(key, value);
    else if (key == "grouping.location_scale")
        s.grouping.location_scale = to_double(key, value);
    else if (key == "grouping.use_magnitude")
        s.grouping.use_magnitude = to_bool(key, value);
    else if (key == "grouping.balanced")
        s.grouping.balanced = to_bool(key, value);
    else
        throw ConfigError("config: unknown key '" + key + "'");
}

// Flat key = value file; '#' starts a comment, blank lines are skipped.
inline ExperimentSpec parse_config(std::istream& in, ExperimentSpec base = {}) {
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = hdetail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = hdetail::trim(line.substr(0, eq));
        const std::string value = hdetail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        apply_setting(base, key, value);
    }
    return base;
}

inline ExperimentSpec load_config_file(const std::string& path, ExperimentSpec base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    return parse_config(in, std::move(base));
}

// Sweepable parameters. "S" and "L" are aliases for the service-area length
// and the per-guide antenna count.
inline void apply_sweep_value(ExperimentSpec& s, const std::string& param, double value) {
    const auto as_int = [&](const char* what) {
        const int i = static_cast<int>(value);
        if (static_cast<double>(i) != value || i < 1)
            throw ConfigError(std::string("sweep: ") + what + " needs a positive integer, got " +
                              std::to_string(value));
        return i;
    };
    if (param == "S" || param == "x_max")
        s.x_max = value;
    else if (param == "L" || param == "pas_per_guide")
        s.pas_per_guide = as_int("antenna count");
    else if (param == "N" || param == "n_guides")
        s.n_guides = as_int("waveguide count");
    else if (param == "Q" || param == "n_clusters")
        s.n_clusters = as_int("cluster count");
    else if (param == "K" || param == "users_per_cluster")
        s.users_per_cluster = as_int("cluster size");
    else if (param == "sinr_min_db")
        s.sinr_min_db = value;
    else if (param == "rate_min_bps_hz")
        s.rate_min_bps_hz = value;
    else if (param == "noise_dbm")
        s.noise_dbm = value;
    else
        throw ConfigError("sweep: unknown parameter '" + param + "'");
}

// ---------------------------------------------------------------------------
// Scenario generation.
// ---------------------------------------------------------------------------

inline Scenario scenario_from_spec(const ExperimentSpec& s) {
    Scenario sc;
    sc.consts.f_c = s.f_c;
    sc.consts.n_eff = s.n_eff;
    sc.guides.n_guides = s.n_guides;
    sc.guides.pas_per_guide = s.pas_per_guide;
    sc.guides.x_max = s.x_max;
    sc.guides.d0y = s.d0y;
    sc.guides.height = s.height;
    sc.guides.min_spacing = s.min_spacing;
    sc.guides.validate();
    sc.users.n_clusters = s.n_clusters;
    sc.users.users_per_cluster = s.users_per_cluster;
    sc.noise_w = dbm_to_watt(s.noise_dbm);
    return sc;
}

// Draws users uniformly over the ground rectangle covered by the waveguides,
// clusters them, and lays them out so each cluster's members are contiguous
// (the layout the solvers expect). Deterministic in (spec, seed).
inline Scenario generate_scenario(const ExperimentSpec& s, std::uint64_t seed) {
    Scenario sc = scenario_from_spec(s);
    const int total = s.n_clusters * s.users_per_cluster;
    Rng rng(derive_seed(seed, {0x75736572ULL}));
    const double y_max = (s.n_guides - 1) * s.d0y;
    std::vector<Vec3> raw(total);
    for (int u = 0; u < total; ++u) {
        raw[u].x = rng.uniform(0.0, s.x_max);
        raw[u].y = y_max > 0.0 ? rng.uniform(0.0, y_max) : 0.0;
        raw[u].z = 0.0;
    }

    sc.users.pos = raw;
    if (s.n_clusters == 1 || s.users_per_cluster == 1) {
        // Any balanced assignment is equivalent for a single cluster; for
        // singleton clusters keep draw order.
        return sc;
    }

    const Clustering cl = group_users(sc, s.grouping, derive_seed(seed, {0x67727570ULL}));
    std::vector<std::vector<int>> members(s.n_clusters);
    for (int u = 0; u < total; ++u) members[cl.cluster_of[u]].push_back(u);
    for (int q = 0; q < s.n_clusters; ++q)
        if (static_cast<int>(members[q].size()) != s.users_per_cluster)
            throw std::runtime_error("generate_scenario: grouping produced unbalanced clusters");
    for (int q = 0; q < s.n_clusters; ++q)
        for (int k = 0; k < s.users_per_cluster; ++k) sc.users.pos[q * s.users_per_cluster + k] = raw[members[q][k]];
    return sc;
}

inline QosRequirements qos_from_spec(const ExperimentSpec& s) {
    if (s.rate_min_bps_hz > 0.0)
        return QosRequirements::from_rate(s.n_clusters, s.users_per_cluster, s.rate_min_bps_hz);
    return QosRequirements::uniform_db(s.n_clusters, s.users_per_cluster, s.sinr_min_db);
}

// ---------------------------------------------------------------------------
// Result rows and emission.
// ---------------------------------------------------------------------------

struct ResultRow {
    std::string sweep_param = "none";
    double sweep_value = 0.0;
    int trial = 0;
    std::uint64_t seed = 0;
    std::string algo;
    double power_dbm = 0.0;
    double power_w = 0.0;
    bool feasible = false;
    int iters = 0;
    double wall_ms = 0.0;
    double min_sinr_slack_db = 0.0;
};

inline const char* kResultHeader =
    "sweep_param,sweep_value,trial,seed,algo,power_dbm,power_w,feasible,iters,wall_ms,"
    "min_sinr_slack_db";

namespace hdetail {

// Shortest-round-trip formatting so emitted CSV parses back to the exact
// doubles (and is byte-stable across runs and thread counts).
inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_fixed3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

}  // namespace hdetail

inline std::string to_csv_line(const ResultRow& r) {
    std::string out;
    out += r.sweep_param;
    out += ',';
    out += hdetail::fmt_double(r.sweep_value);
    out += ',';
    out += std::to_string(r.trial);
    out += ',';
    out += std::to_string(r.seed);
    out += ',';
    out += r.algo;
    out += ',';
    out += hdetail::fmt_double(r.power_dbm);
    out += ',';
    out += hdetail::fmt_double(r.power_w);
    out += ',';
    out += (r.feasible ? "1" : "0");
    out += ',';
    out += std::to_string(r.iters);
    out += ',';
    out += hdetail::fmt_fixed3(r.wall_ms);
    out += ',';
    out += hdetail::fmt_double(r.min_sinr_slack_db);
    return out;
}

inline void emit_csv(const std::vector<ResultRow>& rows, std::ostream& os) {
    os << kResultHeader << '\n';
    for (const auto& r : rows) os << to_csv_line(r) << '\n';
}

inline void emit_json(const std::vector<ResultRow>& rows, std::ostream& os) {
    os << "[";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        os << (i == 0 ? "\n" : ",\n");
        os << "  {\"sweep_param\":\"" << r.sweep_param << "\",\"sweep_value\":" << hdetail::fmt_double(r.sweep_value)
           << ",\"trial\":" << r.trial << ",\"seed\":" << r.seed << ",\"algo\":\"" << r.algo
           << "\",\"power_dbm\":" << hdetail::fmt_double(r.power_dbm)
           << ",\"power_w\":" << hdetail::fmt_double(r.power_w)
           << ",\"feasible\":" << (r.feasible ? "true" : "false") << ",\"iters\":" << r.iters
           << ",\"wall_ms\":" << hdetail::fmt_fixed3(r.wall_ms)
           << ",\"min_sinr_slack_db\":" << hdetail::fmt_double(r.min_sinr_slack_db) << "}";
    }
    os << (rows.empty() ? "]" : "\n]") << '\n';
}

// Parses CSV produced by emit_csv (no quoting; fields never contain commas).
inline std::vector<ResultRow> parse_result_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("result csv: empty input");
    if (hdetail::trim(line) != kResultHeader) throw std::runtime_error("result csv: bad header");
    std::vector<ResultRow> rows;
    while (std::getline(in, line)) {
        if (hdetail::trim(line).empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        if (f.size() != 11) throw std::runtime_error("result csv: expected 11 fields");
        ResultRow r;
        r.sweep_param = f[0];
        r.sweep_value = std::strtod(f[1].c_str(), nullptr);
        r.trial = std::atoi(f[2].c_str());
        r.seed = static_cast<std::uint64_t>(std::strtoull(f[3].c_str(), nullptr, 10));
        r.algo = f[4];
        r.power_dbm = std::strtod(f[5].c_str(), nullptr);
        r.power_w = std::strtod(f[6].c_str(), nullptr);
        r.feasible = f[7] == "1";
        r.iters = std::atoi(f[8].c_str());
        r.wall_ms = std::strtod(f[9].c_str(), nullptr);
        r.min_sinr_slack_db = std::strtod(f[10].c_str(), nullptr);
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Single-trial execution.
// ---------------------------------------------------------------------------

struct TrialOutcome {
    double power_w = 0.0;
    bool feasible = false;
    int iters = 0;
    double min_sinr_slack_db = 0.0;
};

// Evenly spaced antennas with the zero-forcing inner solution, rescaled by
// the smallest factor meeting every floor (reported infeasible when no
// uniform rescale can, i.e. the point is interference-limited).
inline TrialOutcome run_fixed_baseline(const Scenario& sc, const QosRequirements& qos) {
    TrialOutcome out;
    const PinchingConfig X = PinchingConfig::uniform(sc.guides);
    ZfSolution zf = zf_solution(sc, X, qos);
    if (!zf.zf_ok) {
        out.power_w = 0.0;
        out.min_sinr_slack_db = -std::numeric_limits<double>::infinity();
        return out;
    }
    const ScaleResult sr = minimal_feasible_scale(sc, X, zf.ba, qos);
    if (sr.feasible) zf.ba.W *= sr.scale;
    out.power_w = total_transmit_power(zf.ba.W);
    const FeasibilityReport rep = check_feasibility(sc, X, zf.ba, qos);
    out.feasible = rep.feasible;
    out.min_sinr_slack_db = rep.min_sinr_slack_db;
    return out;
}

inline TrialOutcome run_trial(const ExperimentSpec& s, const Scenario& sc, const QosRequirements& qos,
                              std::uint64_t trial_seed) {
    TrialOutcome out;
    if (s.algo == "fixed") {
        return run_fixed_baseline(sc, qos);
    }
    if (s.algo == "mmpdd") {
        const MmPddResult res = run_mm_pdd(sc, qos, s.mmpdd);
        out.power_w = res.power_w;
        out.feasible = res.feasible;
        out.iters = res.outer_iters;
        if (res.beams.W.size() > 0) {
            const FeasibilityReport rep = check_feasibility(sc, res.X, res.beams, qos);
            out.min_sinr_slack_db = rep.min_sinr_slack_db;
        } else {
            out.min_sinr_slack_db = -std::numeric_limits<double>::infinity();
        }
        return out;
    }
    PsoConfig pc = s.pso;
    pc.seed = derive_seed(trial_seed, {0x70736fULL});
    const PsoResult res = run_pso_zf(sc, qos, pc);
    out.power_w = res.power_w;
    out.feasible = res.feasible;
    out.iters = static_cast<int>(res.best_fitness_trace.size()) - 1;
    if (res.beams.W.size() > 0 && res.power_w > 0.0) {
        const FeasibilityReport rep = check_feasibility(sc, res.X, res.beams, qos);
        out.min_sinr_slack_db = rep.min_sinr_slack_db;
    } else {
        out.min_sinr_slack_db = -std::numeric_limits<double>::infinity();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Experiment driver: sweep points x trials, optionally multi-threaded.
// Row order, seeds and scenario draws depend only on (spec, master seed),
// never on the worker count or scheduling.
// ---------------------------------------------------------------------------

inline std::vector<ResultRow> run_experiment(const ExperimentSpec& spec) {
    validate_spec(spec);
    const bool swept = !spec.sweep_param.empty();
    const int n_points = swept ? static_cast<int>(spec.sweep_values.size()) : 1;
    const int n_tasks = n_points * spec.trials;

    // Surface bad sweep axes as configuration errors before any work starts.
    for (int p = 0; swept && p < n_points; ++p) {
        ExperimentSpec ps = spec;
        apply_sweep_value(ps, spec.sweep_param, spec.sweep_values[p]);
        validate_spec(ps);
    }

    std::vector<ResultRow> rows(static_cast<std::size_t>(n_tasks));
    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex err_mu;

    const auto worker = [&]() {
        for (;;) {
            const int task = next.fetch_add(1);
            if (task >= n_tasks || failed.load()) break;
            const int point = task / spec.trials;
            const int trial = task % spec.trials;
            try {
                ExperimentSpec ps = spec;
                if (swept) apply_sweep_value(ps, spec.sweep_param, spec.sweep_values[point]);
                validate_spec(ps);
                const std::uint64_t trial_seed =
                    derive_seed(spec.seed, {static_cast<std::uint64_t>(point), static_cast<std::uint64_t>(trial)});
                const Scenario sc = generate_scenario(ps, trial_seed);
                const QosRequirements qos = qos_from_spec(ps);

                const auto t0 = std::chrono::steady_clock::now();
                const TrialOutcome res = run_trial(ps, sc, qos, trial_seed);
                const auto t1 = std::chrono::steady_clock::now();

                ResultRow& r = rows[static_cast<std::size_t>(task)];
                r.sweep_param = swept ? spec.sweep_param : "none";
                r.sweep_value = swept ? spec.sweep_values[point] : 0.0;
                r.trial = trial;
                r.seed = trial_seed;
                r.algo = ps.algo;
                r.power_w = res.power_w;
                r.power_dbm = res.power_w > 0.0 ? watt_to_dbm(res.power_w)
                                                : -std::numeric_limits<double>::infinity();
                r.feasible = res.feasible;
                r.iters = res.iters;
                r.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
                r.min_sinr_slack_db = res.min_sinr_slack_db;
                log_line(LogLevel::info, "point " + r.sweep_param + "=" + std::to_string(r.sweep_value) +
                                             " trial " + std::to_string(trial) + " algo " + r.algo +
                                             (r.feasible ? " feasible " : " infeasible ") +
                                             std::to_string(r.power_dbm) + " dBm in " +
                                             hdetail::fmt_fixed3(r.wall_ms) + " ms");
            } catch (const std::exception& e) {
                const std::lock_guard<std::mutex> lock(err_mu);
                if (!failed.exchange(true)) first_error = e.what();
            }
        }
    };

    const int n_threads = std::min(spec.workers, n_tasks);
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_threads));
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failed.load()) throw std::runtime_error("run_experiment: " + first_error);
    return rows;
}

inline void emit_results(const std::vector<ResultRow>& rows, const ExperimentSpec& spec, std::ostream& os) {
    if (spec.format == "json")
        emit_json(rows, os);
    else
        emit_csv(rows, os);
}

}  // namespace passopt
