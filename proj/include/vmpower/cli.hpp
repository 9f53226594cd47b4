#pragma once

// Subcommand implementations behind the `vmpower` binary. Each returns a
// process exit code and writes to the streams it is given.

#include "vmpower/config.hpp"
#include "vmpower/criticality.hpp"
#include "vmpower/oversub.hpp"
#include "vmpower/sim.hpp"
#include "vmpower/trace.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace vmpower::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kFailure = 1, kBadInput = 2, kInfeasibleBudget = 3, kNoFeasibleBudget = 4 };

constexpr const char* kOutputDirEnv = "VMPOWER_OUTPUT_DIR";

/// Malformed user input, reported with a line number when one applies.
class InputError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep)
{
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, sep)) out.push_back(cell);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

inline std::string trim(std::string s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& text, const std::string& where)
{
    const std::string t = trim(text);
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(v))
        throw InputError(where + ": '" + t + "' is not a finite number");
    return v;
}

inline bool looks_like_header(const std::string& first_cell)
{
    const std::string t = trim(first_cell);
    return !t.empty() && (std::isalpha(static_cast<unsigned char>(t[0])) != 0);
}

inline std::ofstream open_out(const fs::path& p)
{
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p);
    if (!os) throw Error("cannot write '" + p.string() + "'");
    return os;
}

inline std::string hex64(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

} // namespace detail

// ---------------------------------------------------------------------------
// classify

struct ClassifyOptions {
    std::string input;
    double threshold = 0.72;
    double compare12_threshold = 0.72;
    bool gate_compare12 = true;
    int cadence_s = 1800;
    bool per_day_trim = false;
};

struct ParsedSeries {
    criticality::UtilizationSeries series;
    int dropped_trailing = 0; // readings in an incomplete final day
    int skipped_days = 0;     // whole days absent between readings
};

/// `timestamp,utilization` rows at a fixed cadence (seconds). Days are
/// counted from the first reading. Whole missing days are skipped; a missing
/// reading inside a day is an error. An incomplete final day is dropped.
inline ParsedSeries read_utilization_csv(std::istream& is, int cadence_s)
{
    if (cadence_s <= 0 || 86400 % cadence_s != 0) throw InputError("cadence must divide one day");
    const long per_day = 86400 / cadence_s;
    std::string line;
    int lineno = 0;
    bool seen_row = false;
    long long t0 = 0, prev_slot = -1;
    std::vector<double> values;
    std::vector<double> day;
    long current_day = -1;
    ParsedSeries out;

    auto flush_day = [&] {
        if (static_cast<long>(day.size()) == per_day) values.insert(values.end(), day.begin(), day.end());
        day.clear();
    };

    while (std::getline(is, line)) {
        ++lineno;
        const std::string where = "line " + std::to_string(lineno);
        if (detail::trim(line).empty() || detail::trim(line)[0] == '#') continue;
        const auto f = detail::split(line, ',');
        if (!seen_row && detail::looks_like_header(f[0])) continue;
        if (f.size() != 2) throw InputError(where + ": expected 2 fields (timestamp,utilization), got " + std::to_string(f.size()));
        const double ts = detail::parse_number(f[0], where);
        const double u = detail::parse_number(f[1], where);
        if (!(u >= 0.0 && u <= 1.0)) throw InputError(where + ": utilization " + detail::trim(f[1]) + " outside [0,1]");
        const long long t = std::llround(ts);
        if (!seen_row) {
            t0 = t;
            seen_row = true;
        }
        if ((t - t0) % cadence_s != 0)
            throw InputError(where + ": timestamp " + std::to_string(t) + " is off the " + std::to_string(cadence_s) + " s cadence");
        const long long slot = (t - t0) / cadence_s;
        if (slot <= prev_slot) throw InputError(where + ": timestamps must be strictly increasing");
        const long d = static_cast<long>(slot / per_day);
        if (d != current_day) {
            if (current_day >= 0) {
                if (static_cast<long>(day.size()) != per_day)
                    throw InputError(where + ": day " + std::to_string(current_day) + " has " +
                                     std::to_string(day.size()) + " of " + std::to_string(per_day) + " readings");
                flush_day();
                out.skipped_days += static_cast<int>(d - current_day - 1);
            }
            if (slot % per_day != 0)
                throw InputError(where + ": gap that is not a whole number of days");
            current_day = d;
        } else if (slot != prev_slot + 1) {
            throw InputError(where + ": missing readings inside day " + std::to_string(d));
        }
        day.push_back(u);
        prev_slot = slot;
    }
    if (!seen_row) throw InputError("no readings");
    if (static_cast<long>(day.size()) == per_day) flush_day();
    else out.dropped_trailing = static_cast<int>(day.size());
    out.series = criticality::UtilizationSeries(std::move(values), static_cast<int>(cadence_s / 60));
    return out;
}

inline std::string format_classification(const criticality::Classification& c)
{
    std::ostringstream os;
    os << to_string(c.label);
    if (c.scores.too_short) {
        os << " (series too short)";
        return os.str();
    }
    if (c.scores.zero_variance) {
        os << " (zero variance)";
        return os.str();
    }
    os << std::fixed << std::setprecision(4) << " compare8=" << c.scores.compare8 << " compare12=" << c.scores.compare12;
    if (c.scores.degenerate) os << " (degenerate)";
    return os.str();
}

inline int cmd_classify(const ClassifyOptions& opt, std::ostream& out, std::ostream& err)
{
    try {
        if (opt.cadence_s % 60 != 0) throw InputError("cadence must be a whole number of minutes");
        std::ifstream in(opt.input);
        if (!in) throw InputError("cannot open '" + opt.input + "'");
        ParsedSeries p = read_utilization_csv(in, opt.cadence_s);
        if (p.dropped_trailing > 0)
            err << "note: dropped " << p.dropped_trailing << " readings of an incomplete final day\n";
        if (p.skipped_days > 0) err << "note: " << p.skipped_days << " missing whole days skipped\n";
        criticality::ClassifierOptions co;
        co.threshold = opt.threshold;
        co.compare12_threshold = opt.compare12_threshold;
        co.gate_compare12 = opt.gate_compare12;
        co.trim = opt.per_day_trim ? criticality::TrimScope::PerDay : criticality::TrimScope::Global;
        out << format_classification(criticality::classify(p.series, co)) << "\n";
        return kOk;
    } catch (const Error& e) {
        err << "error: " << opt.input << ": " << e.what() << "\n";
        return kBadInput;
    }
}

// ---------------------------------------------------------------------------
// generate-trace

struct GenerateTraceOptions {
    std::string config;
    std::vector<std::string> overrides;
    std::string output; // empty = standard output
};

inline int cmd_generate_trace(const GenerateTraceOptions& opt, std::ostream& out, std::ostream& err)
{
    config::RunConfig rc;
    try {
        rc = config::load(opt.config, opt.overrides);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kBadInput;
    }
    const trace::Trace tr = trace::generate_trace(sim::effective_trace_spec(rc.sim));
    if (opt.output.empty()) {
        trace::write_trace_csv(out, tr);
    } else {
        std::ofstream os = detail::open_out(opt.output);
        trace::write_trace_csv(os, tr);
        err << "wrote " << tr.vms.size() << " VMs to " << opt.output << "\n";
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    std::optional<std::string> trace_file;
    // `key=v1,v2,...`: one run per value, each in its own subdirectory.
    std::optional<std::string> sweep;
    int jobs = 1;
    bool quiet = false;
};

/// Fleet estimates the budget command needs alongside the draw history.
inline json history_json(const sim::SimResult& r, const sim::SimConfig& cfg)
{
    json j = {{"allocated_cores_per_chassis",
               r.metrics.avg_core_occupancy * cfg.topology.schedulable_cores() * cfg.topology.blades_per_chassis},
              {"servers_per_chassis", cfg.topology.blades_per_chassis},
              {"cores_per_server", cfg.topology.cores_per_blade},
              {"server_peak_w", cfg.power.peak_w}};
    if (r.allocations.empty()) {
        j["beta"] = nullptr;
        j["util_uf"] = nullptr;
        j["util_nuf"] = nullptr;
    } else {
        const oversub::HistoryEstimates e = oversub::estimate_history(r.allocations);
        j["beta"] = e.beta;
        j["util_uf"] = e.util_uf;
        j["util_nuf"] = e.util_nuf;
    }
    return j;
}

inline void write_capping_events_csv(std::ostream& os, std::span<const capping::CappingEvent> events)
{
    os << "chassis_id,start_ms,end_ms,trigger_draw_w,max_draw_w,min_freq_low_priority,min_freq_production_nuf,"
          "min_freq_protected,rapl_engaged,psu_alert,infeasible,uf_affected,nuf_affected,over_budget_ms,"
          "max_consecutive_over_ms,protection_violations,uf_throttled_core_seconds,nuf_throttled_core_seconds\n";
    os << std::setprecision(10);
    for (const capping::CappingEvent& e : events)
        os << e.chassis << ',' << e.start_ms << ',' << e.end_ms << ',' << e.trigger_draw_w << ',' << e.max_draw_w << ','
           << e.min_frequency[0] << ',' << e.min_frequency[1] << ',' << e.min_frequency[2] << ',' << e.rapl_engaged << ','
           << e.psu_alert << ',' << e.infeasible << ',' << e.uf_affected << ',' << e.nuf_affected << ','
           << e.over_budget_ms << ',' << e.max_consecutive_over_ms << ',' << e.protection_violations << ','
           << e.uf_throttled_core_seconds << ',' << e.nuf_throttled_core_seconds << "\n";
}

/// Full-frequency demand per chassis and slot, in the format `budget` reads.
inline void write_draws_csv(std::ostream& os, std::span<const sim::DrawSample> draws)
{
    os << "chassis_id,timestamp,watts\n" << std::setprecision(10);
    for (const sim::DrawSample& d : draws)
        os << d.chassis << ',' << static_cast<double>(d.t_ms) / kMillisPerSecond << ',' << d.demand_w << "\n";
}

inline void write_ticks_csv(std::ostream& os, std::span<const sim::TickSample> ticks)
{
    os << "t_ms,chassis_id,draw_w,alert,psu_alert,over_budget,rapl_active,protection_violations\n" << std::setprecision(10);
    for (const sim::TickSample& t : ticks)
        os << t.t_ms << ',' << t.chassis << ',' << t.report.chassis_draw_w << ',' << t.report.alert << ','
           << t.report.psu_alert << ',' << t.report.over_budget << ',' << t.report.rapl_active << ','
           << t.report.protection_violations << "\n";
}

inline void write_event_log_csv(std::ostream& os, std::span<const sim::LogEntry> log)
{
    os << "t_ms,kind,deployment_id,vm_id,server\n";
    for (const sim::LogEntry& e : log)
        os << e.t_ms << ',' << sim::to_string(e.kind) << ',' << e.deployment_id << ',' << e.vm_id << ',' << e.server << "\n";
}

inline void print_metrics_table(std::ostream& os, const sim::SimMetrics& m)
{
    auto row = [&](const char* k, const auto& v) { os << "  " << std::left << std::setw(32) << k << v << "\n"; };
    os << std::setprecision(6);
    row("seed", m.seed);
    row("config_hash", detail::hex64(m.config_hash));
    row("deployments", m.deployments);
    row("deployment_failure_rate", m.deployment_failure_rate);
    row("avg_core_occupancy", m.avg_core_occupancy);
    row("avg_empty_server_ratio", m.avg_empty_server_ratio);
    row("stddev_avg_chassis_score", m.stddev_avg_chassis_score);
    row("stddev_avg_server_score", m.stddev_avg_server_score);
    row("capping_events", m.capping_events);
    row("uf_capping_events", m.uf_capping_events);
    row("nuf_capping_events", m.nuf_capping_events);
    row("uf_throttled_core_seconds", m.uf_throttled_core_seconds);
    row("nuf_throttled_core_seconds", m.nuf_throttled_core_seconds);
}

/// Runs one configuration and writes every configured output under `dir`.
inline sim::SimMetrics simulate_one(const config::RunConfig& rc, const fs::path& dir, const trace::Trace* pre)
{
    sim::SimResult r = sim::run(rc.sim, pre);
    r.metrics.config_hash = config::config_hash(rc);
    fs::create_directories(dir);
    {
        std::ofstream os = detail::open_out(dir / rc.output.metrics);
        os << config::to_json(r.metrics).dump(2) << "\n";
    }
    {
        std::ofstream os = detail::open_out(dir / rc.output.capping_events);
        write_capping_events_csv(os, r.capping_events);
    }
    if (!rc.output.history.empty()) {
        std::ofstream os = detail::open_out(dir / rc.output.history);
        os << history_json(r, rc.sim).dump(2) << "\n";
    }
    if (!rc.output.draws.empty()) {
        std::ofstream os = detail::open_out(dir / rc.output.draws);
        write_draws_csv(os, r.draws);
    }
    if (!rc.output.ticks.empty()) {
        std::ofstream os = detail::open_out(dir / rc.output.ticks);
        write_ticks_csv(os, r.ticks);
    }
    if (!rc.output.event_log.empty()) {
        std::ofstream os = detail::open_out(dir / rc.output.event_log);
        write_event_log_csv(os, r.log);
    }
    return r.metrics;
}

inline std::string metrics_csv_header()
{
    return "run,seed,config_hash,deployments,deployment_failure_rate,avg_core_occupancy,avg_empty_server_ratio,"
           "stddev_avg_chassis_score,stddev_avg_server_score,capping_events,uf_capping_events,nuf_capping_events,"
           "uf_throttled_core_seconds,nuf_throttled_core_seconds";
}

inline std::string metrics_csv_row(const std::string& run, const sim::SimMetrics& m)
{
    std::ostringstream os;
    os << std::setprecision(10) << run << ',' << m.seed << ',' << detail::hex64(m.config_hash) << ',' << m.deployments
       << ',' << m.deployment_failure_rate << ',' << m.avg_core_occupancy << ',' << m.avg_empty_server_ratio << ','
       << m.stddev_avg_chassis_score << ',' << m.stddev_avg_server_score << ',' << m.capping_events << ','
       << m.uf_capping_events << ',' << m.nuf_capping_events << ',' << m.uf_throttled_core_seconds << ','
       << m.nuf_throttled_core_seconds;
    return os.str();
}

inline int cmd_simulate(const SimulateOptions& opt, std::ostream& out, std::ostream& err)
{
    std::vector<std::string> overrides = opt.overrides;
    if (opt.seed) overrides.push_back("seed=" + std::to_string(*opt.seed));

    std::string sweep_key;
    std::vector<std::string> sweep_values;
    if (opt.sweep) {
        const auto eq = opt.sweep->find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == opt.sweep->size()) {
            err << "error: --sweep expects key=v1,v2,...\n";
            return kBadInput;
        }
        sweep_key = opt.sweep->substr(0, eq);
        sweep_values = detail::split(opt.sweep->substr(eq + 1), ',');
    }

    // Load every variant first so config errors surface before any run.
    std::vector<std::pair<std::string, config::RunConfig>> runs;
    try {
        if (sweep_values.empty()) {
            runs.emplace_back("", config::load(opt.config, overrides));
        } else {
            for (const std::string& v : sweep_values) {
                std::vector<std::string> ov = overrides;
                ov.push_back(sweep_key + "=" + v);
                runs.emplace_back(sweep_key + "=" + v, config::load(opt.config, ov));
            }
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kBadInput;
    }

    std::string base = runs.front().second.output.dir;
    if (const char* env = std::getenv(kOutputDirEnv); env && *env) base = env;
    if (opt.output_dir) base = *opt.output_dir;

    std::optional<trace::Trace> pre;
    const std::optional<std::string> trace_file = opt.trace_file ? opt.trace_file : runs.front().second.trace_file;
    if (trace_file) {
        std::ifstream in(*trace_file);
        if (!in) {
            err << "error: cannot open trace '" << *trace_file << "'\n";
            return kBadInput;
        }
        try {
            pre = trace::read_trace_csv(in);
        } catch (const Error& e) {
            err << "error: " << *trace_file << ": " << e.what() << "\n";
            return kBadInput;
        }
    }

    try {
        // An infeasible budget is a startup error; check before spawning runs.
        for (const auto& [name, rc] : runs) {
            const auto& c = rc.sim.capping;
            if (c.enabled)
                for (int ch = 0; ch < rc.sim.topology.chassis_count(); ++ch)
                    capping::check_budget_feasible(rc.sim.power, c.manager.chassis_budget_w,
                                                   rc.sim.topology.blades_per_chassis, ch);
        }

        std::vector<sim::SimMetrics> metrics(runs.size());
        const std::size_t jobs = static_cast<std::size_t>(std::max(1, opt.jobs));
        for (std::size_t start = 0; start < runs.size(); start += jobs) {
            std::vector<std::future<sim::SimMetrics>> batch;
            for (std::size_t i = start; i < std::min(runs.size(), start + jobs); ++i) {
                const fs::path dir = runs[i].first.empty() ? fs::path(base) : fs::path(base) / runs[i].first;
                const config::RunConfig* rc = &runs[i].second;
                const trace::Trace* tr = pre ? &*pre : nullptr;
                batch.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred,
                                           [rc, dir, tr] { return simulate_one(*rc, dir, tr); }));
            }
            for (std::size_t k = 0; k < batch.size(); ++k) metrics[start + k] = batch[k].get();
        }

        if (runs.size() == 1) {
            if (!opt.quiet) {
                out << "metrics written to " << (fs::path(base) / runs.front().second.output.metrics).string() << "\n";
                print_metrics_table(out, metrics.front());
            }
        } else {
            std::ofstream os = detail::open_out(fs::path(base) / "sweep.csv");
            os << metrics_csv_header() << "\n";
            for (std::size_t i = 0; i < runs.size(); ++i) os << metrics_csv_row(runs[i].first, metrics[i]) << "\n";
            if (!opt.quiet) {
                out << metrics_csv_header() << "\n";
                for (std::size_t i = 0; i < runs.size(); ++i) out << metrics_csv_row(runs[i].first, metrics[i]) << "\n";
            }
        }
        return kOk;
    } catch (const capping::InfeasibleBudget& e) {
        err << "error: infeasible budget: " << e.what() << "\n";
        return kInfeasibleBudget;
    } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << "\n";
        return kBadInput;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
}

// ---------------------------------------------------------------------------
// budget

struct BudgetOptions {
    std::string draws;
    std::optional<std::string> config;  // policy, delta and power model from here
    std::vector<std::string> overrides;
    std::optional<std::string> history; // history.json from simulate
    std::optional<int> chassis;         // restrict to one chassis id
    std::optional<double> emax_uf, emax_nuf, fmin_uf, fmin_nuf, buffer, delta_w, provisioned_w;
    std::optional<bool> full_server;
    std::optional<double> beta, util_uf, util_nuf, allocated_cores;
    std::optional<int> shave_list_limit;
    std::string output; // empty = standard output
};

/// `chassis_id,timestamp,watts`; an optional header line is skipped.
inline std::vector<double> read_draws_csv(std::istream& is, std::optional<int> chassis)
{
    std::vector<double> out;
    std::string line;
    int lineno = 0;
    bool seen = false;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string where = "line " + std::to_string(lineno);
        if (detail::trim(line).empty() || detail::trim(line)[0] == '#') continue;
        const auto f = detail::split(line, ',');
        if (!seen && detail::looks_like_header(f[0])) {
            seen = true;
            continue;
        }
        seen = true;
        if (f.size() != 3) throw InputError(where + ": expected 3 fields (chassis_id,timestamp,watts), got " + std::to_string(f.size()));
        const double id = detail::parse_number(f[0], where);
        if (id != std::floor(id) || id < 0) throw InputError(where + ": chassis_id must be a nonnegative integer");
        (void)detail::parse_number(f[1], where);
        const double w = detail::parse_number(f[2], where);
        if (!(w > 0.0)) throw InputError(where + ": watts must be positive");
        if (chassis && static_cast<int>(id) != *chassis) continue;
        out.push_back(w);
    }
    if (out.empty()) throw InputError("no draw readings");
    return out;
}

inline int cmd_budget(const BudgetOptions& opt, std::ostream& out, std::ostream& err)
{
    oversub::OversubPolicy policy;
    oversub::SearchOptions search;
    oversub::HistoryEstimates est;
    oversub::ChassisComposition comp;
    power::ServerPowerSpec spec;
    std::vector<double> draws;
    try {
        if (opt.config) {
            const config::RunConfig rc = config::load(*opt.config, opt.overrides);
            policy = rc.oversub;
            search = rc.search;
            spec = rc.sim.power;
            comp.servers = rc.sim.topology.blades_per_chassis;
            comp.cores_per_server = rc.sim.topology.cores_per_blade;
            comp.server_peak_w = spec.peak_w;
            comp.allocated_cores = rc.sim.trace.target_occupancy * rc.sim.topology.schedulable_cores() * comp.servers;
        } else if (!opt.overrides.empty()) {
            throw InputError("--set requires --config");
        }
        if (opt.history) {
            const json h = config::read_json_file(*opt.history);
            auto num = [&](const char* k, double& dst) {
                if (h.contains(k) && h[k].is_number()) dst = h[k].get<double>();
            };
            num("beta", est.beta);
            num("util_uf", est.util_uf);
            num("util_nuf", est.util_nuf);
            num("allocated_cores_per_chassis", comp.allocated_cores);
            num("server_peak_w", comp.server_peak_w);
            if (h.contains("servers_per_chassis")) comp.servers = h["servers_per_chassis"].get<int>();
        }
        if (opt.emax_uf) policy.emax_uf = *opt.emax_uf;
        if (opt.emax_nuf) policy.emax_nuf = *opt.emax_nuf;
        if (opt.fmin_uf) policy.fmin_uf = *opt.fmin_uf;
        if (opt.fmin_nuf) policy.fmin_nuf = *opt.fmin_nuf;
        if (opt.buffer) policy.buffer = *opt.buffer;
        if (opt.full_server) policy.full_server = *opt.full_server;
        if (opt.delta_w) search.delta_w = *opt.delta_w;
        if (opt.provisioned_w) search.provisioned_w = *opt.provisioned_w;
        if (opt.shave_list_limit) {
            if (*opt.shave_list_limit < 0) throw InputError("--shave-list-limit must be >= 0");
            search.shave_list_limit = static_cast<std::size_t>(*opt.shave_list_limit);
        }
        if (opt.beta) est.beta = *opt.beta;
        if (opt.util_uf) est.util_uf = *opt.util_uf;
        if (opt.util_nuf) est.util_nuf = *opt.util_nuf;
        if (opt.allocated_cores) comp.allocated_cores = *opt.allocated_cores;
        if (!(search.delta_w > 0.0)) throw InputError("delta must be positive");
        if (!(comp.allocated_cores >= 0.0)) throw InputError("allocated cores must be nonnegative");
        policy.validate();
        est.validate();

        std::ifstream in(opt.draws);
        if (!in) throw InputError("cannot open '" + opt.draws + "'");
        try {
            draws = read_draws_csv(in, opt.chassis);
        } catch (const InputError& e) {
            throw InputError(opt.draws + ": " + e.what());
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kBadInput;
    }

    try {
        const oversub::PowerCurves curves = oversub::make_curves(spec, est);
        const oversub::BudgetResult r = oversub::find_min_budget(draws, policy, est, curves, comp, search);
        const std::string text = config::to_json(r, policy, est).dump(2);
        if (opt.output.empty()) {
            out << text << "\n";
        } else {
            std::ofstream os = detail::open_out(opt.output);
            os << text << "\n";
        }
        return kOk;
    } catch (const oversub::NoFeasibleBudget& e) {
        err << "error: no feasible budget: " << e.what() << "\n";
        return kNoFeasibleBudget;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kBadInput;
    }
}

// ---------------------------------------------------------------------------
// report

struct ReportOptions {
    std::vector<std::string> inputs; // metrics files or directories holding them
    bool csv = false;
    std::string metrics_name = "metrics.json";
};

inline sim::SimMetrics metrics_from_json(const json& j)
{
    sim::SimMetrics m;
    try {
        m.seed = j.at("seed").get<std::uint64_t>();
        m.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
        m.horizon_days = j.at("horizon_days").get<double>();
        m.deployments = j.at("deployments").get<long>();
        m.failed_deployments = j.at("failed_deployments").get<long>();
        m.deployment_failure_rate = j.at("deployment_failure_rate").get<double>();
        m.vms_arrived = j.at("vms_arrived").get<long>();
        m.vms_placed = j.at("vms_placed").get<long>();
        m.avg_core_occupancy = j.at("avg_core_occupancy").get<double>();
        m.avg_empty_server_ratio = j.at("avg_empty_server_ratio").get<double>();
        m.mean_avg_chassis_score = j.at("mean_avg_chassis_score").get<double>();
        m.stddev_avg_chassis_score = j.at("stddev_avg_chassis_score").get<double>();
        m.mean_avg_server_score = j.at("mean_avg_server_score").get<double>();
        m.stddev_avg_server_score = j.at("stddev_avg_server_score").get<double>();
        const json& c = j.at("capping");
        m.capping_events = c.at("events").get<long>();
        m.uf_capping_events = c.at("uf_events").get<long>();
        m.nuf_capping_events = c.at("nuf_events").get<long>();
        m.rapl_capping_events = c.at("rapl_events").get<long>();
        m.uf_throttled_core_seconds = c.at("uf_throttled_core_seconds").get<double>();
        m.nuf_throttled_core_seconds = c.at("nuf_throttled_core_seconds").get<double>();
        m.max_consecutive_over_budget_ms = c.at("max_consecutive_over_budget_ms").get<SimMillis>();
        m.protection_violations = c.at("protection_violations").get<long>();
        m.draw_samples = c.at("draw_samples").get<long>();
        m.demand_over_budget_fraction = c.at("demand_over_budget_fraction").get<double>();
    } catch (const json::exception& e) {
        throw InputError(std::string("metrics file: ") + e.what());
    } catch (const std::logic_error& e) {
        throw InputError(std::string("metrics file: bad config_hash: ") + e.what());
    }
    return m;
}

inline int cmd_report(const ReportOptions& opt, std::ostream& out, std::ostream& err)
{
    std::vector<std::pair<std::string, fs::path>> files;
    for (const std::string& in : opt.inputs) {
        const fs::path p(in);
        if (fs::is_directory(p)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::recursive_directory_iterator(p))
                if (e.is_regular_file() && e.path().filename() == opt.metrics_name) found.push_back(e.path());
            std::sort(found.begin(), found.end());
            for (const fs::path& f : found) {
                std::string run = fs::relative(f.parent_path(), p).generic_string();
                files.emplace_back(run == "." ? p.filename().string() : run, f);
            }
        } else {
            files.emplace_back(p.parent_path().filename().string(), p);
        }
    }
    if (files.empty()) {
        err << "error: no metrics files found\n";
        return kBadInput;
    }
    std::vector<std::pair<std::string, sim::SimMetrics>> rows;
    try {
        for (const auto& [run, f] : files) rows.emplace_back(run, metrics_from_json(config::read_json_file(f.string())));
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kBadInput;
    }
    if (opt.csv) {
        out << metrics_csv_header() << "\n";
        for (const auto& [run, m] : rows) out << metrics_csv_row(run, m) << "\n";
        return kOk;
    }
    out << std::left << std::setw(24) << "run" << std::right << std::setw(8) << "seed" << std::setw(12) << "fail%"
        << std::setw(11) << "occupancy" << std::setw(10) << "empty%" << std::setw(13) << "sd(chassis)" << std::setw(12)
        << "sd(server)" << std::setw(9) << "capping" << "\n";
    out << std::fixed;
    for (const auto& [run, m] : rows)
        out << std::left << std::setw(24) << (run.empty() ? "-" : run) << std::right << std::setw(8) << m.seed
            << std::setw(12) << std::setprecision(3) << 100.0 * m.deployment_failure_rate << std::setw(11)
            << std::setprecision(4) << m.avg_core_occupancy << std::setw(10) << std::setprecision(2)
            << 100.0 * m.avg_empty_server_ratio << std::setw(13) << std::setprecision(4) << m.stddev_avg_chassis_score
            << std::setw(12) << m.stddev_avg_server_score << std::setw(9) << m.capping_events << "\n";
    return kOk;
}

} // namespace vmpower::cli
