#pragma once

// JSON run configuration: parsing with unknown-key rejection, dotted-path
// overrides, canonical serialization and the config hash.

#include "vmpower/common.hpp"
#include "vmpower/oversub.hpp"
#include "vmpower/sim.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace vmpower::config {

using nlohmann::json;

class ConfigError : public Error {
public:
    using Error::Error;
};

constexpr int kSchemaVersion = 1;

struct OutputConfig {
    std::string dir = "out";
    std::string metrics = "metrics.json";
    std::string capping_events = "capping_events.csv";
    std::string history = "history.json";
    std::string draws;     // empty = not written
    std::string ticks;     // empty = not written
    std::string event_log; // empty = not written
};

struct RunConfig {
    sim::SimConfig sim;
    oversub::OversubPolicy oversub;
    oversub::SearchOptions search;
    OutputConfig output;
    std::optional<std::string> trace_file;
    // Half-frequency full-load blade power used to fit the exponent.
    double peak_half_freq_w = 169.0;
};

namespace detail {

/// Typed reads from one JSON object; remembers which keys were consumed.
class Section {
public:
    Section(const json* j, std::string path) : j_(j), path_(std::move(path))
    {
        if (j_ && !j_->is_object()) throw ConfigError(where() + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out)
    {
        const json* v = find(key);
        if (!v) return;
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v->is_number()) throw ConfigError(where(key) + " must be a number");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v->is_boolean()) throw ConfigError(where(key) + " must be a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v->is_number_integer()) throw ConfigError(where(key) + " must be an integer");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v->is_string()) throw ConfigError(where(key) + " must be a string");
            }
            out = v->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where(key) + ": " + e.what());
        }
    }

    // Number or null (null reads as +infinity).
    void get_limit(const char* key, double& out)
    {
        const json* v = find(key);
        if (!v) return;
        if (v->is_null()) out = std::numeric_limits<double>::infinity();
        else if (v->is_number()) out = v->get<double>();
        else throw ConfigError(where(key) + " must be a number or null");
    }

    const json* raw(const char* key) { return find(key); }

    Section sub(const char* key) { return Section(find(key), path_.empty() ? key : path_ + "." + key); }

    void finish() const
    {
        if (!j_) return;
        for (auto it = j_->begin(); it != j_->end(); ++it)
            if (!used_.count(it.key())) throw ConfigError("unknown key '" + (path_.empty() ? "" : path_ + ".") + it.key() + "'");
    }

    std::string where(const char* key = nullptr) const
    {
        std::string p = path_;
        if (key) p = p.empty() ? key : p + "." + key;
        return "config key '" + (p.empty() ? std::string("<root>") : p) + "'";
    }

private:
    const json* find(const char* key)
    {
        if (!j_) return nullptr;
        auto it = j_->find(key);
        if (it == j_->end()) return nullptr;
        used_.insert(key);
        return &*it;
    }

    const json* j_;
    std::string path_;
    std::set<std::string> used_;
};

inline trace::RangeDistribution read_distribution(const json& j, const std::string& where, bool integer)
{
    if (!j.is_array() || j.empty()) throw ConfigError(where + " must be a nonempty array");
    trace::RangeDistribution d;
    d.integer = integer;
    for (std::size_t i = 0; i < j.size(); ++i) {
        Section s(&j[i], where + "[" + std::to_string(i) + "]");
        trace::RangeMass b;
        std::optional<double> value;
        if (s.raw("value")) {
            double v = 0;
            s.get("value", v);
            value = v;
        }
        s.get("lo", b.lo);
        s.get("hi", b.hi);
        if (value) b.lo = b.hi = *value;
        s.get("mass", b.mass);
        s.finish();
        d.bins.push_back(b);
    }
    return d;
}

inline json write_distribution(const trace::RangeDistribution& d)
{
    json a = json::array();
    for (const trace::RangeMass& b : d.bins) {
        if (b.lo == b.hi) a.push_back({{"value", b.lo}, {"mass", b.mass}});
        else a.push_back({{"lo", b.lo}, {"hi", b.hi}, {"mass", b.mass}});
    }
    return a;
}

inline std::vector<double> read_buckets(const json& j, const std::string& where)
{
    if (!j.is_array()) throw ConfigError(where + " must be an array");
    std::vector<double> v;
    for (const json& x : j) {
        if (!x.is_number()) throw ConfigError(where + " entries must be numbers");
        v.push_back(x.get<double>());
    }
    return v;
}

} // namespace detail

/// Reads a config object. Unknown keys and type mismatches throw ConfigError;
/// semantic validation happens in validate().
inline RunConfig from_json(const json& j)
{
    using detail::Section;
    RunConfig rc;
    Section root(&j, "");
    int version = 0;
    root.get("schema_version", version);
    if (version != kSchemaVersion)
        throw ConfigError("schema_version must be " + std::to_string(kSchemaVersion) + ", got " + std::to_string(version));
    root.get("seed", rc.sim.seed);

    {
        Section s = root.sub("topology");
        auto& t = rc.sim.topology;
        s.get("racks", t.racks);
        s.get("chassis_per_rack", t.chassis_per_rack);
        s.get("blades_per_chassis", t.blades_per_chassis);
        s.get("cores_per_blade", t.cores_per_blade);
        s.get("reserved_cores", t.reserved_cores);
        s.get("memory_gb_per_blade", t.memory_gb_per_blade);
        s.finish();
    }
    {
        Section s = root.sub("trace");
        auto& t = rc.sim.trace;
        if (const json* v = s.raw("vm_cores")) t.vm_cores = detail::read_distribution(*v, "trace.vm_cores", true);
        if (const json* v = s.raw("deployment_size"))
            t.deployment_size = detail::read_distribution(*v, "trace.deployment_size", true);
        if (const json* v = s.raw("lifetime_hours"))
            t.lifetime_hours = detail::read_distribution(*v, "trace.lifetime_hours", false);
        s.get("uf_fraction", t.uf_fraction);
        if (const json* v = s.raw("uf_p95_buckets")) t.uf_p95_buckets = detail::read_buckets(*v, "trace.uf_p95_buckets");
        if (const json* v = s.raw("nuf_p95_buckets")) t.nuf_p95_buckets = detail::read_buckets(*v, "trace.nuf_p95_buckets");
        s.get("subscriptions", t.subscriptions);
        s.get("uf_heavy_subscription_share", t.uf_heavy_subscription_share);
        s.get("uf_heavy_propensity", t.uf_heavy_propensity);
        s.get("memory_gb_per_core", t.memory_gb_per_core);
        s.get("deployments_per_hour", t.deployments_per_hour);
        s.get("target_occupancy", t.target_occupancy);
        s.get("warmup_days", t.warmup_days);
        s.get("horizon_days", t.horizon_days);
        if (s.raw("file")) {
            std::string f;
            s.get("file", f);
            if (!f.empty()) rc.trace_file = f;
        }
        s.finish();
    }
    {
        Section s = root.sub("scheduler");
        s.get("alpha", rc.sim.scheduler.alpha);
        s.get("packing_rule_weight", rc.sim.scheduler.packing_rule_weight);
        s.get("power_rule_weight", rc.sim.scheduler.power_rule_weight);
        s.finish();
    }
    {
        Section s = root.sub("prediction");
        auto& p = rc.sim.prediction;
        s.get("provider", p.kind);
        s.get("min_confidence", p.min_confidence);
        Section n = s.sub("noisy");
        n.get("uf_recall", p.noisy.uf_recall);
        n.get("nuf_recall", p.noisy.nuf_recall);
        n.get("label_high_conf_fraction", p.noisy.label_high_conf_fraction);
        n.get("bucket_high_conf_fraction", p.noisy.bucket_high_conf_fraction);
        n.get("bucket_accuracy", p.noisy.bucket_accuracy);
        n.get("high_conf_floor", p.noisy.high_conf_floor);
        n.get("low_conf_floor", p.noisy.low_conf_floor);
        if (const json* c = n.raw("confusion")) {
            if (!c->is_null()) {
                if (!c->is_array() || c->size() != 4) throw ConfigError("prediction.noisy.confusion must be 4x4");
                std::array<std::array<double, 4>, 4> m{};
                for (std::size_t r = 0; r < 4; ++r) {
                    const auto row = detail::read_buckets((*c)[r], "prediction.noisy.confusion");
                    if (row.size() != 4) throw ConfigError("prediction.noisy.confusion must be 4x4");
                    for (std::size_t k = 0; k < 4; ++k) m[r][k] = row[k];
                }
                p.noisy.confusion = m;
            }
        }
        n.finish();
        s.finish();
    }
    {
        Section s = root.sub("power");
        auto& p = rc.sim.power;
        s.get("idle_w", p.idle_w);
        s.get("peak_w", p.peak_w);
        s.get("peak_half_freq_w", rc.peak_half_freq_w);
        s.get("f_min", p.f_min);
        s.get("pstates", rc.sim.pstates);
        s.get("host_core_utilization", rc.sim.host_core_utilization);
        s.finish();
        p.cores = rc.sim.topology.cores_per_blade;
        try {
            p.dyn_exponent = power::fit_dyn_exponent(p.idle_w, p.peak_w, rc.peak_half_freq_w, 0.5);
        } catch (const InvalidArgument& e) {
            throw ConfigError(std::string("power: ") + e.what());
        }
    }
    {
        Section s = root.sub("signal");
        auto& g = rc.sim.signal;
        int slot_s = static_cast<int>(g.slot_ms / kMillisPerSecond);
        s.get("slot_seconds", slot_s);
        g.slot_ms = static_cast<SimMillis>(slot_s) * kMillisPerSecond;
        s.get("uf_amplitude", g.uf_amplitude);
        s.get("uf_noise", g.uf_noise);
        s.get("nuf_noise", g.nuf_noise);
        s.get("nuf_burst_probability", g.nuf_burst_probability);
        s.get("nuf_burst_slots", g.nuf_burst_slots);
        s.get("nuf_burst_level", g.nuf_burst_level);
        s.get("uf_peak_hour", g.uf_peak_hour);
        s.get("uf_phase_jitter_hours", g.uf_phase_jitter_hours);
        s.finish();
    }
    {
        Section s = root.sub("capping");
        auto& c = rc.sim.capping;
        s.get("enabled", c.enabled);
        s.get_limit("chassis_budget_w", c.manager.chassis_budget_w);
        s.get("poll_interval_ms", c.manager.poll_interval_ms);
        s.get("alert_threshold_fraction", c.manager.alert_threshold_fraction);
        s.get("step_cores", c.controller.step_cores);
        s.get("cap_duration_s", c.controller.cap_duration_s);
        s.get("server_target_fraction", c.controller.server_target_fraction);
        s.get("rapl_steps_per_tick", c.controller.rapl_steps_per_tick);
        s.get("low_priority_fraction", c.low_priority_fraction);
        s.finish();
    }
    {
        Section s = root.sub("oversub");
        auto& o = rc.oversub;
        s.get("emax_uf", o.emax_uf);
        s.get("emax_nuf", o.emax_nuf);
        s.get("fmin_uf", o.fmin_uf);
        s.get("fmin_nuf", o.fmin_nuf);
        s.get("buffer", o.buffer);
        s.get("full_server", o.full_server);
        s.get("delta_w", rc.search.delta_w);
        if (const json* v = s.raw("provisioned_w")) {
            if (v->is_null()) rc.search.provisioned_w.reset();
            else if (v->is_number()) rc.search.provisioned_w = v->get<double>();
            else throw ConfigError("config key 'oversub.provisioned_w' must be a number or null");
        }
        int limit = static_cast<int>(rc.search.shave_list_limit);
        s.get("shave_list_limit", limit);
        if (limit < 0) throw ConfigError("oversub.shave_list_limit must be >= 0");
        rc.search.shave_list_limit = static_cast<std::size_t>(limit);
        s.finish();
    }
    {
        Section s = root.sub("output");
        auto& o = rc.output;
        s.get("dir", o.dir);
        s.get("metrics", o.metrics);
        s.get("capping_events", o.capping_events);
        s.get("history", o.history);
        s.get("draws", o.draws);
        s.get("ticks", o.ticks);
        s.get("event_log", o.event_log);
        s.finish();
        rc.sim.record_draws = !o.draws.empty();
        rc.sim.record_ticks = !o.ticks.empty();
    }
    root.finish();
    return rc;
}

/// Semantic checks, rethrown as ConfigError.
inline void validate(const RunConfig& rc)
{
    try {
        rc.sim.validate();
        sim::effective_trace_spec(rc.sim).validate();
        rc.oversub.validate();
        if (!(rc.search.delta_w > 0.0)) throw InvalidArgument("oversub.delta_w must be positive");
        if (rc.sim.prediction.kind == "noisy") rc.sim.prediction.noisy.validate();
        if (!(rc.sim.prediction.min_confidence >= 0.0 && rc.sim.prediction.min_confidence <= 1.0))
            throw InvalidArgument("prediction.min_confidence must be in [0,1]");
        (void)predict::make_provider(rc.sim.prediction, 0);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
}

/// Canonical form: every field, fixed key order (nlohmann sorts keys).
inline json to_json(const RunConfig& rc)
{
    const auto& s = rc.sim;
    const auto& t = s.trace;
    auto limit = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
    json noisy = {{"uf_recall", s.prediction.noisy.uf_recall},
                  {"nuf_recall", s.prediction.noisy.nuf_recall},
                  {"label_high_conf_fraction", s.prediction.noisy.label_high_conf_fraction},
                  {"bucket_high_conf_fraction", s.prediction.noisy.bucket_high_conf_fraction},
                  {"bucket_accuracy", s.prediction.noisy.bucket_accuracy},
                  {"high_conf_floor", s.prediction.noisy.high_conf_floor},
                  {"low_conf_floor", s.prediction.noisy.low_conf_floor},
                  {"confusion", nullptr}};
    if (s.prediction.noisy.confusion) noisy["confusion"] = *s.prediction.noisy.confusion;
    json j = {
        {"schema_version", kSchemaVersion},
        {"seed", s.seed},
        {"topology",
         {{"racks", s.topology.racks},
          {"chassis_per_rack", s.topology.chassis_per_rack},
          {"blades_per_chassis", s.topology.blades_per_chassis},
          {"cores_per_blade", s.topology.cores_per_blade},
          {"reserved_cores", s.topology.reserved_cores},
          {"memory_gb_per_blade", s.topology.memory_gb_per_blade}}},
        {"trace",
         {{"vm_cores", detail::write_distribution(t.vm_cores)},
          {"deployment_size", detail::write_distribution(t.deployment_size)},
          {"lifetime_hours", detail::write_distribution(t.lifetime_hours)},
          {"uf_fraction", t.uf_fraction},
          {"uf_p95_buckets", t.uf_p95_buckets},
          {"nuf_p95_buckets", t.nuf_p95_buckets},
          {"subscriptions", t.subscriptions},
          {"uf_heavy_subscription_share", t.uf_heavy_subscription_share},
          {"uf_heavy_propensity", t.uf_heavy_propensity},
          {"memory_gb_per_core", t.memory_gb_per_core},
          {"deployments_per_hour", t.deployments_per_hour},
          {"target_occupancy", t.target_occupancy},
          {"warmup_days", t.warmup_days},
          {"horizon_days", t.horizon_days},
          {"file", rc.trace_file.value_or("")}}},
        {"scheduler",
         {{"alpha", s.scheduler.alpha},
          {"packing_rule_weight", s.scheduler.packing_rule_weight},
          {"power_rule_weight", s.scheduler.power_rule_weight}}},
        {"prediction", {{"provider", s.prediction.kind}, {"min_confidence", s.prediction.min_confidence}, {"noisy", noisy}}},
        {"power",
         {{"idle_w", s.power.idle_w},
          {"peak_w", s.power.peak_w},
          {"peak_half_freq_w", rc.peak_half_freq_w},
          {"f_min", s.power.f_min},
          {"pstates", s.pstates},
          {"host_core_utilization", s.host_core_utilization}}},
        {"signal",
         {{"slot_seconds", static_cast<int>(s.signal.slot_ms / kMillisPerSecond)},
          {"uf_amplitude", s.signal.uf_amplitude},
          {"uf_noise", s.signal.uf_noise},
          {"nuf_noise", s.signal.nuf_noise},
          {"nuf_burst_probability", s.signal.nuf_burst_probability},
          {"nuf_burst_slots", s.signal.nuf_burst_slots},
          {"nuf_burst_level", s.signal.nuf_burst_level},
          {"uf_peak_hour", s.signal.uf_peak_hour},
          {"uf_phase_jitter_hours", s.signal.uf_phase_jitter_hours}}},
        {"capping",
         {{"enabled", s.capping.enabled},
          {"chassis_budget_w", limit(s.capping.manager.chassis_budget_w)},
          {"poll_interval_ms", s.capping.manager.poll_interval_ms},
          {"alert_threshold_fraction", s.capping.manager.alert_threshold_fraction},
          {"step_cores", s.capping.controller.step_cores},
          {"cap_duration_s", s.capping.controller.cap_duration_s},
          {"server_target_fraction", s.capping.controller.server_target_fraction},
          {"rapl_steps_per_tick", s.capping.controller.rapl_steps_per_tick},
          {"low_priority_fraction", s.capping.low_priority_fraction}}},
        {"oversub",
         {{"emax_uf", rc.oversub.emax_uf},
          {"emax_nuf", rc.oversub.emax_nuf},
          {"fmin_uf", rc.oversub.fmin_uf},
          {"fmin_nuf", rc.oversub.fmin_nuf},
          {"buffer", rc.oversub.buffer},
          {"full_server", rc.oversub.full_server},
          {"delta_w", rc.search.delta_w},
          {"provisioned_w", rc.search.provisioned_w ? json(*rc.search.provisioned_w) : json(nullptr)},
          {"shave_list_limit", rc.search.shave_list_limit}}},
        {"output",
         {{"dir", rc.output.dir},
          {"metrics", rc.output.metrics},
          {"capping_events", rc.output.capping_events},
          {"history", rc.output.history},
          {"draws", rc.output.draws},
          {"ticks", rc.output.ticks},
          {"event_log", rc.output.event_log}}},
    };
    return j;
}

/// Hash of the canonical config, excluding the output section (where results
/// go does not change them).
inline std::uint64_t config_hash(const RunConfig& rc)
{
    json j = to_json(rc);
    j.erase("output");
    return fnv1a(j.dump());
}

/// Applies `a.b.c=value`. The value is parsed as JSON when possible, else
/// taken as a string.
inline void apply_override(json& j, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key.path=value");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &j;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty path component");
        parts.push_back(part);
    }
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->is_object()) throw ConfigError("override path '" + path + "' crosses a non-object");
        node = &(*node)[parts[i]];
        if (node->is_null()) *node = json::object();
    }
    if (!node->is_object()) throw ConfigError("override path '" + path + "' crosses a non-object");
    (*node)[parts.back()] = value;
}

inline json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    try {
        return json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
}

/// File, then overrides, then parsing and validation.
inline RunConfig load(const std::string& path, const std::vector<std::string>& overrides = {})
{
    json j = read_json_file(path);
    for (const std::string& o : overrides) apply_override(j, o);
    RunConfig rc = from_json(j);
    validate(rc);
    return rc;
}

inline json to_json(const sim::SimMetrics& m)
{
    return json{
        {"seed", m.seed},
        {"config_hash", [&] {
             char buf[17];
             std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(m.config_hash));
             return std::string(buf);
         }()},
        {"horizon_days", m.horizon_days},
        {"deployments", m.deployments},
        {"failed_deployments", m.failed_deployments},
        {"deployment_failure_rate", m.deployment_failure_rate},
        {"vms_arrived", m.vms_arrived},
        {"vms_placed", m.vms_placed},
        {"avg_core_occupancy", m.avg_core_occupancy},
        {"avg_empty_server_ratio", m.avg_empty_server_ratio},
        {"mean_avg_chassis_score", m.mean_avg_chassis_score},
        {"stddev_avg_chassis_score", m.stddev_avg_chassis_score},
        {"mean_avg_server_score", m.mean_avg_server_score},
        {"stddev_avg_server_score", m.stddev_avg_server_score},
        {"capping",
         {{"events", m.capping_events},
          {"uf_events", m.uf_capping_events},
          {"nuf_events", m.nuf_capping_events},
          {"rapl_events", m.rapl_capping_events},
          {"uf_throttled_core_seconds", m.uf_throttled_core_seconds},
          {"nuf_throttled_core_seconds", m.nuf_throttled_core_seconds},
          {"max_consecutive_over_budget_ms", m.max_consecutive_over_budget_ms},
          {"protection_violations", m.protection_violations},
          {"draw_samples", m.draw_samples},
          {"demand_over_budget_fraction", m.demand_over_budget_fraction}}},
    };
}

inline json to_json(const oversub::BudgetResult& r, const oversub::OversubPolicy& policy,
                    const oversub::HistoryEstimates& est)
{
    json audit = json::array();
    for (const oversub::CandidateAudit& a : r.audit) {
        json e = {{"budget_w", a.budget_w},       {"events", a.events},
                  {"uf_events", a.uf_events},     {"nuf_events", a.nuf_events},
                  {"infeasible_events", a.infeasible_events},
                  {"uf_rate", a.uf_rate},         {"nuf_rate", a.nuf_rate},
                  {"max_shave_w", a.max_shave_w}, {"accepted", a.accepted}};
        if (a.shaves_listed) e["shaves_w"] = a.shaves;
        audit.push_back(std::move(e));
    }
    return json{
        {"p_min_w", r.p_min},
        {"final_budget_w", r.final_budget},
        {"uf_event_rate", r.uf_event_rate},
        {"nuf_event_rate", r.nuf_event_rate},
        {"worst_shave_w", r.worst_shave_w},
        {"provisioned_w", r.provisioned_w},
        {"oversubscription_delta", r.oversubscription_delta()},
        {"readings", r.readings},
        {"shave_capacity_w", {{"nuf", r.capacity.nuf_w}, {"uf", r.capacity.uf_w}}},
        {"policy",
         {{"emax_uf", policy.emax_uf},
          {"emax_nuf", policy.emax_nuf},
          {"fmin_uf", policy.fmin_uf},
          {"fmin_nuf", policy.fmin_nuf},
          {"buffer", policy.buffer},
          {"full_server", policy.full_server}}},
        {"estimates", {{"beta", est.beta}, {"util_uf", est.util_uf}, {"util_nuf", est.util_nuf}}},
        {"audit", audit},
    };
}

} // namespace vmpower::config
