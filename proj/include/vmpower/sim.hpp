#pragma once

// Discrete-event cluster simulation: deployments arrive, get placed, run and
// depart; utilization signals drive blade power; chassis capping engages
// whenever a chassis nears its budget.
//
// Event order at equal timestamps: departures, arrivals, signal updates,
// capping polls. Capping polls run every poll interval only while a chassis
// is near its budget or still recovering from an event; otherwise nothing
// would change between polls.

#include "vmpower/capping.hpp"
#include "vmpower/common.hpp"
#include "vmpower/oversub.hpp"
#include "vmpower/power_model.hpp"
#include "vmpower/predict.hpp"
#include "vmpower/scheduler.hpp"
#include "vmpower/signal.hpp"
#include "vmpower/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

namespace vmpower::sim {

struct CappingSettings {
    bool enabled = false;
    capping::ChassisManagerConfig manager;
    capping::ControllerConfig controller;
    // Share of non-user-facing VMs the host marks low priority.
    double low_priority_fraction = 0.0;
};

struct SimConfig {
    scheduler::ClusterTopology topology;
    trace::TraceSpec trace;
    scheduler::SchedulerConfig scheduler;
    predict::ProviderConfig prediction;
    power::ServerPowerSpec power;
    int pstates = power::PStateLadder::kDefaultStates;
    signal::SignalConfig signal;
    CappingSettings capping;
    double host_core_utilization = 0.1;
    bool record_draws = false;
    bool record_ticks = false;
    // Master seed; trace, prediction and signal streams derive from it.
    std::uint64_t seed = 1;

    void validate() const
    {
        topology.validate();
        scheduler.validate();
        power.validate();
        signal.validate();
        if (pstates < 2) throw InvalidArgument("pstates must be >= 2");
        if (capping.enabled) {
            capping.manager.validate();
            capping.controller.validate();
        }
        if (!(capping.low_priority_fraction >= 0.0 && capping.low_priority_fraction <= 1.0))
            throw InvalidArgument("low_priority_fraction must be in [0,1]");
        if (!(host_core_utilization >= 0.0 && host_core_utilization <= 1.0))
            throw InvalidArgument("host_core_utilization must be in [0,1]");
        if (topology.cores_per_blade != power.cores)
            throw InvalidArgument("topology cores_per_blade must equal power cores");
    }

    bool tracks_power() const
    {
        return (capping.enabled && std::isfinite(capping.manager.chassis_budget_w)) || record_draws || record_ticks;
    }
};

struct SimMetrics {
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    double horizon_days = 0.0;
    long deployments = 0;
    long failed_deployments = 0;
    double deployment_failure_rate = 0.0;
    long vms_arrived = 0;
    long vms_placed = 0;
    double avg_core_occupancy = 0.0;
    double avg_empty_server_ratio = 0.0;
    double mean_avg_chassis_score = 0.0;
    double stddev_avg_chassis_score = 0.0;
    double mean_avg_server_score = 0.0;
    double stddev_avg_server_score = 0.0;
    long capping_events = 0;
    long uf_capping_events = 0;
    long nuf_capping_events = 0;
    long rapl_capping_events = 0;
    double uf_throttled_core_seconds = 0.0;
    double nuf_throttled_core_seconds = 0.0;
    SimMillis max_consecutive_over_budget_ms = 0;
    long protection_violations = 0;
    long draw_samples = 0;
    double demand_over_budget_fraction = 0.0;
};

enum class LogKind : std::uint8_t { DeploymentArrival, DeploymentPlaced, DeploymentFailed, VmPlaced, VmDeparture };

constexpr std::string_view to_string(LogKind k) noexcept
{
    switch (k) {
    case LogKind::DeploymentArrival: return "deployment_arrival";
    case LogKind::DeploymentPlaced: return "deployment_placed";
    case LogKind::DeploymentFailed: return "deployment_failed";
    case LogKind::VmPlaced: return "vm_placed";
    case LogKind::VmDeparture: return "vm_departure";
    }
    return "?";
}

struct LogEntry {
    SimMillis t_ms = 0;
    LogKind kind = LogKind::DeploymentArrival;
    std::uint64_t deployment_id = 0;
    std::uint64_t vm_id = 0;
    int server = -1;
};

struct DrawSample {
    SimMillis t_ms = 0;
    int chassis = 0;
    double draw_w = 0.0;   // with whatever capping is in force
    double demand_w = 0.0; // every core at f_max
};

struct TickSample {
    SimMillis t_ms = 0;
    int chassis = 0;
    capping::TickReport report;
};

struct SimResult {
    SimMetrics metrics;
    std::vector<LogEntry> log;
    std::vector<capping::CappingEvent> capping_events;
    std::vector<DrawSample> draws;
    std::vector<TickSample> ticks;
    std::vector<oversub::AllocationRecord> allocations;
};

inline double population_stddev(std::span<const double> v)
{
    if (v.empty()) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

/// Failure rate over deployments arriving in [0, horizon), from the log alone.
inline double failure_rate_from_log(std::span<const LogEntry> log, SimMillis horizon_ms)
{
    long arrivals = 0, failed = 0;
    for (const LogEntry& e : log) {
        if (e.t_ms < 0 || e.t_ms >= horizon_ms) continue;
        if (e.kind == LogKind::DeploymentArrival) ++arrivals;
        if (e.kind == LogKind::DeploymentFailed) ++failed;
    }
    return arrivals > 0 ? static_cast<double>(failed) / static_cast<double>(arrivals) : 0.0;
}

/// Stream seeds derived from the master seed.
struct Seeds {
    std::uint64_t trace, prediction, signal, priority;
    explicit Seeds(std::uint64_t master)
        : trace(mix64(master ^ 0x7472616365ULL)), prediction(mix64(master ^ 0x70726564ULL)),
          signal(mix64(master ^ 0x7369676eULL)), priority(mix64(master ^ 0x7072696fULL))
    {
    }
};

inline trace::TraceSpec effective_trace_spec(const SimConfig& cfg)
{
    trace::TraceSpec spec = cfg.trace;
    spec.schedulable_cores = cfg.topology.server_count() * cfg.topology.schedulable_cores();
    spec.seed = Seeds(cfg.seed).trace;
    return spec;
}

inline predict::VmFeatures features_for(const trace::TraceVm& v, const trace::TraceSpec& spec)
{
    predict::VmFeatures f;
    f.subscription_id = v.subscription_id;
    f.pct_uf_in_subscription = v.subscription_uf_share;
    for (std::size_t b = 0; b < 4; ++b)
        f.pct_vms_per_util_bucket[b] =
            v.subscription_uf_share * spec.uf_p95_buckets[b] + (1.0 - v.subscription_uf_share) * spec.nuf_p95_buckets[b];
    f.vm_cores = v.cores;
    f.vm_memory_gb = v.memory_gb;
    f.vm_type = "general";
    return f;
}

namespace detail {

class Engine {
public:
    Engine(const SimConfig& cfg, const trace::Trace& tr)
        : cfg_(cfg), spec_(effective_trace_spec(cfg)), tr_(tr), seeds_(cfg.seed), cluster_(cfg.topology),
          provider_(predict::make_provider(cfg.prediction, seeds_.prediction)), ctx_(cfg.power, cfg.pstates),
          signal_([&] {
              signal::SignalConfig s = cfg.signal;
              s.seed = seeds_.signal;
              return s;
          }()),
          horizon_(tr.horizon_ms), track_power_(cfg.tracks_power()),
          capping_on_(cfg.capping.enabled && std::isfinite(cfg.capping.manager.chassis_budget_w))
    {
        const auto& topo = cfg_.topology;
        const int servers = topo.server_count();
        const int B = topo.blades_per_chassis;
        if (capping_on_) {
            for (int c = 0; c < topo.chassis_count(); ++c)
                capping::check_budget_feasible(cfg_.power, cfg_.capping.manager.chassis_budget_w, B, c);
            for (int c = 0; c < topo.chassis_count(); ++c)
                caps_.emplace_back(c, B, cfg_.capping.manager, cfg_.capping.controller);
            ticking_.assign(static_cast<std::size_t>(topo.chassis_count()), false);
        }
        if (track_power_) {
            blades_.reserve(static_cast<std::size_t>(servers));
            for (int s = 0; s < servers; ++s) {
                capping::Blade b(ctx_);
                for (int i = 0; i < topo.reserved_cores; ++i) {
                    capping::Core& c = b.core(i);
                    c.owner = capping::kHostCore;
                    c.tier = capping::Tier::Protected;
                    c.utilization = cfg_.host_core_utilization;
                    c.owner_true_uf = true;
                }
                blades_.push_back(std::move(b));
            }
        }
        live_.resize(tr_.vms.size());
        true_uf_.assign(static_cast<std::size_t>(servers), 0);
        true_nuf_.assign(static_cast<std::size_t>(servers), 0);
        vms_on_.assign(static_cast<std::size_t>(servers), 0);
        chassis_true_.assign(static_cast<std::size_t>(topo.chassis_count()), 0);
        server_integral_.assign(static_cast<std::size_t>(servers), 0.0);
        server_last_.assign(static_cast<std::size_t>(servers), 0);
        chassis_integral_.assign(static_cast<std::size_t>(topo.chassis_count()), 0.0);
        chassis_last_.assign(static_cast<std::size_t>(topo.chassis_count()), 0);
        empty_servers_ = servers;
    }

    SimResult run()
    {
        last_t_ = tr_.start_ms;
        std::size_t next_vm = 0;
        SimMillis next_slot = 0;
        const SimMillis slot_ms = signal_.config().slot_ms;
        for (;;) {
            SimMillis t_arr = next_vm < tr_.vms.size() ? tr_.vms[next_vm].arrival_ms : kNever;
            SimMillis t_dep = departures_.empty() ? kNever : departures_.top().t;
            SimMillis t_slot = track_power_ && next_slot < horizon_ ? next_slot : kNever;
            SimMillis t_tick = ticks_.empty() ? kNever : ticks_.top().t;
            const SimMillis t = std::min({t_arr, t_dep, t_slot, t_tick});
            if (t == kNever || t >= horizon_) break;
            advance(t);
            if (t_dep == t) {
                const std::size_t idx = departures_.top().idx;
                departures_.pop();
                depart(t, idx);
            } else if (t_arr == t) {
                std::size_t end = next_vm;
                while (end < tr_.vms.size() && tr_.vms[end].deployment_id == tr_.vms[next_vm].deployment_id) ++end;
                arrive(t, next_vm, end);
                next_vm = end;
            } else if (t_slot == t) {
                update_slot(t);
                next_slot += slot_ms;
            } else {
                const int c = ticks_.top().chassis;
                ticks_.pop();
                tick(t, c);
            }
        }
        advance(horizon_);
        return finish();
    }

private:
    static constexpr SimMillis kNever = std::numeric_limits<SimMillis>::max();

    struct Live {
        scheduler::VmDescriptor desc;
        signal::SignalVm sig;
        int server = -1;
        std::vector<int> cores;
        bool low_priority = false;
    };
    struct Departure {
        SimMillis t;
        std::size_t idx;
        bool operator>(const Departure& o) const { return t != o.t ? t > o.t : idx > o.idx; }
    };
    struct Tick {
        SimMillis t;
        int chassis;
        bool operator>(const Tick& o) const { return t != o.t ? t > o.t : chassis > o.chassis; }
    };

    SimMillis clip(SimMillis t) const { return std::clamp<SimMillis>(t, 0, horizon_); }

    void advance(SimMillis t)
    {
        const SimMillis a = clip(last_t_), b = clip(t);
        if (b > a) {
            const double dt = static_cast<double>(b - a);
            empty_integral_ += empty_servers_ * dt;
            allocated_integral_ += static_cast<double>(allocated_cores_) * dt;
        }
        last_t_ = t;
    }

    // True P95 load in fixed point (2^-20 core) so sums cancel exactly.
    static constexpr double kUnit = 1048576.0;

    static std::int64_t true_units(double p95, int cores)
    {
        return static_cast<std::int64_t>(std::llround(p95 * kUnit)) * cores;
    }

    double server_score(int s) const
    {
        const double n = cfg_.topology.cores_per_blade;
        const auto i = static_cast<std::size_t>(s);
        return 0.5 * (1.0 + static_cast<double>(true_nuf_[i] - true_uf_[i]) / kUnit / n);
    }

    double chassis_score(int c) const
    {
        const double n = cfg_.topology.cores_per_blade * cfg_.topology.blades_per_chassis;
        return 1.0 - static_cast<double>(chassis_true_[static_cast<std::size_t>(c)]) / kUnit / n;
    }

    // Close the integral of the current score up to t before it changes.
    void settle(int server, SimMillis t)
    {
        const auto s = static_cast<std::size_t>(server);
        const int c = cluster_.chassis_of(server);
        const auto cu = static_cast<std::size_t>(c);
        const SimMillis tc = clip(t);
        server_integral_[s] += server_score(server) * static_cast<double>(tc - clip(server_last_[s]));
        server_last_[s] = t;
        chassis_integral_[cu] += chassis_score(c) * static_cast<double>(tc - clip(chassis_last_[cu]));
        chassis_last_[cu] = t;
    }

    void apply_true(int server, const Live& v, int sign, SimMillis t)
    {
        settle(server, t);
        const std::int64_t u = true_units(v.desc.true_p95, v.desc.cores);
        auto& acc = is_uf(v.desc.true_label) ? true_uf_ : true_nuf_;
        acc[static_cast<std::size_t>(server)] += sign * u;
        chassis_true_[static_cast<std::size_t>(cluster_.chassis_of(server))] += sign * u;
        int& n = vms_on_[static_cast<std::size_t>(server)];
        n += sign;
        if (sign > 0 && n == 1) --empty_servers_;
        if (sign < 0 && n == 0) ++empty_servers_;
    }

    void arrive(SimMillis t, std::size_t begin, std::size_t end)
    {
        const std::uint64_t dep = tr_.vms[begin].deployment_id;
        log_.push_back({t, LogKind::DeploymentArrival, dep, 0, -1});
        std::vector<scheduler::VmDescriptor> descs;
        descs.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
            const trace::TraceVm& v = tr_.vms[i];
            Live& l = live_[i];
            l.desc.id = v.vm_id;
            l.desc.deployment_id = v.deployment_id;
            l.desc.cores = v.cores;
            l.desc.memory_gb = v.memory_gb;
            l.desc.lifetime_hours = static_cast<double>(v.lifetime_ms) / kMillisPerHour;
            l.desc.subscription_id = v.subscription_id;
            l.desc.true_label = v.label;
            l.desc.true_p95 = v.p95;
            const predict::Prediction p =
                provider_->predict(features_for(v, spec_), predict::GroundTruth{v.label, predict::bucket_of(v.p95)});
            l.desc.effective = predict::resolve(p, cfg_.prediction.min_confidence);
            l.sig = signal::SignalVm{v.vm_id, v.deployment_id, v.label, v.p95};
            l.low_priority = !is_uf(v.label) &&
                             unit_from_hash(mix64(seeds_.priority ^ v.vm_id)) < cfg_.capping.low_priority_fraction;
            descs.push_back(l.desc);
        }
        const bool in_horizon = t >= 0;
        if (in_horizon) {
            ++deployments_;
            vms_arrived_ += static_cast<long>(end - begin);
        }
        auto placed = scheduler::place_deployment(descs, cluster_, cfg_.scheduler);
        if (!placed) {
            log_.push_back({t, LogKind::DeploymentFailed, dep, 0, -1});
            if (in_horizon) ++failed_;
            return;
        }
        log_.push_back({t, LogKind::DeploymentPlaced, dep, 0, -1});
        std::vector<int> touched;
        for (std::size_t i = begin; i < end; ++i) {
            Live& l = live_[i];
            l.server = (*placed)[i - begin];
            log_.push_back({t, LogKind::VmPlaced, dep, l.desc.id, l.server});
            apply_true(l.server, l, +1, t);
            allocated_cores_ += l.desc.cores;
            if (in_horizon) ++vms_placed_;
            if (track_power_) assign_cores(l, t);
            touched.push_back(cluster_.chassis_of(l.server));
            departures_.push({tr_.vms[i].arrival_ms + tr_.vms[i].lifetime_ms, i});
        }
        std::sort(touched.begin(), touched.end());
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
        for (int c : touched) maybe_start_ticking(c, t);
    }

    void assign_cores(Live& l, SimMillis t)
    {
        capping::Blade& b = blades_[static_cast<std::size_t>(l.server)];
        const double u = signal_.utilization(l.sig, t);
        const capping::Tier tier = capping::tier_for(l.desc.effective.label, l.low_priority);
        l.cores.clear();
        for (int i = 0; i < b.core_count() && static_cast<int>(l.cores.size()) < l.desc.cores; ++i) {
            capping::Core& c = b.core(i);
            if (c.owner != capping::kFreeCore) continue;
            c.owner = static_cast<std::int64_t>(l.desc.id);
            c.owner_true_uf = is_uf(l.desc.true_label);
            c.tier = tier;
            c.utilization = u;
            c.pstate = b.max_pstate();
            l.cores.push_back(i);
        }
        if (static_cast<int>(l.cores.size()) != l.desc.cores) throw Error("core accounting out of sync");
    }

    void depart(SimMillis t, std::size_t idx)
    {
        Live& l = live_[idx];
        cluster_.remove(l.server, l.desc);
        apply_true(l.server, l, -1, t);
        allocated_cores_ -= l.desc.cores;
        log_.push_back({t, LogKind::VmDeparture, l.desc.deployment_id, l.desc.id, l.server});
        if (track_power_) {
            capping::Blade& b = blades_[static_cast<std::size_t>(l.server)];
            for (int i : l.cores) {
                capping::Core& c = b.core(i);
                c.owner = capping::kFreeCore;
                c.utilization = 0.0;
                c.owner_true_uf = false;
                c.tier = capping::Tier::Protected;
            }
            l.cores.clear();
            maybe_start_ticking(cluster_.chassis_of(l.server), t);
        }
    }

    void update_slot(SimMillis t)
    {
        for (std::size_t i = 0; i < live_.size(); ++i) {
            Live& l = live_[i];
            if (l.cores.empty()) continue;
            const double u = signal_.utilization(l.sig, t);
            capping::Blade& b = blades_[static_cast<std::size_t>(l.server)];
            for (int c : l.cores) b.core(c).utilization = u;
        }
        const int B = cfg_.topology.blades_per_chassis;
        for (int c = 0; c < cluster_.chassis_count(); ++c) {
            if (cfg_.record_draws) {
                DrawSample d{t, c, 0.0, 0.0};
                for (int k = 0; k < B; ++k) {
                    const capping::Blade& b = blades_[static_cast<std::size_t>(c * B + k)];
                    d.draw_w += b.power();
                    double dyn = 0.0;
                    for (const capping::Core& core : b.cores()) dyn += core.utilization;
                    d.demand_w += ctx_.spec.idle_w + ctx_.spec.dynamic_per_core_w() * dyn;
                }
                if (capping_on_ && d.demand_w > cfg_.capping.manager.chassis_budget_w) ++demand_over_;
                draws_.push_back(d);
            }
            maybe_start_ticking(c, t);
        }
    }

    std::span<capping::Blade> chassis_blades(int c)
    {
        const auto B = static_cast<std::size_t>(cfg_.topology.blades_per_chassis);
        return std::span<capping::Blade>(blades_.data() + static_cast<std::size_t>(c) * B, B);
    }

    void maybe_start_ticking(int c, SimMillis t)
    {
        if (!capping_on_ || ticking_[static_cast<std::size_t>(c)]) return;
        const double draw = capping::ChassisCapping::chassis_draw(chassis_blades(c));
        const auto& m = cfg_.capping.manager;
        if (draw >= m.alert_threshold_fraction * m.chassis_budget_w) {
            ticking_[static_cast<std::size_t>(c)] = true;
            // Polls land on the poll grid.
            const SimMillis p = m.poll_interval_ms;
            const SimMillis next = t >= 0 ? (t + p - 1) / p * p : t - (t % p);
            ticks_.push({next, c});
        }
    }

    void tick(SimMillis t, int c)
    {
        capping::ChassisCapping& cap = caps_[static_cast<std::size_t>(c)];
        const capping::TickReport r = cap.tick(t, chassis_blades(c));
        if (cfg_.record_ticks && t >= 0) ticks_log_.push_back({t, c, r});
        for (capping::CappingEvent& e : cap.take_finished()) collect(std::move(e));
        if (cap.active())
            ticks_.push({t + cfg_.capping.manager.poll_interval_ms, c});
        else
            ticking_[static_cast<std::size_t>(c)] = false;
    }

    void collect(capping::CappingEvent&& e)
    {
        if (e.start_ms >= 0) events_.push_back(std::move(e));
    }

    SimResult finish()
    {
        SimResult res;
        for (auto& cap : caps_) {
            cap.flush(horizon_);
            for (capping::CappingEvent& e : cap.take_finished()) collect(std::move(e));
        }
        const int servers = cluster_.server_count();
        for (int s = 0; s < servers; ++s) settle(s, horizon_);

        SimMetrics& m = res.metrics;
        const double H = static_cast<double>(horizon_);
        m.seed = cfg_.seed;
        m.horizon_days = H / kMillisPerDay;
        m.deployments = deployments_;
        m.failed_deployments = failed_;
        m.deployment_failure_rate = deployments_ > 0 ? static_cast<double>(failed_) / deployments_ : 0.0;
        m.vms_arrived = vms_arrived_;
        m.vms_placed = vms_placed_;
        m.avg_empty_server_ratio = empty_integral_ / (H * servers);
        m.avg_core_occupancy =
            allocated_integral_ / (H * static_cast<double>(servers) * cfg_.topology.schedulable_cores());

        std::vector<double> srv(static_cast<std::size_t>(servers)), ch(static_cast<std::size_t>(cluster_.chassis_count()));
        for (std::size_t s = 0; s < srv.size(); ++s) srv[s] = server_integral_[s] / H;
        for (std::size_t c = 0; c < ch.size(); ++c) ch[c] = chassis_integral_[c] / H;
        m.mean_avg_server_score = std::accumulate(srv.begin(), srv.end(), 0.0) / static_cast<double>(srv.size());
        m.stddev_avg_server_score = population_stddev(srv);
        m.mean_avg_chassis_score = std::accumulate(ch.begin(), ch.end(), 0.0) / static_cast<double>(ch.size());
        m.stddev_avg_chassis_score = population_stddev(ch);

        for (const capping::CappingEvent& e : events_) {
            ++m.capping_events;
            if (e.uf_affected) ++m.uf_capping_events;
            if (e.nuf_affected) ++m.nuf_capping_events;
            if (e.rapl_engaged) ++m.rapl_capping_events;
            m.uf_throttled_core_seconds += e.uf_throttled_core_seconds;
            m.nuf_throttled_core_seconds += e.nuf_throttled_core_seconds;
            m.max_consecutive_over_budget_ms = std::max(m.max_consecutive_over_budget_ms, e.max_consecutive_over_ms);
            m.protection_violations += e.protection_violations;
        }
        m.draw_samples = static_cast<long>(draws_.size());
        m.demand_over_budget_fraction = draws_.empty() ? 0.0 : static_cast<double>(demand_over_) / draws_.size();

        for (std::size_t i = 0; i < live_.size(); ++i) {
            const Live& l = live_[i];
            if (l.server < 0) continue;
            const trace::TraceVm& v = tr_.vms[i];
            const SimMillis a = clip(v.arrival_ms), b = clip(v.arrival_ms + v.lifetime_ms);
            if (b <= a) continue;
            res.allocations.push_back(
                {v.cores, static_cast<double>(b - a) / kMillisPerHour, v.label, v.p95});
        }

        res.log = std::move(log_);
        res.capping_events = std::move(events_);
        res.draws = std::move(draws_);
        res.ticks = std::move(ticks_log_);
        return res;
    }

    const SimConfig& cfg_;
    trace::TraceSpec spec_;
    const trace::Trace& tr_;
    Seeds seeds_;
    scheduler::Cluster cluster_;
    std::unique_ptr<predict::Provider> provider_;
    capping::PowerContext ctx_;
    signal::SignalModel signal_;
    SimMillis horizon_;
    bool track_power_;
    bool capping_on_;

    std::vector<capping::Blade> blades_;
    std::vector<capping::ChassisCapping> caps_;
    std::vector<bool> ticking_;
    std::vector<Live> live_;
    std::priority_queue<Departure, std::vector<Departure>, std::greater<>> departures_;
    std::priority_queue<Tick, std::vector<Tick>, std::greater<>> ticks_;

    std::vector<std::int64_t> true_uf_, true_nuf_, chassis_true_;
    std::vector<int> vms_on_;
    std::vector<double> server_integral_, chassis_integral_;
    std::vector<SimMillis> server_last_, chassis_last_;
    int empty_servers_ = 0;
    long allocated_cores_ = 0;
    double empty_integral_ = 0.0;
    double allocated_integral_ = 0.0;
    SimMillis last_t_ = 0;

    long deployments_ = 0, failed_ = 0, vms_arrived_ = 0, vms_placed_ = 0;
    long demand_over_ = 0;
    std::vector<LogEntry> log_;
    std::vector<capping::CappingEvent> events_;
    std::vector<DrawSample> draws_;
    std::vector<TickSample> ticks_log_;
};

} // namespace detail

/// Runs one simulation. `pre` replaces the generated trace when given.
inline SimResult run(const SimConfig& cfg, const trace::Trace* pre = nullptr)
{
    cfg.validate();
    std::optional<trace::Trace> generated;
    if (!pre) generated = trace::generate_trace(effective_trace_spec(cfg));
    const trace::Trace& tr = pre ? *pre : *generated;
    detail::Engine engine(cfg, tr);
    return engine.run();
}

/// Historical draws for the budget search: one reading per chassis per slot,
/// at full frequency.
inline std::vector<double> demand_draws(std::span<const DrawSample> draws)
{
    std::vector<double> out;
    out.reserve(draws.size());
    for (const DrawSample& d : draws) out.push_back(d.demand_w);
    return out;
}

// ---------------------------------------------------------------------------
// Single-chassis capping scenario with a fixed placement.

struct ScenarioVm {
    int blade = 0;
    int cores = 1;
    WorkloadLabel label = WorkloadLabel::UserFacing;
    double utilization = 0.5;
    bool low_priority = false;
};

struct ChassisScenario {
    int blades = 12;
    std::vector<ScenarioVm> vms;
    power::ServerPowerSpec power;
    capping::ChassisManagerConfig manager{200, 0.98, 2450.0};
    capping::ControllerConfig controller;
    int reserved_cores = 2;
    double host_core_utilization = 0.1;
    // Utilization wobbles by this (absolute Gaussian sigma) every update.
    double noise = 0.03;
    SimMillis update_ms = kMillisPerSecond;
    SimMillis duration_ms = 26 * 60 * kMillisPerSecond;
    std::uint64_t seed = 1;
};

struct ScenarioReport {
    long ticks = 0;
    long alert_ticks = 0;
    long over_budget_ticks = 0;
    SimMillis max_consecutive_over_ms = 0;
    double max_draw_w = 0.0;
    // Ticks on which every UF core (all blades) ran at f_max.
    long uf_at_max_ticks = 0;
    // Whether throttling the NUF cores of each blade to f_min would bring it
    // under its even share at mean utilization.
    bool nuf_throttling_suffices = false;
    std::vector<bool> uf_only_blade;
    std::vector<long> rapl_ticks_per_blade;
    long rapl_ticks_on_uf_only_blades = 0;
    long uf_throttled_core_ticks = 0;
    long protection_violations = 0;
    std::vector<capping::CappingEvent> events;

    double uf_at_max_fraction() const { return ticks > 0 ? static_cast<double>(uf_at_max_ticks) / ticks : 1.0; }
};

/// Three 4-core UF VMs and three 6-core NUF VMs on every blade.
inline ChassisScenario balanced_scenario()
{
    ChassisScenario s;
    for (int b = 0; b < s.blades; ++b) {
        for (int i = 0; i < 3; ++i) s.vms.push_back({b, 4, WorkloadLabel::UserFacing, 0.7});
        for (int i = 0; i < 3; ++i) s.vms.push_back({b, 6, WorkloadLabel::NonUserFacing, 0.9});
    }
    return s;
}

/// The same 36 UF and 36 NUF VMs, segregated: UF on blades 0-3, NUF on 4-9,
/// blades 10-11 empty.
inline ChassisScenario imbalanced_scenario()
{
    ChassisScenario s;
    for (int i = 0; i < 36; ++i) s.vms.push_back({i / 9, 4, WorkloadLabel::UserFacing, 0.7});
    for (int i = 0; i < 36; ++i) s.vms.push_back({4 + i / 6, 6, WorkloadLabel::NonUserFacing, 0.9});
    return s;
}

inline ScenarioReport run_chassis_scenario(const ChassisScenario& sc)
{
    if (sc.blades < 1) throw InvalidArgument("scenario needs blades");
    if (sc.update_ms <= 0 || sc.duration_ms <= 0) throw InvalidArgument("scenario times must be positive");
    const capping::PowerContext ctx(sc.power);
    capping::check_budget_feasible(sc.power, sc.manager.chassis_budget_w, sc.blades, 0);

    std::vector<capping::Blade> blades;
    for (int b = 0; b < sc.blades; ++b) {
        capping::Blade blade(ctx);
        for (int i = 0; i < sc.reserved_cores; ++i) {
            blade.core(i).owner = capping::kHostCore;
            blade.core(i).tier = capping::Tier::Protected;
            blade.core(i).owner_true_uf = true;
            blade.core(i).utilization = sc.host_core_utilization;
        }
        blades.push_back(std::move(blade));
    }
    struct Placed {
        int blade;
        std::vector<int> cores;
        double mean;
        bool uf;
    };
    std::vector<Placed> placed;
    for (std::size_t v = 0; v < sc.vms.size(); ++v) {
        const ScenarioVm& vm = sc.vms[v];
        if (vm.blade < 0 || vm.blade >= sc.blades) throw InvalidArgument("scenario VM on a missing blade");
        capping::Blade& b = blades[static_cast<std::size_t>(vm.blade)];
        Placed p{vm.blade, {}, vm.utilization, is_uf(vm.label)};
        for (int i = 0; i < b.core_count() && static_cast<int>(p.cores.size()) < vm.cores; ++i) {
            capping::Core& c = b.core(i);
            if (c.owner != capping::kFreeCore) continue;
            c.owner = static_cast<std::int64_t>(v);
            c.tier = capping::tier_for(vm.label, vm.low_priority);
            c.owner_true_uf = is_uf(vm.label);
            c.utilization = vm.utilization;
            p.cores.push_back(i);
        }
        if (static_cast<int>(p.cores.size()) != vm.cores) throw InvalidArgument("scenario blade over-committed");
        placed.push_back(std::move(p));
    }

    ScenarioReport rep;
    rep.rapl_ticks_per_blade.assign(static_cast<std::size_t>(sc.blades), 0);
    rep.uf_only_blade.assign(static_cast<std::size_t>(sc.blades), false);
    {
        const double share = sc.manager.chassis_budget_w / sc.blades;
        bool ok = true;
        for (int b = 0; b < sc.blades; ++b) {
            bool has_uf = false, has_nuf = false;
            double dyn = 0.0;
            for (const capping::Core& c : blades[static_cast<std::size_t>(b)].cores()) {
                if (c.owner == capping::kFreeCore) continue;
                const bool throttle = c.owner >= 0 && c.tier != capping::Tier::Protected;
                dyn += c.utilization * (throttle ? ctx.ladder.factor(0) : 1.0);
                if (c.owner >= 0) (c.owner_true_uf ? has_uf : has_nuf) = true;
            }
            rep.uf_only_blade[static_cast<std::size_t>(b)] = has_uf && !has_nuf;
            if (sc.power.idle_w + sc.power.dynamic_per_core_w() * dyn > share) ok = false;
        }
        rep.nuf_throttling_suffices = ok;
    }

    capping::ChassisCapping cap(0, sc.blades, sc.manager, sc.controller);
    const SimMillis dt = sc.manager.poll_interval_ms;
    SimMillis consecutive = 0;
    for (SimMillis t = 0; t < sc.duration_ms; t += dt) {
        if (t % sc.update_ms == 0) {
            const std::uint64_t step = static_cast<std::uint64_t>(t / sc.update_ms);
            for (std::size_t v = 0; v < placed.size(); ++v) {
                const std::uint64_t h = mix64(sc.seed ^ mix64(v * 0x9e3779b97f4a7c15ULL ^ step));
                const double z = std::sqrt(-2.0 * std::log(unit_from_hash(h))) *
                                 std::cos(2.0 * std::numbers::pi * unit_from_hash(mix64(h)));
                const double u = std::clamp(placed[v].mean + sc.noise * z, 0.0, 1.0);
                for (int c : placed[v].cores) blades[static_cast<std::size_t>(placed[v].blade)].core(c).utilization = u;
            }
        }
        const capping::TickReport r = cap.tick(t, blades);
        ++rep.ticks;
        if (r.alert) ++rep.alert_ticks;
        rep.max_draw_w = std::max(rep.max_draw_w, r.chassis_draw_w);
        if (r.over_budget) {
            ++rep.over_budget_ticks;
            consecutive += dt;
            rep.max_consecutive_over_ms = std::max(rep.max_consecutive_over_ms, consecutive);
        } else {
            consecutive = 0;
        }
        rep.protection_violations += r.protection_violations;
        bool uf_max = true;
        for (int b = 0; b < sc.blades; ++b) {
            const capping::Blade& blade = blades[static_cast<std::size_t>(b)];
            if (blade.rapl_ceiling() < blade.max_pstate()) {
                ++rep.rapl_ticks_per_blade[static_cast<std::size_t>(b)];
                if (rep.uf_only_blade[static_cast<std::size_t>(b)]) ++rep.rapl_ticks_on_uf_only_blades;
            }
            for (int i = 0; i < blade.core_count(); ++i) {
                const capping::Core& c = blade.core(i);
                if (c.owner >= 0 && c.owner_true_uf && blade.effective_pstate(i) != blade.max_pstate()) {
                    uf_max = false;
                    ++rep.uf_throttled_core_ticks;
                }
            }
        }
        if (uf_max) ++rep.uf_at_max_ticks;
        for (capping::CappingEvent& e : cap.take_finished()) rep.events.push_back(std::move(e));
    }
    cap.flush(sc.duration_ms);
    for (capping::CappingEvent& e : cap.take_finished()) rep.events.push_back(std::move(e));
    return rep;
}

} // namespace vmpower::sim
