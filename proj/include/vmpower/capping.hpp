#pragma once

// Chassis power capping: the chassis manager polls the PSUs, the in-band
// per-VM controller throttles low-priority cores with per-core DVFS, and a
// RAPL-style out-of-band limiter slows all cores of a blade equally as the
// backup.
//
// Everything advances in discrete poll ticks driven by the caller.

#include "vmpower/common.hpp"
#include "vmpower/power_model.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vmpower::capping {

class InfeasibleBudget : public Error {
public:
    using Error::Error;
};

/// Throttle order: lower tiers are throttled first. Protected is never
/// touched by the in-band controller.
enum class Tier : std::uint8_t { LowPriority = 0, ProductionNuf = 1, Protected = 2 };
constexpr int kTiers = 3;
constexpr int kThrottleableTiers = 2;

constexpr std::string_view to_string(Tier t) noexcept
{
    switch (t) {
    case Tier::LowPriority: return "low_priority";
    case Tier::ProductionNuf: return "production_nuf";
    case Tier::Protected: return "protected";
    }
    return "?";
}

/// Tier for a VM given what the host knows about it.
constexpr Tier tier_for(WorkloadLabel predicted, bool low_priority) noexcept
{
    if (is_uf(predicted)) return Tier::Protected;
    return low_priority ? Tier::LowPriority : Tier::ProductionNuf;
}

struct ChassisManagerConfig {
    int poll_interval_ms = 200;
    double alert_threshold_fraction = 0.98;
    double chassis_budget_w = std::numeric_limits<double>::infinity();

    void validate() const
    {
        if (poll_interval_ms <= 0) throw InvalidArgument("poll_interval_ms must be positive");
        if (!(alert_threshold_fraction > 0.0 && alert_threshold_fraction < 1.0))
            throw InvalidArgument("alert_threshold_fraction must be in (0,1)");
        if (!(chassis_budget_w > 0.0)) throw InvalidArgument("chassis_budget_w must be positive");
    }
};

struct ControllerConfig {
    int step_cores = 4;
    int cap_duration_s = 30;
    // 225 W target for a 230 W cap.
    double server_target_fraction = 225.0 / 230.0;
    // P-states the RAPL limiter may drop per tick.
    int rapl_steps_per_tick = 2;

    void validate() const
    {
        if (step_cores < 1) throw InvalidArgument("step_cores must be >= 1");
        if (cap_duration_s <= 0) throw InvalidArgument("cap_duration_s must be positive");
        if (!(server_target_fraction > 0.0 && server_target_fraction <= 1.0))
            throw InvalidArgument("server_target_fraction must be in (0,1]");
        if (rapl_steps_per_tick < 1) throw InvalidArgument("rapl_steps_per_tick must be >= 1");
    }
};

constexpr std::int64_t kFreeCore = -1;
constexpr std::int64_t kHostCore = -2;

struct Core {
    double utilization = 0.0;
    int pstate = 0; // in-band setting; index into the ladder
    Tier tier = Tier::Protected;
    std::int64_t owner = kFreeCore;
    bool owner_true_uf = false;
};

/// Shared, immutable power context for a fleet of identical blades.
struct PowerContext {
    power::ServerPowerSpec spec;
    power::PStateLadder ladder;

    PowerContext() : PowerContext(power::ServerPowerSpec{}) {}
    explicit PowerContext(const power::ServerPowerSpec& s, int states = power::PStateLadder::kDefaultStates)
        : spec(s), ladder(s, states)
    {
        spec.validate();
    }
};

class Blade {
public:
    Blade() = default;
    explicit Blade(const PowerContext& ctx) : ctx_(&ctx), cores_(static_cast<std::size_t>(ctx.spec.cores))
    {
        for (Core& c : cores_) c.pstate = max_pstate();
        rapl_ceiling_ = max_pstate();
    }

    const PowerContext& context() const { return *ctx_; }
    int max_pstate() const { return ctx_->ladder.max_index(); }
    std::span<Core> cores() noexcept { return cores_; }
    std::span<const Core> cores() const noexcept { return cores_; }
    Core& core(int i) { return cores_.at(static_cast<std::size_t>(i)); }
    const Core& core(int i) const { return cores_.at(static_cast<std::size_t>(i)); }
    int core_count() const noexcept { return static_cast<int>(cores_.size()); }

    int rapl_ceiling() const noexcept { return rapl_ceiling_; }
    void set_rapl_ceiling(int p) { rapl_ceiling_ = std::clamp(p, 0, max_pstate()); }

    int effective_pstate(int i) const { return std::min(core(i).pstate, rapl_ceiling_); }
    double effective_frequency(int i) const { return ctx_->ladder.frequency(effective_pstate(i)); }

    double power() const { return power_with_ceiling(rapl_ceiling_); }

    double power_with_ceiling(int ceiling) const
    {
        double dyn = 0.0;
        for (const Core& c : cores_) dyn += c.utilization * ctx_->ladder.factor(std::min(c.pstate, ceiling));
        return ctx_->spec.idle_w + ctx_->spec.dynamic_per_core_w() * dyn;
    }

    /// Power after moving the given cores to `new_pstate`.
    double power_if(std::span<const int> idx, int new_pstate) const
    {
        double p = power();
        const double w = ctx_->spec.dynamic_per_core_w();
        for (int i : idx) {
            const Core& c = core(i);
            p += w * c.utilization *
                 (ctx_->ladder.factor(std::min(new_pstate, rapl_ceiling_)) - ctx_->ladder.factor(effective_pstate(i)));
        }
        return p;
    }

    std::vector<power::CoreState> core_states() const
    {
        std::vector<power::CoreState> out;
        out.reserve(cores_.size());
        for (int i = 0; i < core_count(); ++i) out.push_back({core(i).utilization, effective_frequency(i)});
        return out;
    }

    bool all_at_max() const
    {
        if (rapl_ceiling_ != max_pstate()) return false;
        return std::all_of(cores_.begin(), cores_.end(), [&](const Core& c) { return c.pstate == max_pstate(); });
    }

    bool tier_nonempty(Tier t) const
    {
        return std::any_of(cores_.begin(), cores_.end(), [&](const Core& c) { return c.owner >= 0 && c.tier == t; });
    }

    /// True while some throttleable owned core is above f_min.
    bool has_throttle_headroom() const
    {
        return std::any_of(cores_.begin(), cores_.end(), [](const Core& c) {
            return c.owner >= 0 && c.tier != Tier::Protected && c.pstate > 0;
        });
    }

    // Owned cores in tier `t`.
    std::vector<int> tier_cores(Tier t) const
    {
        std::vector<int> out;
        for (int i = 0; i < core_count(); ++i)
            if (core(i).owner >= 0 && core(i).tier == t) out.push_back(i);
        return out;
    }

    /// True when a more-protected owned core sits below f_max while a
    /// less-protected owned core is above f_min (in-band settings only).
    bool protection_violated() const
    {
        std::array<bool, kTiers> below_max{}, above_min{};
        for (const Core& c : cores_) {
            if (c.owner < 0 && c.owner != kHostCore) continue;
            const auto t = static_cast<std::size_t>(c.tier);
            if (c.pstate < max_pstate()) below_max[t] = true;
            if (c.pstate > 0 && c.owner >= 0) above_min[t] = true;
        }
        for (int hi = 1; hi < kTiers; ++hi)
            for (int lo = 0; lo < hi; ++lo)
                if (below_max[static_cast<std::size_t>(hi)] && above_min[static_cast<std::size_t>(lo)]) return true;
        return false;
    }

private:
    const PowerContext* ctx_ = nullptr;
    std::vector<Core> cores_;
    int rapl_ceiling_ = 0;
};

enum class AlertAction { None, DroppedTier, NoThrottleableCores };

/// In-band per-VM controller for one blade.
class ServerController {
public:
    enum class State { Idle, Feedback };

    explicit ServerController(ControllerConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

    State state() const noexcept { return state_; }
    SimMillis cap_start() const noexcept { return cap_start_; }
    const ControllerConfig& config() const noexcept { return cfg_; }

    /// Reacts to a chassis alert. Drops the lowest tier that still has cores
    /// above f_min to the minimum p-state if the blade is over `target_w`.
    AlertAction on_alert(Blade& blade, SimMillis t, double target_w)
    {
        if (!(blade.power() > target_w)) return AlertAction::None;
        for (int t_idx = 0; t_idx < kThrottleableTiers; ++t_idx) {
            const auto tier = static_cast<Tier>(t_idx);
            const std::vector<int> idx = blade.tier_cores(tier);
            const bool any_above_min =
                std::any_of(idx.begin(), idx.end(), [&](int i) { return blade.core(i).pstate > 0; });
            if (!any_above_min) continue;
            for (int i : idx) blade.core(i).pstate = 0;
            if (state_ == State::Idle) {
                state_ = State::Feedback;
                cap_start_ = t;
            }
            return AlertAction::DroppedTier;
        }
        return AlertAction::NoThrottleableCores;
    }

    /// One feedback iteration: lift the cap once it has run its course,
    /// otherwise nudge N cores one p-state toward the target.
    void feedback_step(Blade& blade, SimMillis t, double target_w)
    {
        if (state_ != State::Feedback) return;
        if (t - cap_start_ >= static_cast<SimMillis>(cfg_.cap_duration_s) * kMillisPerSecond) {
            lift(blade);
            return;
        }
        if (blade.power() > target_w) {
            step_down(blade);
            return;
        }
        step_up(blade, target_w);
    }

    void lift(Blade& blade)
    {
        for (Core& c : blade.cores()) c.pstate = blade.max_pstate();
        state_ = State::Idle;
    }

    bool cap_expired(SimMillis t) const
    {
        return state_ == State::Feedback &&
               t - cap_start_ >= static_cast<SimMillis>(cfg_.cap_duration_s) * kMillisPerSecond;
    }

private:
    // Lowest p-state first within a tier, then lowest index.
    std::vector<int> pick(const Blade& blade, Tier tier, bool raising) const
    {
        std::vector<int> idx;
        for (int i : blade.tier_cores(tier)) {
            const int p = blade.core(i).pstate;
            if (raising ? p < blade.max_pstate() : p > 0) idx.push_back(i);
        }
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
            return raising ? blade.core(a).pstate < blade.core(b).pstate : blade.core(a).pstate > blade.core(b).pstate;
        });
        if (static_cast<int>(idx.size()) > cfg_.step_cores) idx.resize(static_cast<std::size_t>(cfg_.step_cores));
        return idx;
    }

    void step_down(Blade& blade)
    {
        // Least protected tier first; a tier is only touched once every lower
        // tier is at the floor.
        for (int t_idx = 0; t_idx < kThrottleableTiers; ++t_idx) {
            auto idx = pick(blade, static_cast<Tier>(t_idx), false);
            if (idx.empty()) continue;
            for (int i : idx) --blade.core(i).pstate;
            return;
        }
    }

    void step_up(Blade& blade, double target_w)
    {
        // Most protected throttled tier recovers first.
        for (int t_idx = kThrottleableTiers - 1; t_idx >= 0; --t_idx) {
            auto idx = pick(blade, static_cast<Tier>(t_idx), true);
            if (idx.empty()) continue;
            std::vector<int> raised;
            double p = blade.power();
            const double w = blade.context().spec.dynamic_per_core_w();
            for (int i : idx) {
                const Core& c = blade.core(i);
                const int cur = blade.effective_pstate(i);
                const int next = std::min(c.pstate + 1, blade.rapl_ceiling());
                p += w * c.utilization * (blade.context().ladder.factor(next) - blade.context().ladder.factor(cur));
            }
            if (p > target_w) return; // hold
            for (int i : idx) ++blade.core(i).pstate;
            return;
        }
    }

    ControllerConfig cfg_;
    State state_ = State::Idle;
    SimMillis cap_start_ = 0;
};

enum class RaplStatus { Compliant, Stepping, Infeasible };

/// One RAPL iteration against `cap_w`: lowers the blade-wide ceiling while
/// over the cap, raises it one state when that stays under the cap.
inline RaplStatus rapl_enforce(Blade& blade, double cap_w, int steps_per_tick = 2)
{
    if (blade.power_with_ceiling(0) > cap_w) {
        blade.set_rapl_ceiling(0);
        return RaplStatus::Infeasible;
    }
    if (blade.power() > cap_w) {
        blade.set_rapl_ceiling(blade.rapl_ceiling() - steps_per_tick);
        return blade.power() > cap_w ? RaplStatus::Stepping : RaplStatus::Compliant;
    }
    const int up = blade.rapl_ceiling() + 1;
    if (up <= blade.max_pstate() && blade.power_with_ceiling(up) <= cap_w) blade.set_rapl_ceiling(up);
    return RaplStatus::Compliant;
}

/// Throws InfeasibleBudget if a blade at idle already exceeds its even share.
inline void check_budget_feasible(const power::ServerPowerSpec& spec, double chassis_budget_w, int blades,
                                  int chassis_id)
{
    const double share = chassis_budget_w / blades;
    if (share < spec.idle_w)
        throw InfeasibleBudget("chassis " + std::to_string(chassis_id) + ": even-share cap " + std::to_string(share) +
                               " W is below blade idle power " + std::to_string(spec.idle_w) + " W");
}

struct CappingEvent {
    int chassis = 0;
    SimMillis start_ms = 0;
    SimMillis end_ms = 0;
    double trigger_draw_w = 0.0;
    double max_draw_w = 0.0;
    std::array<double, kTiers> min_frequency{1.0, 1.0, 1.0};
    bool rapl_engaged = false;
    bool psu_alert = false;
    bool infeasible = false;
    bool uf_affected = false;
    bool nuf_affected = false;
    SimMillis over_budget_ms = 0;
    SimMillis max_consecutive_over_ms = 0;
    int protection_violations = 0;
    std::map<std::int64_t, double> throttled_core_seconds; // VM id -> core-seconds
    double uf_throttled_core_seconds = 0.0;
    double nuf_throttled_core_seconds = 0.0;
};

struct TickReport {
    double chassis_draw_w = 0.0;
    bool alert = false;
    bool psu_alert = false;
    bool over_budget = false;
    bool rapl_active = false;
    int protection_violations = 0;
};

/// Chassis manager, per-blade controllers and RAPL limiters for one chassis.
class ChassisCapping {
public:
    ChassisCapping(int chassis_id, int blades, ChassisManagerConfig mgr, ControllerConfig ctl)
        : id_(chassis_id), mgr_(mgr), ctl_(ctl), controllers_(static_cast<std::size_t>(blades), ServerController(ctl)),
          rapl_armed_(static_cast<std::size_t>(blades), false)
    {
        mgr_.validate();
        ctl_.validate();
    }

    int id() const noexcept { return id_; }
    const ChassisManagerConfig& manager_config() const noexcept { return mgr_; }
    double even_share_w() const noexcept { return mgr_.chassis_budget_w / static_cast<double>(controllers_.size()); }
    double server_target_w() const noexcept { return ctl_.server_target_fraction * even_share_w(); }
    const ServerController& controller(int blade) const { return controllers_.at(static_cast<std::size_t>(blade)); }
    bool rapl_armed(int blade) const { return rapl_armed_.at(static_cast<std::size_t>(blade)); }

    /// Caller must keep ticking every poll interval while this is true.
    bool active() const noexcept { return open_.has_value(); }

    static double chassis_draw(std::span<const Blade> blades)
    {
        double s = 0.0;
        for (const Blade& b : blades) s += b.power();
        return s;
    }

    /// Poll the PSUs at `t` and advance every controller by one iteration.
    /// Power measured now reflects actions taken on earlier ticks.
    TickReport tick(SimMillis t, std::span<Blade> blades)
    {
        if (blades.size() != controllers_.size()) throw InvalidArgument("blade count mismatch");
        TickReport r;
        r.chassis_draw_w = chassis_draw(blades);
        r.over_budget = r.chassis_draw_w > mgr_.chassis_budget_w;
        r.alert = r.chassis_draw_w >= mgr_.alert_threshold_fraction * mgr_.chassis_budget_w;
        r.psu_alert = r.chassis_draw_w >= mgr_.chassis_budget_w;

        if (r.alert && !open_) open(t, r.chassis_draw_w);
        if (open_) account_start_tick(blades, r);

        const SimMillis cap_ms = static_cast<SimMillis>(ctl_.cap_duration_s) * kMillisPerSecond;
        if (rapl_since_ && t - *rapl_since_ >= cap_ms) {
            for (std::size_t b = 0; b < blades.size(); ++b) {
                rapl_armed_[b] = false;
                blades[b].set_rapl_ceiling(blades[b].max_pstate());
            }
            rapl_since_.reset();
        }

        if (r.psu_alert && !rapl_since_) {
            rapl_since_ = t;
            for (std::size_t b = 0; b < blades.size(); ++b) rapl_armed_[b] = true;
            if (open_) open_->psu_alert = true;
        }

        const double target = server_target_w();
        const double share = even_share_w();
        for (std::size_t b = 0; b < blades.size(); ++b) {
            Blade& blade = blades[b];
            ServerController& ctl = controllers_[b];
            AlertAction act = AlertAction::None;
            if (ctl.cap_expired(t)) {
                ctl.lift(blade);
            } else if (r.alert) {
                act = ctl.on_alert(blade, t, target);
            }
            if (act != AlertAction::DroppedTier && ctl.state() == ServerController::State::Feedback)
                ctl.feedback_step(blade, t, target);

            // The out-of-band limiter acts from the poll after it was armed,
            // giving the in-band controller one interval to respond. While the
            // chassis is back under budget, a blade is only newly limited if
            // the in-band controller has nothing left to throttle.
            const bool limiting = blade.rapl_ceiling() < blade.max_pstate();
            if (rapl_armed_[b] && rapl_since_ && *rapl_since_ < t &&
                (r.psu_alert || limiting || !blade.has_throttle_headroom())) {
                const RaplStatus st = rapl_enforce(blade, share, ctl_.rapl_steps_per_tick);
                if (blade.rapl_ceiling() < blade.max_pstate()) {
                    r.rapl_active = true;
                    if (open_) open_->rapl_engaged = true;
                }
                if (st == RaplStatus::Infeasible && open_) open_->infeasible = true;
            }
            if (blade.protection_violated()) ++r.protection_violations;
        }
        if (open_) open_->protection_violations += r.protection_violations;

        if (open_ && !r.alert && !rapl_since_ &&
            std::all_of(controllers_.begin(), controllers_.end(),
                        [](const ServerController& c) { return c.state() == ServerController::State::Idle; }) &&
            std::all_of(blades.begin(), blades.end(), [](const Blade& b) { return b.all_at_max(); })) {
            open_->end_ms = t;
            finished_.push_back(std::move(*open_));
            open_.reset();
        }
        return r;
    }

    /// Events that ended since the last call.
    std::vector<CappingEvent> take_finished()
    {
        std::vector<CappingEvent> out;
        out.swap(finished_);
        return out;
    }

    /// Closes whatever event is open (end of simulation).
    void flush(SimMillis t)
    {
        if (open_) {
            open_->end_ms = t;
            finished_.push_back(std::move(*open_));
            open_.reset();
        }
    }

private:
    void open(SimMillis t, double draw)
    {
        open_ = CappingEvent{};
        open_->chassis = id_;
        open_->start_ms = t;
        open_->trigger_draw_w = draw;
        open_->max_draw_w = draw;
        consecutive_over_ = 0;
    }

    // The state measured at a tick holds until the next one.
    void account_start_tick(std::span<Blade> blades, const TickReport& r)
    {
        CappingEvent& e = *open_;
        const SimMillis dt = mgr_.poll_interval_ms;
        e.max_draw_w = std::max(e.max_draw_w, r.chassis_draw_w);
        if (r.over_budget) {
            e.over_budget_ms += dt;
            consecutive_over_ += dt;
            e.max_consecutive_over_ms = std::max(e.max_consecutive_over_ms, consecutive_over_);
        } else {
            consecutive_over_ = 0;
        }
        const double secs = static_cast<double>(dt) / kMillisPerSecond;
        for (const Blade& blade : blades) {
            for (int i = 0; i < blade.core_count(); ++i) {
                const Core& c = blade.core(i);
                if (c.owner < 0 && c.owner != kHostCore) continue;
                const int p = blade.effective_pstate(i);
                const auto t = static_cast<std::size_t>(c.tier);
                e.min_frequency[t] = std::min(e.min_frequency[t], blade.context().ladder.frequency(p));
                if (p == blade.max_pstate() || c.owner < 0) continue;
                e.throttled_core_seconds[c.owner] += secs;
                if (c.owner_true_uf) {
                    e.uf_affected = true;
                    e.uf_throttled_core_seconds += secs;
                } else {
                    e.nuf_affected = true;
                    e.nuf_throttled_core_seconds += secs;
                }
            }
        }
    }

    int id_;
    ChassisManagerConfig mgr_;
    ControllerConfig ctl_;
    std::vector<ServerController> controllers_;
    std::vector<bool> rapl_armed_;
    std::optional<SimMillis> rapl_since_;
    std::optional<CappingEvent> open_;
    std::vector<CappingEvent> finished_;
    SimMillis consecutive_over_ = 0;
};

} // namespace vmpower::capping
