#pragma once

// Criticality- and utilization-aware VM placement.
//
// Constraint rules filter servers that cannot host the VM. Preference rules
// (bin packing and the power rule) each rank the survivors; ranks become
// points 1 - rank/n and the weighted point sum picks the winner.
//
// Load accumulators are kept in eighths of a core so that placing and then
// removing a VM restores them exactly (predicted P95 values are bucket
// midpoints, i.e. multiples of 1/8).

#include "vmpower/common.hpp"
#include "vmpower/predict.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vmpower::scheduler {

struct VmDescriptor {
    std::uint64_t id = 0;
    std::uint64_t deployment_id = 0;
    int cores = 1;
    double memory_gb = 4.0;
    double lifetime_hours = 1.0;
    std::uint64_t subscription_id = 0;
    WorkloadLabel true_label = WorkloadLabel::UserFacing;
    double true_p95 = 1.0;
    predict::EffectiveAttributes effective;
};

struct ServerLoad {
    int total_cores = 40;
    int free_cores = 40;
    double free_memory_gb = 0.0;
    double gamma_uf = 0.0;
    double gamma_nuf = 0.0;
};

struct ChassisLoad {
    double rho_peak = 0.0;
    int rho_max = 0;
};

struct ScoredCandidate {
    int server = -1;
    double kappa = 0.0;
    double eta = 0.0;
    double score = 0.0;
};

struct SchedulerConfig {
    double alpha = 0.8;
    double packing_rule_weight = 0.7;
    double power_rule_weight = 0.3;

    void validate() const
    {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must be in [0,1]");
        if (packing_rule_weight < 0.0 || power_rule_weight < 0.0 ||
            packing_rule_weight + power_rule_weight <= 0.0)
            throw InvalidArgument("rule weights must be nonnegative and not both zero");
    }
};

struct ClusterTopology {
    int racks = 20;
    int chassis_per_rack = 3;
    int blades_per_chassis = 12;
    int cores_per_blade = 40;
    // Host I/O partition; not schedulable.
    int reserved_cores = 2;
    double memory_gb_per_blade = 256.0;

    int chassis_count() const noexcept { return racks * chassis_per_rack; }
    int server_count() const noexcept { return chassis_count() * blades_per_chassis; }
    int schedulable_cores() const noexcept { return cores_per_blade - reserved_cores; }

    void validate() const
    {
        if (racks <= 0 || chassis_per_rack <= 0 || blades_per_chassis <= 0 || cores_per_blade <= 0)
            throw InvalidArgument("topology dimensions must be positive");
        if (reserved_cores < 0 || reserved_cores >= cores_per_blade)
            throw InvalidArgument("reserved_cores must be in [0, cores_per_blade)");
        if (!(memory_gb_per_blade > 0.0)) throw InvalidArgument("memory_gb_per_blade must be positive");
    }
};

inline std::int64_t to_eighths(double p95, int cores)
{
    const double e = p95 * 8.0;
    const auto r = std::llround(e);
    if (std::abs(e - static_cast<double>(r)) > 1e-9 || r < 0 || r > 8)
        throw InvalidArgument("effective P95 must be a multiple of 1/8 in [0,1]");
    return r * cores;
}

/// Racks -> chassis -> blades, with the predicted-load accumulators the
/// placement policy reads.
class Cluster {
public:
    Cluster() : Cluster(ClusterTopology{}) {}

    explicit Cluster(const ClusterTopology& topo) : topo_(topo)
    {
        topo_.validate();
        servers_.resize(static_cast<std::size_t>(topo_.server_count()));
        chassis_.resize(static_cast<std::size_t>(topo_.chassis_count()));
        for (int s = 0; s < topo_.server_count(); ++s) {
            Server& srv = servers_[static_cast<std::size_t>(s)];
            srv.chassis = s / topo_.blades_per_chassis;
            srv.free_cores = topo_.schedulable_cores();
            srv.free_memory_gb = topo_.memory_gb_per_blade;
            Chassis& ch = chassis_[static_cast<std::size_t>(srv.chassis)];
            ch.servers.push_back(s);
            ch.rho_max += topo_.cores_per_blade;
        }
    }

    const ClusterTopology& topology() const noexcept { return topo_; }
    int server_count() const noexcept { return static_cast<int>(servers_.size()); }
    int chassis_count() const noexcept { return static_cast<int>(chassis_.size()); }
    int chassis_of(int server) const { return at(server).chassis; }
    std::span<const int> servers_in(int chassis) const { return chassis_.at(static_cast<std::size_t>(chassis)).servers; }
    int vm_count(int server) const { return at(server).vms; }
    int free_cores(int server) const { return at(server).free_cores; }
    double free_memory_gb(int server) const { return at(server).free_memory_gb; }

    ServerLoad server_load(int server) const
    {
        const Server& s = at(server);
        return ServerLoad{topo_.cores_per_blade, s.free_cores, s.free_memory_gb, s.gamma_uf8 / 8.0, s.gamma_nuf8 / 8.0};
    }

    ChassisLoad chassis_load(int chassis) const
    {
        const Chassis& c = chassis_.at(static_cast<std::size_t>(chassis));
        return ChassisLoad{c.rho_peak8 / 8.0, c.rho_max};
    }

    bool fits(int server, const VmDescriptor& vm) const
    {
        const Server& s = at(server);
        return s.free_cores >= vm.cores && s.free_memory_gb >= vm.memory_gb;
    }

    void commit(int server, const VmDescriptor& vm)
    {
        if (!fits(server, vm)) throw InvalidArgument("VM " + std::to_string(vm.id) + " does not fit server " +
                                                     std::to_string(server));
        apply(server, vm, +1);
    }

    void remove(int server, const VmDescriptor& vm) { apply(server, vm, -1); }

private:
    struct Server {
        int chassis = 0;
        int free_cores = 0;
        double free_memory_gb = 0.0;
        std::int64_t gamma_uf8 = 0;
        std::int64_t gamma_nuf8 = 0;
        int vms = 0;
    };
    struct Chassis {
        std::vector<int> servers;
        std::int64_t rho_peak8 = 0;
        int rho_max = 0;
    };

    const Server& at(int server) const { return servers_.at(static_cast<std::size_t>(server)); }

    void apply(int server, const VmDescriptor& vm, int sign)
    {
        Server& s = servers_.at(static_cast<std::size_t>(server));
        const std::int64_t eighths = to_eighths(vm.effective.p95_util, vm.cores);
        if (sign < 0 && s.vms == 0) throw InvalidArgument("remove from empty server");
        s.free_cores -= sign * vm.cores;
        s.free_memory_gb -= sign * vm.memory_gb;
        (is_uf(vm.effective.label) ? s.gamma_uf8 : s.gamma_nuf8) += sign * eighths;
        s.vms += sign;
        chassis_[static_cast<std::size_t>(s.chassis)].rho_peak8 += sign * eighths;
        if (s.vms == 0) s.free_memory_gb = topo_.memory_gb_per_blade; // drop float residue
    }

    ClusterTopology topo_;
    std::vector<Server> servers_;
    std::vector<Chassis> chassis_;
};

inline std::vector<int> filter_constraints(const VmDescriptor& vm, const Cluster& cluster)
{
    std::vector<int> out;
    for (int s = 0; s < cluster.server_count(); ++s)
        if (cluster.fits(s, vm)) out.push_back(s);
    return out;
}

/// 1 - rho_peak / rho_max: headroom if every VM peaks at once.
inline double score_chassis(const ChassisLoad& load)
{
    if (load.rho_max <= 0) throw InvalidArgument("chassis with no cores");
    return 1.0 - load.rho_peak / static_cast<double>(load.rho_max);
}

/// Prefers servers where the opposite class dominates, balancing cap-able
/// (non-user-facing) power across servers.
inline double score_server(WorkloadLabel omega, const ServerLoad& load)
{
    const double n = static_cast<double>(load.total_cores);
    const double diff = is_uf(omega) ? load.gamma_nuf - load.gamma_uf : load.gamma_uf - load.gamma_nuf;
    return 0.5 * (1.0 + diff / n);
}

inline ScoredCandidate score_candidate(const VmDescriptor& vm, int server, const Cluster& cluster,
                                       const SchedulerConfig& cfg)
{
    ScoredCandidate c;
    c.server = server;
    c.kappa = score_chassis(cluster.chassis_load(cluster.chassis_of(server)));
    c.eta = score_server(vm.effective.label, cluster.server_load(server));
    c.score = cfg.alpha * c.kappa + (1.0 - cfg.alpha) * c.eta;
    return c;
}

inline std::vector<ScoredCandidate> sort_candidates(const VmDescriptor& vm, std::span<const int> candidates,
                                                    const Cluster& cluster, const SchedulerConfig& cfg)
{
    std::vector<ScoredCandidate> out;
    out.reserve(candidates.size());
    for (int s : candidates) out.push_back(score_candidate(vm, s, cluster, cfg));
    std::stable_sort(out.begin(), out.end(), [&](const ScoredCandidate& a, const ScoredCandidate& b) {
        if (a.score != b.score) return a.score > b.score;
        const int fa = cluster.free_cores(a.server), fb = cluster.free_cores(b.server);
        if (fa != fb) return fa < fb;
        return a.server < b.server;
    });
    return out;
}

namespace detail {

/// Competition ranks for "higher is better" metrics: rank = number of
/// strictly better entries.
inline std::vector<int> competition_ranks(std::span<const double> metric)
{
    std::vector<int> order(metric.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return metric[static_cast<std::size_t>(a)] > metric[static_cast<std::size_t>(b)]; });
    std::vector<int> rank(metric.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto idx = static_cast<std::size_t>(order[i]);
        if (i > 0 && metric[idx] == metric[static_cast<std::size_t>(order[i - 1])])
            rank[idx] = rank[static_cast<std::size_t>(order[i - 1])];
        else
            rank[idx] = static_cast<int>(i);
    }
    return rank;
}

} // namespace detail

/// Chooses a server without committing. nullopt when no server fits.
inline std::optional<int> choose_server(const VmDescriptor& vm, const Cluster& cluster, const SchedulerConfig& cfg)
{
    const std::vector<int> candidates = filter_constraints(vm, cluster);
    if (candidates.empty()) return std::nullopt;
    const std::size_t n = candidates.size();

    // Packing: fewest free cores after placement. Free cores are small
    // integers, so ranks come from a histogram.
    const int max_free = cluster.topology().cores_per_blade;
    std::vector<int> below(static_cast<std::size_t>(max_free + 2), 0);
    for (int s : candidates) ++below[static_cast<std::size_t>(cluster.free_cores(s) + 1)];
    for (std::size_t i = 1; i < below.size(); ++i) below[i] += below[i - 1];

    std::vector<double> power_metric;
    std::vector<int> power_rank;
    if (cfg.power_rule_weight > 0.0) {
        std::vector<double> kappa(static_cast<std::size_t>(cluster.chassis_count()));
        for (int c = 0; c < cluster.chassis_count(); ++c)
            kappa[static_cast<std::size_t>(c)] = score_chassis(cluster.chassis_load(c));
        power_metric.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const int s = candidates[i];
            const double eta = score_server(vm.effective.label, cluster.server_load(s));
            power_metric[i] = cfg.alpha * kappa[static_cast<std::size_t>(cluster.chassis_of(s))] + (1.0 - cfg.alpha) * eta;
        }
        power_rank = detail::competition_ranks(power_metric);
    }

    const double dn = static_cast<double>(n);
    int best = -1;
    double best_points = -1.0;
    int best_free = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int s = candidates[i];
        const int free = cluster.free_cores(s);
        const double pack_points = 1.0 - below[static_cast<std::size_t>(free)] / dn;
        double points = cfg.packing_rule_weight * pack_points;
        if (!power_rank.empty()) points += cfg.power_rule_weight * (1.0 - power_rank[i] / dn);
        if (points > best_points || (points == best_points && free < best_free)) {
            best = s;
            best_points = points;
            best_free = free;
        }
    }
    return best;
}

/// Chooses and commits. nullopt signals a deployment failure for this VM.
inline std::optional<int> place(const VmDescriptor& vm, Cluster& cluster, const SchedulerConfig& cfg)
{
    auto s = choose_server(vm, cluster, cfg);
    if (s) cluster.commit(*s, vm);
    return s;
}

/// All-or-nothing placement of a multi-VM deployment.
inline std::optional<std::vector<int>> place_deployment(std::span<const VmDescriptor> vms, Cluster& cluster,
                                                        const SchedulerConfig& cfg)
{
    std::vector<int> placed;
    placed.reserve(vms.size());
    for (const VmDescriptor& vm : vms) {
        auto s = place(vm, cluster, cfg);
        if (!s) {
            for (std::size_t i = placed.size(); i-- > 0;) cluster.remove(placed[i], vms[i]);
            return std::nullopt;
        }
        placed.push_back(*s);
    }
    return placed;
}

} // namespace vmpower::scheduler
