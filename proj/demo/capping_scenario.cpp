// One chassis over its budget: balanced placement lets NUF throttling absorb
// the excess, imbalanced placement forces RAPL onto UF-only blades.

#include "vmpower/sim.hpp"

#include <cstdio>

int main()
{
    using namespace vmpower;

    for (const auto& [name, sc] : {std::pair{"balanced", sim::balanced_scenario()},
                                   std::pair{"imbalanced", sim::imbalanced_scenario()}}) {
        const sim::ScenarioReport r = sim::run_chassis_scenario(sc);
        long rapl = 0;
        for (long t : r.rapl_ticks_per_blade) rapl += t;
        std::printf("%-10s max draw %.0f W, UF at f_max %.1f%% of ticks, RAPL blade-ticks %ld (UF-only blades %ld)\n",
                    name, r.max_draw_w, 100.0 * r.uf_at_max_fraction(), rapl, r.rapl_ticks_on_uf_only_blades);
    }
}
