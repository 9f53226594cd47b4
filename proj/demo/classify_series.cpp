// Classifies a diurnal series and a machine-periodic one.

#include "vmpower/criticality.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <vector>

int main()
{
    using namespace vmpower;

    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 0.03);
    auto series = [&](double period_hours) {
        std::vector<double> v;
        for (int slot = 0; slot < 14 * 48; ++slot) {
            const double h = slot * 0.5;
            const double x = 0.45 + 0.25 * std::sin(2.0 * std::numbers::pi * h / period_hours) + noise(rng);
            v.push_back(std::clamp(x, 0.0, 1.0));
        }
        return criticality::UtilizationSeries(std::move(v));
    };

    for (double period : {24.0, 8.0}) {
        const criticality::Classification c = criticality::classify(series(period));
        std::printf("%4.0f h period -> %-14s compare8=%.3f compare12=%.3f\n", period,
                    std::string(to_string(c.label)).c_str(), c.scores.compare8, c.scores.compare12);
    }
}
