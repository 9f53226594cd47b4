#include "vmpower/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

// CLI11 fills plain values; these helpers map "was it given" to optionals.
template <class T>
void optional_flag(CLI::App* app, const std::string& name, std::optional<T>& dst, const std::string& help)
{
    app->add_option_function<T>(name, [&dst](const T& v) { dst = v; }, help);
}

} // namespace

int main(int argc, char** argv)
{
    using namespace vmpower::cli;

    CLI::App app{"Datacenter power capping and oversubscription simulator"};
    app.require_subcommand(1);

    ClassifyOptions classify;
    auto* c = app.add_subcommand("classify", "Label a utilization series user-facing or not");
    c->add_option("input", classify.input, "CSV of timestamp,utilization")->required();
    c->add_option("--threshold", classify.threshold, "Compare8 threshold")->capture_default_str();
    c->add_option("--compare12-threshold", classify.compare12_threshold, "Compare12 threshold")->capture_default_str();
    c->add_flag("!--no-compare12-gate", classify.gate_compare12, "Decide on Compare8 alone");
    c->add_option("--cadence", classify.cadence_s, "Seconds between readings")->capture_default_str();
    c->add_flag("--per-day-trim", classify.per_day_trim, "Trim outliers within each day instead of globally");

    GenerateTraceOptions gen;
    auto* g = app.add_subcommand("generate-trace", "Write the arrival trace a config would simulate");
    g->add_option("config", gen.config, "Run config (JSON)")->required();
    g->add_option("-o,--output", gen.output, "Output CSV (default: standard output)");
    g->add_option("--set", gen.overrides, "Override a config value, key.path=value");

    SimulateOptions simo;
    auto* s = app.add_subcommand("simulate", "Run the cluster simulation");
    s->add_option("config", simo.config, "Run config (JSON)")->required();
    s->add_option("--set", simo.overrides, "Override a config value, key.path=value");
    optional_flag(s, "--seed", simo.seed, "Master seed");
    optional_flag(s, "--output-dir", simo.output_dir, "Output directory");
    optional_flag(s, "--trace", simo.trace_file, "Pre-generated trace CSV");
    optional_flag(s, "--sweep", simo.sweep, "key=v1,v2,... one run per value");
    s->add_option("-j,--jobs", simo.jobs, "Parallel runs for --sweep")->capture_default_str();
    s->add_flag("-q,--quiet", simo.quiet, "No summary on standard output");

    BudgetOptions bud;
    auto* b = app.add_subcommand("budget", "Minimum chassis budget from a draw history");
    b->add_option("draws", bud.draws, "CSV of chassis_id,timestamp,watts")->required();
    optional_flag(b, "--config", bud.config, "Take policy and power model from a run config");
    b->add_option("--set", bud.overrides, "Override a config value, key.path=value");
    optional_flag(b, "--history", bud.history, "history.json written by simulate");
    optional_flag(b, "--chassis", bud.chassis, "Only readings from this chassis");
    optional_flag(b, "--emax-uf", bud.emax_uf, "Max fraction of readings that throttle UF VMs");
    optional_flag(b, "--emax-nuf", bud.emax_nuf, "Max fraction of readings that throttle NUF VMs");
    optional_flag(b, "--fmin-uf", bud.fmin_uf, "Lowest UF frequency (fraction of max)");
    optional_flag(b, "--fmin-nuf", bud.fmin_nuf, "Lowest NUF frequency (fraction of max)");
    optional_flag(b, "--buffer", bud.buffer, "Safety margin added to the minimum");
    optional_flag(b, "--delta", bud.delta_w, "Candidate offset below each reading, W");
    optional_flag(b, "--provisioned", bud.provisioned_w, "Provisioned chassis power, W");
    optional_flag(b, "--full-server", bud.full_server, "Throttle whole servers (true/false)");
    optional_flag(b, "--beta", bud.beta, "UF share of allocated cores");
    optional_flag(b, "--util-uf", bud.util_uf, "Mean UF P95 utilization");
    optional_flag(b, "--util-nuf", bud.util_nuf, "Mean NUF P95 utilization");
    optional_flag(b, "--allocated-cores", bud.allocated_cores, "Allocated cores per chassis");
    optional_flag(b, "--shave-list-limit", bud.shave_list_limit, "List shaves only for candidates with at most this many events");
    b->add_option("-o,--output", bud.output, "Output JSON (default: standard output)");

    ReportOptions rep;
    auto* r = app.add_subcommand("report", "Tabulate metrics from one or more runs");
    r->add_option("inputs", rep.inputs, "metrics.json files or directories")->required();
    r->add_flag("--csv", rep.csv, "Emit CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kBadInput;
    }

    try {
        if (*c) return cmd_classify(classify, std::cout, std::cerr);
        if (*g) return cmd_generate_trace(gen, std::cout, std::cerr);
        if (*s) return cmd_simulate(simo, std::cout, std::cerr);
        if (*b) return cmd_budget(bud, std::cout, std::cerr);
        if (*r) return cmd_report(rep, std::cout, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
