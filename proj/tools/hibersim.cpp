// hibersim: trace-driven benchmark harness for the hibernate-container
// memory pipeline. Drives synthetic workloads through the cold / warm /
// hibernate / woken-up lifecycle and reports footprints and modeled
// latencies.

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hibersim/hibersim.hpp"

namespace {

hibersim::ScenarioConfig resolve_config(const std::string& spec) {
    if (std::filesystem::exists(spec)) return hibersim::load_config_file(spec);
    if (auto preset = hibersim::find_preset(spec)) return *preset;
    throw hibersim::ConfigError("no such config file or preset: " + spec);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hibernate-container memory pipeline simulator"};
    app.require_subcommand(1);

    std::string config_spec;
    std::string mode_str;
    std::string report_path;
    std::string format_str = "json";
    std::uint64_t seed = 0;
    bool seed_set = false;

    auto* run = app.add_subcommand("run", "run one scenario and emit a report");
    run->add_option("--config", config_spec, "config file path or bundled preset name")
        ->required();
    run->add_option("--mode", mode_str, "swap-in mode: pagefault or reap");
    run->add_option("--seed", seed, "override the scenario seed")
        ->each([&](const std::string&) { seed_set = true; });
    run->add_option("--report", report_path, "report output path (default: stdout)");
    run->add_option("--format", format_str, "report format: json, csv or table");

    auto* compare = app.add_subcommand("compare", "run both swap-in modes side by side");
    compare->add_option("--config", config_spec, "config file path or bundled preset name")
        ->required();

    auto* list = app.add_subcommand("presets", "list bundled preset configs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            hibersim::ScenarioConfig cfg = resolve_config(config_spec);
            if (!mode_str.empty()) cfg.mode = hibersim::swap_mode_from_string(mode_str);
            if (seed_set) cfg.seed = seed;
            const auto format = hibersim::report_format_from_string(format_str);
            const hibersim::ScenarioReport report = hibersim::run_scenario(cfg);
            hibersim::emit_report(report, format, report_path);
        } else if (compare->parsed()) {
            const hibersim::ScenarioConfig cfg = resolve_config(config_spec);
            const hibersim::ComparisonReport cmp = hibersim::compare_modes(cfg);
            std::cout << hibersim::to_json(cmp).dump(2) << "\n";
        } else if (list->parsed()) {
            for (const auto& p : hibersim::presets()) {
                std::cout << p.name << ": init_pages=" << p.init_pages
                          << " freed_after_init_pages=" << p.freed_after_init_pages
                          << " file_backed_pages=" << p.file_backed_pages
                          << " working_set_fraction=" << p.working_set_fraction
                          << " request_compute_cost=" << p.request_compute_cost
                          << " cold_start_runtime_cost=" << p.cold_start_runtime_cost
                          << " repetitions=" << p.repetitions << " seed=" << p.seed << "\n";
            }
            std::cout << "(page counts approximate the benchmark footprints at 4KB granularity)\n";
        }
    } catch (const hibersim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
