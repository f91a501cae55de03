#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hibersim/lifecycle.hpp"

namespace hibersim {

enum class SwapMode { PageFault, Reap };

inline const char* to_string(SwapMode m) {
    return m == SwapMode::PageFault ? "pagefault" : "reap";
}

inline SwapMode swap_mode_from_string(const std::string& s) {
    if (s == "pagefault") return SwapMode::PageFault;
    if (s == "reap") return SwapMode::Reap;
    throw ConfigError("mode must be 'pagefault' or 'reap', got '" + s + "'");
}

// The modeled shared runtime binary: one mapping amortized across the
// instances of a deployment, the way PSS accounting splits it. This is a
// model constant, not a measured value.
inline constexpr std::uint64_t kRuntimeSharedBytes = 20ull << 20;
inline constexpr std::uint64_t kModeledInstances = 10;
inline constexpr std::uint64_t kRuntimeOverheadPerInstance =
    kRuntimeSharedBytes / kModeledInstances;

struct ScenarioConfig {
    std::string name = "custom";
    std::uint64_t init_pages = 1000;
    std::uint64_t freed_after_init_pages = 0;
    std::uint64_t file_backed_pages = 0;
    double working_set_fraction = 0.5;
    double request_compute_cost = 0.0;
    SwapMode mode = SwapMode::PageFault;
    std::uint64_t repetitions = 3;
    std::uint64_t seed = 1;
    StorageModel storage;
    double cold_start_runtime_cost = 0.3;

    void validate() const {
        if (name.empty()) throw ConfigError("scenario name must not be empty");
        if (!(working_set_fraction > 0.0) || working_set_fraction > 1.0)
            throw ConfigError("working_set_fraction must be in (0, 1]");
        if (freed_after_init_pages > init_pages)
            throw ConfigError("freed_after_init_pages must be <= init_pages");
        if (request_compute_cost < 0) throw ConfigError("request_compute_cost must be >= 0");
        if (cold_start_runtime_cost < 0) throw ConfigError("cold_start_runtime_cost must be >= 0");
        if (repetitions == 0) throw ConfigError("repetitions must be >= 1");
        storage.validate();
    }
};

// Flat key = value config document, '#' starts a comment.
inline ScenarioConfig parse_config(std::istream& in) {
    ScenarioConfig cfg;
    std::string line;
    std::uint64_t lineno = 0;
    auto trim = [](std::string s) {
        const char* ws = " \t\r";
        const auto b = s.find_first_not_of(ws);
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(ws);
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "name") cfg.name = value;
            else if (key == "init_pages") cfg.init_pages = std::stoull(value);
            else if (key == "freed_after_init_pages") cfg.freed_after_init_pages = std::stoull(value);
            else if (key == "file_backed_pages") cfg.file_backed_pages = std::stoull(value);
            else if (key == "working_set_fraction") cfg.working_set_fraction = std::stod(value);
            else if (key == "request_compute_cost") cfg.request_compute_cost = std::stod(value);
            else if (key == "mode") cfg.mode = swap_mode_from_string(value);
            else if (key == "repetitions") cfg.repetitions = std::stoull(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "random_read_bps") cfg.storage.random_read_bps = std::stod(value);
            else if (key == "sequential_read_bps") cfg.storage.sequential_read_bps = std::stod(value);
            else if (key == "guest_host_switch_cost") cfg.storage.guest_host_switch_cost = std::stod(value);
            else if (key == "cold_start_runtime_cost") cfg.cold_start_runtime_cost = std::stod(value);
            else throw ConfigError("unknown config key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ConfigError("config line " + std::to_string(lineno) + ": bad value for " + key);
        }
    }
    return cfg;
}

inline ScenarioConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse_config(in);
}

// Deterministic k-element sample without replacement, stable across
// platforms (std::shuffle is not).
inline std::vector<std::uint64_t> sample_indices(std::mt19937_64& rng,
                                                 std::vector<std::uint64_t> pool,
                                                 std::uint64_t k) {
    if (k > pool.size()) k = pool.size();
    for (std::uint64_t i = 0; i < k; ++i) {
        const std::uint64_t j = i + rng() % (pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

// Synthetic trace construction: init writes init_pages distinct pages and
// frees a random subset; every request touches one fixed pseudo-random
// working set of ceil(ws * init_pages) pages drawn from the surviving
// pages, capped at the surviving count. The set is chosen once per
// scenario: these workloads access a stable working set across requests.
struct BuiltScenario {
    Workload workload;
    std::vector<std::uint64_t> working_set_indices;
};

inline BuiltScenario build_scenario(const ScenarioConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    BuiltScenario built;
    built.workload.init_pages = cfg.init_pages;
    built.workload.content_seed = cfg.seed;

    std::vector<std::uint64_t> all(cfg.init_pages);
    for (std::uint64_t i = 0; i < cfg.init_pages; ++i) all[i] = i;
    built.workload.freed_page_indices = sample_indices(rng, all, cfg.freed_after_init_pages);

    std::vector<bool> freed(cfg.init_pages, false);
    for (std::uint64_t idx : built.workload.freed_page_indices) freed[idx] = true;
    std::vector<std::uint64_t> surviving;
    surviving.reserve(cfg.init_pages - cfg.freed_after_init_pages);
    for (std::uint64_t i = 0; i < cfg.init_pages; ++i) {
        if (!freed[i]) surviving.push_back(i);
    }
    const auto target = static_cast<std::uint64_t>(
        std::ceil(cfg.working_set_fraction * static_cast<double>(cfg.init_pages)));
    built.working_set_indices = sample_indices(rng, std::move(surviving), target);

    built.workload.file_pages = cfg.file_backed_pages;
    built.workload.file_bytes.assign(cfg.file_backed_pages * kPageSize, 0);
    for (std::uint64_t i = 0; i < cfg.file_backed_pages; ++i) {
        const std::uint64_t stamp = page_stamp(cfg.seed ^ 0xF11Eull, i);
        std::memcpy(built.workload.file_bytes.data() + i * kPageSize, &stamp, 8);
    }
    return built;
}

struct StateSnapshot {
    std::uint64_t committed_pages = 0;
    std::uint64_t footprint_bytes = 0;
};

struct PhaseMetrics {
    double response_latency = 0.0;
    std::uint64_t swap_faults = 0;
    std::uint64_t pages_prefetched = 0;
};

struct ScenarioReport {
    std::string scenario;
    std::string mode;
    std::uint64_t seed = 0;

    // Model constants, stated so the numbers are readable as a model:
    // latencies cover modeled components only (storage reads, guest/host
    // switches, configured compute), not an HTTP stack.
    std::uint64_t page_size = kPageSize;
    std::uint64_t runtime_overhead_bytes = kRuntimeOverheadPerInstance;
    std::uint64_t modeled_instances = kModeledInstances;

    std::uint64_t init_pages = 0;
    std::uint64_t freed_pages = 0;
    std::uint64_t file_pages = 0;
    std::uint64_t working_set_pages = 0;
    std::uint64_t control_pages = 0;
    std::uint64_t hibernate_anonymous_committed_pages = 0;

    StateSnapshot warm;
    StateSnapshot hibernate;
    StateSnapshot wokenup;

    PhaseMetrics cold;
    PhaseMetrics warm_request;
    PhaseMetrics hibernate_first_request;
    PhaseMetrics wokenup_second_request;

    double hibernate_over_warm_footprint = 0.0;
    double wokenup_over_warm_footprint = 0.0;
    double hibernate_latency_over_cold = 0.0;
};

inline std::uint64_t footprint_bytes(const Sandbox& sb) {
    return sb.committed_pages() * kPageSize + kRuntimeOverheadPerInstance;
}

// Canonical measurement sequence: cold start (runtime boot constant plus
// the triggering request), N warm requests, STOP, hibernate footprint,
// first wake request, second request on the woken-up container. In reap
// mode the sample-request record cycle runs before the measured hibernation.
inline ScenarioReport run_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    const BuiltScenario built = build_scenario(cfg);

    SandboxParams params;
    params.storage = cfg.storage;
    params.cold_start_runtime_cost = cfg.cold_start_runtime_cost;
    auto sb = Sandbox::cold_start(1, built.workload, params);

    RequestTrace trace;
    trace.compute_cost = cfg.request_compute_cost;
    trace.touches.reserve(built.working_set_indices.size());
    for (std::uint64_t idx : built.working_set_indices) {
        trace.touches.push_back(sb->anon_base() + idx * kPageSize);
    }

    ScenarioReport rep;
    rep.scenario = cfg.name;
    rep.mode = to_string(cfg.mode);
    rep.seed = cfg.seed;
    rep.init_pages = cfg.init_pages;
    rep.freed_pages = cfg.freed_after_init_pages;
    rep.file_pages = cfg.file_backed_pages;
    rep.working_set_pages = built.working_set_indices.size();

    const RequestResult triggering = sb->submit_request(trace);
    rep.cold = {cfg.cold_start_runtime_cost + triggering.response_latency,
                triggering.swap_faults, triggering.pages_prefetched};

    RequestResult warm_res = triggering;
    for (std::uint64_t i = 0; i < cfg.repetitions; ++i) warm_res = sb->submit_request(trace);
    rep.warm_request = {warm_res.response_latency, warm_res.swap_faults,
                        warm_res.pages_prefetched};
    rep.warm = {sb->committed_pages(), footprint_bytes(*sb)};

    if (cfg.mode == SwapMode::Reap) {
        sb->deliver_signal(Signal::Stop);
        sb->swap().begin_record();
        sb->submit_request(trace);  // the platform's sample request
        sb->swap().end_record();
    }
    sb->deliver_signal(Signal::Stop);

    rep.hibernate = {sb->committed_pages(), footprint_bytes(*sb)};
    rep.control_pages = sb->control_pages();
    rep.hibernate_anonymous_committed_pages = sb->anonymous_committed_pages();

    const RequestResult wake = sb->submit_request(trace);
    rep.hibernate_first_request = {wake.response_latency, wake.swap_faults,
                                   wake.pages_prefetched};

    const RequestResult second = sb->submit_request(trace);
    rep.wokenup_second_request = {second.response_latency, second.swap_faults,
                                  second.pages_prefetched};
    rep.wokenup = {sb->committed_pages(), footprint_bytes(*sb)};

    rep.hibernate_over_warm_footprint =
        static_cast<double>(rep.hibernate.footprint_bytes) /
        static_cast<double>(rep.warm.footprint_bytes);
    rep.wokenup_over_warm_footprint =
        static_cast<double>(rep.wokenup.footprint_bytes) /
        static_cast<double>(rep.warm.footprint_bytes);
    rep.hibernate_latency_over_cold =
        rep.hibernate_first_request.response_latency / rep.cold.response_latency;

    sb->audit();
    return rep;
}

struct ComparisonReport {
    ScenarioReport pagefault;
    ScenarioReport reap;
    double pagefault_wake_latency = 0.0;
    double reap_wake_latency = 0.0;
    double wake_latency_ratio = 0.0;
};

// Same scenario, same seed, both swap-in modes side by side.
inline ComparisonReport compare_modes(ScenarioConfig cfg) {
    ComparisonReport cmp;
    cfg.mode = SwapMode::PageFault;
    cmp.pagefault = run_scenario(cfg);
    cfg.mode = SwapMode::Reap;
    cmp.reap = run_scenario(cfg);
    cmp.pagefault_wake_latency = cmp.pagefault.hibernate_first_request.response_latency;
    cmp.reap_wake_latency = cmp.reap.hibernate_first_request.response_latency;
    cmp.wake_latency_ratio = cmp.pagefault_wake_latency / cmp.reap_wake_latency;
    return cmp;
}

// Presets named after the benchmark families they approximate, with page
// counts scaled to the reported footprints at 4KB granularity. The
// latencies and footprints these produce are model outputs, not replays of
// measured hardware numbers.
inline std::vector<ScenarioConfig> presets() {
    std::vector<ScenarioConfig> out;

    ScenarioConfig hello;
    hello.name = "hello-world-small";
    hello.init_pages = 3000;
    hello.freed_after_init_pages = 300;
    hello.file_backed_pages = 800;
    hello.working_set_fraction = 0.40;
    hello.request_compute_cost = 0.005;
    hello.repetitions = 3;
    hello.seed = 42;
    hello.cold_start_runtime_cost = 0.30;
    out.push_back(hello);

    ScenarioConfig image;
    image.name = "image-processing-like";
    image.init_pages = 65000;
    image.freed_after_init_pages = 2500;
    image.file_backed_pages = 5000;
    image.working_set_fraction = 0.85;
    image.request_compute_cost = 0.20;
    image.repetitions = 2;
    image.seed = 7;
    image.cold_start_runtime_cost = 3.50;
    out.push_back(image);

    ScenarioConfig video;
    video.name = "video-processing-like";
    video.init_pages = 52000;
    video.freed_after_init_pages = 5000;
    video.file_backed_pages = 4000;
    video.working_set_fraction = 0.35;
    video.request_compute_cost = 1.10;
    video.repetitions = 2;
    video.seed = 11;
    video.cold_start_runtime_cost = 3.60;
    out.push_back(video);

    return out;
}

inline std::optional<ScenarioConfig> find_preset(const std::string& name) {
    for (const auto& p : presets()) {
        if (p.name == name) return p;
    }
    return std::nullopt;
}

// ---- report emission ----

enum class ReportFormat { Json, Csv, Table };

inline ReportFormat report_format_from_string(const std::string& s) {
    if (s == "json") return ReportFormat::Json;
    if (s == "csv") return ReportFormat::Csv;
    if (s == "table") return ReportFormat::Table;
    throw ConfigError("format must be json, csv or table, got '" + s + "'");
}

inline nlohmann::ordered_json to_json(const StateSnapshot& s) {
    return {{"committed_pages", s.committed_pages}, {"footprint_bytes", s.footprint_bytes}};
}

inline nlohmann::ordered_json to_json(const PhaseMetrics& p) {
    return {{"response_latency", p.response_latency},
            {"swap_faults", p.swap_faults},
            {"pages_prefetched", p.pages_prefetched}};
}

inline nlohmann::ordered_json to_json(const ScenarioReport& r) {
    nlohmann::ordered_json j;
    j["scenario"] = r.scenario;
    j["mode"] = r.mode;
    j["seed"] = r.seed;
    j["model"] = {{"page_size", r.page_size},
                  {"runtime_overhead_bytes", r.runtime_overhead_bytes},
                  {"modeled_instances", r.modeled_instances},
                  {"note", "latencies cover modeled components only"}};
    j["workload"] = {{"init_pages", r.init_pages},
                     {"freed_pages", r.freed_pages},
                     {"file_pages", r.file_pages},
                     {"working_set_pages", r.working_set_pages}};
    j["control_pages"] = r.control_pages;
    j["hibernate_anonymous_committed_pages"] = r.hibernate_anonymous_committed_pages;
    j["states"] = {{"warm", to_json(r.warm)},
                   {"hibernate", to_json(r.hibernate)},
                   {"wokenup", to_json(r.wokenup)}};
    j["phases"] = {{"cold", to_json(r.cold)},
                   {"warm_request", to_json(r.warm_request)},
                   {"hibernate_first_request", to_json(r.hibernate_first_request)},
                   {"wokenup_second_request", to_json(r.wokenup_second_request)}};
    j["ratios"] = {{"hibernate_over_warm_footprint", r.hibernate_over_warm_footprint},
                   {"wokenup_over_warm_footprint", r.wokenup_over_warm_footprint},
                   {"hibernate_latency_over_cold", r.hibernate_latency_over_cold}};
    return j;
}

inline StateSnapshot state_snapshot_from_json(const nlohmann::json& j) {
    return {j.at("committed_pages").get<std::uint64_t>(),
            j.at("footprint_bytes").get<std::uint64_t>()};
}

inline PhaseMetrics phase_metrics_from_json(const nlohmann::json& j) {
    return {j.at("response_latency").get<double>(), j.at("swap_faults").get<std::uint64_t>(),
            j.at("pages_prefetched").get<std::uint64_t>()};
}

inline ScenarioReport report_from_json(const nlohmann::json& j) {
    ScenarioReport r;
    r.scenario = j.at("scenario").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.page_size = j.at("model").at("page_size").get<std::uint64_t>();
    r.runtime_overhead_bytes = j.at("model").at("runtime_overhead_bytes").get<std::uint64_t>();
    r.modeled_instances = j.at("model").at("modeled_instances").get<std::uint64_t>();
    r.init_pages = j.at("workload").at("init_pages").get<std::uint64_t>();
    r.freed_pages = j.at("workload").at("freed_pages").get<std::uint64_t>();
    r.file_pages = j.at("workload").at("file_pages").get<std::uint64_t>();
    r.working_set_pages = j.at("workload").at("working_set_pages").get<std::uint64_t>();
    r.control_pages = j.at("control_pages").get<std::uint64_t>();
    r.hibernate_anonymous_committed_pages =
        j.at("hibernate_anonymous_committed_pages").get<std::uint64_t>();
    r.warm = state_snapshot_from_json(j.at("states").at("warm"));
    r.hibernate = state_snapshot_from_json(j.at("states").at("hibernate"));
    r.wokenup = state_snapshot_from_json(j.at("states").at("wokenup"));
    r.cold = phase_metrics_from_json(j.at("phases").at("cold"));
    r.warm_request = phase_metrics_from_json(j.at("phases").at("warm_request"));
    r.hibernate_first_request = phase_metrics_from_json(j.at("phases").at("hibernate_first_request"));
    r.wokenup_second_request = phase_metrics_from_json(j.at("phases").at("wokenup_second_request"));
    r.hibernate_over_warm_footprint = j.at("ratios").at("hibernate_over_warm_footprint").get<double>();
    r.wokenup_over_warm_footprint = j.at("ratios").at("wokenup_over_warm_footprint").get<double>();
    r.hibernate_latency_over_cold = j.at("ratios").at("hibernate_latency_over_cold").get<double>();
    return r;
}

inline void write_csv(const ScenarioReport& r, std::ostream& out) {
    out << "state,metric,value\n";
    auto state_rows = [&](const char* name, const StateSnapshot& s) {
        out << name << ",committed_pages," << s.committed_pages << "\n";
        out << name << ",footprint_bytes," << s.footprint_bytes << "\n";
    };
    auto phase_rows = [&](const char* name, const PhaseMetrics& p) {
        out << name << ",response_latency," << p.response_latency << "\n";
        out << name << ",swap_faults," << p.swap_faults << "\n";
        out << name << ",pages_prefetched," << p.pages_prefetched << "\n";
    };
    state_rows("warm", r.warm);
    state_rows("hibernate", r.hibernate);
    state_rows("wokenup", r.wokenup);
    phase_rows("cold", r.cold);
    phase_rows("warm_request", r.warm_request);
    phase_rows("hibernate_first_request", r.hibernate_first_request);
    phase_rows("wokenup_second_request", r.wokenup_second_request);
    out << "ratio,hibernate_over_warm_footprint," << r.hibernate_over_warm_footprint << "\n";
    out << "ratio,wokenup_over_warm_footprint," << r.wokenup_over_warm_footprint << "\n";
    out << "ratio,hibernate_latency_over_cold," << r.hibernate_latency_over_cold << "\n";
}

inline void write_table(const ScenarioReport& r, std::ostream& out) {
    out << "scenario " << r.scenario << " (mode=" << r.mode << ", seed=" << r.seed << ")\n";
    out << "  working set: " << r.working_set_pages << " of " << r.init_pages
        << " init pages, " << r.freed_pages << " freed, " << r.file_pages << " file-backed\n";
    out << "  state      committed_pages  footprint_bytes\n";
    auto state_row = [&](const char* name, const StateSnapshot& s) {
        out << "  " << name << std::string(11 - std::strlen(name), ' ')
            << s.committed_pages << "  " << s.footprint_bytes << "\n";
    };
    state_row("warm", r.warm);
    state_row("hibernate", r.hibernate);
    state_row("wokenup", r.wokenup);
    out << "  phase                     latency_s  swap_faults  prefetched\n";
    auto phase_row = [&](const char* name, const PhaseMetrics& p) {
        out << "  " << name << std::string(26 - std::strlen(name), ' ') << p.response_latency
            << "  " << p.swap_faults << "  " << p.pages_prefetched << "\n";
    };
    phase_row("cold", r.cold);
    phase_row("warm_request", r.warm_request);
    phase_row("hibernate_first_request", r.hibernate_first_request);
    phase_row("wokenup_second_request", r.wokenup_second_request);
    out << "  hibernate/warm footprint: " << r.hibernate_over_warm_footprint << "\n";
    out << "  wokenup/warm footprint:   " << r.wokenup_over_warm_footprint << "\n";
    out << "  hibernate/cold latency:   " << r.hibernate_latency_over_cold << "\n";
}

inline void write_report(const ScenarioReport& r, ReportFormat format, std::ostream& out) {
    switch (format) {
        case ReportFormat::Json: out << to_json(r).dump(2) << "\n"; break;
        case ReportFormat::Csv: write_csv(r, out); break;
        case ReportFormat::Table: write_table(r, out); break;
    }
}

// path empty or "-" writes to stdout.
inline void emit_report(const ScenarioReport& r, ReportFormat format, const std::string& path) {
    if (path.empty() || path == "-") {
        write_report(r, format, std::cout);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open report path: " + path);
    write_report(r, format, out);
    if (!out) throw Error("failed writing report to: " + path);
}

inline nlohmann::ordered_json to_json(const ComparisonReport& c) {
    nlohmann::ordered_json j;
    j["pagefault"] = to_json(c.pagefault);
    j["reap"] = to_json(c.reap);
    j["pagefault_wake_latency"] = c.pagefault_wake_latency;
    j["reap_wake_latency"] = c.reap_wake_latency;
    j["wake_latency_ratio"] = c.wake_latency_ratio;
    return j;
}

}  // namespace hibersim
