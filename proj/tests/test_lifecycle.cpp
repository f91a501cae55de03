#include <catch2/catch_amalgamated.hpp>

#include "hibersim/lifecycle.hpp"

using namespace hibersim;

namespace {

Workload simple_workload(std::uint64_t init_pages, std::vector<std::uint64_t> freed = {},
                         std::uint64_t file_pages = 0) {
    Workload w;
    w.init_pages = init_pages;
    w.freed_page_indices = std::move(freed);
    w.file_pages = file_pages;
    w.file_bytes.assign(file_pages * kPageSize, 0x3C);
    w.content_seed = 1234;
    return w;
}

RequestTrace touching(const Sandbox& sb, std::uint64_t first, std::uint64_t count,
                      double compute = 0.0) {
    RequestTrace t;
    t.compute_cost = compute;
    for (std::uint64_t i = 0; i < count; ++i)
        t.touches.push_back(sb.anon_base() + (first + i) * kPageSize);
    return t;
}

}  // namespace

TEST_CASE("transition relation matches the nine-edge state machine") {
    using S = ContainerState;
    using T = Trigger;
    // the nine legal edges
    CHECK(next_state(S::Cold, T::Request) == S::Warm);
    CHECK(next_state(S::Warm, T::Request) == S::Running);
    CHECK(next_state(S::Running, T::Done) == S::Warm);
    CHECK(next_state(S::Warm, T::Stop) == S::Hibernate);
    CHECK(next_state(S::Hibernate, T::Cont) == S::WokenUp);
    CHECK(next_state(S::WokenUp, T::Request) == S::HibernateRunning);
    CHECK(next_state(S::Hibernate, T::Request) == S::HibernateRunning);
    CHECK(next_state(S::HibernateRunning, T::Done) == S::WokenUp);
    CHECK(next_state(S::WokenUp, T::Stop) == S::Hibernate);
    // a few of the rejections
    CHECK(!next_state(S::Running, T::Stop));
    CHECK(!next_state(S::HibernateRunning, T::Stop));
    CHECK(!next_state(S::Hibernate, T::Stop));
    CHECK(!next_state(S::Warm, T::Cont));
    CHECK(!next_state(S::Cold, T::Stop));
}

TEST_CASE("cold start runs the init trace and lands Warm") {
    auto sb = Sandbox::cold_start(1, simple_workload(100));
    CHECK(sb->state() == ContainerState::Warm);
    CHECK(!sb->paused());
    CHECK(sb->committed_pages() == 100 + sb->control_pages());
    CHECK(sb->control_pages() == 1);
}

TEST_CASE("cold start with an empty init trace") {
    auto sb = Sandbox::cold_start(1, simple_workload(0));
    CHECK(sb->state() == ContainerState::Warm);
    CHECK(sb->committed_pages() == 0);
}

TEST_CASE("deflation reclaims, swaps and releases in one pass") {
    auto sb = Sandbox::cold_start(1, simple_workload(70, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12,
                                                          13, 14, 15, 16, 17, 18, 19},
                                                     10));
    REQUIRE(sb->committed_pages() == 70 + 10 + 1);  // freed pages are still committed when Warm

    sb->deliver_signal(Signal::Stop);
    const DeflationReport& rep = sb->last_deflation();
    CHECK(rep.reclaimed_pages == 20);
    CHECK(rep.swapped_pages == 50);
    CHECK(rep.file_released_pages == 10);
    CHECK(!rep.reap_mode);

    CHECK(sb->state() == ContainerState::Hibernate);
    CHECK(sb->paused());
    CHECK(sb->committed_pages() == sb->control_pages());
    CHECK(sb->anonymous_committed_pages() == 0);
    sb->audit();
}

TEST_CASE("signals outside the legal edges are rejected with state unchanged") {
    auto sb = Sandbox::cold_start(1, simple_workload(5));
    CHECK_THROWS_AS(sb->deliver_signal(Signal::Cont), TransitionError);
    CHECK(sb->state() == ContainerState::Warm);

    sb->deliver_signal(Signal::Stop);
    CHECK_THROWS_AS(sb->deliver_signal(Signal::Stop), TransitionError);
    CHECK(sb->state() == ContainerState::Hibernate);
    CHECK(sb->committed_pages() == sb->control_pages());
}

TEST_CASE("a warm request over committed pages pays compute only") {
    auto sb = Sandbox::cold_start(1, simple_workload(30));
    const RequestResult r = sb->submit_request(touching(*sb, 0, 30, 0.004));
    CHECK(r.response_latency == 0.004);
    CHECK(r.swap_faults == 0);
    CHECK(r.state_path == std::vector<ContainerState>{ContainerState::Warm,
                                                      ContainerState::Running,
                                                      ContainerState::Warm});
}

TEST_CASE("first request on a hibernated container pays random swap-ins") {
    auto sb = Sandbox::cold_start(1, simple_workload(100));
    sb->deliver_signal(Signal::Stop);

    const RequestResult r = sb->submit_request(touching(*sb, 0, 40, 0.01));
    CHECK(r.swap_faults == 40);
    CHECK_THAT(r.response_latency,
               Catch::Matchers::WithinAbs(
                   sb->storage().read_latency(40, AccessPattern::Random) + 0.01, 1e-12));
    CHECK(r.state_path == std::vector<ContainerState>{ContainerState::Hibernate,
                                                      ContainerState::HibernateRunning,
                                                      ContainerState::WokenUp});
    CHECK(!sb->paused());

    // the second identical request behaves like a warm one
    const RequestResult again = sb->submit_request(touching(*sb, 0, 40, 0.01));
    CHECK(again.swap_faults == 0);
    CHECK(again.response_latency == 0.01);
    CHECK(again.state_path == std::vector<ContainerState>{ContainerState::WokenUp,
                                                          ContainerState::HibernateRunning,
                                                          ContainerState::WokenUp});
}

TEST_CASE("the runtime unblock cost applies when waking from hibernate") {
    SandboxParams params;
    params.wake_unblock_cost = 0.002;
    auto sb = Sandbox::cold_start(1, simple_workload(10), params);
    sb->deliver_signal(Signal::Stop);
    const RequestResult r = sb->submit_request(touching(*sb, 0, 0, 0.0));
    CHECK_THAT(r.response_latency, Catch::Matchers::WithinAbs(0.002, 1e-15));
}

TEST_CASE("CONT without a manifest wakes without eager inflation") {
    auto sb = Sandbox::cold_start(1, simple_workload(50));
    sb->deliver_signal(Signal::Stop);
    REQUIRE(sb->committed_pages() == sb->control_pages());

    sb->deliver_signal(Signal::Cont);
    CHECK(sb->state() == ContainerState::WokenUp);
    CHECK(sb->last_inflate().pages_prefetched == 0);
    CHECK(sb->committed_pages() == sb->control_pages());  // pages stay swapped until touched
}

TEST_CASE("the REAP record cycle drives the second hibernation through the REAP path") {
    auto sb = Sandbox::cold_start(1, simple_workload(100));
    sb->deliver_signal(Signal::Stop);  // first hibernation, page-fault mode

    sb->swap().begin_record();
    sb->submit_request(touching(*sb, 0, 40));  // the platform's sample request
    sb->swap().end_record();
    REQUIRE(sb->state() == ContainerState::WokenUp);

    sb->deliver_signal(Signal::Stop);  // measured hibernation
    const DeflationReport& rep = sb->last_deflation();
    CHECK(rep.reap_mode);
    CHECK(rep.swapped_pages == 40);
    CHECK(sb->anonymous_committed_pages() == 0);
    // REAP swap-out does not touch the page tables
    std::uint64_t still_present = 0;
    for (const auto& [va, pte] : sb->main_space().page_table()) {
        if (pte.present) ++still_present;
    }
    CHECK(still_present == 40);

    // anticipatory wake prefetches the manifest in one batch
    sb->deliver_signal(Signal::Cont);
    CHECK(sb->state() == ContainerState::WokenUp);
    CHECK(sb->last_inflate().pages_prefetched == 40);
    CHECK_THAT(sb->last_inflate().latency,
               Catch::Matchers::WithinAbs(
                   sb->storage().read_latency(40, AccessPattern::Sequential), 1e-12));
    CHECK(sb->committed_pages() == 40 + sb->control_pages());

    const RequestResult r = sb->submit_request(touching(*sb, 0, 40));
    CHECK(r.swap_faults == 0);
    CHECK(r.response_latency == 0.0);
    sb->audit();
}

TEST_CASE("hibernate consumes no compute") {
    auto sb = Sandbox::cold_start(1, simple_workload(20));
    sb->submit_request(touching(*sb, 0, 5, 0.5));
    const double before = sb->compute_seconds();
    sb->deliver_signal(Signal::Stop);
    CHECK(sb->compute_seconds() == before);
    sb->deliver_signal(Signal::Cont);
    CHECK(sb->compute_seconds() == before);
}

TEST_CASE("a failed deflation rolls back to the pre-deflation state") {
    auto sb = Sandbox::cold_start(1, simple_workload(30, {0, 1, 2}));
    const auto committed_before = sb->host().committed_set();

    sb->swap().inject_write_failure();
    CHECK_THROWS_AS(sb->deliver_signal(Signal::Stop), DiskError);
    CHECK(sb->state() == ContainerState::Warm);
    CHECK(!sb->paused());
    CHECK(sb->host().committed_set() == committed_before);
    std::uint64_t present = 0;
    for (const auto& [va, pte] : sb->main_space().page_table()) {
        if (pte.present) ++present;
    }
    CHECK(present == 27);

    sb->deliver_signal(Signal::Stop);  // retry succeeds
    CHECK(sb->state() == ContainerState::Hibernate);
    CHECK(sb->last_deflation().swapped_pages == 27);
    sb->audit();
}
