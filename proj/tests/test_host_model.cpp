#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "hibersim/host_model.hpp"

using namespace hibersim;

TEST_CASE("fresh commit zero-fills") {
    HostMemory host;
    PageBytes& content = host.commit(0x1000);
    for (std::uint8_t b : content) REQUIRE(b == 0);
    REQUIRE(host.committed_pages() == 1);
    REQUIRE(host.is_committed(0x1000));
}

TEST_CASE("commit is idempotent and preserves content") {
    HostMemory host;
    host.commit(0x1000)[0] = 0xAB;
    PageBytes& again = host.commit(0x1000);
    CHECK(again[0] == 0xAB);
    CHECK(host.commit_count() == 1);
    CHECK(host.committed_pages() == 1);
}

TEST_CASE("decommit destroys content, next commit zero-fills") {
    HostMemory host;
    host.commit(0x2000)[7] = 0xCD;
    REQUIRE(host.decommit(0x2000, 1) == 1);
    REQUIRE(!host.is_committed(0x2000));
    CHECK(host.commit(0x2000)[7] == 0);
}

TEST_CASE("decommit counts only committed pages in range") {
    HostMemory host;
    host.commit(0x0000);
    host.commit(0x1000);
    host.commit(0x2000);
    // 0x3000 left uncommitted
    CHECK(host.decommit(0x0000, 4) == 3);
    CHECK(host.committed_pages() == 0);
}

TEST_CASE("decommit of an empty range is a no-op") {
    HostMemory host;
    host.commit(0x1000);
    CHECK(host.decommit(0x1000, 0) == 0);
    CHECK(host.committed_pages() == 1);
}

TEST_CASE("decommitting a whole block drops a 4MB footprint") {
    HostMemory host;
    const PageAddr block = 2 * kBlockSize;
    for (std::uint64_t i = 0; i < kPagesPerBlock; ++i) host.commit(block + i * kPageSize);
    const std::uint64_t before = host.committed_pages();
    REQUIRE(before == kPagesPerBlock);
    CHECK(host.decommit(block, kPagesPerBlock) == 1024);
    CHECK(before - host.committed_pages() == kBlockSize / kPageSize);
}

TEST_CASE("commit/decommit accounting matches set cardinality") {
    HostMemory host;
    std::mt19937_64 rng(99);
    for (int i = 0; i < 5000; ++i) {
        const PageAddr page = (rng() % 512) * kPageSize;
        if (rng() % 2) {
            host.commit(page);
        } else {
            host.decommit(page, 1);
        }
    }
    CHECK(host.committed_pages() == host.commit_count() - host.decommit_count());
    CHECK(host.committed_set().size() == host.committed_pages());
}

TEST_CASE("read latency follows the storage model formulas") {
    StorageModel model;  // defaults: 100MB/s random, 1GB/s sequential, 15us switch

    CHECK(model.read_latency(0, AccessPattern::Random) == 0.0);
    CHECK(model.read_latency(0, AccessPattern::Sequential) == 0.0);

    const double random_expected = 1024.0 * (4096.0 / 100e6 + 15e-6);  // ~0.0573 s
    CHECK_THAT(model.read_latency(1024, AccessPattern::Random),
               Catch::Matchers::WithinAbs(random_expected, 1e-12));
    CHECK_THAT(model.read_latency(1024, AccessPattern::Random),
               Catch::Matchers::WithinAbs(0.0573, 2e-4));

    const double seq_expected = 1024.0 * 4096.0 / 1e9;  // ~0.0042 s
    CHECK_THAT(model.read_latency(1024, AccessPattern::Sequential),
               Catch::Matchers::WithinAbs(seq_expected, 1e-12));
}

TEST_CASE("sequential reads always beat random reads at defaults") {
    StorageModel model;
    for (std::uint64_t n : {1, 2, 7, 64, 1000, 100000}) {
        CHECK(model.read_latency(n, AccessPattern::Sequential) <
              model.read_latency(n, AccessPattern::Random));
    }
}

TEST_CASE("storage model validation") {
    StorageModel model;
    CHECK_NOTHROW(model.validate());
    model.random_read_bps = 0;
    CHECK_THROWS_AS(model.validate(), ConfigError);
    model = StorageModel{};
    model.sequential_read_bps = model.random_read_bps / 2;
    CHECK_THROWS_AS(model.validate(), ConfigError);
    model = StorageModel{};
    model.guest_host_switch_cost = -1e-6;
    CHECK_THROWS_AS(model.validate(), ConfigError);
}

TEST_CASE("content round-trips until decommit") {
    HostMemory host;
    std::mt19937_64 rng(7);
    PageBytes pattern;
    for (auto& b : pattern) b = static_cast<std::uint8_t>(rng());
    host.commit(0x5000) = pattern;
    REQUIRE(*host.find(0x5000) == pattern);
    host.decommit(0x5000, 1);
    CHECK(host.find(0x5000) == nullptr);
}
