#pragma once

#include <algorithm>
#include <cstring>
#include <unordered_map>
#include <vector>

#include "hibersim/types.hpp"

namespace hibersim {

// The host Linux kernel's view of guest memory. A guest-physical page is
// "committed" once it is touched and stays committed until a decommit
// (madvise(MADV_DONTNEED) in the real system). Decommit is destructive:
// the next commit reads as all zeroes. Content is stored only for committed
// pages, so the model's own memory tracks the simulated footprint.
class HostMemory {
public:
    // Idempotent. First commit after a decommit yields a zeroed page.
    PageBytes& commit(PageAddr page) {
        auto [it, inserted] = pages_.try_emplace(page_base(page));
        if (inserted) {
            it->second.fill(0);
            ++commit_count_;
        }
        return it->second;
    }

    // Returns the number of pages that were actually committed.
    std::uint64_t decommit(PageAddr first_page, std::uint64_t n_pages) {
        std::uint64_t dropped = 0;
        PageAddr page = page_base(first_page);
        for (std::uint64_t i = 0; i < n_pages; ++i, page += kPageSize) {
            dropped += pages_.erase(page);
        }
        decommit_count_ += dropped;
        return dropped;
    }

    bool is_committed(PageAddr page) const { return pages_.count(page_base(page)) != 0; }

    const PageBytes* find(PageAddr page) const {
        auto it = pages_.find(page_base(page));
        return it == pages_.end() ? nullptr : &it->second;
    }

    PageBytes* find(PageAddr page) {
        auto it = pages_.find(page_base(page));
        return it == pages_.end() ? nullptr : &it->second;
    }

    // Live footprint in pages.
    std::uint64_t committed_pages() const { return pages_.size(); }

    std::vector<PageAddr> committed_set() const {
        std::vector<PageAddr> out;
        out.reserve(pages_.size());
        for (const auto& [page, content] : pages_) out.push_back(page);
        std::sort(out.begin(), out.end());
        return out;
    }

    std::uint64_t commit_count() const { return commit_count_; }
    std::uint64_t decommit_count() const { return decommit_count_; }

private:
    std::unordered_map<PageAddr, PageBytes> pages_;
    std::uint64_t commit_count_ = 0;
    std::uint64_t decommit_count_ = 0;
};

enum class AccessPattern { Random, Sequential };

// Parameterized swap storage. Latencies are a deterministic function of
// (page count, access pattern): random reads pay a per-page guest/host
// switch on top of the device throughput, a batched sequential read pays
// throughput only. Defaults follow a commodity NVMe SSD: ~100MB/s for
// random 4K reads, >1GB/s sequential, ~15us per guest/host switch.
struct StorageModel {
    double random_read_bps = 100e6;
    double sequential_read_bps = 1e9;
    double guest_host_switch_cost = 15e-6;

    double read_latency(std::uint64_t n_pages, AccessPattern pattern) const {
        const double n = static_cast<double>(n_pages);
        if (pattern == AccessPattern::Random) {
            return n * (static_cast<double>(kPageSize) / random_read_bps + guest_host_switch_cost);
        }
        return n * static_cast<double>(kPageSize) / sequential_read_bps;
    }

    void validate() const {
        if (!(random_read_bps > 0)) throw ConfigError("random_read_bps must be > 0");
        if (sequential_read_bps < random_read_bps)
            throw ConfigError("sequential_read_bps must be >= random_read_bps");
        if (guest_host_switch_cost < 0) throw ConfigError("guest_host_switch_cost must be >= 0");
    }
};

}  // namespace hibersim
