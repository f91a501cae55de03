// Independent reference models the tests check the real implementations
// against. Deliberately simple data structures, no sharing of code with the
// library internals they audit.
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "hibersim/types.hpp"

namespace hibersim::testing {

// Sorted-set + count-map model of the bitmap allocator. The address chosen
// by alloc_page is mirrored in, then every derived fact (allocated set,
// refcounts, per-block free sets, free-list membership) is recomputed
// naively and compared against the real allocator.
class NaiveAllocator {
public:
    // Returns the lowest free page address of the block, which is what the
    // lowest-bit-first policy must hand out from that block. A block never
    // seen before is fresh: its lowest free page is page 1.
    PageAddr lowest_free_in(PageAddr block) {
        ensure_block(block);
        const auto& free = free_in_block_.at(block);
        if (free.empty()) throw std::logic_error("naive: block has no free page");
        return block + *free.begin() * kPageSize;
    }

    void on_alloc(PageAddr page) {
        const PageAddr block = block_base(page);
        ensure_block(block);
        const std::uint64_t idx = (page - block) / kPageSize;
        auto& free = free_in_block_.at(block);
        if (!free.count(idx)) throw std::logic_error("naive: alloc of a non-free page");
        free.erase(idx);
        counts_[page] = 1;
        allocated_.insert(page);
    }

    void on_inc_ref(PageAddr page) { ++counts_.at(page); }

    bool on_dec_ref(PageAddr page) {
        auto it = counts_.find(page);
        if (it == counts_.end() || it->second == 0)
            throw std::logic_error("naive: dec_ref of a free page");
        if (--it->second > 0) return false;
        counts_.erase(it);
        allocated_.erase(page);
        const PageAddr block = block_base(page);
        free_in_block_.at(block).insert((page - block) / kPageSize);
        return true;
    }

    const std::set<PageAddr>& allocated() const { return allocated_; }
    const std::map<PageAddr, std::uint32_t>& counts() const { return counts_; }

    std::set<PageAddr> blocks_with_free_pages() const {
        std::set<PageAddr> out;
        for (const auto& [block, free] : free_in_block_) {
            if (!free.empty()) out.insert(block);
        }
        return out;
    }

    std::vector<PageAddr> live_pages() const {
        return std::vector<PageAddr>(allocated_.begin(), allocated_.end());
    }

private:
    void ensure_block(PageAddr block) {
        if (free_in_block_.count(block)) return;
        std::set<std::uint64_t> all;
        for (std::uint64_t j = 1; j < kPagesPerBlock; ++j) all.insert(j);
        free_in_block_.emplace(block, std::move(all));
    }

    std::map<PageAddr, std::uint32_t> counts_;
    std::set<PageAddr> allocated_;
    std::map<PageAddr, std::set<std::uint64_t>> free_in_block_;
};

// Deep-copy model of COW address spaces: every clone duplicates the full
// byte contents, so reads against it expose any sharing bug in the real
// copy-on-write path.
class NaiveCowModel {
public:
    std::uint64_t clone(std::uint64_t space) {
        spaces_[next_] = spaces_.at(space);
        return next_++;
    }

    std::uint64_t create() {
        spaces_[next_];
        return next_++;
    }

    void write(std::uint64_t space, std::uint64_t page, std::uint64_t offset, std::uint8_t value) {
        auto& bytes = spaces_.at(space)[page];
        if (bytes.empty()) bytes.assign(kPageSize, 0);
        bytes[offset] = value;
    }

    std::uint8_t read(std::uint64_t space, std::uint64_t page, std::uint64_t offset) const {
        const auto& pages = spaces_.at(space);
        auto it = pages.find(page);
        if (it == pages.end() || it->second.empty()) return 0;
        return it->second[offset];
    }

    void drop(std::uint64_t space) { spaces_.erase(space); }

private:
    std::map<std::uint64_t, std::map<std::uint64_t, std::vector<std::uint8_t>>> spaces_;
    std::uint64_t next_ = 0;
};

}  // namespace hibersim::testing
