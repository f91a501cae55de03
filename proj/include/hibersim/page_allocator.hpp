#pragma once

#include <atomic>
#include <bit>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "hibersim/host_model.hpp"
#include "hibersim/types.hpp"

namespace hibersim {

// Provider of fresh 4MB-aligned blocks; stands in for the global heap the
// real runtime allocates blocks from.
class HeapSource {
public:
    virtual ~HeapSource() = default;
    // 4MB-aligned block base, or nullopt when the heap refuses.
    virtual std::optional<PageAddr> acquire_block() = 0;
    virtual void return_block(PageAddr block) = 0;
};

// Hands out guest-physical blocks from a monotone 4MB-aligned sequence,
// reusing returned blocks LIFO the way a real heap would. An optional cap
// on live blocks models heap exhaustion.
class BlockHeapSource final : public HeapSource {
public:
    static constexpr std::uint64_t kUnlimited = ~0ull;

    explicit BlockHeapSource(std::uint64_t max_live_blocks = kUnlimited)
        : limit_(max_live_blocks) {}

    std::optional<PageAddr> acquire_block() override {
        if (live_ >= limit_) return std::nullopt;
        ++live_;
        if (!returned_.empty()) {
            PageAddr block = returned_.back();
            returned_.pop_back();
            return block;
        }
        PageAddr block = next_;
        next_ += kBlockSize;
        return block;
    }

    void return_block(PageAddr block) override {
        returned_.push_back(block);
        --live_;
    }

    std::uint64_t live_blocks() const { return live_; }

private:
    PageAddr next_ = kBlockSize;  // keep address 0 out of the managed range
    std::vector<PageAddr> returned_;
    std::uint64_t live_ = 0;
    std::uint64_t limit_;
};

// Control page of one 4MB block: free-list link, two-level free-page bitmap
// and the per-page reference counts. A set l2 bit means the page is FREE;
// l1 bit i mirrors "l2 word i has a set bit". Bit 0 of l2[0] is permanently
// clear: page 0 is this control page. Free pages carry no metadata of their
// own, which is what makes decommitting them safe.
struct ControlPage {
    static constexpr std::uint64_t kL1Mask = 0xFFFF;  // 16 l2 words

    std::optional<PageAddr> next;
    bool on_free_list = false;
    std::uint64_t l1 = kL1Mask;
    std::array<std::uint64_t, 16> l2;
    std::array<std::atomic<std::uint16_t>, kDataPagesPerBlock> refcounts;
    std::uint32_t free_pages = kDataPagesPerBlock;

    ControlPage() {
        l2.fill(~0ull);
        l2[0] = ~1ull;
        for (auto& rc : refcounts) rc.store(0, std::memory_order_relaxed);
    }
};

struct AllocatorStats {
    std::uint64_t blocks_acquired = 0;
    std::uint64_t blocks_returned = 0;
    std::uint64_t pages_reclaimed = 0;
    std::uint64_t allocations = 0;
    std::uint64_t bitmap_words_inspected = 0;
};

// Bitmap page allocator over 4MB blocks. Allocation and the free-list edits
// inside dec_ref serialize on one lock per allocator; reference count
// updates are lock-free atomic read-modify-writes. reclaim_free_pages
// requires external quiescence and is only called while the container's
// guest processes are paused.
class PageAllocator {
public:
    PageAllocator(HeapSource& heap, HostMemory& host) : heap_(heap), host_(host) {}

    PageAllocator(const PageAllocator&) = delete;
    PageAllocator& operator=(const PageAllocator&) = delete;

    // Block base of any page address, by clearing the low 22 bits.
    static constexpr PageAddr control_page_of(PageAddr addr) { return block_base(addr); }

    // O(2) lookup: one l1 word, one l2 word of the head free-list block.
    PageAddr alloc_page() {
        std::lock_guard<std::mutex> g(lock_);
        if (!head_) acquire_block_locked();
        const PageAddr block = *head_;
        ControlPage& cp = blocks_.at(block);

        ++stats_.allocations;
        ++stats_.bitmap_words_inspected;
        const std::uint64_t l1 = cp.l1 & ControlPage::kL1Mask;
        if (l1 == 0) throw CorruptionError("head free-list block has no free page");
        const unsigned w = static_cast<unsigned>(std::countr_zero(l1));

        ++stats_.bitmap_words_inspected;
        const unsigned b = static_cast<unsigned>(std::countr_zero(cp.l2[w]));
        const std::uint64_t page_index = static_cast<std::uint64_t>(w) * 64 + b;

        cp.l2[w] &= ~(1ull << b);
        if (cp.l2[w] == 0) cp.l1 &= ~(1ull << w);
        --cp.free_pages;
        if (cp.free_pages == 0) pop_head_locked();
        cp.refcounts[page_index - 1].store(1, std::memory_order_relaxed);
        return block + page_index * kPageSize;
    }

    std::uint16_t inc_ref(PageAddr page) {
        auto& rc = refcount_slot(page);
        std::uint16_t cur = rc.load(std::memory_order_relaxed);
        do {
            if (cur == 0) throw CorruptionError("inc_ref on a free page");
            if (cur == 0xFFFF) throw CorruptionError("page reference count overflow");
        } while (!rc.compare_exchange_weak(cur, static_cast<std::uint16_t>(cur + 1),
                                           std::memory_order_acq_rel));
        return static_cast<std::uint16_t>(cur + 1);
    }

    struct DecRefResult {
        std::uint16_t count;
        bool freed;
    };

    DecRefResult dec_ref(PageAddr page) {
        auto& rc = refcount_slot(page);
        std::uint16_t cur = rc.load(std::memory_order_relaxed);
        do {
            if (cur == 0) throw CorruptionError("dec_ref on a free page (double free)");
        } while (!rc.compare_exchange_weak(cur, static_cast<std::uint16_t>(cur - 1),
                                           std::memory_order_acq_rel));
        if (cur > 1) return {static_cast<std::uint16_t>(cur - 1), false};

        // Count hit zero: put the page back in the bitmap. The block itself
        // stays managed even at 1023 free pages; reclaim returns it.
        std::lock_guard<std::mutex> g(lock_);
        const PageAddr block = block_base(page);
        ControlPage& cp = blocks_.at(block);
        const std::uint64_t page_index = (page - block) / kPageSize;
        const unsigned w = static_cast<unsigned>(page_index / 64);
        const unsigned b = static_cast<unsigned>(page_index % 64);
        cp.l2[w] |= 1ull << b;
        cp.l1 |= 1ull << w;
        if (cp.free_pages++ == 0) push_head_locked(block);
        return {0, true};
    }

    // Decommits every free data page of every managed block and returns
    // fully-free blocks to the heap. Control pages of retained blocks stay
    // committed: they hold the bitmaps that make this walk possible.
    // Returns the number of data pages actually decommitted.
    std::uint64_t reclaim_free_pages(HostMemory& host) {
        std::lock_guard<std::mutex> g(lock_);
        std::uint64_t reclaimed = 0;
        std::vector<PageAddr> fully_free;
        for (auto& [block, cp] : blocks_) {
            for (unsigned w = 0; w < 16; ++w) {
                std::uint64_t bits = cp.l2[w];
                while (bits) {
                    const unsigned b = static_cast<unsigned>(std::countr_zero(bits));
                    bits &= bits - 1;
                    reclaimed += host.decommit(block + (static_cast<std::uint64_t>(w) * 64 + b) * kPageSize, 1);
                }
            }
            if (cp.free_pages == kDataPagesPerBlock) fully_free.push_back(block);
        }
        for (PageAddr block : fully_free) {
            unlink_locked(block);
            host.decommit(block, 1);  // control page goes back with the block
            blocks_.erase(block);
            heap_.return_block(block);
            ++stats_.blocks_returned;
        }
        stats_.pages_reclaimed += reclaimed;
        return reclaimed;
    }

    std::uint16_t ref_count(PageAddr page) const {
        auto it = blocks_.find(block_base(page));
        if (it == blocks_.end()) return 0;
        const std::uint64_t page_index = (page - it->first) / kPageSize;
        if (page_index == 0 || page_index >= kPagesPerBlock) return 0;
        return it->second.refcounts[page_index - 1].load(std::memory_order_relaxed);
    }

    bool is_allocated(PageAddr page) const { return ref_count(page) > 0; }

    bool is_managed_data_page(PageAddr page) const {
        auto it = blocks_.find(block_base(page));
        return it != blocks_.end() && page != it->first;
    }

    std::uint64_t block_count() const { return blocks_.size(); }

    std::uint64_t free_pages_in(PageAddr block) const {
        auto it = blocks_.find(block);
        return it == blocks_.end() ? 0 : it->second.free_pages;
    }

    std::vector<PageAddr> managed_blocks() const {
        std::vector<PageAddr> out;
        out.reserve(blocks_.size());
        for (const auto& [block, cp] : blocks_) out.push_back(block);
        return out;
    }

    std::vector<PageAddr> free_list_blocks() const {
        std::vector<PageAddr> out;
        for (std::optional<PageAddr> cur = head_; cur; cur = blocks_.at(*cur).next) {
            out.push_back(*cur);
            if (out.size() > blocks_.size()) throw CorruptionError("free list cycle");
        }
        return out;
    }

    const AllocatorStats& stats() const { return stats_; }

    // Full consistency walk; throws CorruptionError on the first violation.
    void audit() const {
        std::lock_guard<std::mutex> g(lock_);
        std::uint64_t listed = 0;
        for (const auto& [block, cp] : blocks_) {
            if (!block_aligned(block)) throw CorruptionError("unaligned block base");
            if ((cp.l2[0] & 1) != 0) throw CorruptionError("control page marked free");
            std::uint32_t free_count = 0;
            for (unsigned w = 0; w < 16; ++w) {
                const bool l1_bit = (cp.l1 >> w) & 1;
                if (l1_bit != (cp.l2[w] != 0)) throw CorruptionError("l1/l2 mismatch");
                free_count += static_cast<std::uint32_t>(std::popcount(cp.l2[w]));
            }
            if (free_count != cp.free_pages) throw CorruptionError("free page count drift");
            for (std::uint64_t j = 1; j < kPagesPerBlock; ++j) {
                const bool free_bit = (cp.l2[j / 64] >> (j % 64)) & 1;
                const bool live = cp.refcounts[j - 1].load(std::memory_order_relaxed) > 0;
                if (free_bit == live) throw CorruptionError("refcount/bitmap mismatch");
            }
            const bool should_be_listed = cp.free_pages >= 1;
            if (cp.on_free_list != should_be_listed)
                throw CorruptionError("free list membership mismatch");
            if (cp.on_free_list) ++listed;
        }
        if (free_list_blocks_locked() != listed) throw CorruptionError("free list length mismatch");
    }

private:
    std::atomic<std::uint16_t>& refcount_slot(PageAddr page) {
        auto it = blocks_.find(block_base(page));
        if (it == blocks_.end()) throw CorruptionError("page outside managed blocks");
        const std::uint64_t page_index = (page - it->first) / kPageSize;
        if (page_index == 0) throw CorruptionError("refcount op on a control page");
        return it->second.refcounts[page_index - 1];
    }

    void acquire_block_locked() {
        std::optional<PageAddr> block = heap_.acquire_block();
        if (!block) throw AllocationError("heap source exhausted");
        if (!block_aligned(*block)) throw CorruptionError("heap source returned unaligned block");
        blocks_.try_emplace(*block);
        host_.commit(*block);  // the control page itself occupies a committed page
        push_head_locked(*block);
        ++stats_.blocks_acquired;
    }

    void push_head_locked(PageAddr block) {
        ControlPage& cp = blocks_.at(block);
        cp.next = head_;
        cp.on_free_list = true;
        head_ = block;
    }

    void pop_head_locked() {
        ControlPage& cp = blocks_.at(*head_);
        head_ = cp.next;
        cp.next.reset();
        cp.on_free_list = false;
    }

    void unlink_locked(PageAddr block) {
        ControlPage& cp = blocks_.at(block);
        if (!cp.on_free_list) return;
        if (head_ && *head_ == block) {
            pop_head_locked();
            return;
        }
        for (std::optional<PageAddr> cur = head_; cur;) {
            ControlPage& prev = blocks_.at(*cur);
            if (prev.next && *prev.next == block) {
                prev.next = cp.next;
                cp.next.reset();
                cp.on_free_list = false;
                return;
            }
            cur = prev.next;
        }
        throw CorruptionError("block flagged on free list but not linked");
    }

    std::uint64_t free_list_blocks_locked() const {
        std::uint64_t n = 0;
        for (std::optional<PageAddr> cur = head_; cur; cur = blocks_.at(*cur).next) {
            ++n;
            if (n > blocks_.size()) throw CorruptionError("free list cycle");
        }
        return n;
    }

    HeapSource& heap_;
    HostMemory& host_;
    std::map<PageAddr, ControlPage> blocks_;
    std::optional<PageAddr> head_;
    AllocatorStats stats_;
    mutable std::mutex lock_;
};

}  // namespace hibersim
