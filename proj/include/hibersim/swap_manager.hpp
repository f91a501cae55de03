#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "hibersim/guest_memory.hpp"
#include "hibersim/host_model.hpp"
#include "hibersim/page_allocator.hpp"
#include "hibersim/types.hpp"

namespace hibersim {

// In-memory hash table from guest physical page address to its slot in the
// sandbox swap file. One entry per distinct page, regardless of how many
// page tables reference it.
class SwapIndex {
public:
    bool contains(PageAddr gpa) const { return entries_.count(gpa) != 0; }

    std::optional<std::uint64_t> offset_of(PageAddr gpa) const {
        auto it = entries_.find(gpa);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void assign(PageAddr gpa, std::uint64_t offset) { entries_[gpa] = offset; }
    void erase(PageAddr gpa) { entries_.erase(gpa); }
    std::uint64_t size() const { return entries_.size(); }
    const std::map<PageAddr, std::uint64_t>& entries() const { return entries_; }

private:
    std::map<PageAddr, std::uint64_t> entries_;
};

struct ReapEntry {
    PageAddr gpa = 0;
    std::uint64_t payload_offset = 0;  // relative to the payload region

    bool operator==(const ReapEntry&) const = default;
};

// The persisted scatter vector: exactly the pages captured for batch
// prefetch, in fault order from the recording run.
struct ReapManifest {
    std::vector<ReapEntry> entries;
    bool recorded = false;

    bool operator==(const ReapManifest&) const = default;
};

inline constexpr std::array<std::uint8_t, 8> kReapMagic = {'Q', 'R', 'K', 'R', 'E', 'A', 'P', '1'};
inline constexpr std::uint32_t kReapVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::uint64_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::span<const std::uint8_t> in, std::uint64_t pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
    return v;
}

}  // namespace detail

inline constexpr std::uint64_t kReapHeaderSize = 16;  // magic + version + count

inline std::uint64_t reap_payload_start(std::uint64_t entry_count) {
    if (entry_count == 0) return kReapHeaderSize;  // header-only file, no payload region
    const std::uint64_t table_end = kReapHeaderSize + entry_count * 16;
    return (table_end + kPageSize - 1) & ~(kPageSize - 1);
}

// File layout, little-endian:
//   magic "QRKREAP1" | version u32 | count u32 | count x { gpa u64, payload_offset u64 }
//   | zero pad to the next 4096 boundary | count x 4096-byte payload slots.
// Payload slot k holds the page of entry k.
inline std::vector<std::uint8_t> encode_reap_file(const ReapManifest& manifest,
                                                  std::span<const PageBytes* const> payloads) {
    if (payloads.size() != manifest.entries.size())
        throw CorruptionError("reap encode: payload count != entry count");
    const std::uint64_t n = manifest.entries.size();
    std::vector<std::uint8_t> out;
    out.reserve(reap_payload_start(n) + n * kPageSize);
    out.insert(out.end(), kReapMagic.begin(), kReapMagic.end());
    detail::put_u32(out, kReapVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(n));
    for (std::uint64_t k = 0; k < n; ++k) {
        if (manifest.entries[k].payload_offset != k * kPageSize)
            throw CorruptionError("reap encode: payload offsets must be contiguous slots");
        detail::put_u64(out, manifest.entries[k].gpa);
        detail::put_u64(out, manifest.entries[k].payload_offset);
    }
    out.resize(reap_payload_start(n), 0);
    for (std::uint64_t k = 0; k < n; ++k) {
        out.insert(out.end(), payloads[k]->begin(), payloads[k]->end());
    }
    return out;
}

// Header and entry table only; validates the whole file length against the
// entry count so a truncated payload region is caught up front.
inline ReapManifest parse_reap_manifest(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kReapHeaderSize) throw CorruptionError("reap file: truncated header");
    if (!std::equal(kReapMagic.begin(), kReapMagic.end(), bytes.begin()))
        throw CorruptionError("reap file: bad magic");
    if (detail::get_u32(bytes, 8) != kReapVersion) throw CorruptionError("reap file: bad version");
    const std::uint64_t n = detail::get_u32(bytes, 12);
    if (bytes.size() != reap_payload_start(n) + n * kPageSize)
        throw CorruptionError("reap file: manifest/payload length mismatch");

    ReapManifest manifest;
    manifest.recorded = true;
    manifest.entries.reserve(n);
    for (std::uint64_t k = 0; k < n; ++k) {
        ReapEntry e;
        e.gpa = detail::get_u64(bytes, kReapHeaderSize + k * 16);
        e.payload_offset = detail::get_u64(bytes, kReapHeaderSize + k * 16 + 8);
        if (e.payload_offset != k * kPageSize)
            throw CorruptionError("reap file: non-contiguous payload offsets");
        manifest.entries.push_back(e);
    }
    return manifest;
}

struct ParsedReapFile {
    ReapManifest manifest;
    std::vector<PageBytes> payloads;
};

inline ParsedReapFile parse_reap_file(std::span<const std::uint8_t> bytes) {
    ParsedReapFile parsed;
    parsed.manifest = parse_reap_manifest(bytes);
    const std::uint64_t n = parsed.manifest.entries.size();
    const std::uint64_t payload_start = reap_payload_start(n);
    parsed.payloads.resize(n);
    for (std::uint64_t k = 0; k < n; ++k) {
        std::memcpy(parsed.payloads[k].data(), bytes.data() + payload_start + k * kPageSize,
                    kPageSize);
    }
    return parsed;
}

// Per-sandbox swapping manager. Owns the sandbox's two in-memory file
// images: a headerless swap file of raw 4096-byte payloads for page-fault
// swap-in, and the REAP file for batch prefetch. Both die with the sandbox.
// All swap-out entry points assume the guest processes are paused.
class SwapManager final : public SwapBackend {
public:
    SwapManager(GuestMemory& mem, PageAllocator& alloc, HostMemory& host,
                const StorageModel& storage)
        : mem_(mem), alloc_(alloc), host_(host), storage_(storage) {}

    struct SwapOutResult {
        std::uint64_t pages_written = 0;
        std::uint64_t pages_decommitted = 0;
    };

    // Page-fault-mode swap-out: mark every present anonymous entry
    // Not-Present with the swap flag set, write each distinct page once,
    // then return its host backing. Already-swapped entries are untouched.
    SwapOutResult swap_out() {
        struct Flip {
            PageTableEntry* pte;
        };
        std::vector<Flip> flips;
        std::vector<PageAddr> unique;
        std::set<PageAddr> seen;
        mem_.walk([&](AddressSpace& space, VirtAddr va, PageTableEntry& pte) {
            if (!pte.present) return;
            const Vma* vma = space.find_vma(va);
            if (!vma) throw CorruptionError("present PTE outside any VMA");
            if (vma->kind != VmaKind::Anonymous) return;
            flips.push_back({&pte});
            if (seen.insert(pte.phys).second) unique.push_back(pte.phys);
        });
        if (unique.empty()) return {0, 0};

        maybe_fail_write();  // a failed pwritev leaves guest state untouched
        std::vector<std::pair<PageAddr, std::uint64_t>> slots;
        slots.reserve(unique.size());
        std::uint64_t append_at = swap_file_.size();
        for (PageAddr gpa : unique) {
            if (auto existing = index_.offset_of(gpa)) {
                slots.emplace_back(gpa, *existing);  // re-hibernation overwrites in place
            } else {
                slots.emplace_back(gpa, append_at);
                index_.assign(gpa, append_at);
                append_at += kPageSize;
            }
        }
        swap_file_.resize(append_at);
        for (const auto& [gpa, offset] : slots) {
            const PageBytes* content = host_.find(gpa);
            if (!content) throw CorruptionError("present page without host backing");
            std::memcpy(swap_file_.data() + offset, content->data(), kPageSize);
        }

        SwapOutResult result;
        result.pages_written = unique.size();
        for (const Flip& f : flips) {
            f.pte->present = false;
            f.pte->swapped_out = true;
        }
        for (PageAddr gpa : unique) result.pages_decommitted += host_.decommit(gpa, 1);
        return result;
    }

    // Resolves one bit#9 fault with a single random read. The index entry is
    // retained afterwards: other page tables may still fault on the same page.
    FaultResolution swap_fault(AddressSpace& space, VirtAddr va, PageTableEntry& pte) override {
        if (!pte.swapped_out) return {FaultKind::None, 0, 0.0};
        const auto offset = index_.offset_of(pte.phys);
        if (!offset) throw CorruptionError("swap fault with no index entry");
        const double latency = storage_.read_latency(1, AccessPattern::Random);

        if (host_.is_committed(pte.phys)) {
            // Another sharer already brought this page back; give this space
            // its own copy of the swapped bytes.
            const Vma* vma = space.find_vma(va);
            if (!vma) throw CorruptionError("swapped PTE outside any VMA");
            const PageAddr fresh = alloc_.alloc_page();
            std::memcpy(host_.commit(fresh).data(), swap_file_.data() + *offset, kPageSize);
            const PageAddr old = pte.phys;
            pte.phys = fresh;
            pte.cow = false;
            pte.writable = vma->writable;
            if (alloc_.dec_ref(old).freed) release_entry(old);
        } else {
            std::memcpy(host_.commit(pte.phys).data(), swap_file_.data() + *offset, kPageSize);
        }
        pte.swapped_out = false;
        pte.present = true;
        if (recording_ && record_seen_.insert(pte.phys).second)
            record_order_.push_back(pte.phys);
        ++faults_served_;
        return {FaultKind::SwapIn, 1, latency};
    }

    void release_entry(PageAddr gpa) override { index_.erase(gpa); }

    // Bracket the sample-request run whose faults define the working set.
    void begin_record() {
        if (recording_) throw Error("REAP recording already in progress");
        if (manifest_ && manifest_->recorded && !hibernated_since_record_)
            throw Error("REAP re-record requires an intervening hibernation");
        recording_ = true;
        record_seen_.clear();
        record_order_.clear();
    }

    const ReapManifest& end_record() {
        if (!recording_) throw Error("REAP recording not in progress");
        recording_ = false;
        ReapManifest m;
        m.recorded = true;
        m.entries.reserve(record_order_.size());
        for (std::uint64_t k = 0; k < record_order_.size(); ++k)
            m.entries.push_back({record_order_[k], k * kPageSize});
        manifest_ = std::move(m);
        hibernated_since_record_ = false;
        return *manifest_;
    }

    // REAP-mode swap-out: one batched scatter write of the active anonymous
    // set. Page table entries are not modified, so the wake path must batch
    // prefetch before the guest runs again.
    std::uint64_t reap_swap_out() {
        if (!manifest_ || !manifest_->recorded)
            throw Error("reap_swap_out without a recorded manifest");

        std::vector<PageAddr> active;
        std::set<PageAddr> active_set;
        mem_.walk([&](AddressSpace& space, VirtAddr va, PageTableEntry& pte) {
            if (!pte.present) return;
            const Vma* vma = space.find_vma(va);
            if (!vma || vma->kind != VmaKind::Anonymous) return;
            if (active_set.insert(pte.phys).second) active.push_back(pte.phys);
        });

        // Recorded fault order first, then any active pages the recording
        // never saw, in walk order.
        std::vector<PageAddr> ordered;
        ordered.reserve(active.size());
        std::set<PageAddr> taken;
        for (PageAddr gpa : record_order_) {
            if (active_set.count(gpa) && taken.insert(gpa).second) ordered.push_back(gpa);
        }
        for (PageAddr gpa : active) {
            if (taken.insert(gpa).second) ordered.push_back(gpa);
        }

        maybe_fail_write();
        ReapManifest persisted;
        persisted.recorded = true;
        std::vector<const PageBytes*> payloads;
        payloads.reserve(ordered.size());
        for (std::uint64_t k = 0; k < ordered.size(); ++k) {
            persisted.entries.push_back({ordered[k], k * kPageSize});
            const PageBytes* content = host_.find(ordered[k]);
            if (!content) throw CorruptionError("active page without host backing");
            payloads.push_back(content);
        }
        reap_file_ = encode_reap_file(persisted, payloads);
        manifest_ = std::move(persisted);

        reap_deflated_ = true;
        for (PageAddr gpa : ordered) host_.decommit(gpa, 1);
        return ordered.size();
    }

    struct ReapSwapInResult {
        std::uint64_t pages_read = 0;
        double latency = 0.0;
    };

    // Batch prefetch: one sequential read re-commits every manifest page.
    // Entries that only live in the swap file still fault in on demand.
    ReapSwapInResult reap_swap_in() {
        if (!reap_deflated_) throw Error("reap_swap_in on a sandbox that is not reap-deflated");
        const ReapManifest manifest = parse_reap_manifest(reap_file_);
        const std::uint64_t n = manifest.entries.size();
        const std::uint64_t payload_start = reap_payload_start(n);
        for (std::uint64_t k = 0; k < n; ++k) {
            std::memcpy(host_.commit(manifest.entries[k].gpa).data(),
                        reap_file_.data() + payload_start + k * kPageSize, kPageSize);
        }
        reap_deflated_ = false;
        return {n, storage_.read_latency(n, AccessPattern::Sequential)};
    }

    void note_hibernated() { hibernated_since_record_ = true; }

    bool reap_deflated() const { return reap_deflated_; }
    bool recording() const { return recording_; }
    bool has_recorded_manifest() const { return manifest_ && manifest_->recorded; }
    const std::optional<ReapManifest>& manifest() const { return manifest_; }
    const SwapIndex& index() const { return index_; }
    const std::vector<std::uint8_t>& swap_file() const { return swap_file_; }
    const std::vector<std::uint8_t>& reap_file() const { return reap_file_; }
    std::uint64_t faults_served() const { return faults_served_; }

    // Test hook: the next swap-out write fails like a full disk.
    void inject_write_failure() { fail_next_write_ = true; }

private:
    void maybe_fail_write() {
        if (fail_next_write_) {
            fail_next_write_ = false;
            throw DiskError("swap write failed");
        }
    }

    GuestMemory& mem_;
    PageAllocator& alloc_;
    HostMemory& host_;
    const StorageModel& storage_;

    SwapIndex index_;
    std::vector<std::uint8_t> swap_file_;
    std::vector<std::uint8_t> reap_file_;

    std::optional<ReapManifest> manifest_;
    bool reap_deflated_ = false;
    bool recording_ = false;
    bool hibernated_since_record_ = false;
    std::set<PageAddr> record_seen_;
    std::vector<PageAddr> record_order_;

    std::uint64_t faults_served_ = 0;
    bool fail_next_write_ = false;
};

}  // namespace hibersim
