#pragma once

#include <cstring>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "hibersim/host_model.hpp"
#include "hibersim/page_allocator.hpp"
#include "hibersim/types.hpp"

namespace hibersim {

enum class VmaKind { Anonymous, FileBacked };
enum class Access { Read, Write };

using FileId = std::uint64_t;

// Guest files live in an in-simulator store; file-backed mappings
// re-materialize from here rather than from any real filesystem.
class FileStore {
public:
    FileId add_file(std::vector<std::uint8_t> bytes) {
        const FileId id = next_++;
        files_.emplace(id, std::move(bytes));
        return id;
    }

    // Reads past EOF are zero-filled, like a short mmap'd tail page.
    void read_page(FileId id, std::uint64_t page_index, PageBytes& out) const {
        auto it = files_.find(id);
        if (it == files_.end()) throw CorruptionError("unknown file id");
        out.fill(0);
        const auto& bytes = it->second;
        const std::uint64_t off = page_index * kPageSize;
        if (off >= bytes.size()) return;
        const std::uint64_t n = std::min<std::uint64_t>(kPageSize, bytes.size() - off);
        std::memcpy(out.data(), bytes.data() + off, n);
    }

    std::uint64_t size_bytes(FileId id) const {
        auto it = files_.find(id);
        return it == files_.end() ? 0 : it->second.size();
    }

private:
    std::map<FileId, std::vector<std::uint8_t>> files_;
    FileId next_ = 1;
};

struct Vma {
    std::uint64_t id;
    VirtAddr start;
    std::uint64_t length;  // bytes, page multiple
    VmaKind kind;
    bool writable;
    FileId file = 0;

    bool contains(VirtAddr va) const { return va >= start && va < start + length; }
};

struct PageTableEntry {
    PageAddr phys = 0;
    bool present = false;
    // The real page table keeps this in the entry's custom flag bit#9; it
    // marks a Not-Present entry whose page sits in the swap file.
    bool swapped_out = false;
    bool writable = false;
    bool cow = false;
};

enum class FaultKind { None, FreshZeroFill, CowCopy, SwapIn, FileMaterialize };

struct FaultResolution {
    FaultKind kind = FaultKind::None;
    std::uint64_t pages_read = 0;
    double latency = 0.0;  // nonzero only for swap-in
};

class AddressSpace {
public:
    explicit AddressSpace(std::uint64_t id) : id_(id) {}

    std::uint64_t id() const { return id_; }
    const std::vector<Vma>& vmas() const { return vmas_; }

    std::map<VirtAddr, PageTableEntry>& page_table() { return ptes_; }
    const std::map<VirtAddr, PageTableEntry>& page_table() const { return ptes_; }

    const Vma* find_vma(VirtAddr va) const {
        for (const auto& vma : vmas_) {
            if (vma.contains(va)) return &vma;
        }
        return nullptr;
    }

private:
    friend class GuestMemory;

    std::uint64_t id_;
    std::vector<Vma> vmas_;
    std::map<VirtAddr, PageTableEntry> ptes_;
    VirtAddr cursor_ = kVaBase;
    std::uint64_t next_vma_id_ = 1;

    static constexpr VirtAddr kVaBase = 0x0000'1000'0000ull;
    static constexpr VirtAddr kVaLimit = 1ull << 47;
};

// Swap machinery as seen from the fault handler: resolve a bit#9 fault, and
// retire a swap-file slot once the last reference to its page is gone.
class SwapBackend {
public:
    virtual ~SwapBackend() = default;
    virtual FaultResolution swap_fault(AddressSpace& space, VirtAddr va, PageTableEntry& pte) = 0;
    virtual void release_entry(PageAddr gpa) = 0;
};

// Simulated guest process memory: VMAs, flat per-space page tables, demand
// paging against the bitmap allocator, COW cloning. Page tables are a flat
// ordered map rather than a radix tree; every algorithm here only needs the
// per-entry flag bits and a deterministic full walk.
class GuestMemory {
public:
    // Phys addresses at or above this belong to file-backed mappings and are
    // never allocator pages.
    static constexpr PageAddr kFileArenaBase = 1ull << 40;

    GuestMemory(PageAllocator& alloc, HostMemory& host, FileStore& files)
        : alloc_(alloc), host_(host), files_(files) {}

    void set_swap_backend(SwapBackend* backend) { swap_ = backend; }

    AddressSpace& create_space() {
        spaces_.push_back(std::make_unique<AddressSpace>(next_space_id_++));
        return *spaces_.back();
    }

    std::vector<AddressSpace*> spaces() {
        std::vector<AddressSpace*> out;
        out.reserve(spaces_.size());
        for (auto& s : spaces_) out.push_back(s.get());
        return out;
    }

    // Reserves address space only; no page is allocated or committed until
    // the first fault.
    std::uint64_t map_region(AddressSpace& space, std::uint64_t length_bytes, VmaKind kind,
                             bool writable, FileId file = 0) {
        if (length_bytes == 0) throw Error("map_region: length must be > 0");
        const std::uint64_t length = pages_for_bytes(length_bytes) * kPageSize;
        if (space.cursor_ + length > AddressSpace::kVaLimit)
            throw AllocationError("guest address space exhausted");
        Vma vma{space.next_vma_id_++, space.cursor_, length, kind, writable, file};
        space.cursor_ += length;
        space.vmas_.push_back(vma);
        return vma.id;
    }

    FaultResolution handle_fault(AddressSpace& space, VirtAddr vaddr, Access access) {
        const VirtAddr va = page_base(vaddr);
        const Vma* vma = space.find_vma(va);
        if (!vma) throw AccessError("segfault: unmapped address");
        if (access == Access::Write && !vma->writable)
            throw AccessError("permission fault: write to read-only mapping");

        auto it = space.ptes_.find(va);
        if (it == space.ptes_.end()) {
            return vma->kind == VmaKind::Anonymous ? fresh_anonymous_fault(space, va, *vma)
                                                   : file_materialize_fault(space, va, *vma);
        }

        PageTableEntry& pte = it->second;
        if (pte.swapped_out) {
            if (!swap_) throw CorruptionError("swapped-out entry with no swap backend");
            FaultResolution res = swap_->swap_fault(space, va, pte);
            if (access == Access::Write && pte.cow) resolve_cow(*vma, pte);
            return res;
        }
        if (access == Access::Write && pte.cow) {
            resolve_cow(*vma, pte);
            return {FaultKind::CowCopy, 0, 0.0};
        }
        return {FaultKind::None, 0, 0.0};
    }

    // Fork-style clone: anonymous pages become shared copy-on-write in both
    // spaces, file-backed mappings are shared by file id and re-materialize
    // in the child on demand.
    AddressSpace& clone_space(AddressSpace& parent) {
        AddressSpace& child = create_space();
        child.vmas_ = parent.vmas_;
        child.cursor_ = parent.cursor_;
        child.next_vma_id_ = parent.next_vma_id_;
        for (auto& [va, pte] : parent.ptes_) {
            const Vma* vma = parent.find_vma(va);
            if (!vma || vma->kind != VmaKind::Anonymous) continue;
            if (!pte.present && !pte.swapped_out) continue;
            alloc_.inc_ref(pte.phys);
            pte.cow = true;
            pte.writable = false;
            child.ptes_[va] = pte;
        }
        return child;
    }

    // Releases every page reference the space holds and removes it.
    // Returns the number of pages whose refcount dropped to zero.
    std::uint64_t drop_space(AddressSpace& space) {
        std::uint64_t freed = 0;
        for (auto& [va, pte] : space.ptes_) {
            const Vma* vma = space.find_vma(va);
            if (vma && vma->kind == VmaKind::FileBacked) {
                if (pte.present) host_.decommit(pte.phys, 1);
                continue;
            }
            if (pte.present || pte.swapped_out) {
                if (release_anonymous(pte)) ++freed;
            }
        }
        for (auto it = spaces_.begin(); it != spaces_.end(); ++it) {
            if (it->get() == &space) {
                spaces_.erase(it);
                break;
            }
        }
        return freed;
    }

    // Guest munmap of a single page. Freed anonymous pages keep their host
    // backing committed until the next reclaim, just like a real guest free.
    bool unmap_page(AddressSpace& space, VirtAddr vaddr) {
        const VirtAddr va = page_base(vaddr);
        auto it = space.ptes_.find(va);
        if (it == space.ptes_.end()) return false;
        PageTableEntry& pte = it->second;
        const Vma* vma = space.find_vma(va);
        bool freed = false;
        if (vma && vma->kind == VmaKind::FileBacked) {
            if (pte.present) host_.decommit(pte.phys, 1);
        } else if (pte.present || pte.swapped_out) {
            freed = release_anonymous(pte);
        }
        space.ptes_.erase(it);
        return freed;
    }

    // Deflation step 4: drop present file-backed pages and return their host
    // memory. Anonymous entries are untouched; a re-access after wake
    // re-materializes from file content.
    std::uint64_t release_file_backed(AddressSpace& space) {
        std::uint64_t released = 0;
        for (auto it = space.ptes_.begin(); it != space.ptes_.end();) {
            const Vma* vma = space.find_vma(it->first);
            if (vma && vma->kind == VmaKind::FileBacked && it->second.present) {
                host_.decommit(it->second.phys, 1);
                it = space.ptes_.erase(it);
                ++released;
            } else {
                ++it;
            }
        }
        return released;
    }

    // Guest store. Runs the write fault for each touched page, then copies.
    FaultResolution write_bytes(AddressSpace& space, VirtAddr va, std::span<const std::uint8_t> data) {
        return access_bytes<const std::uint8_t>(space, va, data, Access::Write);
    }

    // Guest load.
    FaultResolution read_bytes(AddressSpace& space, VirtAddr va, std::span<std::uint8_t> out) {
        return access_bytes<std::uint8_t>(space, va, out, Access::Read);
    }

    // Deterministic full page-table walk, ordered by (space creation, vaddr).
    template <typename F>
    void walk(F&& fn) {
        for (auto& s : spaces_) {
            for (auto& [va, pte] : s->ptes_) fn(*s, va, pte);
        }
    }

    // Refcount conservation and PTE flag rules across all spaces.
    void audit() const {
        std::map<PageAddr, std::uint16_t> expected;
        for (const auto& s : spaces_) {
            for (const auto& [va, pte] : s->ptes_) {
                if (pte.present && pte.swapped_out)
                    throw CorruptionError("PTE both present and swapped out");
                const Vma* vma = s->find_vma(va);
                if (!vma) throw CorruptionError("PTE outside any VMA");
                if (vma->kind == VmaKind::FileBacked) {
                    if (pte.present && pte.phys < kFileArenaBase)
                        throw CorruptionError("file-backed PTE holds an allocator page");
                    continue;
                }
                if (pte.present || pte.swapped_out) ++expected[pte.phys];
            }
        }
        for (const auto& [phys, count] : expected) {
            if (alloc_.ref_count(phys) != count)
                throw CorruptionError("refcount conservation violated");
        }
    }

private:
    FaultResolution fresh_anonymous_fault(AddressSpace& space, VirtAddr va, const Vma& vma) {
        const PageAddr phys = alloc_.alloc_page();
        // The guest zeroes fresh anonymous pages itself; the backing host
        // page may be a recycled commit with stale bytes.
        host_.commit(phys).fill(0);
        space.ptes_[va] = PageTableEntry{phys, true, false, vma.writable, false};
        return {FaultKind::FreshZeroFill, 0, 0.0};
    }

    FaultResolution file_materialize_fault(AddressSpace& space, VirtAddr va, const Vma& vma) {
        const PageAddr phys = file_cursor_;
        file_cursor_ += kPageSize;
        PageBytes& content = host_.commit(phys);
        files_.read_page(vma.file, (va - vma.start) / kPageSize, content);
        space.ptes_[va] = PageTableEntry{phys, true, false, vma.writable, false};
        return {FaultKind::FileMaterialize, 0, 0.0};
    }

    void resolve_cow(const Vma& vma, PageTableEntry& pte) {
        if (alloc_.ref_count(pte.phys) > 1) {
            const PageAddr fresh = alloc_.alloc_page();
            PageBytes& dst = host_.commit(fresh);
            const PageBytes* src = host_.find(pte.phys);
            if (!src) throw CorruptionError("COW source page not committed");
            dst = *src;
            if (alloc_.dec_ref(pte.phys).freed && swap_) swap_->release_entry(pte.phys);
            pte.phys = fresh;
        }
        pte.cow = false;
        pte.writable = vma.writable;
    }

    // A page freed here may still have a slot in the swap file; retire it.
    bool release_anonymous(PageTableEntry& pte) {
        const auto dec = alloc_.dec_ref(pte.phys);
        if (dec.freed && swap_) swap_->release_entry(pte.phys);
        return dec.freed;
    }

    template <typename Byte, typename SpanT>
    FaultResolution access_bytes(AddressSpace& space, VirtAddr va, SpanT data, Access access) {
        FaultResolution total{};
        std::uint64_t done = 0;
        while (done < data.size()) {
            const VirtAddr page = page_base(va + done);
            const std::uint64_t in_page = std::min<std::uint64_t>(
                data.size() - done, page + kPageSize - (va + done));
            FaultResolution res = handle_fault(space, page, access);
            total.pages_read += res.pages_read;
            total.latency += res.latency;
            if (res.kind != FaultKind::None) total.kind = res.kind;
            PageBytes* content = host_.find(space.ptes_.at(page).phys);
            if (!content) throw CorruptionError("present page without host backing");
            const std::uint64_t off = (va + done) - page;
            if constexpr (std::is_const_v<Byte>) {
                std::memcpy(content->data() + off, data.data() + done, in_page);
            } else {
                std::memcpy(data.data() + done, content->data() + off, in_page);
            }
            done += in_page;
        }
        return total;
    }

    PageAllocator& alloc_;
    HostMemory& host_;
    FileStore& files_;
    SwapBackend* swap_ = nullptr;
    std::vector<std::unique_ptr<AddressSpace>> spaces_;
    std::uint64_t next_space_id_ = 1;
    PageAddr file_cursor_ = kFileArenaBase;
};

}  // namespace hibersim
