#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hibersim/guest_memory.hpp"
#include "hibersim/host_model.hpp"
#include "hibersim/page_allocator.hpp"
#include "hibersim/swap_manager.hpp"
#include "hibersim/types.hpp"

namespace hibersim {

enum class ContainerState { Cold, Warm, Running, Hibernate, HibernateRunning, WokenUp };
enum class Trigger { Stop, Cont, Request, Done };
enum class Signal { Stop, Cont };

inline const char* to_string(ContainerState s) {
    switch (s) {
        case ContainerState::Cold: return "cold";
        case ContainerState::Warm: return "warm";
        case ContainerState::Running: return "running";
        case ContainerState::Hibernate: return "hibernate";
        case ContainerState::HibernateRunning: return "hibernate-running";
        case ContainerState::WokenUp: return "woken-up";
    }
    return "?";
}

inline const char* to_string(Trigger t) {
    switch (t) {
        case Trigger::Stop: return "STOP";
        case Trigger::Cont: return "CONT";
        case Trigger::Request: return "request";
        case Trigger::Done: return "done";
    }
    return "?";
}

// The nine legal transitions of the container state machine. Everything
// else is rejected. STOP on a running container is rejected the same way
// whether it is a plain Running or a HibernateRunning.
constexpr std::optional<ContainerState> next_state(ContainerState s, Trigger t) {
    using S = ContainerState;
    using T = Trigger;
    switch (s) {
        case S::Cold:
            if (t == T::Request) return S::Warm;  // cold start
            break;
        case S::Warm:
            if (t == T::Request) return S::Running;
            if (t == T::Stop) return S::Hibernate;
            break;
        case S::Running:
            if (t == T::Done) return S::Warm;
            break;
        case S::Hibernate:
            if (t == T::Cont) return S::WokenUp;
            if (t == T::Request) return S::HibernateRunning;
            break;
        case S::HibernateRunning:
            if (t == T::Done) return S::WokenUp;
            break;
        case S::WokenUp:
            if (t == T::Request) return S::HibernateRunning;
            if (t == T::Stop) return S::Hibernate;
            break;
    }
    return std::nullopt;
}

// Init-time behavior of a synthetic application: write `init_pages` distinct
// anonymous pages, free a subset back to the allocator, map and touch a
// file-backed region.
struct Workload {
    std::uint64_t init_pages = 0;
    std::vector<std::uint64_t> freed_page_indices;
    std::uint64_t file_pages = 0;
    std::vector<std::uint8_t> file_bytes;
    std::uint64_t content_seed = 0;
};

// One user request: page-granular reads plus a fixed compute cost.
struct RequestTrace {
    std::vector<VirtAddr> touches;
    double compute_cost = 0.0;
};

struct RequestResult {
    double response_latency = 0.0;
    std::uint64_t swap_faults = 0;
    std::uint64_t fresh_faults = 0;
    std::uint64_t file_faults = 0;
    std::uint64_t pages_prefetched = 0;
    double prefetch_latency = 0.0;
    std::vector<ContainerState> state_path;
};

struct DeflationReport {
    std::uint64_t reclaimed_pages = 0;
    std::uint64_t swapped_pages = 0;
    std::uint64_t file_released_pages = 0;
    bool reap_mode = false;
};

struct InflateResult {
    std::uint64_t pages_prefetched = 0;
    double latency = 0.0;
};

struct SandboxParams {
    StorageModel storage;
    double cold_start_runtime_cost = 0.1;
    double wake_unblock_cost = 0.0;
    std::uint64_t heap_block_limit = BlockHeapSource::kUnlimited;
};

// Deterministic stamp written to guest pages by the synthetic workloads.
inline std::uint64_t page_stamp(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t x = seed ^ (index + 0x9E3779B97F4A7C15ull);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
}

// One container sandbox: its private host-memory model, allocator, guest
// address spaces and swapping manager, driven through the state machine.
// Signals are method calls; the platform (harness) serializes them.
class Sandbox {
public:
    // Creates the sandbox and runs the application init trace; the sandbox
    // comes out Warm. The runtime-boot portion of a real cold start is the
    // configured constant, surfaced through cold_start_cost().
    static std::unique_ptr<Sandbox> cold_start(std::uint64_t id, const Workload& workload,
                                               SandboxParams params = {}) {
        params.storage.validate();
        auto sb = std::unique_ptr<Sandbox>(new Sandbox(id, params));
        AddressSpace& space = sb->mem_->create_space();
        sb->main_space_ = &space;

        if (workload.init_pages > 0) {
            sb->mem_->map_region(space, workload.init_pages * kPageSize, VmaKind::Anonymous, true);
            sb->anon_base_ = space.vmas().back().start;
            for (std::uint64_t i = 0; i < workload.init_pages; ++i) {
                const std::uint64_t stamp = page_stamp(workload.content_seed, i);
                sb->mem_->write_bytes(space, sb->anon_base_ + i * kPageSize,
                                      std::span(reinterpret_cast<const std::uint8_t*>(&stamp), 8));
            }
            for (std::uint64_t idx : workload.freed_page_indices) {
                sb->mem_->unmap_page(space, sb->anon_base_ + idx * kPageSize);
            }
        }
        if (workload.file_pages > 0) {
            std::vector<std::uint8_t> bytes = workload.file_bytes;
            bytes.resize(workload.file_pages * kPageSize, 0);
            const FileId fid = sb->files_->add_file(std::move(bytes));
            sb->mem_->map_region(space, workload.file_pages * kPageSize, VmaKind::FileBacked,
                                 false, fid);
            sb->file_base_ = space.vmas().back().start;
            std::uint8_t scratch[8];
            for (std::uint64_t i = 0; i < workload.file_pages; ++i) {
                sb->mem_->read_bytes(space, sb->file_base_ + i * kPageSize, std::span(scratch, 8));
            }
        }
        sb->state_ = ContainerState::Warm;
        if (audit_enabled()) sb->audit();
        return sb;
    }

    Sandbox(const Sandbox&) = delete;
    Sandbox& operator=(const Sandbox&) = delete;

    std::uint64_t id() const { return id_; }
    ContainerState state() const { return state_; }
    bool paused() const { return paused_; }

    // STOP deflates a Warm or Woken-up container; CONT inflates a Hibernate
    // one. Anything else is rejected with the state unchanged.
    ContainerState deliver_signal(Signal sig) {
        const Trigger t = sig == Signal::Stop ? Trigger::Stop : Trigger::Cont;
        if (!next_state(state_, t)) {
            throw TransitionError(std::string("signal ") + to_string(t) + " rejected in state " +
                                  to_string(state_));
        }
        if (sig == Signal::Stop) {
            deflate();
        } else {
            paused_ = false;
            last_inflate_ = InflateResult{};
            if (swap_->reap_deflated()) {
                const auto in = swap_->reap_swap_in();
                last_inflate_ = {in.pages_read, in.latency};
            }
            state_ = ContainerState::WokenUp;
        }
        return state_;
    }

    RequestResult submit_request(const RequestTrace& trace) {
        if (!next_state(state_, Trigger::Request)) {
            throw TransitionError(std::string("request rejected in state ") + to_string(state_));
        }
        RequestResult r;
        r.state_path.push_back(state_);
        if (state_ == ContainerState::Warm) {
            state_ = ContainerState::Running;
        } else {
            if (state_ == ContainerState::Hibernate) {
                // The parked runtime thread unblocks on the request.
                r.response_latency += params_.wake_unblock_cost;
                paused_ = false;
            }
            state_ = ContainerState::HibernateRunning;
            if (swap_->reap_deflated()) {
                const auto in = swap_->reap_swap_in();
                r.pages_prefetched = in.pages_read;
                r.prefetch_latency = in.latency;
                r.response_latency += in.latency;
            }
        }
        r.state_path.push_back(state_);

        for (VirtAddr va : trace.touches) {
            const FaultResolution res = mem_->handle_fault(*main_space_, va, Access::Read);
            r.response_latency += res.latency;
            switch (res.kind) {
                case FaultKind::SwapIn: ++r.swap_faults; break;
                case FaultKind::FreshZeroFill: ++r.fresh_faults; break;
                case FaultKind::FileMaterialize: ++r.file_faults; break;
                default: break;
            }
        }
        r.response_latency += trace.compute_cost;
        compute_seconds_ += trace.compute_cost;

        state_ = state_ == ContainerState::Running ? ContainerState::Warm
                                                   : ContainerState::WokenUp;
        r.state_path.push_back(state_);
        if (audit_enabled()) audit();
        return r;
    }

    HostMemory& host() { return *host_; }
    const HostMemory& host() const { return *host_; }
    PageAllocator& allocator() { return *alloc_; }
    GuestMemory& guest() { return *mem_; }
    SwapManager& swap() { return *swap_; }
    FileStore& files() { return *files_; }
    AddressSpace& main_space() { return *main_space_; }
    const SandboxParams& params() const { return params_; }
    const StorageModel& storage() const { return params_.storage; }

    VirtAddr anon_base() const { return anon_base_; }
    VirtAddr file_base() const { return file_base_; }

    std::uint64_t committed_pages() const { return host_->committed_pages(); }
    std::uint64_t control_pages() const { return alloc_->block_count(); }

    std::uint64_t anonymous_committed_pages() const {
        std::uint64_t n = 0;
        for (PageAddr p : host_->committed_set()) {
            if (alloc_->is_managed_data_page(p)) ++n;
        }
        return n;
    }

    double compute_seconds() const { return compute_seconds_; }
    double cold_start_cost() const { return params_.cold_start_runtime_cost; }
    const DeflationReport& last_deflation() const { return last_deflation_; }
    const InflateResult& last_inflate() const { return last_inflate_; }

    void audit() const {
        alloc_->audit();
        mem_->audit();
        if (paused_ != (state_ == ContainerState::Hibernate))
            throw CorruptionError("paused flag out of sync with state");
        // every swapped-out entry must resolve through the swap index
        mem_->walk([&](AddressSpace&, VirtAddr, PageTableEntry& pte) {
            if (pte.swapped_out && !swap_->index().contains(pte.phys))
                throw CorruptionError("swapped-out PTE without a swap index entry");
        });
    }

private:
    Sandbox(std::uint64_t id, const SandboxParams& params)
        : id_(id),
          params_(params),
          host_(std::make_unique<HostMemory>()),
          heap_(std::make_unique<BlockHeapSource>(params.heap_block_limit)),
          alloc_(std::make_unique<PageAllocator>(*heap_, *host_)),
          files_(std::make_unique<FileStore>()),
          mem_(std::make_unique<GuestMemory>(*alloc_, *host_, *files_)),
          swap_(std::make_unique<SwapManager>(*mem_, *alloc_, *host_, params_.storage)) {
        mem_->set_swap_backend(swap_.get());
    }

    // The four-step deflation pipeline. Any step failure restores the
    // pre-deflation commitment state and leaves the state machine untouched.
    void deflate() {
        paused_ = true;  // step 1: guest processes paused, runtime thread parked
        const std::vector<PageAddr> committed_before = host_->committed_set();
        DeflationReport rep;
        try {
            rep.reclaimed_pages = alloc_->reclaim_free_pages(*host_);  // step 2
            if (swap_->has_recorded_manifest()) {                      // step 3
                rep.reap_mode = true;
                rep.swapped_pages = swap_->reap_swap_out();
            } else {
                rep.swapped_pages = swap_->swap_out().pages_written;
            }
            for (AddressSpace* s : mem_->spaces()) {                   // step 4
                rep.file_released_pages += mem_->release_file_backed(*s);
            }
        } catch (...) {
            // Reclaimed free pages were content-dead, so a zeroed recommit
            // restores the footprint exactly.
            for (PageAddr p : committed_before) host_->commit(p);
            paused_ = false;
            throw;
        }
        swap_->note_hibernated();
        last_deflation_ = rep;
        state_ = ContainerState::Hibernate;
        if (audit_enabled()) audit();
    }

    std::uint64_t id_;
    SandboxParams params_;
    ContainerState state_ = ContainerState::Cold;
    bool paused_ = false;

    std::unique_ptr<HostMemory> host_;
    std::unique_ptr<BlockHeapSource> heap_;
    std::unique_ptr<PageAllocator> alloc_;
    std::unique_ptr<FileStore> files_;
    std::unique_ptr<GuestMemory> mem_;
    std::unique_ptr<SwapManager> swap_;

    AddressSpace* main_space_ = nullptr;
    VirtAddr anon_base_ = 0;
    VirtAddr file_base_ = 0;

    double compute_seconds_ = 0.0;
    DeflationReport last_deflation_;
    InflateResult last_inflate_;
};

}  // namespace hibersim
