#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace hibersim {

// Page and block geometry is fixed: 4KB pages, 4MB blocks, block-aligned.
inline constexpr std::uint64_t kPageSize = 4096;
inline constexpr std::uint64_t kPageShift = 12;
inline constexpr std::uint64_t kBlockSize = 4ull << 20;
inline constexpr std::uint64_t kBlockShift = 22;
inline constexpr std::uint64_t kPagesPerBlock = kBlockSize / kPageSize;      // 1024
inline constexpr std::uint64_t kDataPagesPerBlock = kPagesPerBlock - 1;      // 1023, page 0 is the control page

// Guest-physical page address. In the modeled VM arrangement this doubles as
// the host virtual page backing it.
using PageAddr = std::uint64_t;
// Guest virtual address inside one address space.
using VirtAddr = std::uint64_t;

using PageBytes = std::array<std::uint8_t, kPageSize>;

inline constexpr PageAddr page_base(std::uint64_t addr) { return addr & ~(kPageSize - 1); }
inline constexpr PageAddr block_base(PageAddr addr) { return addr & ~(kBlockSize - 1); }
inline constexpr bool page_aligned(std::uint64_t addr) { return (addr & (kPageSize - 1)) == 0; }
inline constexpr bool block_aligned(std::uint64_t addr) { return (addr & (kBlockSize - 1)) == 0; }
inline constexpr std::uint64_t pages_for_bytes(std::uint64_t bytes) {
    return (bytes + kPageSize - 1) / kPageSize;
}

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Allocation refused by the backing heap.
struct AllocationError : Error {
    using Error::Error;
};

// Internal bookkeeping violated an invariant (double free, broken bitmap,
// missing swap index entry, malformed file image).
struct CorruptionError : Error {
    using Error::Error;
};

// Guest access outside any mapped region or against its permissions.
struct AccessError : Error {
    using Error::Error;
};

// Container state machine rejected a trigger.
struct TransitionError : Error {
    using Error::Error;
};

// Bad scenario or storage configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Modeled disk failure during a swap write; used by fault-injection tests.
struct DiskError : Error {
    using Error::Error;
};

// HIBERSIM_AUDIT=1 runs the full invariant walks after every operation.
inline bool audit_enabled() {
    static const bool on = [] {
        const char* v = std::getenv("HIBERSIM_AUDIT");
        return v != nullptr && v[0] == '1';
    }();
    return on;
}

}  // namespace hibersim
