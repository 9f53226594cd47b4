#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vmpower {

/// Root of every error this library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

enum class WorkloadLabel : std::uint8_t { UserFacing, NonUserFacing };

constexpr std::string_view to_string(WorkloadLabel l) noexcept
{
    return l == WorkloadLabel::UserFacing ? "UserFacing" : "NonUserFacing";
}

inline WorkloadLabel parse_label(std::string_view s)
{
    if (s == "UserFacing" || s == "UF" || s == "uf") return WorkloadLabel::UserFacing;
    if (s == "NonUserFacing" || s == "NUF" || s == "nuf") return WorkloadLabel::NonUserFacing;
    throw InvalidArgument("unknown workload label '" + std::string(s) + "'");
}

constexpr bool is_uf(WorkloadLabel l) noexcept { return l == WorkloadLabel::UserFacing; }

/// Simulated time in milliseconds.
using SimMillis = std::int64_t;

constexpr SimMillis kMillisPerSecond = 1000;
constexpr SimMillis kMillisPerHour = 3600 * kMillisPerSecond;
constexpr SimMillis kMillisPerDay = 24 * kMillisPerHour;

// FNV-1a, used for config hashes and per-VM noise streams.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept
{
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// splitmix64 finalizer; a stateless hash for counter-based random streams.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Uniform in (0, 1) derived from a 64-bit hash.
constexpr double unit_from_hash(std::uint64_t h) noexcept
{
    return (static_cast<double>(h >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

} // namespace vmpower
