#pragma once

#include <cstdint>
#include <functional>
#include <string>

namespace moss {

// UTC wall-clock instant with millisecond precision. Documents serialize it
// as ISO-8601 (`2026-08-09T12:34:56.789Z`), which sorts lexicographically.
struct Timestamp {
    std::int64_t ms{0};

    static Timestamp now();
    static Timestamp from_iso(const std::string& text); // throws Error(bad_request)
    std::string iso() const;

    bool operator==(const Timestamp&) const = default;
    auto operator<=>(const Timestamp&) const = default;
};

using ClockFn = std::function<Timestamp()>;

// All protocol timing constants keep their stated defaults and divide by a
// global scale factor so test runs compress wall-clock time.
inline std::int64_t scaled_ms(std::int64_t ms, double time_scale) {
    if (time_scale <= 1.0) return ms;
    auto v = static_cast<std::int64_t>(static_cast<double>(ms) / time_scale);
    return v > 0 ? v : 1;
}

void sleep_ms(std::int64_t ms);

} // namespace moss
