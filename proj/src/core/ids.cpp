#include "moss/core/ids.hpp"

#include "moss/core/time.hpp"

#include <array>
#include <cstdint>
#include <cstdio>
#include <mutex>
#include <random>

namespace moss {

namespace {

constexpr char kAlphabet[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"; // Crockford

std::mt19937_64& rng() {
    static std::mt19937_64 gen{std::random_device{}()};
    return gen;
}

std::mutex& rng_mutex() {
    static std::mutex m;
    return m;
}

} // namespace

std::string new_id() {
    std::uint64_t ts = static_cast<std::uint64_t>(Timestamp::now().ms) & 0xFFFFFFFFFFFFULL;
    std::array<std::uint64_t, 2> rnd{};
    {
        std::lock_guard<std::mutex> lock(rng_mutex());
        rnd[0] = rng()();
        rnd[1] = rng()();
    }

    // 48-bit time -> 10 chars, 80-bit randomness -> 16 chars.
    std::string out(26, '0');
    for (int i = 9; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = kAlphabet[ts & 0x1F];
        ts >>= 5;
    }
    std::uint64_t a = rnd[0];
    std::uint64_t b = rnd[1] & 0xFFFF; // 16 extra bits
    for (int i = 25; i >= 13; --i) {
        out[static_cast<std::size_t>(i)] = kAlphabet[a & 0x1F];
        a >>= 5;
    }
    for (int i = 12; i >= 10; --i) {
        out[static_cast<std::size_t>(i)] = kAlphabet[b & 0x1F];
        b >>= 5;
    }
    return out;
}

std::string prefixed_id(const std::string& prefix) {
    return prefix + "-" + new_id();
}

std::string fnv1a_hex(const std::string& data) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace moss
