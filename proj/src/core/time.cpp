#include "moss/core/time.hpp"

#include "moss/core/errors.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <thread>

namespace moss {

Timestamp Timestamp::now() {
    auto t = std::chrono::system_clock::now().time_since_epoch();
    return Timestamp{std::chrono::duration_cast<std::chrono::milliseconds>(t).count()};
}

std::string Timestamp::iso() const {
    std::time_t secs = ms / 1000;
    int millis = static_cast<int>(ms % 1000);
    if (millis < 0) { // pre-epoch instants still format correctly
        millis += 1000;
        secs -= 1;
    }
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, millis);
    return buf;
}

Timestamp Timestamp::from_iso(const std::string& text) {
    std::tm tm{};
    int millis = 0;
    int n = std::sscanf(text.c_str(), "%d-%d-%dT%d:%d:%d.%dZ", &tm.tm_year, &tm.tm_mon,
                        &tm.tm_mday, &tm.tm_hour, &tm.tm_min, &tm.tm_sec, &millis);
    if (n < 6) throw Error(ErrorCode::bad_request, "unparseable timestamp: " + text);
    if (n == 6) millis = 0;
    tm.tm_year -= 1900;
    tm.tm_mon -= 1;
    std::time_t secs = timegm(&tm);
    return Timestamp{static_cast<std::int64_t>(secs) * 1000 + millis};
}

void sleep_ms(std::int64_t ms) {
    if (ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(ms));
}

} // namespace moss
