#pragma once

#include <optional>
#include <string>

namespace moss {

// Four-level ordinal quality scale. The integer encoding backs score sums and
// peak selection; the total order is missing < weak < adequate < strong.
enum class Level : int {
    missing = 0,
    weak = 1,
    adequate = 2,
    strong = 3,
};

enum class Ordering { less, equal, greater };

Ordering level_order(Level a, Level b);

inline int level_value(Level l) { return static_cast<int>(l); }

std::string level_name(Level l);
std::optional<Level> level_from_name(const std::string& name);

inline bool level_qualifies_for_batch(Level l) {
    return l == Level::weak || l == Level::missing;
}

} // namespace moss
