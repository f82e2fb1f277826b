#include "moss/core/level.hpp"

namespace moss {

Ordering level_order(Level a, Level b) {
    int va = level_value(a);
    int vb = level_value(b);
    if (va < vb) return Ordering::less;
    if (va > vb) return Ordering::greater;
    return Ordering::equal;
}

std::string level_name(Level l) {
    switch (l) {
    case Level::missing: return "missing";
    case Level::weak: return "weak";
    case Level::adequate: return "adequate";
    case Level::strong: return "strong";
    }
    return "missing";
}

std::optional<Level> level_from_name(const std::string& name) {
    if (name == "missing") return Level::missing;
    if (name == "weak") return Level::weak;
    if (name == "adequate") return Level::adequate;
    if (name == "strong") return Level::strong;
    return std::nullopt;
}

} // namespace moss
