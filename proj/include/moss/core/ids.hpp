#pragma once

#include <string>

namespace moss {

// ULID-style identifier: 48-bit millisecond timestamp + 80 bits of randomness,
// Crockford base32. Sorts by creation time, safe in paths and JSON keys.
std::string new_id();

// `new_id()` with a short role prefix, e.g. prefixed_id("run") -> "run-01J...".
std::string prefixed_id(const std::string& prefix);

// Stable 64-bit FNV-1a content hash, hex-encoded. Used to key scripted
// evaluator sidecars and other deterministic lookups; not cryptographic.
std::string fnv1a_hex(const std::string& data);

} // namespace moss
