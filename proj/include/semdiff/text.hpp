#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace semdiff {

/// Shortest-faithful decimal form of a double: 17 significant digits
/// round-trip bit-exactly through text.
inline std::string format_g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::string format_g(double x, int significant) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*g", significant, x);
    return buf;
}

/// FNV-1a 64-bit hash; used for schedule digests.
inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return std::string(s.substr(b, e - b));
}

} // namespace semdiff
