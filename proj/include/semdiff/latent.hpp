#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace semdiff {

/// Semantic information vector z (latent units). Dimension d matches the
/// active source.
using Latent = std::vector<double>;

inline bool all_finite(const Latent& z) {
    for (double x : z)
        if (!std::isfinite(x)) return false;
    return true;
}

inline void require_same_dim(const Latent& a, const Latent& b, const char* what) {
    if (a.size() != b.size())
        throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

inline double dot(const Latent& a, const Latent& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_distance(const Latent& a, const Latent& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double euclidean_distance(const Latent& a, const Latent& b) {
    return std::sqrt(squared_distance(a, b));
}

inline double squared_norm(const Latent& a) { return dot(a, a); }

} // namespace semdiff
