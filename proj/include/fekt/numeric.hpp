#pragma once

#include <cstddef>
#include <span>

namespace fekt {

/// Pairwise summation over xs in index order. The reduction tree depends only
/// on the length, so the result is reproducible for a fixed input order and
/// rounding error grows as O(log n) instead of O(n).
inline double pairwise_sum(std::span<const double> xs) {
    const std::size_t n = xs.size();
    if (n == 0) return 0.0;
    if (n <= 8) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

} // namespace fekt
