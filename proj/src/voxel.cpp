#include "fekt/voxel.hpp"

#include <algorithm>

#include "fekt/errors.hpp"

namespace fekt {

double normalize_time(std::uint64_t t, std::uint64_t t_min, std::uint64_t t_max,
                      int bins) {
    if (bins < 1) throw ConfigError("bin count must be at least 1");
    if (t_max <= t_min) throw ConfigError("normalize_time needs t_max > t_min");
    if (t < t_min || t > t_max) throw ConfigError("timestamp outside interval");
    return double(t - t_min) / double(t_max - t_min) * double(bins - 1);
}

VoxelGrid build_voxel_grid(const EventSlice& s, int bins) {
    if (bins < 1) throw ConfigError("bin count must be at least 1");
    VoxelGrid g(bins, s.width, s.height);
    if (s.events.empty()) return g;
    if (s.t_max <= s.t_min) {
        throw ConfigError("voxel grid needs a non-degenerate interval");
    }

    const std::size_t n = s.events.size();
    std::vector<double> tstar(n);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < long(n); ++i) {
        tstar[std::size_t(i)] = normalize_time(s.events[std::size_t(i)].t, s.t_min,
                                               s.t_max, bins);
    }

    // tstar is non-decreasing because events are time-sorted, so each bin's
    // support is a contiguous index range.
#pragma omp parallel for schedule(dynamic)
    for (int b = 0; b < bins; ++b) {
        const auto first = std::lower_bound(tstar.begin(), tstar.end(), double(b) - 1.0);
        const auto last = std::upper_bound(tstar.begin(), tstar.end(), double(b) + 1.0);
        for (auto it = first; it != last; ++it) {
            const std::size_t i = std::size_t(it - tstar.begin());
            const Event& e = s.events[i];
            g.at(b, e.y, e.x) += double(e.p) * bin_weight(*it, b);
        }
    }
    return g;
}

} // namespace fekt
