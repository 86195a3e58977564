#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fekt/errors.hpp"
#include "fekt/reference.hpp"
#include "fekt/rng.hpp"
#include "fekt/voxel.hpp"

using namespace fekt;

TEST_CASE("normalize_time maps the interval onto the bin axis") {
    CHECK(normalize_time(500, 0, 1000, 10) == 4.5);
    CHECK(normalize_time(0, 0, 1000, 10) == 0.0);
    CHECK(normalize_time(1000, 0, 1000, 10) == 9.0);
    CHECK_THROWS_AS(normalize_time(42, 42, 42, 10), ConfigError);
    CHECK_THROWS_AS(normalize_time(5, 10, 20, 10), ConfigError);
}

TEST_CASE("bin weight is a unit triangle") {
    CHECK(bin_weight(2.5, 2) == 0.5);
    CHECK(bin_weight(2.5, 3) == 0.5);
    CHECK(bin_weight(2.5, 4) == 0.0);
    CHECK(bin_weight(3.0, 3) == 1.0);
    CHECK(bin_weight(0.0, 0) == 1.0);
}

TEST_CASE("single event splits between its two adjacent bins") {
    // t = 2500 over [0, 9000] with 10 bins sits at tstar = 2.5.
    const EventSlice s = EventSlice::make({{2500, 3, 1, 1}}, 0, 9000, 8, 4);
    const VoxelGrid g = build_voxel_grid(s, 10);
    CHECK(g.at(2, 1, 3) == 0.5);
    CHECK(g.at(3, 1, 3) == 0.5);
    double total = 0.0;
    for (double v : g.v) total += std::abs(v);
    CHECK(total == 1.0);
}

TEST_CASE("opposite polarities at the same spot cancel exactly") {
    const EventSlice s =
        EventSlice::make({{2500, 3, 1, 1}, {2500, 3, 1, -1}}, 0, 9000, 8, 4);
    const VoxelGrid g = build_voxel_grid(s, 10);
    for (double v : g.v) CHECK(v == 0.0);
}

TEST_CASE("voxel grids superpose over event subsets") {
    std::vector<Event> a{{1000, 0, 0, 1}, {5000, 1, 1, -1}};
    std::vector<Event> b{{3000, 2, 2, 1}, {8000, 0, 2, 1}};
    std::vector<Event> both = a;
    both.insert(both.end(), b.begin(), b.end());

    const VoxelGrid ga = build_voxel_grid(EventSlice::make(a, 0, 9000, 4, 4), 10);
    const VoxelGrid gb = build_voxel_grid(EventSlice::make(b, 0, 9000, 4, 4), 10);
    const VoxelGrid g = build_voxel_grid(EventSlice::make(both, 0, 9000, 4, 4), 10);
    for (std::size_t i = 0; i < g.v.size(); ++i) {
        CHECK(std::abs(g.v[i] - (ga.v[i] + gb.v[i])) <= 1e-14);
    }
}

TEST_CASE("empty slice gives an all zero grid") {
    const VoxelGrid g = build_voxel_grid(EventSlice::make({}, 0, 100, 4, 4), 5);
    CHECK(g.bins == 5);
    for (double v : g.v) CHECK(v == 0.0);
}

TEST_CASE("endpoint events land fully in the boundary bins") {
    const EventSlice s =
        EventSlice::make({{0, 0, 0, 1}, {9000, 1, 0, 1}}, 0, 9000, 4, 4);
    const VoxelGrid g = build_voxel_grid(s, 10);
    CHECK(g.at(0, 0, 0) == 1.0);
    CHECK(g.at(9, 0, 1) == 1.0);
}

namespace {

EventSlice random_slice(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Event> ev;
    ev.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        ev.push_back(Event{rng.below(1000001), int(rng.below(80)), int(rng.below(60)),
                           rng.coin_sign()});
    }
    return EventSlice::make(std::move(ev), 0, 1000000, 80, 60);
}

} // namespace

TEST_CASE("parallel builder is bitwise identical to the serial reference") {
    const EventSlice s = random_slice(20000, 17);
    const VoxelGrid fast = build_voxel_grid(s, 10);
    const VoxelGrid slow = ref::build_voxel_grid(s, 10);
    REQUIRE(fast.v.size() == slow.v.size());
    CHECK(std::memcmp(fast.v.data(), slow.v.data(),
                      fast.v.size() * sizeof(double)) == 0);
}

TEST_CASE("event order only perturbs the grid at rounding level") {
    const EventSlice s = random_slice(5000, 23);
    std::vector<Event> shuffled = s.events;
    Rng rng(99);
    for (std::size_t i = shuffled.size(); i > 1; --i) {
        std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    }
    const VoxelGrid g1 = build_voxel_grid(s, 10);
    const VoxelGrid g2 =
        build_voxel_grid(EventSlice::make(shuffled, 0, 1000000, 80, 60), 10);
    double worst = 0.0;
    for (std::size_t i = 0; i < g1.v.size(); ++i) {
        worst = std::max(worst, std::abs(g1.v[i] - g2.v[i]));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("total grid mass equals the polarity sum") {
    const EventSlice s = random_slice(5000, 31);
    const VoxelGrid g = build_voxel_grid(s, 10);
    double mass = 0.0;
    for (double v : g.v) mass += v;
    double polarity = 0.0;
    for (const Event& e : s.events) polarity += e.p;
    CHECK(std::abs(mass - polarity) <= 1e-9);
}
