#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fekt/errors.hpp"
#include "fekt/reference.hpp"
#include "fekt/rng.hpp"
#include "fekt/tracker.hpp"

#include "test_support.hpp"

using namespace fekt;
using testutil::TempDir;

namespace {

bool tracks_equal(const std::vector<Track>& a, const std::vector<Track>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Track &x = a[i], &y = b[i];
        if (x.id != y.id || x.birth != y.birth || x.death != y.death) return false;
        if (x.obs.size() != y.obs.size()) return false;
        for (std::size_t k = 0; k < x.obs.size(); ++k) {
            if (x.obs[k].t != y.obs[k].t || x.obs[k].x != y.obs[k].x ||
                x.obs[k].y != y.obs[k].y || x.obs[k].score != y.obs[k].score) {
                return false;
            }
        }
    }
    return true;
}

} // namespace

TEST_CASE("keypoint extraction thresholds strictly") {
    GrayImage h(8, 6, 0.0);
    CHECK(extract_keypoints(h, 10).empty());

    h.at(3, 2) = 0.99;
    h.at(5, 4) = 0.95; // exactly at the default threshold, excluded
    const std::vector<Keypoint> kps = extract_keypoints(h, 10);
    REQUIRE(kps.size() == 1);
    CHECK(kps[0].x == 3.0);
    CHECK(kps[0].y == 2.0);
    CHECK(kps[0].t == 10);
    CHECK(kps[0].score == 0.99);
}

TEST_CASE("non maximum suppression keeps the row major first plateau pixel") {
    GrayImage h(8, 8, 0.0);
    h.at(3, 3) = 0.97;
    h.at(4, 3) = 0.97;
    h.at(3, 4) = 0.97;
    h.at(4, 4) = 0.97;
    const std::vector<Keypoint> plain = extract_keypoints(h, 0, 0.95, false);
    CHECK(plain.size() == 4);
    const std::vector<Keypoint> nms = extract_keypoints(h, 0, 0.95, true);
    REQUIRE(nms.size() == 1);
    CHECK(nms[0].x == 3.0);
    CHECK(nms[0].y == 3.0);
}

TEST_CASE("subpixel refinement shifts toward the heavier neighbour") {
    GrayImage h(9, 9, 0.0);
    h.at(4, 4) = 1.0;
    h.at(5, 4) = 0.5;
    const std::vector<Keypoint> kps = extract_keypoints(h, 0, 0.9, false, true);
    REQUIRE(kps.size() == 1);
    // centroid of the 3x3 window around (4, 4)
    CHECK(std::abs(kps[0].x - (4.0 + 0.5 / 1.5)) <= 1e-12);
    CHECK(kps[0].y == 4.0);
}

TEST_CASE("association follows the nearest active track inside the radius") {
    TrackerParams params;
    params.radius = 4.0;
    TrackerState st(params);

    st.associate(std::vector<Keypoint>{{10.0, 10.0, 0, 0.9}});
    // sqrt(5) away, inside the radius: continues track 0
    st.associate(std::vector<Keypoint>{{12.0, 11.0, 5000, 0.8}});
    const std::vector<Track> tracks = st.finish();
    REQUIRE(tracks.size() == 1);
    CHECK(tracks[0].id == 0);
    CHECK(tracks[0].obs.size() == 2);
    CHECK(tracks[0].birth == 0);
    CHECK(tracks[0].death == 5000);
}

TEST_CASE("a keypoint outside every radius starts a new track") {
    TrackerParams params;
    params.radius = 4.0;
    TrackerState st(params);
    st.associate(std::vector<Keypoint>{{10.0, 10.0, 0, 0.9}});
    st.associate(std::vector<Keypoint>{{14.5, 10.0, 5000, 0.8}});
    const std::vector<Track> tracks = st.finish();
    REQUIRE(tracks.size() == 2);
    CHECK(tracks[0].obs.size() == 1);
    CHECK(tracks[1].obs.size() == 1);
}

TEST_CASE("the closest of two candidates wins the claim") {
    TrackerParams params;
    params.radius = 4.0;
    TrackerState st(params);
    st.associate(std::vector<Keypoint>{{10.0, 10.0, 0, 0.9}, {16.0, 10.0, 0, 0.8}});
    // distance 1 to the second track, distance 5 to the first
    st.associate(std::vector<Keypoint>{{15.0, 10.0, 5000, 0.7}});
    const std::vector<Track> tracks = st.finish();
    REQUIRE(tracks.size() == 2);
    CHECK(tracks[0].obs.size() == 1);
    CHECK(tracks[1].obs.size() == 2);
    CHECK(tracks[1].obs[1].x == 15.0);
}

TEST_CASE("tracks idle past the window are closed before association") {
    TrackerParams params;
    params.radius = 4.0;
    params.window_ms = 12.0;
    TrackerState st(params);
    st.associate(std::vector<Keypoint>{{10.0, 10.0, 0, 0.9}});
    // 13 ms later the old track is gone, so the same spot births a new one
    st.associate(std::vector<Keypoint>{{10.0, 10.0, 13000, 0.8}});
    const std::vector<Track> tracks = st.finish();
    REQUIRE(tracks.size() == 2);
    CHECK(tracks[0].id == 0);
    CHECK(tracks[1].id == 1);

    TrackerState st2(params);
    st2.associate(std::vector<Keypoint>{{10.0, 10.0, 0, 0.9}});
    st2.associate(std::vector<Keypoint>{{10.0, 10.0, 12000, 0.8}});
    CHECK(st2.finish().size() == 1);
}

TEST_CASE("timestamps must not regress across association calls") {
    TrackerState st(TrackerParams{});
    st.associate(std::vector<Keypoint>{{5.0, 5.0, 1000, 0.9}});
    CHECK_THROWS_AS(st.associate(std::vector<Keypoint>{{5.0, 5.0, 500, 0.9}}),
                    ConfigError);
}

TEST_CASE("hash assisted association equals the exhaustive scan") {
    Rng rng(61);
    for (int stream = 0; stream < 50; ++stream) {
        TrackerParams params;
        params.radius = 1.0 + double(rng.below(5));
        params.window_ms = 5.0 + double(rng.below(15));
        TrackerState fast(params);
        ref::BruteTracker slow(params);

        std::uint64_t t = 0;
        const int batches = 1 + int(rng.below(8));
        for (int b = 0; b < batches; ++b) {
            t += 1000 + rng.below(12000);
            std::vector<Keypoint> kps;
            const int n = int(rng.below(40));
            for (int i = 0; i < n; ++i) {
                kps.push_back(Keypoint{double(rng.below(64)), double(rng.below(64)), t,
                                       0.5 + 0.5 * rng.uniform()});
            }
            fast.associate(kps);
            slow.associate(kps);
        }
        CHECK(tracks_equal(fast.finish(), slow.finish()));
    }
}

TEST_CASE("run_tracker rejects malformed interval stacks") {
    GrayImage m(8, 8, 0.0);
    HeatmapSeq a;
    a.maps = {m, m};
    a.t0 = 1000;
    a.t1 = 2000;
    HeatmapSeq overlap = a;
    overlap.t0 = 1500;
    overlap.t1 = 2500;
    std::vector<HeatmapSeq> seqs{a, overlap};
    CHECK_THROWS_AS(run_tracker(seqs, TrackerParams{}), ConfigError);

    HeatmapSeq bad = a;
    bad.t1 = bad.t0;
    std::vector<HeatmapSeq> degenerate{bad};
    CHECK_THROWS_AS(run_tracker(degenerate, TrackerParams{}), ConfigError);
}

TEST_CASE("run_tracker follows a moving blob across intervals") {
    // one bright pixel drifting right by one pixel per step
    std::vector<HeatmapSeq> seqs;
    int step = 0;
    for (int interval = 0; interval < 2; ++interval) {
        HeatmapSeq seq;
        seq.t0 = std::uint64_t(interval) * 5000;
        seq.t1 = seq.t0 + 5000;
        for (int i = 0; i < 5; ++i, ++step) {
            GrayImage m(32, 8, 0.0);
            m.at(4 + step, 4) = 1.0;
            seq.maps.push_back(std::move(m));
        }
        seqs.push_back(std::move(seq));
    }
    TrackerParams params;
    params.radius = 2.0;
    params.window_ms = 4.0;
    const std::vector<Track> tracks = run_tracker(seqs, params);
    REQUIRE(tracks.size() == 1);
    CHECK(tracks[0].obs.size() == 10);
    CHECK(tracks[0].obs.front().x == 4.0);
    CHECK(tracks[0].obs.back().x == 13.0);

    const std::vector<Track> brute = ref::run_tracker_brute(seqs, params);
    CHECK(tracks_equal(tracks, brute));
}

TEST_CASE("harris response marks corners and matches the reference") {
    GrayImage frame(32, 32, 0.1);
    for (int y = 8; y < 24; ++y) {
        for (int x = 8; x < 24; ++x) frame.at(x, y) = 0.9;
    }
    const GrayImage r = harris_response(frame);
    const GrayImage rr = ref::harris_response(frame);
    CHECK(std::memcmp(r.v.data(), rr.v.data(), r.v.size() * sizeof(double)) == 0);

    // corner response beats the flat interior and the straight edge midpoint
    CHECK(r.at(8, 8) > r.at(16, 16));
    CHECK(r.at(8, 8) > r.at(16, 8));
}

TEST_CASE("baseline heatmaps span the unit interval and the requested steps") {
    Rng rng(62);
    GrayImage frame(24, 20, 0.0);
    for (double& v : frame.v) v = rng.uniform();
    EventSlice ev = EventSlice::make(
        {{2000, 5, 5, 1}, {3000, 12, 9, -1}, {4000, 18, 3, 1}}, 0, 10000, 24, 20);
    const VoxelGrid grid = build_voxel_grid(ev, 5);

    const HeatmapSeq seq = baseline_heatmaps(frame, grid, 4, 0, 10000);
    REQUIRE(seq.maps.size() == 4);
    CHECK(seq.t0 == 0);
    CHECK(seq.t1 == 10000);
    double hi = 0.0, lo = 1.0;
    for (double v : seq.maps[0].v) {
        hi = std::max(hi, v);
        lo = std::min(lo, v);
    }
    CHECK(hi == 1.0);
    CHECK(lo >= 0.0);
    CHECK(seq.maps[0].v == seq.maps[3].v);

    // flat frames carry no corners at all
    const HeatmapSeq flat =
        baseline_heatmaps(GrayImage(24, 20, 0.5), grid, 2, 0, 10000);
    for (double v : flat.maps[0].v) CHECK(v == 0.0);
}

TEST_CASE("track files round trip") {
    TempDir tmp;
    std::vector<Track> tracks;
    Track t0;
    t0.id = 0;
    t0.obs = {{10.25, 5.5, 1000, 0.975}, {11.0, 5.25, 2000, 0.5}};
    t0.birth = 1000;
    t0.death = 2000;
    Track t1;
    t1.id = 1;
    t1.obs = {{3.0, 4.0, 1500, 1.0}};
    t1.birth = 1500;
    t1.death = 1500;
    tracks = {t0, t1};

    const auto path = tmp.path / "t.tracks.txt";
    save_tracks(tracks, path);
    const std::vector<Track> r = load_tracks(path);
    CHECK(tracks_equal(tracks, r));

    testutil::spit(tmp.path / "bad.txt", "0,100,1.0\n");
    CHECK_THROWS_AS(load_tracks(tmp.path / "bad.txt"), IoError);
}
