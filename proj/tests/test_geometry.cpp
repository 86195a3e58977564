#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fekt/errors.hpp"
#include "fekt/geometry.hpp"
#include "fekt/reference.hpp"
#include "fekt/rng.hpp"

#include "test_support.hpp"

using namespace fekt;
using testutil::TempDir;

namespace {

GrayImage random_image(int w, int h, std::uint64_t seed) {
    Rng rng(seed);
    GrayImage img(w, h);
    for (double& v : img.v) v = rng.uniform();
    return img;
}

GrayImage smooth_image(int w, int h) {
    GrayImage img(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            img.at(x, y) = 0.5 + 0.25 * std::sin(0.15 * x) + 0.2 * std::cos(0.11 * y);
        }
    }
    return img;
}

} // namespace

TEST_CASE("translations compose by adding their offsets") {
    const Homography t = compose(Homography::translation(2, 0),
                                 Homography::translation(0, 3));
    const Vec2 p = apply_point(t, Vec2{1, 1});
    CHECK(p.x == 3.0);
    CHECK(p.y == 4.0);
}

TEST_CASE("inverse of a translation flips its offsets") {
    const Homography inv = invert(Homography::translation(5, -2));
    CHECK(std::abs(inv.h[2] - (-5.0)) <= 1e-15);
    CHECK(std::abs(inv.h[5] - 2.0) <= 1e-15);
    const Vec2 p = apply_point(inv, Vec2{5, -2});
    CHECK(std::abs(p.x) <= 1e-15);
    CHECK(std::abs(p.y) <= 1e-15);
}

TEST_CASE("compose with the inverse lands back at the start") {
    Rng rng(5);
    HomographyJitter jit{2.0, 0.1, 0.05, 1e-4, 32.0, 24.0};
    for (int i = 0; i < 10; ++i) {
        const Homography t = sample_homography(jit, rng);
        const Homography round = compose(invert(t), t);
        const Vec2 p = apply_point(round, Vec2{17.0, 9.0});
        CHECK(std::abs(p.x - 17.0) <= 1e-9);
        CHECK(std::abs(p.y - 9.0) <= 1e-9);
    }
}

TEST_CASE("row major constructor normalizes the corner entry") {
    std::array<double, 9> m{2, 0, 0, 0, 2, 0, 0, 0, 2};
    const Homography h = Homography::from_row_major(m);
    CHECK(h.h[8] == 1.0);
    CHECK(h.h[0] == 1.0);
    std::array<double, 9> bad{1, 0, 0, 0, 1, 0, 0, 0, 0};
    CHECK_THROWS_AS(Homography::from_row_major(bad), ConfigError);
}

TEST_CASE("identity warp reproduces the image with a full mask") {
    const GrayImage img = random_image(17, 11, 2);
    const WarpResult r = warp_bilinear(img, Homography::identity());
    CHECK(r.image.v == img.v);
    for (double m : r.mask.v) CHECK(m == 1.0);
}

TEST_CASE("unit translation warp shifts content by one pixel") {
    const GrayImage img = random_image(9, 6, 3);
    const WarpResult r = warp_bilinear(img, Homography::translation(1, 0));
    for (int y = 0; y < img.height; ++y) {
        CHECK(r.mask.at(0, y) == 0.0);
        CHECK(r.image.at(0, y) == 0.0);
        for (int x = 1; x < img.width; ++x) {
            CHECK(r.image.at(x, y) == img.at(x - 1, y));
            CHECK(r.mask.at(x, y) == 1.0);
        }
    }
}

TEST_CASE("warp matches the serial reference bitwise") {
    const GrayImage img = random_image(33, 21, 4);
    Rng rng(6);
    const HomographyJitter jit{1.5, 0.08, 0.04, 5e-5, 16.0, 10.0};
    for (int i = 0; i < 5; ++i) {
        const Homography t = sample_homography(jit, rng);
        const WarpResult a = warp_bilinear(img, t);
        const WarpResult b = ref::warp_bilinear(img, t);
        CHECK(std::memcmp(a.image.v.data(), b.image.v.data(),
                          a.image.v.size() * sizeof(double)) == 0);
        CHECK(a.mask.v == b.mask.v);
    }
}

TEST_CASE("warp adjoint satisfies the transpose identity") {
    // <warp(img), g> must equal <img, adjoint(g)> because the adjoint scatters
    // the same bilinear weights the forward pass gathered.
    const GrayImage img = random_image(19, 14, 7);
    const GrayImage g = random_image(19, 14, 8);
    Rng rng(9);
    const HomographyJitter jit{2.0, 0.1, 0.05, 1e-4, 9.0, 7.0};
    for (int i = 0; i < 5; ++i) {
        const Homography t = sample_homography(jit, rng);
        const WarpResult fwd = warp_bilinear(img, t);
        const GrayImage back = warp_adjoint(g, t, img.width, img.height);
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t k = 0; k < img.v.size(); ++k) {
            lhs += fwd.image.v[k] * g.v[k];
            rhs += img.v[k] * back.v[k];
        }
        CHECK(std::abs(lhs - rhs) <= 1e-9 * (1.0 + std::abs(lhs)));
    }
}

TEST_CASE("warp round trip recovers a smooth image") {
    const GrayImage img = smooth_image(64, 48);
    Rng rng(10);
    const HomographyJitter jit{2.0, 0.04, 0.03, 5e-5, 32.0, 24.0};
    const Homography t = sample_homography(jit, rng);
    const WarpResult fwd = warp_bilinear(img, t);
    const WarpResult back = warp_bilinear(fwd.image, invert(t));
    const WarpResult valid = warp_bilinear(fwd.mask, invert(t));

    double mae = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < img.v.size(); ++k) {
        if (back.mask.v[k] != 1.0 || valid.image.v[k] < 0.999999) continue;
        mae += std::abs(back.image.v[k] - img.v[k]);
        ++n;
    }
    REQUIRE(n > img.v.size() / 2);
    CHECK(mae / double(n) < 2e-2);
}

TEST_CASE("patch partition drops partial border patches") {
    const PatchGrid g1 = partition_patches(60, 60, 30);
    CHECK(g1.count() == 4);
    CHECK(g1.cols == 2);
    CHECK(g1.rows == 2);
    for (double v : g1.validity) CHECK(v == 1.0);

    const PatchGrid g2 = partition_patches(30, 30, 30);
    CHECK(g2.count() == 1);
    CHECK(g2.origin_x[0] == 0);
    CHECK(g2.origin_y[0] == 0);

    const PatchGrid g3 = partition_patches(29, 29, 30);
    CHECK(g3.count() == 0);

    const PatchGrid g4 = partition_patches(65, 60, 30);
    CHECK(g4.cols == 2);
    CHECK(g4.rows == 2);
}

TEST_CASE("mask validity scales with the in bounds fraction") {
    const PatchGrid grid = partition_patches(8, 4, 4);
    REQUIRE(grid.count() == 2);
    GrayImage mask(8, 4, 1.0);
    for (int y = 0; y < 4; ++y) {
        mask.at(0, y) = 0.0;
        mask.at(1, y) = 0.0;
    }
    const PatchGrid scaled = apply_mask_validity(grid, mask);
    CHECK(scaled.validity[0] == 0.5);
    CHECK(scaled.validity[1] == 1.0);
}

TEST_CASE("zero jitter samples the identity") {
    Rng rng(12);
    const Homography t = sample_homography(HomographyJitter{}, rng);
    for (int i = 0; i < 9; ++i) {
        CHECK(t.h[std::size_t(i)] == Homography::identity().h[std::size_t(i)]);
    }
}

TEST_CASE("jitter draws stay inside their bounds") {
    HomographyJitter jit;
    jit.max_translation = 2.5;
    Rng rng(13);
    for (int i = 0; i < 200; ++i) {
        const Homography t = sample_homography(jit, rng);
        CHECK(std::abs(t.h[2]) <= 2.5);
        CHECK(std::abs(t.h[5]) <= 2.5);
        CHECK(t.h[0] == 1.0); // translation only
        CHECK(t.h[6] == 0.0);
    }
    Rng a(14), b(14);
    const Homography ha = sample_homography(jit, a);
    const Homography hb = sample_homography(jit, b);
    CHECK(ha.h == hb.h);
}

TEST_CASE("homography file round trip preserves every digit") {
    TempDir tmp;
    Rng rng(15);
    const HomographyJitter jit{3.0, 0.2, 0.1, 1e-4, 20.0, 20.0};
    std::vector<TimedHomography> hs;
    for (int i = 0; i < 8; ++i) {
        hs.push_back(TimedHomography{std::uint64_t(i) * 12345,
                                     sample_homography(jit, rng)});
    }
    const auto path = tmp.path / "gt.txt";
    save_homographies(hs, path);
    const std::vector<TimedHomography> r = load_homographies(path);
    REQUIRE(r.size() == hs.size());
    for (std::size_t i = 0; i < hs.size(); ++i) {
        CHECK(r[i].t == hs[i].t);
        CHECK(r[i].h.h == hs[i].h.h);
    }

    testutil::spit(tmp.path / "bad.txt", "100,1,0\n");
    CHECK_THROWS_AS(load_homographies(tmp.path / "bad.txt"), IoError);
}

TEST_CASE("homography load sorts by timestamp") {
    TempDir tmp;
    std::vector<TimedHomography> hs{{2000, Homography::translation(2, 0)},
                                    {1000, Homography::translation(1, 0)}};
    // save keeps the given order; load restores time order
    save_homographies(hs, tmp.path / "h.txt");
    const auto r = load_homographies(tmp.path / "h.txt");
    REQUIRE(r.size() == 2);
    CHECK(r[0].t == 1000);
    CHECK(r[1].t == 2000);
}
