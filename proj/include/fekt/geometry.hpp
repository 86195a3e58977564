#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fekt/image.hpp"
#include "fekt/rng.hpp"

namespace fekt {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

/// Planar projective transform, row-major 3x3 with h[8] normalized to 1.
struct Homography {
    std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Homography identity() { return Homography{}; }
    static Homography translation(double tx, double ty);
    /// Validates and normalizes so the bottom-right entry is exactly 1.
    static Homography from_row_major(const std::array<double, 9>& m);
};

/// compose(a, b) applies b first, then a.
Homography compose(const Homography& a, const Homography& b);
Homography invert(const Homography& t);
Vec2 apply_point(const Homography& t, Vec2 p);

/// Warped image plus per-pixel validity. mask is 1 where the source position
/// falls inside the source image and 0 elsewhere; invalid pixels are 0.
struct WarpResult {
    GrayImage image;
    GrayImage mask;
};

/// Inverse warping: output pixel (x, y) samples the source at T^-1 (x, y)
/// with bilinear interpolation. Pixel centers sit at integer coordinates.
WarpResult warp_bilinear(const GrayImage& img, const Homography& t);

/// Transpose of warp_bilinear in its image argument for fixed t: every
/// in-bounds output pixel's gradient is scattered back onto the source
/// pixels it sampled, weighted by the same bilinear coefficients.
GrayImage warp_adjoint(const GrayImage& grad_out, const Homography& t, int src_width,
                       int src_height);

/// Non-overlapping patch tiling of an image, dropping partial patches at the
/// right and bottom borders. validity holds one value in [0, 1] per patch;
/// partition fills it with 1.
struct PatchGrid {
    int patch = 0;
    int cols = 0;
    int rows = 0;
    int image_width = 0;
    int image_height = 0;
    std::vector<int> origin_x;
    std::vector<int> origin_y;
    std::vector<double> validity;

    std::size_t count() const { return origin_x.size(); }
};

PatchGrid partition_patches(int width, int height, int patch);

/// Returns grid with each patch's validity multiplied by the fraction of
/// mask pixels equal to 1 inside the patch.
PatchGrid apply_mask_validity(const PatchGrid& grid, const GrayImage& mask);

/// Bounds for random homography sampling. Rotation is radians, scale is the
/// half-width of the uniform factor around 1, perspective bounds the two
/// projective entries, and translation is pixels. center_x/center_y anchor
/// rotation, scale and perspective.
struct HomographyJitter {
    double max_translation = 0.0;
    double max_rotation = 0.0;
    double max_scale = 0.0;
    double max_perspective = 0.0;
    double center_x = 0.0;
    double center_y = 0.0;
};

/// Uniform draws inside the jitter bounds, in the fixed order tx, ty, angle,
/// scale, two perspective entries. All bounds zero gives the identity.
Homography sample_homography(const HomographyJitter& jitter, Rng& rng);

/// One ground-truth entry: transform from the sequence origin to time t.
struct TimedHomography {
    std::uint64_t t = 0;
    Homography h;
};

/// Text form, one "t_us,h00,h01,h02,h10,h11,h12,h20,h21" line per entry
/// (h22 is fixed at 1). Entries are kept sorted by timestamp.
void save_homographies(const std::vector<TimedHomography>& hs,
                       const std::filesystem::path& path);
std::vector<TimedHomography> load_homographies(const std::filesystem::path& path);

} // namespace fekt
