#include "fekt/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "fekt/errors.hpp"

namespace fekt {

namespace {

constexpr double kDegenerateEps = 1e-12;

double det3(const std::array<double, 9>& m) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) -
           m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

std::array<double, 9> matmul(const std::array<double, 9>& a,
                             const std::array<double, 9>& b) {
    std::array<double, 9> r{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
            r[i * 3 + j] = s;
        }
    }
    return r;
}

} // namespace

Homography Homography::translation(double tx, double ty) {
    Homography t;
    t.h = {1, 0, tx, 0, 1, ty, 0, 0, 1};
    return t;
}

Homography Homography::from_row_major(const std::array<double, 9>& m) {
    if (std::abs(m[8]) <= kDegenerateEps) {
        throw ConfigError("homography cannot be normalized, bottom-right entry is 0");
    }
    Homography t;
    for (int i = 0; i < 8; ++i) t.h[i] = m[i] / m[8];
    t.h[8] = 1.0;
    if (std::abs(det3(t.h)) <= kDegenerateEps) {
        throw ConfigError("homography is singular");
    }
    return t;
}

Homography compose(const Homography& a, const Homography& b) {
    return Homography::from_row_major(matmul(a.h, b.h));
}

Homography invert(const Homography& t) {
    const auto& m = t.h;
    if (std::abs(det3(m)) <= kDegenerateEps) {
        throw ConfigError("homography is singular");
    }
    // Adjugate; the determinant scale cancels in the normalization.
    std::array<double, 9> adj = {
        m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
        m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
        m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3]};
    return Homography::from_row_major(adj);
}

Vec2 apply_point(const Homography& t, Vec2 p) {
    const auto& m = t.h;
    const double w = m[6] * p.x + m[7] * p.y + m[8];
    if (std::abs(w) <= kDegenerateEps) {
        throw ConfigError("point maps to infinity under homography");
    }
    return Vec2{(m[0] * p.x + m[1] * p.y + m[2]) / w,
                (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

namespace {

struct SourcePos {
    double sx = 0.0;
    double sy = 0.0;
    bool inside = false;
};

// Shared by warp_bilinear and warp_adjoint so both resolve the exact same
// source position for every output pixel.
SourcePos warp_source(const std::array<double, 9>& m, int x, int y, int w, int h) {
    const double div = m[6] * x + m[7] * y + m[8];
    if (std::abs(div) <= kDegenerateEps) return {};
    SourcePos p;
    p.sx = (m[0] * x + m[1] * y + m[2]) / div;
    p.sy = (m[3] * x + m[4] * y + m[5]) / div;
    p.inside = p.sx >= 0.0 && p.sx <= w - 1 && p.sy >= 0.0 && p.sy <= h - 1;
    return p;
}

} // namespace

WarpResult warp_bilinear(const GrayImage& img, const Homography& t) {
    if (img.width <= 0 || img.height <= 0) throw ConfigError("warp of empty image");
    const Homography inv = invert(t);
    const auto& m = inv.h;

    WarpResult r{GrayImage(img.width, img.height, 0.0),
                 GrayImage(img.width, img.height, 0.0)};
    const int w = img.width, h = img.height;

#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const SourcePos p = warp_source(m, x, y, w, h);
            if (!p.inside) continue;

            const int x0 = int(std::floor(p.sx));
            const int y0 = int(std::floor(p.sy));
            const int x1 = std::min(x0 + 1, w - 1);
            const int y1 = std::min(y0 + 1, h - 1);
            const double fx = p.sx - x0;
            const double fy = p.sy - y0;
            r.image.at(x, y) = img.at(x0, y0) * (1.0 - fx) * (1.0 - fy) +
                               img.at(x1, y0) * fx * (1.0 - fy) +
                               img.at(x0, y1) * (1.0 - fx) * fy +
                               img.at(x1, y1) * fx * fy;
            r.mask.at(x, y) = 1.0;
        }
    }
    return r;
}

GrayImage warp_adjoint(const GrayImage& grad_out, const Homography& t, int src_width,
                       int src_height) {
    if (src_width <= 0 || src_height <= 0) throw ConfigError("empty adjoint target");
    const Homography inv = invert(t);
    const auto& m = inv.h;

    GrayImage g(src_width, src_height, 0.0);
    for (int y = 0; y < grad_out.height; ++y) {
        for (int x = 0; x < grad_out.width; ++x) {
            const SourcePos p = warp_source(m, x, y, src_width, src_height);
            if (!p.inside) continue;
            const double go = grad_out.at(x, y);
            if (go == 0.0) continue;

            const int x0 = int(std::floor(p.sx));
            const int y0 = int(std::floor(p.sy));
            const int x1 = std::min(x0 + 1, src_width - 1);
            const int y1 = std::min(y0 + 1, src_height - 1);
            const double fx = p.sx - x0;
            const double fy = p.sy - y0;
            g.at(x0, y0) += go * (1.0 - fx) * (1.0 - fy);
            g.at(x1, y0) += go * fx * (1.0 - fy);
            g.at(x0, y1) += go * (1.0 - fx) * fy;
            g.at(x1, y1) += go * fx * fy;
        }
    }
    return g;
}

PatchGrid partition_patches(int width, int height, int patch) {
    if (patch < 1) throw ConfigError("patch size must be at least 1");
    if (width < 0 || height < 0) throw ConfigError("negative image size");
    PatchGrid g;
    g.patch = patch;
    g.cols = width / patch;
    g.rows = height / patch;
    g.image_width = width;
    g.image_height = height;
    const std::size_t n = std::size_t(g.cols) * std::size_t(g.rows);
    g.origin_x.reserve(n);
    g.origin_y.reserve(n);
    for (int py = 0; py < g.rows; ++py) {
        for (int px = 0; px < g.cols; ++px) {
            g.origin_x.push_back(px * patch);
            g.origin_y.push_back(py * patch);
        }
    }
    g.validity.assign(n, 1.0);
    return g;
}

PatchGrid apply_mask_validity(const PatchGrid& grid, const GrayImage& mask) {
    if (mask.width != grid.image_width || mask.height != grid.image_height) {
        throw ConfigError("mask shape does not match patch grid");
    }
    PatchGrid g = grid;
    const double inv_area = 1.0 / (double(grid.patch) * double(grid.patch));
    for (std::size_t i = 0; i < g.count(); ++i) {
        int valid = 0;
        for (int dy = 0; dy < grid.patch; ++dy) {
            for (int dx = 0; dx < grid.patch; ++dx) {
                if (mask.at(grid.origin_x[i] + dx, grid.origin_y[i] + dy) == 1.0) {
                    ++valid;
                }
            }
        }
        g.validity[i] *= double(valid) * inv_area;
    }
    return g;
}

Homography sample_homography(const HomographyJitter& jitter, Rng& rng) {
    const double tx = rng.uniform(-jitter.max_translation, jitter.max_translation);
    const double ty = rng.uniform(-jitter.max_translation, jitter.max_translation);
    const double angle = rng.uniform(-jitter.max_rotation, jitter.max_rotation);
    const double scale = rng.uniform(1.0 - jitter.max_scale, 1.0 + jitter.max_scale);
    const double px = rng.uniform(-jitter.max_perspective, jitter.max_perspective);
    const double py = rng.uniform(-jitter.max_perspective, jitter.max_perspective);

    const double c = std::cos(angle), s = std::sin(angle);
    const std::array<double, 9> rot = {c, -s, 0, s, c, 0, 0, 0, 1};
    const std::array<double, 9> scl = {scale, 0, 0, 0, scale, 0, 0, 0, 1};
    const std::array<double, 9> persp = {1, 0, 0, 0, 1, 0, px, py, 1};
    const std::array<double, 9> trans = {1, 0, tx, 0, 1, ty, 0, 0, 1};

    std::array<double, 9> m = matmul(trans, matmul(rot, matmul(scl, persp)));
    // Conjugate by the center translation so rotation, scale and perspective
    // pivot around (center_x, center_y) instead of the origin.
    const std::array<double, 9> to_center = {1, 0, jitter.center_x, 0, 1, jitter.center_y,
                                             0, 0, 1};
    const std::array<double, 9> from_center = {1, 0, -jitter.center_x,
                                               0, 1, -jitter.center_y,
                                               0, 0, 1};
    return Homography::from_row_major(matmul(to_center, matmul(m, from_center)));
}

void save_homographies(const std::vector<TimedHomography>& hs,
                       const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    char line[512];
    for (const TimedHomography& th : hs) {
        const auto& m = th.h.h;
        std::snprintf(line, sizeof(line),
                      "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      static_cast<unsigned long long>(th.t), m[0], m[1], m[2], m[3],
                      m[4], m[5], m[6], m[7]);
        out << line;
    }
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<TimedHomography> load_homographies(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<TimedHomography> hs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        unsigned long long t = 0;
        std::array<double, 9> m{};
        m[8] = 1.0;
        if (std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &t, &m[0],
                        &m[1], &m[2], &m[3], &m[4], &m[5], &m[6], &m[7]) != 9) {
            throw IoError("malformed homography line " + std::to_string(line_no) +
                          " in " + path.string());
        }
        hs.push_back(TimedHomography{t, Homography::from_row_major(m)});
    }
    std::stable_sort(hs.begin(), hs.end(),
                     [](const TimedHomography& a, const TimedHomography& b) {
                         return a.t < b.t;
                     });
    return hs;
}

} // namespace fekt
