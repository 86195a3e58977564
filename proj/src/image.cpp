#include "fekt/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "fekt/errors.hpp"

namespace fekt {

namespace {

// Skips whitespace and '#' comment lines between PGM header tokens.
void skip_pgm_separators(std::istream& in) {
    for (;;) {
        const int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (c != EOF && std::isspace(static_cast<unsigned char>(c))) {
            in.get();
        } else {
            return;
        }
    }
}

int read_pgm_int(std::istream& in, const std::filesystem::path& path) {
    skip_pgm_separators(in);
    int value = 0;
    if (!(in >> value)) {
        throw IoError("malformed PGM header in " + path.string());
    }
    return value;
}

} // namespace

GrayImage load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());

    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5') {
        throw IoError("not a binary PGM: " + path.string());
    }

    const int w = read_pgm_int(in, path);
    const int h = read_pgm_int(in, path);
    const int maxval = read_pgm_int(in, path);
    if (w <= 0 || h <= 0) throw IoError("bad PGM dimensions in " + path.string());
    if (maxval <= 0 || maxval > 255) {
        throw IoError("unsupported PGM maxval in " + path.string());
    }
    in.get(); // single separator byte before the raster

    std::vector<unsigned char> raw(std::size_t(w) * h);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (std::size_t(in.gcount()) != raw.size()) {
        throw IoError("truncated PGM raster in " + path.string());
    }

    GrayImage img(w, h);
    const double scale = 1.0 / maxval;
    for (std::size_t i = 0; i < raw.size(); ++i) img.v[i] = raw[i] * scale;
    return img;
}

void save_pgm(const GrayImage& img, const std::filesystem::path& path) {
    if (img.width <= 0 || img.height <= 0) {
        throw IoError("refusing to write empty image to " + path.string());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");

    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double c = std::clamp(img.v[i], 0.0, 1.0);
        raw[i] = static_cast<unsigned char>(std::lround(c * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

} // namespace fekt
