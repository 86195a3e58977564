#include "fekt/heatmap.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "fekt/errors.hpp"

namespace fekt {

namespace {

constexpr char kHeatmapMagic[4] = {'F', 'E', 'H', 'M'};

void append_le(std::string& buf, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint64_t read_le(const unsigned char* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return v;
}

} // namespace

std::vector<std::uint64_t> heatmap_timestamps(std::uint64_t t0, std::uint64_t t1,
                                              int n) {
    if (n < 1) throw ConfigError("heatmap count must be at least 1");
    if (t1 <= t0) throw ConfigError("heatmap interval is degenerate");
    std::vector<std::uint64_t> ts(static_cast<std::size_t>(n));
    const double span = double(t1 - t0);
    for (int i = 0; i < n; ++i) {
        const auto back = std::uint64_t(std::llround(double(n - 1 - i) * span / n));
        ts[std::size_t(i)] = t1 - back;
    }
    return ts;
}

void save_heatmaps(const HeatmapSeq& seq, const std::filesystem::path& path) {
    if (seq.maps.empty()) throw ConfigError("refusing to write an empty heatmap stack");
    if (seq.t1 <= seq.t0) throw ConfigError("heatmap interval is degenerate");
    const int w = seq.maps.front().width;
    const int h = seq.maps.front().height;
    for (const GrayImage& m : seq.maps) {
        if (m.width != w || m.height != h) {
            throw ConfigError("heatmap stack has mixed shapes");
        }
    }

    std::string buf;
    buf.reserve(32 + seq.maps.size() * std::size_t(w) * h * 4);
    buf.append(kHeatmapMagic, sizeof(kHeatmapMagic));
    append_le(buf, std::uint64_t(w), 4);
    append_le(buf, std::uint64_t(h), 4);
    append_le(buf, std::uint64_t(seq.maps.size()), 4);
    append_le(buf, seq.t0, 8);
    append_le(buf, seq.t1 - seq.t0, 8);
    for (const GrayImage& m : seq.maps) {
        for (double d : m.v) {
            const float f = float(d);
            std::uint32_t bits = 0;
            std::memcpy(&bits, &f, 4);
            append_le(buf, bits, 4);
        }
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

HeatmapSeq load_heatmaps(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 32 || std::memcmp(buf.data(), kHeatmapMagic, 4) != 0) {
        throw IoError("not a heatmap file: " + path.string());
    }
    const auto* bytes = reinterpret_cast<const unsigned char*>(buf.data());
    const auto w = read_le(bytes + 4, 4);
    const auto h = read_le(bytes + 8, 4);
    const auto n = read_le(bytes + 12, 4);
    const std::uint64_t t0 = read_le(bytes + 16, 8);
    const std::uint64_t interval = read_le(bytes + 24, 8);
    if (w == 0 || h == 0 || n == 0 || interval == 0) {
        throw IoError("degenerate heatmap header in " + path.string());
    }
    const std::size_t expect = 32 + std::size_t(n) * h * w * 4;
    if (buf.size() != expect) throw IoError("truncated heatmap file: " + path.string());

    HeatmapSeq seq;
    seq.t0 = t0;
    seq.t1 = t0 + interval;
    seq.maps.assign(std::size_t(n), GrayImage(int(w), int(h)));
    const unsigned char* cur = bytes + 32;
    for (std::size_t i = 0; i < n; ++i) {
        for (double& d : seq.maps[i].v) {
            const auto bits = std::uint32_t(read_le(cur, 4));
            float f = 0.0f;
            std::memcpy(&f, &bits, 4);
            if (!(f >= 0.0f && f <= 1.0f)) {
                throw IoError("heatmap value outside [0,1] in " + path.string());
            }
            d = double(f);
            cur += 4;
        }
    }
    return seq;
}

} // namespace fekt
