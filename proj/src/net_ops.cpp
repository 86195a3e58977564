#include "fekt/net_ops.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "fekt/errors.hpp"

namespace fekt {

FeatureTensor FeatureTensor::from_image(const GrayImage& img) {
    FeatureTensor t(1, img.height, img.width);
    t.v = img.v;
    return t;
}

GrayImage FeatureTensor::channel_image(int c) const {
    if (c < 0 || c >= channels) throw ConfigError("channel index out of range");
    GrayImage img(width, height);
    const std::size_t plane = std::size_t(height) * width;
    std::copy(v.begin() + std::ptrdiff_t(c * plane),
              v.begin() + std::ptrdiff_t((c + 1) * plane), img.v.begin());
    return img;
}

ConvWeights ConvWeights::zeros(int out, int in, int k) {
    if (out < 1 || in < 1 || k < 1 || k % 2 == 0) {
        throw ConfigError("conv weights need positive channels and odd kernel size");
    }
    ConvWeights w;
    w.out_channels = out;
    w.in_channels = in;
    w.ksize = k;
    w.kernel.assign(std::size_t(out) * in * k * k, 0.0);
    w.bias.assign(std::size_t(out), 0.0);
    w.bn_scale.assign(std::size_t(out), 1.0);
    w.bn_shift.assign(std::size_t(out), 0.0);
    return w;
}

ConvWeights ConvWeights::identity(int channels, int k) {
    ConvWeights w = zeros(channels, channels, k);
    const int r = k / 2;
    for (int c = 0; c < channels; ++c) w.kval(c, c, r, r) = 1.0;
    return w;
}

namespace {

void check_conv(const FeatureTensor& x, const ConvWeights& w) {
    if (w.ksize < 1 || w.ksize % 2 == 0) throw ConfigError("kernel size must be odd");
    if (x.channels != w.in_channels) {
        throw ConfigError("conv input channel mismatch");
    }
    if (w.kernel.size() != std::size_t(w.out_channels) * w.in_channels * w.ksize * w.ksize ||
        w.bias.size() != std::size_t(w.out_channels)) {
        throw ConfigError("conv weight storage inconsistent with its shape");
    }
}

} // namespace

FeatureTensor conv2d(const FeatureTensor& x, const ConvWeights& w) {
    check_conv(x, w);
    FeatureTensor out(w.out_channels, x.height, x.width);
    const int r = w.ksize / 2;

#pragma omp parallel for collapse(2) schedule(static)
    for (int o = 0; o < w.out_channels; ++o) {
        for (int y = 0; y < x.height; ++y) {
            for (int xx = 0; xx < x.width; ++xx) {
                double s = 0.0;
                for (int i = 0; i < x.channels; ++i) {
                    for (int ky = 0; ky < w.ksize; ++ky) {
                        const int sy = y + ky - r;
                        if (sy < 0 || sy >= x.height) continue;
                        for (int kx = 0; kx < w.ksize; ++kx) {
                            const int sx = xx + kx - r;
                            if (sx < 0 || sx >= x.width) continue;
                            s += w.kval(o, i, ky, kx) * x.at(i, sy, sx);
                        }
                    }
                }
                out.at(o, y, xx) = s + w.bias[std::size_t(o)];
            }
        }
    }
    return out;
}

FeatureTensor depthwise_conv(const FeatureTensor& x, const FeatureTensor& kernels) {
    if (kernels.channels != x.channels) {
        throw ConfigError("depthwise kernel channel mismatch");
    }
    if (kernels.height != kernels.width || kernels.height % 2 == 0) {
        throw ConfigError("depthwise kernels must be square with odd size");
    }
    const int k = kernels.height;
    const int r = k / 2;
    FeatureTensor out(x.channels, x.height, x.width);

#pragma omp parallel for collapse(2) schedule(static)
    for (int c = 0; c < x.channels; ++c) {
        for (int y = 0; y < x.height; ++y) {
            for (int xx = 0; xx < x.width; ++xx) {
                double s = 0.0;
                for (int ky = 0; ky < k; ++ky) {
                    const int sy = y + ky - r;
                    if (sy < 0 || sy >= x.height) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int sx = xx + kx - r;
                        if (sx < 0 || sx >= x.width) continue;
                        s += kernels.at(c, ky, kx) * x.at(c, sy, sx);
                    }
                }
                out.at(c, y, xx) = s;
            }
        }
    }
    return out;
}

FeatureTensor adaptive_avg_pool(const FeatureTensor& x, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ConfigError("pool output size must be positive");
    if (out_h > x.height || out_w > x.width) {
        throw ConfigError("pool output larger than input");
    }
    FeatureTensor out(x.channels, out_h, out_w);
    for (int c = 0; c < x.channels; ++c) {
        for (int oy = 0; oy < out_h; ++oy) {
            const int y0 = oy * x.height / out_h;
            const int y1 = (oy + 1) * x.height / out_h;
            for (int ox = 0; ox < out_w; ++ox) {
                const int x0 = ox * x.width / out_w;
                const int x1 = (ox + 1) * x.width / out_w;
                double s = 0.0;
                for (int y = y0; y < y1; ++y) {
                    for (int xx = x0; xx < x1; ++xx) s += x.at(c, y, xx);
                }
                out.at(c, oy, ox) = s / (double(y1 - y0) * double(x1 - x0));
            }
        }
    }
    return out;
}

FeatureTensor channel_affine(const FeatureTensor& x, std::span<const double> scale,
                             std::span<const double> shift) {
    if (scale.size() != std::size_t(x.channels) || shift.size() != std::size_t(x.channels)) {
        throw ConfigError("affine parameter count does not match channels");
    }
    FeatureTensor out = x;
    const std::size_t plane = std::size_t(x.height) * x.width;
    for (int c = 0; c < x.channels; ++c) {
        const double a = scale[std::size_t(c)];
        const double b = shift[std::size_t(c)];
        double* p = out.v.data() + std::size_t(c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] = a * p[i] + b;
    }
    return out;
}

FeatureTensor relu(FeatureTensor x) {
    for (double& d : x.v) d = d > 0.0 ? d : 0.0;
    return x;
}

FeatureTensor dynamic_filter_enhance(const FeatureTensor& f_primary,
                                     const FeatureTensor& f_other,
                                     const DynamicFilterWeights& w) {
    if (f_primary.height != f_other.height || f_primary.width != f_other.width) {
        throw ConfigError("modal features must share spatial dimensions");
    }
    if (w.filter_size < 1 || w.filter_size % 2 == 0) {
        throw ConfigError("dynamic filter size must be odd");
    }
    if (w.mix.ksize != 1) throw ConfigError("mix projection must be 1x1");

    const FeatureTensor f = relu(channel_affine(conv2d(f_primary, w.feature),
                                                w.feature.bn_scale, w.feature.bn_shift));
    const FeatureTensor pooled = adaptive_avg_pool(f_other, w.filter_size, w.filter_size);
    const FeatureTensor k = conv2d(pooled, w.filter);
    if (k.channels != f.channels) {
        throw ConfigError("predicted filter channel count does not match features");
    }
    FeatureTensor combined = depthwise_conv(f, k);
    for (std::size_t i = 0; i < combined.v.size(); ++i) combined.v[i] += f.v[i];
    return conv2d(combined, w.mix);
}

double bilinear_sample(const FeatureTensor& x, int c, double px, double py) {
    const double fx0 = std::floor(px);
    const double fy0 = std::floor(py);
    const int x0 = int(fx0);
    const int y0 = int(fy0);
    const double fx = px - fx0;
    const double fy = py - fy0;
    double s = 0.0;
    for (int dy = 0; dy < 2; ++dy) {
        const int yi = y0 + dy;
        if (yi < 0 || yi >= x.height) continue;
        const double wy = dy ? fy : 1.0 - fy;
        for (int dx = 0; dx < 2; ++dx) {
            const int xi = x0 + dx;
            if (xi < 0 || xi >= x.width) continue;
            const double wx = dx ? fx : 1.0 - fx;
            s += wy * wx * x.at(c, yi, xi);
        }
    }
    return s;
}

FeatureTensor deform_conv(const FeatureTensor& x, const ConvWeights& w,
                          const OffsetField& off) {
    check_conv(x, w);
    if (off.taps != w.ksize * w.ksize) {
        throw ConfigError("offset tap count does not match kernel size");
    }
    if (off.height != x.height || off.width != x.width) {
        throw ConfigError("offset field spatial dimensions do not match input");
    }
    FeatureTensor out(w.out_channels, x.height, x.width);
    const int r = w.ksize / 2;

#pragma omp parallel for collapse(2) schedule(static)
    for (int o = 0; o < w.out_channels; ++o) {
        for (int y = 0; y < x.height; ++y) {
            for (int xx = 0; xx < x.width; ++xx) {
                double s = 0.0;
                for (int i = 0; i < x.channels; ++i) {
                    for (int ky = 0; ky < w.ksize; ++ky) {
                        for (int kx = 0; kx < w.ksize; ++kx) {
                            const int tap = ky * w.ksize + kx;
                            const double px = xx + kx - r + off.dx(tap, y, xx);
                            const double py = y + ky - r + off.dy(tap, y, xx);
                            s += w.kval(o, i, ky, kx) * bilinear_sample(x, i, px, py);
                        }
                    }
                }
                out.at(o, y, xx) = s + w.bias[std::size_t(o)];
            }
        }
    }
    return out;
}

std::vector<FeatureTensor> mah_propagate(const FeatureTensor& f_end,
                                         const MahWeights& w,
                                         std::span<const OffsetField> offsets) {
    if (w.steps.size() != offsets.size()) {
        throw ConfigError("one step weight set per offset field is required");
    }
    const std::size_t n = offsets.size() + 1;
    std::vector<FeatureTensor> down;
    down.reserve(n);
    down.push_back(relu(channel_affine(conv2d(f_end, w.head), w.head.bn_scale,
                                       w.head.bn_shift)));
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        const ConvWeights& sw = w.steps[i];
        down.push_back(relu(channel_affine(deform_conv(down.back(), sw, offsets[i]),
                                           sw.bn_scale, sw.bn_shift)));
    }
    std::vector<FeatureTensor> out(down.rbegin(), down.rend());
    return out;
}

GrayImage sigmoid_head(const FeatureTensor& f, std::span<const ConvWeights> stack) {
    if (stack.empty()) throw ConfigError("sigmoid head needs at least one layer");
    FeatureTensor cur = f;
    for (std::size_t i = 0; i + 1 < stack.size(); ++i) {
        cur = relu(channel_affine(conv2d(cur, stack[i]), stack[i].bn_scale,
                                  stack[i].bn_shift));
    }
    cur = conv2d(cur, stack.back());
    if (cur.channels != 1) {
        throw ConfigError("head must reduce to a single channel");
    }
    GrayImage out(cur.width, cur.height);
    for (std::size_t i = 0; i < out.v.size(); ++i) {
        out.v[i] = 1.0 / (1.0 + std::exp(-cur.v[i]));
    }
    return out;
}

namespace {

void append_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
    return v;
}

constexpr char kWeightsMagic[5] = {'F', 'E', 'W', 'T', 'S'};

} // namespace

void save_weights(const std::vector<NamedTensor>& tensors,
                  const std::filesystem::path& path) {
    std::string buf;
    buf.append(kWeightsMagic, sizeof(kWeightsMagic));
    for (const NamedTensor& t : tensors) {
        std::size_t count = 1;
        for (std::uint32_t d : t.dims) count *= d;
        if (count != t.data.size()) {
            throw ConfigError("tensor payload does not match its dims: " + t.name);
        }
        append_u32(buf, std::uint32_t(t.name.size()));
        buf.append(t.name);
        append_u32(buf, std::uint32_t(t.dims.size()));
        for (std::uint32_t d : t.dims) append_u32(buf, d);
        for (float f : t.data) {
            std::uint32_t bits = 0;
            std::memcpy(&bits, &f, 4);
            append_u32(buf, bits);
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<NamedTensor> load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 5 || std::memcmp(buf.data(), kWeightsMagic, 5) != 0) {
        throw IoError("not a weight bundle: " + path.string());
    }

    const auto* bytes = reinterpret_cast<const unsigned char*>(buf.data());
    std::size_t pos = 5;
    const std::size_t end = buf.size();
    std::vector<NamedTensor> tensors;
    auto need = [&](std::size_t n) {
        if (pos + n > end) throw IoError("truncated weight bundle: " + path.string());
    };
    while (pos < end) {
        need(4);
        const std::uint32_t name_len = read_u32(bytes + pos);
        pos += 4;
        need(name_len);
        NamedTensor t;
        t.name.assign(buf, pos, name_len);
        pos += name_len;
        need(4);
        const std::uint32_t rank = read_u32(bytes + pos);
        pos += 4;
        need(std::size_t(rank) * 4);
        std::size_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            t.dims.push_back(read_u32(bytes + pos));
            pos += 4;
            count *= t.dims.back();
        }
        need(count * 4);
        t.data.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::uint32_t bits = read_u32(bytes + pos);
            pos += 4;
            std::memcpy(&t.data[i], &bits, 4);
        }
        tensors.push_back(std::move(t));
    }
    return tensors;
}

} // namespace fekt
