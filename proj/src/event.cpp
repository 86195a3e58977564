#include "fekt/event.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include "fekt/errors.hpp"
#include "fekt/rng.hpp"

namespace fekt {

namespace {

constexpr char kEventMagic[8] = {'F', 'E', 'E', 'V', 'T', '\0', '\0', '\0'};

void append_le(std::string& buf, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint64_t read_le(const unsigned char* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return v;
}

} // namespace

EventSlice EventSlice::make(std::vector<Event> events, std::uint64_t t_min,
                            std::uint64_t t_max, int width, int height) {
    if (t_max < t_min) throw ConfigError("event slice interval is reversed");
    if (width < 0 || height < 0) throw ConfigError("negative sensor size");
    for (const Event& e : events) {
        if (e.t < t_min || e.t > t_max) {
            throw ConfigError("event timestamp outside slice interval");
        }
        if (e.x < 0 || e.x >= width || e.y < 0 || e.y >= height) {
            throw ConfigError("event coordinates outside sensor bounds");
        }
        if (e.p != -1 && e.p != 1) throw ConfigError("event polarity must be -1 or +1");
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    EventSlice s;
    s.events = std::move(events);
    s.t_min = t_min;
    s.t_max = t_max;
    s.width = width;
    s.height = height;
    return s;
}

EventSlice cut_slice(const EventSlice& s, std::uint64_t t0, std::uint64_t t1,
                     bool closed_end) {
    if (t1 < t0) throw ConfigError("cut interval is reversed");
    std::vector<Event> kept;
    for (const Event& e : s.events) {
        if (e.t < t0) continue;
        if (e.t > t1 || (e.t == t1 && !closed_end)) break;
        kept.push_back(e);
    }
    return EventSlice::make(std::move(kept), t0, t1, s.width, s.height);
}

EventSlice inject_noise(const EventSlice& s, double rate, std::uint64_t seed) {
    if (rate < 0.0) throw ConfigError("noise rate must be non-negative");
    if (rate == 0.0 || s.width == 0 || s.height == 0) return s;

    const double duration_s = double(s.t_max - s.t_min) * 1e-6;
    const double expected = rate * double(s.width) * double(s.height) * duration_s;
    const auto count = std::uint64_t(std::llround(expected));

    Rng rng(seed);
    std::vector<Event> all = s.events;
    all.reserve(all.size() + count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Event e;
        e.t = s.t_min + rng.below(s.t_max - s.t_min + 1);
        e.x = int(rng.below(std::uint64_t(s.width)));
        e.y = int(rng.below(std::uint64_t(s.height)));
        e.p = rng.coin_sign();
        all.push_back(e);
    }
    return EventSlice::make(std::move(all), s.t_min, s.t_max, s.width, s.height);
}

void save_events_text(const EventSlice& s, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const Event& e : s.events) {
        out << e.t << ',' << e.x << ',' << e.y << ',' << e.p << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

EventSlice load_events_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());

    std::vector<Event> events;
    int max_x = -1, max_y = -1;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        unsigned long long t = 0;
        int x = 0, y = 0, p = 0;
        if (std::sscanf(line.c_str(), "%llu,%d,%d,%d", &t, &x, &y, &p) != 4) {
            throw IoError("malformed event line " + std::to_string(line_no) + " in " +
                          path.string());
        }
        events.push_back(Event{t, x, y, p});
        max_x = std::max(max_x, x);
        max_y = std::max(max_y, y);
    }
    // The text form carries no header, so sensor size and interval are
    // recovered from the data itself.
    const std::uint64_t lo = events.empty() ? 0 : events.front().t;
    std::uint64_t hi = lo;
    for (const Event& e : events) hi = std::max(hi, e.t);
    std::uint64_t lo2 = hi;
    for (const Event& e : events) lo2 = std::min(lo2, e.t);
    return EventSlice::make(std::move(events), lo2, hi, max_x + 1, max_y + 1);
}

void save_events_binary(const EventSlice& s, const std::filesystem::path& path) {
    if (s.width > 0xffff || s.height > 0xffff) {
        throw IoError("sensor size exceeds binary event format range");
    }
    std::string buf;
    buf.reserve(12 + s.events.size() * 13);
    buf.append(kEventMagic, sizeof(kEventMagic));
    append_le(buf, std::uint64_t(s.width), 2);
    append_le(buf, std::uint64_t(s.height), 2);
    for (const Event& e : s.events) {
        append_le(buf, e.t, 8);
        append_le(buf, std::uint64_t(e.x), 2);
        append_le(buf, std::uint64_t(e.y), 2);
        buf.push_back(char(std::int8_t(e.p)));
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

EventSlice load_events_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 12 || std::memcmp(buf.data(), kEventMagic, 8) != 0) {
        throw IoError("not an event binary: " + path.string());
    }
    const auto* bytes = reinterpret_cast<const unsigned char*>(buf.data());
    const int width = int(read_le(bytes + 8, 2));
    const int height = int(read_le(bytes + 10, 2));

    const std::size_t payload = buf.size() - 12;
    if (payload % 13 != 0) throw IoError("truncated event binary: " + path.string());
    const std::size_t n = payload / 13;

    std::vector<Event> events(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec = bytes + 12 + i * 13;
        events[i].t = read_le(rec, 8);
        events[i].x = int(read_le(rec + 8, 2));
        events[i].y = int(read_le(rec + 10, 2));
        events[i].p = int(std::int8_t(rec[12]));
    }

    std::uint64_t lo = 0, hi = 0;
    if (!events.empty()) {
        lo = hi = events.front().t;
        for (const Event& e : events) {
            lo = std::min(lo, e.t);
            hi = std::max(hi, e.t);
        }
    }
    return EventSlice::make(std::move(events), lo, hi, width, height);
}

} // namespace fekt
