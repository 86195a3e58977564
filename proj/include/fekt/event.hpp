#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fekt {

/// A single polarity event. t is microseconds, p is -1 or +1.
struct Event {
    std::uint64_t t = 0;
    int x = 0;
    int y = 0;
    int p = 1;
};

/// Events of one time interval over a fixed sensor size. Events are kept
/// sorted by timestamp (ties keep insertion order) and every event lies in
/// [t_min, t_max] and inside the sensor bounds.
struct EventSlice {
    std::vector<Event> events;
    std::uint64_t t_min = 0;
    std::uint64_t t_max = 0;
    int width = 0;
    int height = 0;

    /// Validates bounds, stable-sorts by timestamp and assembles a slice.
    static EventSlice make(std::vector<Event> events, std::uint64_t t_min,
                           std::uint64_t t_max, int width, int height);
};

/// Returns the events of `s` with t in [t0, t1), rebased onto that interval.
/// When `closed_end` is set the interval is [t0, t1].
EventSlice cut_slice(const EventSlice& s, std::uint64_t t0, std::uint64_t t1,
                     bool closed_end = false);

/// Adds uniform background noise: rate is expected events per pixel per
/// second over the slice interval, each with a fair random polarity.
/// A rate of 0 returns the input unchanged.
EventSlice inject_noise(const EventSlice& s, double rate, std::uint64_t seed);

/// Text form, one "t_us,x,y,p" line per event.
void save_events_text(const EventSlice& s, const std::filesystem::path& path);
EventSlice load_events_text(const std::filesystem::path& path);

/// Binary form: 8-byte magic "FEEVT\0\0\0", u16 width, u16 height, then one
/// packed little-endian record per event (u64 t_us, u16 x, u16 y, i8 p).
/// The interval is not stored; loading rebounds it to the first and last
/// event timestamps.
void save_events_binary(const EventSlice& s, const std::filesystem::path& path);
EventSlice load_events_binary(const std::filesystem::path& path);

} // namespace fekt
