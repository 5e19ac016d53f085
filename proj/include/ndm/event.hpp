#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ndm/errors.hpp"

namespace ndm {

struct Event {
    std::uint64_t t = 0;  // microseconds
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::uint8_t polarity = 0;  // 0 = OFF, 1 = ON

    friend bool operator==(const Event&, const Event&) = default;
};

struct EventStream {
    std::uint16_t width = 0;
    std::uint16_t height = 0;
    std::vector<Event> events;  // non-decreasing t, tie order stable

    friend bool operator==(const EventStream&, const EventStream&) = default;
};

// Dense binary spike volume, logical index (c, y, x, t), channels = polarity.
// Storage is time-major: frame t is contiguous in (c, y, x) order, so the
// flatten index of a cell within a frame is (c * height + y) * width + x.
struct SpikeTensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    int timesteps = 0;
    std::vector<std::uint8_t> values;

    std::size_t frame_size() const {
        return std::size_t(channels) * height * width;
    }
    std::size_t index(int c, int y, int x, int t) const {
        return (std::size_t(t) * channels + c) * height * width +
               std::size_t(y) * width + x;
    }
    std::uint8_t at(int c, int y, int x, int t) const { return values[index(c, y, x, t)]; }
    std::uint8_t& at(int c, int y, int x, int t) { return values[index(c, y, x, t)]; }
};

namespace detail {

inline void check_event_bounds(const Event& e, std::uint16_t width,
                               std::uint16_t height, const std::string& where) {
    if (e.x >= width || e.y >= height)
        throw DataError(where + ": event (" + std::to_string(e.x) + "," +
                        std::to_string(e.y) + ") outside " + std::to_string(width) +
                        "x" + std::to_string(height));
}

inline void sort_events_stable(std::vector<Event>& events) {
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
}

}  // namespace detail

// CSV lines `t,x,y,p` with an optional trailing `origin` column (ignored).
// Geometry comes from the caller or a `# <width> <height>` comment on the
// first line. A non-numeric first field on the first data line is treated as
// a header and skipped.
inline EventStream parse_events_csv(std::istream& in,
                                    std::optional<std::pair<int, int>> geometry = {}) {
    EventStream stream;
    std::string line;
    std::size_t line_no = 0;
    bool saw_data = false;

    auto fail = [&](const std::string& what) {
        throw ParseError("csv line " + std::to_string(line_no) + ": " + what);
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line_no == 1 && !geometry) {
                std::istringstream hs(line.substr(1));
                int w = 0, h = 0;
                if (hs >> w >> h && w > 0 && h > 0) geometry = {{w, h}};
            }
            continue;
        }

        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            std::size_t comma = line.find(',', start);
            fields.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (!saw_data) {
            // header detection: non-numeric first field
            const std::string& f0 = fields[0];
            std::size_t i = 0;
            while (i < f0.size() && std::isspace(static_cast<unsigned char>(f0[i]))) ++i;
            if (i == f0.size() || !std::isdigit(static_cast<unsigned char>(f0[i]))) {
                saw_data = true;
                continue;
            }
        }
        saw_data = true;
        if (fields.size() != 4 && fields.size() != 5)
            fail("expected 4 or 5 fields, got " + std::to_string(fields.size()));

        auto to_u64 = [&](const std::string& s, const char* name) -> std::uint64_t {
            std::size_t pos = 0;
            unsigned long long v = 0;
            try {
                v = std::stoull(s, &pos);
            } catch (const std::exception&) {
                fail(std::string("non-integer ") + name + " field '" + s + "'");
            }
            while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
            if (pos != s.size()) fail(std::string("non-integer ") + name + " field '" + s + "'");
            return v;
        };

        Event e;
        e.t = to_u64(fields[0], "t");
        std::uint64_t x = to_u64(fields[1], "x");
        std::uint64_t y = to_u64(fields[2], "y");
        std::uint64_t p = to_u64(fields[3], "p");
        if (p > 1) fail("polarity must be 0 or 1, got " + std::to_string(p));
        if (x > 0xffff || y > 0xffff) fail("coordinate out of 16-bit range");
        e.x = std::uint16_t(x);
        e.y = std::uint16_t(y);
        e.polarity = std::uint8_t(p);
        stream.events.push_back(e);
    }

    if (!geometry) throw ParseError("csv: no geometry given and no '# width height' header");
    stream.width = std::uint16_t(geometry->first);
    stream.height = std::uint16_t(geometry->second);
    for (const Event& e : stream.events)
        detail::check_event_bounds(e, stream.width, stream.height, "csv");
    detail::sort_events_stable(stream.events);
    return stream;
}

// NDME binary format, little-endian:
//   magic 'NDME', version u32, width u16, height u16, count u64,
//   then count records of (t u64, x u16, y u16, p u8), 13 bytes each.
inline constexpr std::uint32_t kEventFormatVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(char((std::uint64_t(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& off, const char* what) {
    if (off + sizeof(T) > in.size())
        throw FormatError(std::string("ndme: truncated ") + what + " at byte offset " +
                          std::to_string(off));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= std::uint64_t(std::uint8_t(in[off + i])) << (8 * i);
    off += sizeof(T);
    return T(v);
}

}  // namespace detail

inline std::string write_events_binary(const EventStream& stream) {
    std::string out;
    out.reserve(20 + stream.events.size() * 13);
    out += "NDME";
    detail::put_le(out, kEventFormatVersion);
    detail::put_le(out, stream.width);
    detail::put_le(out, stream.height);
    detail::put_le(out, std::uint64_t(stream.events.size()));
    for (const Event& e : stream.events) {
        detail::put_le(out, e.t);
        detail::put_le(out, e.x);
        detail::put_le(out, e.y);
        detail::put_le(out, e.polarity);
    }
    return out;
}

inline EventStream parse_events_binary(const std::string& bytes) {
    if (bytes.size() < 4 || bytes.compare(0, 4, "NDME") != 0)
        throw FormatError("ndme: bad magic");
    std::size_t off = 4;
    const auto version = detail::get_le<std::uint32_t>(bytes, off, "version");
    if (version != kEventFormatVersion)
        throw FormatError("ndme: unsupported version " + std::to_string(version));
    EventStream stream;
    stream.width = detail::get_le<std::uint16_t>(bytes, off, "width");
    stream.height = detail::get_le<std::uint16_t>(bytes, off, "height");
    const auto count = detail::get_le<std::uint64_t>(bytes, off, "count");
    stream.events.reserve(count);
    std::uint64_t prev_t = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
        Event e;
        e.t = detail::get_le<std::uint64_t>(bytes, off, "record");
        e.x = detail::get_le<std::uint16_t>(bytes, off, "record");
        e.y = detail::get_le<std::uint16_t>(bytes, off, "record");
        e.polarity = detail::get_le<std::uint8_t>(bytes, off, "record");
        if (e.polarity > 1) throw FormatError("ndme: polarity out of range");
        detail::check_event_bounds(e, stream.width, stream.height, "ndme");
        if (e.t < prev_t) throw FormatError("ndme: events not sorted by timestamp");
        prev_t = e.t;
        stream.events.push_back(e);
    }
    return stream;
}

// Center crop to side x side; floor offsets, survivors re-indexed, order kept.
inline EventStream crop_center(const EventStream& stream, int side) {
    if (side > stream.width || side > stream.height)
        throw DomainError("crop_center: side " + std::to_string(side) + " exceeds " +
                          std::to_string(stream.width) + "x" + std::to_string(stream.height));
    const int ox = (stream.width - side) / 2;
    const int oy = (stream.height - side) / 2;
    EventStream out;
    out.width = std::uint16_t(side);
    out.height = std::uint16_t(side);
    for (const Event& e : stream.events) {
        if (e.x < ox || e.x >= ox + side || e.y < oy || e.y >= oy + side) continue;
        Event r = e;
        r.x = std::uint16_t(e.x - ox);
        r.y = std::uint16_t(e.y - oy);
        out.events.push_back(r);
    }
    return out;
}

// Quantize timestamps into T = floor(window/bin) bins over a half-open window;
// multiple events per (polarity, pixel, bin) clamp to a single spike.
inline SpikeTensor bin_to_spike_tensor(const EventStream& stream, double sample_window_s,
                                       double bin_width_s) {
    if (!(sample_window_s > 0) || !(bin_width_s > 0) || bin_width_s > sample_window_s)
        throw DomainError("bin_to_spike_tensor: require 0 < bin_width <= sample_window");
    const std::uint64_t window_us = std::uint64_t(std::llround(sample_window_s * 1e6));
    const std::uint64_t bin_us = std::uint64_t(std::llround(bin_width_s * 1e6));
    if (bin_us == 0) throw DomainError("bin_to_spike_tensor: bin width below 1 microsecond");
    const std::uint64_t T = window_us / bin_us;

    SpikeTensor tensor;
    tensor.channels = 2;
    tensor.height = stream.height;
    tensor.width = stream.width;
    tensor.timesteps = int(T);
    tensor.values.assign(tensor.frame_size() * T, 0);
    for (const Event& e : stream.events) {
        const std::uint64_t bin = e.t / bin_us;
        if (bin >= T) continue;
        tensor.at(e.polarity, e.y, e.x, int(bin)) = 1;
    }
    return tensor;
}

}  // namespace ndm
