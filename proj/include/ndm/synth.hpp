#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "ndm/errors.hpp"
#include "ndm/event.hpp"

namespace ndm {

enum class NoiseRegime { bright, moderate, dark };

inline const char* to_string(NoiseRegime r) {
    switch (r) {
        case NoiseRegime::bright: return "bright";
        case NoiseRegime::moderate: return "moderate";
        case NoiseRegime::dark: return "dark";
    }
    return "?";
}

inline NoiseRegime noise_regime_from_string(const std::string& s) {
    if (s == "bright") return NoiseRegime::bright;
    if (s == "moderate") return NoiseRegime::moderate;
    if (s == "dark") return NoiseRegime::dark;
    throw ConfigError("unknown noise regime '" + s + "'");
}

// Background event rate per pixel per second. Event sensors get noisier as
// the scene darkens.
inline double noise_rate_per_pixel(NoiseRegime r) {
    switch (r) {
        case NoiseRegime::bright: return 0.05;
        case NoiseRegime::moderate: return 0.25;
        case NoiseRegime::dark: return 1.0;
    }
    return 0.0;
}

struct SynthConfig {
    int resolution = 72;       // square sensor
    double duration = 2.0;     // seconds
    int class_count = 13;
    NoiseRegime noise_regime = NoiseRegime::moderate;
    double signal_event_rate = 5000.0;  // events/second
    std::uint64_t seed = 0;
};

namespace detail {

// Hand-rolled samplers so generated streams are bit-identical across
// standard library implementations.
struct SynthRng {
    std::mt19937_64 eng;
    explicit SynthRng(std::uint64_t seed) : eng(seed) {}

    double uniform() { return double(eng() >> 11) * 0x1.0p-53; }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    std::uint64_t poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean < 50.0) {
            const double limit = std::exp(-mean);
            std::uint64_t k = 0;
            double p = uniform();
            while (p > limit) {
                ++k;
                p *= uniform();
            }
            return k;
        }
        const double draw = mean + std::sqrt(mean) * normal();
        return draw <= 0.0 ? 0 : std::uint64_t(std::llround(draw));
    }
};

}  // namespace detail

// Deterministic moving-pattern generator: class c traces a bar that sweeps
// out from the image center along direction 2*pi*c/13, oscillating
// (1 + c mod 3) times, with polarity tied to the motion direction. Uniform
// background noise on top, rate set by the lighting regime.
inline EventStream synth_generate(int class_id, const SynthConfig& cfg) {
    if (class_id < 0 || class_id >= cfg.class_count)
        throw DomainError("synth_generate: class_id " + std::to_string(class_id) +
                          " out of range [0," + std::to_string(cfg.class_count) + ")");
    if (cfg.resolution <= 0 || cfg.duration < 0)
        throw DomainError("synth_generate: bad resolution/duration");

    detail::SynthRng rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * std::uint64_t(class_id + 1)));

    const double res = cfg.resolution;
    const double cx = res / 2.0;
    const double cy = res / 2.0;
    const double amplitude = 0.35 * res;
    const double bar_half = 0.11 * res;
    const double theta = 2.0 * M_PI * class_id / cfg.class_count;
    const int freq = 1 + class_id % 3;
    const double dir_x = std::cos(theta);
    const double dir_y = std::sin(theta);

    EventStream stream;
    stream.width = std::uint16_t(cfg.resolution);
    stream.height = std::uint16_t(cfg.resolution);

    const std::uint64_t n_signal = rng.poisson(cfg.signal_event_rate * cfg.duration);
    for (std::uint64_t i = 0; i < n_signal; ++i) {
        const double u = rng.uniform();
        const double phase = M_PI * freq * u;
        const double radial = amplitude * std::abs(std::sin(phase));
        // outward while |sin| is rising
        const bool outward = std::cos(phase) * (std::sin(phase) >= 0 ? 1.0 : -1.0) > 0;
        const double perp = (2.0 * rng.uniform() - 1.0) * bar_half;
        const double px = cx + radial * dir_x - perp * dir_y + rng.normal();
        const double py = cy + radial * dir_y + perp * dir_x + rng.normal();
        const long ix = std::lround(px);
        const long iy = std::lround(py);
        if (ix < 0 || iy < 0 || ix >= cfg.resolution || iy >= cfg.resolution) continue;
        Event e;
        e.t = std::uint64_t(u * cfg.duration * 1e6);
        e.x = std::uint16_t(ix);
        e.y = std::uint16_t(iy);
        e.polarity = outward ? 1 : 0;
        stream.events.push_back(e);
    }

    const double noise_rate =
        noise_rate_per_pixel(cfg.noise_regime) * res * res;
    const std::uint64_t n_noise = rng.poisson(noise_rate * cfg.duration);
    for (std::uint64_t i = 0; i < n_noise; ++i) {
        Event e;
        e.t = std::uint64_t(rng.uniform() * cfg.duration * 1e6);
        e.x = std::uint16_t(std::min<double>(rng.uniform() * cfg.resolution, cfg.resolution - 1));
        e.y = std::uint16_t(std::min<double>(rng.uniform() * cfg.resolution, cfg.resolution - 1));
        e.polarity = rng.uniform() < 0.5 ? 0 : 1;
        stream.events.push_back(e);
    }

    detail::sort_events_stable(stream.events);
    return stream;
}

}  // namespace ndm
