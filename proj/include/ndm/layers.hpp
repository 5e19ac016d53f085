#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ndm/errors.hpp"
#include "ndm/event.hpp"
#include "ndm/neuron.hpp"

namespace ndm {

// Spatial shape of a stage signal. Dense stages use (units, 1, 1).
struct Shape {
    int c = 0;
    int h = 0;
    int w = 0;

    int units() const { return c * h * w; }
    friend bool operator==(const Shape&, const Shape&) = default;
    std::string str() const {
        return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
    }
};

enum class LayerKind : std::uint8_t { Pool = 0, Conv = 1, Flatten = 2, Dense = 3 };

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    int kernel = 0;        // pool/conv
    int out_channels = 0;  // conv
    int padding = 0;       // conv
    int out_units = 0;     // dense
    double pool_weight = 1.0;
    std::optional<CubaParams<double>> params;  // per-layer override

    static LayerSpec pool(int k, double w = 1.0) {
        LayerSpec s;
        s.kind = LayerKind::Pool;
        s.kernel = k;
        s.pool_weight = w;
        return s;
    }
    static LayerSpec conv(int out_channels, int k, int padding) {
        LayerSpec s;
        s.kind = LayerKind::Conv;
        s.out_channels = out_channels;
        s.kernel = k;
        s.padding = padding;
        return s;
    }
    static LayerSpec flatten() {
        LayerSpec s;
        s.kind = LayerKind::Flatten;
        return s;
    }
    static LayerSpec dense(int out_units) {
        LayerSpec s;
        s.kind = LayerKind::Dense;
        s.out_units = out_units;
        return s;
    }

    bool learnable() const { return kind == LayerKind::Conv || kind == LayerKind::Dense; }
    bool has_dynamics() const { return kind != LayerKind::Flatten; }
};

inline Shape layer_output_shape(const LayerSpec& spec, const Shape& in) {
    switch (spec.kind) {
        case LayerKind::Pool:
            if (spec.kernel <= 0 || in.h % spec.kernel != 0 || in.w % spec.kernel != 0)
                throw ShapeError("pool kernel " + std::to_string(spec.kernel) +
                                 " does not divide " + in.str());
            return {in.c, in.h / spec.kernel, in.w / spec.kernel};
        case LayerKind::Conv: {
            const int oh = in.h + 2 * spec.padding - spec.kernel + 1;
            const int ow = in.w + 2 * spec.padding - spec.kernel + 1;
            if (oh < 1 || ow < 1)
                throw ShapeError("conv kernel " + std::to_string(spec.kernel) +
                                 " too large for " + in.str());
            return {spec.out_channels, oh, ow};
        }
        case LayerKind::Flatten:
            return {in.units(), 1, 1};
        case LayerKind::Dense:
            return {spec.out_units, 1, 1};
    }
    throw ShapeError("unknown layer kind");
}

inline std::size_t layer_weight_count(const LayerSpec& spec, const Shape& in) {
    switch (spec.kind) {
        case LayerKind::Pool: return 1;  // the fixed pooling weight
        case LayerKind::Conv:
            return std::size_t(spec.out_channels) * in.c * spec.kernel * spec.kernel;
        case LayerKind::Flatten: return 0;
        case LayerKind::Dense: return std::size_t(spec.out_units) * in.units();
    }
    return 0;
}

// Delays are per input feature-map channel for conv, per input unit for dense.
inline std::size_t layer_delay_count(const LayerSpec& spec, const Shape& in) {
    switch (spec.kind) {
        case LayerKind::Conv: return std::size_t(in.c);
        case LayerKind::Dense: return std::size_t(in.units());
        default: return 0;
    }
}

template <typename Real>
struct Network {
    Shape input;        // (channels, height, width)
    int timesteps = 0;  // T
    CubaParams<Real> params;
    std::vector<LayerSpec> specs;
    std::vector<std::vector<Real>> weights;
    std::vector<std::vector<Real>> delays;
    bool delays_enabled = false;

    std::vector<Shape> stage_shapes() const {
        std::vector<Shape> shapes{input};
        for (const auto& s : specs) shapes.push_back(layer_output_shape(s, shapes.back()));
        return shapes;
    }

    CubaParams<Real> layer_params(std::size_t l) const {
        if (specs[l].params) return specs[l].params->template cast<Real>();
        return params;
    }

    // Uniform init in [-b, b] with b = gain / sqrt(fan_in); pool weights come
    // from the spec, flatten has none.
    void init_weights(std::uint64_t seed, double gain = 2.0) {
        std::mt19937_64 eng(seed);
        auto uniform = [&] { return double(eng() >> 11) * 0x1.0p-53; };
        const auto shapes = stage_shapes();
        weights.assign(specs.size(), {});
        delays.assign(specs.size(), {});
        for (std::size_t l = 0; l < specs.size(); ++l) {
            const LayerSpec& s = specs[l];
            const std::size_t count = layer_weight_count(s, shapes[l]);
            weights[l].resize(count);
            if (s.kind == LayerKind::Pool) {
                weights[l][0] = Real(s.pool_weight);
                continue;
            }
            if (!s.learnable()) continue;
            const double fan_in = s.kind == LayerKind::Conv
                                      ? double(shapes[l].c) * s.kernel * s.kernel
                                      : double(shapes[l].units());
            const double b = gain / std::sqrt(fan_in);
            for (auto& w : weights[l]) w = Real(b * (2.0 * uniform() - 1.0));
            if (delays_enabled)
                delays[l].assign(layer_delay_count(s, shapes[l]), Real(0));
        }
    }
};

// Everything backward needs: per-stage signals (stage l = input of layer l,
// stage L = network output) and per-layer pre-threshold membrane traces.
// Signals and traces are time-major [T, n].
template <typename Real>
struct ForwardCache {
    std::vector<std::vector<Real>> signals;  // size L+1
    std::vector<std::vector<Real>> v_pre;    // size L, empty for flatten
    std::vector<std::vector<Real>> delayed;  // size L, layer input after delays (empty if none)

    const std::vector<Real>& layer_input(std::size_t l) const {
        return delayed[l].empty() ? signals[l] : delayed[l];
    }
};

// Fractional time shift with linear interpolation; zeros before the origin.
// `channel_size` consecutive entries within a frame share one delay value.
template <typename Real>
inline std::vector<Real> apply_delay(const std::vector<Real>& signal, std::size_t n,
                                     std::size_t T, std::size_t channel_size,
                                     const std::vector<Real>& channel_delays) {
    for (Real d : channel_delays)
        if (!(d >= Real(0))) throw DomainError("apply_delay: delay must be >= 0");
    if (channel_delays.size() * channel_size != n)
        throw ShapeError("apply_delay: delay vector does not tile the frame");
    std::vector<Real> out(signal.size(), Real(0));
    for (std::size_t c = 0; c < channel_delays.size(); ++c) {
        const double d = double(channel_delays[c]);
        const std::size_t shift = std::size_t(d);
        const Real frac = Real(d - double(shift));
        for (std::size_t t = 0; t < T; ++t) {
            if (t < shift) continue;
            const std::size_t base_out = t * n + c * channel_size;
            const std::size_t base_a = (t - shift) * n + c * channel_size;
            if (t >= shift + 1) {
                const std::size_t base_b = (t - shift - 1) * n + c * channel_size;
                for (std::size_t i = 0; i < channel_size; ++i)
                    out[base_out + i] = (Real(1) - frac) * signal[base_a + i] +
                                        frac * signal[base_b + i];
            } else {
                for (std::size_t i = 0; i < channel_size; ++i)
                    out[base_out + i] = (Real(1) - frac) * signal[base_a + i];
            }
        }
    }
    return out;
}

namespace detail {

// Shared CUBA recurrence over a stage: `drive` fills the weighted input for
// one timestep, then every output neuron steps its dynamics.
template <typename Real, typename DriveFn>
void run_dynamics(std::size_t n_out, std::size_t T, const CubaParams<Real>& p,
                  DriveFn&& drive, std::vector<Real>& out_spikes,
                  std::vector<Real>& v_pre) {
    out_spikes.assign(n_out * T, Real(0));
    v_pre.assign(n_out * T, Real(0));
    std::vector<Real> cur(n_out, Real(0));
    std::vector<Real> vol(n_out, Real(0));
    std::vector<Real> weighted(n_out);
    const Real ki = Real(1) - p.current_decay;
    const Real kv = Real(1) - p.voltage_decay;
    for (std::size_t t = 0; t < T; ++t) {
        std::fill(weighted.begin(), weighted.end(), Real(0));
        drive(t, weighted.data());
        Real* sp = out_spikes.data() + t * n_out;
        Real* vp = v_pre.data() + t * n_out;
        for (std::size_t j = 0; j < n_out; ++j) {
            cur[j] = ki * cur[j] + weighted[j];
            const Real v = kv * vol[j] + cur[j];
            vp[j] = v;
            if (v >= p.v_thr) {
                sp[j] = Real(1);
                vol[j] = Real(0);
            } else {
                vol[j] = v;
            }
        }
    }
}

}  // namespace detail

template <typename Real>
void pool_forward(const std::vector<Real>& input, const Shape& in, int k, Real w_pool,
                  const CubaParams<Real>& p, std::size_t T,
                  std::vector<Real>& out_spikes, std::vector<Real>& v_pre) {
    const Shape out = layer_output_shape(LayerSpec::pool(k), in);
    const std::size_t n_in = std::size_t(in.units());
    const std::size_t n_out = std::size_t(out.units());
    detail::run_dynamics<Real>(
        n_out, T, p,
        [&](std::size_t t, Real* weighted) {
            const Real* frame = input.data() + t * n_in;
            for (int c = 0; c < in.c; ++c)
                for (int y = 0; y < in.h; ++y) {
                    const Real* row = frame + (std::size_t(c) * in.h + y) * in.w;
                    Real* orow = weighted + (std::size_t(c) * out.h + y / k) * out.w;
                    for (int x = 0; x < in.w; ++x) {
                        const Real s = row[x];
                        if (s != Real(0)) orow[x / k] += w_pool * s;
                    }
                }
        },
        out_spikes, v_pre);
}

template <typename Real>
void conv_forward(const std::vector<Real>& input, const Shape& in,
                  const std::vector<Real>& weights, int out_channels, int k, int pad,
                  const CubaParams<Real>& p, std::size_t T,
                  std::vector<Real>& out_spikes, std::vector<Real>& v_pre) {
    const Shape out = layer_output_shape(LayerSpec::conv(out_channels, k, pad), in);
    if (weights.size() != std::size_t(out_channels) * in.c * k * k)
        throw ShapeError("conv_forward: weight count mismatch");
    const std::size_t n_in = std::size_t(in.units());
    const std::size_t n_out = std::size_t(out.units());
    detail::run_dynamics<Real>(
        n_out, T, p,
        [&](std::size_t t, Real* weighted) {
            const Real* frame = input.data() + t * n_in;
            // scatter from active input cells; event frames are sparse
            for (int ic = 0; ic < in.c; ++ic)
                for (int iy = 0; iy < in.h; ++iy)
                    for (int ix = 0; ix < in.w; ++ix) {
                        const Real s = frame[(std::size_t(ic) * in.h + iy) * in.w + ix];
                        if (s == Real(0)) continue;
                        for (int oc = 0; oc < out_channels; ++oc) {
                            const Real* wk =
                                weights.data() + ((std::size_t(oc) * in.c + ic) * k) * k;
                            for (int ky = 0; ky < k; ++ky) {
                                const int oy = iy - ky + pad;
                                if (oy < 0 || oy >= out.h) continue;
                                for (int kx = 0; kx < k; ++kx) {
                                    const int ox = ix - kx + pad;
                                    if (ox < 0 || ox >= out.w) continue;
                                    weighted[(std::size_t(oc) * out.h + oy) * out.w + ox] +=
                                        wk[ky * k + kx] * s;
                                }
                            }
                        }
                    }
        },
        out_spikes, v_pre);
}

template <typename Real>
void dense_forward(const std::vector<Real>& input, std::size_t n_in,
                   const std::vector<Real>& weights, std::size_t n_out,
                   const CubaParams<Real>& p, std::size_t T,
                   std::vector<Real>& out_spikes, std::vector<Real>& v_pre) {
    if (weights.size() != n_in * n_out) throw ShapeError("dense_forward: weight count mismatch");
    std::vector<std::size_t> active;
    std::vector<Real> active_val;
    detail::run_dynamics<Real>(
        n_out, T, p,
        [&](std::size_t t, Real* weighted) {
            const Real* frame = input.data() + t * n_in;
            active.clear();
            active_val.clear();
            for (std::size_t k = 0; k < n_in; ++k)
                if (frame[k] != Real(0)) {
                    active.push_back(k);
                    active_val.push_back(frame[k]);
                }
            for (std::size_t j = 0; j < n_out; ++j) {
                const Real* row = weights.data() + j * n_in;
                Real acc = Real(0);
                for (std::size_t a = 0; a < active.size(); ++a)
                    acc += row[active[a]] * active_val[a];
                weighted[j] = acc;
            }
        },
        out_spikes, v_pre);
}

// Flatten index order within a frame is (c, y, x); with time-major storage
// that makes flatten a no-op on the flat signal.
template <typename Real>
std::vector<Real> flatten_signal(const std::vector<Real>& input) {
    return input;
}

template <typename Real>
std::vector<Real> tensor_to_signal(const SpikeTensor& tensor) {
    std::vector<Real> signal(tensor.values.size());
    for (std::size_t i = 0; i < tensor.values.size(); ++i)
        signal[i] = Real(tensor.values[i]);
    return signal;
}

template <typename Real>
std::pair<std::vector<Real>, ForwardCache<Real>> network_forward(
    const Network<Real>& net, const SpikeTensor& input) {
    if (input.channels != net.input.c || input.height != net.input.h ||
        input.width != net.input.w || input.timesteps != net.timesteps)
        throw ShapeError("network_forward: input " + std::to_string(input.channels) + "x" +
                         std::to_string(input.height) + "x" + std::to_string(input.width) +
                         "x" + std::to_string(input.timesteps) + " does not match network " +
                         net.input.str() + "x" + std::to_string(net.timesteps));
    const auto shapes = net.stage_shapes();
    const std::size_t T = std::size_t(net.timesteps);
    ForwardCache<Real> cache;
    cache.signals.resize(net.specs.size() + 1);
    cache.v_pre.resize(net.specs.size());
    cache.delayed.resize(net.specs.size());
    cache.signals[0] = tensor_to_signal<Real>(input);

    for (std::size_t l = 0; l < net.specs.size(); ++l) {
        const LayerSpec& spec = net.specs[l];
        const Shape& in = shapes[l];
        const CubaParams<Real> p = net.layer_params(l);
        if (net.delays_enabled && l < net.delays.size() && !net.delays[l].empty()) {
            const std::size_t channel_size =
                spec.kind == LayerKind::Conv ? std::size_t(in.h) * in.w : 1;
            cache.delayed[l] = apply_delay(cache.signals[l], std::size_t(in.units()), T,
                                           channel_size, net.delays[l]);
        }
        const std::vector<Real>& x = cache.layer_input(l);
        try {
            switch (spec.kind) {
                case LayerKind::Pool:
                    pool_forward(x, in, spec.kernel, net.weights[l][0], p, T,
                                 cache.signals[l + 1], cache.v_pre[l]);
                    break;
                case LayerKind::Conv:
                    conv_forward(x, in, net.weights[l], spec.out_channels, spec.kernel,
                                 spec.padding, p, T, cache.signals[l + 1], cache.v_pre[l]);
                    break;
                case LayerKind::Flatten:
                    cache.signals[l + 1] = flatten_signal(x);
                    break;
                case LayerKind::Dense:
                    dense_forward(x, std::size_t(in.units()), net.weights[l],
                                  std::size_t(spec.out_units), p, T, cache.signals[l + 1],
                                  cache.v_pre[l]);
                    break;
            }
        } catch (const ShapeError& e) {
            throw ShapeError("layer " + std::to_string(l) + ": " + e.what());
        }
    }
    return {cache.signals.back(), std::move(cache)};
}

}  // namespace ndm
