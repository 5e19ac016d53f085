#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ndm/errors.hpp"
#include "ndm/layers.hpp"

namespace ndm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Preprocessing parameters embedded in checkpoints so eval/predict cannot
// silently mismatch the binning the model was trained with.
struct CheckpointMeta {
    double sample_window_s = 2.0;
    double bin_width_s = 0.005;
    std::uint32_t crop_side = 0;  // 0 = no crop

    friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

namespace detail {

inline void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_le(out, bits);
}

inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_le(out, bits);
}

inline float get_f32(const std::string& in, std::size_t& off, const char* what) {
    const auto bits = get_le<std::uint32_t>(in, off, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline double get_f64(const std::string& in, std::size_t& off, const char* what) {
    const auto bits = get_le<std::uint64_t>(in, off, what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

// NDMC layout, little-endian:
//   magic 'NDMC', version u32,
//   sample_window f64, bin_width f64, crop_side u32,
//   input shape (c, h, w, T) 4 x u32, layer count u32,
//   per layer: variant tag u8, shape ints u32 (pool: k; conv: out_ch, k, pad;
//   dense: out_units; flatten: none), neuron params 7 x f32, weight array f32
//   (count from shape), delay count u32 + delay array f32.
template <typename Real>
std::string write_checkpoint(const Network<Real>& net, const CheckpointMeta& meta) {
    std::string out;
    out += "NDMC";
    detail::put_le(out, kCheckpointVersion);
    detail::put_f64(out, meta.sample_window_s);
    detail::put_f64(out, meta.bin_width_s);
    detail::put_le(out, meta.crop_side);
    detail::put_le(out, std::uint32_t(net.input.c));
    detail::put_le(out, std::uint32_t(net.input.h));
    detail::put_le(out, std::uint32_t(net.input.w));
    detail::put_le(out, std::uint32_t(net.timesteps));
    detail::put_le(out, std::uint32_t(net.specs.size()));
    const auto shapes = net.stage_shapes();
    for (std::size_t l = 0; l < net.specs.size(); ++l) {
        const LayerSpec& s = net.specs[l];
        detail::put_le(out, std::uint8_t(s.kind));
        switch (s.kind) {
            case LayerKind::Pool: detail::put_le(out, std::uint32_t(s.kernel)); break;
            case LayerKind::Conv:
                detail::put_le(out, std::uint32_t(s.out_channels));
                detail::put_le(out, std::uint32_t(s.kernel));
                detail::put_le(out, std::uint32_t(s.padding));
                break;
            case LayerKind::Flatten: break;
            case LayerKind::Dense: detail::put_le(out, std::uint32_t(s.out_units)); break;
        }
        const CubaParams<Real> p = net.layer_params(l);
        detail::put_f32(out, float(p.v_thr));
        detail::put_f32(out, float(p.current_decay));
        detail::put_f32(out, float(p.voltage_decay));
        detail::put_f32(out, float(p.tau_grad));
        detail::put_f32(out, float(p.scale_grad));
        detail::put_f32(out, float(p.true_rate));
        detail::put_f32(out, float(p.false_rate));
        const std::size_t wc = layer_weight_count(s, shapes[l]);
        if (net.weights[l].size() != wc)
            throw ShapeError("checkpoint: layer " + std::to_string(l) + " weight count");
        for (Real w : net.weights[l]) detail::put_f32(out, float(w));
        const auto& d = l < net.delays.size() ? net.delays[l] : std::vector<Real>{};
        detail::put_le(out, std::uint32_t(d.size()));
        for (Real v : d) detail::put_f32(out, float(v));
    }
    return out;
}

template <typename Real>
std::pair<Network<Real>, CheckpointMeta> read_checkpoint(const std::string& bytes) {
    if (bytes.size() < 4 || bytes.compare(0, 4, "NDMC") != 0)
        throw FormatError("ndmc: bad magic");
    std::size_t off = 4;
    const auto version = detail::get_le<std::uint32_t>(bytes, off, "version");
    if (version != kCheckpointVersion)
        throw FormatError("ndmc: unsupported version " + std::to_string(version));
    CheckpointMeta meta;
    meta.sample_window_s = detail::get_f64(bytes, off, "sample_window");
    meta.bin_width_s = detail::get_f64(bytes, off, "bin_width");
    meta.crop_side = detail::get_le<std::uint32_t>(bytes, off, "crop_side");
    Network<Real> net;
    net.input.c = int(detail::get_le<std::uint32_t>(bytes, off, "input"));
    net.input.h = int(detail::get_le<std::uint32_t>(bytes, off, "input"));
    net.input.w = int(detail::get_le<std::uint32_t>(bytes, off, "input"));
    net.timesteps = int(detail::get_le<std::uint32_t>(bytes, off, "input"));
    const auto layer_count = detail::get_le<std::uint32_t>(bytes, off, "layer count");
    Shape in = net.input;
    for (std::uint32_t l = 0; l < layer_count; ++l) {
        const auto tag = detail::get_le<std::uint8_t>(bytes, off, "layer tag");
        LayerSpec s;
        switch (LayerKind(tag)) {
            case LayerKind::Pool:
                s = LayerSpec::pool(int(detail::get_le<std::uint32_t>(bytes, off, "pool k")));
                break;
            case LayerKind::Conv: {
                const int oc = int(detail::get_le<std::uint32_t>(bytes, off, "conv oc"));
                const int k = int(detail::get_le<std::uint32_t>(bytes, off, "conv k"));
                const int pad = int(detail::get_le<std::uint32_t>(bytes, off, "conv pad"));
                s = LayerSpec::conv(oc, k, pad);
                break;
            }
            case LayerKind::Flatten: s = LayerSpec::flatten(); break;
            case LayerKind::Dense:
                s = LayerSpec::dense(int(detail::get_le<std::uint32_t>(bytes, off, "dense out")));
                break;
            default: throw FormatError("ndmc: unknown layer tag " + std::to_string(tag));
        }
        CubaParams<double> p;
        p.v_thr = detail::get_f32(bytes, off, "params");
        p.current_decay = detail::get_f32(bytes, off, "params");
        p.voltage_decay = detail::get_f32(bytes, off, "params");
        p.tau_grad = detail::get_f32(bytes, off, "params");
        p.scale_grad = detail::get_f32(bytes, off, "params");
        p.true_rate = detail::get_f32(bytes, off, "params");
        p.false_rate = detail::get_f32(bytes, off, "params");
        s.params = p;
        const std::size_t wc = layer_weight_count(s, in);
        std::vector<Real> w(wc);
        for (auto& v : w) v = Real(detail::get_f32(bytes, off, "weights"));
        if (s.kind == LayerKind::Pool && !w.empty()) s.pool_weight = double(w[0]);
        const auto dc = detail::get_le<std::uint32_t>(bytes, off, "delay count");
        std::vector<Real> d(dc);
        for (auto& v : d) v = Real(detail::get_f32(bytes, off, "delays"));
        if (!d.empty()) net.delays_enabled = true;
        net.specs.push_back(s);
        net.weights.push_back(std::move(w));
        net.delays.push_back(std::move(d));
        in = layer_output_shape(s, in);
    }
    if (off != bytes.size()) throw FormatError("ndmc: trailing bytes at offset " + std::to_string(off));
    return {std::move(net), meta};
}

template <typename Real>
void save_checkpoint_file(const std::filesystem::path& path, const Network<Real>& net,
                          const CheckpointMeta& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    const std::string bytes = write_checkpoint(net, meta);
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

template <typename Real>
std::pair<Network<Real>, CheckpointMeta> load_checkpoint_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return read_checkpoint<Real>(buf.str());
}

}  // namespace ndm
