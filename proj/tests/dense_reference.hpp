// Test-only brute-force reference for dense spiking chains: forward by naive
// per-neuron recurrence, backward as the surrogate-relaxed chain rule written
// out with explicit kernel sums. Independent of the production backward path.
#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "ndm/layers.hpp"

namespace ndm_test {

inline ndm::SpikeTensor make_tensor(int c, int h, int w, int T) {
    ndm::SpikeTensor t;
    t.channels = c;
    t.height = h;
    t.width = w;
    t.timesteps = T;
    t.values.assign(t.frame_size() * T, 0);
    return t;
}

struct DenseReference {
    std::vector<std::vector<double>> spikes;  // per stage, stage 0 = input
    std::vector<std::vector<double>> v_pre;   // per layer

    static std::vector<double> kernel(const ndm::CubaParams<double>& p, std::size_t T) {
        std::vector<double> eps(T);
        for (std::size_t t = 0; t < T; ++t) {
            double sum = 0;
            for (std::size_t s = 0; s <= t; ++s)
                sum += std::pow(1.0 - p.voltage_decay, double(t - s)) *
                       std::pow(1.0 - p.current_decay, double(s));
            eps[t] = sum;
        }
        return eps;
    }

    void forward(const ndm::Network<double>& net, const std::vector<double>& input,
                 std::size_t T) {
        const auto shapes = net.stage_shapes();
        spikes.assign(1, input);
        v_pre.clear();
        for (std::size_t l = 0; l < net.specs.size(); ++l) {
            const std::size_t n_in = std::size_t(shapes[l].units());
            const std::size_t n_out = std::size_t(shapes[l + 1].units());
            const ndm::CubaParams<double> p = net.layer_params(l);
            std::vector<double> out(n_out * T, 0.0), vp(n_out * T, 0.0);
            for (std::size_t j = 0; j < n_out; ++j) {
                double cur = 0, vol = 0;
                for (std::size_t t = 0; t < T; ++t) {
                    double weighted = 0;
                    for (std::size_t k = 0; k < n_in; ++k)
                        weighted += net.weights[l][j * n_in + k] * spikes[l][t * n_in + k];
                    cur = (1.0 - p.current_decay) * cur + weighted;
                    const double v = (1.0 - p.voltage_decay) * vol + cur;
                    vp[t * n_out + j] = v;
                    if (v >= p.v_thr) {
                        out[t * n_out + j] = 1.0;
                        vol = 0.0;
                    } else {
                        vol = v;
                    }
                }
            }
            v_pre.push_back(std::move(vp));
            spikes.push_back(std::move(out));
        }
    }

    std::vector<std::vector<double>> backward(const ndm::Network<double>& net,
                                              const std::vector<double>& e_out,
                                              std::size_t T) const {
        const auto shapes = net.stage_shapes();
        std::vector<std::vector<double>> grads(net.specs.size());
        std::vector<double> e = e_out;
        for (std::size_t l = net.specs.size(); l-- > 0;) {
            const std::size_t n_in = std::size_t(shapes[l].units());
            const std::size_t n_out = std::size_t(shapes[l + 1].units());
            const ndm::CubaParams<double> p = net.layer_params(l);
            const auto eps = kernel(p, T);

            std::vector<double> delta(n_out * T);
            for (std::size_t j = 0; j < n_out; ++j)
                for (std::size_t t = 0; t < T; ++t) {
                    double corr = 0;
                    for (std::size_t s = 0; t + s < T; ++s)
                        corr += eps[s] * e[(t + s) * n_out + j];
                    const double vp = v_pre[l][t * n_out + j];
                    const double rho =
                        (p.scale_grad / p.v_thr) *
                        std::exp(-std::abs(vp - p.v_thr) / (p.tau_grad * p.v_thr));
                    delta[t * n_out + j] = rho * corr;
                }

            std::vector<double> a(n_in * T);
            for (std::size_t k = 0; k < n_in; ++k)
                for (std::size_t t = 0; t < T; ++t) {
                    double conv = 0;
                    for (std::size_t s = 0; s <= t; ++s)
                        conv += eps[s] * spikes[l][(t - s) * n_in + k];
                    a[t * n_in + k] = conv;
                }

            grads[l].assign(n_out * n_in, 0.0);
            for (std::size_t j = 0; j < n_out; ++j)
                for (std::size_t k = 0; k < n_in; ++k) {
                    double g = 0;
                    for (std::size_t t = 0; t < T; ++t)
                        g += delta[t * n_out + j] * a[t * n_in + k];
                    grads[l][j * n_in + k] = g;
                }

            std::vector<double> e_below(n_in * T, 0.0);
            for (std::size_t k = 0; k < n_in; ++k)
                for (std::size_t t = 0; t < T; ++t) {
                    double sum = 0;
                    for (std::size_t j = 0; j < n_out; ++j)
                        sum += net.weights[l][j * n_in + k] * delta[t * n_out + j];
                    e_below[t * n_in + k] = sum;
                }
            e = std::move(e_below);
        }
        return grads;
    }
};

inline ndm::Network<double> random_dense_chain(std::mt19937_64& rng, int T,
                                               std::vector<int>& sizes_out) {
    std::uniform_int_distribution<int> depth_dist(1, 3), width_dist(1, 3);
    const int depth = depth_dist(rng);
    std::vector<int> sizes{width_dist(rng)};
    ndm::Network<double> net;
    for (int l = 0; l < depth; ++l) {
        sizes.push_back(width_dist(rng));
        net.specs.push_back(ndm::LayerSpec::dense(sizes.back()));
    }
    net.input = {sizes[0], 1, 1};
    net.timesteps = T;
    net.init_weights(rng());
    // stronger weights so some layers actually spike
    for (auto& layer : net.weights)
        for (auto& w : layer) w *= 2.0;
    sizes_out = sizes;
    return net;
}

}  // namespace ndm_test
