#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ndm/errors.hpp"
#include "ndm/layers.hpp"
#include "ndm/neuron.hpp"

namespace ndm {

struct RateLossSpec {
    double true_rate = 0.2;
    double false_rate = 0.03;
};

// Spike-rate loss: loss = 1/2 sum_n (r_n - target_n)^2 with the output error
// spread uniformly over time, e_out[n,t] = (r_n - target_n) / T.
template <typename Real>
std::pair<Real, std::vector<Real>> rate_loss(const std::vector<Real>& output_spikes,
                                             std::size_t n, std::size_t T, int label,
                                             const RateLossSpec& spec) {
    if (T == 0) throw DomainError("rate_loss: T must be positive");
    if (label < 0 || std::size_t(label) >= n) throw DomainError("rate_loss: label out of range");
    std::vector<Real> rate(n, Real(0));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < n; ++j) rate[j] += output_spikes[t * n + j];
    Real loss = Real(0);
    std::vector<Real> residual(n);
    for (std::size_t j = 0; j < n; ++j) {
        rate[j] /= Real(T);
        const Real target = std::size_t(label) == j ? Real(spec.true_rate) : Real(spec.false_rate);
        residual[j] = rate[j] - target;
        loss += residual[j] * residual[j];
    }
    loss *= Real(0.5);
    std::vector<Real> e_out(n * T);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < n; ++j) e_out[t * n + j] = residual[j] / Real(T);
    return {loss, std::move(e_out)};
}

template <typename Real>
struct Gradients {
    std::vector<std::vector<Real>> weights;  // per layer, empty for non-learnable
    std::vector<std::vector<Real>> delays;   // per layer, empty unless trained
};

// Standalone delay gradient: -sum_t da/dt * e[t] * dt with central differences
// (one-sided at the boundaries), per channel of `channel_size` entries.
template <typename Real>
std::vector<Real> delay_grad(const std::vector<Real>& a, const std::vector<Real>& e,
                             std::size_t n, std::size_t T, std::size_t channel_size,
                             Real dt = Real(1)) {
    if (T < 2) throw DomainError("delay_grad: need at least 2 timesteps");
    if (n % channel_size != 0) throw ShapeError("delay_grad: channel size does not tile frame");
    std::vector<Real> grad(n / channel_size, Real(0));
    for (std::size_t j = 0; j < n; ++j) {
        Real acc = Real(0);
        for (std::size_t t = 0; t < T; ++t) {
            Real da;
            if (t == 0)
                da = (a[n + j] - a[j]) / dt;
            else if (t == T - 1)
                da = (a[t * n + j] - a[(t - 1) * n + j]) / dt;
            else
                da = (a[(t + 1) * n + j] - a[(t - 1) * n + j]) / (Real(2) * dt);
            acc += da * e[t * n + j];
        }
        grad[j / channel_size] -= acc * dt;
    }
    return grad;
}

// SLAYER-style backward through the cached forward. Per layer, output to
// input: delta[t] = rho(v_pre[t]) * (eps (x) e)[t]; weight gradient sums
// delta against the response signal of the layer input; the error below is
// the transposed connectivity applied to delta.
template <typename Real>
Gradients<Real> backward(const Network<Real>& net, const ForwardCache<Real>& cache,
                         const std::vector<Real>& e_out) {
    const auto shapes = net.stage_shapes();
    const std::size_t T = std::size_t(net.timesteps);
    const std::size_t L = net.specs.size();
    if (cache.signals.size() != L + 1 || cache.v_pre.size() != L)
        throw DataError("backward: cache does not match network");
    if (e_out.size() != std::size_t(shapes.back().units()) * T)
        throw ShapeError("backward: output error size mismatch");

    Gradients<Real> grads;
    grads.weights.resize(L);
    grads.delays.resize(L);

    std::vector<Real> e = e_out;
    for (std::size_t l = L; l-- > 0;) {
        const LayerSpec& spec = net.specs[l];
        const Shape& in = shapes[l];
        const Shape& out = shapes[l + 1];
        const std::size_t n_in = std::size_t(in.units());
        const std::size_t n_out = std::size_t(out.units());

        if (spec.kind == LayerKind::Flatten) continue;  // pure reindex, e passes through

        const CubaParams<Real> p = net.layer_params(l);

        // delta = rho(v_pre) * (eps correlated with e)
        std::vector<Real> delta = std::move(e);
        psp_correlate(delta, n_out, T, p);
        const std::vector<Real>& v_pre = cache.v_pre[l];
        for (std::size_t i = 0; i < delta.size(); ++i)
            delta[i] *= surrogate_pdf(v_pre[i], p);

        const bool wants_delay_grad =
            net.delays_enabled && l < net.delays.size() && !net.delays[l].empty();

        // response signal of this layer's (possibly delayed) input
        std::vector<Real> a;
        if (spec.learnable() || wants_delay_grad) {
            a = cache.layer_input(l);
            psp_filter(a, n_in, T, p);
        }

        std::vector<Real> e_in(n_in * T, Real(0));
        switch (spec.kind) {
            case LayerKind::Dense: {
                auto& gw = grads.weights[l];
                gw.assign(net.weights[l].size(), Real(0));
                const std::vector<Real>& W = net.weights[l];
                for (std::size_t t = 0; t < T; ++t) {
                    const Real* d = delta.data() + t * n_out;
                    const Real* at = a.data() + t * n_in;
                    Real* et = e_in.data() + t * n_in;
                    for (std::size_t j = 0; j < n_out; ++j) {
                        const Real dj = d[j];
                        if (dj == Real(0)) continue;
                        Real* gr = gw.data() + j * n_in;
                        const Real* wr = W.data() + j * n_in;
                        for (std::size_t k = 0; k < n_in; ++k) {
                            gr[k] += dj * at[k];
                            et[k] += wr[k] * dj;
                        }
                    }
                }
                break;
            }
            case LayerKind::Conv: {
                auto& gw = grads.weights[l];
                gw.assign(net.weights[l].size(), Real(0));
                const std::vector<Real>& W = net.weights[l];
                const int k = spec.kernel;
                const int pad = spec.padding;
                for (std::size_t t = 0; t < T; ++t) {
                    const Real* d = delta.data() + t * n_out;
                    const Real* at = a.data() + t * n_in;
                    Real* et = e_in.data() + t * n_in;
                    for (int oc = 0; oc < out.c; ++oc)
                        for (int oy = 0; oy < out.h; ++oy)
                            for (int ox = 0; ox < out.w; ++ox) {
                                const Real dj = d[(std::size_t(oc) * out.h + oy) * out.w + ox];
                                if (dj == Real(0)) continue;
                                for (int ic = 0; ic < in.c; ++ic) {
                                    const std::size_t wbase = ((std::size_t(oc) * in.c + ic) * k) * k;
                                    for (int ky = 0; ky < k; ++ky) {
                                        const int iy = oy + ky - pad;
                                        if (iy < 0 || iy >= in.h) continue;
                                        const std::size_t irow = (std::size_t(ic) * in.h + iy) * in.w;
                                        for (int kx = 0; kx < k; ++kx) {
                                            const int ix = ox + kx - pad;
                                            if (ix < 0 || ix >= in.w) continue;
                                            gw[wbase + ky * k + kx] += dj * at[irow + ix];
                                            et[irow + ix] += W[wbase + ky * k + kx] * dj;
                                        }
                                    }
                                }
                            }
                }
                break;
            }
            case LayerKind::Pool: {
                const Real w_pool = net.weights[l][0];
                const int k = spec.kernel;
                for (std::size_t t = 0; t < T; ++t) {
                    const Real* d = delta.data() + t * n_out;
                    Real* et = e_in.data() + t * n_in;
                    for (int c = 0; c < in.c; ++c)
                        for (int iy = 0; iy < in.h; ++iy)
                            for (int ix = 0; ix < in.w; ++ix)
                                et[(std::size_t(c) * in.h + iy) * in.w + ix] =
                                    w_pool *
                                    d[(std::size_t(c) * out.h + iy / k) * out.w + ix / k];
                }
                break;
            }
            case LayerKind::Flatten: break;
        }

        if (wants_delay_grad) {
            const std::size_t channel_size =
                spec.kind == LayerKind::Conv ? std::size_t(in.h) * in.w : 1;
            grads.delays[l] = delay_grad(a, e_in, n_in, T, channel_size);
        }
        e = std::move(e_in);
    }
    return grads;
}

template <typename Real>
struct AdamState {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<Real>> m_w, v_w;
    std::vector<std::vector<Real>> m_d, v_d;

    template <typename R>
    static AdamState<Real> for_network(const Network<R>& net, double lr = 3e-3) {
        AdamState<Real> s;
        s.lr = lr;
        s.m_w.resize(net.specs.size());
        s.v_w.resize(net.specs.size());
        s.m_d.resize(net.specs.size());
        s.v_d.resize(net.specs.size());
        for (std::size_t l = 0; l < net.specs.size(); ++l) {
            if (net.specs[l].learnable()) {
                s.m_w[l].assign(net.weights[l].size(), Real(0));
                s.v_w[l].assign(net.weights[l].size(), Real(0));
            }
            if (l < net.delays.size() && !net.delays[l].empty()) {
                s.m_d[l].assign(net.delays[l].size(), Real(0));
                s.v_d[l].assign(net.delays[l].size(), Real(0));
            }
        }
        return s;
    }
};

namespace detail {

template <typename Real>
void adam_update_vector(std::vector<Real>& params, const std::vector<Real>& grad,
                        std::vector<Real>& m, std::vector<Real>& v, const AdamState<Real>& s,
                        double bc1, double bc2, std::size_t layer) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = double(grad[i]);
        if (!std::isfinite(g))
            throw NumericError("adam_step: non-finite gradient in layer " + std::to_string(layer));
        m[i] = Real(s.beta1 * double(m[i]) + (1.0 - s.beta1) * g);
        v[i] = Real(s.beta2 * double(v[i]) + (1.0 - s.beta2) * g * g);
        const double mhat = double(m[i]) / bc1;
        const double vhat = double(v[i]) / bc2;
        params[i] -= Real(s.lr * mhat / (std::sqrt(vhat) + s.eps));
    }
}

}  // namespace detail

// Bias-corrected Adam over all learnable weights (and delays, when trained).
// Delays are clamped to stay non-negative.
template <typename Real>
void adam_step(Network<Real>& net, const Gradients<Real>& grads, AdamState<Real>& state,
               bool update_delays = false) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
    for (std::size_t l = 0; l < net.specs.size(); ++l) {
        if (net.specs[l].learnable() && !grads.weights[l].empty())
            detail::adam_update_vector(net.weights[l], grads.weights[l], state.m_w[l],
                                       state.v_w[l], state, bc1, bc2, l);
        if (update_delays && !grads.delays[l].empty()) {
            detail::adam_update_vector(net.delays[l], grads.delays[l], state.m_d[l],
                                       state.v_d[l], state, bc1, bc2, l);
            for (auto& d : net.delays[l])
                if (d < Real(0)) d = Real(0);
        }
    }
}

struct LabeledTensor {
    SpikeTensor x;
    int label = 0;
};

// Argmax of output spike counts; ties break toward the lower class index.
template <typename Real>
std::pair<int, std::vector<long>> predict(const Network<Real>& net, const SpikeTensor& input) {
    auto [output, cache] = network_forward(net, input);
    const std::size_t n = std::size_t(net.stage_shapes().back().units());
    const std::size_t T = std::size_t(net.timesteps);
    std::vector<long> counts(n, 0);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < n; ++j)
            if (output[t * n + j] != Real(0)) ++counts[j];
    int best = 0;
    for (std::size_t j = 1; j < n; ++j)
        if (counts[j] > counts[best]) best = int(j);
    return {best, std::move(counts)};
}

inline std::size_t internal_thread_cap() {
    if (const char* env = std::getenv("NDM_THREADS")) {
        const long v = std::atol(env);
        if (v >= 1) return std::size_t(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

// Accuracy + confusion matrix (row = true class). Samples fan out over
// threads against the read-only network; counts reduce deterministically.
template <typename Real>
std::pair<double, std::vector<std::vector<long>>> evaluate(
    const Network<Real>& net, const std::vector<LabeledTensor>& samples, int n_classes) {
    if (samples.empty()) throw DataError("evaluate: empty sample set");
    std::vector<int> predicted(samples.size());
    const std::size_t threads = std::min(internal_thread_cap(), samples.size());
    if (threads <= 1) {
        for (std::size_t i = 0; i < samples.size(); ++i)
            predicted[i] = predict(net, samples[i].x).first;
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < samples.size(); i += threads)
                    predicted[i] = predict(net, samples[i].x).first;
            });
        for (auto& th : pool) th.join();
    }
    std::vector<std::vector<long>> confusion(n_classes, std::vector<long>(n_classes, 0));
    long correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        ++confusion[samples[i].label][predicted[i]];
        if (predicted[i] == samples[i].label) ++correct;
    }
    return {double(correct) / double(samples.size()), std::move(confusion)};
}

struct TrainReport {
    struct Epoch {
        double train_loss = 0.0;
        double train_acc = 0.0;
        double test_acc = 0.0;
        double wall_s = 0.0;
    };
    double initial_train_acc = 0.0;
    double initial_test_acc = 0.0;
    std::vector<Epoch> epochs;
    int best_epoch = -1;  // -1 = initial evaluation was best
    double best_test_acc = 0.0;
    std::vector<std::vector<long>> confusion;
    double wall_clock_s = 0.0;
};

struct FitConfig {
    int epochs = 200;
    double lr = 3e-3;
    std::uint64_t seed = 1;
    bool train_delays = false;
    // per-layer RMS cap on gradients before the optimizer step (0 disables).
    // The surrogate makes per-sample gradients heavy-tailed; a rare huge
    // sample otherwise inflates Adam's second moment and stalls rarely-firing
    // units for many epochs.
    double grad_clip = 0.0;
    // Adam denominator epsilon. The surrogate decays so steeply that units a
    // little below threshold produce gradients under the conventional 1e-8,
    // which then floors their updates to nothing; a smaller epsilon lets such
    // units recover at the normal per-step rate.
    double adam_eps = 1e-8;
    // stop as soon as test accuracy reaches this value (0 disables)
    double target_test_acc = 0.0;
    std::function<void(int, const TrainReport::Epoch&)> on_epoch;
};

template <typename Real>
void clip_gradients(Gradients<Real>& grads, double rms_cap) {
    if (rms_cap <= 0.0) return;
    auto clip = [rms_cap](std::vector<Real>& layer) {
        if (layer.empty()) return;
        double ss = 0;
        for (Real v : layer) ss += double(v) * double(v);
        const double rms = std::sqrt(ss / double(layer.size()));
        if (rms > rms_cap) {
            const Real scale = Real(rms_cap / rms);
            for (Real& v : layer) v *= scale;
        }
    };
    for (auto& layer : grads.weights) clip(layer);
    for (auto& layer : grads.delays) clip(layer);
}

// Single-sample SLAYER training loop: forward, rate loss, backward, Adam.
// Train accuracy is measured from the forward passes of the training sweep
// itself (each sample scored before its update). Deterministic under seed.
template <typename Real>
std::pair<TrainReport, Network<Real>> fit(Network<Real> net,
                                          const std::vector<LabeledTensor>& train,
                                          const std::vector<LabeledTensor>& test,
                                          const FitConfig& cfg) {
    if (train.empty()) throw DataError("fit: empty training set");
    const int n_classes = net.stage_shapes().back().units();
    const std::size_t n_out = std::size_t(n_classes);
    const std::size_t T = std::size_t(net.timesteps);
    const RateLossSpec loss_spec{double(net.params.true_rate), double(net.params.false_rate)};

    auto state = AdamState<Real>::for_network(net, cfg.lr);
    state.eps = cfg.adam_eps;
    std::mt19937_64 shuffle_rng(cfg.seed);

    TrainReport report;
    const auto t_start = std::chrono::steady_clock::now();
    auto [acc0_train, conf0_train] = evaluate(net, train, n_classes);
    auto [acc0_test, conf0_test] = evaluate(net, test, n_classes);
    report.initial_train_acc = acc0_train;
    report.initial_test_acc = acc0_test;
    report.best_test_acc = acc0_test;
    report.confusion = conf0_test;
    Network<Real> best = net;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t_epoch = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        long correct = 0;
        for (std::size_t idx : order) {
            const LabeledTensor& sample = train[idx];
            auto [output, cache] = network_forward(net, sample.x);
            std::vector<long> counts(n_out, 0);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t j = 0; j < n_out; ++j)
                    if (output[t * n_out + j] != Real(0)) ++counts[j];
            int pred = 0;
            for (std::size_t j = 1; j < n_out; ++j)
                if (counts[j] > counts[pred]) pred = int(j);
            if (pred == sample.label) ++correct;
            auto [loss, e_out] = rate_loss(output, n_out, T, sample.label, loss_spec);
            loss_sum += double(loss);
            auto grads = backward(net, cache, e_out);
            clip_gradients(grads, cfg.grad_clip);
            adam_step(net, grads, state, cfg.train_delays);
        }
        auto [test_acc, confusion] = evaluate(net, test, n_classes);
        TrainReport::Epoch entry;
        entry.train_loss = loss_sum / double(train.size());
        entry.train_acc = double(correct) / double(train.size());
        entry.test_acc = test_acc;
        entry.wall_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count();
        report.epochs.push_back(entry);
        if (cfg.on_epoch) cfg.on_epoch(epoch, entry);
        if (test_acc > report.best_test_acc) {
            report.best_test_acc = test_acc;
            report.best_epoch = epoch;
            report.confusion = confusion;
            best = net;
        }
        if (cfg.target_test_acc > 0.0 && test_acc >= cfg.target_test_acc) break;
    }
    report.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return {std::move(report), std::move(best)};
}

}  // namespace ndm
