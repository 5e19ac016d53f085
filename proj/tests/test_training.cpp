#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "dense_reference.hpp"
#include "ndm/layers.hpp"
#include "ndm/synth.hpp"
#include "ndm/training.hpp"

using namespace ndm;
using ndm_test::DenseReference;
using ndm_test::make_tensor;
using ndm_test::random_dense_chain;

TEST_CASE("rate_loss: exact target rate contributes zero") {
    std::vector<double> out(10, 0.0);
    out[0] = out[5] = 1.0;  // 2 spikes over T=10, rate 0.2
    auto [loss, e] = rate_loss(out, 1, 10, 0, RateLossSpec{0.2, 0.03});
    CHECK(loss == 0.0);
    for (double v : e) CHECK(v == 0.0);
}

TEST_CASE("rate_loss: squared residual and uniform error spread") {
    std::vector<double> out(10, 0.0);
    for (int t : {0, 2, 4, 6, 8}) out[t] = 1.0;  // rate 0.5
    auto [loss, e] = rate_loss(out, 1, 10, 0, RateLossSpec{0.2, 0.03});
    CHECK(loss == Catch::Approx(0.045));
    for (double v : e) CHECK(v == Catch::Approx(0.03));
}

TEST_CASE("rate_loss: all neurons on target gives zero everywhere") {
    const std::size_t n = 3, T = 100;
    std::vector<double> out(n * T, 0.0);
    // label 1 at rate 0.2 (20 spikes), others at 0.03 (3 spikes)
    for (std::size_t t = 0; t < 20; ++t) out[t * n + 1] = 1.0;
    for (std::size_t t = 0; t < 3; ++t) {
        out[t * n + 0] = 1.0;
        out[t * n + 2] = 1.0;
    }
    auto [loss, e] = rate_loss(out, n, T, 1, RateLossSpec{0.2, 0.03});
    CHECK(loss == 0.0);
    for (double v : e) CHECK(v == 0.0);
}

TEST_CASE("rate_loss: domain checks") {
    std::vector<double> out;
    CHECK_THROWS_AS(rate_loss(out, 1, 0, 0, RateLossSpec{}), DomainError);
    std::vector<double> out2(4, 0.0);
    CHECK_THROWS_AS(rate_loss(out2, 2, 2, 5, RateLossSpec{}), DomainError);
}

TEST_CASE("backward: zero output error gives zero gradients") {
    Network<double> net;
    net.input = {2, 1, 1};
    net.timesteps = 6;
    net.specs = {LayerSpec::dense(3), LayerSpec::dense(2)};
    net.init_weights(4);
    auto input = make_tensor(2, 1, 1, 6);
    input.at(0, 0, 0, 1) = 1;
    input.at(1, 0, 0, 3) = 1;
    auto [out, cache] = network_forward(net, input);
    const auto grads = backward(net, cache, std::vector<double>(2 * 6, 0.0));
    for (const auto& layer : grads.weights)
        for (double g : layer) CHECK(g == 0.0);
}

TEST_CASE("backward: 1-to-1 dense chain matches the hand-expanded sum") {
    Network<double> net;
    net.input = {1, 1, 1};
    net.timesteps = 5;
    net.specs = {LayerSpec::dense(1)};
    net.weights = {{1.1}};
    net.delays = {{}};
    auto input = make_tensor(1, 1, 1, 5);
    input.at(0, 0, 0, 0) = 1;
    input.at(0, 0, 0, 3) = 1;
    auto [out, cache] = network_forward(net, input);

    std::vector<double> e_out{0.1, -0.2, 0.3, 0.0, 0.25};
    const auto grads = backward(net, cache, e_out);

    DenseReference ref;
    ref.forward(net, tensor_to_signal<double>(input), 5);
    REQUIRE(ref.spikes.back() == out);
    const auto ref_grads = ref.backward(net, e_out, 5);
    REQUIRE(grads.weights[0].size() == 1);
    CHECK(grads.weights[0][0] == Catch::Approx(ref_grads[0][0]).epsilon(1e-10));
}

TEST_CASE("backward: linear in the output error") {
    Network<double> net;
    net.input = {3, 1, 1};
    net.timesteps = 6;
    net.specs = {LayerSpec::dense(2), LayerSpec::dense(2)};
    net.init_weights(8);
    auto input = make_tensor(3, 1, 1, 6);
    std::mt19937_64 rng(21);
    for (auto& v : input.values) v = (rng() & 1);
    auto [out, cache] = network_forward(net, input);

    std::vector<double> e1(2 * 6), e2(2 * 6);
    std::uniform_real_distribution<double> dist(-1, 1);
    for (auto& v : e1) v = dist(rng);
    for (auto& v : e2) v = dist(rng);
    std::vector<double> combo(2 * 6);
    for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = 2.0 * e1[i] - 0.5 * e2[i];

    const auto g1 = backward(net, cache, e1);
    const auto g2 = backward(net, cache, e2);
    const auto gc = backward(net, cache, combo);
    for (std::size_t l = 0; l < net.specs.size(); ++l)
        for (std::size_t i = 0; i < gc.weights[l].size(); ++i)
            CHECK(gc.weights[l][i] ==
                  Catch::Approx(2.0 * g1.weights[l][i] - 0.5 * g2.weights[l][i]).margin(1e-12));
}

TEST_CASE("gradient oracle: random small dense chains, 64-bit") {
    std::mt19937_64 rng(123);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<int> sizes;
        auto net = random_dense_chain(rng, 5, sizes);
        auto input = make_tensor(sizes[0], 1, 1, 5);
        for (auto& v : input.values) v = (rng() & 1);
        auto [out, cache] = network_forward(net, input);

        DenseReference ref;
        ref.forward(net, tensor_to_signal<double>(input), 5);
        REQUIRE(ref.spikes.back() == out);

        std::uniform_real_distribution<double> dist(-1, 1);
        std::vector<double> e_out(out.size());
        for (auto& v : e_out) v = dist(rng);

        const auto grads = backward(net, cache, e_out);
        const auto ref_grads = ref.backward(net, e_out, 5);
        for (std::size_t l = 0; l < net.specs.size(); ++l) {
            double scale = 1e-12;
            for (double g : ref_grads[l]) scale = std::max(scale, std::abs(g));
            for (std::size_t i = 0; i < ref_grads[l].size(); ++i)
                REQUIRE(std::abs(grads.weights[l][i] - ref_grads[l][i]) / scale <= 1e-4);
        }
    }
}

TEST_CASE("delay_grad: flat signal, symmetric spike, shifted spike") {
    const std::vector<double> flat{2, 2, 2};
    CHECK(delay_grad(flat, std::vector<double>{0, 1, 0}, 1, 3, 1)[0] == 0.0);

    const std::vector<double> bump{0, 1, 0};
    CHECK(delay_grad(bump, std::vector<double>{0, 1, 0}, 1, 3, 1)[0] == 0.0);

    const std::vector<double> late{0, 0, 1};
    CHECK(delay_grad(late, std::vector<double>{0, 1, 0}, 1, 3, 1)[0] == Catch::Approx(-0.5));

    CHECK_THROWS_AS(delay_grad(std::vector<double>{1}, std::vector<double>{1}, 1, 1, 1),
                    DomainError);
}

TEST_CASE("adam: zero gradient leaves parameters, advances the step") {
    Network<double> net;
    net.input = {1, 1, 1};
    net.timesteps = 2;
    net.specs = {LayerSpec::dense(1)};
    net.weights = {{0.5}};
    net.delays = {{}};
    auto state = AdamState<double>::for_network(net);
    Gradients<double> grads;
    grads.weights = {{0.0}};
    grads.delays = {{}};
    adam_step(net, grads, state);
    CHECK(net.weights[0][0] == 0.5);
    CHECK(state.step == 1);
}

TEST_CASE("adam: first step is approximately -lr * sign(g)") {
    for (double g : {0.7, -0.002, 123.0}) {
        Network<double> net;
        net.input = {1, 1, 1};
        net.timesteps = 2;
        net.specs = {LayerSpec::dense(1)};
        net.weights = {{1.0}};
        net.delays = {{}};
        auto state = AdamState<double>::for_network(net, 3e-3);
        Gradients<double> grads;
        grads.weights = {{g}};
        grads.delays = {{}};
        adam_step(net, grads, state);
        CHECK(net.weights[0][0] - 1.0 ==
              Catch::Approx(-3e-3 * (g > 0 ? 1.0 : -1.0)).epsilon(1e-4));
    }
}

TEST_CASE("adam: deterministic and bounded per-step change") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> dist(0.0, 1.0);
    Network<double> a, b;
    for (Network<double>* net : {&a, &b}) {
        net->input = {4, 1, 1};
        net->timesteps = 2;
        net->specs = {LayerSpec::dense(3)};
        net->init_weights(5);
        net->delays = {{}};
    }
    auto sa = AdamState<double>::for_network(a);
    auto sb = AdamState<double>::for_network(b);
    for (int step = 0; step < 100; ++step) {
        Gradients<double> grads;
        grads.weights.resize(1);
        grads.delays.resize(1);
        grads.weights[0].resize(12);
        for (auto& g : grads.weights[0]) g = dist(rng);
        const auto before = a.weights[0];
        adam_step(a, grads, sa);
        adam_step(b, grads, sb);
        CHECK(a.weights[0] == b.weights[0]);
        for (std::size_t i = 0; i < before.size(); ++i)
            CHECK(std::abs(a.weights[0][i] - before[i]) <= sa.lr * 1.1);
    }
}

TEST_CASE("adam: non-finite gradient names the layer") {
    Network<double> net;
    net.input = {1, 1, 1};
    net.timesteps = 2;
    net.specs = {LayerSpec::dense(1)};
    net.weights = {{1.0}};
    net.delays = {{}};
    auto state = AdamState<double>::for_network(net);
    Gradients<double> grads;
    grads.weights = {{std::numeric_limits<double>::quiet_NaN()}};
    grads.delays = {{}};
    CHECK_THROWS_WITH(adam_step(net, grads, state),
                      Catch::Matchers::ContainsSubstring("layer 0"));
}

namespace {

std::vector<LabeledTensor> tiny_synth_set(int classes, int per_class, std::uint64_t seed,
                                          double window, double bin,
                                          NoiseRegime noise = NoiseRegime::bright) {
    SynthConfig cfg;
    cfg.resolution = 16;
    cfg.duration = window;
    cfg.signal_event_rate = 3000;
    cfg.noise_regime = noise;
    std::vector<LabeledTensor> set;
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < per_class; ++i) {
            cfg.seed = seed * 1000003 + std::uint64_t(c) * 1009 + std::uint64_t(i);
            set.push_back({bin_to_spike_tensor(synth_generate(c, cfg), window, bin), c});
        }
    return set;
}

// 64-bit dynamics and a modest init gain keep the narrow surrogate band
// populated; the default learning rate is tuned for the full-size network, so
// the tiny suite trains at 3e-4.
Network<double> tiny_net(int classes, int T, std::uint64_t seed) {
    Network<double> net;
    net.input = {2, 16, 16};
    net.timesteps = T;
    net.specs = {LayerSpec::pool(2), LayerSpec::conv(8, 3, 1), LayerSpec::flatten(),
                 LayerSpec::dense(classes)};
    net.init_weights(seed, 0.2);
    return net;
}

}  // namespace

TEST_CASE("fit: zero epochs returns the initial evaluation only") {
    const auto train = tiny_synth_set(3, 2, 1, 2.0, 0.04);
    const auto test = tiny_synth_set(3, 1, 99, 2.0, 0.04);
    auto net = tiny_net(3, 50, 7);
    const auto weights_before = net.weights;
    FitConfig cfg;
    cfg.epochs = 0;
    auto [report, best] = fit(net, train, test, cfg);
    CHECK(report.epochs.empty());
    CHECK(report.best_epoch == -1);
    CHECK(best.weights == weights_before);
}

TEST_CASE("fit: deterministic under seed") {
    const auto train = tiny_synth_set(3, 3, 2, 2.0, 0.04);
    const auto test = tiny_synth_set(3, 1, 55, 2.0, 0.04);
    FitConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 11;
    auto [r1, n1] = fit(tiny_net(3, 50, 9), train, test, cfg);
    auto [r2, n2] = fit(tiny_net(3, 50, 9), train, test, cfg);
    REQUIRE(r1.epochs.size() == r2.epochs.size());
    for (std::size_t i = 0; i < r1.epochs.size(); ++i) {
        CHECK(r1.epochs[i].train_loss == r2.epochs[i].train_loss);
        CHECK(r1.epochs[i].train_acc == r2.epochs[i].train_acc);
        CHECK(r1.epochs[i].test_acc == r2.epochs[i].test_acc);
    }
    CHECK(r1.confusion == r2.confusion);
    CHECK(n1.weights == n2.weights);
}

TEST_CASE("fit: training loss after 20 epochs under half of epoch-1 loss") {
    const auto train = tiny_synth_set(3, 6, 3, 2.0, 0.04);
    const auto test = tiny_synth_set(3, 2, 81, 2.0, 0.04);
    FitConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 5;
    cfg.lr = 3e-4;
    cfg.grad_clip = 0.1;
    auto [report, best] = fit(tiny_net(3, 50, 5), train, test, cfg);
    REQUIRE(report.epochs.size() == 20);
    CHECK(report.epochs.back().train_loss < 0.5 * report.epochs.front().train_loss);
}

TEST_CASE("fit: loss descends over the first 5 epochs across a 20-seed panel") {
    int ok = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto train = tiny_synth_set(3, 20, 300 + seed, 2.0, 0.04, NoiseRegime::dark);
        const auto test = tiny_synth_set(3, 1, 900 + seed, 2.0, 0.04, NoiseRegime::dark);
        FitConfig cfg;
        cfg.epochs = 5;
        cfg.seed = seed;
        cfg.lr = 1e-4;
        cfg.grad_clip = 0.1;
        // the default denominator epsilon freezes seeds whose output layer
        // starts silent; a tiny epsilon lets those units recover
        cfg.adam_eps = 1e-30;
        auto [report, best] = fit(tiny_net(3, 50, seed), train, test, cfg);
        bool decreasing = true;
        for (std::size_t i = 1; i < report.epochs.size(); ++i)
            decreasing &= report.epochs[i].train_loss < report.epochs[i - 1].train_loss;
        ok += decreasing;
    }
    CHECK(ok >= 19);
}

TEST_CASE("predict: argmax with low-index tie break") {
    Network<double> net;
    net.input = {3, 1, 1};
    net.timesteps = 4;
    net.specs = {LayerSpec::dense(3)};
    net.weights = {std::vector<double>(9, 0.0)};
    net.delays = {{}};
    // zero network: all counts zero, tie resolves to class 0
    auto input = make_tensor(3, 1, 1, 4);
    input.at(1, 0, 0, 0) = 1;
    auto [cls, counts] = predict(net, input);
    CHECK(cls == 0);
    CHECK(counts == std::vector<long>{0, 0, 0});

    // diagonal weights relay the active channel
    for (int j = 0; j < 3; ++j) net.weights[0][j * 3 + j] = 2.0;
    auto input2 = make_tensor(3, 1, 1, 4);
    for (int t = 0; t < 4; ++t) input2.at(2, 0, 0, t) = 1;
    auto [cls2, counts2] = predict(net, input2);
    CHECK(cls2 == 2);
    CHECK(counts2[2] > 0);
}

TEST_CASE("evaluate: perfect and constant predictors, row-sum identity") {
    Network<double> net;
    net.input = {3, 1, 1};
    net.timesteps = 6;
    net.specs = {LayerSpec::dense(3)};
    net.weights = {std::vector<double>(9, 0.0)};
    net.delays = {{}};
    for (int j = 0; j < 3; ++j) net.weights[0][j * 3 + j] = 2.0;

    std::vector<LabeledTensor> samples;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 2 + c; ++i) {
            auto x = make_tensor(3, 1, 1, 6);
            for (int t = 0; t < 6; ++t) x.at(c, 0, 0, t) = 1;
            samples.push_back({std::move(x), c});
        }
    auto [acc, confusion] = evaluate(net, samples, 3);
    CHECK(acc == 1.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(confusion[i][j] == (i == j ? 2 + i : 0));

    // zero weights: constant class-0 predictor
    Network<double> zero = net;
    zero.weights = {std::vector<double>(9, 0.0)};
    auto [acc0, conf0] = evaluate(zero, samples, 3);
    CHECK(acc0 == Catch::Approx(2.0 / 9.0));
    for (int i = 0; i < 3; ++i) {
        long row = 0;
        for (int j = 0; j < 3; ++j) row += conf0[i][j];
        CHECK(row == 2 + i);
    }
    CHECK_THROWS_AS(evaluate(net, std::vector<LabeledTensor>{}, 3), DataError);
}

TEST_CASE("delays: forward shift and trained gradients stay finite") {
    Network<double> net;
    net.input = {2, 1, 1};
    net.timesteps = 8;
    net.specs = {LayerSpec::dense(1)};
    net.delays_enabled = true;
    net.weights = {{1.0, 1.0}};
    net.delays = {{1.0, 0.0}};
    auto input = make_tensor(2, 1, 1, 8);
    input.at(0, 0, 0, 2) = 1;
    auto [out, cache] = network_forward(net, input);
    // the delayed channel's contribution arrives one step later
    REQUIRE(cache.delayed[0].size() == 2 * 8);
    CHECK(cache.delayed[0][3 * 2 + 0] == 1.0);
    CHECK(cache.delayed[0][2 * 2 + 0] == 0.0);

    std::vector<double> e_out(8, 0.1);
    const auto grads = backward(net, cache, e_out);
    REQUIRE(grads.delays[0].size() == 2);
    for (double g : grads.delays[0]) CHECK(std::isfinite(g));
}
