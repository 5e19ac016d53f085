#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "ndm/neuron.hpp"

using namespace ndm;

TEST_CASE("cuba_step: zero state and input stay at rest") {
    CubaParams<double> p;
    NeuronState<double> s;
    CHECK(cuba_step(s, 0.0, p) == 0);
    CHECK(s.i == 0.0);
    CHECK(s.v == 0.0);
}

TEST_CASE("cuba_step: two-step recurrence crosses threshold") {
    CubaParams<double> p;
    NeuronState<double> s;
    CHECK(cuba_step(s, 1.0, p) == 0);
    CHECK(s.i == Catch::Approx(1.0));
    CHECK(s.v == Catch::Approx(1.0));
    // next step, no input: i = 0.75, v = 0.97 + 0.75 = 1.72 >= 1.25
    CHECK(cuba_step(s, 0.0, p) == 1);
    CHECK(s.i == Catch::Approx(0.75));
    CHECK(s.v == 0.0);
}

TEST_CASE("cuba_step: strong input spikes immediately") {
    CubaParams<double> p;
    NeuronState<double> s;
    CHECK(cuba_step(s, 2.0, p) == 1);
    CHECK(s.v == 0.0);
}

TEST_CASE("cuba_step: non-finite input rejected") {
    CubaParams<double> p;
    NeuronState<double> s;
    CHECK_THROWS_AS(cuba_step(s, std::numeric_limits<double>::quiet_NaN(), p), NumericError);
}

TEST_CASE("cuba_step: zero input decays monotonically") {
    CubaParams<double> p;
    NeuronState<double> s;
    cuba_step(s, 1.2, p);
    double prev_i = s.i, prev_v = s.v;
    for (int t = 0; t < 50; ++t) {
        const int spike = cuba_step(s, 0.0, p);
        if (spike) {
            prev_i = s.i;
            prev_v = 0.0;
            continue;
        }
        CHECK(std::abs(s.i) <= std::abs(prev_i));
        CHECK(std::abs(s.v) <= std::abs(prev_v) + std::abs(prev_i));
        prev_i = s.i;
        prev_v = s.v;
    }
}

TEST_CASE("response_kernel: known leading values") {
    CubaParams<double> p;
    const auto eps = response_kernel(p, 3);
    CHECK(eps[0] == Catch::Approx(1.0));
    CHECK(eps[1] == Catch::Approx(1.72));
    CHECK(eps[2] == Catch::Approx(0.97 * 1.72 + 0.75 * 0.75));
}

TEST_CASE("response_kernel: instant decay is memoryless") {
    CubaParams<double> p;
    p.current_decay = 1.0;
    p.voltage_decay = 1.0;
    const auto eps = response_kernel(p, 4);
    CHECK(eps[0] == Catch::Approx(1.0));
    CHECK(eps[1] == Catch::Approx(0.0).margin(1e-12));
    CHECK(eps[2] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("response_kernel: matches the explicit double sum") {
    CubaParams<double> p;
    const auto eps = response_kernel(p, 20);
    for (int t = 0; t < 20; ++t) {
        double ref = 0;
        for (int s = 0; s <= t; ++s)
            ref += std::pow(1.0 - p.voltage_decay, t - s) * std::pow(1.0 - p.current_decay, s);
        CHECK(eps[t] == Catch::Approx(ref));
    }
}

TEST_CASE("surrogate_pdf: peak value and symmetry") {
    CubaParams<double> p;
    CHECK(surrogate_pdf(p.v_thr, p) == Catch::Approx(3.0 / 1.25));
    for (double d : {0.01, 0.3, 2.0})
        CHECK(surrogate_pdf(p.v_thr + d, p) == Catch::Approx(surrogate_pdf(p.v_thr - d, p)));
    CHECK(surrogate_pdf(1e6, p) == Catch::Approx(0.0).margin(1e-30));
    CHECK(surrogate_pdf(-1e6, p) == Catch::Approx(0.0).margin(1e-30));
    // strictly positive, argmax at threshold
    double best = 0;
    double best_v = 0;
    for (double v = -2; v < 4; v += 1e-3) {
        const double r = surrogate_pdf(v, p);
        CHECK(r > 0.0);
        if (r > best) {
            best = r;
            best_v = v;
        }
    }
    CHECK(best_v == Catch::Approx(p.v_thr).margin(2e-3));
}

TEST_CASE("linear regime: recurrence equals kernel convolution") {
    CubaParams<float> p;
    p.v_thr = std::numeric_limits<float>::infinity();
    const std::size_t T = 128;
    const auto eps = response_kernel(p, T);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> dist(-1.f, 1.f);
    std::vector<float> x(T);
    for (auto& v : x) v = dist(rng);

    NeuronState<float> s;
    float max_err = 0.f;
    for (std::size_t t = 0; t < T; ++t) {
        cuba_step(s, x[t], p);
        double ref = 0;
        for (std::size_t k = 0; k <= t; ++k) ref += double(eps[k]) * double(x[t - k]);
        max_err = std::max(max_err, std::abs(s.v - float(ref)));
    }
    CHECK(max_err <= 1e-5f);
}

TEST_CASE("psp_filter and psp_correlate match explicit sums") {
    CubaParams<double> p;
    const std::size_t T = 12, n = 3;
    const auto eps = response_kernel(p, T);
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> x(n * T);
    for (auto& v : x) v = dist(rng);

    auto filtered = x;
    psp_filter(filtered, n, T, p);
    auto correlated = x;
    psp_correlate(correlated, n, T, p);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t t = 0; t < T; ++t) {
            double conv = 0, corr = 0;
            for (std::size_t s = 0; s <= t; ++s) conv += eps[s] * x[(t - s) * n + j];
            for (std::size_t s = 0; t + s < T; ++s) corr += eps[s] * x[(t + s) * n + j];
            CHECK(filtered[t * n + j] == Catch::Approx(conv));
            CHECK(correlated[t * n + j] == Catch::Approx(corr));
        }
}

TEST_CASE("params validation") {
    CubaParams<double> p;
    CHECK_NOTHROW(p.validate());
    p.true_rate = 0.01;  // below false_rate
    CHECK_THROWS_AS(p.validate(), DomainError);
}
