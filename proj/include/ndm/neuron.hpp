#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "ndm/errors.hpp"

namespace ndm {

// CUBA LIF constants plus the surrogate/loss parameters that travel with them.
template <typename Real>
struct CubaParams {
    Real v_thr = Real(1.25);
    Real current_decay = Real(0.25);
    Real voltage_decay = Real(0.03);
    Real tau_grad = Real(0.03);
    Real scale_grad = Real(3.0);
    Real true_rate = Real(0.2);
    Real false_rate = Real(0.03);

    void validate() const {
        if (!(current_decay >= Real(0) && current_decay < Real(1)))
            throw DomainError("current_decay must be in [0,1)");
        if (!(voltage_decay >= Real(0) && voltage_decay < Real(1)))
            throw DomainError("voltage_decay must be in [0,1)");
        if (!(v_thr > Real(0))) throw DomainError("v_thr must be positive");
        if (!(tau_grad > Real(0))) throw DomainError("tau_grad must be positive");
        if (!(scale_grad > Real(0))) throw DomainError("scale_grad must be positive");
        if (!(false_rate >= Real(0) && false_rate <= true_rate && true_rate <= Real(1)))
            throw DomainError("require 0 <= false_rate <= true_rate <= 1");
    }

    template <typename R2>
    CubaParams<R2> cast() const {
        return CubaParams<R2>{R2(v_thr),     R2(current_decay), R2(voltage_decay),
                              R2(tau_grad),  R2(scale_grad),    R2(true_rate),
                              R2(false_rate)};
    }
};

template <typename Real>
struct NeuronState {
    Real i = Real(0);  // synaptic current
    Real v = Real(0);  // membrane potential (0 right after a spike)
};

// One discrete step: current update, voltage update, threshold with hard reset.
template <typename Real>
inline int cuba_step(NeuronState<Real>& state, Real weighted_input,
                     const CubaParams<Real>& p) {
    if (!std::isfinite(weighted_input))
        throw NumericError("cuba_step: non-finite input");
    state.i = (Real(1) - p.current_decay) * state.i + weighted_input;
    const Real v_pre = (Real(1) - p.voltage_decay) * state.v + state.i;
    if (v_pre >= p.v_thr) {
        state.v = Real(0);
        return 1;
    }
    state.v = v_pre;
    return 0;
}

// Impulse response of the current filter cascaded into the voltage filter:
// eps[t] = sum_{s=0..t} (1-a_v)^(t-s) * (1-a_i)^s.
template <typename Real>
inline std::vector<Real> response_kernel(const CubaParams<Real>& p, std::size_t length) {
    if (length < 1) throw DomainError("response_kernel: length must be >= 1");
    std::vector<Real> eps(length);
    Real i = Real(0);
    Real v = Real(0);
    for (std::size_t t = 0; t < length; ++t) {
        i = (Real(1) - p.current_decay) * i + (t == 0 ? Real(1) : Real(0));
        v = (Real(1) - p.voltage_decay) * v + i;
        eps[t] = v;
    }
    return eps;
}

// Two-sided exponential surrogate, peaked at threshold. Swappable if an
// alternative shape is ever needed; everything downstream goes through here.
// The density must stay strictly positive: far from threshold the exponential
// underflows to exactly 0, which would permanently freeze any unit whose
// membrane drifted out of range. Clamp at sqrt(min_normal) so the value and
// its square (Adam's second moment) both remain representable.
template <typename Real>
inline Real surrogate_pdf(Real v, const CubaParams<Real>& p) {
    if (!std::isfinite(v)) throw NumericError("surrogate_pdf: non-finite potential");
    const Real rho = (p.scale_grad / p.v_thr) *
                     std::exp(-std::abs(v - p.v_thr) / (p.tau_grad * p.v_thr));
    const Real floor = std::sqrt(std::numeric_limits<Real>::min());
    return rho < floor ? floor : rho;
}

// In-place forward cascade filter over a [T, n] time-major signal; equivalent
// to per-channel convolution with response_kernel.
template <typename Real>
inline void psp_filter(std::vector<Real>& signal, std::size_t n, std::size_t T,
                       const CubaParams<Real>& p) {
    const Real ki = Real(1) - p.current_decay;
    const Real kv = Real(1) - p.voltage_decay;
    // current filter
    for (std::size_t t = 1; t < T; ++t) {
        Real* cur = signal.data() + t * n;
        const Real* prev = signal.data() + (t - 1) * n;
        for (std::size_t j = 0; j < n; ++j) cur[j] += ki * prev[j];
    }
    // voltage filter
    for (std::size_t t = 1; t < T; ++t) {
        Real* cur = signal.data() + t * n;
        const Real* prev = signal.data() + (t - 1) * n;
        for (std::size_t j = 0; j < n; ++j) cur[j] += kv * prev[j];
    }
}

// In-place reverse-time correlation with the response kernel:
// out[t] = sum_{s>=0} eps[s] * e[t+s], truncated at T.
template <typename Real>
inline void psp_correlate(std::vector<Real>& signal, std::size_t n, std::size_t T,
                          const CubaParams<Real>& p) {
    const Real ki = Real(1) - p.current_decay;
    const Real kv = Real(1) - p.voltage_decay;
    for (std::size_t t = T - 1; t-- > 0;) {
        Real* cur = signal.data() + t * n;
        const Real* next = signal.data() + (t + 1) * n;
        for (std::size_t j = 0; j < n; ++j) cur[j] += kv * next[j];
    }
    for (std::size_t t = T - 1; t-- > 0;) {
        Real* cur = signal.data() + t * n;
        const Real* next = signal.data() + (t + 1) * n;
        for (std::size_t j = 0; j < n; ++j) cur[j] += ki * next[j];
    }
}

}  // namespace ndm
