// Adam, EMA target updates, and a central finite-difference gradient checker.
#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hstcl/common.hpp"

namespace hstcl {

// Adam state over one flat parameter vector.
struct AdamState {
    std::vector<double> m; // first moment
    std::vector<double> v; // second moment
    long step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(size_t n = 0, double lr_ = 1e-3) : m(n, 0.0), v(n, 0.0), lr(lr_) {}
};

// Standard bias-corrected Adam update: p -= lr * m_hat / (sqrt(v_hat) + eps).
inline void adam_step(AdamState& st, std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        throw ShapeError("adam_step: parameter/gradient/state size mismatch");
    for (double g : grads)
        if (!std::isfinite(g)) throw DivergenceError("adam_step: non-finite gradient");
    st.step += 1;
    const double c1 = 1.0 - std::pow(st.beta1, double(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, double(st.step));
    for (size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
        const double mh = st.m[i] / c1;
        const double vh = st.v[i] / c2;
        params[i] -= st.lr * mh / (std::sqrt(vh) + st.eps);
    }
}

// target <- eta * target + (1 - eta) * online, elementwise.
inline void ema_update(std::span<double> target, std::span<const double> online, double eta) {
    if (eta < 0.0 || eta > 1.0) throw ConfigError("ema_update: eta must lie in [0, 1]");
    if (target.size() != online.size()) throw ShapeError("ema_update: size mismatch");
    for (size_t i = 0; i < target.size(); ++i)
        target[i] = eta * target[i] + (1.0 - eta) * online[i];
}

// Compares an analytic gradient against central finite differences
// (f(p+h) - f(p-h)) / 2h per coordinate, and returns the worst relative
// error. `denom_floor` keeps near-zero gradients from blowing up the ratio.
inline double grad_check(const std::function<double(const std::vector<double>&)>& loss_fn,
                         std::vector<double> params, std::span<const double> analytic_grad,
                         double h = 1e-5, double denom_floor = 1e-3) {
    double worst = 0.0;
    for (size_t i = 0; i < params.size(); ++i) {
        const double orig = params[i];
        params[i] = orig + h;
        const double fp = loss_fn(params);
        params[i] = orig - h;
        const double fm = loss_fn(params);
        params[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = analytic_grad[i];
        const double denom = std::max({std::fabs(fd), std::fabs(a), denom_floor});
        worst = std::max(worst, std::fabs(fd - a) / denom);
    }
    return worst;
}

} // namespace hstcl
