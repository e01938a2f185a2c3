// Dense numeric kernel: tensors, affine layers, softmax, cosine dissimilarity.
// Everything is 64-bit; small sizes, determinism over speed.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hstcl/common.hpp"

namespace hstcl {

struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> data; // row-major

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0);
    }
    Tensor(std::vector<size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape)) throw ShapeError("tensor data length does not match shape");
    }

    static size_t numel_of(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t d : s) n *= d;
        return n;
    }
    size_t numel() const { return data.size(); }
    bool finite() const { return all_finite(data); }

    double& at(size_t r, size_t c) { return data[r * shape[1] + c]; }
    double at(size_t r, size_t c) const { return data[r * shape[1] + c]; }
};

// Affine layer parameters. An empty bias tensor means "no bias".
struct DenseParams {
    Tensor weight; // out_dim x in_dim
    Tensor bias;   // out_dim, or empty

    size_t in_dim() const { return weight.shape.size() == 2 ? weight.shape[1] : 0; }
    size_t out_dim() const { return weight.shape.size() == 2 ? weight.shape[0] : 0; }
    bool has_bias() const { return !bias.data.empty(); }
};

// ---- raw kernels over spans (used by both the plain and tape paths) ----

inline void dense_apply_raw(const double* W, const double* b, size_t out, size_t in,
                            const double* x, double* y) {
    for (size_t r = 0; r < out; ++r) {
        double acc = b ? b[r] : 0.0;
        const double* wr = W + r * in;
        for (size_t c = 0; c < in; ++c) acc += wr[c] * x[c];
        y[r] = acc;
    }
}

// dx += W^T g ; dW += g x^T ; db += g
inline void dense_backward_raw(const double* W, size_t out, size_t in, const double* x,
                               const double* g, double* dx, double* dW, double* db) {
    for (size_t r = 0; r < out; ++r) {
        const double gr = g[r];
        const double* wr = W + r * in;
        double* dwr = dW ? dW + r * in : nullptr;
        if (dx)
            for (size_t c = 0; c < in; ++c) dx[c] += wr[c] * gr;
        if (dwr)
            for (size_t c = 0; c < in; ++c) dwr[c] += gr * x[c];
        if (db) db[r] += gr;
    }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// ---- public operations ----

inline Tensor dense_forward(const DenseParams& p, const Tensor& x) {
    if (p.weight.shape.size() != 2) throw ShapeError("dense weight must be a matrix");
    const size_t in = p.in_dim(), out = p.out_dim();
    if (x.shape.empty() || x.shape.back() != in)
        throw ShapeError("dense input: last dimension " +
                         std::to_string(x.shape.empty() ? 0 : x.shape.back()) +
                         " != in_dim " + std::to_string(in));
    if (p.has_bias() && p.bias.numel() != out) throw ShapeError("dense bias length != out_dim");
    const size_t rows = x.numel() / in;
    std::vector<size_t> yshape(x.shape);
    yshape.back() = out;
    Tensor y(yshape);
    for (size_t r = 0; r < rows; ++r)
        dense_apply_raw(p.weight.data.data(), p.has_bias() ? p.bias.data.data() : nullptr, out, in,
                        x.data.data() + r * in, y.data.data() + r * out);
    return y;
}

// Numerically stable softmax (max subtraction). Output sums to 1.
inline std::vector<double> softmax(std::span<const double> scores) {
    if (scores.empty()) throw DegenerateInputError("softmax of an empty set");
    double m = scores[0];
    for (double s : scores) m = std::max(m, s);
    std::vector<double> out(scores.size());
    double z = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] - m);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

inline void softmax_inplace(std::span<double> scores) {
    if (scores.empty()) throw DegenerateInputError("softmax of an empty set");
    double m = scores[0];
    for (double s : scores) m = std::max(m, s);
    double z = 0.0;
    for (double& s : scores) {
        s = std::exp(s - m);
        z += s;
    }
    for (double& s : scores) s /= z;
}

// d(u, v) = (1 - cos(u, v)) / 2, in [0, 1].
inline double cosine_dissim(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw ShapeError("cosine_dissim: size mismatch");
    const double nu = norm2(u), nv = norm2(v);
    if (nu == 0.0 || nv == 0.0) throw DegenerateInputError("cosine_dissim of a zero-norm vector");
    double c = dot(u, v) / (nu * nv);
    c = std::clamp(c, -1.0, 1.0);
    return 0.5 * (1.0 - c);
}

inline double cosine_dissim(const Tensor& u, const Tensor& v) {
    return cosine_dissim(std::span<const double>(u.data), std::span<const double>(v.data));
}

inline double cosine_dissim(const std::vector<double>& u, const std::vector<double>& v) {
    return cosine_dissim(std::span<const double>(u), std::span<const double>(v));
}

} // namespace hstcl
