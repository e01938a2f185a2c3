// Reverse-mode gradients over the closed op set the encoders need:
// dense, add/sub, tanh, mean pooling, softmax attention, cosine dissimilarity.
// Values live in one arena per tape; the tape is rebuilt per slice and reused.
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "hstcl/common.hpp"
#include "hstcl/params.hpp"
#include "hstcl/tensor.hpp"

namespace hstcl {

class Tape {
public:
    explicit Tape(const ParamStore& params) : P_(&params) {}

    int input(std::span<const double> v) {
        Node n;
        n.op = Op::Input;
        alloc(n, v.size());
        std::copy(v.begin(), v.end(), vals_.begin() + long(n.off));
        return push(n);
    }

    int dense(int layer, int x) {
        const auto& l = P_->layer(layer);
        if (node(x).len != l.in) throw ShapeError("tape dense: input size != in_dim");
        Node n;
        n.op = Op::Dense;
        n.a = x;
        n.layer = layer;
        alloc(n, l.out);
        P_->apply(layer, val_ptr(x), vals_.data() + n.off);
        return push(n);
    }

    int add(int a, int b) { return binary(Op::Add, a, b); }
    int sub(int a, int b) { return binary(Op::Sub, a, b); }

    // the bias vector of a dense layer as a differentiable node
    int bias(int layer) {
        const auto& l = P_->layer(layer);
        if (!l.bias) throw ShapeError("tape bias: layer has no bias");
        Node n;
        n.op = Op::Bias;
        n.layer = layer;
        alloc(n, l.out);
        const double* b = P_->flat().data() + l.b_off;
        std::copy(b, b + l.out, vals_.begin() + long(n.off));
        return push(n);
    }

    int tanh_(int a) {
        Node n;
        n.op = Op::Tanh;
        n.a = a;
        alloc(n, node(a).len);
        const double* x = val_ptr(a);
        for (size_t i = 0; i < n.len; ++i) vals_[n.off + i] = std::tanh(x[i]);
        return push(n);
    }

    int mean(std::span<const int> xs) {
        if (xs.empty()) throw DegenerateInputError("tape mean of an empty set");
        const size_t len = node(xs[0]).len;
        Node n;
        n.op = Op::Mean;
        n.args_off = int(args_.size());
        n.nargs = int(xs.size());
        for (int id : xs) {
            if (node(id).len != len) throw ShapeError("tape mean: length mismatch");
            args_.push_back(id);
        }
        alloc(n, len);
        for (size_t i = 0; i < len; ++i) {
            double s = 0.0;
            for (int id : xs) s += val_ptr(id)[i];
            vals_[n.off + i] = s / double(xs.size());
        }
        return push(n);
    }

    // out = sum_i alpha_i * v_i with alpha = softmax(scale * q . k_i).
    int attention(int q, std::span<const int> keys, std::span<const int> vals, double scale) {
        if (keys.empty() || keys.size() != vals.size())
            throw ShapeError("tape attention: empty or mismatched key/value sets");
        const size_t nk = keys.size();
        const size_t dim = node(vals[0]).len;
        Node n;
        n.op = Op::Attention;
        n.a = q;
        n.c = scale;
        n.args_off = int(args_.size());
        n.nargs = int(2 * nk);
        for (int id : keys) args_.push_back(id);
        for (int id : vals) args_.push_back(id);
        n.aux_off = aux_.size();
        aux_.resize(aux_.size() + nk);
        alloc(n, dim);
        // scores then stable softmax
        std::span<const double> qv{val_ptr(q), node(q).len};
        double mx = -1e300;
        for (size_t i = 0; i < nk; ++i) {
            double a = scale * dot(qv, {val_ptr(keys[i]), node(keys[i]).len});
            aux_[n.aux_off + i] = a;
            mx = std::max(mx, a);
        }
        double z = 0.0;
        for (size_t i = 0; i < nk; ++i) {
            aux_[n.aux_off + i] = std::exp(aux_[n.aux_off + i] - mx);
            z += aux_[n.aux_off + i];
        }
        for (size_t i = 0; i < nk; ++i) aux_[n.aux_off + i] /= z;
        for (size_t i = 0; i < nk; ++i) {
            const double a = aux_[n.aux_off + i];
            const double* vv = val_ptr(vals[i]);
            for (size_t d = 0; d < dim; ++d) vals_[n.off + d] += a * vv[d];
        }
        return push(n);
    }

    // scalar node: (1 - cos(u, v)) / 2
    int cosine(int u, int v) {
        if (node(u).len != node(v).len) throw ShapeError("tape cosine: size mismatch");
        Node n;
        n.op = Op::Cosine;
        n.a = u;
        n.b = v;
        n.aux_off = aux_.size();
        aux_.resize(aux_.size() + 3);
        alloc(n, 1);
        std::span<const double> uv{val_ptr(u), node(u).len}, vv{val_ptr(v), node(v).len};
        const double nu = norm2(uv), nv = norm2(vv);
        if (nu == 0.0 || nv == 0.0) throw DegenerateInputError("tape cosine of zero-norm vector");
        const double s = dot(uv, vv) / (nu * nv);
        aux_[n.aux_off] = s;
        aux_[n.aux_off + 1] = nu;
        aux_[n.aux_off + 2] = nv;
        vals_[n.off] = 0.5 * (1.0 - std::clamp(s, -1.0, 1.0));
        return push(n);
    }

    std::span<const double> value(int id) const { return {val_ptr(id), node(id).len}; }
    double scalar(int id) const { return vals_[node(id).off]; }
    size_t node_count() const { return nodes_.size(); }

    // Accumulates d(loss)/d(params) into param_grads (loss must be scalar).
    void backward(int loss, std::vector<double>& param_grads) {
        if (node(loss).len != 1) throw ShapeError("tape backward: loss must be scalar");
        if (param_grads.size() != P_->size()) throw ShapeError("tape backward: grad size mismatch");
        grads_.assign(vals_.size(), 0.0);
        grads_[node(loss).off] = 1.0;
        for (size_t idx = nodes_.size(); idx-- > 0;) {
            const Node& n = nodes_[idx];
            const double* g = grads_.data() + n.off;
            switch (n.op) {
            case Op::Input:
                break;
            case Op::Bias: {
                const auto& l = P_->layer(n.layer);
                double* db = param_grads.data() + l.b_off;
                for (size_t i = 0; i < n.len; ++i) db[i] += g[i];
                break;
            }
            case Op::Dense: {
                const auto& l = P_->layer(n.layer);
                dense_backward_raw(P_->flat().data() + l.w_off, l.out, l.in, val_ptr(n.a), g,
                                   grad_ptr(n.a), param_grads.data() + l.w_off,
                                   l.bias ? param_grads.data() + l.b_off : nullptr);
                break;
            }
            case Op::Add: {
                double *da = grad_ptr(n.a), *db = grad_ptr(n.b);
                for (size_t i = 0; i < n.len; ++i) {
                    da[i] += g[i];
                    db[i] += g[i];
                }
                break;
            }
            case Op::Sub: {
                double *da = grad_ptr(n.a), *db = grad_ptr(n.b);
                for (size_t i = 0; i < n.len; ++i) {
                    da[i] += g[i];
                    db[i] -= g[i];
                }
                break;
            }
            case Op::Tanh: {
                double* da = grad_ptr(n.a);
                const double* y = vals_.data() + n.off;
                for (size_t i = 0; i < n.len; ++i) da[i] += g[i] * (1.0 - y[i] * y[i]);
                break;
            }
            case Op::Mean: {
                const double inv = 1.0 / double(n.nargs);
                for (int k = 0; k < n.nargs; ++k) {
                    double* da = grad_ptr(args_[size_t(n.args_off) + size_t(k)]);
                    for (size_t i = 0; i < n.len; ++i) da[i] += g[i] * inv;
                }
                break;
            }
            case Op::Attention: {
                const size_t nk = size_t(n.nargs) / 2;
                const int* keys = args_.data() + n.args_off;
                const int* vls = keys + nk;
                const double* alpha = aux_.data() + n.aux_off;
                const size_t dim = n.len;
                const size_t qd = node(n.a).len;
                std::span<const double> qv{val_ptr(n.a), qd};
                double S = 0.0;
                dalpha_.assign(nk, 0.0);
                for (size_t i = 0; i < nk; ++i) {
                    const double* vv = val_ptr(vls[i]);
                    double da = 0.0;
                    for (size_t d = 0; d < dim; ++d) da += g[d] * vv[d];
                    dalpha_[i] = da;
                    S += alpha[i] * da;
                    double* dv = grad_ptr(vls[i]);
                    for (size_t d = 0; d < dim; ++d) dv[d] += alpha[i] * g[d];
                }
                double* dq = grad_ptr(n.a);
                for (size_t i = 0; i < nk; ++i) {
                    const double ds = alpha[i] * (dalpha_[i] - S) * n.c;
                    const double* kv = val_ptr(keys[i]);
                    double* dk = grad_ptr(keys[i]);
                    for (size_t d = 0; d < qd; ++d) {
                        dq[d] += ds * kv[d];
                        dk[d] += ds * qv[d];
                    }
                }
                break;
            }
            case Op::Cosine: {
                const double s = aux_[n.aux_off], nu = aux_[n.aux_off + 1], nv = aux_[n.aux_off + 2];
                const double ds = -0.5 * g[0];
                const size_t dim = node(n.a).len;
                const double *u = val_ptr(n.a), *v = val_ptr(n.b);
                double *du = grad_ptr(n.a), *dv = grad_ptr(n.b);
                const double inv_uv = 1.0 / (nu * nv);
                for (size_t i = 0; i < dim; ++i) {
                    du[i] += ds * (v[i] * inv_uv - s * u[i] / (nu * nu));
                    dv[i] += ds * (u[i] * inv_uv - s * v[i] / (nv * nv));
                }
                break;
            }
            }
        }
    }

    void reset() {
        nodes_.clear();
        vals_.clear();
        grads_.clear();
        args_.clear();
        aux_.clear();
    }

private:
    enum class Op { Input, Bias, Dense, Add, Sub, Tanh, Mean, Attention, Cosine };
    struct Node {
        Op op;
        int a = -1, b = -1;
        int layer = -1;
        int args_off = 0, nargs = 0;
        size_t off = 0, len = 0;
        size_t aux_off = 0;
        double c = 0.0;
    };

    const ParamStore* P_;
    std::vector<Node> nodes_;
    std::vector<double> vals_, grads_, aux_;
    std::vector<int> args_;
    std::vector<double> dalpha_;

    const Node& node(int id) const { return nodes_[size_t(id)]; }
    const double* val_ptr(int id) const { return vals_.data() + nodes_[size_t(id)].off; }
    double* grad_ptr(int id) { return grads_.data() + nodes_[size_t(id)].off; }

    void alloc(Node& n, size_t len) {
        n.off = vals_.size();
        n.len = len;
        vals_.resize(vals_.size() + len, 0.0);
    }
    int push(Node n) {
        nodes_.push_back(n);
        return int(nodes_.size()) - 1;
    }
    int binary(Op op, int a, int b) {
        if (node(a).len != node(b).len) throw ShapeError("tape binary op: size mismatch");
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        alloc(n, node(a).len);
        const double *x = val_ptr(a), *y = val_ptr(b);
        for (size_t i = 0; i < n.len; ++i)
            vals_[n.off + i] = op == Op::Add ? x[i] + y[i] : x[i] - y[i];
        return push(n);
    }
};

} // namespace hstcl
