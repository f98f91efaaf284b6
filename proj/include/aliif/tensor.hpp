// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with reverse-mode autodiff on an explicit tape.
// The op surface is exactly what the networks in this project need: matmul,
// 3x3 same-padding conv, relu, row softmax, bias adds, a few reshuffling ops
// and two losses. Ops run in float for training/inference and in double for
// the gradient-check tests; everything is templated on the scalar type.
//
// Determinism contract: every op accumulates in a fixed order that does not
// depend on how callers batch rows, so identical inputs give bitwise
// identical outputs and per-row results are independent of batch splits.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace aliif {

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

[[noreturn]] inline void dim_error(const std::string& msg) {
    throw std::invalid_argument(msg);
}

template <typename S>
struct TensorNode {
    std::vector<int> shape;
    std::vector<S> value;
    std::vector<S> grad;  // stays empty unless a backward pass reaches this node
    bool requires_grad = false;
};

template <typename S>
class TensorT {
public:
    TensorT() = default;

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        TensorT t;
        t.node_ = std::make_shared<TensorNode<S>>();
        t.node_->shape = std::move(shape);
        t.node_->value.assign(t.check_numel(), S(0));
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static TensorT full(std::vector<int> shape, S v, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (auto& x : t.node_->value) x = v;
        return t;
    }

    static TensorT from_data(std::vector<int> shape, std::vector<S> data,
                             bool requires_grad = false) {
        TensorT t;
        t.node_ = std::make_shared<TensorNode<S>>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        t.node_->requires_grad = requires_grad;
        if (static_cast<size_t>(t.check_numel()) != t.node_->value.size())
            dim_error("tensor: data size " + std::to_string(t.node_->value.size()) +
                      " does not match shape " + shape_str(t.node_->shape));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    int64_t numel() const {
        int64_t n = 1;
        for (int d : node_->shape) n *= d;
        return n;
    }

    std::span<S> data() { return node_->value; }
    std::span<const S> data() const { return node_->value; }
    S* ptr() { return node_->value.data(); }
    const S* ptr() const { return node_->value.data(); }
    S item() const {
        if (numel() != 1)
            dim_error("item: tensor " + shape_str(shape()) + " is not scalar");
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    std::span<S> grad() {
        if (!has_grad())
            throw std::logic_error("grad: tensor did not participate in a backward pass");
        return node_->grad;
    }
    std::span<const S> grad() const {
        if (!has_grad())
            throw std::logic_error("grad: tensor did not participate in a backward pass");
        return node_->grad;
    }
    // Allocates (or re-zeroes) the gradient buffer.
    void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }
    void drop_grad() { node_->grad.clear(); }

    std::shared_ptr<TensorNode<S>> node() const { return node_; }

private:
    int64_t check_numel() const {
        int64_t n = 1;
        for (int d : node_->shape) {
            if (d <= 0)
                dim_error("tensor: non-positive dimension in shape " + shape_str(node_->shape));
            n *= d;
        }
        return n;
    }

    std::shared_ptr<TensorNode<S>> node_;
};

// Ordered record of executed ops; backward replays it once, newest first.
// One tape per training step, built eagerly and consumed by backward().
template <typename S>
class TapeT {
public:
    void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }
    size_t size() const { return ops_.size(); }

    void run_backward_and_clear() {
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        ops_.clear();
    }

private:
    std::vector<std::function<void()>> ops_;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

namespace detail {

// Gradients flow only where they exist: a node whose grad buffer was never
// touched downstream contributes nothing.
template <typename S>
inline bool has_out_grad(const std::shared_ptr<TensorNode<S>>& n) {
    return !n->grad.empty();
}

template <typename S>
inline void ensure_grad(const std::shared_ptr<TensorNode<S>>& n) {
    if (n->grad.empty()) n->grad.assign(n->value.size(), S(0));
}

// C[m x n] += A[m x k] * B[k x n], register-tiled (6 rows x 2 vectors).
// Every output element is the same ascending-k chain of multiply-adds in
// every tile and tail path, so results do not depend on how callers split
// rows into batches, with no -ffast-math reassociation anywhere.
#if defined(__GNUC__) || defined(__clang__)
#define ALIIF_VEC_GEMM 1
typedef float gemm_vf __attribute__((vector_size(32)));
typedef double gemm_vd __attribute__((vector_size(32)));
template <typename S> struct GemmVec;
template <> struct GemmVec<float> {
    using V = gemm_vf;
    static constexpr int lanes = 8;
};
template <> struct GemmVec<double> {
    using V = gemm_vd;
    static constexpr int lanes = 4;
};

template <typename S, int MR>
inline void gemm_rows_tile(S* __restrict c, const S* __restrict a, const S* __restrict b,
                           int k, int n) {
    using V = typename GemmVec<S>::V;
    constexpr int L = GemmVec<S>::lanes;
    auto loadu = [](const S* p) {
        V v;
        __builtin_memcpy(&v, p, sizeof(V));
        return v;
    };
    auto storeu = [](S* p, V v) { __builtin_memcpy(p, &v, sizeof(V)); };
    int j = 0;
    for (; j + 2 * L <= n; j += 2 * L) {
        V acc0[MR], acc1[MR];
        for (int r = 0; r < MR; ++r) acc0[r] = V{}, acc1[r] = V{};
        const S* bp = b + j;
        for (int kk = 0; kk < k; ++kk, bp += n) {
            const V b0 = loadu(bp), b1 = loadu(bp + L);
            for (int r = 0; r < MR; ++r) {
                const V w = V{} + a[static_cast<size_t>(r) * k + kk];
                acc0[r] += w * b0;
                acc1[r] += w * b1;
            }
        }
        for (int r = 0; r < MR; ++r) {
            S* cr = c + static_cast<size_t>(r) * n + j;
            storeu(cr, loadu(cr) + acc0[r]);
            storeu(cr + L, loadu(cr + L) + acc1[r]);
        }
    }
    for (; j < n; ++j)
        for (int r = 0; r < MR; ++r) {
            S acc = S(0);
            for (int kk = 0; kk < k; ++kk)
                acc += a[static_cast<size_t>(r) * k + kk] * b[static_cast<size_t>(kk) * n + j];
            c[static_cast<size_t>(r) * n + j] += acc;
        }
}
#else
template <typename S, int MR>
inline void gemm_rows_tile(S* c, const S* a, const S* b, int k, int n) {
    for (int j = 0; j < n; ++j)
        for (int r = 0; r < MR; ++r) {
            S acc = S(0);
            for (int kk = 0; kk < k; ++kk)
                acc += a[static_cast<size_t>(r) * k + kk] * b[static_cast<size_t>(kk) * n + j];
            c[static_cast<size_t>(r) * n + j] += acc;
        }
}
#endif

template <typename S>
void gemm_accum(S* c, const S* a, const S* b, int m, int k, int n) {
    constexpr int MR = 6;
    int i = 0;
    for (; i + MR <= m; i += MR)
        gemm_rows_tile<S, MR>(c + static_cast<size_t>(i) * n, a + static_cast<size_t>(i) * k,
                              b, k, n);
    for (; i < m; ++i)
        gemm_rows_tile<S, 1>(c + static_cast<size_t>(i) * n, a + static_cast<size_t>(i) * k,
                             b, k, n);
}

template <typename S>
std::vector<S> transposed(const S* a, int rows, int cols) {
    std::vector<S> t(static_cast<size_t>(rows) * cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            t[static_cast<size_t>(j) * rows + i] = a[static_cast<size_t>(i) * cols + j];
    return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops. Every op takes an optional tape; with tape == nullptr (or when no
// input requires grad) the op is a pure forward function.

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b, TapeT<S>* tape = nullptr) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        dim_error("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                  shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<S> out = TensorT<S>::zeros({m, n});
    detail::gemm_accum(out.ptr(), a.ptr(), b.ptr(), m, k, n);

    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = out.node();
        tape->record([an, bn, on, m, k, n] {
            if (!detail::has_out_grad(on)) return;
            const S* g = on->grad.data();
            if (an->requires_grad) {
                detail::ensure_grad(an);
                auto bt = detail::transposed(bn->value.data(), k, n);
                detail::gemm_accum(an->grad.data(), g, bt.data(), m, n, k);
            }
            if (bn->requires_grad) {
                detail::ensure_grad(bn);
                auto at = detail::transposed(an->value.data(), m, k);
                detail::gemm_accum(bn->grad.data(), at.data(), g, k, m, n);
            }
        });
    }
    return out;
}

// 3x3 cross-correlation with zero padding 1; spatial size is preserved.
// input [C_in, H, W], kernel [C_out, C_in, 3, 3] -> [C_out, H, W].
template <typename S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& kernel,
                  TapeT<S>* tape = nullptr) {
    if (input.ndim() != 3 || kernel.ndim() != 4 || kernel.dim(2) != 3 || kernel.dim(3) != 3)
        dim_error("conv2d: expected input [C,H,W] and kernel [O,C,3,3], got " +
                  shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
    if (kernel.dim(1) != input.dim(0))
        dim_error("conv2d: channel mismatch, input " + shape_str(input.shape()) +
                  " vs kernel " + shape_str(kernel.shape()));
    const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int co = kernel.dim(0);
    TensorT<S> out = TensorT<S>::zeros({co, h, w});

    auto run_forward = [=](S* o, const S* x, const S* wt) {
        for (int oc = 0; oc < co; ++oc)
            for (int ic = 0; ic < ci; ++ic)
                for (int dy = 0; dy < 3; ++dy)
                    for (int dx = 0; dx < 3; ++dx) {
                        const S wv = wt[((static_cast<size_t>(oc) * ci + ic) * 3 + dy) * 3 + dx];
                        if (wv == S(0)) continue;
                        const int xlo = std::max(0, 1 - dx), xhi = std::min(w, w + 1 - dx);
                        for (int y = 0; y < h; ++y) {
                            const int iy = y + dy - 1;
                            if (iy < 0 || iy >= h) continue;
                            S* orow = o + (static_cast<size_t>(oc) * h + y) * w;
                            const S* xrow = x + (static_cast<size_t>(ic) * h + iy) * w + (dx - 1);
                            for (int xx = xlo; xx < xhi; ++xx) orow[xx] += wv * xrow[xx];
                        }
                    }
    };
    run_forward(out.ptr(), input.ptr(), kernel.ptr());

    if (tape && (input.requires_grad() || kernel.requires_grad())) {
        out.set_requires_grad(true);
        auto xn = input.node(), wn = kernel.node(), on = out.node();
        tape->record([=] {
            if (!detail::has_out_grad(on)) return;
            const S* g = on->grad.data();
            if (xn->requires_grad) {
                detail::ensure_grad(xn);
                S* gx = xn->grad.data();
                const S* wt = wn->value.data();
                for (int oc = 0; oc < co; ++oc)
                    for (int ic = 0; ic < ci; ++ic)
                        for (int dy = 0; dy < 3; ++dy)
                            for (int dx = 0; dx < 3; ++dx) {
                                const S wv =
                                    wt[((static_cast<size_t>(oc) * ci + ic) * 3 + dy) * 3 + dx];
                                if (wv == S(0)) continue;
                                const int xlo = std::max(0, 1 - dx),
                                          xhi = std::min(w, w + 1 - dx);
                                for (int y = 0; y < h; ++y) {
                                    const int iy = y + dy - 1;
                                    if (iy < 0 || iy >= h) continue;
                                    const S* grow = g + (static_cast<size_t>(oc) * h + y) * w;
                                    S* xrow =
                                        gx + (static_cast<size_t>(ic) * h + iy) * w + (dx - 1);
                                    for (int xx = xlo; xx < xhi; ++xx) xrow[xx] += wv * grow[xx];
                                }
                            }
            }
            if (wn->requires_grad) {
                detail::ensure_grad(wn);
                S* gw = wn->grad.data();
                const S* x = xn->value.data();
                for (int oc = 0; oc < co; ++oc)
                    for (int ic = 0; ic < ci; ++ic)
                        for (int dy = 0; dy < 3; ++dy)
                            for (int dx = 0; dx < 3; ++dx) {
                                S acc = S(0);
                                const int xlo = std::max(0, 1 - dx),
                                          xhi = std::min(w, w + 1 - dx);
                                for (int y = 0; y < h; ++y) {
                                    const int iy = y + dy - 1;
                                    if (iy < 0 || iy >= h) continue;
                                    const S* grow = g + (static_cast<size_t>(oc) * h + y) * w;
                                    const S* xrow =
                                        x + (static_cast<size_t>(ic) * h + iy) * w + (dx - 1);
                                    for (int xx = xlo; xx < xhi; ++xx) acc += grow[xx] * xrow[xx];
                                }
                                gw[((static_cast<size_t>(oc) * ci + ic) * 3 + dy) * 3 + dx] += acc;
                            }
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> relu(const TensorT<S>& x, TapeT<S>* tape = nullptr) {
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    const S* xv = x.ptr();
    S* ov = out.ptr();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) ov[i] = xv[i] > S(0) ? xv[i] : S(0);
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        tape->record([xn, on, n] {
            if (!detail::has_out_grad(on)) return;
            detail::ensure_grad(xn);
            const S* g = on->grad.data();
            const S* xv2 = xn->value.data();
            S* gx = xn->grad.data();
            // subgradient at 0 is 0
            for (int64_t i = 0; i < n; ++i)
                if (xv2[i] > S(0)) gx[i] += g[i];
        });
    }
    return out;
}

// Row-wise softmax with max subtraction. [N, K] -> [N, K]; a 1-D input is
// treated as a single row.
template <typename S>
TensorT<S> softmax_rows(const TensorT<S>& x, TapeT<S>* tape = nullptr) {
    if (x.ndim() < 1 || x.ndim() > 2 || x.numel() == 0)
        dim_error("softmax: expected non-empty [K] or [N,K], got " + shape_str(x.shape()));
    const int n = x.ndim() == 2 ? x.dim(0) : 1;
    const int k = x.ndim() == 2 ? x.dim(1) : x.dim(0);
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    const S* xv = x.ptr();
    S* ov = out.ptr();
    for (int i = 0; i < n; ++i) {
        const S* row = xv + static_cast<size_t>(i) * k;
        S* orow = ov + static_cast<size_t>(i) * k;
        S mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        S sum = S(0);
        for (int j = 0; j < k; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        const S inv = S(1) / sum;
        for (int j = 0; j < k; ++j) orow[j] *= inv;
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        tape->record([xn, on, n, k] {
            if (!detail::has_out_grad(on)) return;
            detail::ensure_grad(xn);
            const S* g = on->grad.data();
            const S* y = on->value.data();
            S* gx = xn->grad.data();
            for (int i = 0; i < n; ++i) {
                const size_t off = static_cast<size_t>(i) * k;
                S dot = S(0);
                for (int j = 0; j < k; ++j) dot += g[off + j] * y[off + j];
                for (int j = 0; j < k; ++j) gx[off + j] += y[off + j] * (g[off + j] - dot);
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b, TapeT<S>* tape = nullptr) {
    if (a.shape() != b.shape())
        dim_error("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    TensorT<S> out = TensorT<S>::zeros(a.shape());
    const S* av = a.ptr();
    const S* bv = b.ptr();
    S* ov = out.ptr();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = out.node();
        tape->record([an, bn, on, n] {
            if (!detail::has_out_grad(on)) return;
            const S* g = on->grad.data();
            if (an->requires_grad) {
                detail::ensure_grad(an);
                for (int64_t i = 0; i < n; ++i) an->grad[i] += g[i];
            }
            if (bn->requires_grad) {
                detail::ensure_grad(bn);
                for (int64_t i = 0; i < n; ++i) bn->grad[i] += g[i];
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b, TapeT<S>* tape = nullptr) {
    if (a.shape() != b.shape())
        dim_error("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    TensorT<S> out = TensorT<S>::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = out.node();
        tape->record([an, bn, on, n] {
            if (!detail::has_out_grad(on)) return;
            const S* g = on->grad.data();
            if (an->requires_grad) {
                detail::ensure_grad(an);
                for (int64_t i = 0; i < n; ++i) an->grad[i] += g[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                detail::ensure_grad(bn);
                for (int64_t i = 0; i < n; ++i) bn->grad[i] += g[i] * an->value[i];
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> scale(const TensorT<S>& x, S c, TapeT<S>* tape = nullptr) {
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out.ptr()[i] = c * x.ptr()[i];
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        tape->record([xn, on, n, c] {
            if (!detail::has_out_grad(on)) return;
            detail::ensure_grad(xn);
            for (int64_t i = 0; i < n; ++i) xn->grad[i] += c * on->grad[i];
        });
    }
    return out;
}

// x [N, F] + bias [F], broadcast over rows (the only broadcast in this
// library, matching what the MLPs need).
template <typename S>
TensorT<S> add_row_bias(const TensorT<S>& x, const TensorT<S>& bias,
                        TapeT<S>* tape = nullptr) {
    if (x.ndim() != 2 || bias.ndim() != 1 || bias.dim(0) != x.dim(1))
        dim_error("add_row_bias: shapes " + shape_str(x.shape()) + " and " +
                  shape_str(bias.shape()) + " are incompatible");
    const int n = x.dim(0), f = x.dim(1);
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < f; ++j)
            out.ptr()[static_cast<size_t>(i) * f + j] =
                x.ptr()[static_cast<size_t>(i) * f + j] + bias.ptr()[j];
    if (tape && (x.requires_grad() || bias.requires_grad())) {
        out.set_requires_grad(true);
        auto xn = x.node(), bn = bias.node(), on = out.node();
        tape->record([xn, bn, on, n, f] {
            if (!detail::has_out_grad(on)) return;
            const S* g = on->grad.data();
            if (xn->requires_grad) {
                detail::ensure_grad(xn);
                for (int64_t i = 0; i < static_cast<int64_t>(n) * f; ++i) xn->grad[i] += g[i];
            }
            if (bn->requires_grad) {
                detail::ensure_grad(bn);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < f; ++j) bn->grad[j] += g[static_cast<size_t>(i) * f + j];
            }
        });
    }
    return out;
}

// x [C, H, W] + bias [C], broadcast over each channel plane.
template <typename S>
TensorT<S> add_channel_bias(const TensorT<S>& x, const TensorT<S>& bias,
                            TapeT<S>* tape = nullptr) {
    if (x.ndim() != 3 || bias.ndim() != 1 || bias.dim(0) != x.dim(0))
        dim_error("add_channel_bias: shapes " + shape_str(x.shape()) + " and " +
                  shape_str(bias.shape()) + " are incompatible");
    const int c = x.dim(0);
    const int64_t plane = static_cast<int64_t>(x.dim(1)) * x.dim(2);
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    for (int ch = 0; ch < c; ++ch) {
        const S b = bias.ptr()[ch];
        const S* xv = x.ptr() + ch * plane;
        S* ov = out.ptr() + ch * plane;
        for (int64_t i = 0; i < plane; ++i) ov[i] = xv[i] + b;
    }
    if (tape && (x.requires_grad() || bias.requires_grad())) {
        out.set_requires_grad(true);
        auto xn = x.node(), bn = bias.node(), on = out.node();
        tape->record([xn, bn, on, c, plane] {
            if (!detail::has_out_grad(on)) return;
            const S* g = on->grad.data();
            if (xn->requires_grad) {
                detail::ensure_grad(xn);
                for (int64_t i = 0; i < c * plane; ++i) xn->grad[i] += g[i];
            }
            if (bn->requires_grad) {
                detail::ensure_grad(bn);
                for (int ch = 0; ch < c; ++ch) {
                    S acc = S(0);
                    for (int64_t i = 0; i < plane; ++i) acc += g[ch * plane + i];
                    bn->grad[ch] += acc;
                }
            }
        });
    }
    return out;
}

// Row-scale: x [N, F] * v [N] -> each row i multiplied by v[i].
template <typename S>
TensorT<S> scale_rows(const TensorT<S>& x, const TensorT<S>& v, TapeT<S>* tape = nullptr) {
    if (x.ndim() != 2 || v.ndim() != 1 || v.dim(0) != x.dim(0))
        dim_error("scale_rows: shapes " + shape_str(x.shape()) + " and " +
                  shape_str(v.shape()) + " are incompatible");
    const int n = x.dim(0), f = x.dim(1);
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    for (int i = 0; i < n; ++i) {
        const S s = v.ptr()[i];
        for (int j = 0; j < f; ++j)
            out.ptr()[static_cast<size_t>(i) * f + j] = s * x.ptr()[static_cast<size_t>(i) * f + j];
    }
    if (tape && (x.requires_grad() || v.requires_grad())) {
        out.set_requires_grad(true);
        auto xn = x.node(), vn = v.node(), on = out.node();
        tape->record([xn, vn, on, n, f] {
            if (!detail::has_out_grad(on)) return;
            const S* g = on->grad.data();
            if (xn->requires_grad) {
                detail::ensure_grad(xn);
                for (int i = 0; i < n; ++i) {
                    const S s = vn->value[static_cast<size_t>(i)];
                    for (int j = 0; j < f; ++j)
                        xn->grad[static_cast<size_t>(i) * f + j] +=
                            s * g[static_cast<size_t>(i) * f + j];
                }
            }
            if (vn->requires_grad) {
                detail::ensure_grad(vn);
                for (int i = 0; i < n; ++i) {
                    S acc = S(0);
                    for (int j = 0; j < f; ++j)
                        acc += g[static_cast<size_t>(i) * f + j] *
                               xn->value[static_cast<size_t>(i) * f + j];
                    vn->grad[static_cast<size_t>(i)] += acc;
                }
            }
        });
    }
    return out;
}

// Column slice: x [N, K] -> [N] holding column j.
template <typename S>
TensorT<S> column(const TensorT<S>& x, int j, TapeT<S>* tape = nullptr) {
    if (x.ndim() != 2 || j < 0 || j >= x.dim(1))
        dim_error("column: index " + std::to_string(j) + " out of range for " +
                  shape_str(x.shape()));
    const int n = x.dim(0), k = x.dim(1);
    TensorT<S> out = TensorT<S>::zeros({n});
    for (int i = 0; i < n; ++i) out.ptr()[i] = x.ptr()[static_cast<size_t>(i) * k + j];
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        tape->record([xn, on, n, k, j] {
            if (!detail::has_out_grad(on)) return;
            detail::ensure_grad(xn);
            for (int i = 0; i < n; ++i)
                xn->grad[static_cast<size_t>(i) * k + j] += on->grad[static_cast<size_t>(i)];
        });
    }
    return out;
}

// [N, p] ++ [N, q] -> [N, p+q] along the last dimension.
template <typename S>
TensorT<S> concat_cols(const TensorT<S>& a, const TensorT<S>& b, TapeT<S>* tape = nullptr) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0))
        dim_error("concat_cols: shapes " + shape_str(a.shape()) + " and " +
                  shape_str(b.shape()) + " are incompatible");
    const int n = a.dim(0), p = a.dim(1), q = b.dim(1);
    TensorT<S> out = TensorT<S>::zeros({n, p + q});
    for (int i = 0; i < n; ++i) {
        S* orow = out.ptr() + static_cast<size_t>(i) * (p + q);
        const S* ar = a.ptr() + static_cast<size_t>(i) * p;
        const S* br = b.ptr() + static_cast<size_t>(i) * q;
        for (int j = 0; j < p; ++j) orow[j] = ar[j];
        for (int j = 0; j < q; ++j) orow[p + j] = br[j];
    }
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = out.node();
        tape->record([an, bn, on, n, p, q] {
            if (!detail::has_out_grad(on)) return;
            const S* g = on->grad.data();
            if (an->requires_grad) {
                detail::ensure_grad(an);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < p; ++j)
                        an->grad[static_cast<size_t>(i) * p + j] +=
                            g[static_cast<size_t>(i) * (p + q) + j];
            }
            if (bn->requires_grad) {
                detail::ensure_grad(bn);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < q; ++j)
                        bn->grad[static_cast<size_t>(i) * q + j] +=
                            g[static_cast<size_t>(i) * (p + q) + p + j];
            }
        });
    }
    return out;
}

// 3x3 neighborhood concatenation with edge clamping.
// [C, H, W] -> [9C, H, W]; output channel c*9 + j holds input channel c
// shifted to the j-th neighbor (row-major over dy, dx in {-1,0,1}).
template <typename S>
TensorT<S> unfold3x3(const TensorT<S>& x, TapeT<S>* tape = nullptr) {
    if (x.ndim() != 3)
        dim_error("unfold3x3: expected [C,H,W], got " + shape_str(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    TensorT<S> out = TensorT<S>::zeros({9 * c, h, w});
    const int64_t plane = static_cast<int64_t>(h) * w;
    for (int ch = 0; ch < c; ++ch)
        for (int j = 0; j < 9; ++j) {
            const int dy = j / 3 - 1, dx = j % 3 - 1;
            const S* xp = x.ptr() + ch * plane;
            S* op = out.ptr() + (static_cast<int64_t>(ch) * 9 + j) * plane;
            for (int y = 0; y < h; ++y) {
                const int sy = std::clamp(y + dy, 0, h - 1);
                for (int xx = 0; xx < w; ++xx)
                    op[static_cast<size_t>(y) * w + xx] =
                        xp[static_cast<size_t>(sy) * w + std::clamp(xx + dx, 0, w - 1)];
            }
        }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        tape->record([xn, on, c, h, w, plane] {
            if (!detail::has_out_grad(on)) return;
            detail::ensure_grad(xn);
            const S* g = on->grad.data();
            for (int ch = 0; ch < c; ++ch)
                for (int j = 0; j < 9; ++j) {
                    const int dy = j / 3 - 1, dx = j % 3 - 1;
                    S* xp = xn->grad.data() + ch * plane;
                    const S* gp = g + (static_cast<int64_t>(ch) * 9 + j) * plane;
                    for (int y = 0; y < h; ++y) {
                        const int sy = std::clamp(y + dy, 0, h - 1);
                        for (int xx = 0; xx < w; ++xx)
                            xp[static_cast<size_t>(sy) * w + std::clamp(xx + dx, 0, w - 1)] +=
                                gp[static_cast<size_t>(y) * w + xx];
                    }
                }
        });
    }
    return out;
}

// Gather feature vectors at grid positions: x [C, H, W], idx = N (row, col)
// pairs -> [N, C].
template <typename S>
TensorT<S> gather_pixels(const TensorT<S>& x, const std::vector<std::pair<int, int>>& idx,
                         TapeT<S>* tape = nullptr) {
    if (x.ndim() != 3)
        dim_error("gather_pixels: expected [C,H,W], got " + shape_str(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int n = static_cast<int>(idx.size());
    for (auto [r, cc] : idx)
        if (r < 0 || r >= h || cc < 0 || cc >= w)
            dim_error("gather_pixels: index (" + std::to_string(r) + "," + std::to_string(cc) +
                      ") out of range for " + shape_str(x.shape()));
    const int64_t plane = static_cast<int64_t>(h) * w;
    TensorT<S> out = TensorT<S>::zeros({n, c});
    for (int i = 0; i < n; ++i) {
        const int64_t off = static_cast<int64_t>(idx[static_cast<size_t>(i)].first) * w +
                            idx[static_cast<size_t>(i)].second;
        for (int ch = 0; ch < c; ++ch)
            out.ptr()[static_cast<size_t>(i) * c + ch] = x.ptr()[ch * plane + off];
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        auto indices = idx;
        tape->record([xn, on, indices, c, w, plane, n] {
            if (!detail::has_out_grad(on)) return;
            detail::ensure_grad(xn);
            for (int i = 0; i < n; ++i) {
                const int64_t off = static_cast<int64_t>(indices[static_cast<size_t>(i)].first) * w +
                                    indices[static_cast<size_t>(i)].second;
                for (int ch = 0; ch < c; ++ch)
                    xn->grad[ch * plane + off] += on->grad[static_cast<size_t>(i) * c + ch];
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> sum(const TensorT<S>& x, TapeT<S>* tape = nullptr) {
    TensorT<S> out = TensorT<S>::zeros({1});
    S acc = S(0);
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) acc += x.ptr()[i];
    out.ptr()[0] = acc;
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        tape->record([xn, on, n] {
            if (!detail::has_out_grad(on)) return;
            detail::ensure_grad(xn);
            const S g = on->grad[0];
            for (int64_t i = 0; i < n; ++i) xn->grad[i] += g;
        });
    }
    return out;
}

// Mean absolute error over all elements. The target never receives a
// gradient. Subgradient at pred == target is 0.
template <typename S>
TensorT<S> l1_loss(const TensorT<S>& pred, const TensorT<S>& target,
                   TapeT<S>* tape = nullptr) {
    if (pred.shape() != target.shape())
        dim_error("l1_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                  shape_str(target.shape()));
    const int64_t n = pred.numel();
    TensorT<S> out = TensorT<S>::zeros({1});
    S acc = S(0);
    for (int64_t i = 0; i < n; ++i) acc += std::abs(pred.ptr()[i] - target.ptr()[i]);
    out.ptr()[0] = acc / static_cast<S>(n);
    if (tape && pred.requires_grad()) {
        out.set_requires_grad(true);
        auto pn = pred.node(), tn = target.node(), on = out.node();
        tape->record([pn, tn, on, n] {
            if (!detail::has_out_grad(on)) return;
            detail::ensure_grad(pn);
            const S g = on->grad[0] / static_cast<S>(n);
            for (int64_t i = 0; i < n; ++i) {
                const S d = pn->value[i] - tn->value[i];
                if (d > S(0))
                    pn->grad[i] += g;
                else if (d < S(0))
                    pn->grad[i] -= g;
            }
        });
    }
    return out;
}

// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse execution
// order. The tape is consumed.
template <typename S>
void backward(TensorT<S>& loss, TapeT<S>& tape) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    shape_str(loss.shape()));
    if (!loss.requires_grad())
        throw std::invalid_argument("backward: loss is not connected to the tape");
    loss.node()->grad.assign(1, S(1));
    tape.run_backward_and_clear();
}

}  // namespace aliif
