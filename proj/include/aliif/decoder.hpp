// SPDX-License-Identifier: Apache-2.0
//
// Continuous decoding of a feature map at arbitrary query coordinates.
// Coordinates live in [-1,1] per axis with pixel centers at -1 + (2i+1)/n.
// Each query is decoded at its four diagonal neighbor features and blended
// with local-ensemble area weights; the decoder is either one shared MLP
// (liif) or a softmax-gated mixture of K basis MLPs whose weights come from
// the expansion network (aliif).

#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "aliif/image.hpp"
#include "aliif/model.hpp"
#include "aliif/tensor.hpp"

namespace aliif {

struct QueryPoint {
    double coord[2] = {0, 0};  // (row, col) target coordinate in [-1,1]
    double xr[2] = {0, 0};     // nearest feature center coordinate
    double xi[2] = {0, 0};     // (coord - xr) scaled by the feature grid size
    double cell[2] = {0, 0};   // query pixel extent in normalized units
};

inline double center_coord(int i, int n) { return -1.0 + (2.0 * i + 1.0) / n; }

// Fills xr/xi for the feature grid's nearest cell. xi is the offset in
// feature-pixel units, so it lies in [-1, 1].
inline void attach_nearest_feature(QueryPoint& q, int fh, int fw) {
    const int dims[2] = {fh, fw};
    for (int a = 0; a < 2; ++a) {
        const int n = dims[a];
        int idx = static_cast<int>(std::floor((q.coord[a] + 1.0) * 0.5 * n));
        idx = std::clamp(idx, 0, n - 1);
        q.xr[a] = center_coord(idx, n);
        q.xi[a] = (q.coord[a] - q.xr[a]) * n;
    }
}

// Full output grid in row-major order, pixel-center coordinates, uniform
// cell size (2/out_h, 2/out_w).
inline std::vector<QueryPoint> make_query_grid(int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("make_query_grid: output size must be at least 1x1");
    std::vector<QueryPoint> grid(static_cast<size_t>(out_h) * out_w);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            QueryPoint& q = grid[static_cast<size_t>(y) * out_w + x];
            q.coord[0] = center_coord(y, out_h);
            q.coord[1] = center_coord(x, out_w);
            q.cell[0] = 2.0 / out_h;
            q.cell[1] = 2.0 / out_w;
        }
    return grid;
}

// 3x3 neighborhood concatenation of the feature map (9x the channels).
template <typename S>
TensorT<S> unfold_features(const TensorT<S>& fm, TapeT<S>* tape = nullptr) {
    return unfold3x3(fm, tape);
}

// Softmax-normalized mixture weights for one query: N(P(z_center, xi)).
template <typename S>
std::vector<S> expansion_weights(std::span<const S> z_center, std::span<const S> xi,
                                 const MlpT<S>& expansion) {
    std::vector<S> in(z_center.begin(), z_center.end());
    in.push_back(xi[0]);
    in.push_back(xi[1]);
    const int width = static_cast<int>(in.size());
    TensorT<S> row = TensorT<S>::from_data({1, width}, std::move(in));
    TensorT<S> w = softmax_rows(expansion.forward(row));
    return {w.data().begin(), w.data().end()};
}

// Single-query LIIF decode: MLP([z, xi, cell]) -> RGB, no output
// nonlinearity (clamping happens at render time).
template <typename S>
std::array<S, 3> decode_liif(std::span<const S> input, const MlpT<S>& net) {
    TensorT<S> row =
        TensorT<S>::from_data({1, static_cast<int>(input.size())},
                              std::vector<S>(input.begin(), input.end()));
    TensorT<S> out = net.forward(row);
    return {out.data()[0], out.data()[1], out.data()[2]};
}

// Single-query A-LIIF decode: RGB = sum_k omega_k * MLP_k(input).
template <typename S>
std::array<S, 3> decode_aliif(std::span<const S> input, std::span<const S> weights,
                              const std::vector<MlpT<S>>& bank) {
    if (weights.size() != bank.size())
        dim_error("decode_aliif: " + std::to_string(weights.size()) + " weights for " +
                  std::to_string(bank.size()) + " basis MLPs");
    TensorT<S> row =
        TensorT<S>::from_data({1, static_cast<int>(input.size())},
                              std::vector<S>(input.begin(), input.end()));
    TensorT<S> acc;
    for (size_t k = 0; k < bank.size(); ++k) {
        TensorT<S> wk = TensorT<S>::from_data({1}, {weights[k]});
        TensorT<S> term = scale_rows(bank[k].forward(row), wk);
        acc = acc.defined() ? add(acc, term) : term;
    }
    return {acc.data()[0], acc.data()[1], acc.data()[2]};
}

namespace detail {

// Per-ensemble-branch constant inputs, computed on the CPU side in double
// and frozen into tensors (no gradient flows into coordinates).
template <typename S>
struct BranchInputs {
    std::vector<std::pair<int, int>> idx;  // feature cell per query
    TensorT<S> xi;                         // [N, 2] scaled offsets
    TensorT<S> xi_cell;                    // [N, 4] offsets + scaled cell
    std::vector<double> area;              // |xi0 * xi1| + 1e-9
};

template <typename S>
BranchInputs<S> branch_inputs(std::span<const QueryPoint> queries, int fh, int fw, int vy,
                              int vx) {
    constexpr double kEps = 1e-6;
    const int n = static_cast<int>(queries.size());
    BranchInputs<S> out;
    out.idx.resize(static_cast<size_t>(n));
    out.area.resize(static_cast<size_t>(n));
    std::vector<S> xi(static_cast<size_t>(n) * 2);
    std::vector<S> xic(static_cast<size_t>(n) * 4);
    const double r[2] = {1.0 / fh, 1.0 / fw};  // half feature grid spacing
    const int dims[2] = {fh, fw};
    const int v[2] = {vy, vx};
    for (int i = 0; i < n; ++i) {
        const QueryPoint& q = queries[static_cast<size_t>(i)];
        int cell_idx[2];
        double rel[2];
        for (int a = 0; a < 2; ++a) {
            double c = q.coord[a] + v[a] * r[a] + kEps;
            c = std::clamp(c, -1.0 + kEps, 1.0 - kEps);
            int fi = static_cast<int>(std::floor((c + 1.0) * 0.5 * dims[a]));
            fi = std::clamp(fi, 0, dims[a] - 1);
            cell_idx[a] = fi;
            rel[a] = (q.coord[a] - center_coord(fi, dims[a])) * dims[a];
        }
        out.idx[static_cast<size_t>(i)] = {cell_idx[0], cell_idx[1]};
        out.area[static_cast<size_t>(i)] = std::fabs(rel[0] * rel[1]) + 1e-9;
        xi[static_cast<size_t>(i) * 2 + 0] = static_cast<S>(rel[0]);
        xi[static_cast<size_t>(i) * 2 + 1] = static_cast<S>(rel[1]);
        xic[static_cast<size_t>(i) * 4 + 0] = static_cast<S>(rel[0]);
        xic[static_cast<size_t>(i) * 4 + 1] = static_cast<S>(rel[1]);
        xic[static_cast<size_t>(i) * 4 + 2] = static_cast<S>(q.cell[0] * fh);
        xic[static_cast<size_t>(i) * 4 + 3] = static_cast<S>(q.cell[1] * fw);
    }
    out.xi = TensorT<S>::from_data({n, 2}, std::move(xi));
    out.xi_cell = TensorT<S>::from_data({n, 4}, std::move(xic));
    return out;
}

// Mixture decode of one branch: [N, 9D+4] inputs -> [N, 3].
template <typename S>
TensorT<S> mixture_decode(const ModelT<S>& model, const TensorT<S>& inp,
                          const TensorT<S>& omega, TapeT<S>* tape) {
    TensorT<S> acc;
    for (size_t k = 0; k < model.bank.size(); ++k) {
        TensorT<S> out_k = model.bank[k].forward(inp, tape);
        TensorT<S> term = scale_rows(out_k, column(omega, static_cast<int>(k), tape), tape);
        acc = acc.defined() ? add(acc, term, tape) : term;
    }
    return acc;
}

}  // namespace detail

// Decode a batch of queries against an unfolded feature map ([9D, H, W]).
// Returns unclamped [N, 3] RGB. With a tape, gradients flow to all model
// parameters and the feature map.
template <typename S>
TensorT<S> decode_batch(const ModelT<S>& model, const TensorT<S>& fm_unfolded, int fh, int fw,
                        std::span<const QueryPoint> queries, TapeT<S>* tape = nullptr) {
    if (fm_unfolded.ndim() != 3 || fm_unfolded.dim(0) != 9 * model.spec.d)
        dim_error("decode_batch: expected unfolded [9D,H,W] features, got " +
                  shape_str(fm_unfolded.shape()));
    const int n = static_cast<int>(queries.size());
    if (n == 0) dim_error("decode_batch: empty query batch");

    const int offsets[4][2] = {{-1, -1}, {-1, 1}, {1, -1}, {1, 1}};
    std::array<detail::BranchInputs<S>, 4> branches;
    for (int e = 0; e < 4; ++e)
        branches[static_cast<size_t>(e)] =
            detail::branch_inputs<S>(queries, fh, fw, offsets[e][0], offsets[e][1]);

    // Local ensemble: each branch weighted by the area spanned by the query
    // and its diagonally opposite neighbor, normalized to sum 1.
    std::array<std::vector<S>, 4> ens;
    for (int i = 0; i < n; ++i) {
        const double a0 = branches[0].area[static_cast<size_t>(i)];
        const double a1 = branches[1].area[static_cast<size_t>(i)];
        const double a2 = branches[2].area[static_cast<size_t>(i)];
        const double a3 = branches[3].area[static_cast<size_t>(i)];
        const double swapped[4] = {a3, a2, a1, a0};
        const double total = swapped[0] + swapped[1] + swapped[2] + swapped[3];
        for (int e = 0; e < 4; ++e) {
            auto& v = ens[static_cast<size_t>(e)];
            if (v.empty()) v.resize(static_cast<size_t>(n));
            v[static_cast<size_t>(i)] = static_cast<S>(swapped[e] / total);
        }
    }

    // Optionally compute the mixture weights once per query from the
    // plain-nearest feature cell and reuse them across the four branches.
    TensorT<S> shared_omega;
    if (model.spec.mode == Mode::aliif && model.spec.share_ensemble_weights) {
        std::vector<QueryPoint> qs(queries.begin(), queries.end());
        for (auto& q : qs) attach_nearest_feature(q, fh, fw);
        std::vector<std::pair<int, int>> idx(static_cast<size_t>(n));
        std::vector<S> xi(static_cast<size_t>(n) * 2);
        for (int i = 0; i < n; ++i) {
            const QueryPoint& q = qs[static_cast<size_t>(i)];
            idx[static_cast<size_t>(i)] = {
                static_cast<int>(std::lround(((q.xr[0] + 1.0) * fh - 1.0) / 2.0)),
                static_cast<int>(std::lround(((q.xr[1] + 1.0) * fw - 1.0) / 2.0))};
            xi[static_cast<size_t>(i) * 2 + 0] = static_cast<S>(q.xi[0]);
            xi[static_cast<size_t>(i) * 2 + 1] = static_cast<S>(q.xi[1]);
        }
        TensorT<S> feat = gather_pixels(fm_unfolded, idx, tape);
        TensorT<S> exp_in =
            concat_cols(feat, TensorT<S>::from_data({n, 2}, std::move(xi)), tape);
        shared_omega = softmax_rows(model.expansion.forward(exp_in, tape), tape);
    }

    TensorT<S> total;
    for (int e = 0; e < 4; ++e) {
        auto& br = branches[static_cast<size_t>(e)];
        TensorT<S> feat = gather_pixels(fm_unfolded, br.idx, tape);
        TensorT<S> inp = concat_cols(feat, br.xi_cell, tape);
        TensorT<S> pred;
        if (model.spec.mode == Mode::liif) {
            pred = model.mlp.forward(inp, tape);
        } else {
            TensorT<S> omega = shared_omega;
            if (!omega.defined()) {
                TensorT<S> exp_in = concat_cols(feat, br.xi, tape);
                omega = softmax_rows(model.expansion.forward(exp_in, tape), tape);
            }
            pred = detail::mixture_decode(model, inp, omega, tape);
        }
        if (model.spec.outer_relu) pred = relu(pred, tape);
        TensorT<S> w = TensorT<S>::from_data({n}, std::move(ens[static_cast<size_t>(e)]));
        TensorT<S> term = scale_rows(pred, w, tape);
        total = total.defined() ? add(total, term, tape) : term;
    }
    return total;
}

// Full-grid inference: encode is the caller's job; this maps a feature map
// to an out_h x out_w image in [0,1]. Queries are processed in fixed-size
// chunks; every op is row-independent, so chunking never changes values.
template <typename S>
Image render(const ModelT<S>& model, const TensorT<S>& fm, int out_h, int out_w,
             int chunk = 8192) {
    const int fh = fm.dim(1), fw = fm.dim(2);
    TensorT<S> fmu = unfold_features(fm);
    const std::vector<QueryPoint> grid = make_query_grid(out_h, out_w);
    Image out = Image::zeros(out_h, out_w);
    const int64_t total = static_cast<int64_t>(grid.size());
    for (int64_t at = 0; at < total; at += chunk) {
        const int n = static_cast<int>(std::min<int64_t>(chunk, total - at));
        std::span<const QueryPoint> part(grid.data() + at, static_cast<size_t>(n));
        TensorT<S> rgb = decode_batch(model, fmu, fh, fw, part);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c)
                out.pixels[static_cast<size_t>(at + i) * 3 + c] = std::clamp(
                    static_cast<float>(rgb.ptr()[static_cast<size_t>(i) * 3 + c]), 0.0f, 1.0f);
    }
    return out;
}

}  // namespace aliif
