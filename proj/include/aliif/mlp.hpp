// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "aliif/rng.hpp"
#include "aliif/tensor.hpp"

namespace aliif {

// Fully-connected ReLU network operating on row batches. n_layers linear
// layers means n_layers - 1 ReLUs; no nonlinearity after the last layer.
template <typename S>
struct MlpT {
    std::vector<TensorT<S>> weights;  // layer i: [in_i, out_i]
    std::vector<TensorT<S>> biases;   // layer i: [out_i]

    static MlpT make(int in_width, int hidden_width, int out_width, int n_layers,
                     bool trainable = true) {
        if (n_layers < 1) dim_error("mlp: need at least one layer");
        MlpT m;
        int prev = in_width;
        for (int i = 0; i < n_layers; ++i) {
            const int out = i + 1 == n_layers ? out_width : hidden_width;
            m.weights.push_back(TensorT<S>::zeros({prev, out}, trainable));
            m.biases.push_back(TensorT<S>::zeros({out}, trainable));
            prev = out;
        }
        return m;
    }

    int in_width() const { return weights.front().dim(0); }
    int out_width() const { return weights.back().dim(1); }
    int n_layers() const { return static_cast<int>(weights.size()); }

    // Kaiming-uniform fan-in init for the weights; biases stay zero.
    void init(Rng& rng) {
        for (auto& w : weights) {
            const double limit = std::sqrt(6.0 / w.dim(0));
            for (auto& v : w.data()) v = static_cast<S>(rng.uniform(-limit, limit));
        }
    }

    TensorT<S> forward(const TensorT<S>& x, TapeT<S>* tape = nullptr) const {
        if (x.ndim() != 2 || x.dim(1) != in_width())
            dim_error("mlp: input " + shape_str(x.shape()) + " does not match layer width " +
                      std::to_string(in_width()));
        TensorT<S> h = x;
        for (size_t i = 0; i < weights.size(); ++i) {
            h = add_row_bias(matmul(h, weights[i], tape), biases[i], tape);
            if (i + 1 < weights.size()) h = relu(h, tape);
        }
        return h;
    }
};

}  // namespace aliif
