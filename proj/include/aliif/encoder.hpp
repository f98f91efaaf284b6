// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "aliif/rng.hpp"
#include "aliif/tensor.hpp"

namespace aliif {

// Small residual 3x3 conv network producing the feature map: head conv
// 3 -> D, B residual blocks (conv, ReLU, conv, skip add), tail conv D -> D.
// Spatial size is preserved throughout.
template <typename S>
struct EncoderT {
    struct Block {
        TensorT<S> conv1_w, conv1_b, conv2_w, conv2_b;
    };

    int channels = 0;
    TensorT<S> head_w, head_b;
    std::vector<Block> blocks;
    TensorT<S> tail_w, tail_b;

    static EncoderT make(int d, int b, bool trainable = true) {
        if (d < 1 || b < 1) dim_error("encoder: D and B must be at least 1");
        EncoderT e;
        e.channels = d;
        e.head_w = TensorT<S>::zeros({d, 3, 3, 3}, trainable);
        e.head_b = TensorT<S>::zeros({d}, trainable);
        for (int i = 0; i < b; ++i)
            e.blocks.push_back({TensorT<S>::zeros({d, d, 3, 3}, trainable),
                                TensorT<S>::zeros({d}, trainable),
                                TensorT<S>::zeros({d, d, 3, 3}, trainable),
                                TensorT<S>::zeros({d}, trainable)});
        e.tail_w = TensorT<S>::zeros({d, d, 3, 3}, trainable);
        e.tail_b = TensorT<S>::zeros({d}, trainable);
        return e;
    }

    // Kaiming-uniform fan-in init for kernels (fan_in = C_in * 9); biases
    // stay zero.
    void init(Rng& rng) {
        auto fill = [&](TensorT<S>& w) {
            const double limit = std::sqrt(6.0 / (w.dim(1) * 9));
            for (auto& v : w.data()) v = static_cast<S>(rng.uniform(-limit, limit));
        };
        fill(head_w);
        for (auto& blk : blocks) {
            fill(blk.conv1_w);
            fill(blk.conv2_w);
        }
        fill(tail_w);
    }

    TensorT<S> encode(const TensorT<S>& image, TapeT<S>* tape = nullptr) const {
        if (image.ndim() != 3 || image.dim(0) != 3)
            dim_error("encode: expected a [3,H,W] image, got " + shape_str(image.shape()));
        TensorT<S> h = add_channel_bias(conv2d(image, head_w, tape), head_b, tape);
        for (const auto& blk : blocks) {
            TensorT<S> t = relu(add_channel_bias(conv2d(h, blk.conv1_w, tape), blk.conv1_b, tape),
                                tape);
            t = add_channel_bias(conv2d(t, blk.conv2_w, tape), blk.conv2_b, tape);
            h = add(h, t, tape);
        }
        return add_channel_bias(conv2d(h, tail_w, tape), tail_b, tape);
    }
};

}  // namespace aliif
