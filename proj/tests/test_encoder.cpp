// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "aliif/encoder.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace aliif;
namespace tu = aliif::testutil;

TEST_CASE("zero image through a zero-initialized encoder is zero") {
    auto enc = EncoderT<float>::make(4, 2);
    Tensor img = Tensor::zeros({3, 5, 5});
    Tensor fm = enc.encode(img);
    for (float v : fm.data()) CHECK(v == 0.0f);
}

TEST_CASE("encoder preserves spatial dimensions") {
    auto enc = EncoderT<float>::make(16, 4);
    Rng rng(1, "test/enc-init");
    enc.init(rng);
    Tensor img = tu::random_tensor<float>({3, 7, 5}, rng, 0, 1, false);
    Tensor fm = enc.encode(img);
    REQUIRE(fm.ndim() == 3);
    CHECK(fm.dim(0) == 16);
    CHECK(fm.dim(1) == 7);
    CHECK(fm.dim(2) == 5);
    for (float v : fm.data()) CHECK(std::isfinite(v));

    Tensor tiny = tu::random_tensor<float>({3, 1, 1}, rng, 0, 1, false);
    Tensor fm1 = enc.encode(tiny);
    CHECK(fm1.dim(1) == 1);
    CHECK(fm1.dim(2) == 1);
}

TEST_CASE("residual blocks with zero weights are the identity") {
    auto enc = EncoderT<float>::make(6, 3);
    Rng rng(2, "test/enc-res");
    enc.init(rng);
    // Zero out every residual block; head and tail keep their random values.
    for (auto& blk : enc.blocks) {
        for (auto& v : blk.conv1_w.data()) v = 0.0f;
        for (auto& v : blk.conv2_w.data()) v = 0.0f;
    }
    Tensor img = tu::random_tensor<float>({3, 6, 4}, rng, 0, 1, false);
    Tensor got = enc.encode(img);
    Tensor want = add_channel_bias(conv2d(add_channel_bias(conv2d(img, enc.head_w), enc.head_b),
                                          enc.tail_w),
                                   enc.tail_b);
    REQUIRE(got.data().size() == want.data().size());
    for (size_t i = 0; i < got.data().size(); ++i) CHECK(got.data()[i] == want.data()[i]);
}

TEST_CASE("encoder rejects non-RGB input") {
    auto enc = EncoderT<float>::make(4, 1);
    CHECK_THROWS_AS(enc.encode(Tensor::zeros({1, 4, 4})), std::invalid_argument);
    CHECK_THROWS_AS(enc.encode(Tensor::zeros({3, 4})), std::invalid_argument);
}

TEST_CASE("L1 gradient w.r.t. the first conv kernel matches finite differences") {
    auto enc = EncoderT<double>::make(2, 1);
    Rng rng(3, "test/enc-fd");
    enc.init(rng);
    TensorT<double> img = tu::random_tensor({3, 4, 4}, rng, 0.0, 1.0, false);
    TensorT<double> target = tu::random_tensor({2, 4, 4}, rng, 2.0, 3.0, false);
    auto res = tu::grad_check({&enc.head_w}, [&](TapeT<double>& t) {
        return l1_loss(enc.encode(img, &t), target, &t);
    });
    CHECK(res.checked == 54);
    CHECK(res.max_rel_err < 1e-3);
}
