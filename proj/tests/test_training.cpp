// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <set>
#include <vector>

#include "aliif/train.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace aliif;
namespace tu = aliif::testutil;

namespace {

std::vector<Image> toy_dataset(int count, uint64_t seed) {
    return tu::make_texture_set(count, seed);
}

}  // namespace

TEST_CASE("sample_batch at scale 1 reproduces the crop exactly") {
    auto dataset = toy_dataset(3, 100);
    TrainConfig cfg = tu::mini_train_config(Mode::aliif, "", 5);
    cfg.patch_size = 8;
    cfg.pixels_per_patch = 64;  // full coverage at scale 1
    cfg.scale_min = cfg.scale_max = 1.0;
    SampleStreams streams(cfg.seed);
    auto batch = sample_batch(dataset, cfg, streams);
    REQUIRE(batch.size() == 1);
    const TrainItem& item = batch[0];
    REQUIRE(item.lr.height == 8);
    REQUIRE(item.lr.width == 8);
    REQUIRE(item.queries.size() == 64);
    REQUIRE(item.targets.dim(0) == 64);

    std::set<std::pair<int, int>> seen;
    for (size_t i = 0; i < item.queries.size(); ++i) {
        const QueryPoint& q = item.queries[i];
        CHECK(q.cell[0] == doctest::Approx(2.0 / 8).epsilon(1e-12));
        CHECK(q.cell[1] == doctest::Approx(2.0 / 8).epsilon(1e-12));
        // Invert the pixel-center formula; must land on integers.
        const double py = ((q.coord[0] + 1.0) * 8.0 - 1.0) / 2.0;
        const double px = ((q.coord[1] + 1.0) * 8.0 - 1.0) / 2.0;
        const int iy = static_cast<int>(std::lround(py));
        const int ix = static_cast<int>(std::lround(px));
        CHECK(std::fabs(py - iy) < 1e-9);
        CHECK(std::fabs(px - ix) < 1e-9);
        seen.insert({iy, ix});
        // Targets are the exact crop pixels, and at scale 1 the LR patch is
        // the crop (bicubic identity).
        for (int c = 0; c < 3; ++c)
            CHECK(item.targets.ptr()[i * 3 + c] == item.lr.at(iy, ix, c));
    }
    CHECK(seen.size() == 64);  // sampling without replacement covers the patch
}

TEST_CASE("sample_batch coordinates stay in [-1,1] and cells match the scale") {
    auto dataset = toy_dataset(4, 101);
    TrainConfig cfg = tu::mini_train_config(Mode::aliif, "", 6);
    cfg.scale_min = 1.0;
    cfg.scale_max = 2.0;
    cfg.batch_size = 3;
    SampleStreams streams(cfg.seed);
    for (int round = 0; round < 5; ++round) {
        auto batch = sample_batch(dataset, cfg, streams);
        REQUIRE(batch.size() == 3);
        for (const TrainItem& item : batch)
            for (const QueryPoint& q : item.queries) {
                CHECK(q.coord[0] >= -1.0);
                CHECK(q.coord[0] <= 1.0);
                CHECK(q.coord[1] >= -1.0);
                CHECK(q.coord[1] <= 1.0);
                // cell = 2/hr for an integer hr in [patch, patch*scale_max].
                const double hr = 2.0 / q.cell[0];
                CHECK(std::fabs(hr - std::lround(hr)) < 1e-9);
                CHECK(std::lround(hr) >= cfg.patch_size);
                CHECK(std::lround(hr) <= std::llround(cfg.patch_size * cfg.scale_max));
                // Pixel-center formula for that hr.
                const double py = ((q.coord[0] + 1.0) * hr - 1.0) / 2.0;
                CHECK(std::fabs(py - std::lround(py)) < 1e-9);
            }
    }
}

TEST_CASE("sample_batch is deterministic for a fixed seed") {
    auto dataset = toy_dataset(4, 102);
    TrainConfig cfg = tu::mini_train_config(Mode::aliif, "", 7);
    cfg.batch_size = 2;
    SampleStreams s1(cfg.seed), s2(cfg.seed);
    for (int round = 0; round < 3; ++round) {
        auto b1 = sample_batch(dataset, cfg, s1);
        auto b2 = sample_batch(dataset, cfg, s2);
        REQUIRE(b1.size() == b2.size());
        for (size_t i = 0; i < b1.size(); ++i) {
            REQUIRE(b1[i].lr.pixels.size() == b2[i].lr.pixels.size());
            for (size_t j = 0; j < b1[i].lr.pixels.size(); ++j)
                CHECK(b1[i].lr.pixels[j] == b2[i].lr.pixels[j]);
            REQUIRE(b1[i].queries.size() == b2[i].queries.size());
            for (size_t j = 0; j < b1[i].queries.size(); ++j) {
                CHECK(b1[i].queries[j].coord[0] == b2[i].queries[j].coord[0]);
                CHECK(b1[i].queries[j].coord[1] == b2[i].queries[j].coord[1]);
            }
            for (size_t j = 0; j < b1[i].targets.data().size(); ++j)
                CHECK(b1[i].targets.data()[j] == b2[i].targets.data()[j]);
        }
    }
}

TEST_CASE("sample_batch errors when no image fits the crop") {
    std::vector<Image> dataset = {Image::zeros(8, 8)};
    TrainConfig cfg = tu::mini_train_config(Mode::aliif, "", 8);
    cfg.patch_size = 8;
    cfg.scale_min = cfg.scale_max = 4.0;  // needs 32x32 crops
    SampleStreams streams(cfg.seed);
    bool threw = false;
    try {
        sample_batch(dataset, cfg, streams);
    } catch (const std::runtime_error& e) {
        threw = true;
        CHECK(std::string(e.what()).find("32x32") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("l1 loss closed forms") {
    Tensor a = Tensor::from_data({2, 3}, {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f});
    CHECK(l1_loss(a, a).item() == 0.0f);

    Tensor p = Tensor::full({4, 3}, 0.7f);
    Tensor t = Tensor::full({4, 3}, 0.5f);
    CHECK(l1_loss(p, t).item() == doctest::Approx(0.2).epsilon(1e-6));

    CHECK_THROWS_AS(l1_loss(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})),
                    std::invalid_argument);
}

TEST_CASE("adam hand-evaluated single step at t=1") {
    // Double precision end to end so the 1e-9 bound is meaningful.
    TensorT<double> w = TensorT<double>::from_data({1}, {0.0}, true);
    w.zero_grad();
    w.grad()[0] = 1.0;
    std::vector<NamedParamT<double>> params = {{"w", w}};
    AdamT<double> adam;
    adam.step(params, 0.1);
    const double want = -0.1 / (1.0 + 1e-8);  // mhat = vhat = 1 at t=1
    CHECK(std::fabs(w.data()[0] - want) < 1e-9);
    CHECK(adam.t == 1);
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
    TensorT<double> w = TensorT<double>::from_data({3}, {1.0, -2.0, 3.0}, true);
    w.zero_grad();
    std::vector<NamedParamT<double>> params = {{"w", w}};
    AdamT<double> adam;
    adam.step(params, 0.5);
    adam.step(params, 0.5);
    CHECK(w.data()[0] == 1.0);
    CHECK(w.data()[1] == -2.0);
    CHECK(w.data()[2] == 3.0);
    CHECK(adam.t == 2);
}

TEST_CASE("adam missing gradient names the parameter") {
    Tensor w = Tensor::from_data({2}, {1, 2}, true);
    std::vector<NamedParamT<float>> params = {{"encoder.head.weight", w}};
    AdamT<float> adam;
    bool threw = false;
    try {
        adam.step(params, 0.1);
    } catch (const std::runtime_error& e) {
        threw = true;
        CHECK(std::string(e.what()).find("encoder.head.weight") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("adam runs are bitwise deterministic") {
    auto run = [] {
        Rng rng(55, "test/adam-det");
        Tensor w = tu::random_tensor<float>({4, 3}, rng, -1, 1, true);
        Tensor x = tu::random_tensor<float>({5, 4}, rng, -1, 1, false);
        Tensor target = tu::random_tensor<float>({5, 3}, rng, -1, 1, false);
        std::vector<NamedParamT<float>> params = {{"w", w}};
        AdamT<float> adam;
        for (int i = 0; i < 10; ++i) {
            Tape tape;
            Tensor loss = l1_loss(matmul(x, w, &tape), target, &tape);
            backward(loss, tape);
            adam.step(params, 1e-2);
            w.drop_grad();
        }
        return std::vector<float>(w.data().begin(), w.data().end());
    };
    auto a = run(), b = run();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("lr halves every S epochs, exactly") {
    const double lr0 = 1e-4;
    const int s = 10;
    CHECK(lr_for_epoch(lr0, 0, s) == lr0);
    CHECK(lr_for_epoch(lr0, s - 1, s) == lr0);
    CHECK(lr_for_epoch(lr0, s, s) == lr0 / 2);
    CHECK(lr_for_epoch(lr0, 2 * s - 1, s) == lr0 / 2);
    CHECK(lr_for_epoch(lr0, 2 * s, s) == lr0 / 4);  // exact, power-of-two scaling
}

TEST_CASE("loss on a frozen batch strictly decreases for 20 steps") {
    auto dataset = toy_dataset(2, 103);
    TrainConfig cfg = tu::mini_train_config(Mode::aliif, "", 9);
    cfg.pixels_per_patch = 32;
    SampleStreams streams(cfg.seed);
    auto batch = sample_batch(dataset, cfg, streams);
    REQUIRE(batch.size() == 1);
    const TrainItem& item = batch[0];

    ModelT<float> model = ModelT<float>::make(cfg.model_spec());
    model.init(cfg.seed);
    auto params = model.parameters();
    AdamT<float> adam;
    const Tensor img = image_to_tensor<float>(item.lr);
    std::vector<double> losses;
    for (int step = 0; step < 20; ++step) {
        Tape tape;
        Tensor fm = model.encoder.encode(img, &tape);
        Tensor fmu = unfold_features(fm, &tape);
        Tensor rgb = decode_batch(model, fmu, item.lr.height, item.lr.width, item.queries,
                                  &tape);
        Tensor loss = l1_loss(rgb, item.targets, &tape);
        losses.push_back(loss.item());
        backward(loss, tape);
        adam.step(params, 1e-4);
        for (auto& p : params) p.tensor.drop_grad();
    }
    for (size_t i = 1; i < losses.size(); ++i) {
        INFO("step " << i << ": " << losses[i - 1] << " -> " << losses[i]);
        CHECK(losses[i] < losses[i - 1]);
    }
}

TEST_CASE("train smoke: one epoch on a one-image set") {
    std::vector<Image> dataset = {tu::make_texture_set(1, 104)[0]};
    TrainConfig cfg = tu::mini_train_config(Mode::aliif, "", 10);
    cfg.epochs = 1;
    cfg.iters_per_epoch = 4;
    TrainResult result = train(dataset, cfg);
    REQUIRE(result.history.size() == 4);
    for (const LossRow& row : result.history) {
        CHECK(std::isfinite(row.loss));
        CHECK(row.epoch == 1);
        CHECK(row.lr == cfg.lr);
    }
    // No parameter went non-finite.
    for (auto& p : result.model.parameters())
        for (float v : p.tensor.data()) CHECK(std::isfinite(v));
}

TEST_CASE("train aborts on non-finite loss naming the step") {
    auto dataset = toy_dataset(2, 105);
    TrainConfig cfg = tu::mini_train_config(Mode::aliif, "", 11);
    cfg.epochs = 1;
    cfg.iters_per_epoch = 10;
    cfg.lr = 1e25;  // guaranteed blow-up
    bool threw = false;
    try {
        train(dataset, cfg);
    } catch (const std::runtime_error& e) {
        threw = true;
        const std::string msg = e.what();
        CHECK(msg.find("non-finite loss") != std::string::npos);
        CHECK(msg.find("epoch 1") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("liif and aliif K=1 training trajectories are identical") {
    auto dataset = toy_dataset(3, 106);
    TrainConfig liif_cfg = tu::mini_train_config(Mode::liif, "", 12);
    liif_cfg.epochs = 2;
    liif_cfg.iters_per_epoch = 3;
    TrainConfig k1_cfg = liif_cfg;
    k1_cfg.mode = Mode::aliif;
    k1_cfg.k = 1;
    TrainResult a = train(dataset, liif_cfg);
    TrainResult b = train(dataset, k1_cfg);
    REQUIRE(a.history.size() == b.history.size());
    for (size_t i = 0; i < a.history.size(); ++i)
        CHECK(a.history[i].loss == b.history[i].loss);  // bitwise-equal paths
    // The shared components end at identical weights.
    for (size_t i = 0; i < a.model.encoder.head_w.data().size(); ++i)
        CHECK(a.model.encoder.head_w.data()[i] == b.model.encoder.head_w.data()[i]);
    for (size_t l = 0; l < a.model.mlp.weights.size(); ++l)
        for (size_t i = 0; i < a.model.mlp.weights[l].data().size(); ++i)
            CHECK(a.model.mlp.weights[l].data()[i] ==
                  b.model.bank[0].weights[l].data()[i]);
}

TEST_CASE("end-to-end gradients match finite differences in both modes") {
    const auto liif = tu::e2e_fd_error(Mode::liif, 58);
    CHECK(liif.max_rel_err < 1e-3);
    CHECK(liif.params_checked > 400);
    const auto aliif = tu::e2e_fd_error(Mode::aliif, 58);
    CHECK(aliif.max_rel_err < 1e-3);
    CHECK(aliif.params_checked > 900);
}
