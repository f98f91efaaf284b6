// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "aliif/decoder.hpp"
#include "aliif/image.hpp"
#include "aliif/model.hpp"
#include "aliif/rng.hpp"
#include "aliif/tensor.hpp"

namespace aliif {

struct TrainConfig {
    std::string dataset_dir;
    Mode mode = Mode::aliif;
    int k = 4;
    int d = 16;
    int b = 4;
    int mlp_layers = 5;
    int mlp_hidden = 16;
    int expansion_layers = 5;
    int expansion_hidden = 256;
    bool outer_relu = false;
    bool share_ensemble_weights = false;

    int patch_size = 48;
    int pixels_per_patch = 2304;
    double scale_min = 1.0;
    double scale_max = 4.0;
    bool integer_scales = false;
    int batch_size = 1;
    int epochs = 30;
    int iters_per_epoch = 100;
    double lr = 1e-4;
    int lr_decay_every = 10;  // halve the lr every S epochs
    uint64_t seed = 0;

    std::string checkpoint_out = "model.ckpt";
    std::string loss_csv = "loss.csv";

    ModelSpec model_spec() const {
        ModelSpec s;
        s.mode = mode;
        s.k = k;
        s.d = d;
        s.b = b;
        s.mlp_layers = mlp_layers;
        s.mlp_hidden = mlp_hidden;
        s.expansion_layers = expansion_layers;
        s.expansion_hidden = expansion_hidden;
        s.outer_relu = outer_relu;
        s.share_ensemble_weights = share_ensemble_weights;
        return s;
    }
};

// lr is halved once per lr_decay_every completed epochs; exact powers of
// two, so after 2S epochs the value is lr/4 with no rounding.
inline double lr_for_epoch(double lr0, int epoch, int decay_every) {
    return std::ldexp(lr0, -(epoch / decay_every));
}

// Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8). Moments are
// allocated on first use and keyed by parameter order.
template <typename S>
struct AdamT {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;
    std::vector<std::vector<S>> m, v;

    void step(std::vector<NamedParamT<S>>& params, double lr) {
        if (m.empty()) {
            m.resize(params.size());
            v.resize(params.size());
            for (size_t p = 0; p < params.size(); ++p) {
                m[p].assign(static_cast<size_t>(params[p].tensor.numel()), S(0));
                v[p].assign(static_cast<size_t>(params[p].tensor.numel()), S(0));
            }
        }
        ++t;
        const double corr1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double corr2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t p = 0; p < params.size(); ++p) {
            auto& param = params[p];
            if (!param.tensor.has_grad())
                throw std::runtime_error("adam_step: missing gradient for parameter " +
                                         param.name);
            auto w = param.tensor.data();
            auto g = param.tensor.grad();
            for (size_t i = 0; i < w.size(); ++i) {
                m[p][i] = static_cast<S>(beta1 * m[p][i] + (1.0 - beta1) * g[i]);
                v[p][i] = static_cast<S>(beta2 * v[p][i] + (1.0 - beta2) * g[i] * g[i]);
                const double mhat = m[p][i] / corr1;
                const double vhat = v[p][i] / corr2;
                w[i] = static_cast<S>(w[i] - lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

// One training item: an LR patch plus the HR pixel queries sampled from the
// crop it was synthesized from.
struct TrainItem {
    Image lr;
    std::vector<QueryPoint> queries;
    Tensor targets;  // [pixels, 3]
};

// Per-purpose sampling streams; each subsystem's draws never shift
// another's.
struct SampleStreams {
    Rng scale, image, crop, pixel;
    explicit SampleStreams(uint64_t seed)
        : scale(seed, "sample/scale"),
          image(seed, "sample/image"),
          crop(seed, "sample/crop"),
          pixel(seed, "sample/pixel") {}
};

// Draw batch_size items: random scale in scale_range, random crop of size
// round(patch*s), bicubic LR synthesis, pixels_per_patch HR pixel centers
// without replacement.
std::vector<TrainItem> sample_batch(const std::vector<Image>& dataset, const TrainConfig& cfg,
                                    SampleStreams& streams);

struct LossRow {
    int epoch = 0;      // 1-based
    int iteration = 0;  // 1-based within the epoch
    double loss = 0;
    double lr = 0;
};

struct TrainResult {
    ModelT<float> model;
    std::vector<LossRow> history;
};

// Full training loop. Throws on non-finite loss naming the failing step.
// on_step, when set, observes every optimizer step.
TrainResult train(const std::vector<Image>& dataset, const TrainConfig& cfg,
                  const std::function<void(const LossRow&)>& on_step = {});

// Sorted PNG paths of a dataset directory (lexicographic, for determinism).
std::vector<std::string> list_png_files(const std::string& dir);
std::vector<Image> load_dataset(const std::string& dir);

}  // namespace aliif
