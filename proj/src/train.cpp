// SPDX-License-Identifier: Apache-2.0

#include "aliif/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <stdexcept>

namespace aliif {

namespace {

Image crop_image(const Image& im, int y0, int x0, int size) {
    Image out = Image::zeros(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = im.at(y0 + y, x0 + x, c);
    return out;
}

}  // namespace

std::vector<TrainItem> sample_batch(const std::vector<Image>& dataset, const TrainConfig& cfg,
                                    SampleStreams& streams) {
    if (dataset.empty()) throw std::runtime_error("sample_batch: dataset is empty");
    std::vector<TrainItem> batch;
    for (int item = 0; item < cfg.batch_size; ++item) {
        double s;
        if (cfg.integer_scales) {
            const int lo = static_cast<int>(std::ceil(cfg.scale_min));
            const int hi = static_cast<int>(std::floor(cfg.scale_max));
            s = static_cast<double>(lo + static_cast<int>(streams.scale.next_below(
                                             static_cast<uint64_t>(hi - lo + 1))));
        } else {
            s = streams.scale.uniform(cfg.scale_min, cfg.scale_max);
        }
        const int hr_size = static_cast<int>(std::llround(cfg.patch_size * s));

        const bool any_fits = std::any_of(dataset.begin(), dataset.end(), [&](const Image& im) {
            return im.height >= hr_size && im.width >= hr_size;
        });
        if (!any_fits)
            throw std::runtime_error("sample_batch: no dataset image fits a " +
                                     std::to_string(hr_size) + "x" + std::to_string(hr_size) +
                                     " crop (scale " + std::to_string(s) + ")");
        const Image* img = nullptr;
        while (!img) {
            const auto& cand = dataset[streams.image.next_below(dataset.size())];
            if (cand.height >= hr_size && cand.width >= hr_size) img = &cand;
        }

        const int y0 = static_cast<int>(
            streams.crop.next_below(static_cast<uint64_t>(img->height - hr_size + 1)));
        const int x0 = static_cast<int>(
            streams.crop.next_below(static_cast<uint64_t>(img->width - hr_size + 1)));
        Image hr = crop_image(*img, y0, x0, hr_size);

        TrainItem ti;
        ti.lr = bicubic_resize(hr, cfg.patch_size, cfg.patch_size);

        // Partial Fisher-Yates draw of distinct HR pixel indices.
        const int total = hr_size * hr_size;
        if (cfg.pixels_per_patch > total)
            throw std::runtime_error("sample_batch: pixels_per_patch exceeds crop area");
        std::vector<int> pool(static_cast<size_t>(total));
        std::iota(pool.begin(), pool.end(), 0);
        std::vector<float> targets(static_cast<size_t>(cfg.pixels_per_patch) * 3);
        ti.queries.resize(static_cast<size_t>(cfg.pixels_per_patch));
        for (int i = 0; i < cfg.pixels_per_patch; ++i) {
            const uint64_t j =
                i + streams.pixel.next_below(static_cast<uint64_t>(total - i));
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
            const int p = pool[static_cast<size_t>(i)];
            const int py = p / hr_size, px = p % hr_size;
            QueryPoint& q = ti.queries[static_cast<size_t>(i)];
            q.coord[0] = center_coord(py, hr_size);
            q.coord[1] = center_coord(px, hr_size);
            q.cell[0] = 2.0 / hr_size;
            q.cell[1] = 2.0 / hr_size;
            for (int c = 0; c < 3; ++c)
                targets[static_cast<size_t>(i) * 3 + c] = hr.at(py, px, c);
        }
        ti.targets = Tensor::from_data({cfg.pixels_per_patch, 3}, std::move(targets));
        batch.push_back(std::move(ti));
    }
    return batch;
}

TrainResult train(const std::vector<Image>& dataset, const TrainConfig& cfg,
                  const std::function<void(const LossRow&)>& on_step) {
    if (dataset.empty()) throw std::runtime_error("train: dataset is empty");
    TrainResult result;
    result.model = ModelT<float>::make(cfg.model_spec());
    result.model.init(cfg.seed);
    auto params = result.model.parameters();
    AdamT<float> adam;
    SampleStreams streams(cfg.seed);

    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_for_epoch(cfg.lr, epoch, cfg.lr_decay_every);
        for (int iter = 0; iter < cfg.iters_per_epoch; ++iter) {
            ++step;
            auto batch = sample_batch(dataset, cfg, streams);
            Tape tape;
            Tensor loss_sum;
            for (const TrainItem& item : batch) {
                Tensor x = image_to_tensor<float>(item.lr);
                Tensor fm = result.model.encoder.encode(x, &tape);
                Tensor fmu = unfold_features(fm, &tape);
                Tensor pred = decode_batch(result.model, fmu, fm.dim(1), fm.dim(2),
                                           item.queries, &tape);
                Tensor item_loss = l1_loss(pred, item.targets, &tape);
                loss_sum = loss_sum.defined() ? add(loss_sum, item_loss, &tape) : item_loss;
            }
            Tensor loss = cfg.batch_size > 1
                              ? scale(loss_sum, 1.0f / static_cast<float>(cfg.batch_size), &tape)
                              : loss_sum;
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value))
                throw std::runtime_error("training aborted: non-finite loss at epoch " +
                                         std::to_string(epoch + 1) + " iteration " +
                                         std::to_string(iter + 1) + " (step " +
                                         std::to_string(step) + ")");
            backward(loss, tape);
            adam.step(params, lr);
            for (auto& p : params) p.tensor.drop_grad();

            LossRow row{epoch + 1, iter + 1, loss_value, lr};
            result.history.push_back(row);
            if (on_step) on_step(row);
        }
    }
    return result;
}

std::vector<std::string> list_png_files(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::runtime_error(dir + ": not a directory");
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());
    return paths;
}

std::vector<Image> load_dataset(const std::string& dir) {
    std::vector<Image> images;
    for (const auto& path : list_png_files(dir)) images.push_back(load_png(path));
    return images;
}

}  // namespace aliif
