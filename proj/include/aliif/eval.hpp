// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "aliif/image.hpp"
#include "aliif/model.hpp"

namespace aliif {

// One aggregated result: a (method, scale) pair averaged over the dataset.
struct EvalRow {
    std::string method;
    double scale = 0;
    double psnr_db = 0;
    double ssim_val = 0;
    int images = 0;
    bool failed = false;
};

struct EvalReport {
    std::vector<EvalRow> rows;  // exactly len(scales) x len(methods)
    std::vector<std::string> warnings;
    bool all_failed = false;
};

// Protocol per image and scale s: bicubic-downsample the HR image by s,
// reconstruct to the exact HR size with each method, score PSNR/SSIM
// against the original. Methods: "bicubic" plus one per checkpoint (named
// by file stem). Unreadable images are warned about and skipped; rows fail
// only when no image was scored.
EvalReport run_eval(const std::vector<std::string>& checkpoint_paths,
                    const std::string& dataset_dir, const std::vector<double>& scales);

// Reconstruction of one LR image to (out_h, out_w) with a loaded model.
Image model_upscale(ModelT<float>& model, const Image& lr, int out_h, int out_w);

void write_eval_csv(const EvalReport& report, const std::string& path);
EvalReport parse_eval_csv(const std::string& path);
std::string format_eval_table(const EvalReport& report);

}  // namespace aliif
