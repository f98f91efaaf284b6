// SPDX-License-Identifier: Apache-2.0

#include "aliif/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "aliif/checkpoint.hpp"
#include "aliif/decoder.hpp"
#include "aliif/train.hpp"

namespace aliif {

namespace {

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os << std::setprecision(9) << v;
    return os.str();
}

}  // namespace

Image model_upscale(ModelT<float>& model, const Image& lr, int out_h, int out_w) {
    Tensor x = image_to_tensor<float>(lr);
    Tensor fm = model.encoder.encode(x);
    return render(model, fm, out_h, out_w);
}

EvalReport run_eval(const std::vector<std::string>& checkpoint_paths,
                    const std::string& dataset_dir, const std::vector<double>& scales) {
    EvalReport report;

    std::vector<Image> images;
    for (const auto& path : list_png_files(dataset_dir)) {
        try {
            images.push_back(load_png(path));
        } catch (const std::exception& e) {
            report.warnings.push_back(std::string("skipping unreadable image: ") + e.what());
        }
    }

    struct Method {
        std::string name;
        ModelT<float> model;  // unused for bicubic
        bool is_bicubic = false;
    };
    std::vector<Method> methods;
    methods.push_back({"bicubic", {}, true});
    for (const auto& path : checkpoint_paths) {
        Method m;
        m.name = std::filesystem::path(path).stem().string();
        m.model = load_checkpoint(path);
        methods.push_back(std::move(m));
    }

    for (const double s : scales)
        for (auto& method : methods) {
            EvalRow row;
            row.method = method.name;
            row.scale = s;
            double psnr_sum = 0, ssim_sum = 0;
            for (const Image& hr : images) {
                const int lh = std::max(1, static_cast<int>(std::llround(hr.height / s)));
                const int lw = std::max(1, static_cast<int>(std::llround(hr.width / s)));
                const Image lr = bicubic_resize(hr, lh, lw);
                const Image sr = method.is_bicubic
                                     ? bicubic_resize(lr, hr.height, hr.width)
                                     : model_upscale(method.model, lr, hr.height, hr.width);
                psnr_sum += psnr(hr, sr);
                ssim_sum += std::min(hr.height, hr.width) >= 8 ? ssim(hr, sr) : 0.0;
                ++row.images;
            }
            if (row.images == 0) {
                row.failed = true;
            } else {
                row.psnr_db = psnr_sum / row.images;
                row.ssim_val = ssim_sum / row.images;
            }
            report.rows.push_back(std::move(row));
        }

    report.all_failed =
        !report.rows.empty() &&
        std::all_of(report.rows.begin(), report.rows.end(), [](const EvalRow& r) {
            return r.failed;
        });
    return report;
}

void write_eval_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open file for writing");
    out << "method,scale,psnr_db,ssim,images,status\r\n";
    for (const auto& r : report.rows)
        out << r.method << ',' << format_double(r.scale) << ',' << format_double(r.psnr_db)
            << ',' << format_double(r.ssim_val) << ',' << r.images << ','
            << (r.failed ? "failed" : "ok") << "\r\n";
}

EvalReport parse_eval_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open file");
    EvalReport report;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        std::istringstream ls(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() != 6) throw std::runtime_error(path + ": malformed CSV row: " + line);
        EvalRow r;
        r.method = fields[0];
        r.scale = std::stod(fields[1]);
        r.psnr_db = std::stod(fields[2]);
        r.ssim_val = std::stod(fields[3]);
        r.images = std::stoi(fields[4]);
        r.failed = fields[5] == "failed";
        report.rows.push_back(std::move(r));
    }
    return report;
}

std::string format_eval_table(const EvalReport& report) {
    size_t name_w = 6;
    for (const auto& r : report.rows) name_w = std::max(name_w, r.method.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << "method" << std::right
       << std::setw(8) << "scale" << std::setw(12) << "psnr(dB)" << std::setw(10) << "ssim"
       << std::setw(8) << "images" << std::setw(9) << "status" << '\n';
    for (const auto& r : report.rows) {
        std::ostringstream psnr_s, ssim_s, scale_s;
        scale_s << std::setprecision(4) << r.scale;
        if (std::isinf(r.psnr_db))
            psnr_s << "inf";
        else
            psnr_s << std::fixed << std::setprecision(2) << r.psnr_db;
        ssim_s << std::fixed << std::setprecision(4) << r.ssim_val;
        os << std::left << std::setw(static_cast<int>(name_w) + 2) << r.method << std::right
           << std::setw(8) << scale_s.str() << std::setw(12) << psnr_s.str() << std::setw(10)
           << ssim_s.str() << std::setw(8) << r.images << std::setw(9)
           << (r.failed ? "failed" : "ok") << '\n';
    }
    return os.str();
}

}  // namespace aliif
