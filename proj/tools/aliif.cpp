// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point: train / upscale / eval / ablate-k.
// Exit codes: 0 success, 1 runtime or usage error, 2 bad configuration,
// 3 empty dataset.

#include <CLI11.hpp>

#include <cmath>
#include <tuple>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "aliif/checkpoint.hpp"
#include "aliif/config.hpp"
#include "aliif/decoder.hpp"
#include "aliif/eval.hpp"
#include "aliif/train.hpp"

namespace {

using namespace aliif;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyDatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void apply_seed_env(TrainConfig& cfg) {
    const char* env = std::getenv("ALIIF_SEED");
    if (!env) return;
    try {
        size_t used = 0;
        const uint64_t seed = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument(env);
        cfg.seed = seed;
    } catch (const std::exception&) {
        throw ConfigError(std::string("ALIIF_SEED: expected an unsigned integer, got '") + env +
                          "'");
    }
}

std::vector<Image> load_dataset_checked(const std::string& dir) {
    std::vector<Image> images = load_dataset(dir);
    if (images.empty())
        throw EmptyDatasetError("dataset directory contains no PNG images: " + dir);
    return images;
}

void write_loss_csv(const std::vector<LossRow>& history, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open file for writing");
    out << "epoch,iteration,loss,lr\r\n";
    for (const auto& row : history) {
        std::ostringstream line;
        line << row.epoch << ',' << row.iteration << ',' << std::setprecision(9) << row.loss
             << ',' << row.lr;
        out << line.str() << "\r\n";
    }
}

std::vector<std::pair<std::string, std::string>> manifest_of(const TrainConfig& cfg) {
    auto num = [](double v) {
        std::ostringstream os;
        os << std::setprecision(17) << v;
        return os.str();
    };
    return {
        {"seed", std::to_string(cfg.seed)},
        {"dataset_dir", cfg.dataset_dir},
        {"patch_size", std::to_string(cfg.patch_size)},
        {"pixels_per_patch", std::to_string(cfg.pixels_per_patch)},
        {"scale_min", num(cfg.scale_min)},
        {"scale_max", num(cfg.scale_max)},
        {"integer_scales", cfg.integer_scales ? "true" : "false"},
        {"batch_size", std::to_string(cfg.batch_size)},
        {"epochs", std::to_string(cfg.epochs)},
        {"iters_per_epoch", std::to_string(cfg.iters_per_epoch)},
        {"lr", num(cfg.lr)},
        {"lr_decay_every", std::to_string(cfg.lr_decay_every)},
    };
}

TrainResult train_with_progress(const std::vector<Image>& dataset, const TrainConfig& cfg) {
    double epoch_sum = 0;
    int epoch_steps = 0;
    return train(dataset, cfg, [&](const LossRow& row) {
        epoch_sum += row.loss;
        ++epoch_steps;
        if (row.iteration == cfg.iters_per_epoch) {
            std::cerr << "epoch " << row.epoch << "/" << cfg.epochs << "  mean_loss "
                      << std::setprecision(6) << epoch_sum / epoch_steps << "  lr " << row.lr
                      << "\n";
            epoch_sum = 0;
            epoch_steps = 0;
        }
    });
}

int cmd_train(const std::string& cfg_path) {
    TrainConfig cfg = parse_train_config(cfg_path);
    apply_seed_env(cfg);
    const std::vector<Image> dataset = load_dataset_checked(cfg.dataset_dir);
    TrainResult result = train_with_progress(dataset, cfg);
    write_loss_csv(result.history, cfg.loss_csv);
    save_checkpoint(result.model, cfg.checkpoint_out, manifest_of(cfg));
    std::cout << "checkpoint written: " << cfg.checkpoint_out << "\n";
    std::cout << "loss history written: " << cfg.loss_csv << "\n";
    return 0;
}

int cmd_upscale(const std::string& ckpt, const std::string& in_path,
                const std::string& out_path, bool scale_given, double scale,
                const std::string& size, bool share_weights) {
    if (scale_given == !size.empty())
        throw UsageError("upscale: exactly one of --scale or --size is required");
    if (scale_given && !(scale > 0)) throw UsageError("upscale: --scale must be positive");
    ModelT<float> model = load_checkpoint(ckpt);
    if (share_weights) model.spec.share_ensemble_weights = true;
    const Image input = load_png(in_path);
    int out_h = 0, out_w = 0;
    if (!size.empty()) {
        const size_t x = size.find('x');
        try {
            size_t uh = 0, uw = 0;
            if (x == std::string::npos) throw std::invalid_argument(size);
            out_h = std::stoi(size.substr(0, x), &uh);
            out_w = std::stoi(size.substr(x + 1), &uw);
            if (uh != x || uw != size.size() - x - 1) throw std::invalid_argument(size);
        } catch (const std::exception&) {
            throw UsageError("upscale: --size expects HxW, got '" + size + "'");
        }
        if (out_h < 1 || out_w < 1) throw UsageError("upscale: --size must be at least 1x1");
    } else {
        std::tie(out_h, out_w) = scaled_size(input.height, input.width, scale);
    }
    const Image result = model_upscale(model, input, out_h, out_w);
    save_png(result, out_path);
    std::cout << "wrote " << out_path << " (" << out_w << "x" << out_h << ")\n";
    return 0;
}

std::vector<double> parse_scales(const std::string& text) {
    std::vector<double> scales;
    std::istringstream in(text);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        try {
            size_t used = 0;
            const double s = std::stod(tok, &used);
            if (used != tok.size() || !(s > 0)) throw std::invalid_argument(tok);
            scales.push_back(s);
        } catch (const std::exception&) {
            throw UsageError("eval: bad scale value '" + tok + "'");
        }
    }
    if (scales.empty()) throw UsageError("eval: --scales lists no scales");
    return scales;
}

int cmd_eval(const std::vector<std::string>& args, const std::string& scales_text,
             const std::string& out_csv) {
    if (args.size() < 2)
        throw UsageError("eval: expected <checkpoint>... <dataset_dir>");
    const std::string dir = args.back();
    const std::vector<std::string> ckpts(args.begin(), args.end() - 1);
    const EvalReport report = run_eval(ckpts, dir, parse_scales(scales_text));
    for (const auto& w : report.warnings) std::cerr << w << "\n";
    std::cout << format_eval_table(report);
    write_eval_csv(report, out_csv);
    std::cout << "report written: " << out_csv << "\n";
    return report.all_failed ? 1 : 0;
}

std::vector<int> parse_k_list(const std::string& text) {
    std::vector<int> ks;
    std::istringstream in(text);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        int k = 0;
        try {
            size_t used = 0;
            k = std::stoi(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError("ablate-k: bad K value '" + tok + "'");
        }
        if (k < 1) throw ConfigError("K must be ≥ 1");
        ks.push_back(k);
    }
    if (ks.empty()) throw ConfigError("ablate-k: --k-list lists no values");
    return ks;
}

int cmd_ablate_k(const std::string& cfg_path, const std::string& k_list,
                 const std::string& out_csv) {
    TrainConfig base = parse_train_config(cfg_path);
    apply_seed_env(base);
    const std::vector<int> ks = parse_k_list(k_list);
    const std::vector<Image> dataset = load_dataset_checked(base.dataset_dir);

    const std::filesystem::path ckpt_base(base.checkpoint_out);
    struct Row {
        int k;
        double psnr_db;
        bool failed;
    };
    std::vector<Row> rows;
    for (const int k : ks) {
        TrainConfig cfg = base;
        cfg.mode = Mode::aliif;
        cfg.k = k;
        std::filesystem::path ckpt = ckpt_base;
        ckpt.replace_filename(ckpt_base.stem().string() + "_k" + std::to_string(k) +
                              ckpt_base.extension().string());
        cfg.checkpoint_out = ckpt.string();
        try {
            TrainResult result = train_with_progress(dataset, cfg);
            save_checkpoint(result.model, cfg.checkpoint_out, manifest_of(cfg));
            const EvalReport report =
                run_eval({cfg.checkpoint_out}, cfg.dataset_dir, {2.0});
            const EvalRow& model_row = report.rows.back();
            rows.push_back({k, model_row.psnr_db, model_row.failed});
        } catch (const std::exception& e) {
            std::cerr << "K=" << k << " failed: " << e.what() << "\n";
            rows.push_back({k, 0.0, true});
        }
    }

    std::ofstream out(out_csv, std::ios::trunc);
    if (!out) throw std::runtime_error(out_csv + ": cannot open file for writing");
    out << "k,psnr_db,status\r\n";
    for (const auto& r : rows) {
        std::ostringstream line;
        line << r.k << ',' << std::setprecision(9) << r.psnr_db << ','
             << (r.failed ? "failed" : "ok");
        out << line.str() << "\r\n";
        std::cout << "K=" << r.k << "  psnr " << std::setprecision(6) << r.psnr_db << " dB  "
                  << (r.failed ? "failed" : "ok") << "\n";
    }
    std::cout << "report written: " << out_csv << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"arbitrary-scale image super-resolution with an adaptive local implicit "
                 "image function"};
    app.require_subcommand(1);

    auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
    std::string train_cfg;
    train_cmd->add_option("config", train_cfg, "key = value config file")->required();

    auto* up_cmd = app.add_subcommand("upscale", "upscale a PNG with a trained checkpoint");
    std::string up_ckpt, up_in, up_out, up_size;
    double up_scale = 0;
    bool up_share = false;
    up_cmd->add_option("checkpoint", up_ckpt)->required();
    up_cmd->add_option("input", up_in)->required();
    up_cmd->add_option("output", up_out)->required();
    up_cmd->add_option("--scale", up_scale, "scale factor (> 0, non-integer allowed)");
    up_cmd->add_option("--size", up_size, "exact output size HxW");
    up_cmd->add_flag("--share-ensemble-weights", up_share,
                     "compute mixture weights once per query instead of per neighbor");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints against a dataset");
    std::vector<std::string> eval_args;
    std::string eval_scales = "2,3,4,6";
    std::string eval_out = "eval_report.csv";
    eval_cmd->add_option("args", eval_args, "<checkpoint>... <dataset_dir>")->required();
    eval_cmd->add_option("--scales", eval_scales, "comma-separated scale list");
    eval_cmd->add_option("--out", eval_out, "CSV output path");

    auto* ab_cmd = app.add_subcommand("ablate-k", "train and score one model per K");
    std::string ab_cfg, ab_klist = "1,2,4", ab_out = "ablate_k.csv";
    ab_cmd->add_option("config", ab_cfg, "key = value config file")->required();
    ab_cmd->add_option("--k-list", ab_klist, "comma-separated K values");
    ab_cmd->add_option("--out", ab_out, "CSV output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(train_cfg);
        if (up_cmd->parsed())
            return cmd_upscale(up_ckpt, up_in, up_out, up_cmd->count("--scale") > 0, up_scale,
                               up_size, up_share);
        if (eval_cmd->parsed()) return cmd_eval(eval_args, eval_scales, eval_out);
        if (ab_cmd->parsed()) return cmd_ablate_k(ab_cfg, ab_klist, ab_out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const EmptyDatasetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
