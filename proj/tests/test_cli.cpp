// SPDX-License-Identifier: Apache-2.0
//
// End-to-end tests that drive the installed CLI binary as a subprocess.

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "aliif/checkpoint.hpp"
#include "aliif/eval.hpp"
#include "aliif/image.hpp"
#include "aliif/model.hpp"
#include "testutil.hpp"

using namespace aliif;
using namespace aliif::testutil;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr combined
};

CliResult run_cli(const std::string& args, const std::string& env = "") {
    std::string cmd;
    if (!env.empty()) cmd += env + " ";
    cmd += std::string(ALIIF_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult res;
    char buf[4096];
    while (size_t n = fread(buf, 1, sizeof buf, pipe)) res.output.append(buf, n);
    const int status = pclose(pipe);
    REQUIRE(WIFEXITED(status));
    res.exit_code = WEXITSTATUS(status);
    return res;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::vector<std::string> csv_lines(const std::string& path) {
    std::vector<std::string> lines;
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

std::string save_tiny_checkpoint(const std::filesystem::path& path, Mode mode,
                                 uint64_t seed = 5) {
    ModelSpec spec;
    spec.mode = mode;
    spec.k = 2;
    spec.d = 4;
    spec.b = 1;
    spec.mlp_layers = 3;
    spec.mlp_hidden = 16;
    spec.expansion_layers = 3;
    spec.expansion_hidden = 8;
    ModelT<float> model = ModelT<float>::make(spec, false);
    model.init(seed);
    save_checkpoint(model, path.string(), {});
    return path.string();
}

}  // namespace

TEST_CASE("cli train writes a checkpoint and a loss CSV") {
    const std::filesystem::path dir = fresh_dir("cli_train");
    write_texture_dir(make_texture_set(3, 11), (dir / "data").string());
    TrainConfig cfg = mini_train_config(Mode::aliif, (dir / "data").string(), 21);
    cfg.checkpoint_out = (dir / "model.ckpt").string();
    cfg.loss_csv = (dir / "loss.csv").string();
    const std::string cfg_path = (dir / "train.cfg").string();
    write_file(cfg_path, config_text(cfg));

    const CliResult res = run_cli("train " + cfg_path);
    CHECK(res.exit_code == 0);
    CHECK(res.output.find("checkpoint written") != std::string::npos);
    REQUIRE(std::filesystem::exists(cfg.checkpoint_out));

    ModelT<float> model = load_checkpoint(cfg.checkpoint_out);
    CHECK(model.spec.mode == Mode::aliif);
    CHECK(model.spec.k == cfg.k);
    CHECK(model.spec.d == cfg.d);

    const auto lines = csv_lines(cfg.loss_csv);
    REQUIRE(lines.size() == 1 + size_t(cfg.epochs) * size_t(cfg.iters_per_epoch));
    CHECK(lines[0] == "epoch,iteration,loss,lr");
    int epoch = 0, iter = 0;
    double loss = 0, lr = 0;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream first(lines[1]);
    first >> epoch >> c1 >> iter >> c2 >> loss >> c3 >> lr;
    CHECK(epoch == 1);
    CHECK(iter == 1);
    CHECK(std::isfinite(loss));
    CHECK(lr == doctest::Approx(cfg.lr));
}

TEST_CASE("cli train is deterministic and honours ALIIF_SEED") {
    const std::filesystem::path dir = fresh_dir("cli_seed");
    write_texture_dir(make_texture_set(2, 12), (dir / "data").string());

    auto cfg_for = [&](const std::string& tag, uint64_t seed) {
        TrainConfig cfg = mini_train_config(Mode::liif, (dir / "data").string(), seed);
        cfg.checkpoint_out = (dir / (tag + ".ckpt")).string();
        cfg.loss_csv = (dir / (tag + ".csv")).string();
        const std::string path = (dir / (tag + ".cfg")).string();
        write_file(path, config_text(cfg));
        return std::pair{path, cfg.checkpoint_out};
    };

    const auto [cfg_a, ckpt_a] = cfg_for("a", 7);
    const auto [cfg_b, ckpt_b] = cfg_for("b", 7);
    const auto [cfg_c, ckpt_c] = cfg_for("c", 7);      // run with ALIIF_SEED=123
    const auto [cfg_d, ckpt_d] = cfg_for("d", 123);

    CHECK(run_cli("train " + cfg_a).exit_code == 0);
    CHECK(run_cli("train " + cfg_b).exit_code == 0);
    CHECK(run_cli("train " + cfg_c, "ALIIF_SEED=123").exit_code == 0);
    CHECK(run_cli("train " + cfg_d).exit_code == 0);

    CHECK(slurp(ckpt_a) == slurp(ckpt_b));
    CHECK(checkpoint_checksum(ckpt_a) == checkpoint_checksum(ckpt_b));
    CHECK(slurp(ckpt_c) == slurp(ckpt_d));
    CHECK(slurp(ckpt_a) != slurp(ckpt_c));

    const CliResult bad = run_cli("train " + cfg_a, "ALIIF_SEED=12x");
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("ALIIF_SEED") != std::string::npos);
}

TEST_CASE("cli train rejects bad configs and empty datasets") {
    const std::filesystem::path dir = fresh_dir("cli_badcfg");
    std::filesystem::create_directories(dir / "empty");
    write_texture_dir(make_texture_set(1, 13), (dir / "data").string());

    TrainConfig cfg = mini_train_config(Mode::aliif, (dir / "data").string(), 3);
    cfg.checkpoint_out = (dir / "m.ckpt").string();
    cfg.loss_csv = (dir / "l.csv").string();

    SUBCASE("K = 0 exits 2") {
        cfg.k = 0;
        const std::string path = (dir / "k0.cfg").string();
        write_file(path, config_text(cfg));
        const CliResult res = run_cli("train " + path);
        CHECK(res.exit_code == 2);
        CHECK(res.output.find("K must be") != std::string::npos);
    }
    SUBCASE("unknown key exits 2") {
        const std::string path = (dir / "unk.cfg").string();
        write_file(path, config_text(cfg) + "warp_factor = 9\n");
        const CliResult res = run_cli("train " + path);
        CHECK(res.exit_code == 2);
        CHECK(res.output.find("unknown config key") != std::string::npos);
        CHECK(res.output.find("warp_factor") != std::string::npos);
    }
    SUBCASE("missing config file exits 2") {
        const CliResult res = run_cli("train " + (dir / "nope.cfg").string());
        CHECK(res.exit_code == 2);
        CHECK(res.output.find("cannot open config file") != std::string::npos);
    }
    SUBCASE("empty dataset dir exits 3") {
        cfg.dataset_dir = (dir / "empty").string();
        const std::string path = (dir / "empty.cfg").string();
        write_file(path, config_text(cfg));
        const CliResult res = run_cli("train " + path);
        CHECK(res.exit_code == 3);
        CHECK(res.output.find("contains no PNG images") != std::string::npos);
    }
}

TEST_CASE("cli upscale produces the requested output size") {
    const std::filesystem::path dir = fresh_dir("cli_upscale");
    const std::string ckpt = save_tiny_checkpoint(dir / "net.ckpt", Mode::aliif);
    Rng rng(9, "test/upscale-input");
    const Image input = make_texture(1, 10, 10, rng);
    const std::string in_png = (dir / "in.png").string();
    save_png(input, in_png);

    auto out_size = [&](const std::string& flags, const std::string& name) {
        const std::string out = (dir / name).string();
        const CliResult res = run_cli("upscale " + ckpt + " " + in_png + " " + out + " " + flags);
        CAPTURE(res.output);
        REQUIRE(res.exit_code == 0);
        const Image img = load_png(out);
        for (float v : img.pixels) {
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
        }
        return std::pair{img.height, img.width};
    };

    CHECK(out_size("--scale 1", "s1.png") == std::pair{10, 10});
    CHECK(out_size("--scale 2.5", "s25.png") == std::pair{25, 25});
    CHECK(out_size("--scale 0.25", "s025.png") == std::pair{3, 3});
    CHECK(out_size("--size 7x9", "sz.png") == std::pair{7, 9});
    CHECK(out_size("--scale 12", "s12.png") == std::pair{120, 120});
    CHECK(out_size("--scale 2 --share-ensemble-weights", "share.png") == std::pair{20, 20});
}

TEST_CASE("cli upscale usage and integrity errors") {
    const std::filesystem::path dir = fresh_dir("cli_upscale_err");
    const std::string ckpt = save_tiny_checkpoint(dir / "net.ckpt", Mode::liif);
    Rng rng(10, "test/upscale-input");
    save_png(make_texture(0, 8, 8, rng), (dir / "in.png").string());
    const std::string tail =
        " " + (dir / "in.png").string() + " " + (dir / "out.png").string();

    CliResult res = run_cli("upscale " + ckpt + tail + " --scale 0");
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("positive") != std::string::npos);

    res = run_cli("upscale " + ckpt + tail + " --scale 2 --size 4x4");
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("exactly one") != std::string::npos);

    res = run_cli("upscale " + ckpt + tail);
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("exactly one") != std::string::npos);

    res = run_cli("upscale " + ckpt + tail + " --size 7x");
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("expects HxW") != std::string::npos);

    res = run_cli("upscale " + ckpt + tail + " --size ax9");
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("expects HxW") != std::string::npos);

    res = run_cli("upscale " + ckpt + " " + (dir / "absent.png").string() + " " +
                  (dir / "out.png").string() + " --scale 2");
    CHECK(res.exit_code == 1);

    // Corrupt one parameter byte; the checksum must catch it.
    std::string bytes = slurp(ckpt);
    bytes[bytes.size() / 2] = char(bytes[bytes.size() / 2] ^ 0x20);
    const std::string bad_ckpt = (dir / "bad.ckpt").string();
    write_file(bad_ckpt, bytes);
    res = run_cli("upscale " + bad_ckpt + tail + " --scale 2");
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("checksum") != std::string::npos);
}

TEST_CASE("upscale output dimensions follow round(input * scale) with a floor of 1") {
    Rng rng(77, "test/upscale-dims");
    for (int i = 0; i < 200; ++i) {
        const int h = 1 + int(rng.next_below(64));
        const int w = 1 + int(rng.next_below(64));
        const double s = rng.uniform(0.05, 8.0);
        const auto [oh, ow] = scaled_size(h, w, s);
        CHECK(oh >= 1);
        CHECK(ow >= 1);
        if (oh > 1) CHECK(std::abs(oh - h * s) <= 0.5 + 1e-9);
        if (ow > 1) CHECK(std::abs(ow - w * s) <= 0.5 + 1e-9);
        if (oh == 1) CHECK(h * s <= 1.5 + 1e-9);
        if (ow == 1) CHECK(w * s <= 1.5 + 1e-9);
    }
}

TEST_CASE("cli eval reports every method at every scale") {
    const std::filesystem::path dir = fresh_dir("cli_eval");
    std::filesystem::create_directories(dir / "data");
    Rng rng(14, "test/eval-data");
    save_png(make_texture(0, 24, 24, rng), (dir / "data" / "a.png").string());
    save_png(make_texture(1, 20, 28, rng), (dir / "data" / "b.png").string());
    const std::string ckpt = save_tiny_checkpoint(dir / "model.ckpt", Mode::aliif);
    const std::string csv = (dir / "report.csv").string();

    const CliResult res =
        run_cli("eval " + ckpt + " " + (dir / "data").string() + " --scales 1,2 --out " + csv);
    CAPTURE(res.output);
    CHECK(res.exit_code == 0);
    CHECK(res.output.find("method") != std::string::npos);

    const EvalReport parsed = parse_eval_csv(csv);
    REQUIRE(parsed.rows.size() == 4);  // 2 scales x (bicubic, model)
    CHECK(parsed.rows[0].method == "bicubic");
    CHECK(parsed.rows[0].scale == doctest::Approx(1.0));
    CHECK(std::isinf(parsed.rows[0].psnr_db));
    CHECK(parsed.rows[0].psnr_db > 0);
    CHECK(parsed.rows[0].ssim_val == doctest::Approx(1.0));
    CHECK(parsed.rows[1].method == "model");
    CHECK(std::isfinite(parsed.rows[1].psnr_db));
    for (const auto& row : parsed.rows) {
        CHECK(row.images == 2);
        CHECK(!row.failed);
    }

    // The CSV must round-trip the in-process report within 1e-6.
    const EvalReport direct = run_eval({ckpt}, (dir / "data").string(), {1.0, 2.0});
    REQUIRE(direct.rows.size() == parsed.rows.size());
    for (size_t i = 0; i < parsed.rows.size(); ++i) {
        CHECK(parsed.rows[i].method == direct.rows[i].method);
        if (std::isinf(direct.rows[i].psnr_db))
            CHECK(std::isinf(parsed.rows[i].psnr_db));
        else
            CHECK(parsed.rows[i].psnr_db == doctest::Approx(direct.rows[i].psnr_db).epsilon(1e-6));
        CHECK(parsed.rows[i].ssim_val == doctest::Approx(direct.rows[i].ssim_val).epsilon(1e-6));
    }

    // A junk PNG is skipped with a warning, and does not fail the run.
    write_file((dir / "data" / "junk.png").string(), "not a png at all");
    const CliResult res2 =
        run_cli("eval " + ckpt + " " + (dir / "data").string() + " --scales 2 --out " + csv);
    CHECK(res2.exit_code == 0);
    CHECK(res2.output.find("skipping unreadable image") != std::string::npos);
    const EvalReport parsed2 = parse_eval_csv(csv);
    REQUIRE(parsed2.rows.size() == 2);
    for (const auto& row : parsed2.rows) CHECK(row.images == 2);

    const CliResult bad = run_cli("eval " + ckpt + " " + (dir / "data").string() +
                                  " --scales 2,x --out " + csv);
    CHECK(bad.exit_code == 1);
    CHECK(bad.output.find("bad scale") != std::string::npos);

    const CliResult few = run_cli("eval " + ckpt + " --scales 2 --out " + csv);
    CHECK(few.exit_code == 1);
    CHECK(few.output.find("expected <checkpoint>") != std::string::npos);
}

TEST_CASE("cli ablate-k writes one row per K and is deterministic") {
    const std::filesystem::path dir = fresh_dir("cli_ablate");
    write_texture_dir(make_texture_set(2, 15), (dir / "data").string());
    TrainConfig cfg = mini_train_config(Mode::aliif, (dir / "data").string(), 33);
    cfg.checkpoint_out = (dir / "ab.ckpt").string();
    cfg.loss_csv = (dir / "ab_loss.csv").string();
    const std::string cfg_path = (dir / "ablate.cfg").string();
    write_file(cfg_path, config_text(cfg));
    const std::string csv = (dir / "ablate.csv").string();

    const CliResult res =
        run_cli("ablate-k " + cfg_path + " --k-list 1,2 --out " + csv);
    CAPTURE(res.output);
    CHECK(res.exit_code == 0);

    const auto lines = csv_lines(csv);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "k,psnr_db,status");
    int k1 = 0, k2 = 0;
    double p1 = 0, p2 = 0;
    char comma = 0;
    std::string status1, status2;
    {
        std::istringstream ls(lines[1]);
        ls >> k1 >> comma >> p1;
        status1 = lines[1].substr(lines[1].rfind(',') + 1);
    }
    {
        std::istringstream ls(lines[2]);
        ls >> k2 >> comma >> p2;
        status2 = lines[2].substr(lines[2].rfind(',') + 1);
    }
    CHECK(k1 == 1);
    CHECK(k2 == 2);
    CHECK(std::isfinite(p1));
    CHECK(std::isfinite(p2));
    CHECK(status1 == "ok");
    CHECK(status2 == "ok");

    const std::string csv2 = (dir / "ablate2.csv").string();
    const CliResult res2 =
        run_cli("ablate-k " + cfg_path + " --k-list 1,2 --out " + csv2);
    CHECK(res2.exit_code == 0);
    CHECK(slurp(csv) == slurp(csv2));

    const CliResult zero = run_cli("ablate-k " + cfg_path + " --k-list 0 --out " + csv2);
    CHECK(zero.exit_code == 2);
    CHECK(zero.output.find("K must be") != std::string::npos);

    const CliResult junk = run_cli("ablate-k " + cfg_path + " --k-list 1,zap --out " + csv2);
    CHECK(junk.exit_code == 2);
    CHECK(junk.output.find("bad K value") != std::string::npos);
}
