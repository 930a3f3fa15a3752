// Command-line entry point: degradation, training, restoration, evaluation
// and gradient verification over PNG images.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>

#include <CLI11.hpp>

#include "magn/checkpoint.hpp"
#include "magn/config.hpp"
#include "magn/degradation.hpp"
#include "magn/gradcheck.hpp"
#include "magn/image_io.hpp"
#include "magn/metrics.hpp"
#include "magn/model.hpp"
#include "magn/parallel.hpp"
#include "magn/trainer.hpp"

namespace fs = std::filesystem;
using namespace magn;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Stable per-file noise seed: independent of listing order, deterministic
// across re-runs with the same --seed.
uint64_t file_seed(uint64_t base, const std::string& basename) {
    uint64_t mix = base ^ fnv1a(basename);
    return splitmix64(mix);
}

struct DegradeArgs {
    std::string in_dir, out_dir, kind = "gaussian";
    double sigma = 25.0;
    uint64_t seed = 0;
};

int run_degrade(const DegradeArgs& a) {
    const DegradeKind kind = degrade_kind_from_string(a.kind);
    const auto files = list_png_files(a.in_dir);
    if (files.empty()) throw DataError("no PNG files in " + a.in_dir);
    fs::create_directories(a.out_dir);

    std::mutex mu;
    std::vector<std::string> failures;
    parallel_for(files.size(), [&](size_t i) {
        const std::string base = fs::path(files[i]).filename().string();
        try {
            const ImageFile img = read_png(files[i]);
            DegradeSpec spec;
            spec.kind = kind;
            spec.sigma = a.sigma;
            spec.seed = file_seed(a.seed, base);
            Tensor out;
            if (kind == DegradeKind::mosaic) {
                out = bayer_mosaic(to_three_channels(img.pixels));
            } else {
                out = add_gaussian_noise(img.pixels, spec);
            }
            write_png((fs::path(a.out_dir) / base).string(), out, img.bit_depth);
            std::lock_guard<std::mutex> lock(mu);
            std::printf("%s  %dx%d  kind=%s sigma=%g\n", base.c_str(), img.pixels.dim(1),
                        img.pixels.dim(0), a.kind.c_str(), a.sigma);
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(mu);
            failures.push_back(base + ": " + e.what());
        }
    });
    for (const auto& f : failures) std::fprintf(stderr, "failed %s\n", f.c_str());
    if (failures.size() == files.size())
        throw DataError("all " + std::to_string(files.size()) + " files failed");
    return 0;
}

struct TrainArgs {
    std::string data_dir, config_file, out_dir, resume;
};

template <class T>
int run_train_typed(const TrainArgs& a, const ModelConfig& mcfg, const TrainConfig& tcfg) {
    const auto files = list_png_files(a.data_dir);
    if (files.empty()) throw DataError("no PNG files in " + a.data_dir);
    std::vector<TensorT<T>> images;
    for (const auto& f : files) {
        try {
            Tensor px = read_png(f).pixels;
            px = mcfg.in_channels == 1 ? to_single_channel(px) : to_three_channels(px);
            if (px.dim(0) < tcfg.crop || px.dim(1) < tcfg.crop) {
                std::fprintf(stderr, "warning: %s is smaller than the crop, skipped\n", f.c_str());
                continue;
            }
            images.push_back(px.template cast<T>());
        } catch (const std::exception& e) {
            std::fprintf(stderr, "warning: skipping %s: %s\n", f.c_str(), e.what());
        }
    }
    if (images.empty()) throw DataError("no usable training images in " + a.data_dir);
    fs::create_directories(a.out_dir);

    ModelParamsT<TensorT<T>> params = make_params<T>(mcfg);
    OptimizerStateT<T> state = make_optimizer_state(params);
    if (!a.resume.empty()) {
        const CheckpointData d = load_checkpoint(a.resume);
        unpack_checkpoint(d, params, &state);
        std::printf("resumed from %s at step %lld\n", a.resume.c_str(),
                    static_cast<long long>(state.step));
    } else {
        init_params(params, tcfg.seed);
    }

    const int64_t total = tcfg.total_steps(images.size());
    auto save = [&](const std::string& name) {
        CheckpointData d = pack_checkpoint(render_config(mcfg, tcfg), params, &state);
        save_checkpoint((fs::path(a.out_dir) / name).string(), d);
    };
    train_loop<T>(
        params, state, mcfg, tcfg, images, total,
        [](const TrainLogEntry& e) {
            std::printf("step=%lld loss=%.8g lr=%g elapsed=%.1fs\n",
                        static_cast<long long>(e.step), e.loss, e.lr, e.elapsed_s);
        },
        [&](int64_t step) {
            char name[64];
            std::snprintf(name, sizeof(name), "ckpt_%06lld.magn", static_cast<long long>(step));
            save(name);
            std::printf("checkpoint %s\n", name);
        });
    save("final.magn");
    std::printf("wrote %s after %lld steps\n", (fs::path(a.out_dir) / "final.magn").c_str(),
                static_cast<long long>(state.step));
    return 0;
}

int run_train(const TrainArgs& a) {
    const KeyValues kv = load_config_file(a.config_file);
    check_known_keys(kv);
    const ModelConfig mcfg = model_config_from(kv);
    const TrainConfig tcfg = train_config_from(kv);
    if (!fs::is_directory(a.data_dir)) throw DataError("missing data directory " + a.data_dir);
    if (mcfg.precision == Precision::f64) return run_train_typed<double>(a, mcfg, tcfg);
    return run_train_typed<float>(a, mcfg, tcfg);
}

struct RestoreArgs {
    std::string ckpt, in_dir, out_dir;
    int tile = 0;
};

int run_restore(const RestoreArgs& a) {
    const CheckpointData d = load_checkpoint(a.ckpt);
    const ModelConfig mcfg = model_config_from(KeyValues(d.config.begin(), d.config.end()));
    ModelParams params = make_params<double>(mcfg);
    unpack_checkpoint(d, params);
    const auto files = list_png_files(a.in_dir);
    if (files.empty()) throw DataError("no PNG files in " + a.in_dir);
    fs::create_directories(a.out_dir);

    std::mutex mu;
    parallel_for(files.size(), [&](size_t i) {
        const std::string base = fs::path(files[i]).filename().string();
        const auto t0 = std::chrono::steady_clock::now();
        const ImageFile img = read_png(files[i]);
        Tensor out;
        if (img.pixels.dim(2) == mcfg.in_channels) {
            out = restore_image(img.pixels, params, mcfg, a.tile);
        } else if (mcfg.in_channels == 1) {
            // Color input through a single-channel model: restore each
            // channel independently.
            const int H = img.pixels.dim(0), W = img.pixels.dim(1), C = img.pixels.dim(2);
            out = Tensor({H, W, C});
            for (int c = 0; c < C; ++c) {
                Tensor chan({H, W, 1});
                for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p)
                    chan[p] = img.pixels[p * C + c];
                const Tensor rc = restore_image(chan, params, mcfg, a.tile);
                for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p)
                    out[p * C + c] = rc[p];
            }
        } else {
            const Tensor rc = restore_image(to_three_channels(img.pixels), params, mcfg, a.tile);
            out = to_single_channel(rc);
        }
        write_png((fs::path(a.out_dir) / base).string(), out, img.bit_depth);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::lock_guard<std::mutex> lock(mu);
        std::printf("%s  %dx%d  %.2fs\n", base.c_str(), img.pixels.dim(1), img.pixels.dim(0),
                    secs);
    });
    return 0;
}

struct EvalArgs {
    std::string clean_dir, test_dir, report;
};

int run_eval(const EvalArgs& a) {
    const auto clean = list_png_files(a.clean_dir);
    if (clean.empty()) throw DataError("no PNG files in " + a.clean_dir);
    std::vector<std::pair<std::string, std::string>> pairs;
    std::vector<std::string> skipped;
    for (const auto& c : clean) {
        const std::string base = fs::path(c).filename().string();
        const fs::path t = fs::path(a.test_dir) / base;
        if (fs::is_regular_file(t))
            pairs.emplace_back(c, t.string());
        else
            skipped.push_back(base);
    }
    if (pairs.empty()) throw DataError("no matching basenames between the two directories");

    QualityReport report;
    report.entries.resize(pairs.size());
    parallel_for(pairs.size(), [&](size_t i) {
        const Tensor ca = read_png(pairs[i].first).pixels;
        const Tensor cb = read_png(pairs[i].second).pixels;
        QualityEntry e;
        e.name = fs::path(pairs[i].first).filename().string();
        e.psnr = psnr(ca, cb);
        e.ssim = ssim(ca, cb);
        report.entries[i] = e;
    });
    std::fputs(report.format(false).c_str(), stdout);
    for (const auto& s : skipped) std::printf("skipped %s (no pair)\n", s.c_str());
    if (!a.report.empty()) {
        const std::string tmp = a.report + ".tmp";
        {
            std::ofstream out(tmp);
            if (!out) throw DataError("cannot create " + a.report);
            out << report.format(true);
        }
        fs::rename(tmp, a.report);
    }
    return 0;
}

struct GradcheckArgs {
    std::string config_file;
    uint64_t seed = 1;
    int extent = 15;
    double fd_step = 1e-5;
    bool corrupt = false;
};

int run_gradcheck(const GradcheckArgs& a) {
    ModelConfig cfg = gradcheck_micro_config();
    if (!a.config_file.empty()) cfg = model_config_from(load_config_file(a.config_file));
    const GradCheckReport report =
        model_gradient_check(cfg, a.seed, a.extent, a.fd_step, a.corrupt);
    for (const auto& g : report.groups)
        std::printf("%-28s max_rel_err=%.3e\n", g.name.c_str(), g.max_rel_err);
    std::printf("worst=%.3e elapsed=%.1fs groups=%zu\n", report.worst, report.elapsed_s,
                report.groups.size());
    if (!report.passed(1e-3))
        throw NumericError("gradient check failed: worst relative error " +
                           std::to_string(report.worst));
    std::puts("gradient check passed");
    return 0;
}

int run_info(const std::string& ckpt) {
    const CheckpointData d = load_checkpoint(ckpt);
    std::printf("checkpoint %s (%s)\n", ckpt.c_str(), kCheckpointMagic);
    for (const auto& [k, v] : d.config) std::printf("  %s=%s\n", k.c_str(), v.c_str());
    int64_t n = 0;
    for (const auto& [name, shape] : d.manifest) n += numel(shape);
    std::printf("  parameters: %lld in %zu tensors\n", static_cast<long long>(n),
                d.manifest.size());
    std::printf("  optimizer state: %s\n", d.opt.empty() ? "absent" : "present");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-level attention-guided graph network for image restoration"};
    app.require_subcommand(1);

    DegradeArgs dg;
    auto* degrade_cmd = app.add_subcommand("degrade", "Write degraded copies of clean images");
    degrade_cmd->add_option("--in", dg.in_dir, "input directory of PNGs")->required();
    degrade_cmd->add_option("--out", dg.out_dir, "output directory")->required();
    degrade_cmd->add_option("--kind", dg.kind, "gaussian|mosaic");
    degrade_cmd->add_option("--sigma", dg.sigma, "noise std on the 0-255 scale");
    degrade_cmd->add_option("--seed", dg.seed, "noise seed");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train on a directory of clean images");
    train_cmd->add_option("--data", tr.data_dir, "directory of clean PNGs")->required();
    train_cmd->add_option("--config", tr.config_file, "key=value config file")->required();
    train_cmd->add_option("--out", tr.out_dir, "checkpoint directory")->required();
    train_cmd->add_option("--resume", tr.resume, "checkpoint to resume from");

    RestoreArgs rs;
    auto* restore_cmd = app.add_subcommand("restore", "Restore a directory of images");
    restore_cmd->add_option("--ckpt", rs.ckpt, "trained checkpoint")->required();
    restore_cmd->add_option("--in", rs.in_dir, "input directory")->required();
    restore_cmd->add_option("--out", rs.out_dir, "output directory")->required();
    restore_cmd->add_option("--tile", rs.tile, "tile extent (0 = auto)");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM of paired directories");
    eval_cmd->add_option("--clean", ev.clean_dir, "reference directory")->required();
    eval_cmd->add_option("--test", ev.test_dir, "directory under test")->required();
    eval_cmd->add_option("--report", ev.report, "CSV report path");

    GradcheckArgs gc;
    auto* gradcheck_cmd =
        app.add_subcommand("gradcheck", "Finite-difference check of every parameter group");
    gradcheck_cmd->add_option("--config", gc.config_file, "model config (default: micro)");
    gradcheck_cmd->add_option("--seed", gc.seed, "seed");
    gradcheck_cmd->add_option("--extent", gc.extent, "input extent");
    gradcheck_cmd->add_flag("--corrupt", gc.corrupt,
                            "perturb one analytic gradient (negative control)");

    std::string info_ckpt;
    auto* info_cmd = app.add_subcommand("info", "Describe a checkpoint");
    info_cmd->add_option("--ckpt", info_ckpt, "checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (degrade_cmd->parsed()) return run_degrade(dg);
        if (train_cmd->parsed()) return run_train(tr);
        if (restore_cmd->parsed()) return run_restore(rs);
        if (eval_cmd->parsed()) return run_eval(ev);
        if (gradcheck_cmd->parsed()) return run_gradcheck(gc);
        if (info_cmd->parsed()) return run_info(info_ckpt);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumeric;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return 0;
}
