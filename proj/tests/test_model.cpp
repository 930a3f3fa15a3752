#include <doctest.h>

#include "magn/model.hpp"
#include "oracles.hpp"

using namespace magn;
using oracle::random_tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.channels = 8;
    cfg.heads = 2;
    cfg.res_blocks_pre = 1;
    cfg.res_blocks_post = 1;
    cfg.graph_blocks = 1;
    cfg.in_channels = 1;
    return cfg;
}

void randomize(Tensor& t, Rng& rng, double scale) {
    for (auto& v : t.data) v = rng.uniform(-scale, scale);
}

ModelParams random_model(const ModelConfig& cfg, uint64_t seed, double scale) {
    ModelParams p = make_params<double>(cfg);
    Rng rng(seed);
    for_each_param(p, [&](const std::string&, Tensor& t) { randomize(t, rng, scale); });
    return p;
}

// Fully explicit patch-level oracle: materializes the L patch vectors, the
// per-head adjacency and graph conv, and folds by direct accumulation.
Tensor patch_aggregate_oracle(const Tensor& x, const GraphGenParams& g, const PatchGeometry& geom) {
    const int L = static_cast<int>(geom.patch_count());
    const int D = static_cast<int>(geom.node_dim());
    const int d = g.channels;
    const int B = D / d;
    const int heads = g.head_count();
    const int hw = d / heads;

    // materialize patch vectors by scanning window positions
    Tensor nodes({L, D});
    int l = 0;
    for (int py = 0; py < geom.patches_h(); ++py)
        for (int px = 0; px < geom.patches_w(); ++px, ++l)
            for (int wy = 0; wy < geom.window_h; ++wy)
                for (int wx = 0; wx < geom.window_w; ++wx)
                    for (int c = 0; c < d; ++c) {
                        const int iy = py * geom.stride_h + wy;
                        const int ix = px * geom.stride_w + wx;
                        nodes[l * D + (wy * geom.window_w + wx) * d + c] =
                            x[(static_cast<int64_t>(iy) * geom.src_w + ix) * d + c];
                    }

    Tensor mixed({L, D});
    for (int h = 0; h < heads; ++h) {
        const auto& hd = g.heads[static_cast<size_t>(h)];
        // blockwise pointwise projection then the reducing FC
        auto project = [&](const Tensor& cw, const Tensor& cb, const Tensor& fw, const Tensor& fb) {
            Tensor q({L, g.sim_dim});
            for (int u = 0; u < L; ++u) {
                std::vector<long double> pre(static_cast<size_t>(D), 0.0L);
                for (int b = 0; b < B; ++b)
                    for (int co = 0; co < d; ++co) {
                        long double acc = cb[co];
                        for (int ci = 0; ci < d; ++ci)
                            acc += (long double)nodes[u * D + b * d + ci] * (long double)cw[ci * d + co];
                        pre[static_cast<size_t>(b * d + co)] = acc;
                    }
                for (int t = 0; t < g.sim_dim; ++t) {
                    long double acc = fb[t];
                    for (int dd = 0; dd < D; ++dd)
                        acc += pre[static_cast<size_t>(dd)] * (long double)fw[dd * g.sim_dim + t];
                    q[u * g.sim_dim + t] = (double)acc;
                }
            }
            return q;
        };
        const Tensor q = project(hd.conv1_w, hd.conv1_b, hd.fc1_w, hd.fc1_b);
        const Tensor k = project(hd.conv2_w, hd.conv2_b, hd.fc2_w, hd.fc2_b);
        Tensor s({L, L});
        for (int u = 0; u < L; ++u)
            for (int v = 0; v < L; ++v) {
                long double acc = 0;
                for (int t = 0; t < g.sim_dim; ++t)
                    acc += (long double)q[u * g.sim_dim + t] * (long double)k[v * g.sim_dim + t];
                s[u * L + v] = (double)(acc / std::sqrt((long double)g.sim_dim));
            }
        Tensor masked = s;
        for (int u = 0; u < L; ++u) {
            long double mean = 0;
            for (int v = 0; v < L; ++v) mean += s[u * L + v];
            mean /= L;
            for (int v = 0; v < L; ++v)
                if ((long double)s[u * L + v] < mean) masked[u * L + v] -= 1e6;
        }
        const Tensor a = oracle::softmax_rows(masked);
        // per-position channel transform, then adjacency mixing
        Tensor xw({L, B * hw});
        for (int u = 0; u < L; ++u)
            for (int b = 0; b < B; ++b)
                for (int co = 0; co < hw; ++co) {
                    long double acc = 0;
                    for (int ci = 0; ci < d; ++ci)
                        acc += (long double)nodes[u * D + b * d + ci] *
                               (long double)hd.gconv_w[ci * hw + co];
                    xw[u * B * hw + b * hw + co] = (double)acc;
                }
        for (int u = 0; u < L; ++u)
            for (int b = 0; b < B; ++b)
                for (int co = 0; co < hw; ++co) {
                    long double acc = 0;
                    for (int v = 0; v < L; ++v)
                        acc += (long double)a[u * L + v] * (long double)xw[v * B * hw + b * hw + co];
                    mixed[u * D + b * d + h * hw + co] = (double)acc;
                }
    }
    // PReLU on channels, then count-averaged fold
    for (int u = 0; u < L; ++u)
        for (int dd = 0; dd < D; ++dd) {
            const double v = mixed[u * D + dd];
            if (v < 0) mixed[u * D + dd] = g.slopes[dd % d] * v;
        }
    Tensor acc({geom.src_h, geom.src_w, d});
    Tensor cnt({geom.src_h, geom.src_w, 1});
    l = 0;
    for (int py = 0; py < geom.patches_h(); ++py)
        for (int px = 0; px < geom.patches_w(); ++px, ++l)
            for (int wy = 0; wy < geom.window_h; ++wy)
                for (int wx = 0; wx < geom.window_w; ++wx) {
                    const int iy = py * geom.stride_h + wy;
                    const int ix = px * geom.stride_w + wx;
                    cnt[iy * geom.src_w + ix] += 1;
                    for (int c = 0; c < d; ++c)
                        acc[(static_cast<int64_t>(iy) * geom.src_w + ix) * d + c] +=
                            mixed[l * D + (wy * geom.window_w + wx) * d + c];
                }
    for (int64_t pp = 0; pp < cnt.size(); ++pp)
        for (int c = 0; c < d; ++c) acc[pp * d + c] /= cnt[pp];
    return acc;
}

} // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("residual block with zero convs is the identity") {
    ModelConfig cfg = tiny_config();
    ModelParams p = make_params<double>(cfg);
    Rng rng(71);
    const Tensor x = random_tensor({6, 5, cfg.channels}, rng);
    const Tensor y = residual_block(x, p.res_pre[0]);
    CHECK(y.shape == x.shape);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("residual block matches composed primitives") {
    ModelConfig cfg = tiny_config();
    Rng rng(72);
    ModelParams p = random_model(cfg, 72, 0.3);
    const Tensor x = random_tensor({5, 4, cfg.channels}, rng);
    const auto& r = p.res_pre[0];
    const Tensor want = ops::add(
        ops::conv2d(ops::prelu(ops::conv2d(x, r.conv1.w, r.conv1.b, {1, 1}, {1, 1}), r.slopes),
                    r.conv2.w, r.conv2.b, {1, 1}, {1, 1}),
        x);
    const Tensor got = residual_block(x, r);
    CHECK(oracle::max_abs_diff(got, want) == 0.0);
}

TEST_CASE("pixel aggregate on a single pixel") {
    ModelConfig cfg = tiny_config();
    ModelParams p = random_model(cfg, 73, 0.4);
    Rng rng(73);
    const Tensor x = random_tensor({1, 1, cfg.channels}, rng);
    const auto& g = p.graph[0].pixel[0];
    const Tensor y = pixel_aggregate(x, g, cfg.node_budget);
    CHECK(y.shape == x.shape);
    // single node: adjacency [[1]] per head, so the result is
    // prelu(concat_h(x * W_h))
    Tensor pre({1, cfg.channels});
    const int hw = cfg.channels / cfg.heads;
    for (int h = 0; h < cfg.heads; ++h) {
        const Tensor xw = ops::matmul(ops::reshape(x, {1, cfg.channels}),
                                      g.heads[static_cast<size_t>(h)].gconv_w);
        for (int j = 0; j < hw; ++j) pre[h * hw + j] = xw[j];
    }
    const Tensor want = ops::prelu(pre, g.slopes);
    CHECK(oracle::max_abs_diff(ops::reshape(y, {1, cfg.channels}), want) < 1e-12);
}

TEST_CASE("pixel aggregate equals the flat node-matrix path") {
    ModelConfig cfg = tiny_config();
    ModelParams p = random_model(cfg, 74, 0.4);
    Rng rng(74);
    const Tensor x = random_tensor({4, 4, cfg.channels}, rng);
    const Tensor y = pixel_aggregate(x, p.graph[0].pixel[0], cfg.node_budget);
    const Tensor flat =
        multi_head_graph_conv(ops::reshape(x, {16, cfg.channels}), p.graph[0].pixel[0]);
    CHECK(oracle::max_abs_diff(ops::reshape(y, {16, cfg.channels}), flat) == 0.0);
}

TEST_CASE("pixel aggregate enforces the node budget") {
    ModelConfig cfg = tiny_config();
    cfg.node_budget = 10;
    ModelParams p = random_model(cfg, 75, 0.4);
    Rng rng(75);
    const Tensor x = random_tensor({4, 4, cfg.channels}, rng);
    CHECK_THROWS_WITH_AS(pixel_aggregate(x, p.graph[0].pixel[0], cfg.node_budget),
                         doctest::Contains("tiles"), std::invalid_argument);
}

TEST_CASE("patch aggregate with a single full-size window") {
    ModelConfig cfg = tiny_config();
    cfg.window = 7;
    ModelParams p = random_model(cfg, 76, 0.3);
    Rng rng(76);
    const Tensor x = random_tensor({7, 7, cfg.channels}, rng);
    const PatchGeometry geom = cfg.geometry_for(7, 7);
    CHECK(geom.patch_count() == 1);
    const Tensor y = patch_aggregate(x, p.graph[0].patch[0], geom);
    CHECK(y.shape == x.shape);
    const Tensor want = patch_aggregate_oracle(x, p.graph[0].patch[0], geom);
    CHECK(oracle::max_rel_diff(y, want, 1e-9) < 1e-9);
}

TEST_CASE("patch aggregate matches the explicit 9-node oracle") {
    ModelConfig cfg = tiny_config();
    cfg.channels = 4;
    cfg.heads = 2;
    ModelParams p = random_model(cfg, 77, 0.3);
    Rng rng(77);
    const Tensor x = random_tensor({15, 15, 4}, rng);
    const PatchGeometry geom = cfg.geometry_for(15, 15);
    CHECK(geom.patch_count() == 9);
    const Tensor y = patch_aggregate(x, p.graph[0].patch[0], geom);
    const Tensor want = patch_aggregate_oracle(x, p.graph[0].patch[0], geom);
    CHECK(oracle::max_rel_diff(y, want, 1e-9) < 1e-8);
}

TEST_CASE("graph block with zero fusion conv is the identity") {
    ModelConfig cfg = tiny_config();
    ModelParams p = random_model(cfg, 78, 0.4);
    for (auto& v : p.graph[0].fuse.w.data) v = 0;
    for (auto& v : p.graph[0].fuse.b.data) v = 0;
    Rng rng(78);
    const Tensor x = random_tensor({11, 11, cfg.channels}, rng);
    const Tensor y = graph_block(x, p.graph[0], cfg.geometry_for(11, 11), cfg.node_budget);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("graph block shape preservation") {
    ModelConfig cfg = tiny_config();
    cfg.channels = 16;
    cfg.heads = 2;
    ModelParams p = random_model(cfg, 79, 0.2);
    Rng rng(79);
    const Tensor x = random_tensor({31, 31, 16}, rng);
    const Tensor y = graph_block(x, p.graph[0], cfg.geometry_for(31, 31), cfg.node_budget);
    CHECK(y.shape == Shape{31, 31, 16});
}

TEST_CASE("graph block gradient matches finite differences") {
    ModelConfig cfg = tiny_config();
    cfg.channels = 4;
    cfg.heads = 2;
    ModelParams p = random_model(cfg, 80, 0.3);
    Rng rng(80);
    Tensor x0 = random_tensor({11, 11, 4}, rng);
    const PatchGeometry geom = cfg.geometry_for(11, 11);

    Tape tape;
    auto lifted = lift_params(tape, p);
    Var x = track(tape, x0);
    Var loss = ops::sum_all(graph_block(x, lifted.graph[0], geom, cfg.node_budget));
    tape.backward(loss.id);
    const Tensor analytic = tape.grad(x.id);

    auto pure = [&]() {
        return ops::sum_all(graph_block(x0, p.graph[0], geom, cfg.node_budget))[0];
    };
    const Tensor numeric = oracle::finite_diff(pure, x0, 1e-5);
    CHECK(oracle::max_rel_diff(analytic, numeric, 1e-6) < 1e-4);
}

TEST_CASE("zero tail makes forward residual exactly zero") {
    ModelConfig cfg = tiny_config();
    ModelParams p = make_params<double>(cfg);
    init_params(p, 81); // random body, zero tail
    Rng rng(81);
    const Tensor img = random_tensor({15, 15, 1}, rng, 0.0, 1.0);
    const Tensor residual = magn_forward(img, p, cfg);
    CHECK(residual.shape == img.shape);
    for (int64_t i = 0; i < residual.size(); ++i) CHECK(residual[i] == 0.0);
}

TEST_CASE("forward output shape and dtype follow the input") {
    ModelConfig cfg = tiny_config();
    cfg.in_channels = 3;
    auto p32 = make_params<float>(cfg);
    init_params(p32, 82);
    TensorT<float> img({11, 15, 3});
    Rng rng(82);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform(0, 1));
    const TensorT<float> residual = magn_forward(img, p32, cfg);
    CHECK(residual.shape == Shape{11, 15, 3});
}

TEST_CASE("forward rejects bad sizes with a crop suggestion") {
    ModelConfig cfg = tiny_config();
    ModelParams p = make_params<double>(cfg);
    Rng rng(83);
    const Tensor img = random_tensor({14, 15, 1}, rng, 0.0, 1.0);
    CHECK_THROWS_WITH_AS(magn_forward(img, p, cfg), doctest::Contains("suggested crop 11x15"),
                         std::invalid_argument);
}

TEST_CASE("default configuration parameter count is close to 5.22M") {
    ModelConfig cfg; // paper-scale defaults
    auto p = make_params<float>(cfg);
    const double count = static_cast<double>(count_params(p));
    CHECK(std::abs(count / 1e6 - 5.22) / 5.22 < 0.10);
}

TEST_CASE("ablation variants build and run") {
    Rng rng(84);
    for (GraphVariant v : {GraphVariant::full, GraphVariant::no_global, GraphVariant::no_local,
                           GraphVariant::double_local}) {
        ModelConfig cfg = tiny_config();
        cfg.variant = v;
        ModelParams p = make_params<double>(cfg);
        init_params(p, 85);
        const size_t expect_pixel =
            (v == GraphVariant::full || v == GraphVariant::no_local) ? 1 : 0;
        const size_t expect_patch = v == GraphVariant::double_local ? 2
                                    : v == GraphVariant::no_local   ? 0
                                                                    : 1;
        CHECK(p.graph[0].pixel.size() == expect_pixel);
        CHECK(p.graph[0].patch.size() == expect_patch);
        const Tensor img = random_tensor({15, 15, 1}, rng, 0.0, 1.0);
        CHECK(magn_forward(img, p, cfg).shape == img.shape);
    }
}

TEST_CASE("restore on a single tile equals forward + add + clamp") {
    ModelConfig cfg = tiny_config();
    ModelParams p = random_model(cfg, 86, 0.05);
    Rng rng(86);
    const Tensor img = random_tensor({15, 15, 1}, rng, 0.0, 1.0);
    const Tensor restored = restore_image(img, p, cfg, 15);
    const Tensor want = ops::clamp01(ops::add(img, magn_forward(img, p, cfg)));
    CHECK(oracle::max_abs_diff(restored, want) == 0.0);
}

TEST_CASE("zero-parameter network restores any size exactly") {
    ModelConfig cfg = tiny_config();
    ModelParams p = make_params<double>(cfg); // all zeros
    Rng rng(87);
    for (auto [h, w] : {std::pair{15, 15}, std::pair{20, 33}, std::pair{40, 23}}) {
        const Tensor img = random_tensor({h, w, 1}, rng, 0.0, 1.0);
        const Tensor restored = restore_image(img, p, cfg, 15);
        REQUIRE(restored.shape == img.shape);
        for (int64_t i = 0; i < img.size(); ++i) CHECK(restored[i] == img[i]);
    }
}

TEST_CASE("fresh initialization is the identity restorer on odd sizes") {
    ModelConfig cfg = tiny_config();
    ModelParams p = make_params<double>(cfg);
    init_params(p, 88);
    Rng rng(88);
    const Tensor img = random_tensor({26, 37, 1}, rng, 0.0, 1.0);
    const Tensor restored = restore_image(img, p, cfg, 19);
    for (int64_t i = 0; i < img.size(); ++i) CHECK(restored[i] == img[i]);
}

TEST_CASE("tiled restore stays close to whole-image restore") {
    ModelConfig cfg = tiny_config();
    cfg.channels = 8;
    cfg.heads = 2;
    ModelParams p = random_model(cfg, 89, 0.02);
    for (auto& v : p.tail.w.data) v *= 0.1;
    Rng rng(89);
    const Tensor img = random_tensor({63, 63, 1}, rng, 0.0, 1.0);
    const Tensor whole = restore_image(img, p, cfg, 63);
    const Tensor tiled = restore_image(img, p, cfg, 31);
    double mad = 0;
    for (int64_t i = 0; i < img.size(); ++i) mad += std::abs(whole[i] - tiled[i]);
    mad /= static_cast<double>(img.size());
    CHECK(mad < 1e-3);
}

TEST_CASE("restore rejects tiles smaller than the window") {
    ModelConfig cfg = tiny_config();
    ModelParams p = make_params<double>(cfg);
    Rng rng(90);
    const Tensor img = random_tensor({15, 15, 1}, rng, 0.0, 1.0);
    CHECK_THROWS_AS(restore_image(img, p, cfg, 5), std::invalid_argument);
}

TEST_SUITE_END();
