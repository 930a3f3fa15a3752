#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "magn/graph_attention.hpp"
#include "magn/rng.hpp"

namespace magn {

enum class GraphVariant { full, no_global, no_local, double_local };

inline const char* to_string(GraphVariant v) {
    switch (v) {
        case GraphVariant::full: return "full";
        case GraphVariant::no_global: return "no_global";
        case GraphVariant::no_local: return "no_local";
        case GraphVariant::double_local: return "double_local";
    }
    return "full";
}

inline GraphVariant variant_from_string(const std::string& s) {
    if (s == "full") return GraphVariant::full;
    if (s == "no_global") return GraphVariant::no_global;
    if (s == "no_local") return GraphVariant::no_local;
    if (s == "double_local") return GraphVariant::double_local;
    throw std::invalid_argument("unknown graph variant '" + s + "'");
}

enum class Precision { f32, f64 };

struct ModelConfig {
    int channels = 64;       // d
    int res_blocks_pre = 16; // n1 before the graph stage
    int res_blocks_post = 16;
    int graph_blocks = 3; // n2
    int heads = 4;        // N
    int window = 7;
    int stride = 4;
    int padding = 0;
    int in_channels = 3;   // C
    int pixel_sim_dim = 0; // 0 -> channels / 4
    int patch_sim_dim = 0; // 0 -> channels / 2
    int node_budget = 4096;
    GraphVariant variant = GraphVariant::full;
    Precision precision = Precision::f32;

    int pixel_sim() const { return pixel_sim_dim > 0 ? pixel_sim_dim : std::max(1, channels / 4); }
    int patch_sim() const { return patch_sim_dim > 0 ? patch_sim_dim : std::max(1, channels / 2); }
    int64_t patch_node_dim() const { return static_cast<int64_t>(window) * window * channels; }

    void validate() const {
        if (channels < 1 || heads < 1) throw std::invalid_argument("config: channels and heads must be >= 1");
        if (channels % heads != 0)
            throw std::invalid_argument("config: heads " + std::to_string(heads) +
                                        " does not divide channels " + std::to_string(channels));
        if (in_channels != 1 && in_channels != 3)
            throw std::invalid_argument("config: in_channels must be 1 or 3");
        if (res_blocks_pre < 0 || res_blocks_post < 0 || graph_blocks < 0)
            throw std::invalid_argument("config: block counts must be >= 0");
        if (window < 1 || stride < 1 || padding < 0)
            throw std::invalid_argument("config: invalid window/stride/padding");
        if (window % 2 == 0) throw std::invalid_argument("config: window must be odd");
        if (node_budget < 1) throw std::invalid_argument("config: node budget must be >= 1");
        if (pixel_sim() < 1 || patch_sim() < 1) throw std::invalid_argument("config: sim dims must be >= 1");
    }

    PatchGeometry geometry_for(int h, int w) const {
        return make_geometry(window, window, stride, stride, padding, padding, h, w, channels);
    }

    // Largest valid extent not exceeding `want` (window fit + stride tiling).
    int snap_extent(int want) const {
        if (want < window) return window;
        return window + stride * ((want - window) / stride);
    }
};

template <class V>
struct ConvLayerT {
    V w, b;
};

template <class V>
struct ResBlockParamsT {
    ConvLayerT<V> conv1, conv2;
    V slopes;
};

template <class V>
struct GraphBlockParamsT {
    std::vector<GraphGenParamsT<V>> pixel; // 0 or 1 graphs over H*W pixel nodes
    std::vector<GraphGenParamsT<V>> patch; // 0..2 graphs over L window nodes
    ConvLayerT<V> fuse;                    // 3x3 d->d
};

/// Complete ordered parameter set of one network instance. Layout is fully
/// determined by ModelConfig; traversal order (for_each_param) defines the
/// checkpoint manifest order.
template <class V>
struct ModelParamsT {
    ConvLayerT<V> head;
    V head_slopes;
    std::vector<ResBlockParamsT<V>> res_pre;
    std::vector<GraphBlockParamsT<V>> graph;
    std::vector<ResBlockParamsT<V>> res_post;
    ConvLayerT<V> tail;
};

using ModelParams = ModelParamsT<Tensor>;
using ModelParams32 = ModelParamsT<Tensor32>;

// ---------------------------------------------------------------------------
// Parameter traversal. Every named tensor is one checkpoint manifest entry
// and one gradient-check group.
// ---------------------------------------------------------------------------

namespace detail {

template <class V, class F>
void visit_conv(ConvLayerT<V>& c, const std::string& prefix, F&& f) {
    f(prefix + ".w", c.w);
    f(prefix + ".b", c.b);
}

template <class V, class F>
void visit_res(ResBlockParamsT<V>& r, const std::string& prefix, F&& f) {
    visit_conv(r.conv1, prefix + ".conv1", f);
    f(prefix + ".slopes", r.slopes);
    visit_conv(r.conv2, prefix + ".conv2", f);
}

template <class V, class F>
void visit_graph_gen(GraphGenParamsT<V>& g, const std::string& prefix, F&& f) {
    for (size_t h = 0; h < g.heads.size(); ++h) {
        const std::string hp = prefix + ".head" + std::to_string(h);
        auto& hd = g.heads[h];
        f(hp + ".conv1.w", hd.conv1_w);
        f(hp + ".conv1.b", hd.conv1_b);
        f(hp + ".conv2.w", hd.conv2_w);
        f(hp + ".conv2.b", hd.conv2_b);
        f(hp + ".fc1.w", hd.fc1_w);
        f(hp + ".fc1.b", hd.fc1_b);
        f(hp + ".fc2.w", hd.fc2_w);
        f(hp + ".fc2.b", hd.fc2_b);
        f(hp + ".gconv.w", hd.gconv_w);
    }
    f(prefix + ".slopes", g.slopes);
}

} // namespace detail

template <class V, class F>
void for_each_param(ModelParamsT<V>& p, F&& f) {
    detail::visit_conv(p.head, "head.conv", f);
    f("head.slopes", p.head_slopes);
    for (size_t i = 0; i < p.res_pre.size(); ++i)
        detail::visit_res(p.res_pre[i], "res_pre." + std::to_string(i), f);
    for (size_t i = 0; i < p.graph.size(); ++i) {
        const std::string gp = "graph." + std::to_string(i);
        for (size_t j = 0; j < p.graph[i].pixel.size(); ++j)
            detail::visit_graph_gen(p.graph[i].pixel[j], gp + ".pixel", f);
        for (size_t j = 0; j < p.graph[i].patch.size(); ++j)
            detail::visit_graph_gen(p.graph[i].patch[j], gp + ".patch" + std::to_string(j), f);
        detail::visit_conv(p.graph[i].fuse, gp + ".fuse", f);
    }
    for (size_t i = 0; i < p.res_post.size(); ++i)
        detail::visit_res(p.res_post[i], "res_post." + std::to_string(i), f);
    detail::visit_conv(p.tail, "tail.conv", f);
}

template <class V, class F>
void for_each_param(const ModelParamsT<V>& p, F&& f) {
    for_each_param(const_cast<ModelParamsT<V>&>(p),
                   [&f](const std::string& name, V& t) { f(name, static_cast<const V&>(t)); });
}

// ---------------------------------------------------------------------------
// Construction and initialization.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
GraphGenParamsT<TensorT<T>> make_graph_gen(int channels, int node_dim, int heads, int sim_dim) {
    GraphGenParamsT<TensorT<T>> g;
    g.channels = channels;
    g.node_dim = node_dim;
    g.sim_dim = sim_dim;
    const int head_width = channels / heads;
    for (int h = 0; h < heads; ++h) {
        AttentionHeadT<TensorT<T>> hd;
        hd.conv1_w = TensorT<T>({channels, channels});
        hd.conv1_b = TensorT<T>({channels});
        hd.conv2_w = TensorT<T>({channels, channels});
        hd.conv2_b = TensorT<T>({channels});
        hd.fc1_w = TensorT<T>({node_dim, sim_dim});
        hd.fc1_b = TensorT<T>({sim_dim});
        hd.fc2_w = TensorT<T>({node_dim, sim_dim});
        hd.fc2_b = TensorT<T>({sim_dim});
        hd.gconv_w = TensorT<T>({channels, head_width});
        g.heads.push_back(std::move(hd));
    }
    g.slopes = TensorT<T>({channels});
    g.validate();
    return g;
}

} // namespace detail

template <class T>
ModelParamsT<TensorT<T>> make_params(const ModelConfig& cfg) {
    cfg.validate();
    const int d = cfg.channels;
    const int c = cfg.in_channels;
    ModelParamsT<TensorT<T>> p;
    p.head.w = TensorT<T>({3, 3, c, d});
    p.head.b = TensorT<T>({d});
    p.head_slopes = TensorT<T>({d});
    auto make_res = [&] {
        ResBlockParamsT<TensorT<T>> r;
        r.conv1.w = TensorT<T>({3, 3, d, d});
        r.conv1.b = TensorT<T>({d});
        r.slopes = TensorT<T>({d});
        r.conv2.w = TensorT<T>({3, 3, d, d});
        r.conv2.b = TensorT<T>({d});
        return r;
    };
    for (int i = 0; i < cfg.res_blocks_pre; ++i) p.res_pre.push_back(make_res());
    const int patch_dim = static_cast<int>(cfg.patch_node_dim());
    for (int i = 0; i < cfg.graph_blocks; ++i) {
        GraphBlockParamsT<TensorT<T>> g;
        const bool want_pixel =
            cfg.variant == GraphVariant::full || cfg.variant == GraphVariant::no_local;
        const int n_patch = cfg.variant == GraphVariant::double_local ? 2
                            : cfg.variant == GraphVariant::no_local   ? 0
                                                                      : 1;
        if (want_pixel)
            g.pixel.push_back(detail::make_graph_gen<T>(d, d, cfg.heads, cfg.pixel_sim()));
        for (int j = 0; j < n_patch; ++j)
            g.patch.push_back(detail::make_graph_gen<T>(d, patch_dim, cfg.heads, cfg.patch_sim()));
        g.fuse.w = TensorT<T>({3, 3, d, d});
        g.fuse.b = TensorT<T>({d});
        p.graph.push_back(std::move(g));
    }
    for (int i = 0; i < cfg.res_blocks_post; ++i) p.res_post.push_back(make_res());
    p.tail.w = TensorT<T>({3, 3, d, c});
    p.tail.b = TensorT<T>({c});
    return p;
}

/// Fan-in-scaled uniform init; PReLU slopes 0.25; biases zero; tail conv
/// zero so a fresh model is the identity restorer.
template <class T>
void init_params(ModelParamsT<TensorT<T>>& p, uint64_t seed, double gain = 1.0) {
    Rng rng(seed);
    for_each_param(p, [&](const std::string& name, TensorT<T>& t) {
        const bool is_tail = name.rfind("tail.", 0) == 0;
        if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0) {
            for (auto& v : t.data) v = 0;
        } else if (name.size() >= 6 && name.compare(name.size() - 6, 6, "slopes") == 0) {
            for (auto& v : t.data) v = static_cast<T>(0.25);
        } else if (is_tail) {
            for (auto& v : t.data) v = 0;
        } else {
            int64_t fan_in = 1;
            for (size_t i = 0; i + 1 < t.shape.size(); ++i) fan_in *= t.shape[i];
            const double bound = gain / std::sqrt(static_cast<double>(fan_in));
            for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
        }
    });
}

template <class V>
int64_t count_params(const ModelParamsT<V>& p) {
    int64_t n = 0;
    for_each_param(p, [&n](const std::string&, const V& t) { n += value_of(t).size(); });
    return n;
}

template <class U, class V>
ModelParamsT<U> structure_like(const ModelParamsT<V>& p) {
    ModelParamsT<U> out;
    out.head_slopes = U{};
    auto copy_conv = [](const ConvLayerT<V>&) { return ConvLayerT<U>{}; };
    out.head = copy_conv(p.head);
    for (const auto& r : p.res_pre) {
        (void)r;
        out.res_pre.push_back(ResBlockParamsT<U>{});
    }
    for (const auto& g : p.graph) {
        GraphBlockParamsT<U> gb;
        for (const auto& gg : g.pixel) {
            GraphGenParamsT<U> u;
            u.channels = gg.channels;
            u.node_dim = gg.node_dim;
            u.sim_dim = gg.sim_dim;
            u.heads.resize(gg.heads.size());
            gb.pixel.push_back(std::move(u));
        }
        for (const auto& gg : g.patch) {
            GraphGenParamsT<U> u;
            u.channels = gg.channels;
            u.node_dim = gg.node_dim;
            u.sim_dim = gg.sim_dim;
            u.heads.resize(gg.heads.size());
            gb.patch.push_back(std::move(u));
        }
        out.graph.push_back(std::move(gb));
    }
    for (const auto& r : p.res_post) {
        (void)r;
        out.res_post.push_back(ResBlockParamsT<U>{});
    }
    return out;
}

template <class V>
std::vector<const V*> collect_params(const ModelParamsT<V>& p) {
    std::vector<const V*> out;
    for_each_param(p, [&out](const std::string&, const V& t) { out.push_back(&t); });
    return out;
}

template <class V>
std::vector<V*> collect_params_mut(ModelParamsT<V>& p) {
    std::vector<V*> out;
    for_each_param(p, [&out](const std::string&, V& t) { out.push_back(&t); });
    return out;
}

template <class V>
std::vector<std::string> param_names(const ModelParamsT<V>& p) {
    std::vector<std::string> out;
    for_each_param(p, [&out](const std::string& n, const V&) { out.push_back(n); });
    return out;
}

// Lift plain parameters onto a tape as tracked leaves.
template <class T>
ModelParamsT<VarT<T>> lift_params(TapeT<T>& tape, const ModelParamsT<TensorT<T>>& p) {
    ModelParamsT<VarT<T>> out = structure_like<VarT<T>>(p);
    auto src = collect_params(p);
    size_t i = 0;
    for_each_param(out, [&](const std::string&, VarT<T>& v) { v = track(tape, *src[i++]); });
    return out;
}

// ---------------------------------------------------------------------------
// Network blocks. Generic over plain tensors (inference) and tape variables
// (training); both run the same code.
// ---------------------------------------------------------------------------

template <class V>
V conv3x3(const V& x, const ConvLayerT<V>& c) {
    return ops::conv2d(x, c.w, c.b, Pad2{1, 1}, Stride2{1, 1});
}

/// conv -> PReLU -> conv, plus the skip connection.
template <class V>
V residual_block(const V& x, const ResBlockParamsT<V>& p) {
    return ops::add(conv3x3(ops::prelu(conv3x3(x, p.conv1), p.slopes), p.conv2), x);
}

/// Graph aggregation over the H*W pixel nodes of a feature map.
template <class V>
V pixel_aggregate(const V& x, const GraphGenParamsT<V>& params, int node_budget) {
    const auto& xv = value_of(x);
    const int h = xv.dim(0), w = xv.dim(1), d = xv.dim(2);
    const int64_t m = static_cast<int64_t>(h) * w;
    if (m > node_budget)
        throw std::invalid_argument("pixel graph of " + std::to_string(m) +
                                    " nodes exceeds the node budget " +
                                    std::to_string(node_budget) + "; process in tiles");
    V nodes = ops::reshape(x, {static_cast<int>(m), d});
    return ops::reshape(multi_head_graph_conv(nodes, params), {h, w, d});
}

/// Graph aggregation over the L flattened sliding windows of a feature map.
template <class V>
V patch_aggregate(const V& x, const GraphGenParamsT<V>& params, const PatchGeometry& geom) {
    V nodes = ops::unfold_nodes(x, geom);
    return ops::fold_nodes(multi_head_graph_conv(nodes, params), geom);
}

/// Dual-level residual fusion: x + normalize(fuse(patch + pixel)).
template <class V>
V graph_block(const V& x, const GraphBlockParamsT<V>& p, const PatchGeometry& geom,
              int node_budget) {
    V agg;
    bool have = false;
    for (const auto& gg : p.pixel) {
        V a = pixel_aggregate(x, gg, node_budget);
        agg = have ? ops::add(agg, a) : a;
        have = true;
    }
    for (const auto& gg : p.patch) {
        V a = patch_aggregate(x, gg, geom);
        agg = have ? ops::add(agg, a) : a;
        have = true;
    }
    if (!have) return x;
    return ops::add(x, ops::feature_normalize(conv3x3(agg, p.fuse)));
}

/// Residual the network predicts for one image: tail(res2(graph(res1(head(x))))).
template <class V>
V magn_forward(const V& image, const ModelParamsT<V>& p, const ModelConfig& cfg) {
    const auto& iv = value_of(image);
    if (iv.rank() != 3 || iv.dim(2) != cfg.in_channels)
        throw std::invalid_argument("forward: expected HxWx" + std::to_string(cfg.in_channels) +
                                    " image, got " + shape_str(iv.shape));
    PatchGeometry geom;
    try {
        geom = cfg.geometry_for(iv.dim(0), iv.dim(1));
    } catch (const std::invalid_argument&) {
        throw std::invalid_argument(
            "forward: image extent " + std::to_string(iv.dim(0)) + "x" + std::to_string(iv.dim(1)) +
            " does not fit window " + std::to_string(cfg.window) + "/stride " +
            std::to_string(cfg.stride) + "; suggested crop " +
            std::to_string(cfg.snap_extent(iv.dim(0))) + "x" +
            std::to_string(cfg.snap_extent(iv.dim(1))));
    }
    V h = ops::prelu(conv3x3(image, p.head), p.head_slopes);
    for (const auto& r : p.res_pre) h = residual_block(h, r);
    for (const auto& g : p.graph) h = graph_block(h, g, geom, cfg.node_budget);
    for (const auto& r : p.res_post) h = residual_block(h, r);
    return conv3x3(h, p.tail);
}

// ---------------------------------------------------------------------------
// Full-size inference. Tiles overlap by at least window - stride; residuals
// are accumulated and count-averaged, then added to the input once, so the
// zero-residual network stays an exact identity.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> tile_starts(int extent, int tile, int overlap) {
    std::vector<int> starts;
    const int step = std::max(1, tile - overlap);
    for (int s = 0; s + tile < extent; s += step) starts.push_back(s);
    starts.push_back(extent - tile);
    return starts;
}

} // namespace detail

template <class T>
TensorT<T> restore_image(const TensorT<T>& image, const ModelParamsT<TensorT<T>>& p,
                         const ModelConfig& cfg, int tile = 0) {
    cfg.validate();
    const int H = image.dim(0), W = image.dim(1), C = image.dim(2);
    if (C != cfg.in_channels)
        throw std::invalid_argument("restore: image has " + std::to_string(C) +
                                    " channels, model expects " + std::to_string(cfg.in_channels));
    if (H < cfg.window || W < cfg.window)
        throw DataError("restore: image " + std::to_string(H) + "x" + std::to_string(W) +
                        " is smaller than the window " + std::to_string(cfg.window));
    int want = tile;
    if (want <= 0) {
        want = static_cast<int>(std::sqrt(static_cast<double>(cfg.node_budget)));
    } else if (want < cfg.window) {
        throw std::invalid_argument("restore: tile " + std::to_string(want) +
                                    " is smaller than the window " + std::to_string(cfg.window));
    }
    const int th = cfg.snap_extent(std::min(want, H));
    const int tw = cfg.snap_extent(std::min(want, W));
    if (static_cast<int64_t>(th) * tw > cfg.node_budget)
        throw std::invalid_argument("restore: tile " + std::to_string(th) + "x" +
                                    std::to_string(tw) + " exceeds the node budget " +
                                    std::to_string(cfg.node_budget));
    const int overlap = std::max(0, cfg.window - cfg.stride);
    TensorT<T> residual_sum(image.shape);
    TensorT<T> counts({H, W, 1});
    for (int sy : detail::tile_starts(H, th, overlap)) {
        for (int sx : detail::tile_starts(W, tw, overlap)) {
            TensorT<T> patch({th, tw, C});
            for (int y = 0; y < th; ++y)
                for (int x = 0; x < tw; ++x)
                    for (int c = 0; c < C; ++c)
                        patch[(static_cast<int64_t>(y) * tw + x) * C + c] =
                            image[(static_cast<int64_t>(sy + y) * W + sx + x) * C + c];
            TensorT<T> res = magn_forward(patch, p, cfg);
            for (int y = 0; y < th; ++y)
                for (int x = 0; x < tw; ++x) {
                    counts[static_cast<int64_t>(sy + y) * W + sx + x] += 1;
                    for (int c = 0; c < C; ++c)
                        residual_sum[(static_cast<int64_t>(sy + y) * W + sx + x) * C + c] +=
                            res[(static_cast<int64_t>(y) * tw + x) * C + c];
                }
        }
    }
    TensorT<T> out(image.shape);
    for (int64_t pos = 0; pos < static_cast<int64_t>(H) * W; ++pos) {
        const T cnt = counts[pos];
        for (int c = 0; c < C; ++c) {
            const T v = image[pos * C + c] + residual_sum[pos * C + c] / cnt;
            out[pos * C + c] = std::min(T(1), std::max(T(0), v));
        }
    }
    return out;
}

} // namespace magn
