#pragma once

#include <cmath>
#include <vector>

#include "magn/autograd.hpp"

namespace magn {

inline constexpr double kMaskSentinel = 1e6;
inline constexpr double kMaskedWeightCeiling = 1e-8;

/// Row-stochastic attention-derived graph weights for one head.
template <class T>
struct AdjacencyT {
    TensorT<T> weights; // m x m
    int node_count = 0;
    int head_count = 1;
};

using Adjacency = AdjacencyT<double>;

/// One attention head: two pointwise projection layers feeding the q/k
/// similarity, plus the graph-convolution weight. For patch-level graphs the
/// node dimension is a multiple of `channels` and the pointwise layers act
/// per window position.
template <class V>
struct AttentionHeadT {
    V conv1_w, conv1_b; // [d x d], [d]
    V conv2_w, conv2_b;
    V fc1_w, fc1_b; // [D x d1], [d1]
    V fc2_w, fc2_b;
    V gconv_w; // [d x d/N]
};

template <class V>
struct GraphGenParamsT {
    int channels = 0; // d: channels per node position block
    int node_dim = 0; // D: full node width (= d for pixel graphs)
    int sim_dim = 0;  // d1: projected similarity width
    std::vector<AttentionHeadT<V>> heads;
    V slopes; // PReLU applied once to the head concatenation, [d]

    int head_count() const { return static_cast<int>(heads.size()); }

    void validate() const {
        const int n = head_count();
        if (n < 1) throw std::invalid_argument("graph params: need at least one head");
        if (channels < 1 || sim_dim < 1)
            throw std::invalid_argument("graph params: channels and sim_dim must be >= 1");
        if (channels % n != 0)
            throw std::invalid_argument("graph params: head count " + std::to_string(n) +
                                        " does not divide channel count " +
                                        std::to_string(channels));
        if (node_dim % channels != 0)
            throw std::invalid_argument("graph params: node dim " + std::to_string(node_dim) +
                                        " is not a multiple of channels " +
                                        std::to_string(channels));
    }
};

using GraphGenParams = GraphGenParamsT<Tensor>;

namespace detail {

// Row means computed relative to the row max, so a row of identical values
// has mean exactly equal to them and the strict mask stays empty.
template <class T>
std::vector<T> shifted_row_means(const TensorT<T>& s) {
    const int r = s.dim(0), c = s.dim(1);
    std::vector<T> means(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        const T* row = s.ptr() + static_cast<int64_t>(i) * c;
        T mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T acc = 0;
        for (int j = 0; j < c; ++j) acc += row[j] - mx;
        means[static_cast<size_t>(i)] = mx + acc / static_cast<T>(c);
    }
    return means;
}

} // namespace detail

// -1e6 at entries whose similarity falls strictly below its row mean. The
// mask depends only on the forward value of S and carries no gradient.
template <class T>
TensorT<T> mask_penalty(const TensorT<T>& s) {
    const int r = s.dim(0), c = s.dim(1);
    const std::vector<T> means = detail::shifted_row_means(s);
    TensorT<T> penalty(s.shape);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            if (s[static_cast<int64_t>(i) * c + j] < means[static_cast<size_t>(i)])
                penalty[static_cast<int64_t>(i) * c + j] = static_cast<T>(-kMaskSentinel);
    return penalty;
}

namespace detail {

// q or k: pointwise conv over position blocks, then the reducing projection.
template <class V>
V attention_projection(const V& x, const V& conv_w, const V& conv_b, const V& fc_w, const V& fc_b,
                       int channels) {
    using ops::add_row_bias;
    using ops::matmul;
    using ops::reshape;
    const auto& xv = value_of(x);
    const int m = xv.dim(0);
    const int D = xv.dim(1);
    const int blocks = D / channels;
    V h = reshape(x, {m * blocks, channels});
    h = add_row_bias(matmul(h, conv_w), conv_b);
    h = reshape(h, {m, D});
    return add_row_bias(matmul(h, fc_w), fc_b);
}

} // namespace detail

/// Masked scaled-dot-product attention adjacency for one head:
/// S = q k^T / sqrt(d1), entries strictly below their row mean are pushed to
/// -1e6, rows are softmax-normalized.
template <class V>
V build_adjacency(const V& x, const GraphGenParamsT<V>& params, int head) {
    params.validate();
    const auto& xv = value_of(x);
    if (xv.rank() != 2 || xv.dim(1) != params.node_dim)
        throw std::invalid_argument("build_adjacency: node matrix " + shape_str(xv.shape) +
                                    " does not match node dim " + std::to_string(params.node_dim));
    if (!all_finite(xv)) throw NumericError("build_adjacency: non-finite node features");
    if (head < 0 || head >= params.head_count())
        throw std::invalid_argument("build_adjacency: head index out of range");
    const auto& hd = params.heads[static_cast<size_t>(head)];
    V q = detail::attention_projection(x, hd.conv1_w, hd.conv1_b, hd.fc1_w, hd.fc1_b,
                                       params.channels);
    V k = detail::attention_projection(x, hd.conv2_w, hd.conv2_b, hd.fc2_w, hd.fc2_b,
                                       params.channels);
    V s = ops::scale(ops::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(params.sim_dim)));
    return ops::softmax_rows(ops::add_constant(s, mask_penalty(value_of(s))));
}

// Tensor-level convenience carrying the spec'd adjacency invariants.
template <class T>
AdjacencyT<T> build_adjacency_matrix(const TensorT<T>& x, const GraphGenParamsT<TensorT<T>>& params,
                                     int head) {
    return {build_adjacency(x, params, head), x.dim(0), params.head_count()};
}

/// A x w: information aggregation over the graph followed by the learned
/// filter. Activation placement is the caller's (sigma wraps the multi-head
/// concatenation, not each head).
template <class V>
V graph_conv(const V& x, const V& a, const V& w) {
    return ops::matmul(a, ops::matmul(x, w));
}

template <class T>
TensorT<T> graph_conv(const TensorT<T>& x, const AdjacencyT<T>& a, const TensorT<T>& w) {
    return graph_conv(x, a.weights, w);
}

/// Per-head adjacency + graph conv, heads concatenated back to the input
/// width, PReLU applied once to the concatenation.
template <class V>
V multi_head_graph_conv(const V& x, const GraphGenParamsT<V>& params) {
    params.validate();
    const auto& xv = value_of(x);
    const int m = xv.dim(0);
    const int D = params.node_dim;
    const int d = params.channels;
    const int blocks = D / d;
    const int n = params.head_count();
    const int head_width = d / n;

    std::vector<V> parts;
    parts.reserve(static_cast<size_t>(n));
    for (int h = 0; h < n; ++h) {
        V a = build_adjacency(x, params, h);
        V xw = ops::matmul(ops::reshape(x, {m * blocks, d}), params.heads[static_cast<size_t>(h)].gconv_w);
        V mixed = ops::matmul(a, ops::reshape(xw, {m, blocks * head_width}));
        parts.push_back(ops::reshape(mixed, {m * blocks, head_width}));
    }
    V cat = parts.size() == 1 ? parts[0] : ops::concat_cols(parts);
    return ops::reshape(ops::prelu(cat, params.slopes), {m, D});
}

} // namespace magn
