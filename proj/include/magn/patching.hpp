#pragma once

#include <string>

#include "magn/tensor.hpp"

namespace magn {

/// Sliding-window geometry of an unfold: window size, strides, paddings and
/// the source map shape. Valid geometries tile the padded map exactly; the
/// patch count L follows from the extents.
struct PatchGeometry {
    int window_h = 0, window_w = 0;
    int stride_h = 1, stride_w = 1;
    int padding_h = 0, padding_w = 0;
    int src_h = 0, src_w = 0, src_c = 0;

    int patches_h() const { return (src_h + 2 * padding_h - window_h) / stride_h + 1; }
    int patches_w() const { return (src_w + 2 * padding_w - window_w) / stride_w + 1; }
    int64_t patch_count() const { return static_cast<int64_t>(patches_h()) * patches_w(); }
    int64_t node_dim() const { return static_cast<int64_t>(window_h) * window_w * src_c; }

    void validate() const {
        if (window_h <= 0 || window_w <= 0 || src_h <= 0 || src_w <= 0 || src_c <= 0)
            throw std::invalid_argument("patch geometry extents must be positive");
        if (stride_h < 1 || stride_w < 1)
            throw std::invalid_argument("patch geometry strides must be >= 1");
        if (padding_h < 0 || padding_w < 0)
            throw std::invalid_argument("patch geometry paddings must be >= 0");
        check_axis(src_h, padding_h, window_h, stride_h, "height");
        check_axis(src_w, padding_w, window_w, stride_w, "width");
    }

private:
    static void check_axis(int src, int pad, int win, int stride, const char* axis) {
        const int span = src + 2 * pad - win;
        if (span < 0)
            throw std::invalid_argument(std::string("window exceeds padded map along ") + axis);
        if (span % stride != 0) {
            // Suggest the smallest padding that restores divisibility, if one exists.
            std::string hint;
            const int need = (stride - span % stride) % stride;
            if (need % 2 == 0)
                hint = "smallest valid padding is " + std::to_string(pad + need / 2);
            else if (stride % 2 == 1)
                hint = "smallest valid padding is " + std::to_string(pad + (need + stride) / 2);
            else
                hint = "no padding fits; nearest valid extent is " + std::to_string(src - span % stride);
            throw std::invalid_argument(std::string("windows do not tile the padded map along ") +
                                        axis + " (" + std::to_string(span) + " % " +
                                        std::to_string(stride) + " != 0); " + hint);
        }
    }
};

inline PatchGeometry make_geometry(int window_h, int window_w, int stride_h, int stride_w,
                                   int padding_h, int padding_w, int src_h, int src_w, int src_c) {
    PatchGeometry g{window_h, window_w, stride_h, stride_w, padding_h, padding_w,
                    src_h,    src_w,    src_c};
    g.validate();
    return g;
}

inline PatchGeometry make_geometry(int window, int stride, int src_h, int src_w, int src_c) {
    return make_geometry(window, window, stride, stride, 0, 0, src_h, src_w, src_c);
}

/// The L unfolded windows of a feature map plus the geometry to fold them
/// back. patches has shape [window_h x window_w x C x L].
template <class T>
struct PatchSetT {
    TensorT<T> patches;
    PatchGeometry geometry;
};

using PatchSet = PatchSetT<double>;

namespace ops {

// Node-matrix form of unfold: row l is patch l flattened in (y, x, c) order.
// This is the layout the patch-level graph operates on.
template <class T>
TensorT<T> unfold_nodes(const TensorT<T>& x, const PatchGeometry& g) {
    g.validate();
    if (x.rank() != 3 || x.dim(0) != g.src_h || x.dim(1) != g.src_w || x.dim(2) != g.src_c)
        throw std::invalid_argument("unfold: input " + shape_str(x.shape) +
                                    " does not match geometry source " +
                                    shape_str({g.src_h, g.src_w, g.src_c}));
    const int L = static_cast<int>(g.patch_count());
    const int D = static_cast<int>(g.node_dim());
    const int C = g.src_c;
    TensorT<T> nodes({L, D});
    int l = 0;
    for (int py = 0; py < g.patches_h(); ++py) {
        for (int px = 0; px < g.patches_w(); ++px, ++l) {
            T* row = nodes.ptr() + static_cast<int64_t>(l) * D;
            for (int wy = 0; wy < g.window_h; ++wy) {
                const int iy = py * g.stride_h + wy - g.padding_h;
                for (int wx = 0; wx < g.window_w; ++wx) {
                    const int ix = px * g.stride_w + wx - g.padding_w;
                    T* dst = row + (static_cast<int64_t>(wy) * g.window_w + wx) * C;
                    if (iy < 0 || iy >= g.src_h || ix < 0 || ix >= g.src_w) {
                        for (int c = 0; c < C; ++c) dst[c] = 0;
                    } else {
                        const T* src = x.ptr() + (static_cast<int64_t>(iy) * g.src_w + ix) * C;
                        for (int c = 0; c < C; ++c) dst[c] = src[c];
                    }
                }
            }
        }
    }
    return nodes;
}

// Number of windows covering each source position.
template <class T = double>
TensorT<T> overlap_counts(const PatchGeometry& g) {
    g.validate();
    TensorT<T> counts({g.src_h, g.src_w, 1});
    for (int py = 0; py < g.patches_h(); ++py) {
        for (int px = 0; px < g.patches_w(); ++px) {
            for (int wy = 0; wy < g.window_h; ++wy) {
                const int iy = py * g.stride_h + wy - g.padding_h;
                if (iy < 0 || iy >= g.src_h) continue;
                for (int wx = 0; wx < g.window_w; ++wx) {
                    const int ix = px * g.stride_w + wx - g.padding_w;
                    if (ix < 0 || ix >= g.src_w) continue;
                    counts[static_cast<int64_t>(iy) * g.src_w + ix] += 1;
                }
            }
        }
    }
    return counts;
}

// Count-normalized inverse of unfold_nodes: overlapping contributions are
// summed then divided by the overlap count; padded-border values are dropped.
template <class T>
TensorT<T> fold_nodes(const TensorT<T>& nodes, const PatchGeometry& g) {
    g.validate();
    if (nodes.rank() != 2 || nodes.dim(0) != g.patch_count() || nodes.dim(1) != g.node_dim())
        throw std::invalid_argument("fold: node matrix " + shape_str(nodes.shape) +
                                    " does not match geometry (L=" +
                                    std::to_string(g.patch_count()) +
                                    ", D=" + std::to_string(g.node_dim()) + ")");
    const int C = g.src_c;
    const int D = static_cast<int>(g.node_dim());
    TensorT<T> acc({g.src_h, g.src_w, C});
    int l = 0;
    for (int py = 0; py < g.patches_h(); ++py) {
        for (int px = 0; px < g.patches_w(); ++px, ++l) {
            const T* row = nodes.ptr() + static_cast<int64_t>(l) * D;
            for (int wy = 0; wy < g.window_h; ++wy) {
                const int iy = py * g.stride_h + wy - g.padding_h;
                if (iy < 0 || iy >= g.src_h) continue;
                for (int wx = 0; wx < g.window_w; ++wx) {
                    const int ix = px * g.stride_w + wx - g.padding_w;
                    if (ix < 0 || ix >= g.src_w) continue;
                    const T* src = row + (static_cast<int64_t>(wy) * g.window_w + wx) * C;
                    T* dst = acc.ptr() + (static_cast<int64_t>(iy) * g.src_w + ix) * C;
                    for (int c = 0; c < C; ++c) dst[c] += src[c];
                }
            }
        }
    }
    const TensorT<T> counts = overlap_counts<T>(g);
    for (int64_t p = 0; p < counts.size(); ++p) {
        const T cnt = std::max(counts[p], T(1));
        T* dst = acc.ptr() + p * C;
        for (int c = 0; c < C; ++c) dst[c] /= cnt;
    }
    return acc;
}

// Gradient of fold_nodes: gather back with the same 1/count weights.
template <class T>
TensorT<T> fold_nodes_backward(const TensorT<T>& dy, const PatchGeometry& g) {
    const int C = g.src_c;
    const int D = static_cast<int>(g.node_dim());
    const int L = static_cast<int>(g.patch_count());
    const TensorT<T> counts = overlap_counts<T>(g);
    TensorT<T> dn({L, D});
    int l = 0;
    for (int py = 0; py < g.patches_h(); ++py) {
        for (int px = 0; px < g.patches_w(); ++px, ++l) {
            T* row = dn.ptr() + static_cast<int64_t>(l) * D;
            for (int wy = 0; wy < g.window_h; ++wy) {
                const int iy = py * g.stride_h + wy - g.padding_h;
                if (iy < 0 || iy >= g.src_h) continue;
                for (int wx = 0; wx < g.window_w; ++wx) {
                    const int ix = px * g.stride_w + wx - g.padding_w;
                    if (ix < 0 || ix >= g.src_w) continue;
                    const int64_t p = static_cast<int64_t>(iy) * g.src_w + ix;
                    const T w = T(1) / std::max(counts[p], T(1));
                    const T* src = dy.ptr() + p * C;
                    T* dst = row + (static_cast<int64_t>(wy) * g.window_w + wx) * C;
                    for (int c = 0; c < C; ++c) dst[c] = src[c] * w;
                }
            }
        }
    }
    return dn;
}

// Gradient of unfold_nodes: scatter-add patch rows back onto the map.
template <class T>
TensorT<T> unfold_nodes_backward(const TensorT<T>& dnodes, const PatchGeometry& g) {
    const int C = g.src_c;
    const int D = static_cast<int>(g.node_dim());
    TensorT<T> dx({g.src_h, g.src_w, C});
    int l = 0;
    for (int py = 0; py < g.patches_h(); ++py) {
        for (int px = 0; px < g.patches_w(); ++px, ++l) {
            const T* row = dnodes.ptr() + static_cast<int64_t>(l) * D;
            for (int wy = 0; wy < g.window_h; ++wy) {
                const int iy = py * g.stride_h + wy - g.padding_h;
                if (iy < 0 || iy >= g.src_h) continue;
                for (int wx = 0; wx < g.window_w; ++wx) {
                    const int ix = px * g.stride_w + wx - g.padding_w;
                    if (ix < 0 || ix >= g.src_w) continue;
                    const T* src = row + (static_cast<int64_t>(wy) * g.window_w + wx) * C;
                    T* dst = dx.ptr() + (static_cast<int64_t>(iy) * g.src_w + ix) * C;
                    for (int c = 0; c < C; ++c) dst[c] += src[c];
                }
            }
        }
    }
    return dx;
}

} // namespace ops

// [H x W x C] -> PatchSet with patches [Hp x Wp x C x L], windows scanned
// row-major over sliding positions.
template <class T>
PatchSetT<T> unfold(const TensorT<T>& x, const PatchGeometry& g) {
    const TensorT<T> nodes = ops::unfold_nodes(x, g);
    const int L = static_cast<int>(g.patch_count());
    const int D = static_cast<int>(g.node_dim());
    TensorT<T> patches({g.window_h, g.window_w, g.src_c, L});
    for (int l = 0; l < L; ++l)
        for (int d = 0; d < D; ++d)
            patches[static_cast<int64_t>(d) * L + l] = nodes[static_cast<int64_t>(l) * D + d];
    return {std::move(patches), g};
}

template <class T>
TensorT<T> fold(const PatchSetT<T>& p) {
    const PatchGeometry& g = p.geometry;
    const int L = static_cast<int>(g.patch_count());
    const int D = static_cast<int>(g.node_dim());
    Shape want{g.window_h, g.window_w, g.src_c, L};
    if (p.patches.shape != want)
        throw std::invalid_argument("fold: patches " + shape_str(p.patches.shape) +
                                    " do not match geometry " + shape_str(want));
    TensorT<T> nodes({L, D});
    for (int l = 0; l < L; ++l)
        for (int d = 0; d < D; ++d)
            nodes[static_cast<int64_t>(l) * D + d] = p.patches[static_cast<int64_t>(d) * L + l];
    return ops::fold_nodes(nodes, g);
}

} // namespace magn
