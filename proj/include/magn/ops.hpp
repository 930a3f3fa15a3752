#pragma once

#include <algorithm>
#include <cmath>

#include "magn/tensor.hpp"

namespace magn {

struct Pad2 {
    int h = 0;
    int w = 0;
};

struct Stride2 {
    int h = 1;
    int w = 1;
};

namespace ops {

template <class T>
void require_matrix(const TensorT<T>& t, const char* name) {
    if (t.rank() != 2)
        throw std::invalid_argument(std::string(name) + " must be a matrix, got shape " +
                                    shape_str(t.shape));
}

// ---------------------------------------------------------------------------
// matmul family. _nt multiplies by the transpose of b, _tn by the transpose
// of a; both exist so backward passes never materialize a transposed copy.
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    require_matrix(a, "matmul lhs");
    require_matrix(b, "matmul rhs");
    if (a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: inner extents disagree, " + shape_str(a.shape) +
                                    " x " + shape_str(b.shape));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<T> c({m, n});
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* pc = c.ptr();
    for (int i = 0; i < m; ++i) {
        T* ci = pc + static_cast<int64_t>(i) * n;
        const T* ai = pa + static_cast<int64_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const T v = ai[kk];
            const T* bk = pb + static_cast<int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) ci[j] += v * bk[j];
        }
    }
    return c;
}

// a[m x k] * b[n x k]^T -> [m x n]
template <class T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
    require_matrix(a, "matmul_nt lhs");
    require_matrix(b, "matmul_nt rhs");
    if (a.dim(1) != b.dim(1))
        throw std::invalid_argument("matmul_nt: inner extents disagree, " + shape_str(a.shape) +
                                    " x " + shape_str(b.shape) + "^T");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    TensorT<T> c({m, n});
    for (int i = 0; i < m; ++i) {
        const T* ai = a.ptr() + static_cast<int64_t>(i) * k;
        T* ci = c.ptr() + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* bj = b.ptr() + static_cast<int64_t>(j) * k;
            T acc = 0;
            for (int kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
            ci[j] = acc;
        }
    }
    return c;
}

// a[k x m]^T * b[k x n] -> [m x n]
template <class T>
TensorT<T> matmul_tn(const TensorT<T>& a, const TensorT<T>& b) {
    require_matrix(a, "matmul_tn lhs");
    require_matrix(b, "matmul_tn rhs");
    if (a.dim(0) != b.dim(0))
        throw std::invalid_argument("matmul_tn: inner extents disagree, " + shape_str(a.shape) +
                                    "^T x " + shape_str(b.shape));
    const int k = a.dim(0), m = a.dim(1), n = b.dim(1);
    TensorT<T> c({m, n});
    for (int kk = 0; kk < k; ++kk) {
        const T* ak = a.ptr() + static_cast<int64_t>(kk) * m;
        const T* bk = b.ptr() + static_cast<int64_t>(kk) * n;
        for (int i = 0; i < m; ++i) {
            const T v = ak[i];
            T* ci = c.ptr() + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += v * bk[j];
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// conv2d, channels-last. input [H x W x Cin], kernel [kh x kw x Cin x Cout].
// ---------------------------------------------------------------------------

inline int conv_out_extent(int in, int k, int pad, int stride) {
    return (in + 2 * pad - k) / stride + 1;
}

template <class T>
void check_conv_args(const TensorT<T>& x, const TensorT<T>& k, const TensorT<T>& b, Pad2 pad,
                     Stride2 stride) {
    if (x.rank() != 3) throw std::invalid_argument("conv2d input must be HxWxC, got " + shape_str(x.shape));
    if (k.rank() != 4) throw std::invalid_argument("conv2d kernel must be khxkwxCinxCout, got " + shape_str(k.shape));
    if (k.dim(2) != x.dim(2))
        throw std::invalid_argument("conv2d: kernel Cin " + std::to_string(k.dim(2)) +
                                    " does not match input channels " + std::to_string(x.dim(2)));
    if (b.rank() != 1 || b.dim(0) != k.dim(3))
        throw std::invalid_argument("conv2d: bias shape " + shape_str(b.shape) +
                                    " does not match Cout " + std::to_string(k.dim(3)));
    if (stride.h < 1 || stride.w < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (x.dim(0) + 2 * pad.h < k.dim(0) || x.dim(1) + 2 * pad.w < k.dim(1))
        throw std::invalid_argument("conv2d: kernel " + shape_str(k.shape) +
                                    " larger than padded input " + shape_str(x.shape));
}

template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& k, const TensorT<T>& b, Pad2 pad,
                  Stride2 stride) {
    check_conv_args(x, k, b, pad, stride);
    const int H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
    const int kh = k.dim(0), kw = k.dim(1), Co = k.dim(3);
    const int Ho = conv_out_extent(H, kh, pad.h, stride.h);
    const int Wo = conv_out_extent(W, kw, pad.w, stride.w);
    TensorT<T> y({Ho, Wo, Co});
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            T* out = y.ptr() + (static_cast<int64_t>(oy) * Wo + ox) * Co;
            for (int c = 0; c < Co; ++c) out[c] = b[c];
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride.h + ky - pad.h;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride.w + kx - pad.w;
                    if (ix < 0 || ix >= W) continue;
                    const T* in = x.ptr() + (static_cast<int64_t>(iy) * W + ix) * Ci;
                    const T* kk = k.ptr() + (static_cast<int64_t>(ky) * kw + kx) * Ci * Co;
                    for (int ci = 0; ci < Ci; ++ci) {
                        const T v = in[ci];
                        const T* kc = kk + static_cast<int64_t>(ci) * Co;
                        for (int c = 0; c < Co; ++c) out[c] += v * kc[c];
                    }
                }
            }
        }
    }
    return y;
}

template <class T>
TensorT<T> conv2d_grad_input(const TensorT<T>& x, const TensorT<T>& k, const TensorT<T>& dy,
                             Pad2 pad, Stride2 stride) {
    const int H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
    const int kh = k.dim(0), kw = k.dim(1), Co = k.dim(3);
    const int Ho = dy.dim(0), Wo = dy.dim(1);
    TensorT<T> dx(x.shape);
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            const T* g = dy.ptr() + (static_cast<int64_t>(oy) * Wo + ox) * Co;
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride.h + ky - pad.h;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride.w + kx - pad.w;
                    if (ix < 0 || ix >= W) continue;
                    T* dxp = dx.ptr() + (static_cast<int64_t>(iy) * W + ix) * Ci;
                    const T* kk = k.ptr() + (static_cast<int64_t>(ky) * kw + kx) * Ci * Co;
                    for (int ci = 0; ci < Ci; ++ci) {
                        const T* kc = kk + static_cast<int64_t>(ci) * Co;
                        T acc = 0;
                        for (int c = 0; c < Co; ++c) acc += kc[c] * g[c];
                        dxp[ci] += acc;
                    }
                }
            }
        }
    }
    return dx;
}

template <class T>
TensorT<T> conv2d_grad_kernel(const TensorT<T>& x, const TensorT<T>& k, const TensorT<T>& dy,
                              Pad2 pad, Stride2 stride) {
    const int H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
    const int kh = k.dim(0), kw = k.dim(1), Co = k.dim(3);
    const int Ho = dy.dim(0), Wo = dy.dim(1);
    TensorT<T> dk(k.shape);
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            const T* g = dy.ptr() + (static_cast<int64_t>(oy) * Wo + ox) * Co;
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride.h + ky - pad.h;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride.w + kx - pad.w;
                    if (ix < 0 || ix >= W) continue;
                    const T* in = x.ptr() + (static_cast<int64_t>(iy) * W + ix) * Ci;
                    T* dkk = dk.ptr() + (static_cast<int64_t>(ky) * kw + kx) * Ci * Co;
                    for (int ci = 0; ci < Ci; ++ci) {
                        const T v = in[ci];
                        T* dkc = dkk + static_cast<int64_t>(ci) * Co;
                        for (int c = 0; c < Co; ++c) dkc[c] += v * g[c];
                    }
                }
            }
        }
    }
    return dk;
}

template <class T>
TensorT<T> conv2d_grad_bias(const TensorT<T>& dy) {
    const int Co = dy.dim(2);
    TensorT<T> db({Co});
    const int64_t positions = dy.size() / Co;
    for (int64_t p = 0; p < positions; ++p) {
        const T* g = dy.ptr() + p * Co;
        for (int c = 0; c < Co; ++c) db[c] += g[c];
    }
    return db;
}

// ---------------------------------------------------------------------------
// PReLU. The slope vector cycles over the innermost dimension, so it acts
// per channel both on HxWxC maps and on node matrices whose rows are
// (position, channel) blocks.
// ---------------------------------------------------------------------------

template <class T>
void check_prelu_args(const TensorT<T>& x, const TensorT<T>& slope) {
    if (slope.rank() != 1)
        throw std::invalid_argument("prelu: slope must be a vector, got " + shape_str(slope.shape));
    const int c = slope.dim(0);
    if (x.shape.empty() || x.shape.back() % c != 0)
        throw std::invalid_argument("prelu: innermost extent of " + shape_str(x.shape) +
                                    " is not a multiple of slope length " + std::to_string(c));
}

template <class T>
TensorT<T> prelu(const TensorT<T>& x, const TensorT<T>& slope) {
    check_prelu_args(x, slope);
    const int C = slope.dim(0);
    TensorT<T> y(x.shape);
    for (int64_t i = 0; i < x.size(); ++i) {
        const T v = x[i];
        y[i] = v >= 0 ? v : slope[i % C] * v;
    }
    return y;
}

template <class T>
TensorT<T> prelu_grad_input(const TensorT<T>& x, const TensorT<T>& slope, const TensorT<T>& dy) {
    const int C = slope.dim(0);
    TensorT<T> dx(x.shape);
    for (int64_t i = 0; i < x.size(); ++i) dx[i] = (x[i] >= 0 ? T(1) : slope[i % C]) * dy[i];
    return dx;
}

template <class T>
TensorT<T> prelu_grad_slope(const TensorT<T>& x, const TensorT<T>& slope, const TensorT<T>& dy) {
    const int C = slope.dim(0);
    TensorT<T> ds(slope.shape);
    for (int64_t i = 0; i < x.size(); ++i)
        if (x[i] < 0) ds[i % C] += x[i] * dy[i];
    return ds;
}

// ---------------------------------------------------------------------------
// Row-wise softmax with row-max subtraction. Large negative sentinels are
// legal inputs and underflow to exact zeros.
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> softmax_rows(const TensorT<T>& m) {
    require_matrix(m, "softmax_rows input");
    const int r = m.dim(0), c = m.dim(1);
    TensorT<T> y(m.shape);
    for (int i = 0; i < r; ++i) {
        const T* row = m.ptr() + static_cast<int64_t>(i) * c;
        T* out = y.ptr() + static_cast<int64_t>(i) * c;
        T mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (int j = 0; j < c; ++j) {
            out[j] = std::exp(row[j] - mx);
            sum += out[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < c; ++j) out[j] *= inv;
    }
    return y;
}

// dS from the softmax output y: dS = y * (dy - rowsum(dy * y)).
template <class T>
TensorT<T> softmax_rows_backward(const TensorT<T>& y, const TensorT<T>& dy) {
    const int r = y.dim(0), c = y.dim(1);
    TensorT<T> ds(y.shape);
    for (int i = 0; i < r; ++i) {
        const T* yr = y.ptr() + static_cast<int64_t>(i) * c;
        const T* gr = dy.ptr() + static_cast<int64_t>(i) * c;
        T* dr = ds.ptr() + static_cast<int64_t>(i) * c;
        T dot = 0;
        for (int j = 0; j < c; ++j) dot += yr[j] * gr[j];
        for (int j = 0; j < c; ++j) dr[j] = yr[j] * (gr[j] - dot);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Per-channel standardization over the spatial extent of an HxWxC map.
// No learned scale/shift.
// ---------------------------------------------------------------------------

inline constexpr double kNormalizeEps = 1e-5;

// Mean accumulated relative to the first element, so a constant channel
// centers to exact zeros.
template <class T>
T channel_mean(const TensorT<T>& x, int c, int C, int64_t n) {
    const T ref = x[c];
    T acc = 0;
    for (int64_t p = 0; p < n; ++p) acc += x[p * C + c] - ref;
    return ref + acc / static_cast<T>(n);
}

template <class T>
TensorT<T> feature_normalize(const TensorT<T>& x) {
    if (x.rank() != 3)
        throw std::invalid_argument("feature_normalize input must be HxWxC, got " +
                                    shape_str(x.shape));
    const int C = x.dim(2);
    const int64_t n = x.size() / C;
    TensorT<T> y(x.shape);
    for (int c = 0; c < C; ++c) {
        const T mean = channel_mean(x, c, C, n);
        T var = 0;
        for (int64_t p = 0; p < n; ++p) {
            const T d = x[p * C + c] - mean;
            var += d * d;
        }
        var /= static_cast<T>(n);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(kNormalizeEps));
        for (int64_t p = 0; p < n; ++p) y[p * C + c] = (x[p * C + c] - mean) * inv;
    }
    return y;
}

template <class T>
TensorT<T> feature_normalize_backward(const TensorT<T>& x, const TensorT<T>& dy) {
    const int C = x.dim(2);
    const int64_t n = x.size() / C;
    TensorT<T> dx(x.shape);
    for (int c = 0; c < C; ++c) {
        const T mean = channel_mean(x, c, C, n);
        T var = 0;
        for (int64_t p = 0; p < n; ++p) {
            const T d = x[p * C + c] - mean;
            var += d * d;
        }
        var /= static_cast<T>(n);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(kNormalizeEps));
        // xhat = (x - mean) * inv; dx = inv * (dy - mean(dy) - xhat * mean(dy * xhat))
        T gmean = 0, gdot = 0;
        for (int64_t p = 0; p < n; ++p) {
            const T xhat = (x[p * C + c] - mean) * inv;
            gmean += dy[p * C + c];
            gdot += dy[p * C + c] * xhat;
        }
        gmean /= static_cast<T>(n);
        gdot /= static_cast<T>(n);
        for (int64_t p = 0; p < n; ++p) {
            const T xhat = (x[p * C + c] - mean) * inv;
            dx[p * C + c] = inv * (dy[p * C + c] - gmean - xhat * gdot);
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Elementwise and reduction helpers.
// ---------------------------------------------------------------------------

template <class T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shapes disagree, " +
                                    shape_str(a.shape) + " vs " + shape_str(b.shape));
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "add");
    TensorT<T> y(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
    return y;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "sub");
    TensorT<T> y(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) y[i] = a[i] - b[i];
    return y;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "mul");
    TensorT<T> y(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
    return y;
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, double s) {
    TensorT<T> y(a.shape);
    const T f = static_cast<T>(s);
    for (int64_t i = 0; i < a.size(); ++i) y[i] = a[i] * f;
    return y;
}

template <class T>
TensorT<T> sum_all(const TensorT<T>& a) {
    T acc = 0;
    for (int64_t i = 0; i < a.size(); ++i) acc += a[i];
    return scalar_tensor(acc);
}

// x[m x n] + b[n] broadcast over rows.
template <class T>
TensorT<T> add_row_bias(const TensorT<T>& x, const TensorT<T>& b) {
    require_matrix(x, "add_row_bias input");
    if (b.rank() != 1 || b.dim(0) != x.dim(1))
        throw std::invalid_argument("add_row_bias: bias " + shape_str(b.shape) +
                                    " does not match row width of " + shape_str(x.shape));
    const int m = x.dim(0), n = x.dim(1);
    TensorT<T> y(x.shape);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            y[static_cast<int64_t>(i) * n + j] = x[static_cast<int64_t>(i) * n + j] + b[j];
    return y;
}

template <class T>
TensorT<T> col_sums(const TensorT<T>& x) {
    const int m = x.dim(0), n = x.dim(1);
    TensorT<T> s({n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) s[j] += x[static_cast<int64_t>(i) * n + j];
    return s;
}

template <class T>
TensorT<T> reshape(const TensorT<T>& x, Shape s) {
    if (numel(s) != x.size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape) + " as " +
                                    shape_str(s));
    TensorT<T> y = x;
    y.shape = std::move(s);
    return y;
}

template <class T>
TensorT<T> clamp01(const TensorT<T>& x) {
    TensorT<T> y(x.shape);
    for (int64_t i = 0; i < x.size(); ++i) y[i] = std::min(T(1), std::max(T(0), x[i]));
    return y;
}

template <class T>
TensorT<T> mse_loss(const TensorT<T>& pred, const TensorT<T>& target) {
    require_same_shape(pred, target, "mse_loss");
    T acc = 0;
    for (int64_t i = 0; i < pred.size(); ++i) {
        const T d = pred[i] - target[i];
        acc += d * d;
    }
    return scalar_tensor(acc / static_cast<T>(pred.size()));
}

} // namespace ops
} // namespace magn
