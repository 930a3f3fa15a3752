#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "magn/ops.hpp"
#include "magn/patching.hpp"

namespace magn {

/// Ordered record of the primitive operations applied to tracked tensors.
/// Creation order is a topological order, so backward() is a single reverse
/// sweep. One tape per training step; single-threaded.
template <class T>
class TapeT {
public:
    using Tensor = TensorT<T>;
    using BackFn = std::function<void(TapeT&, int)>;

    int leaf(Tensor value) {
        nodes_.push_back(Node{std::move(value), {}, nullptr});
        return static_cast<int>(nodes_.size()) - 1;
    }

    int push(Tensor value, std::vector<int> parents, BackFn back) {
        nodes_.push_back(Node{std::move(value), std::move(parents), std::move(back)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }

    // Accumulated gradient for a node; zeros if the loss does not depend on it.
    const Tensor& grad(int id) {
        Tensor& g = grads_[static_cast<size_t>(id)];
        if (g.shape.empty()) g = Tensor(nodes_[static_cast<size_t>(id)].value.shape);
        return g;
    }

    void add_grad(int id, Tensor g) {
        Tensor& slot = grads_[static_cast<size_t>(id)];
        if (slot.shape.empty()) {
            slot = std::move(g);
        } else {
            for (int64_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
        }
    }

    void backward(int loss_id) {
        const Tensor& loss = val(loss_id);
        if (loss.size() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(loss.shape));
        grads_.assign(nodes_.size(), Tensor{});
        grads_[static_cast<size_t>(loss_id)] = Tensor(loss.shape, T(1));
        for (int i = loss_id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.back) continue;
            if (grads_[static_cast<size_t>(i)].shape.empty()) continue;
            n.back(*this, i);
        }
    }

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<int> parents;
        BackFn back;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
};

using Tape = TapeT<double>;
using Tape32 = TapeT<float>;

/// Handle to a tracked tensor on a tape.
template <class T>
struct VarT {
    TapeT<T>* tape = nullptr;
    int id = -1;

    const TensorT<T>& val() const { return tape->val(id); }
};

using Var = VarT<double>;

template <class T>
VarT<T> track(TapeT<T>& tape, TensorT<T> value) {
    return {&tape, tape.leaf(std::move(value))};
}

// value_of lets generic code inspect the forward value of either a plain
// tensor or a tape variable.
template <class T>
const TensorT<T>& value_of(const TensorT<T>& t) {
    return t;
}
template <class T>
const TensorT<T>& value_of(const VarT<T>& v) {
    return v.val();
}

template <class V>
struct scalar_of;
template <class T>
struct scalar_of<TensorT<T>> {
    using type = T;
};
template <class T>
struct scalar_of<VarT<T>> {
    using type = T;
};

namespace ops {

// ---------------------------------------------------------------------------
// Taped overloads of the pure kernels. Each records one node whose backward
// routes cotangents to its parents.
// ---------------------------------------------------------------------------

template <class T>
VarT<T> matmul(VarT<T> a, VarT<T> b) {
    TapeT<T>& t = *a.tape;
    const int ia = a.id, ib = b.id;
    TensorT<T> y = matmul(t.val(ia), t.val(ib));
    int id = t.push(std::move(y), {ia, ib}, [ia, ib](TapeT<T>& tp, int self) {
        const TensorT<T>& dy = tp.grad(self);
        tp.add_grad(ia, matmul_nt(dy, tp.val(ib)));
        tp.add_grad(ib, matmul_tn(tp.val(ia), dy));
    });
    return {&t, id};
}

template <class T>
VarT<T> matmul_nt(VarT<T> a, VarT<T> b) {
    TapeT<T>& t = *a.tape;
    const int ia = a.id, ib = b.id;
    TensorT<T> y = matmul_nt(t.val(ia), t.val(ib));
    int id = t.push(std::move(y), {ia, ib}, [ia, ib](TapeT<T>& tp, int self) {
        const TensorT<T>& dy = tp.grad(self);
        tp.add_grad(ia, matmul(dy, tp.val(ib)));
        tp.add_grad(ib, matmul_tn(dy, tp.val(ia)));
    });
    return {&t, id};
}

template <class T>
VarT<T> conv2d(VarT<T> x, VarT<T> k, VarT<T> b, Pad2 pad, Stride2 stride) {
    TapeT<T>& t = *x.tape;
    const int ix = x.id, ik = k.id, ib = b.id;
    TensorT<T> y = conv2d(t.val(ix), t.val(ik), t.val(ib), pad, stride);
    int id = t.push(std::move(y), {ix, ik, ib}, [ix, ik, ib, pad, stride](TapeT<T>& tp, int self) {
        const TensorT<T>& dy = tp.grad(self);
        tp.add_grad(ix, conv2d_grad_input(tp.val(ix), tp.val(ik), dy, pad, stride));
        tp.add_grad(ik, conv2d_grad_kernel(tp.val(ix), tp.val(ik), dy, pad, stride));
        tp.add_grad(ib, conv2d_grad_bias(dy));
    });
    return {&t, id};
}

template <class T>
VarT<T> prelu(VarT<T> x, VarT<T> slope) {
    TapeT<T>& t = *x.tape;
    const int ix = x.id, is = slope.id;
    TensorT<T> y = prelu(t.val(ix), t.val(is));
    int id = t.push(std::move(y), {ix, is}, [ix, is](TapeT<T>& tp, int self) {
        const TensorT<T>& dy = tp.grad(self);
        tp.add_grad(ix, prelu_grad_input(tp.val(ix), tp.val(is), dy));
        tp.add_grad(is, prelu_grad_slope(tp.val(ix), tp.val(is), dy));
    });
    return {&t, id};
}

template <class T>
VarT<T> softmax_rows(VarT<T> m) {
    TapeT<T>& t = *m.tape;
    const int im = m.id;
    TensorT<T> y = softmax_rows(t.val(im));
    int id = t.push(std::move(y), {im}, [im](TapeT<T>& tp, int self) {
        tp.add_grad(im, softmax_rows_backward(tp.val(self), tp.grad(self)));
    });
    return {&t, id};
}

template <class T>
VarT<T> feature_normalize(VarT<T> x) {
    TapeT<T>& t = *x.tape;
    const int ix = x.id;
    TensorT<T> y = feature_normalize(t.val(ix));
    int id = t.push(std::move(y), {ix}, [ix](TapeT<T>& tp, int self) {
        tp.add_grad(ix, feature_normalize_backward(tp.val(ix), tp.grad(self)));
    });
    return {&t, id};
}

template <class T>
VarT<T> add(VarT<T> a, VarT<T> b) {
    TapeT<T>& t = *a.tape;
    const int ia = a.id, ib = b.id;
    TensorT<T> y = add(t.val(ia), t.val(ib));
    int id = t.push(std::move(y), {ia, ib}, [ia, ib](TapeT<T>& tp, int self) {
        tp.add_grad(ia, tp.grad(self));
        tp.add_grad(ib, tp.grad(self));
    });
    return {&t, id};
}

template <class T>
VarT<T> sub(VarT<T> a, VarT<T> b) {
    TapeT<T>& t = *a.tape;
    const int ia = a.id, ib = b.id;
    TensorT<T> y = sub(t.val(ia), t.val(ib));
    int id = t.push(std::move(y), {ia, ib}, [ia, ib](TapeT<T>& tp, int self) {
        tp.add_grad(ia, tp.grad(self));
        tp.add_grad(ib, scale(tp.grad(self), -1.0));
    });
    return {&t, id};
}

template <class T>
VarT<T> mul(VarT<T> a, VarT<T> b) {
    TapeT<T>& t = *a.tape;
    const int ia = a.id, ib = b.id;
    TensorT<T> y = mul(t.val(ia), t.val(ib));
    int id = t.push(std::move(y), {ia, ib}, [ia, ib](TapeT<T>& tp, int self) {
        tp.add_grad(ia, mul(tp.grad(self), tp.val(ib)));
        tp.add_grad(ib, mul(tp.grad(self), tp.val(ia)));
    });
    return {&t, id};
}

template <class T>
VarT<T> scale(VarT<T> x, double s) {
    TapeT<T>& t = *x.tape;
    const int ix = x.id;
    TensorT<T> y = scale(t.val(ix), s);
    int id = t.push(std::move(y), {ix}, [ix, s](TapeT<T>& tp, int self) {
        tp.add_grad(ix, scale(tp.grad(self), s));
    });
    return {&t, id};
}

// x + c with c held constant (no gradient into c).
template <class T>
TensorT<T> add_constant(const TensorT<T>& x, const TensorT<T>& c) {
    return add(x, c);
}

template <class T>
VarT<T> add_constant(VarT<T> x, const TensorT<T>& c) {
    TapeT<T>& t = *x.tape;
    const int ix = x.id;
    TensorT<T> y = add(t.val(ix), c);
    int id = t.push(std::move(y), {ix},
                    [ix](TapeT<T>& tp, int self) { tp.add_grad(ix, tp.grad(self)); });
    return {&t, id};
}

template <class T>
VarT<T> add_row_bias(VarT<T> x, VarT<T> b) {
    TapeT<T>& t = *x.tape;
    const int ix = x.id, ib = b.id;
    TensorT<T> y = add_row_bias(t.val(ix), t.val(ib));
    int id = t.push(std::move(y), {ix, ib}, [ix, ib](TapeT<T>& tp, int self) {
        tp.add_grad(ix, tp.grad(self));
        tp.add_grad(ib, col_sums(tp.grad(self)));
    });
    return {&t, id};
}

template <class T>
VarT<T> sum_all(VarT<T> x) {
    TapeT<T>& t = *x.tape;
    const int ix = x.id;
    TensorT<T> y = sum_all(t.val(ix));
    int id = t.push(std::move(y), {ix}, [ix](TapeT<T>& tp, int self) {
        tp.add_grad(ix, TensorT<T>(tp.val(ix).shape, tp.grad(self)[0]));
    });
    return {&t, id};
}

template <class T>
VarT<T> reshape(VarT<T> x, Shape s) {
    TapeT<T>& t = *x.tape;
    const int ix = x.id;
    TensorT<T> y = reshape(t.val(ix), std::move(s));
    int id = t.push(std::move(y), {ix}, [ix](TapeT<T>& tp, int self) {
        tp.add_grad(ix, reshape(tp.grad(self), tp.val(ix).shape));
    });
    return {&t, id};
}

template <class T>
VarT<T> unfold_nodes(VarT<T> x, const PatchGeometry& g) {
    TapeT<T>& t = *x.tape;
    const int ix = x.id;
    TensorT<T> y = unfold_nodes(t.val(ix), g);
    int id = t.push(std::move(y), {ix}, [ix, g](TapeT<T>& tp, int self) {
        tp.add_grad(ix, unfold_nodes_backward(tp.grad(self), g));
    });
    return {&t, id};
}

template <class T>
VarT<T> fold_nodes(VarT<T> nodes, const PatchGeometry& g) {
    TapeT<T>& t = *nodes.tape;
    const int in = nodes.id;
    TensorT<T> y = fold_nodes(t.val(in), g);
    int id = t.push(std::move(y), {in}, [in, g](TapeT<T>& tp, int self) {
        tp.add_grad(in, fold_nodes_backward(tp.grad(self), g));
    });
    return {&t, id};
}

// Column-wise concatenation of same-height matrices.
template <class T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int m = parts[0].dim(0);
    int n = 0;
    for (const auto& p : parts) {
        require_matrix(p, "concat_cols input");
        if (p.dim(0) != m)
            throw std::invalid_argument("concat_cols: row counts disagree, " +
                                        shape_str(parts[0].shape) + " vs " + shape_str(p.shape));
        n += p.dim(1);
    }
    TensorT<T> y({m, n});
    int off = 0;
    for (const auto& p : parts) {
        const int w = p.dim(1);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                y[static_cast<int64_t>(i) * n + off + j] = p[static_cast<int64_t>(i) * w + j];
        off += w;
    }
    return y;
}

template <class T>
VarT<T> concat_cols(const std::vector<VarT<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    TapeT<T>& t = *parts[0].tape;
    std::vector<TensorT<T>> vals;
    std::vector<int> ids;
    vals.reserve(parts.size());
    for (const auto& p : parts) {
        vals.push_back(p.val());
        ids.push_back(p.id);
    }
    TensorT<T> y = concat_cols(vals);
    std::vector<int> widths;
    for (const auto& v : vals) widths.push_back(v.dim(1));
    int id = t.push(std::move(y), ids, [ids, widths](TapeT<T>& tp, int self) {
        const TensorT<T>& dy = tp.grad(self);
        const int m = dy.dim(0), n = dy.dim(1);
        int off = 0;
        for (size_t pi = 0; pi < ids.size(); ++pi) {
            const int w = widths[pi];
            TensorT<T> dp({m, w});
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    dp[static_cast<int64_t>(i) * w + j] = dy[static_cast<int64_t>(i) * n + off + j];
            tp.add_grad(ids[pi], std::move(dp));
            off += w;
        }
    });
    return {&t, id};
}

template <class T>
VarT<T> mse_loss(VarT<T> pred, VarT<T> target) {
    TapeT<T>& t = *pred.tape;
    const int ip = pred.id, it = target.id;
    TensorT<T> y = mse_loss(t.val(ip), t.val(it));
    int id = t.push(std::move(y), {ip, it}, [ip, it](TapeT<T>& tp, int self) {
        const T g = tp.grad(self)[0];
        const TensorT<T>& p = tp.val(ip);
        const TensorT<T>& q = tp.val(it);
        const T f = g * T(2) / static_cast<T>(p.size());
        TensorT<T> dp(p.shape);
        for (int64_t i = 0; i < p.size(); ++i) dp[i] = f * (p[i] - q[i]);
        TensorT<T> dq = scale(dp, -1.0);
        tp.add_grad(ip, std::move(dp));
        tp.add_grad(it, std::move(dq));
    });
    return {&t, id};
}

} // namespace ops
} // namespace magn
