#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace magn {

// Bad or missing input data (unreadable files, empty datasets, ...).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failure (non-finite loss/gradients, failed gradient check).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major N-d array. The universal value type for images,
/// feature maps, weights and adjacency matrices.
template <class T>
struct TensorT {
    Shape shape;
    std::vector<T> data;

    TensorT() = default;

    explicit TensorT(Shape s) : shape(std::move(s)) {
        check_shape();
        data.assign(static_cast<size_t>(numel(shape)), T(0));
    }

    TensorT(Shape s, T fill) : shape(std::move(s)) {
        check_shape();
        data.assign(static_cast<size_t>(numel(shape)), fill);
    }

    TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        check_shape();
        if (static_cast<int64_t>(data.size()) != numel(shape))
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    template <class U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

private:
    void check_shape() const {
        for (int d : shape)
            if (d <= 0)
                throw std::invalid_argument("tensor extents must be positive, got " +
                                            shape_str(shape));
    }
};

using Tensor = TensorT<double>;
using Tensor32 = TensorT<float>;

template <class T>
bool all_finite(const TensorT<T>& t) {
    for (T v : t.data)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template <class T>
TensorT<T> scalar_tensor(T v) {
    return TensorT<T>({1}, std::vector<T>{v});
}

} // namespace magn
