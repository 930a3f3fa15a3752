#pragma once

#include <string>

#include "magn/rng.hpp"
#include "magn/tensor.hpp"

namespace magn {

enum class DegradeKind { gaussian, mosaic };

inline DegradeKind degrade_kind_from_string(const std::string& s) {
    if (s == "gaussian") return DegradeKind::gaussian;
    if (s == "mosaic") return DegradeKind::mosaic;
    throw std::invalid_argument("unknown degradation kind '" + s + "'");
}

/// Synthetic degradation settings. sigma is on the usual 0-255 scale; the
/// Bayer pattern is fixed RGGB.
struct DegradeSpec {
    DegradeKind kind = DegradeKind::gaussian;
    double sigma = 25.0;
    uint64_t seed = 0;

    void validate() const {
        if (sigma < 0) throw std::invalid_argument("degrade: sigma must be >= 0");
    }
};

/// img + n, n ~ N(0, (sigma/255)^2) i.i.d. Deliberately not clamped; clamping
/// would bias the noise distribution. Deterministic per seed.
template <class T>
TensorT<T> add_gaussian_noise(const TensorT<T>& img, const DegradeSpec& spec) {
    spec.validate();
    if (spec.sigma == 0) return img;
    Rng rng(spec.seed);
    const double s = spec.sigma / 255.0;
    TensorT<T> out(img.shape);
    for (int64_t i = 0; i < img.size(); ++i)
        out[i] = img[i] + static_cast<T>(s * rng.normal());
    return out;
}

/// RGGB mosaic: every pixel keeps exactly one channel (R at even/even, G at
/// even/odd and odd/even, B at odd/odd), the other two are zeroed.
template <class T>
TensorT<T> bayer_mosaic(const TensorT<T>& img) {
    if (img.rank() != 3 || img.dim(2) != 3)
        throw std::invalid_argument("mosaic: expected HxWx3 image, got " + shape_str(img.shape));
    const int H = img.dim(0), W = img.dim(1);
    if (H % 2 != 0 || W % 2 != 0)
        throw DataError("mosaic: image extents must be even, got " + std::to_string(H) + "x" +
                        std::to_string(W));
    TensorT<T> out(img.shape);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const int keep = (y % 2 == 0) ? (x % 2 == 0 ? 0 : 1) : (x % 2 == 0 ? 1 : 2);
            const int64_t base = (static_cast<int64_t>(y) * W + x) * 3;
            out[base + keep] = img[base + keep];
        }
    }
    return out;
}

template <class T>
TensorT<T> degrade(const TensorT<T>& img, const DegradeSpec& spec) {
    return spec.kind == DegradeKind::gaussian ? add_gaussian_noise(img, spec) : bayer_mosaic(img);
}

} // namespace magn
