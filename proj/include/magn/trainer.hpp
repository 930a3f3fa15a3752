#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "magn/autograd.hpp"
#include "magn/degradation.hpp"
#include "magn/model.hpp"

namespace magn {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 32;
    int epochs = 200;
    int64_t steps = 0; // explicit step count; 0 derives from epochs
    int crop = 31;
    uint64_t seed = 0;
    DegradeSpec degrade;
    int checkpoint_interval = 500;
    bool augment = false;

    void validate() const {
        if (lr <= 0) throw std::invalid_argument("train: lr must be > 0");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw std::invalid_argument("train: betas must lie in [0,1)");
        if (epsilon <= 0) throw std::invalid_argument("train: epsilon must be > 0");
        if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
        if (epochs < 0 || steps < 0) throw std::invalid_argument("train: negative step budget");
        if (crop < 1) throw std::invalid_argument("train: crop must be >= 1");
        if (checkpoint_interval < 1) throw std::invalid_argument("train: checkpoint interval must be >= 1");
        degrade.validate();
    }

    int64_t total_steps(size_t dataset_size) const {
        if (steps > 0) return steps;
        const int64_t per_epoch =
            std::max<int64_t>(1, static_cast<int64_t>(dataset_size) / batch_size);
        return per_epoch * epochs;
    }
};

/// Adam first/second moments, one pair per parameter in traversal order.
template <class T>
struct OptimizerStateT {
    std::vector<TensorT<T>> m, v;
    int64_t step = 0;
};

using OptimizerState = OptimizerStateT<double>;

template <class T>
OptimizerStateT<T> make_optimizer_state(const ModelParamsT<TensorT<T>>& params) {
    OptimizerStateT<T> s;
    for_each_param(params, [&s](const std::string&, const TensorT<T>& t) {
        s.m.emplace_back(t.shape);
        s.v.emplace_back(t.shape);
    });
    return s;
}

/// One bias-corrected Adam update. Gradients are given in parameter order; a
/// non-finite gradient rejects the whole step and names the offending
/// parameter.
template <class T>
void adam_update(const std::vector<TensorT<T>*>& tensors, const std::vector<std::string>& names,
                 const std::vector<TensorT<T>>& grads, OptimizerStateT<T>& state,
                 const TrainConfig& cfg) {
    if (grads.size() != tensors.size() || state.m.size() != tensors.size())
        throw std::invalid_argument("adam: gradient/state count does not match parameter count");
    for (size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].same_shape(*tensors[i]))
            throw std::invalid_argument("adam: gradient shape " + shape_str(grads[i].shape) +
                                        " does not match parameter " + names[i] + " " +
                                        shape_str(tensors[i]->shape));
        if (!all_finite(grads[i]))
            throw NumericError("adam: non-finite gradient for parameter " + names[i]);
    }
    state.step += 1;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (size_t i = 0; i < grads.size(); ++i) {
        TensorT<T>& w = *tensors[i];
        TensorT<T>& m = state.m[i];
        TensorT<T>& v = state.v[i];
        const TensorT<T>& g = grads[i];
        for (int64_t j = 0; j < w.size(); ++j) {
            m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * g[j]);
            v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * g[j] * g[j]);
            const double mhat = m[j] / corr1;
            const double vhat = v[j] / corr2;
            w[j] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
        }
    }
}

template <class T>
void adam_step(ModelParamsT<TensorT<T>>& params, const std::vector<TensorT<T>>& grads,
               OptimizerStateT<T>& state, const TrainConfig& cfg) {
    cfg.validate();
    adam_update(collect_params_mut(params), param_names(params), grads, state, cfg);
}

struct TrainLogEntry {
    int64_t step = 0;
    double loss = 0;
    double lr = 0;
    double elapsed_s = 0;
};

namespace detail {

// Dihedral-group augmentation of a square crop, k in [0,8).
template <class T>
TensorT<T> dihedral(const TensorT<T>& x, int k) {
    if (k == 0) return x;
    const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    TensorT<T> y(x.shape);
    for (int yy = 0; yy < H; ++yy)
        for (int xx = 0; xx < W; ++xx) {
            int sy = yy, sx = xx;
            if (k & 4) sx = W - 1 - sx;
            switch (k & 3) {
                case 1: { const int t = sy; sy = sx; sx = H - 1 - t; } break;
                case 2: sy = H - 1 - sy; sx = W - 1 - sx; break;
                case 3: { const int t = sy; sy = W - 1 - sx; sx = t; } break;
                default: break;
            }
            for (int c = 0; c < C; ++c)
                y[(static_cast<int64_t>(yy) * W + xx) * C + c] =
                    x[(static_cast<int64_t>(sy) * W + sx) * C + c];
        }
    return y;
}

} // namespace detail

/// One training sample: a clean crop and its on-the-fly degraded twin, both
/// produced from the per-index RNG stream so runs (and resumes) replay
/// identically.
template <class T>
struct TrainSample {
    TensorT<T> clean;
    TensorT<T> noisy;
};

template <class T>
TrainSample<T> draw_sample(const std::vector<TensorT<T>>& images, const ModelConfig& mcfg,
                           const TrainConfig& tcfg, int64_t step, int batch_index) {
    Rng rng = Rng::derive(tcfg.seed, static_cast<uint64_t>(step) * tcfg.batch_size +
                                         static_cast<uint64_t>(batch_index));
    const auto& img = images[rng.below(images.size())];
    const int H = img.dim(0), W = img.dim(1), C = img.dim(2);
    const int crop = tcfg.crop;
    if (H < crop || W < crop)
        throw DataError("train: image " + std::to_string(H) + "x" + std::to_string(W) +
                        " is smaller than the crop " + std::to_string(crop));
    const int oy = static_cast<int>(rng.below(static_cast<uint64_t>(H - crop + 1)));
    const int ox = static_cast<int>(rng.below(static_cast<uint64_t>(W - crop + 1)));
    TensorT<T> clean({crop, crop, C});
    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x)
            for (int c = 0; c < C; ++c)
                clean[(static_cast<int64_t>(y) * crop + x) * C + c] =
                    img[(static_cast<int64_t>(oy + y) * W + ox + x) * C + c];
    if (tcfg.augment) clean = detail::dihedral(clean, static_cast<int>(rng.below(8)));
    TrainSample<T> s;
    if (tcfg.degrade.kind == DegradeKind::gaussian) {
        const double sscale = tcfg.degrade.sigma / 255.0;
        s.noisy = clean;
        for (int64_t i = 0; i < s.noisy.size(); ++i)
            s.noisy[i] += static_cast<T>(sscale * rng.normal());
    } else {
        s.noisy = bayer_mosaic(clean);
    }
    (void)mcfg;
    s.clean = std::move(clean);
    return s;
}

/// MSE training loop: batch of seeded random crops, degrade on the fly,
/// forward, backward, Adam. on_step fires after every update; on_checkpoint
/// at the configured interval (not at the final step; callers save that).
template <class T>
void train_loop(ModelParamsT<TensorT<T>>& params, OptimizerStateT<T>& state,
                const ModelConfig& mcfg, const TrainConfig& tcfg,
                const std::vector<TensorT<T>>& images, int64_t total_steps,
                const std::function<void(const TrainLogEntry&)>& on_step = nullptr,
                const std::function<void(int64_t)>& on_checkpoint = nullptr) {
    mcfg.validate();
    tcfg.validate();
    if (images.empty()) throw DataError("train: empty dataset");
    for (const auto& img : images)
        if (img.dim(2) != mcfg.in_channels)
            throw DataError("train: dataset image has " + std::to_string(img.dim(2)) +
                            " channels, model expects " + std::to_string(mcfg.in_channels));
    // The crop must tile under the patch window; fail before the first step.
    (void)mcfg.geometry_for(tcfg.crop, tcfg.crop);

    const auto t0 = std::chrono::steady_clock::now();
    for (int64_t step = state.step; step < total_steps; ++step) {
        TapeT<T> tape;
        auto lifted = lift_params(tape, params);
        VarT<T> loss{};
        for (int b = 0; b < tcfg.batch_size; ++b) {
            TrainSample<T> s = draw_sample(images, mcfg, tcfg, step, b);
            VarT<T> noisy = track(tape, std::move(s.noisy));
            VarT<T> clean = track(tape, std::move(s.clean));
            VarT<T> restored = ops::add(noisy, magn_forward(noisy, lifted, mcfg));
            VarT<T> sample_loss = ops::mse_loss(restored, clean);
            loss = b == 0 ? sample_loss : ops::add(loss, sample_loss);
        }
        if (tcfg.batch_size > 1) loss = ops::scale(loss, 1.0 / tcfg.batch_size);
        const double loss_value = static_cast<double>(loss.val()[0]);
        if (!std::isfinite(loss_value))
            throw NumericError("train: non-finite loss at step " + std::to_string(step + 1));
        tape.backward(loss.id);

        std::vector<TensorT<T>> grads;
        grads.reserve(state.m.size());
        for_each_param(lifted, [&](const std::string&, const VarT<T>& v) {
            grads.push_back(tape.grad(v.id));
        });
        adam_step(params, grads, state, tcfg);

        if (on_step) {
            const double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            on_step(TrainLogEntry{state.step, loss_value, tcfg.lr, elapsed});
        }
        if (on_checkpoint && state.step % tcfg.checkpoint_interval == 0 && state.step < total_steps)
            on_checkpoint(state.step);
    }
}

} // namespace magn
