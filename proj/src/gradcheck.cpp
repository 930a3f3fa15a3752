#include "magn/gradcheck.hpp"

#include <chrono>
#include <cmath>

#include "magn/rng.hpp"

namespace magn {

ModelConfig gradcheck_micro_config() {
    ModelConfig cfg;
    cfg.channels = 8;
    cfg.res_blocks_pre = 1;
    cfg.res_blocks_post = 1;
    cfg.graph_blocks = 1;
    cfg.heads = 2;
    cfg.in_channels = 1;
    cfg.precision = Precision::f64;
    return cfg;
}

GradCheckReport model_gradient_check(const ModelConfig& cfg, uint64_t seed, int extent,
                                     double fd_step, bool corrupt) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    ModelParams params = make_params<double>(cfg);
    init_params(params, seed);
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    Tensor image({extent, extent, cfg.in_channels});
    for (auto& v : image.data) v = rng.uniform(0.05, 0.95);
    Tensor target({extent, extent, cfg.in_channels});
    for (auto& v : target.data) v = rng.uniform(0.05, 0.95);

    auto loss_value = [&]() {
        const Tensor residual = magn_forward(image, params, cfg);
        return ops::mse_loss(ops::add(image, residual), target)[0];
    };

    // Analytic gradients through the tape.
    Tape tape;
    auto lifted = lift_params(tape, params);
    Var vi = track(tape, image);
    Var vt = track(tape, target);
    Var loss = ops::mse_loss(ops::add(vi, magn_forward(vi, lifted, cfg)), vt);
    tape.backward(loss.id);
    std::vector<Tensor> analytic;
    for_each_param(lifted,
                   [&](const std::string&, const Var& v) { analytic.push_back(tape.grad(v.id)); });
    if (corrupt && !analytic.empty() && analytic[0].size() > 0) analytic[0][0] += 1e-2;

    GradCheckReport report;
    auto tensors = collect_params_mut(params);
    const auto names = param_names(params);
    for (size_t gi = 0; gi < tensors.size(); ++gi) {
        Tensor& w = *tensors[gi];
        const Tensor& a = analytic[gi];
        double worst = 0;
        for (int64_t i = 0; i < w.size(); ++i) {
            const double keep = w[i];
            w[i] = keep + fd_step;
            const double fp = loss_value();
            w[i] = keep - fd_step;
            const double fm = loss_value();
            w[i] = keep;
            const double numeric = (fp - fm) / (2 * fd_step);
            const double den = std::max({1e-6, std::abs(a[i]), std::abs(numeric)});
            worst = std::max(worst, std::abs(a[i] - numeric) / den);
        }
        report.groups.push_back({names[gi], worst});
        report.worst = std::max(report.worst, worst);
    }
    report.elapsed_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

} // namespace magn
