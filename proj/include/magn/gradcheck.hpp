#pragma once

#include <string>
#include <vector>

#include "magn/autograd.hpp"
#include "magn/model.hpp"

namespace magn {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> groups;
    double worst = 0;
    double elapsed_s = 0;

    bool passed(double tol) const { return worst < tol; }
};

/// End-to-end check of every parameter-group gradient of
/// loss = mse(image + F(image), target) against central finite differences
/// (64-bit). `corrupt` perturbs one analytic gradient as a negative control.
GradCheckReport model_gradient_check(const ModelConfig& cfg, uint64_t seed, int extent,
                                     double fd_step = 1e-5, bool corrupt = false);

/// The micro configuration the acceptance gate runs: d=8, 1+1 residual
/// blocks, one graph block with 2 heads, 15x15 input.
ModelConfig gradcheck_micro_config();

} // namespace magn
