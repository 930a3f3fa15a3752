#pragma once

#include <string>
#include <vector>

#include "magn/tensor.hpp"

namespace magn {

/// 10*log10(peak^2 / MSE) over all channels jointly; identical images report
/// +infinity (serialized as "inf").
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Mean local SSIM, 11x11 Gaussian window with sigma 1.5, C1 = (0.01*peak)^2,
/// C2 = (0.03*peak)^2, computed over valid window positions. Color images are
/// reduced to luminance (0.299 R + 0.587 G + 0.114 B) first.
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

Tensor to_luminance(const Tensor& img);

struct QualityEntry {
    std::string name;
    double psnr = 0;
    double ssim = 0;
};

struct QualityReport {
    std::vector<QualityEntry> entries;

    double mean_psnr() const;
    double mean_ssim() const;
    /// Line-oriented table; `csv` switches to "file,psnr,ssim" rows.
    std::string format(bool csv) const;
};

std::string format_db(double v);

} // namespace magn
