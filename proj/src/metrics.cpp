#include "magn/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace magn {

double psnr(const Tensor& a, const Tensor& b, double peak) {
    if (!a.same_shape(b))
        throw std::invalid_argument("psnr: shapes disagree, " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    double mse = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

Tensor to_luminance(const Tensor& img) {
    if (img.rank() == 2) {
        Tensor out({img.dim(0), img.dim(1)});
        out.data = img.data;
        return out;
    }
    if (img.rank() != 3)
        throw std::invalid_argument("luminance: expected HxW or HxWxC image, got " +
                                    shape_str(img.shape));
    const int H = img.dim(0), W = img.dim(1), C = img.dim(2);
    Tensor out({H, W});
    if (C == 1) {
        for (int64_t p = 0; p < out.size(); ++p) out[p] = img[p];
    } else if (C == 3) {
        for (int64_t p = 0; p < out.size(); ++p)
            out[p] = 0.299 * img[p * 3] + 0.587 * img[p * 3 + 1] + 0.114 * img[p * 3 + 2];
    } else {
        throw std::invalid_argument("luminance: expected 1 or 3 channels, got " +
                                    std::to_string(C));
    }
    return out;
}

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;

// Normalized 11x11 Gaussian weights.
const double* ssim_window() {
    static double w[kWindow * kWindow];
    static bool ready = false;
    if (!ready) {
        double sum = 0;
        const int half = kWindow / 2;
        for (int y = 0; y < kWindow; ++y)
            for (int x = 0; x < kWindow; ++x) {
                const double dy = y - half, dx = x - half;
                w[y * kWindow + x] =
                    std::exp(-(dx * dx + dy * dy) / (2.0 * kWindowSigma * kWindowSigma));
                sum += w[y * kWindow + x];
            }
        for (double& v : w) v /= sum;
        ready = true;
    }
    return w;
}

} // namespace

double ssim(const Tensor& a, const Tensor& b, double peak) {
    if (!a.same_shape(b))
        throw std::invalid_argument("ssim: shapes disagree, " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    const Tensor ya = to_luminance(a);
    const Tensor yb = to_luminance(b);
    const int H = ya.dim(0), W = ya.dim(1);
    if (H < kWindow || W < kWindow)
        throw std::invalid_argument("ssim: image " + std::to_string(H) + "x" + std::to_string(W) +
                                    " is smaller than the " + std::to_string(kWindow) +
                                    "x" + std::to_string(kWindow) + " window");
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const double* win = ssim_window();
    double acc = 0;
    int64_t n = 0;
    for (int oy = 0; oy + kWindow <= H; ++oy) {
        for (int ox = 0; ox + kWindow <= W; ++ox) {
            double ma = 0, mb = 0;
            for (int y = 0; y < kWindow; ++y)
                for (int x = 0; x < kWindow; ++x) {
                    const double w = win[y * kWindow + x];
                    ma += w * ya[static_cast<int64_t>(oy + y) * W + ox + x];
                    mb += w * yb[static_cast<int64_t>(oy + y) * W + ox + x];
                }
            double va = 0, vb = 0, cov = 0;
            for (int y = 0; y < kWindow; ++y)
                for (int x = 0; x < kWindow; ++x) {
                    const double w = win[y * kWindow + x];
                    const double da = ya[static_cast<int64_t>(oy + y) * W + ox + x] - ma;
                    const double db = yb[static_cast<int64_t>(oy + y) * W + ox + x] - mb;
                    va += w * da * da;
                    vb += w * db * db;
                    cov += w * da * db;
                }
            const double num = (2 * ma * mb + c1) * (2 * cov + c2);
            const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            acc += num / den;
            ++n;
        }
    }
    return acc / static_cast<double>(n);
}

double QualityReport::mean_psnr() const {
    double s = 0;
    for (const auto& e : entries) s += e.psnr;
    return entries.empty() ? 0 : s / static_cast<double>(entries.size());
}

double QualityReport::mean_ssim() const {
    double s = 0;
    for (const auto& e : entries) s += e.ssim;
    return entries.empty() ? 0 : s / static_cast<double>(entries.size());
}

std::string format_db(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(4);
    os << std::fixed << v;
    return os.str();
}

std::string QualityReport::format(bool csv) const {
    std::ostringstream os;
    if (csv) {
        os << "file,psnr,ssim\n";
        for (const auto& e : entries)
            os << e.name << ',' << format_db(e.psnr) << ',' << format_db(e.ssim) << '\n';
        os << "mean," << format_db(mean_psnr()) << ',' << format_db(mean_ssim()) << '\n';
    } else {
        for (const auto& e : entries)
            os << e.name << "  psnr=" << format_db(e.psnr) << "  ssim=" << format_db(e.ssim)
               << '\n';
        os << "mean  psnr=" << format_db(mean_psnr()) << "  ssim=" << format_db(mean_ssim())
           << '\n';
    }
    return os.str();
}

} // namespace magn
