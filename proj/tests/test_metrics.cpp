#include <doctest.h>

#include <cmath>

#include "magn/degradation.hpp"
#include "magn/metrics.hpp"
#include "oracles.hpp"

using namespace magn;
using oracle::random_tensor;

namespace {

// Reference SSIM that builds its own window and uses the E[x^2]-mu^2 moment
// form rather than the two-pass centered sums.
double ssim_oracle(const Tensor& a, const Tensor& b) {
    const Tensor ya = to_luminance(a);
    const Tensor yb = to_luminance(b);
    const int H = ya.dim(0), W = ya.dim(1);
    const int win = 11;
    const double sigma = 1.5;
    std::vector<double> w(win * win);
    double wsum = 0;
    for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
            const double dy = y - 5, dx = x - 5;
            w[static_cast<size_t>(y * win + x)] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            wsum += w[static_cast<size_t>(y * win + x)];
        }
    for (auto& v : w) v /= wsum;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    long double total = 0;
    int64_t n = 0;
    for (int oy = 0; oy + win <= H; ++oy)
        for (int ox = 0; ox + win <= W; ++ox) {
            long double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
            for (int y = 0; y < win; ++y)
                for (int x = 0; x < win; ++x) {
                    const double wa = ya[(oy + y) * W + ox + x];
                    const double wb = yb[(oy + y) * W + ox + x];
                    const double ww = w[static_cast<size_t>(y * win + x)];
                    ma += ww * wa;
                    mb += ww * wb;
                    maa += ww * wa * wa;
                    mbb += ww * wb * wb;
                    mab += ww * wa * wb;
                }
            const long double va = maa - ma * ma;
            const long double vb = mbb - mb * mb;
            const long double cov = mab - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++n;
        }
    return static_cast<double>(total / n);
}

} // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("identical images have infinite psnr") {
    Rng rng(111);
    const Tensor a = random_tensor({16, 16, 3}, rng, 0.0, 1.0);
    CHECK(std::isinf(psnr(a, a)));
    CHECK(format_db(psnr(a, a)) == "inf");
}

TEST_CASE("uniform 1/255 difference gives 20*log10(255) dB") {
    Tensor a({32, 32, 1}, 0.5);
    Tensor b({32, 32, 1}, 0.5 + 1.0 / 255.0);
    CHECK(std::abs(psnr(a, b) - 48.1308) < 1e-3);
}

TEST_CASE("psnr matches a direct formula evaluation") {
    Rng rng(112);
    const Tensor a = random_tensor({24, 24, 3}, rng, 0.0, 1.0);
    const Tensor b = random_tensor({24, 24, 3}, rng, 0.0, 1.0);
    long double mse = 0;
    for (int64_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
    mse /= a.size();
    const double want = 10.0 * std::log10(1.0 / static_cast<double>(mse));
    CHECK(psnr(a, b) == doctest::Approx(want).epsilon(1e-12));
    CHECK(psnr(a, b) == psnr(b, a));
}

TEST_CASE("psnr rejects shape mismatches") {
    CHECK_THROWS_AS(psnr(Tensor({4, 4, 1}), Tensor({4, 5, 1})), std::invalid_argument);
}

TEST_CASE("psnr decreases as noise grows") {
    Rng rng(113);
    const Tensor clean = random_tensor({48, 48, 1}, rng, 0.2, 0.8);
    double last = 1e9;
    for (double sigma : {5.0, 15.0, 40.0}) {
        double mean = 0;
        for (uint64_t seed = 0; seed < 3; ++seed) {
            DegradeSpec spec;
            spec.sigma = sigma;
            spec.seed = seed + 1;
            mean += psnr(clean, add_gaussian_noise(clean, spec));
        }
        mean /= 3;
        CHECK(mean < last - 1.0);
        last = mean;
    }
}

TEST_CASE("identical images have ssim exactly 1") {
    Rng rng(114);
    const Tensor a = random_tensor({16, 20, 1}, rng, 0.0, 1.0);
    CHECK(ssim(a, a) == 1.0);
}

TEST_CASE("inverted binary image has negative ssim") {
    Rng rng(115);
    Tensor a({16, 16, 1});
    for (auto& v : a.data) v = rng.below(2) ? 1.0 : 0.0;
    Tensor b(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) b[i] = 1.0 - a[i];
    CHECK(ssim(a, b) < 0.0);
}

TEST_CASE("ssim matches the naive windowed oracle") {
    Rng rng(116);
    const Tensor a = random_tensor({32, 32, 1}, rng, 0.0, 1.0);
    const Tensor b = random_tensor({32, 32, 1}, rng, 0.0, 1.0);
    CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-9);
    const Tensor ca = random_tensor({32, 32, 3}, rng, 0.0, 1.0);
    const Tensor cb = random_tensor({32, 32, 3}, rng, 0.0, 1.0);
    CHECK(std::abs(ssim(ca, cb) - ssim_oracle(ca, cb)) < 1e-9);
}

TEST_CASE("ssim is symmetric and bounded") {
    Rng rng(117);
    for (int it = 0; it < 5; ++it) {
        const Tensor a = random_tensor({16, 16, 1}, rng, 0.0, 1.0);
        const Tensor b = random_tensor({16, 16, 1}, rng, 0.0, 1.0);
        const double s = ssim(a, b);
        CHECK(s == ssim(b, a));
        CHECK(s >= -1.0);
        CHECK(s <= 1.0);
    }
}

TEST_CASE("ssim rejects images smaller than the window") {
    CHECK_THROWS_AS(ssim(Tensor({8, 8, 1}), Tensor({8, 8, 1})), std::invalid_argument);
}

TEST_CASE("report means and csv layout") {
    QualityReport r;
    r.entries.push_back({"a.png", 30.0, 0.9});
    r.entries.push_back({"b.png", 34.0, 0.7});
    CHECK(r.mean_psnr() == doctest::Approx(32.0));
    CHECK(r.mean_ssim() == doctest::Approx(0.8));
    const std::string csv = r.format(true);
    CHECK(csv.find("file,psnr,ssim\n") == 0);
    CHECK(csv.find("mean,32.0000,0.8000") != std::string::npos);
}

TEST_SUITE_END();
