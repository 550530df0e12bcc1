#include "mimo/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace mimo {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::array<double, kWindow> gaussian_kernel() {
    std::array<double, kWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - (kWindow - 1) / 2.0;
        k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        sum += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

}  // namespace

double psnr(const Tensor<float>& a, const Tensor<float>& b, double peak) {
    if (!(a.shape() == b.shape()))
        throw UsageError("psnr: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    double se = 0.0;
    const float* pa = a.data();
    const float* pb = b.data();
    for (index_t i = 0, e = a.numel(); i < e; ++i) {
        const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse / (peak * peak));
}

double ssim(const Tensor<float>& a, const Tensor<float>& b, double peak) {
    if (!(a.shape() == b.shape()))
        throw UsageError("ssim: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    const Shape s = a.shape();
    if (s.h < kWindow || s.w < kWindow)
        throw UsageError("ssim: image " + s.str() + " is smaller than the 11x11 window");

    static const std::array<double, kWindow> kernel = gaussian_kernel();
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const index_t vh = s.h - kWindow + 1;
    const index_t vw = s.w - kWindow + 1;

    // separable windowed moments: horizontal pass then vertical pass over
    // the five fields (a, b, a^2, b^2, ab)
    double total = 0.0;
    index_t positions = 0;
    std::vector<double> row(static_cast<std::size_t>(s.h * vw * 5));
    for (index_t n = 0; n < s.n; ++n) {
        for (index_t c = 0; c < s.c; ++c) {
            const float* pa = a.data() + (n * s.c + c) * s.h * s.w;
            const float* pb = b.data() + (n * s.c + c) * s.h * s.w;
            for (index_t y = 0; y < s.h; ++y) {
                for (index_t x = 0; x < vw; ++x) {
                    double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
                    for (int k = 0; k < kWindow; ++k) {
                        const double va = pa[y * s.w + x + k];
                        const double vb = pb[y * s.w + x + k];
                        const double w = kernel[static_cast<std::size_t>(k)];
                        ma += w * va;
                        mb += w * vb;
                        maa += w * va * va;
                        mbb += w * vb * vb;
                        mab += w * va * vb;
                    }
                    double* dst = row.data() + (y * vw + x) * 5;
                    dst[0] = ma;
                    dst[1] = mb;
                    dst[2] = maa;
                    dst[3] = mbb;
                    dst[4] = mab;
                }
            }
            for (index_t y = 0; y < vh; ++y) {
                for (index_t x = 0; x < vw; ++x) {
                    double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
                    for (int k = 0; k < kWindow; ++k) {
                        const double* src = row.data() + ((y + k) * vw + x) * 5;
                        const double w = kernel[static_cast<std::size_t>(k)];
                        ma += w * src[0];
                        mb += w * src[1];
                        maa += w * src[2];
                        mbb += w * src[3];
                        mab += w * src[4];
                    }
                    const double var_a = maa - ma * ma;
                    const double var_b = mbb - mb * mb;
                    const double cov = mab - ma * mb;
                    const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
                    const double den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
                    total += num / den;
                    ++positions;
                }
            }
        }
    }
    return total / static_cast<double>(positions);
}

}  // namespace mimo
