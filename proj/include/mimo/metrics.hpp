#pragma once

#include "mimo/tensor.hpp"

namespace mimo {

// Peak signal-to-noise ratio in dB over all entries jointly (RGB channels
// are not averaged separately). Identical images return +infinity.
double psnr(const Tensor<float>& a, const Tensor<float>& b, double peak = 1.0);

// Mean structural similarity with the canonical configuration: 11x11
// Gaussian window, sigma 1.5, C1 = (0.01*peak)^2, C2 = (0.03*peak)^2,
// computed per channel over valid window positions and averaged.
double ssim(const Tensor<float>& a, const Tensor<float>& b, double peak = 1.0);

}  // namespace mimo
