#pragma once

#include <vector>

#include "mimo/tensor.hpp"

namespace mimo {

// K-level scale pyramid: full, 1/2 and 1/4 resolution, built by successive
// half-pixel-aligned bilinear halving. The same downsampler serves network
// inputs and supervision targets.
template <typename T>
std::vector<Tensor<T>> build_pyramid(const Tensor<T>& img, int levels = 3) {
    const Shape s = img.shape();
    const index_t div = index_t{1} << (levels - 1);
    if (levels < 1) throw UsageError("build_pyramid: levels must be >= 1");
    if (s.h % div != 0 || s.w % div != 0)
        throw InputError("build_pyramid: image size " + s.str() + " is not divisible by " +
                         std::to_string(div));
    std::vector<Tensor<T>> pyr;
    pyr.reserve(static_cast<std::size_t>(levels));
    pyr.push_back(img);
    for (int k = 1; k < levels; ++k) {
        const Shape prev = pyr.back().shape();
        pyr.push_back(bilinear_resize(pyr.back(), prev.h / 2, prev.w / 2));
    }
    return pyr;
}

}  // namespace mimo
