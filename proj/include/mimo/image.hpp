#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mimo/tensor.hpp"

namespace mimo {

// Tightly packed 8-bit RGB image.
struct ImageU8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // width * height * 3
};

// Minimal PNG codec for 8-bit images. Reading accepts non-interlaced
// grayscale, RGB and RGBA (alpha is dropped, gray is replicated); writing
// always emits 8-bit RGB. DEFLATE is handled by zlib.
ImageU8 png_read(const std::string& path);
void png_write(const std::string& path, const ImageU8& img);

// 8-bit <-> [0,1] float tensor conversions. Decoding divides by 255;
// encoding rounds half away from zero and clamps to [0, 255].
Tensor<float> image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor<float>& t);

// spec'd convenience wrappers around the PNG codec
Tensor<float> decode_image(const std::string& path);
void encode_image(const Tensor<float>& t, const std::string& path);

}  // namespace mimo
