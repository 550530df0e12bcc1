#include "mimo/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "mimo/errors.hpp"

namespace mimo {

namespace {

constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

std::uint32_t be32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::uint8_t* data, std::size_t len) {
    put_be32(out, static_cast<std::uint32_t>(len));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    if (len) out.insert(out.end(), data, data + len);
    const auto crc = crc32(crc32(0L, Z_NULL, 0), out.data() + start,
                           static_cast<uInt>(4 + len));
    put_be32(out, static_cast<std::uint32_t>(crc));
}

std::vector<std::uint8_t> zlib_inflate(const std::uint8_t* data, std::size_t len,
                                       std::size_t expected) {
    std::vector<std::uint8_t> out(expected);
    z_stream zs{};
    if (inflateInit(&zs) != Z_OK) throw IoError("png: inflate init failed");
    zs.next_in = const_cast<Bytef*>(data);
    zs.avail_in = static_cast<uInt>(len);
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || zs.avail_out != 0)
        throw IoError("png: corrupt or truncated image data");
    return out;
}

std::vector<std::uint8_t> zlib_deflate(const std::uint8_t* data, std::size_t len) {
    uLongf bound = compressBound(static_cast<uLong>(len));
    std::vector<std::uint8_t> out(bound);
    if (compress2(out.data(), &bound, data, static_cast<uLong>(len), 6) != Z_OK)
        throw IoError("png: deflate failed");
    out.resize(bound);
    return out;
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

void unfilter(std::vector<std::uint8_t>& raw, int height, std::size_t stride, int bpp) {
    for (int y = 0; y < height; ++y) {
        std::uint8_t* row = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
        const std::uint8_t filter = row[0];
        std::uint8_t* cur = row + 1;
        const std::uint8_t* prev =
            y > 0 ? raw.data() + static_cast<std::size_t>(y - 1) * (stride + 1) + 1 : nullptr;
        switch (filter) {
            case 0: break;
            case 1:
                for (std::size_t i = bpp; i < stride; ++i) cur[i] += cur[i - bpp];
                break;
            case 2:
                if (prev)
                    for (std::size_t i = 0; i < stride; ++i) cur[i] += prev[i];
                break;
            case 3:
                for (std::size_t i = 0; i < stride; ++i) {
                    const int left = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
                    const int up = prev ? prev[i] : 0;
                    cur[i] += static_cast<std::uint8_t>((left + up) / 2);
                }
                break;
            case 4:
                for (std::size_t i = 0; i < stride; ++i) {
                    const int left = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
                    const int up = prev ? prev[i] : 0;
                    const int ul = (prev && i >= static_cast<std::size_t>(bpp)) ? prev[i - bpp] : 0;
                    cur[i] += static_cast<std::uint8_t>(paeth(left, up, ul));
                }
                break;
            default: throw IoError("png: unknown filter type " + std::to_string(filter));
        }
    }
}

}  // namespace

ImageU8 png_read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open image: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
        throw InputError("not a PNG file: " + path);

    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<std::uint8_t> idat;
    bool saw_ihdr = false, saw_iend = false;
    std::size_t pos = 8;
    while (pos + 8 <= bytes.size() && !saw_iend) {
        const std::uint32_t len = be32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw InputError("png: truncated chunk in " + path);
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const std::uint8_t* data = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw InputError("png: bad IHDR in " + path);
            width = static_cast<int>(be32(data));
            height = static_cast<int>(be32(data + 4));
            bit_depth = data[8];
            color_type = data[9];
            if (data[10] != 0 || data[11] != 0) throw InputError("png: unsupported compression/filter method");
            if (data[12] != 0) throw InputError("png: interlaced images are not supported: " + path);
            if (bit_depth != 8) throw InputError("png: only 8-bit depth is supported: " + path);
            if (color_type != 0 && color_type != 2 && color_type != 6)
                throw InputError("png: unsupported color type " + std::to_string(color_type) +
                                 " in " + path);
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        } else if (!(type[0] & 0x20)) {
            throw InputError("png: unsupported critical chunk in " + path);
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || width <= 0 || height <= 0) throw InputError("png: missing IHDR in " + path);
    if (idat.empty()) throw InputError("png: no image data in " + path);

    const int channels = color_type == 0 ? 1 : (color_type == 2 ? 3 : 4);
    const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
    auto raw = zlib_inflate(idat.data(), idat.size(),
                            static_cast<std::size_t>(height) * (stride + 1));
    unfilter(raw, height, stride, channels);

    ImageU8 img;
    img.width = width;
    img.height = height;
    img.rgb.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
    for (int y = 0; y < height; ++y) {
        const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * (stride + 1) + 1;
        std::uint8_t* dst = img.rgb.data() + static_cast<std::size_t>(y) * width * 3;
        for (int x = 0; x < width; ++x) {
            if (channels == 1) {
                dst[3 * x] = dst[3 * x + 1] = dst[3 * x + 2] = src[x];
            } else {
                dst[3 * x] = src[channels * x];
                dst[3 * x + 1] = src[channels * x + 1];
                dst[3 * x + 2] = src[channels * x + 2];
            }
        }
    }
    return img;
}

void png_write(const std::string& path, const ImageU8& img) {
    if (img.width <= 0 || img.height <= 0 ||
        img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw UsageError("png_write: inconsistent image dimensions");

    const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(img.height) * (stride + 1));
    for (int y = 0; y < img.height; ++y) {
        std::uint8_t* row = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
        row[0] = 0;  // filter: none
        std::memcpy(row + 1, img.rgb.data() + static_cast<std::size_t>(y) * stride, stride);
    }
    auto compressed = zlib_deflate(raw.data(), raw.size());

    std::vector<std::uint8_t> out;
    out.insert(out.end(), kSignature, kSignature + 8);
    std::uint8_t ihdr[13];
    ihdr[0] = static_cast<std::uint8_t>(img.width >> 24);
    ihdr[1] = static_cast<std::uint8_t>(img.width >> 16);
    ihdr[2] = static_cast<std::uint8_t>(img.width >> 8);
    ihdr[3] = static_cast<std::uint8_t>(img.width);
    ihdr[4] = static_cast<std::uint8_t>(img.height >> 24);
    ihdr[5] = static_cast<std::uint8_t>(img.height >> 16);
    ihdr[6] = static_cast<std::uint8_t>(img.height >> 8);
    ihdr[7] = static_cast<std::uint8_t>(img.height);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // color type: RGB
    ihdr[10] = 0;  // compression
    ihdr[11] = 0;  // filter method
    ihdr[12] = 0;  // no interlace
    append_chunk(out, "IHDR", ihdr, sizeof ihdr);
    append_chunk(out, "IDAT", compressed.data(), compressed.size());
    append_chunk(out, "IEND", nullptr, 0);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open image for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("image write failed: " + path);
}

Tensor<float> image_to_tensor(const ImageU8& img) {
    Tensor<float> t = Tensor<float>::zeros({1, 3, img.height, img.width});
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    float* data = t.data();
    for (std::size_t i = 0; i < plane; ++i) {
        data[i] = static_cast<float>(img.rgb[3 * i]) / 255.0f;
        data[plane + i] = static_cast<float>(img.rgb[3 * i + 1]) / 255.0f;
        data[2 * plane + i] = static_cast<float>(img.rgb[3 * i + 2]) / 255.0f;
    }
    return t;
}

ImageU8 tensor_to_image(const Tensor<float>& t) {
    const Shape s = t.shape();
    if (s.n != 1 || s.c != 3)
        throw UsageError("tensor_to_image: expected shape (1,3,H,W), got " + s.str());
    ImageU8 img;
    img.width = static_cast<int>(s.w);
    img.height = static_cast<int>(s.h);
    img.rgb.resize(static_cast<std::size_t>(s.w * s.h * 3));
    const std::size_t plane = static_cast<std::size_t>(s.h * s.w);
    const float* data = t.data();
    for (std::size_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) {
            const double v = std::lround(static_cast<double>(data[c * plane + i]) * 255.0);
            img.rgb[3 * i + static_cast<std::size_t>(c)] =
                static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, v)));
        }
    }
    return img;
}

Tensor<float> decode_image(const std::string& path) { return image_to_tensor(png_read(path)); }

void encode_image(const Tensor<float>& t, const std::string& path) {
    png_write(path, tensor_to_image(t));
}

}  // namespace mimo
