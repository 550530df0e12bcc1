#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mimo/data.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace mimo;

namespace {

Tensor<float> random_image(Shape s, std::uint64_t seed) {
    Rng rng(seed);
    return Tensor<float>::rand_uniform(s, rng, 0.0f, 1.0f);
}

struct TmpDir {
    fs::path path;
    explicit TmpDir(const std::string& name) : path(fs::path("tmp_") / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string file(const std::string& n) const { return (path / n).string(); }
};

}  // namespace

TEST_CASE("synthesize_blur: constant frames give constant blur and sharp") {
    FrameSequence seq;
    for (int i = 0; i < 5; ++i) seq.frames.push_back(Tensor<float>::full({1, 3, 4, 4}, 0.63f));
    auto pair = synthesize_blur(seq, 5);
    for (index_t i = 0; i < pair.blurry.numel(); ++i) {
        CHECK(pair.blurry.data()[i] == 0.63f);
        CHECK(pair.sharp.data()[i] == 0.63f);
    }
}

TEST_CASE("synthesize_blur: mean and middle frame for M = 3") {
    FrameSequence seq;
    for (float v : {0.0f, 0.3f, 0.9f}) seq.frames.push_back(Tensor<float>::full({1, 3, 2, 2}, v));
    auto pair = synthesize_blur(seq, 3);
    CHECK(pair.blurry.at(0, 0, 0, 0) == doctest::Approx(0.4).epsilon(1e-7));
    CHECK(pair.sharp.at(0, 0, 0, 0) == 0.3f);
}

TEST_CASE("synthesize_blur matches the per-pixel mean oracle") {
    FrameSequence seq;
    for (int i = 0; i < 7; ++i) seq.frames.push_back(random_image({1, 3, 6, 5}, 200 + i));
    auto pair = synthesize_blur(seq, 7);
    for (index_t i = 0; i < pair.blurry.numel(); ++i) {
        double mean = 0.0;
        for (int f = 0; f < 7; ++f) mean += seq.frames[f].data()[i];
        mean /= 7.0;
        CHECK(std::abs(pair.blurry.data()[i] - mean) < 1e-7);
    }
    for (index_t i = 0; i < pair.sharp.numel(); ++i)
        CHECK(pair.sharp.data()[i] == seq.frames[3].data()[i]);
}

TEST_CASE("synthesize_blur rejects bad M") {
    FrameSequence seq;
    for (int i = 0; i < 4; ++i) seq.frames.push_back(random_image({1, 3, 2, 2}, 210 + i));
    CHECK_THROWS_AS(synthesize_blur(seq, 5), InputError);  // M > frames
    CHECK_THROWS_AS(synthesize_blur(seq, 2), InputError);  // even M
}

TEST_CASE("synthesize_blur is linear in the frames") {
    FrameSequence a, b, combo;
    const double alpha = 0.6, beta = 0.4;
    for (int i = 0; i < 3; ++i) {
        a.frames.push_back(random_image({1, 3, 4, 4}, 220 + i));
        b.frames.push_back(random_image({1, 3, 4, 4}, 230 + i));
        combo.frames.push_back(add(scale(a.frames.back(), static_cast<float>(alpha)),
                                   scale(b.frames.back(), static_cast<float>(beta))));
    }
    auto pa = synthesize_blur(a, 3);
    auto pb = synthesize_blur(b, 3);
    auto pc = synthesize_blur(combo, 3);
    for (index_t i = 0; i < pc.blurry.numel(); ++i)
        CHECK(pc.blurry.data()[i] ==
              doctest::Approx(alpha * pa.blurry.data()[i] + beta * pb.blurry.data()[i])
                  .epsilon(1e-5));
}

TEST_CASE("pyramid shapes, constants and the bilinear oracle") {
    auto img = random_image({1, 3, 256, 256}, 240);
    auto pyr = build_pyramid(img, 3);
    CHECK(pyr[0].shape() == Shape{1, 3, 256, 256});
    CHECK(pyr[1].shape() == Shape{1, 3, 128, 128});
    CHECK(pyr[2].shape() == Shape{1, 3, 64, 64});

    auto konst = Tensor<float>::full({1, 3, 16, 16}, 0.41f);
    for (const auto& level : build_pyramid(konst, 3))
        for (index_t i = 0; i < level.numel(); ++i) CHECK(level.data()[i] == 0.41f);

    auto small = random_image({1, 1, 8, 8}, 241);
    auto level2 = build_pyramid(small, 3)[1];
    auto direct = oracle::bilinear_direct(small, 4, 4);
    CHECK(oracle::max_abs_diff(level2, direct) < 1e-6);

    CHECK_THROWS_AS(build_pyramid(random_image({1, 3, 6, 8}, 242), 3), InputError);
}

TEST_CASE("sample_patch: identity crop when the image is exactly patch-sized") {
    BlurPair pair;
    pair.blurry = random_image({1, 3, 16, 16}, 250);
    pair.sharp = random_image({1, 3, 16, 16}, 251);
    Rng rng(252);
    auto sample = sample_patch(pair, 16, 0.0, rng);
    for (index_t i = 0; i < pair.blurry.numel(); ++i) {
        CHECK(sample.blurry[0].data()[i] == pair.blurry.data()[i]);
        CHECK(sample.sharp[0].data()[i] == pair.sharp.data()[i]);
    }
    CHECK(sample.blurry[2].shape() == Shape{1, 3, 4, 4});
}

TEST_CASE("sample_patch: flipping twice recovers the original patch") {
    auto img = random_image({1, 3, 16, 16}, 253);
    BlurPair pair{img, img.clone()};
    Rng rng_a(254);
    auto flipped = sample_patch(pair, 16, 1.0, rng_a);
    auto twice = hflip(flipped.blurry[0]);
    for (index_t i = 0; i < img.numel(); ++i) CHECK(twice.data()[i] == img.data()[i]);
}

TEST_CASE("sample_patch errors when the image is smaller than the patch") {
    BlurPair pair{random_image({1, 3, 8, 8}, 255), random_image({1, 3, 8, 8}, 256)};
    Rng rng(257);
    CHECK_THROWS_AS(sample_patch(pair, 16, 0.5, rng), InputError);
}

TEST_CASE("crop offsets are uniform over the valid range") {
    BlurPair pair{random_image({1, 3, 8, 8}, 258), random_image({1, 3, 8, 8}, 259)};
    // mark the blurry image so the crop offset can be recovered
    for (index_t y = 0; y < 8; ++y)
        for (index_t x = 0; x < 8; ++x) pair.blurry.at(0, 0, y, x) = static_cast<float>(y * 8 + x);
    Rng rng(260);
    std::array<int, 25> counts{};
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
        auto sample = sample_patch(pair, 4, 0.0, rng);
        const int code = static_cast<int>(sample.blurry[0].at(0, 0, 0, 0));
        const int top = code / 8, left = code % 8;
        REQUIRE(top <= 4);
        REQUIRE(left <= 4);
        counts[static_cast<std::size_t>(top * 5 + left)] += 1;
    }
    const double expected = draws / 25.0;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // df = 24, upper 1% critical value
    CHECK(chi2 < 42.98);
}

TEST_CASE("augmentation applies identical transforms to both pyramid stacks") {
    auto img = random_image({1, 3, 32, 32}, 261);
    BlurPair pair{img, img.clone()};  // identical inputs expose any divergence
    for (std::uint64_t trial = 0; trial < 32; ++trial) {
        Rng rng(300 + trial);
        auto sample = sample_patch(pair, 16, 0.5, rng);
        for (int k = 0; k < 3; ++k)
            for (index_t i = 0; i < sample.blurry[k].numel(); ++i)
                REQUIRE(sample.blurry[k].data()[i] == sample.sharp[k].data()[i]);
    }
}

TEST_CASE("cropping commutes with pyramid construction on aligned grids") {
    auto img = random_image({1, 3, 32, 32}, 262);
    const index_t top = 8, left = 4, size = 16;  // multiples of 4
    auto crop_then_pyr = build_pyramid(crop(img, top, left, size, size), 3);
    auto pyr = build_pyramid(img, 3);
    for (int k = 0; k < 3; ++k) {
        const index_t f = index_t{1} << k;
        auto cropped = crop(pyr[k], top / f, left / f, size / f, size / f);
        for (index_t i = 0; i < cropped.numel(); ++i)
            REQUIRE(crop_then_pyr[k].data()[i] == cropped.data()[i]);
    }
}

TEST_CASE("png round trip preserves pixels bit-exactly") {
    TmpDir dir("png_roundtrip");
    ImageU8 img;
    img.width = 23;
    img.height = 17;
    img.rgb.resize(23 * 17 * 3);
    Rng rng(263);
    for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng.next_below(256));
    png_write(dir.file("x.png"), img);
    ImageU8 back = png_read(dir.file("x.png"));
    REQUIRE(back.width == img.width);
    REQUIRE(back.height == img.height);
    CHECK(back.rgb == img.rgb);

    // tensor mapping: byte 128 becomes 128/255
    auto t = image_to_tensor(back);
    img.rgb.assign(img.rgb.size(), 128);
    auto t128 = image_to_tensor(img);
    CHECK(t128.data()[0] == doctest::Approx(128.0 / 255.0).epsilon(1e-7));

    // decode -> encode keeps the byte payload
    encode_image(t, dir.file("y.png"));
    ImageU8 again = png_read(dir.file("y.png"));
    CHECK(again.rgb == back.rgb);
}

TEST_CASE("png reader accepts gray and RGBA, rejects junk") {
    TmpDir dir("png_variants");
    // tiny hand-built gray PNG via the writer is not possible (writer is
    // RGB-only), so exercise the error paths instead
    std::ofstream(dir.file("junk.png"), std::ios::binary) << "definitely not a png";
    CHECK_THROWS_AS(png_read(dir.file("junk.png")), InputError);
    CHECK_THROWS_AS(png_read(dir.file("missing.png")), IoError);
}

TEST_CASE("manifest parsing, validation and dataset expansion") {
    TmpDir dir("manifest");
    auto a = random_image({1, 3, 8, 8}, 264);
    auto b = random_image({1, 3, 8, 8}, 265);
    encode_image(a, dir.file("a.png"));
    encode_image(b, dir.file("b.png"));
    fs::create_directories(dir.path / "seq");
    for (int i = 0; i < 6; ++i)
        encode_image(random_image({1, 3, 8, 8}, 270 + i),
                     (dir.path / "seq" / ("f" + std::to_string(i) + ".png")).string());

    {
        std::ofstream m(dir.file("ok.tsv"));
        m << "a.png\tb.png\n";
        m << "# a comment line\n";
        m << "SEQ\tseq\t3\n";
    }
    auto manifest = load_manifest(dir.file("ok.tsv"));
    REQUIRE(manifest.records.size() == 2);
    CHECK(manifest.records[0].kind == ManifestRecord::Kind::pair);
    CHECK(manifest.records[1].kind == ManifestRecord::Kind::sequence);
    CHECK(manifest.records[1].m == 3);
    CHECK(validate_manifest(manifest).ok());

    auto ds = load_dataset(manifest);
    CHECK(ds.pairs.size() == 3);  // one pair + two windows of three frames

    {
        std::ofstream m(dir.file("bad.tsv"));
        m << "a.png\tb.png\n";
        m << "a.png\tnot_there.png\n";
    }
    auto bad = load_manifest(dir.file("bad.tsv"));
    auto report = validate_manifest(bad);
    REQUIRE(report.issues.size() == 1);
    CHECK(report.issues[0].record_index == 1);
    CHECK(report.str().find("not_there.png") != std::string::npos);

    {
        std::ofstream m(dir.file("mangled.tsv"));
        m << "only_one_field\n";
    }
    CHECK_THROWS_AS(load_manifest(dir.file("mangled.tsv")), InputError);
}
