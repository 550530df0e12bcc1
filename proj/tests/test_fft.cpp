#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <complex>

#include "mimo/fft.hpp"
#include "oracles.hpp"

using namespace mimo;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, bool rg = false) {
    Rng rng(seed);
    return Tensor<T>::rand_uniform(s, rng, T(-1), T(1), rg);
}

template <typename T>
void check_against_direct_dft(Shape s, std::uint64_t seed, double tol) {
    auto x = random_tensor<T>(s, seed);
    auto spec = fft2(x);
    for (index_t n = 0; n < s.n; ++n)
        for (index_t c = 0; c < s.c; ++c) {
            auto ref = oracle::dft2d_direct(x, n, c);
            for (index_t i = 0; i < s.h * s.w; ++i) {
                const auto& r = ref[static_cast<std::size_t>(i)];
                const double scale = std::max(1.0, std::abs(r));
                CHECK(std::abs(static_cast<double>(spec.real[static_cast<std::size_t>(
                                   spec.offset(n, c, i / s.w, i % s.w))]) -
                               r.real()) < tol * scale);
                CHECK(std::abs(static_cast<double>(spec.imag[static_cast<std::size_t>(
                                   spec.offset(n, c, i / s.w, i % s.w))]) -
                               r.imag()) < tol * scale);
            }
        }
}

}  // namespace

TEST_CASE("constant image concentrates in the DC bin") {
    auto x = Tensor<double>::full({1, 1, 6, 4}, 0.7);
    auto spec = fft2(x);
    CHECK(spec.re(0, 0, 0, 0) == doctest::Approx(0.7 * 6 * 4).epsilon(1e-12));
    for (index_t u = 0; u < 6; ++u)
        for (index_t v = 0; v < 4; ++v) {
            if (u == 0 && v == 0) continue;
            CHECK(std::abs(spec.re(0, 0, u, v)) < 1e-12);
            CHECK(std::abs(spec.im(0, 0, u, v)) < 1e-12);
        }
}

TEST_CASE("unit impulse at the origin has a flat spectrum") {
    auto x = Tensor<double>::zeros({1, 1, 5, 7});
    x.at(0, 0, 0, 0) = 1.0;
    auto spec = fft2(x);
    for (index_t u = 0; u < 5; ++u)
        for (index_t v = 0; v < 7; ++v) {
            CHECK(spec.re(0, 0, u, v) == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(std::abs(spec.im(0, 0, u, v)) < 1e-12);
        }
}

TEST_CASE("fft2 matches the direct DFT oracle across size families") {
    check_against_direct_dft<double>({1, 1, 4, 4}, 60, 1e-9);     // power of two
    check_against_direct_dft<double>({1, 1, 7, 5}, 61, 1e-9);     // small primes
    check_against_direct_dft<double>({1, 1, 16, 16}, 62, 1e-9);   // training size
    check_against_direct_dft<double>({1, 2, 12, 18}, 63, 1e-9);   // mixed radix
    check_against_direct_dft<double>({1, 1, 67, 3}, 64, 1e-9);    // Bluestein prime
    check_against_direct_dft<float>({1, 1, 7, 5}, 65, 1e-6);      // 32-bit carrier
    check_against_direct_dft<float>({1, 1, 16, 16}, 66, 1e-6);
}

TEST_CASE("fft2 is linear bin by bin") {
    auto x = random_tensor<double>({1, 2, 12, 10}, 67);
    auto y = random_tensor<double>({1, 2, 12, 10}, 68);
    const double alpha = 1.7, beta = -0.6;
    auto combo = add(scale(x, alpha), scale(y, beta));
    auto sc = fft2(combo);
    auto sx = fft2(x);
    auto sy = fft2(y);
    for (std::size_t i = 0; i < sc.real.size(); ++i) {
        const double re = alpha * sx.real[i] + beta * sy.real[i];
        const double im = alpha * sx.imag[i] + beta * sy.imag[i];
        CHECK(std::abs(sc.real[i] - re) < 1e-6 * std::max(1.0, std::abs(re)));
        CHECK(std::abs(sc.imag[i] - im) < 1e-6 * std::max(1.0, std::abs(im)));
    }
}

TEST_CASE("Parseval: spatial energy times H*W equals spectral energy") {
    for (Shape s : {Shape{1, 3, 16, 16}, Shape{1, 1, 7, 5}, Shape{2, 1, 12, 9}}) {
        auto x = random_tensor<double>(s, 69 + s.h);
        auto spec = fft2(x);
        double spatial = 0.0;
        for (index_t i = 0; i < x.numel(); ++i) spatial += x.data()[i] * x.data()[i];
        double spectral = 0.0;
        for (std::size_t i = 0; i < spec.real.size(); ++i)
            spectral += spec.real[i] * spec.real[i] + spec.imag[i] * spec.imag[i];
        // energy splits per (n, c) plane, all planes share one H*W
        CHECK(spatial * static_cast<double>(s.h * s.w) ==
              doctest::Approx(spectral).epsilon(1e-5));
    }
}

TEST_CASE("real input spectra satisfy Hermitian symmetry") {
    auto x = random_tensor<double>({1, 1, 10, 6}, 70);
    auto spec = fft2(x);
    for (index_t u = 0; u < 10; ++u)
        for (index_t v = 0; v < 6; ++v) {
            const index_t mu = (10 - u) % 10;
            const index_t mv = (6 - v) % 6;
            CHECK(spec.re(0, 0, u, v) == doctest::Approx(spec.re(0, 0, mu, mv)).epsilon(1e-9));
            CHECK(spec.im(0, 0, u, v) == doctest::Approx(-spec.im(0, 0, mu, mv)).epsilon(1e-9));
        }
}

TEST_CASE("packed spectrum layout stacks Re then Im along channels") {
    auto x = random_tensor<double>({2, 3, 8, 8}, 71);
    auto packed = fft2_packed(x);
    REQUIRE(packed.shape() == Shape{2, 6, 8, 8});
    auto spec = fft2(x);
    for (index_t n = 0; n < 2; ++n)
        for (index_t c = 0; c < 3; ++c)
            for (index_t u = 0; u < 8; ++u)
                for (index_t v = 0; v < 8; ++v) {
                    CHECK(packed.at(n, c, u, v) == spec.re(n, c, u, v));
                    CHECK(packed.at(n, 3 + c, u, v) == spec.im(n, c, u, v));
                }
}

TEST_CASE("fft2 backward is the adjoint transform") {
    // loss = <F(u), v> is linear in u, so <u, grad_u> must equal the loss
    auto u = random_tensor<double>({1, 2, 6, 5}, 72, true);
    auto v = random_tensor<double>({1, 4, 6, 5}, 73);
    auto loss = sum(mul(fft2_packed(u), v));
    backward(loss);
    double lhs = loss.item();
    double rhs = 0.0;
    for (index_t i = 0; i < u.numel(); ++i) rhs += u.data()[i] * u.grad()[i];
    CHECK(std::abs(lhs - rhs) <= 1e-9 * std::max(1.0, std::abs(lhs)));
}

TEST_CASE("fft2 forward is bit-deterministic") {
    auto x = random_tensor<float>({1, 3, 24, 20}, 74);
    auto a = fft2_packed(x);
    auto b = fft2_packed(x);
    for (index_t i = 0; i < a.numel(); ++i) REQUIRE(a.data()[i] == b.data()[i]);
}
