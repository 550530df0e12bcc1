#pragma once

#include <complex>
#include <cstdint>
#include <map>
#include <numbers>
#include <vector>

#include "mimo/tensor.hpp"

namespace mimo {

namespace fft_detail {

using cd = std::complex<double>;

inline bool is_pow2(index_t n) { return n > 0 && (n & (n - 1)) == 0; }

inline index_t next_pow2(index_t n) {
    index_t m = 1;
    while (m < n) m <<= 1;
    return m;
}

inline index_t smallest_prime_factor(index_t n) {
    for (index_t p = 2; p * p <= n; ++p)
        if (n % p == 0) return p;
    return n;
}

// Unnormalized forward DFT plan for one length. Power-of-two lengths run the
// iterative radix-2 path; general lengths recurse on the smallest prime
// factor; prime lengths fall back to a direct sum (small) or Bluestein's
// chirp-z algorithm (large).
class Fft1d {
public:
    static constexpr index_t kNaivePrimeMax = 61;

    explicit Fft1d(index_t n) : n_(n) {
        if (n_ < 1) throw UsageError("fft: length must be >= 1");
        if (is_pow2(n_)) {
            init_pow2_tables(n_, bitrev_, roots_);
        } else {
            roots_.resize(static_cast<std::size_t>(n_));
            for (index_t k = 0; k < n_; ++k) {
                double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_);
                roots_[static_cast<std::size_t>(k)] = cd(std::cos(ang), std::sin(ang));
            }
            if (smallest_prime_factor(n_) == n_ && n_ > kNaivePrimeMax) init_bluestein();
        }
    }

    index_t size() const { return n_; }

    // X[k] = sum_j a[j] * exp(-2*pi*i*j*k/n)
    void forward(cd* a) const {
        if (n_ == 1) return;
        if (is_pow2(n_)) {
            pow2_transform(a, n_, bitrev_, roots_);
        } else if (!blue_chirp_.empty()) {
            bluestein(a);
        } else {
            std::vector<cd> scratch(static_cast<std::size_t>(n_));
            recurse(a, scratch.data(), n_, 1);
        }
    }

    // Unnormalized inverse kernel: exp(+2*pi*i*j*k/n), no 1/n factor.
    void adjoint(cd* a) const {
        for (index_t i = 0; i < n_; ++i) a[i] = std::conj(a[i]);
        forward(a);
        for (index_t i = 0; i < n_; ++i) a[i] = std::conj(a[i]);
    }

private:
    static void init_pow2_tables(index_t n, std::vector<index_t>& bitrev, std::vector<cd>& roots) {
        bitrev.assign(static_cast<std::size_t>(n), 0);
        for (index_t i = 1; i < n; ++i)
            bitrev[static_cast<std::size_t>(i)] =
                (bitrev[static_cast<std::size_t>(i >> 1)] >> 1) | ((i & 1) ? n >> 1 : 0);
        roots.resize(static_cast<std::size_t>(n / 2));
        for (index_t k = 0; k < n / 2; ++k) {
            double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
            roots[static_cast<std::size_t>(k)] = cd(std::cos(ang), std::sin(ang));
        }
    }

    static void pow2_transform(cd* a, index_t n, const std::vector<index_t>& bitrev,
                               const std::vector<cd>& roots) {
        for (index_t i = 0; i < n; ++i) {
            index_t j = bitrev[static_cast<std::size_t>(i)];
            if (i < j) std::swap(a[i], a[j]);
        }
        for (index_t len = 2; len <= n; len <<= 1) {
            const index_t step = n / len;
            for (index_t base = 0; base < n; base += len) {
                for (index_t k = 0; k < len / 2; ++k) {
                    const cd w = roots[static_cast<std::size_t>(k * step)];
                    const cd u = a[base + k];
                    const cd v = a[base + k + len / 2] * w;
                    a[base + k] = u + v;
                    a[base + k + len / 2] = u - v;
                }
            }
        }
    }

    // Cooley-Tukey decimation in time over the smallest prime factor. `mult`
    // scales indices into the top-level root table: omega_s^e = roots_[(e % s) * mult].
    void recurse(cd* a, cd* scratch, index_t s, index_t mult) const {
        if (s == 1) return;
        const index_t p = smallest_prime_factor(s);
        if (p == s) {
            if (s <= kNaivePrimeMax) {
                naive_prime(a, scratch, s, mult);
            } else {
                large_prime_forward(a, s);
            }
            return;
        }
        const index_t m = s / p;
        for (index_t r = 0; r < p; ++r)
            for (index_t q = 0; q < m; ++q) scratch[r * m + q] = a[q * p + r];
        std::vector<cd> deeper(static_cast<std::size_t>(m));
        for (index_t r = 0; r < p; ++r) recurse(scratch + r * m, deeper.data(), m, mult * p);
        for (index_t k = 0; k < s; ++k) {
            cd acc(0.0, 0.0);
            const index_t km = k % m;
            for (index_t r = 0; r < p; ++r)
                acc += roots_[static_cast<std::size_t>(((r * k) % s) * mult)] * scratch[r * m + km];
            a[k] = acc;
        }
    }

    // defined after plan_for so the cached Bluestein plan is reused
    static void large_prime_forward(cd* a, index_t s);

    void naive_prime(cd* a, cd* scratch, index_t s, index_t mult) const {
        for (index_t j = 0; j < s; ++j) scratch[j] = a[j];
        for (index_t k = 0; k < s; ++k) {
            cd acc(0.0, 0.0);
            for (index_t j = 0; j < s; ++j)
                acc += roots_[static_cast<std::size_t>(((j * k) % s) * mult)] * scratch[j];
            a[k] = acc;
        }
    }

    void init_bluestein() {
        blue_m_ = next_pow2(2 * n_ - 1);
        init_pow2_tables(blue_m_, blue_bitrev_, blue_roots_);
        blue_chirp_.resize(static_cast<std::size_t>(n_));
        for (index_t j = 0; j < n_; ++j) {
            const index_t r = (j * j) % (2 * n_);
            const double ang = -std::numbers::pi * static_cast<double>(r) / static_cast<double>(n_);
            blue_chirp_[static_cast<std::size_t>(j)] = cd(std::cos(ang), std::sin(ang));
        }
        // circular kernel B[t] = conj(chirp[|t|]), FFT'd once
        blue_kernel_fft_.assign(static_cast<std::size_t>(blue_m_), cd(0.0, 0.0));
        for (index_t j = 0; j < n_; ++j) {
            const cd v = std::conj(blue_chirp_[static_cast<std::size_t>(j)]);
            blue_kernel_fft_[static_cast<std::size_t>(j)] = v;
            if (j != 0) blue_kernel_fft_[static_cast<std::size_t>(blue_m_ - j)] = v;
        }
        pow2_transform(blue_kernel_fft_.data(), blue_m_, blue_bitrev_, blue_roots_);
    }

    void bluestein(cd* a) const {
        std::vector<cd> buf(static_cast<std::size_t>(blue_m_), cd(0.0, 0.0));
        for (index_t j = 0; j < n_; ++j) buf[static_cast<std::size_t>(j)] = a[j] * blue_chirp_[static_cast<std::size_t>(j)];
        pow2_transform(buf.data(), blue_m_, blue_bitrev_, blue_roots_);
        for (index_t j = 0; j < blue_m_; ++j) buf[static_cast<std::size_t>(j)] *= blue_kernel_fft_[static_cast<std::size_t>(j)];
        // inverse pow2 FFT with 1/m scaling
        for (auto& v : buf) v = std::conj(v);
        pow2_transform(buf.data(), blue_m_, blue_bitrev_, blue_roots_);
        const double inv_m = 1.0 / static_cast<double>(blue_m_);
        for (index_t k = 0; k < n_; ++k)
            a[k] = std::conj(buf[static_cast<std::size_t>(k)]) * inv_m * blue_chirp_[static_cast<std::size_t>(k)];
    }

    index_t n_;
    std::vector<cd> roots_;
    std::vector<index_t> bitrev_;
    // Bluestein state (prime n > kNaivePrimeMax only)
    index_t blue_m_ = 0;
    std::vector<cd> blue_chirp_;
    std::vector<cd> blue_kernel_fft_;
    std::vector<index_t> blue_bitrev_;
    std::vector<cd> blue_roots_;
};

inline const Fft1d& plan_for(index_t n) {
    thread_local std::map<index_t, Fft1d> cache;
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, Fft1d(n)).first;
    return it->second;
}

inline void Fft1d::large_prime_forward(cd* a, index_t s) { plan_for(s).forward(a); }

// In-place 2-D transform of one H x W plane. sign < 0: forward DFT;
// sign > 0: unnormalized adjoint (conjugate kernel, no 1/(H*W)).
inline void transform_plane(cd* plane, index_t h, index_t w, int sign) {
    const Fft1d& row_plan = plan_for(w);
    const Fft1d& col_plan = plan_for(h);
    for (index_t y = 0; y < h; ++y) {
        cd* row = plane + y * w;
        if (sign < 0)
            row_plan.forward(row);
        else
            row_plan.adjoint(row);
    }
    thread_local std::vector<cd> col;
    col.resize(static_cast<std::size_t>(h));
    for (index_t x = 0; x < w; ++x) {
        for (index_t y = 0; y < h; ++y) col[static_cast<std::size_t>(y)] = plane[y * w + x];
        if (sign < 0)
            col_plan.forward(col.data());
        else
            col_plan.adjoint(col.data());
        for (index_t y = 0; y < h; ++y) plane[y * w + x] = col[static_cast<std::size_t>(y)];
    }
}

}  // namespace fft_detail

// Dense per-channel 2-D spectrum with explicit real and imaginary planes.
// For real inputs it satisfies Hermitian symmetry:
// S(u, v) == conj(S((H-u) mod H, (W-v) mod W)).
template <typename T>
struct ComplexSpectrum {
    Shape shape;
    std::vector<T> real;
    std::vector<T> imag;

    index_t offset(index_t n, index_t c, index_t u, index_t v) const {
        return ((n * shape.c + c) * shape.h + u) * shape.w + v;
    }
    T re(index_t n, index_t c, index_t u, index_t v) const {
        return real[static_cast<std::size_t>(offset(n, c, u, v))];
    }
    T im(index_t n, index_t c, index_t u, index_t v) const {
        return imag[static_cast<std::size_t>(offset(n, c, u, v))];
    }
};

// Differentiable per-channel 2-D DFT. The result packs the spectrum along
// channels: output channel c is Re F(x_c), channel C + c is Im F(x_c).
// The transform is unnormalized; the backward pass applies the adjoint
// (conjugate) transform and keeps the real part.
template <typename T>
Tensor<T> fft2_packed(const Tensor<T>& x) {
    using fft_detail::cd;
    const Shape xs = x.shape();
    Shape os{xs.n, 2 * xs.c, xs.h, xs.w};
    std::vector<T> out(static_cast<std::size_t>(os.numel()));
    const index_t plane = xs.h * xs.w;
    parallel_for(xs.n * xs.c, [&](index_t pc) {
        const index_t n = pc / xs.c;
        const index_t c = pc % xs.c;
        thread_local std::vector<cd> buf;
        buf.resize(static_cast<std::size_t>(plane));
        const T* src = x.data() + pc * plane;
        for (index_t i = 0; i < plane; ++i) buf[static_cast<std::size_t>(i)] = cd(static_cast<double>(src[i]), 0.0);
        fft_detail::transform_plane(buf.data(), xs.h, xs.w, -1);
        T* dst_re = out.data() + ((n * os.c) + c) * plane;
        T* dst_im = out.data() + ((n * os.c) + xs.c + c) * plane;
        for (index_t i = 0; i < plane; ++i) {
            dst_re[i] = static_cast<T>(buf[static_cast<std::size_t>(i)].real());
            dst_im[i] = static_cast<T>(buf[static_cast<std::size_t>(i)].imag());
        }
    });

    return detail::make_op<T>(os, std::move(out), {x}, [xs, os, plane](detail::Node<T>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        parallel_for(xs.n * xs.c, [&](index_t pc) {
            const index_t n = pc / xs.c;
            const index_t c = pc % xs.c;
            const T* g_re = node.grad.data() + ((n * os.c) + c) * plane;
            const T* g_im = node.grad.data() + ((n * os.c) + xs.c + c) * plane;
            thread_local std::vector<cd> buf;
            buf.resize(static_cast<std::size_t>(plane));
            for (index_t i = 0; i < plane; ++i)
                buf[static_cast<std::size_t>(i)] =
                    cd(static_cast<double>(g_re[i]), static_cast<double>(g_im[i]));
            fft_detail::transform_plane(buf.data(), xs.h, xs.w, +1);
            T* pg = p.grad.data() + pc * plane;
            for (index_t i = 0; i < plane; ++i)
                pg[i] += static_cast<T>(buf[static_cast<std::size_t>(i)].real());
        });
    });
}

// Per-channel 2-D DFT as an inspectable spectrum (no gradient tracking).
template <typename T>
ComplexSpectrum<T> fft2(const Tensor<T>& x) {
    NoGradGuard ng;
    Tensor<T> packed = fft2_packed(x);
    const Shape xs = x.shape();
    ComplexSpectrum<T> spec;
    spec.shape = xs;
    spec.real.resize(static_cast<std::size_t>(xs.numel()));
    spec.imag.resize(static_cast<std::size_t>(xs.numel()));
    const index_t plane = xs.h * xs.w;
    for (index_t n = 0; n < xs.n; ++n)
        for (index_t c = 0; c < xs.c; ++c) {
            const T* re = packed.data() + ((n * 2 * xs.c) + c) * plane;
            const T* im = packed.data() + ((n * 2 * xs.c) + xs.c + c) * plane;
            T* dr = spec.real.data() + ((n * xs.c) + c) * plane;
            T* di = spec.imag.data() + ((n * xs.c) + c) * plane;
            std::copy(re, re + plane, dr);
            std::copy(im, im + plane, di);
        }
    return spec;
}

}  // namespace mimo
