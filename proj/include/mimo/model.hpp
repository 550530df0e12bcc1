#pragma once

#include <string>
#include <vector>

#include "mimo/pyramid.hpp"
#include "mimo/rng.hpp"
#include "mimo/tensor.hpp"

namespace mimo {

// How strided encoder features are fused with the shallow features extracted
// from the downsampled input image.
enum class FusionMode { fam, concat, sum };

inline const char* fusion_mode_name(FusionMode m) {
    switch (m) {
        case FusionMode::fam: return "fam";
        case FusionMode::concat: return "concat";
        default: return "sum";
    }
}

inline FusionMode fusion_mode_from_name(const std::string& s) {
    if (s == "fam") return FusionMode::fam;
    if (s == "concat") return FusionMode::concat;
    if (s == "sum") return FusionMode::sum;
    throw ConfigError("unknown fusion mode '" + s + "' (expected fam|concat|sum)");
}

struct ModelConfig {
    int base_channels = 32;
    int num_resblocks = 8;
    bool enable_mise = true;
    bool enable_mosd = true;
    bool enable_aff = true;
    FusionMode fusion = FusionMode::fam;

    static constexpr int levels = 3;  // the three-scale topology is fixed

    void validate() const {
        if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
        if (num_resblocks < 1) throw ConfigError("num_resblocks must be >= 1");
    }

    // Feature width at level k in {1,2,3}: base, 2x, 4x.
    index_t channels(int level) const { return index_t{base_channels} << (level - 1); }

    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

namespace arch_detail {

template <typename T>
class ParamBuilder {
public:
    explicit ParamBuilder(std::vector<NamedParam<T>>& registry) : registry_(registry) {}

    Tensor<T> make(const std::string& name, Shape s) {
        Tensor<T> t = Tensor<T>::zeros(s, /*requires_grad=*/true);
        registry_.push_back({name, t});
        return t;
    }

private:
    std::vector<NamedParam<T>>& registry_;
};

}  // namespace arch_detail

// Plain convolution layer; `act` appends a ReLU.
template <typename T>
struct ConvLayer {
    Tensor<T> w, b;
    index_t stride = 1;
    index_t pad = 0;
    bool act = false;

    Tensor<T> operator()(const Tensor<T>& x) const {
        Tensor<T> y = conv2d(x, w, b, stride, pad);
        return act ? relu(y) : y;
    }
};

// Stride-2 transposed convolution layer (4x4 kernel, padding 1): the decoder
// upsampler. Output is exactly twice the input resolution.
template <typename T>
struct UpConvLayer {
    Tensor<T> w, b;
    bool act = true;

    Tensor<T> operator()(const Tensor<T>& x) const {
        Tensor<T> y = transposed_conv2d(x, w, b, 2, 1);
        return act ? relu(y) : y;
    }
};

// conv3x3 -> ReLU -> conv3x3 plus identity skip; no normalization and no
// activation after the add.
template <typename T>
struct ResBlock {
    ConvLayer<T> c1, c2;

    Tensor<T> operator()(const Tensor<T>& x) const { return add(c2(c1(x)), x); }
};

// Shallow convolutional module: two 3x3/1x1 stacks, concat with the image,
// and a final 1x1 refinement to the level width.
template <typename T>
struct Scm {
    ConvLayer<T> conv3a, conv1a, conv3b, conv1b, refine;

    Tensor<T> operator()(const Tensor<T>& image) const {
        Tensor<T> f = conv1b(conv3b(conv1a(conv3a(image))));
        return refine(concat_channels(f, image));
    }
};

// Feature attention: gate the strided encoder features with the shallow
// features, refine the product, and add back.
template <typename T>
struct Fam {
    ConvLayer<T> merge;

    Tensor<T> operator()(const Tensor<T>& eb_down, const Tensor<T>& scm_out) const {
        return add(eb_down, merge(mul(eb_down, scm_out)));
    }
};

// One encoder fusion site. The FAM is the default; concat and sum are the
// reference fusion variants it is compared against.
template <typename T>
struct FusionSite {
    FusionMode mode = FusionMode::fam;
    Fam<T> fam;            // mode == fam
    ConvLayer<T> project;  // mode == concat: 1x1 from 2C to C

    Tensor<T> operator()(const Tensor<T>& eb_down, const Tensor<T>& scm_out) const {
        detail::check_same_shape(eb_down, scm_out, "fusion");
        switch (mode) {
            case FusionMode::fam: return fam(eb_down, scm_out);
            case FusionMode::concat: return project(concat_channels(eb_down, scm_out));
            default: return add(eb_down, scm_out);
        }
    }
};

// Asymmetric feature fusion: all three encoder outputs, resized to one
// level's resolution, concatenated and blended down to that level's width.
template <typename T>
struct Aff {
    ConvLayer<T> reduce;  // 1x1 over the concatenated widths
    ConvLayer<T> blend;   // 3x3 at the level width

    Tensor<T> operator()(const Tensor<T>& f1, const Tensor<T>& f2, const Tensor<T>& f3,
                         index_t out_h, index_t out_w) const {
        auto fit = [&](const Tensor<T>& f) {
            const Shape s = f.shape();
            return (s.h == out_h && s.w == out_w) ? f : bilinear_resize(f, out_h, out_w);
        };
        return blend(reduce(concat_channels(std::vector<Tensor<T>>{fit(f1), fit(f2), fit(f3)})));
    }
};

template <typename T>
class MimoUNet {
public:
    explicit MimoUNet(ModelConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        build();
    }

    const ModelConfig& config() const { return cfg_; }
    const std::vector<NamedParam<T>>& parameters() const { return params_; }
    std::vector<NamedParam<T>>& parameters() { return params_; }

    // Copies parameter values from another model with the same config.
    void copy_params_from(const MimoUNet& other) {
        if (!(other.cfg_ == cfg_)) throw UsageError("copy_params_from: config mismatch");
        for (std::size_t i = 0; i < params_.size(); ++i)
            params_[i].tensor.values() = other.params_[i].tensor.values();
    }

    index_t count_params() const {
        index_t total = 0;
        for (const auto& p : params_) total += p.tensor.numel();
        return total;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    // Fan-in-scaled normal init for conv weights; biases stay zero.
    void init_random(std::uint64_t seed) {
        Rng rng(seed);
        for (auto& p : params_) {
            if (p.name.size() >= 2 && p.name.compare(p.name.size() - 2, 2, ".w") == 0) {
                const Shape s = p.tensor.shape();
                const bool transposed = p.name.rfind("up", 0) == 0;
                const double fan_in = static_cast<double>((transposed ? s.n : s.c) * s.h * s.w);
                const double stddev = std::sqrt(2.0 / fan_in);
                for (auto& v : p.tensor.values()) v = static_cast<T>(rng.next_normal() * stddev);
            }
        }
    }

    // Coarse-to-fine forward pass. Returns the deblurred pyramid
    // {S1, S2, S3} at full, 1/2 and 1/4 resolution; with the multi-output
    // decoder disabled only S1 is produced. Each output is the level's head
    // plus the level's input image, so a zero model is the identity.
    std::vector<Tensor<T>> forward(const Tensor<T>& input) const {
        const Shape s = input.shape();
        if (s.c != 3)
            throw ConfigError("forward: expected 3-channel input, got " + s.str());
        if (s.h % 4 != 0 || s.w % 4 != 0)
            throw InputError("forward: input size " + s.str() +
                             " must be divisible by 4; pad the image (e.g. reflect) and crop the "
                             "output back");

        std::vector<Tensor<T>> in_pyr = build_pyramid(input, 3);
        const Tensor<T>& b1 = in_pyr[0];
        const Tensor<T>& b2 = in_pyr[1];
        const Tensor<T>& b3 = in_pyr[2];

        // encoder
        Tensor<T> e1 = run_blocks(eb1_, extract_(b1));
        Tensor<T> z = down2_(e1);
        if (cfg_.enable_mise) z = fuse2_(z, scm2_(b2));
        Tensor<T> e2 = run_blocks(eb2_, z);
        z = down3_(e2);
        if (cfg_.enable_mise) z = fuse3_(z, scm3_(b3));
        Tensor<T> e3 = run_blocks(eb3_, z);

        // cross-scale skips
        Tensor<T> a1 = cfg_.enable_aff
                           ? aff1_(e1, e2, e3, e1.shape().h, e1.shape().w)
                           : e1;
        Tensor<T> a2 = cfg_.enable_aff
                           ? aff2_(e1, e2, e3, e2.shape().h, e2.shape().w)
                           : e2;

        // decoder
        std::vector<Tensor<T>> outs;
        Tensor<T> d3 = run_blocks(db3_, e3);
        Tensor<T> s3, s2;
        if (cfg_.enable_mosd) s3 = add(head3_(d3), b3);
        z = merge2_(concat_channels(up2_(d3), a2));
        Tensor<T> d2 = run_blocks(db2_, z);
        if (cfg_.enable_mosd) s2 = add(head2_(d2), b2);
        z = merge1_(concat_channels(up1_(d2), a1));
        Tensor<T> d1 = run_blocks(db1_, z);
        outs.push_back(add(head1_(d1), b1));
        if (cfg_.enable_mosd) {
            outs.push_back(s2);
            outs.push_back(s3);
        }
        return outs;
    }

    // module access (tests recompose the forward pass from these)
    const ConvLayer<T>& extract() const { return extract_; }
    const std::vector<ResBlock<T>>& eb(int level) const { return level == 1 ? eb1_ : level == 2 ? eb2_ : eb3_; }
    const std::vector<ResBlock<T>>& db(int level) const { return level == 1 ? db1_ : level == 2 ? db2_ : db3_; }
    const ConvLayer<T>& down(int level) const { return level == 2 ? down2_ : down3_; }
    const Scm<T>& scm(int level) const {
        require_mise("scm");
        return level == 2 ? scm2_ : scm3_;
    }
    const FusionSite<T>& fusion(int level) const {
        require_mise("fusion");
        return level == 2 ? fuse2_ : fuse3_;
    }
    const Aff<T>& aff(int n) const {
        if (!cfg_.enable_aff) throw UsageError("AFF is disabled in this configuration");
        if (n != 1 && n != 2)
            throw UsageError("aff: level " + std::to_string(n) +
                             " does not exist (level 3 feeds the decoder directly)");
        return n == 1 ? aff1_ : aff2_;
    }
    const UpConvLayer<T>& up(int level) const { return level == 1 ? up1_ : up2_; }
    const ConvLayer<T>& merge(int level) const { return level == 1 ? merge1_ : merge2_; }
    const ConvLayer<T>& head(int level) const {
        if (level != 1 && !cfg_.enable_mosd)
            throw UsageError("heads 2 and 3 are absent without the multi-output decoder");
        return level == 1 ? head1_ : level == 2 ? head2_ : head3_;
    }

    static Tensor<T> run_blocks(const std::vector<ResBlock<T>>& blocks, Tensor<T> x) {
        for (const auto& b : blocks) x = b(x);
        return x;
    }

private:
    void require_mise(const char* what) const {
        if (!cfg_.enable_mise)
            throw UsageError(std::string(what) + " is absent without the multi-input encoder");
    }

    void build() {
        arch_detail::ParamBuilder<T> pb(params_);
        const index_t c1 = cfg_.channels(1), c2 = cfg_.channels(2), c3 = cfg_.channels(3);

        auto conv = [&](const std::string& name, index_t cout, index_t cin, index_t k,
                        index_t stride, bool act) {
            ConvLayer<T> l;
            l.w = pb.make(name + ".w", {cout, cin, k, k});
            l.b = pb.make(name + ".b", {1, cout, 1, 1});
            l.stride = stride;
            l.pad = k / 2;
            l.act = act;
            return l;
        };
        auto upconv = [&](const std::string& name, index_t cin, index_t cout) {
            UpConvLayer<T> l;
            l.w = pb.make(name + ".w", {cin, cout, 4, 4});
            l.b = pb.make(name + ".b", {1, cout, 1, 1});
            return l;
        };
        auto res_stack = [&](const std::string& name, index_t c) {
            std::vector<ResBlock<T>> blocks;
            blocks.reserve(static_cast<std::size_t>(cfg_.num_resblocks));
            for (int i = 0; i < cfg_.num_resblocks; ++i) {
                ResBlock<T> rb;
                rb.c1 = conv(name + ".res" + std::to_string(i) + ".c1", c, c, 3, 1, true);
                rb.c2 = conv(name + ".res" + std::to_string(i) + ".c2", c, c, 3, 1, false);
                blocks.push_back(rb);
            }
            return blocks;
        };
        auto scm = [&](const std::string& name, index_t c) {
            // interior widths follow C/4 -> C/2 -> C/2 -> C-3 (clamped at 1
            // for very narrow configs), then 1x1 back to C after the concat
            Scm<T> m;
            const index_t q = std::max<index_t>(1, c / 4);
            const index_t h = std::max<index_t>(1, c / 2);
            const index_t pre = std::max<index_t>(1, c - 3);
            m.conv3a = conv(name + ".conv3a", q, 3, 3, 1, true);
            m.conv1a = conv(name + ".conv1a", h, q, 1, 1, true);
            m.conv3b = conv(name + ".conv3b", h, h, 3, 1, true);
            m.conv1b = conv(name + ".conv1b", pre, h, 1, 1, true);
            m.refine = conv(name + ".refine", c, pre + 3, 1, 1, false);
            return m;
        };
        auto fusion = [&](const std::string& name, index_t c) {
            FusionSite<T> f;
            f.mode = cfg_.fusion;
            if (cfg_.fusion == FusionMode::fam)
                f.fam.merge = conv(name + ".merge", c, c, 3, 1, false);
            else if (cfg_.fusion == FusionMode::concat)
                f.project = conv(name + ".project", c, 2 * c, 1, 1, false);
            return f;
        };
        auto aff = [&](const std::string& name, index_t c) {
            Aff<T> a;
            a.reduce = conv(name + ".reduce", c, c1 + c2 + c3, 1, 1, true);
            a.blend = conv(name + ".blend", c, c, 3, 1, false);
            return a;
        };

        extract_ = conv("extract", c1, 3, 3, 1, true);
        eb1_ = res_stack("eb1", c1);
        down2_ = conv("down2", c2, c1, 3, 2, true);
        down3_ = conv("down3", c3, c2, 3, 2, true);
        if (cfg_.enable_mise) {
            scm2_ = scm("scm2", c2);
            scm3_ = scm("scm3", c3);
            fuse2_ = fusion("fuse2", c2);
            fuse3_ = fusion("fuse3", c3);
        }
        eb2_ = res_stack("eb2", c2);
        eb3_ = res_stack("eb3", c3);
        if (cfg_.enable_aff) {
            aff1_ = aff("aff1", c1);
            aff2_ = aff("aff2", c2);
        }
        db3_ = res_stack("db3", c3);
        db2_ = res_stack("db2", c2);
        db1_ = res_stack("db1", c1);
        up2_ = upconv("up2", c3, c2);
        up1_ = upconv("up1", c2, c1);
        merge2_ = conv("merge2", c2, 2 * c2, 1, 1, true);
        merge1_ = conv("merge1", c1, 2 * c1, 1, 1, true);
        head1_ = conv("head1", 3, c1, 3, 1, false);
        if (cfg_.enable_mosd) {
            head2_ = conv("head2", 3, c2, 3, 1, false);
            head3_ = conv("head3", 3, c3, 3, 1, false);
        }
    }

    ModelConfig cfg_;
    std::vector<NamedParam<T>> params_;

    ConvLayer<T> extract_, down2_, down3_, merge2_, merge1_, head1_, head2_, head3_;
    std::vector<ResBlock<T>> eb1_, eb2_, eb3_, db1_, db2_, db3_;
    Scm<T> scm2_, scm3_;
    FusionSite<T> fuse2_, fuse3_;
    Aff<T> aff1_, aff2_;
    UpConvLayer<T> up2_, up1_;
};

}  // namespace mimo
