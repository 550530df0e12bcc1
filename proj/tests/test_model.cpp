#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "mimo/checkpoint.hpp"
#include "mimo/loss.hpp"
#include "mimo/model.hpp"
#include "mimo/pyramid.hpp"
#include "oracles.hpp"

using namespace mimo;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.base_channels = 8;
    cfg.num_resblocks = 2;
    return cfg;
}

template <typename T>
Tensor<T> random_image(Shape s, std::uint64_t seed) {
    Rng rng(seed);
    return Tensor<T>::rand_uniform(s, rng, T(0), T(1));
}

}  // namespace

TEST_CASE("parameter counts match the published sizes within 5%") {
    ModelConfig base;  // 32 channels, 8 resblocks, everything enabled
    MimoUNet<float> net(base);
    const double m = static_cast<double>(net.count_params()) / 1e6;
    CHECK(m >= 6.46);
    CHECK(m <= 7.14);

    ModelConfig plus = base;
    plus.num_resblocks = 20;
    MimoUNet<float> net_plus(plus);
    const double mp = static_cast<double>(net_plus.count_params()) / 1e6;
    CHECK(mp >= 15.3);
    CHECK(mp <= 16.9);
}

TEST_CASE("parameter count for a hand-enumerated minimal config") {
    ModelConfig cfg;
    cfg.base_channels = 1;
    cfg.num_resblocks = 1;
    MimoUNet<float> net(cfg);

    // channel widths 1 / 2 / 4; conv params = cout*cin*k*k + cout
    auto conv = [](index_t cout, index_t cin, index_t k) { return cout * cin * k * k + cout; };
    index_t expect = 0;
    expect += conv(1, 3, 3);                                    // extract
    expect += 2 * conv(1, 1, 3);                                // eb1: one resblock
    expect += conv(2, 1, 3);                                    // down2
    expect += conv(4, 2, 3);                                    // down3
    // scm2 (width 2): 3->1 (3x3), 1->1 (1x1), 1->1 (3x3), 1->1 (1x1), 4->2 (1x1)
    expect += conv(1, 3, 3) + conv(1, 1, 1) + conv(1, 1, 3) + conv(1, 1, 1) + conv(2, 4, 1);
    // scm3 (width 4): 3->1, 1->2, 2->2 (3x3), 2->1, 4->4
    expect += conv(1, 3, 3) + conv(2, 1, 1) + conv(2, 2, 3) + conv(1, 2, 1) + conv(4, 4, 1);
    expect += conv(2, 2, 3) + conv(4, 4, 3);                    // fam merges
    expect += 2 * conv(2, 2, 3) + 2 * conv(4, 4, 3);            // eb2, eb3
    expect += conv(1, 7, 1) + conv(1, 1, 3);                    // aff1
    expect += conv(2, 7, 1) + conv(2, 2, 3);                    // aff2
    expect += 2 * conv(4, 4, 3) + 2 * conv(2, 2, 3) + 2 * conv(1, 1, 3);  // db3, db2, db1
    expect += 4 * 2 * 4 * 4 + 2;                                // up2: (4,2,4,4) + bias
    expect += 2 * 1 * 4 * 4 + 1;                                // up1: (2,1,4,4) + bias
    expect += conv(2, 4, 1) + conv(1, 2, 1);                    // merges
    expect += conv(3, 1, 3) + conv(3, 2, 3) + conv(3, 4, 3);    // heads
    CHECK(net.count_params() == expect);
}

TEST_CASE("parameter count orderings across toggles") {
    auto count = [](bool mise, bool mosd, bool aff) {
        ModelConfig cfg;
        cfg.enable_mise = mise;
        cfg.enable_mosd = mosd;
        cfg.enable_aff = aff;
        return MimoUNet<float>(cfg).count_params();
    };
    const index_t baseline = count(false, false, false);
    const index_t with_mise = count(true, false, false);
    const index_t with_mosd = count(false, true, false);
    const index_t with_aff = count(false, false, true);
    const index_t full = count(true, true, true);

    CHECK(with_mise > baseline);
    CHECK(with_aff > baseline);
    CHECK(full > with_mise);
    CHECK(full > with_mosd);
    CHECK(full > with_aff);

    // MOSD adds exactly the two extra head convolutions (widths 64 and 128)
    const index_t head2 = 3 * 64 * 9 + 3;
    const index_t head3 = 3 * 128 * 9 + 3;
    CHECK(with_mosd - baseline == head2 + head3);

    // strictly increasing in depth and width
    ModelConfig deeper;
    deeper.num_resblocks = 9;
    CHECK(MimoUNet<float>(deeper).count_params() > count(true, true, true));
    ModelConfig wider;
    wider.base_channels = 33;
    CHECK(MimoUNet<float>(wider).count_params() > count(true, true, true));
}

TEST_CASE("zero-initialized network is the identity at every scale") {
    MimoUNet<float> net(tiny_config());
    auto input = random_image<float>({2, 3, 32, 32}, 80);
    auto outs = net.forward(input);
    REQUIRE(outs.size() == 3);
    auto pyr = build_pyramid(input, 3);
    for (int k = 0; k < 3; ++k) {
        REQUIRE(outs[k].shape() == pyr[k].shape());
        for (index_t i = 0; i < outs[k].numel(); ++i)
            REQUIRE(outs[k].data()[i] == pyr[k].data()[i]);
    }
}

TEST_CASE("forward output scales are exactly H, H/2, H/4") {
    MimoUNet<float> net(tiny_config());
    auto outs = net.forward(random_image<float>({1, 3, 64, 64}, 81));
    CHECK(outs[0].shape() == Shape{1, 3, 64, 64});
    CHECK(outs[1].shape() == Shape{1, 3, 32, 32});
    CHECK(outs[2].shape() == Shape{1, 3, 16, 16});

    CHECK_THROWS_AS(net.forward(random_image<float>({1, 3, 30, 32}, 82)), InputError);
    CHECK_THROWS_AS(net.forward(random_image<float>({1, 2, 32, 32}, 83)), ConfigError);
}

TEST_CASE("encoder feature shapes follow the level widths") {
    ModelConfig cfg;  // base 32
    cfg.num_resblocks = 1;
    MimoUNet<float> net(cfg);
    net.init_random(84);
    auto b1 = random_image<float>({1, 3, 64, 64}, 85);
    auto pyr = build_pyramid(b1, 3);
    auto e1 = MimoUNet<float>::run_blocks(net.eb(1), net.extract()(b1));
    CHECK(e1.shape() == Shape{1, 32, 64, 64});
    auto z2 = net.down(2)(e1);
    CHECK(z2.shape() == Shape{1, 64, 32, 32});
    auto e2 = MimoUNet<float>::run_blocks(net.eb(2), net.fusion(2)(z2, net.scm(2)(pyr[1])));
    CHECK(e2.shape() == Shape{1, 64, 32, 32});
    auto z3 = net.down(3)(e2);
    auto e3 = MimoUNet<float>::run_blocks(net.eb(3), net.fusion(3)(z3, net.scm(3)(pyr[2])));
    CHECK(e3.shape() == Shape{1, 128, 16, 16});
}

TEST_CASE("scm layer sequence matches the hand-composed oracle") {
    MimoUNet<float> net(tiny_config());
    net.init_random(86);
    auto b2 = random_image<float>({1, 3, 16, 16}, 87);
    auto got = net.scm(2)(b2);
    CHECK(got.shape() == Shape{1, 16, 16, 16});

    const auto& m = net.scm(2);
    auto f = relu(conv2d(b2, m.conv3a.w, m.conv3a.b, 1, 1));
    f = relu(conv2d(f, m.conv1a.w, m.conv1a.b, 1, 0));
    f = relu(conv2d(f, m.conv3b.w, m.conv3b.b, 1, 1));
    f = relu(conv2d(f, m.conv1b.w, m.conv1b.b, 1, 0));
    auto ref = conv2d(concat_channels(f, b2), m.refine.w, m.refine.b, 1, 0);
    CHECK(oracle::max_abs_diff(got, ref) == 0.0);

    // all-zero image with zero parameters stays zero
    MimoUNet<float> zero_net(tiny_config());
    auto zeros = Tensor<float>::zeros({1, 3, 16, 16});
    auto z = zero_net.scm(2)(zeros);
    for (index_t i = 0; i < z.numel(); ++i) CHECK(z.data()[i] == 0.0f);

    CHECK_THROWS_AS(net.scm(2)(random_image<float>({1, 4, 16, 16}, 88)), ConfigError);
}

TEST_CASE("fam output is eb_down + conv(eb_down * scm_out)") {
    MimoUNet<float> net(tiny_config());
    net.init_random(89);
    auto eb_down = random_image<float>({1, 16, 8, 8}, 90);
    auto scm_out = random_image<float>({1, 16, 8, 8}, 91);
    auto got = net.fusion(2)(eb_down, scm_out);
    const auto& merge = net.fusion(2).fam.merge;
    auto ref = add(eb_down, conv2d(mul(eb_down, scm_out), merge.w, merge.b, 1, 1));
    CHECK(oracle::max_abs_diff(got, ref) == 0.0);

    // multiplicative annihilation: zero scm side passes eb_down through
    auto zeros = Tensor<float>::zeros({1, 16, 8, 8});
    auto passthrough = net.fusion(2)(eb_down, zeros);  // merge bias is zero
    for (index_t i = 0; i < eb_down.numel(); ++i)
        CHECK(passthrough.data()[i] == eb_down.data()[i]);

    CHECK_THROWS_AS(net.fusion(2)(eb_down, random_image<float>({1, 16, 4, 4}, 92)), ConfigError);
}

TEST_CASE("fusion variants: concat projects to the level width, sum adds") {
    for (FusionMode mode : {FusionMode::fam, FusionMode::concat, FusionMode::sum}) {
        ModelConfig cfg = tiny_config();
        cfg.fusion = mode;
        MimoUNet<double> net(cfg);
        net.init_random(93);
        auto eb_down = random_image<double>({1, 16, 8, 8}, 94);
        auto scm_out = random_image<double>({1, 16, 8, 8}, 95);
        auto out = net.fusion(2)(eb_down, scm_out);
        CHECK(out.shape() == Shape{1, 16, 8, 8});
        if (mode == FusionMode::sum) {
            auto zeros = Tensor<double>::zeros({1, 16, 8, 8});
            auto same = net.fusion(2)(eb_down, zeros);
            for (index_t i = 0; i < same.numel(); ++i) CHECK(same.data()[i] == eb_down.data()[i]);
        }
        // end-to-end differentiability of the whole variant
        auto img = random_image<double>({1, 3, 16, 16}, 96);
        auto sharp = random_image<double>({1, 3, 16, 16}, 97);
        auto preds = net.forward(img);
        auto report = total_loss(preds, build_pyramid(sharp, 3), 0.1);
        backward(report.node);
        bool any = false;
        for (const auto& p : net.parameters())
            if (p.tensor.has_grad())
                for (double g : p.tensor.grad()) any = any || g != 0.0;
        CHECK(any);
    }
    CHECK_THROWS_AS(fusion_mode_from_name("bogus"), ConfigError);
}

TEST_CASE("aff fuses resized encoder features through 1x1 then 3x3 convs") {
    MimoUNet<float> net(tiny_config());
    net.init_random(98);
    auto e1 = random_image<float>({1, 8, 32, 32}, 99);
    auto e2 = random_image<float>({1, 16, 16, 16}, 100);
    auto e3 = random_image<float>({1, 32, 8, 8}, 101);
    auto got = net.aff(1)(e1, e2, e3, 32, 32);
    CHECK(got.shape() == Shape{1, 8, 32, 32});

    const auto& a = net.aff(1);
    auto cat = concat_channels(std::vector<Tensor<float>>{e1, bilinear_resize(e2, 32, 32), bilinear_resize(e3, 32, 32)});
    auto ref = conv2d(relu(conv2d(cat, a.reduce.w, a.reduce.b, 1, 0)), a.blend.w, a.blend.b, 1, 1);
    CHECK(oracle::max_abs_diff(got, ref) == 0.0);

    // zero inputs and zero parameters give zero output
    MimoUNet<float> zero_net(tiny_config());
    auto z = zero_net.aff(2)(Tensor<float>::zeros({1, 8, 32, 32}),
                             Tensor<float>::zeros({1, 16, 16, 16}),
                             Tensor<float>::zeros({1, 32, 8, 8}), 16, 16);
    CHECK(z.shape() == Shape{1, 16, 16, 16});
    for (index_t i = 0; i < z.numel(); ++i) CHECK(z.data()[i] == 0.0f);

    CHECK_THROWS_AS(net.aff(3), UsageError);
}

TEST_CASE("residual blocks are identity with zero weights and match the composed oracle") {
    MimoUNet<float> zero_net(tiny_config());
    auto x = random_image<float>({1, 8, 16, 16}, 102);
    auto out = MimoUNet<float>::run_blocks(zero_net.eb(1), x);
    for (index_t i = 0; i < x.numel(); ++i) CHECK(out.data()[i] == x.data()[i]);

    MimoUNet<float> net(tiny_config());
    net.init_random(103);
    const auto& block = net.db(1)[0];
    auto got = block(x);
    auto ref = add(conv2d(relu(conv2d(x, block.c1.w, block.c1.b, 1, 1)), block.c2.w, block.c2.b, 1, 1), x);
    CHECK(oracle::max_abs_diff(got, ref) == 0.0);
}

TEST_CASE("full decoder path matches a step-by-step composed oracle") {
    ModelConfig cfg = tiny_config();
    MimoUNet<double> net(cfg);
    net.init_random(104);
    auto input = random_image<double>({1, 3, 32, 32}, 105);
    auto outs = net.forward(input);

    // recompose from primitive ops only
    auto pyr = build_pyramid(input, 3);
    auto conv_of = [](const ConvLayer<double>& l, const Tensor<double>& t) {
        auto y = conv2d(t, l.w, l.b, l.stride, l.pad);
        return l.act ? relu(y) : y;
    };
    auto stack_of = [&](const std::vector<ResBlock<double>>& blocks, Tensor<double> t) {
        for (const auto& rb : blocks) t = add(conv_of(rb.c2, conv_of(rb.c1, t)), t);
        return t;
    };
    auto e1 = stack_of(net.eb(1), conv_of(net.extract(), pyr[0]));
    auto scm2 = net.scm(2)(pyr[1]);
    auto z = conv_of(net.down(2), e1);
    z = add(z, conv_of(net.fusion(2).fam.merge, mul(z, scm2)));
    auto e2 = stack_of(net.eb(2), z);
    auto scm3 = net.scm(3)(pyr[2]);
    z = conv_of(net.down(3), e2);
    z = add(z, conv_of(net.fusion(3).fam.merge, mul(z, scm3)));
    auto e3 = stack_of(net.eb(3), z);

    auto resize_to = [](const Tensor<double>& t, index_t h, index_t w) {
        return (t.shape().h == h && t.shape().w == w) ? t : bilinear_resize(t, h, w);
    };
    auto aff_of = [&](const Aff<double>& a, index_t h, index_t w) {
        auto cat = concat_channels(std::vector<Tensor<double>>{resize_to(e1, h, w), resize_to(e2, h, w), resize_to(e3, h, w)});
        return conv_of(a.blend, conv_of(a.reduce, cat));
    };
    auto a1 = aff_of(net.aff(1), 32, 32);
    auto a2 = aff_of(net.aff(2), 16, 16);

    auto d3 = stack_of(net.db(3), e3);
    auto s3 = add(conv_of(net.head(3), d3), pyr[2]);
    auto up2 = relu(transposed_conv2d(d3, net.up(2).w, net.up(2).b));
    auto d2 = stack_of(net.db(2), conv_of(net.merge(2), concat_channels(up2, a2)));
    auto s2 = add(conv_of(net.head(2), d2), pyr[1]);
    auto up1 = relu(transposed_conv2d(d2, net.up(1).w, net.up(1).b));
    auto d1 = stack_of(net.db(1), conv_of(net.merge(1), concat_channels(up1, a1)));
    auto s1 = add(conv_of(net.head(1), d1), pyr[0]);

    CHECK(oracle::max_abs_diff(outs[0], s1) == 0.0);
    CHECK(oracle::max_abs_diff(outs[1], s2) == 0.0);
    CHECK(oracle::max_abs_diff(outs[2], s3) == 0.0);
}

TEST_CASE("toggles change the produced outputs and the parameter inventory") {
    ModelConfig cfg = tiny_config();
    cfg.enable_mosd = false;
    MimoUNet<float> net(cfg);
    auto outs = net.forward(random_image<float>({1, 3, 32, 32}, 106));
    CHECK(outs.size() == 1);
    CHECK_THROWS_AS(net.head(2), UsageError);

    ModelConfig no_mise = tiny_config();
    no_mise.enable_mise = false;
    MimoUNet<float> nm(no_mise);
    std::set<std::string> names;
    for (const auto& p : nm.parameters()) names.insert(p.name);
    for (const auto& n : names) {
        CHECK(n.find("scm") == std::string::npos);
        CHECK(n.find("fuse") == std::string::npos);
    }
    CHECK_THROWS_AS(nm.scm(2), UsageError);
    // still the identity at zero init
    auto img = random_image<float>({1, 3, 32, 32}, 107);
    auto o = nm.forward(img);
    for (index_t i = 0; i < img.numel(); ++i) CHECK(o[0].data()[i] == img.data()[i]);
}

TEST_CASE("every parameter receives gradient from the total loss") {
    ModelConfig cfg = tiny_config();
    MimoUNet<double> net(cfg);
    net.init_random(108);
    auto img = random_image<double>({1, 3, 16, 16}, 109);
    auto sharp = random_image<double>({1, 3, 16, 16}, 110);
    auto preds = net.forward(img);
    auto report = total_loss(preds, build_pyramid(sharp, 3), 0.1);
    backward(report.node);
    for (const auto& p : net.parameters()) {
        REQUIRE(p.tensor.has_grad());
        bool nonzero = false;
        for (double g : p.tensor.grad()) nonzero = nonzero || g != 0.0;
        CHECK_MESSAGE(nonzero, p.name);
    }
}

TEST_CASE("checkpoint round-trip is byte-identical and validates configs") {
    ModelConfig cfg = tiny_config();
    MimoUNet<float> net(cfg);
    net.init_random(111);
    const std::string dir = "ckpt_test_tmp";
    std::filesystem::create_directories(dir);
    const std::string p1 = dir + "/a.ckpt";
    const std::string p2 = dir + "/b.ckpt";
    save_checkpoint(p1, net);
    auto loaded = load_checkpoint<float>(p1);
    save_checkpoint(p2, *loaded.model);

    auto slurp = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(p1) == slurp(p2));

    // loading under a different config is rejected
    ModelConfig other = cfg;
    other.num_resblocks = 3;
    CHECK_THROWS_AS(load_checkpoint<float>(p1, &other), IoError);

    // a tampered shape names the offending tensor
    std::string bytes = slurp(p1);
    // first parameter record: 8 magic + 4 version + 16 config + 4 count,
    // then 4 name_len + name; the dims follow
    const std::size_t name_len = 9;  // "extract.w"
    const std::size_t dim_off = 8 + 4 + 16 + 4 + 4 + name_len;
    bytes[dim_off] = 77;
    std::ofstream(dir + "/tampered.ckpt", std::ios::binary) << bytes;
    try {
        load_checkpoint<float>(dir + "/tampered.ckpt");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("extract.w") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}
