#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "mimo/loss.hpp"
#include "mimo/model.hpp"
#include "mimo/pyramid.hpp"

namespace mimo {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    index_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::uint64_t checked = 0;
};

namespace gradcheck_detail {

// Loss evaluation with stage-level caching. A central difference perturbs a
// single parameter, so everything upstream of that parameter's module is
// unchanged; recomputing only the suffix cuts the sweep cost by roughly the
// network depth. The stage composition mirrors MimoUNet::forward exactly.
//
// stages: 1 extract+eb1, 2 down2+fusion+eb2, 3 down3+fusion+eb3, 4 aff,
// 5 db3+head3, 6 up2+merge2+db2+head2, 7 up1+merge1+db1+head1.
template <typename D>
class StagedLoss {
public:
    StagedLoss(const MimoUNet<D>& model, Tensor<D> input, std::vector<Tensor<D>> targets,
               double lambda)
        : model_(model),
          cfg_(model.config()),
          lambda_(lambda),
          pyr_(build_pyramid(input, 3)),
          targets_(std::move(targets)),
          target_spectra_(msfr_target_spectra(targets_)) {
        levels_ = cfg_.enable_mosd ? 3 : 1;
        eval(1);
    }

    static int stage_of(const std::string& param_name) {
        auto starts = [&](const char* p) { return param_name.rfind(p, 0) == 0; };
        if (starts("extract") || starts("eb1")) return 1;
        if (starts("down2") || starts("scm2") || starts("fuse2") || starts("eb2")) return 2;
        if (starts("down3") || starts("scm3") || starts("fuse3") || starts("eb3")) return 3;
        if (starts("aff")) return 4;
        if (starts("db3") || starts("head3")) return 5;
        if (starts("up2") || starts("merge2") || starts("db2") || starts("head2")) return 6;
        if (starts("up1") || starts("merge1") || starts("db1") || starts("head1")) return 7;
        throw UsageError("gradcheck: unmapped parameter '" + param_name + "'");
    }

    double eval(int from_stage) {
        if (from_stage <= 1) e1_ = MimoUNet<D>::run_blocks(model_.eb(1), model_.extract()(pyr_[0]));
        if (from_stage <= 2) {
            Tensor<D> z = model_.down(2)(e1_);
            if (cfg_.enable_mise) z = model_.fusion(2)(z, model_.scm(2)(pyr_[1]));
            e2_ = MimoUNet<D>::run_blocks(model_.eb(2), z);
        }
        if (from_stage <= 3) {
            Tensor<D> z = model_.down(3)(e2_);
            if (cfg_.enable_mise) z = model_.fusion(3)(z, model_.scm(3)(pyr_[2]));
            e3_ = MimoUNet<D>::run_blocks(model_.eb(3), z);
        }
        if (from_stage <= 4) {
            a1_ = cfg_.enable_aff ? model_.aff(1)(e1_, e2_, e3_, e1_.shape().h, e1_.shape().w)
                                  : e1_;
            a2_ = cfg_.enable_aff ? model_.aff(2)(e1_, e2_, e3_, e2_.shape().h, e2_.shape().w)
                                  : e2_;
        }
        if (from_stage <= 5) {
            d3_ = MimoUNet<D>::run_blocks(model_.db(3), e3_);
            if (cfg_.enable_mosd) {
                s3_ = add(model_.head(3)(d3_), pyr_[2]);
                refresh_term(2);
            }
        }
        if (from_stage <= 6) {
            Tensor<D> z = model_.merge(2)(concat_channels(model_.up(2)(d3_), a2_));
            d2_ = MimoUNet<D>::run_blocks(model_.db(2), z);
            if (cfg_.enable_mosd) {
                s2_ = add(model_.head(2)(d2_), pyr_[1]);
                refresh_term(1);
            }
        }
        {
            Tensor<D> z = model_.merge(1)(concat_channels(model_.up(1)(d2_), a1_));
            Tensor<D> d1 = MimoUNet<D>::run_blocks(model_.db(1), z);
            s1_ = add(model_.head(1)(d1), pyr_[0]);
            refresh_term(0);
        }
        double total = 0.0;
        for (int k = 0; k < levels_; ++k) total += term_[k];
        return total;
    }

private:
    void refresh_term(int k) {
        const Tensor<D>& pred = k == 0 ? s1_ : (k == 1 ? s2_ : s3_);
        const D inv = D(1) / static_cast<D>(pred.numel());
        double t = static_cast<double>(scale(l1_sum(pred, targets_[static_cast<std::size_t>(k)]),
                                             inv)
                                           .item());
        if (lambda_ > 0.0)
            t += lambda_ * static_cast<double>(
                               scale(l1_sum(fft2_packed(pred),
                                            target_spectra_[static_cast<std::size_t>(k)]),
                                     inv)
                                   .item());
        term_[k] = t;
    }

    const MimoUNet<D>& model_;
    ModelConfig cfg_;
    double lambda_;
    std::vector<Tensor<D>> pyr_;
    std::vector<Tensor<D>> targets_;
    std::vector<Tensor<D>> target_spectra_;
    int levels_ = 3;
    Tensor<D> e1_, e2_, e3_, a1_, a2_, d3_, d2_, s1_, s2_, s3_;
    double term_[3] = {0.0, 0.0, 0.0};
};

}  // namespace gradcheck_detail

// Central finite differences of the total loss against every reverse-mode
// parameter gradient, in 64-bit precision (finite differences are not
// trustworthy in 32-bit). Relative error is measured against the larger of
// the two gradients, floored by the model's RMS gradient magnitude so that
// near-zero entries do not divide by noise.
inline GradCheckReport gradcheck_model(const ModelConfig& cfg, index_t height, index_t width,
                                       std::uint64_t seed = 7, double lambda = 0.1,
                                       double step = 1e-6) {
    using D = double;
    MimoUNet<D> model(cfg);
    model.init_random(seed);
    // Biases are zero-initialized in training; here they get small random
    // offsets so no pre-activation sits exactly on the ReLU kink, where the
    // sign(0) = 0 subgradient and a finite difference legitimately disagree.
    Rng bias_rng = Rng::substream(seed, 0xb1a5);
    for (auto& p : model.parameters())
        if (p.name.size() >= 2 && p.name.compare(p.name.size() - 2, 2, ".b") == 0)
            for (auto& v : p.tensor.values()) v = 0.1 * (bias_rng.next_double() - 0.5);

    Rng data_rng = Rng::substream(seed, 0xda7a);
    Tensor<D> input = Tensor<D>::rand_uniform({1, 3, height, width}, data_rng);
    Tensor<D> sharp = Tensor<D>::rand_uniform({1, 3, height, width}, data_rng);
    std::vector<Tensor<D>> target_full = build_pyramid(sharp, 3);
    std::vector<Tensor<D>> targets(target_full.begin(),
                                   target_full.begin() + (cfg.enable_mosd ? 3 : 1));

    // analytic gradients via the ordinary graph
    auto preds = model.forward(input);
    auto report = total_loss(preds, targets, lambda);
    backward(report.node);

    const auto& params = model.parameters();
    std::vector<std::vector<D>> analytic;
    analytic.reserve(params.size());
    double sq_sum = 0.0;
    std::uint64_t total = 0;
    for (const auto& p : params) {
        analytic.push_back(p.tensor.grad());
        for (double g : analytic.back()) sq_sum += g * g;
        total += static_cast<std::uint64_t>(p.tensor.numel());
    }
    const double grad_rms = std::sqrt(sq_sum / static_cast<double>(total));
    const double denom_floor = std::max(grad_rms, 1e-12);

    // flattened (param, element) probes, chunked across worker threads; each
    // worker owns a model copy and a staged evaluator
    std::vector<std::pair<std::size_t, index_t>> entries;
    entries.reserve(static_cast<std::size_t>(total));
    for (std::size_t pi = 0; pi < params.size(); ++pi)
        for (index_t i = 0; i < params[pi].tensor.numel(); ++i) entries.emplace_back(pi, i);

    const int workers = std::max(1, thread_count());
    std::vector<GradCheckReport> partial(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            NoGradGuard ng;
            SerialRegion serial;  // one core per worker; no nested OpenMP
            MimoUNet<D> local(cfg);
            local.copy_params_from(model);
            auto& lparams = local.parameters();
            gradcheck_detail::StagedLoss<D> staged(local, input, targets, lambda);
            GradCheckReport& rep = partial[static_cast<std::size_t>(w)];
            const std::size_t lo = entries.size() * static_cast<std::size_t>(w) /
                                   static_cast<std::size_t>(workers);
            const std::size_t hi = entries.size() * static_cast<std::size_t>(w + 1) /
                                   static_cast<std::size_t>(workers);
            // caches at stages >= dirty disagree with the current weights and
            // are refreshed lazily by the next evaluation
            int dirty = 8;
            for (std::size_t e = lo; e < hi; ++e) {
                const auto [pi, i] = entries[e];
                const int stage = gradcheck_detail::StagedLoss<D>::stage_of(lparams[pi].name);
                D* slot = lparams[pi].tensor.data() + i;
                const D orig = *slot;
                const double h = step * std::max(1.0, std::abs(static_cast<double>(orig)));
                *slot = orig + static_cast<D>(h);
                const double plus = staged.eval(std::min(stage, dirty));
                *slot = orig - static_cast<D>(h);
                const double minus = staged.eval(stage);
                *slot = orig;
                dirty = stage;
                const double numeric = (plus - minus) / (2.0 * h);
                const double exact = analytic[pi][static_cast<std::size_t>(i)];
                const double rel = std::abs(numeric - exact) /
                                   std::max({std::abs(numeric), std::abs(exact), denom_floor});
                rep.checked += 1;
                if (rel > rep.max_rel_err) {
                    rep.max_rel_err = rel;
                    rep.worst_param = lparams[pi].name;
                    rep.worst_index = i;
                    rep.worst_analytic = exact;
                    rep.worst_numeric = numeric;
                }
            }
        });
    }
    for (auto& t : pool) t.join();

    GradCheckReport best;
    std::uint64_t checked = 0;
    for (const auto& rep : partial) {
        checked += rep.checked;
        if (rep.max_rel_err > best.max_rel_err) best = rep;
    }
    best.checked = checked;
    return best;
}

}  // namespace mimo
