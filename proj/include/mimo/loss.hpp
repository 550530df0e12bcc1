#pragma once

#include <vector>

#include "mimo/fft.hpp"
#include "mimo/tensor.hpp"

namespace mimo {

namespace loss_detail {

template <typename T>
void check_pyramids(const std::vector<Tensor<T>>& preds, const std::vector<Tensor<T>>& targets,
                    const char* op) {
    if (preds.empty()) throw UsageError(std::string(op) + ": empty prediction pyramid");
    if (preds.size() != targets.size())
        throw UsageError(std::string(op) + ": pyramid length mismatch (" +
                         std::to_string(preds.size()) + " vs " + std::to_string(targets.size()) +
                         ")");
}

}  // namespace loss_detail

// Multi-scale content loss: sum over levels of mean absolute error, each
// level normalized by its own element count.
template <typename T>
Tensor<T> content_loss(const std::vector<Tensor<T>>& preds, const std::vector<Tensor<T>>& targets) {
    loss_detail::check_pyramids(preds, targets, "content_loss");
    Tensor<T> total;
    for (std::size_t k = 0; k < preds.size(); ++k) {
        Tensor<T> term = l1_mean(preds[k], targets[k]);
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

// Precomputed packed target spectra, reusable across loss evaluations on
// the same targets (the finite-difference sweep re-evaluates the loss per
// parameter entry).
template <typename T>
std::vector<Tensor<T>> msfr_target_spectra(const std::vector<Tensor<T>>& targets) {
    NoGradGuard ng;
    std::vector<Tensor<T>> spectra;
    spectra.reserve(targets.size());
    for (const auto& t : targets) spectra.push_back(fft2_packed(t));
    return spectra;
}

// Multi-scale frequency reconstruction loss: L1 distance between the 2-D
// spectra of prediction and target, real and imaginary parts summed
// separately, normalized by the level's spatial element count. The DFT is
// unnormalized; no 1/(H*W) factor is applied to the spectra.
template <typename T>
Tensor<T> msfr_loss_with_spectra(const std::vector<Tensor<T>>& preds,
                                 const std::vector<Tensor<T>>& target_spectra) {
    loss_detail::check_pyramids(preds, target_spectra, "msfr_loss");
    Tensor<T> total;
    for (std::size_t k = 0; k < preds.size(); ++k) {
        // packed spectra stack Re and Im along channels, so a single L1 sum
        // covers both parts
        Tensor<T> term = scale(l1_sum(fft2_packed(preds[k]), target_spectra[k]),
                               T(1) / static_cast<T>(preds[k].numel()));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

template <typename T>
Tensor<T> msfr_loss(const std::vector<Tensor<T>>& preds, const std::vector<Tensor<T>>& targets) {
    loss_detail::check_pyramids(preds, targets, "msfr_loss");
    for (std::size_t k = 0; k < preds.size(); ++k)
        detail::check_same_shape(preds[k], targets[k], "msfr_loss");
    return msfr_loss_with_spectra(preds, msfr_target_spectra(targets));
}

// Weighted combination of both losses plus its scalar summary.
template <typename T>
struct LossReport {
    double l_cont = 0.0;
    double l_msfr = 0.0;
    double l_total = 0.0;
    double lambda = 0.0;
    Tensor<T> node;  // scalar graph node; drive backward() with this
};

template <typename T>
LossReport<T> total_loss(const std::vector<Tensor<T>>& preds,
                         const std::vector<Tensor<T>>& targets, double lambda = 0.1) {
    if (lambda < 0.0) throw ConfigError("total_loss: lambda must be non-negative");
    LossReport<T> report;
    report.lambda = lambda;
    Tensor<T> cont = content_loss(preds, targets);
    report.l_cont = static_cast<double>(cont.item());
    if (lambda > 0.0) {
        Tensor<T> freq = msfr_loss(preds, targets);
        report.l_msfr = static_cast<double>(freq.item());
        report.node = add(cont, scale(freq, static_cast<T>(lambda)));
    } else {
        report.node = cont;
    }
    report.l_total = report.l_cont + lambda * report.l_msfr;
    return report;
}

}  // namespace mimo
