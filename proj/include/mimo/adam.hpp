#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mimo/model.hpp"
#include "mimo/tensor.hpp"

namespace mimo {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment buffers, one pair per parameter, in registry order.
template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t step = 0;

    static AdamState init(const std::vector<NamedParam<T>>& params) {
        AdamState st;
        st.m.reserve(params.size());
        st.v.reserve(params.size());
        for (const auto& p : params) {
            st.m.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
            st.v.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
        }
        return st;
    }
};

// One bias-corrected Adam update. Parameters without a populated gradient
// are treated as having zero gradient.
template <typename T>
void adam_step(std::vector<NamedParam<T>>& params, AdamState<T>& state, double lr,
               const AdamConfig& hp = {}) {
    if (lr <= 0.0) throw ConfigError("adam_step: learning rate must be positive");
    if (state.m.size() != params.size())
        throw UsageError("adam_step: state was initialized for a different parameter set");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<T>& t = params[pi].tensor;
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        T* w = t.data();
        const bool has_grad = t.has_grad();
        const T* g = has_grad ? t.grad().data() : nullptr;
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double gi = has_grad ? static_cast<double>(g[i]) : 0.0;
            const double mi = hp.beta1 * static_cast<double>(m[i]) + (1.0 - hp.beta1) * gi;
            const double vi = hp.beta2 * static_cast<double>(v[i]) + (1.0 - hp.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * mhat / (std::sqrt(vhat) + hp.eps));
        }
    }
}

}  // namespace mimo
