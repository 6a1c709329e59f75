#include "pathgen/ad/adam.hpp"

#include <cmath>

namespace pathgen::ad {

template <typename T>
OptimizerState<T> make_optimizer_state(const ParamStore<T>& params, AdamConfig config) {
    OptimizerState<T> state;
    state.config = config;
    for (const auto& [name, t] : params.tensors()) {
        state.first_moment.add(name, Tensor<T>(t.shape()));
        state.second_moment.add(name, Tensor<T>(t.shape()));
    }
    return state;
}

template <typename T>
void adam_step(ParamStore<T>& params, const Gradients<T>& grads, OptimizerState<T>& state) {
    for (const auto& [name, g] : grads) {
        if (params.at(name).shape() != g.shape())
            throw ShapeError("adam_step: gradient shape mismatch for '" + name + "'");
        if (!state.first_moment.contains(name)) {
            state.first_moment.add(name, Tensor<T>(g.shape()));
            state.second_moment.add(name, Tensor<T>(g.shape()));
        }
    }
    ++state.step;
    const auto& c = state.config;
    const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    const double step_size = c.learning_rate / correction1;
    const double inv_sqrt_c2 = 1.0 / std::sqrt(correction2);
    const T b1 = static_cast<T>(c.beta1);
    const T b2 = static_cast<T>(c.beta2);
    for (const auto& [name, g] : grads) {
        auto& p = params.at(name);
        auto& m = state.first_moment.at(name);
        auto& v = state.second_moment.at(name);
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const double denom = std::sqrt(static_cast<double>(v[i])) * inv_sqrt_c2 + c.epsilon;
            p[i] -= static_cast<T>(step_size * m[i] / denom);
        }
        if (!p.all_finite()) throw NumericError("adam_step produced non-finite values in '" + name + "'");
    }
}

template <typename T>
void accumulate_gradients(Gradients<T>& into, const Gradients<T>& grads, double factor) {
    const T f = static_cast<T>(factor);
    for (const auto& [name, g] : grads) {
        auto it = into.find(name);
        if (it == into.end()) it = into.emplace(name, Tensor<T>(g.shape())).first;
        auto& d = it->second;
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += f * g[i];
    }
}

template OptimizerState<float> make_optimizer_state(const ParamStore<float>&, AdamConfig);
template OptimizerState<double> make_optimizer_state(const ParamStore<double>&, AdamConfig);
template void adam_step(ParamStore<float>&, const Gradients<float>&, OptimizerState<float>&);
template void adam_step(ParamStore<double>&, const Gradients<double>&, OptimizerState<double>&);
template void accumulate_gradients(Gradients<float>&, const Gradients<float>&, double);
template void accumulate_gradients(Gradients<double>&, const Gradients<double>&, double);

}  // namespace pathgen::ad
