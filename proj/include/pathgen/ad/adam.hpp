#pragma once

#include <cstdint>

#include "pathgen/ad/graph.hpp"

namespace pathgen::ad {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    bool operator==(const AdamConfig&) const = default;
};

// Per-parameter first/second moments plus the step counter.
template <typename T>
struct OptimizerState {
    AdamConfig config;
    std::uint64_t step = 0;
    ParamStore<T> first_moment;
    ParamStore<T> second_moment;

    bool operator==(const OptimizerState&) const = default;
};

template <typename T>
OptimizerState<T> make_optimizer_state(const ParamStore<T>& params, AdamConfig config);

// One bias-corrected Adam update. Parameters without an entry in `grads`
// are left untouched (their moments do not decay).
template <typename T>
void adam_step(ParamStore<T>& params, const Gradients<T>& grads, OptimizerState<T>& state);

// into += factor * grads (entries missing from `into` are created).
template <typename T>
void accumulate_gradients(Gradients<T>& into, const Gradients<T>& grads, double factor = 1.0);

}  // namespace pathgen::ad
