#pragma once

#include <cstdint>
#include <string>

#include "pathgen/ad/graph.hpp"

namespace pathgen::ad {

struct GradCheckReport {
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    std::size_t entries_checked = 0;
    bool pass = true;
};

// Compares the reverse-mode gradient of a scalar graph output against central
// differences (f(p+h) - f(p-h)) / 2h for every parameter leaf of the graph.
// Parameters are perturbed in place in `params` and the graph is replayed with
// evaluate(); all values are restored before returning.
//
// Relative error per entry is |analytic - numeric| / max(|analytic|, |numeric|, floor).
// max_entries_per_param = 0 checks every entry; otherwise a seeded random
// subset of that size is checked per tensor.
GradCheckReport finite_difference_check(Graph<double>& graph, Var<double> output, ParamStore<double>& params,
                                        double h, double tolerance, std::size_t max_entries_per_param = 0,
                                        std::uint64_t seed = 0, double floor = 1e-6);

}  // namespace pathgen::ad
