#include "pathgen/ad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace pathgen::ad {

GradCheckReport finite_difference_check(Graph<double>& graph, Var<double> output, ParamStore<double>& params,
                                        double h, double tolerance, std::size_t max_entries_per_param,
                                        std::uint64_t seed, double floor) {
    GradCheckReport report;
    if (!(h > 0.0)) {
        report.pass = false;
        return report;
    }
    graph.evaluate();
    const Gradients<double> analytic = graph.gradient(output);
    std::mt19937_64 rng(seed);

    for (auto id : graph.param_ids()) {
        const std::string& name = graph.node(id).name;
        Tensor<double>& p = params.at(name);
        const auto it = analytic.find(name);

        std::vector<std::size_t> entries(p.size());
        std::iota(entries.begin(), entries.end(), std::size_t{0});
        if (max_entries_per_param > 0 && entries.size() > max_entries_per_param) {
            std::shuffle(entries.begin(), entries.end(), rng);
            entries.resize(max_entries_per_param);
            std::sort(entries.begin(), entries.end());
        }
        for (auto i : entries) {
            const double saved = p[i];
            p[i] = saved + h;
            graph.evaluate();
            const double up = graph.value(output)[0];
            p[i] = saved - h;
            graph.evaluate();
            const double down = graph.value(output)[0];
            p[i] = saved;

            const double numeric = (up - down) / (2.0 * h);
            const double exact = it == analytic.end() ? 0.0 : it->second[i];
            const double abs_err = std::abs(exact - numeric);
            const double rel_err = abs_err / std::max({std::abs(exact), std::abs(numeric), floor});
            ++report.entries_checked;
            report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
            if (rel_err > report.max_relative_error) {
                report.max_relative_error = rel_err;
                report.worst_parameter = name;
                report.worst_index = i;
            }
        }
    }
    graph.evaluate();
    report.pass = report.max_relative_error < tolerance;
    return report;
}

}  // namespace pathgen::ad
