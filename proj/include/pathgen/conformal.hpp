#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

// Split-conformal prediction sets and uncertainty scores for grade and risk.
namespace pathgen::conformal {

inline constexpr double kRiskMin = -5.0;
inline constexpr double kRiskMax = -1.0;
inline constexpr std::size_t kRiskBins = 4;

// Index k = ceil((n + 1)(1 - alpha)) into the sorted scores, 1-based. When
// k > n the largest score is used and coverage is no longer guaranteed.
std::size_t quantile_rank(std::size_t n, double alpha);
bool coverage_guaranteed(std::size_t n, double alpha);
double conformal_quantile(std::span<const double> scores, double alpha);

struct PredictionSet {
    std::vector<int> members;  // sorted, unique
    double lower = 0.0;        // risk sets only
    double upper = 0.0;

    bool contains(int m) const;
};

struct GradeCalibration {
    double q_hat = 0.0;
    double alpha = 0.1;
    std::size_t n_cal = 0;
    std::size_t n_classes = 0;
    bool guaranteed = true;
};

// score_i = 1 - p_i[y_i]
GradeCalibration calibrate_gradation(std::span<const std::vector<double>> probs, std::span<const int> labels,
                                     double alpha);
// { j : p_j >= 1 - q_hat }, possibly empty.
PredictionSet grade_set(std::span<const double> probs, const GradeCalibration& cal);
// (|C| / N) * (max index gap in C / (N - 1)); 0 for an empty set.
double grade_uncertainty(const PredictionSet& set, std::size_t n_classes);

struct BinBounds {
    double lower = 0.0;
    double upper = 0.0;
};

// Equal-width split of [-5, -1]: bin 1 is [-2, -1] (shortest survival,
// highest risk) down to bin 4 at [-5, -4].
std::array<BinBounds, kRiskBins> default_bin_bounds();

struct RiskCalibration {
    double q_hat = 0.0;
    double alpha = 0.1;
    std::size_t n_cal = 0;
    std::array<BinBounds, kRiskBins> bins = default_bin_bounds();
    bool guaranteed = true;
};

// score_i = |upper bound of bin y_i - risk_i|; bins are 1-based.
RiskCalibration calibrate_risk(std::span<const double> risks, std::span<const int> true_bins, double alpha,
                               const std::array<BinBounds, kRiskBins>& bins = default_bin_bounds());

enum class BinRule {
    Overlap,  // bins whose closed range intersects [lb, ub]
    Literal,  // lb <= t_lb or t_ub <= ub
};

// Interval risk +- q_hat clipped to [-5, -1], and the time bins it selects.
PredictionSet risk_interval(double risk, const RiskCalibration& cal, BinRule rule = BinRule::Overlap);
// (|C| / 4) * (|ub - lb| / 4)
double risk_uncertainty(const PredictionSet& set);

// Fraction of sets that contain the matching truth.
double coverage_audit(std::span<const PredictionSet> sets, std::span<const int> truth);

}  // namespace pathgen::conformal
