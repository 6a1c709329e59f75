#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pathgen/conformal.hpp"

namespace pathgen::metrics {

// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> midranks(std::span<const double> x);

// ROC AUC of scores for a binary outcome, via the Mann-Whitney statistic.
double auc_binary(std::span<const double> scores, const std::vector<bool>& positive);
// Macro one-vs-rest AUC over the classes that appear in `labels`. Requires at
// least two distinct labels.
double auc_ovr(std::span<const std::vector<double>> probs, std::span<const int> labels);

// Harrell's concordance: pairs (i, j) with time_i < time_j and event_i are
// comparable; concordant when risk_i > risk_j, ties in risk count 1/2.
// Empty when no pair is comparable.
std::optional<double> c_index(std::span<const double> risks, std::span<const double> times,
                              const std::vector<bool>& events);

// Per-case pieces of the two metrics, for case-level significance tests.
// Grade: for case i with label c, the fraction of cases with another label
// whose class-c probability is below p_i[c] (ties 1/2); the class-c mean of
// these is that class's one-vs-rest AUC.
std::vector<double> per_case_auc(std::span<const std::vector<double>> probs, std::span<const int> labels);
// Survival: for each case, the concordant fraction of the comparable pairs it
// belongs to; empty when it belongs to none. Weighted by pair counts these
// average to c_index.
std::vector<std::optional<double>> per_case_concordance(std::span<const double> risks, std::span<const double> times,
                                                        const std::vector<bool>& events);

struct Correlation {
    double rho = 0.0;
    double p_value = 1.0;
};

// Pearson correlation of midranks; two-sided p from t = rho sqrt((n-2)/(1-rho^2)).
Correlation spearman(std::span<const double> x, std::span<const double> y);
double pearson(std::span<const double> x, std::span<const double> y);
double mae(std::span<const double> x, std::span<const double> y);

struct RankSumResult {
    double statistic = 0.0;  // rank sum of `a`
    double z = 0.0;          // normal approximation, 0 when exact
    double p_value = 1.0;
    bool exact = false;
};

// Two-sided Wilcoxon rank-sum test. Exact enumeration over the observed
// midranks when n_a + n_b <= 12, otherwise the tie-corrected normal
// approximation with continuity correction.
RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b);
double rank_sum_exact_p(std::span<const double> a, std::span<const double> b);
double rank_sum_normal_p(std::span<const double> a, std::span<const double> b);

// Welch two-sided t-test p-value.
double unpaired_t_test(std::span<const double> a, std::span<const double> b);

enum class Dimension { Gender, AgeBand, Censorship, Grade, TimeBin, Magnification };

std::string_view dimension_name(Dimension d);
std::string age_band(double age);  // "<40", "40-60", ">60"

struct GroupKey {
    Dimension dimension;
    std::string value;
    bool operator==(const GroupKey&) const = default;
};

struct CaseResult {
    std::vector<double> grade_probs;
    int grade = 0;
    double risk = 0.0;
    double time = 0.0;
    bool censored = false;
    int time_bin = 1;
    conformal::PredictionSet grade_set;
    conformal::PredictionSet risk_set;
    double grade_uncertainty = 0.0;
    double risk_uncertainty = 0.0;
    std::string gender;  // "female" | "male"
    double age = 0.0;
    int magnification = 1;
};

// The group a case falls in along one dimension; DataError for values outside
// the dimension's enumeration.
GroupKey group_of(const CaseResult& c, Dimension d, std::size_t n_grades, int magnification_levels);

struct GroupMetrics {
    std::string dimension;  // "overall" for the overall row
    std::string value;
    std::size_t count = 0;
    std::optional<double> auc;
    std::optional<double> c_index;
    double mean_grade_uncertainty = 0.0;
    double mean_risk_uncertainty = 0.0;
    double grade_coverage = 0.0;
    double risk_coverage = 0.0;
};

struct EvalReport {
    GroupMetrics overall;
    std::vector<GroupMetrics> groups;
};

GroupMetrics group_metrics(std::span<const CaseResult* const> cases, std::string dimension, std::string value);

EvalReport stratified_report(std::span<const CaseResult> cases, std::span<const Dimension> dimensions,
                             std::size_t n_grades, int magnification_levels);

}  // namespace pathgen::metrics
