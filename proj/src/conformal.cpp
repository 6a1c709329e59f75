#include "pathgen/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pathgen/error.hpp"

namespace pathgen::conformal {

namespace {

constexpr double kRiskSlack = 1e-9;

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("conformal: alpha must lie in (0, 1)");
}

void check_risk(double r) {
    if (!(r >= kRiskMin - kRiskSlack && r <= kRiskMax + kRiskSlack))
        throw DataError("conformal: risk " + std::to_string(r) + " outside [-5, -1]");
}

}  // namespace

bool PredictionSet::contains(int m) const { return std::binary_search(members.begin(), members.end(), m); }

std::size_t quantile_rank(std::size_t n, double alpha) {
    check_alpha(alpha);
    if (n == 0) throw DataError("conformal: no calibration scores");
    // The small offset keeps products like 20 * 0.9 from rounding up past an integer.
    return static_cast<std::size_t>(std::ceil((static_cast<double>(n) + 1.0) * (1.0 - alpha) - 1e-9));
}

bool coverage_guaranteed(std::size_t n, double alpha) { return quantile_rank(n, alpha) <= n; }

double conformal_quantile(std::span<const double> scores, double alpha) {
    const std::size_t k = std::min(quantile_rank(scores.size(), alpha), scores.size());
    std::vector<double> sorted(scores.begin(), scores.end());
    for (double s : sorted)
        if (!std::isfinite(s)) throw NumericError("conformal: non-finite score");
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
    return sorted[k - 1];
}

GradeCalibration calibrate_gradation(std::span<const std::vector<double>> probs, std::span<const int> labels,
                                     double alpha) {
    if (probs.size() != labels.size()) throw DataError("calibrate_gradation: probs and labels differ in length");
    if (probs.empty()) throw DataError("calibrate_gradation: empty calibration set");
    const std::size_t n_classes = probs.front().size();
    std::vector<double> scores(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i].size() != n_classes) throw DataError("calibrate_gradation: inconsistent class count");
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes)
            throw DataError("calibrate_gradation: label " + std::to_string(labels[i]) + " out of range");
        scores[i] = 1.0 - probs[i][static_cast<std::size_t>(labels[i])];
    }
    GradeCalibration cal;
    cal.q_hat = conformal_quantile(scores, alpha);
    cal.alpha = alpha;
    cal.n_cal = probs.size();
    cal.n_classes = n_classes;
    cal.guaranteed = coverage_guaranteed(probs.size(), alpha);
    return cal;
}

PredictionSet grade_set(std::span<const double> probs, const GradeCalibration& cal) {
    PredictionSet set;
    const double threshold = 1.0 - cal.q_hat;
    for (std::size_t j = 0; j < probs.size(); ++j)
        if (probs[j] >= threshold) set.members.push_back(static_cast<int>(j));
    return set;
}

double grade_uncertainty(const PredictionSet& set, std::size_t n_classes) {
    if (n_classes < 2) throw ConfigError("grade_uncertainty: need at least two classes");
    if (set.members.empty()) return 0.0;
    for (int m : set.members)
        if (m < 0 || static_cast<std::size_t>(m) >= n_classes)
            throw DataError("grade_uncertainty: member outside the class range");
    const auto [lo, hi] = std::minmax_element(set.members.begin(), set.members.end());
    const double gap = static_cast<double>(*hi - *lo);
    return static_cast<double>(set.members.size()) / static_cast<double>(n_classes) * gap /
           static_cast<double>(n_classes - 1);
}

std::array<BinBounds, kRiskBins> default_bin_bounds() {
    std::array<BinBounds, kRiskBins> bins{};
    const double width = (kRiskMax - kRiskMin) / static_cast<double>(kRiskBins);
    for (std::size_t k = 0; k < kRiskBins; ++k) bins[k] = {kRiskMax - width * (k + 1), kRiskMax - width * k};
    return bins;
}

RiskCalibration calibrate_risk(std::span<const double> risks, std::span<const int> true_bins, double alpha,
                               const std::array<BinBounds, kRiskBins>& bins) {
    if (risks.size() != true_bins.size()) throw DataError("calibrate_risk: risks and bins differ in length");
    if (risks.empty()) throw DataError("calibrate_risk: empty calibration set");
    std::vector<double> scores(risks.size());
    for (std::size_t i = 0; i < risks.size(); ++i) {
        check_risk(risks[i]);
        const int b = true_bins[i];
        if (b < 1 || b > static_cast<int>(kRiskBins)) throw DataError("calibrate_risk: invalid time bin");
        scores[i] = std::abs(bins[static_cast<std::size_t>(b - 1)].upper - risks[i]);
    }
    RiskCalibration cal;
    cal.q_hat = conformal_quantile(scores, alpha);
    cal.alpha = alpha;
    cal.n_cal = risks.size();
    cal.bins = bins;
    cal.guaranteed = coverage_guaranteed(risks.size(), alpha);
    return cal;
}

PredictionSet risk_interval(double risk, const RiskCalibration& cal, BinRule rule) {
    check_risk(risk);
    PredictionSet set;
    set.lower = std::clamp(risk - cal.q_hat, kRiskMin, kRiskMax);
    set.upper = std::clamp(risk + cal.q_hat, kRiskMin, kRiskMax);
    for (std::size_t k = 0; k < kRiskBins; ++k) {
        const BinBounds& b = cal.bins[k];
        const bool in = rule == BinRule::Overlap ? b.lower <= set.upper && b.upper >= set.lower
                                                 : set.lower <= b.lower || b.upper <= set.upper;
        if (in) set.members.push_back(static_cast<int>(k + 1));
    }
    return set;
}

double risk_uncertainty(const PredictionSet& set) {
    if (set.lower > set.upper) throw DataError("risk_uncertainty: lower bound above upper bound");
    return static_cast<double>(set.members.size()) / static_cast<double>(kRiskBins) *
           std::abs(set.upper - set.lower) / (kRiskMax - kRiskMin);
}

double coverage_audit(std::span<const PredictionSet> sets, std::span<const int> truth) {
    if (sets.size() != truth.size()) throw DataError("coverage_audit: sets and truth differ in length");
    if (sets.empty()) throw DataError("coverage_audit: nothing to audit");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < sets.size(); ++i) hits += sets[i].contains(truth[i]);
    return static_cast<double>(hits) / static_cast<double>(sets.size());
}

}  // namespace pathgen::conformal
