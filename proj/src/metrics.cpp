#include "pathgen/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "pathgen/error.hpp"

namespace pathgen::metrics {

namespace {

void same_length(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw DataError(std::string(what) + ": inputs differ in length");
}

double mean(std::span<const double> x) { return std::accumulate(x.begin(), x.end(), 0.0) / x.size(); }

double sample_variance(std::span<const double> x) {
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

double two_sided_normal(double z) {
    static const boost::math::normal_distribution<double> standard;
    return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(standard, std::abs(z))));
}

double two_sided_t(double t, double df) {
    if (!std::isfinite(t)) return 0.0;
    const boost::math::students_t_distribution<double> dist(df);
    return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

}  // namespace

std::vector<double> midranks(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

double auc_binary(std::span<const double> scores, const std::vector<bool>& positive) {
    same_length(scores.size(), positive.size(), "auc");
    const auto ranks = midranks(scores);
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (positive[i]) {
            rank_sum += ranks[i];
            ++n_pos;
        }
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DataError("auc: both classes must be present");
    const double u = rank_sum - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auc_ovr(std::span<const std::vector<double>> probs, std::span<const int> labels) {
    same_length(probs.size(), labels.size(), "auc_ovr");
    if (probs.empty()) throw DataError("auc_ovr: no samples");
    const std::size_t n_classes = probs.front().size();
    std::vector<std::size_t> counts(n_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (probs[i].size() != n_classes) throw DataError("auc_ovr: inconsistent class count");
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes)
            throw DataError("auc_ovr: label out of range");
        ++counts[static_cast<std::size_t>(labels[i])];
    }
    double total = 0.0;
    std::size_t used = 0;
    std::vector<double> scores(probs.size());
    std::vector<bool> positive(probs.size());
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (counts[c] == 0 || counts[c] == labels.size()) continue;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            scores[i] = probs[i][c];
            positive[i] = labels[i] == static_cast<int>(c);
        }
        total += auc_binary(scores, positive);
        ++used;
    }
    if (used == 0) throw DataError("auc_ovr: need at least two classes present");
    return total / static_cast<double>(used);
}

std::optional<double> c_index(std::span<const double> risks, std::span<const double> times,
                              const std::vector<bool>& events) {
    same_length(risks.size(), times.size(), "c_index");
    same_length(risks.size(), events.size(), "c_index");
    double concordant = 0.0;
    std::size_t comparable = 0;
    for (std::size_t i = 0; i < risks.size(); ++i) {
        if (!events[i]) continue;
        for (std::size_t j = 0; j < risks.size(); ++j) {
            if (!(times[i] < times[j])) continue;
            ++comparable;
            if (risks[i] > risks[j])
                concordant += 1.0;
            else if (risks[i] == risks[j])
                concordant += 0.5;
        }
    }
    if (comparable == 0) return std::nullopt;
    return concordant / static_cast<double>(comparable);
}

std::vector<double> per_case_auc(std::span<const std::vector<double>> probs, std::span<const int> labels) {
    same_length(probs.size(), labels.size(), "per_case_auc");
    std::vector<double> out(probs.size(), 0.0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        if (labels[i] < 0 || c >= probs[i].size()) throw DataError("per_case_auc: label out of range");
        double good = 0.0;
        std::size_t pairs = 0;
        for (std::size_t j = 0; j < probs.size(); ++j) {
            if (labels[j] == labels[i]) continue;
            ++pairs;
            good += probs[i][c] > probs[j][c] ? 1.0 : probs[i][c] == probs[j][c] ? 0.5 : 0.0;
        }
        if (pairs == 0) throw DataError("per_case_auc: need at least two classes present");
        out[i] = good / static_cast<double>(pairs);
    }
    return out;
}

std::vector<std::optional<double>> per_case_concordance(std::span<const double> risks, std::span<const double> times,
                                                        const std::vector<bool>& events) {
    same_length(risks.size(), times.size(), "per_case_concordance");
    same_length(risks.size(), events.size(), "per_case_concordance");
    std::vector<double> good(risks.size(), 0.0);
    std::vector<std::size_t> pairs(risks.size(), 0);
    for (std::size_t i = 0; i < risks.size(); ++i) {
        if (!events[i]) continue;
        for (std::size_t j = 0; j < risks.size(); ++j) {
            if (!(times[i] < times[j])) continue;
            const double score = risks[i] > risks[j] ? 1.0 : risks[i] == risks[j] ? 0.5 : 0.0;
            good[i] += score;
            good[j] += score;
            ++pairs[i];
            ++pairs[j];
        }
    }
    std::vector<std::optional<double>> out(risks.size());
    for (std::size_t i = 0; i < risks.size(); ++i)
        if (pairs[i] > 0) out[i] = good[i] / static_cast<double>(pairs[i]);
    return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    same_length(x.size(), y.size(), "pearson");
    if (x.size() < 2) throw DataError("pearson: need at least two points");
    const double mx = mean(x), my = mean(y);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw DataError("correlation: zero variance input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Correlation spearman(std::span<const double> x, std::span<const double> y) {
    same_length(x.size(), y.size(), "spearman");
    if (x.size() < 3) throw DataError("spearman: need at least three points");
    const auto rx = midranks(x), ry = midranks(y);
    Correlation c;
    c.rho = pearson(rx, ry);
    const double df = static_cast<double>(x.size() - 2);
    const double denom = 1.0 - c.rho * c.rho;
    c.p_value = denom <= 0.0 ? 0.0 : two_sided_t(c.rho * std::sqrt(df / denom), df);
    return c;
}

double mae(std::span<const double> x, std::span<const double> y) {
    same_length(x.size(), y.size(), "mae");
    if (x.empty()) throw DataError("mae: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - y[i]);
    return s / static_cast<double>(x.size());
}

double rank_sum_exact_p(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw DataError("rank-sum: both samples must be non-empty");
    std::vector<double> all(a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
    const std::size_t n = all.size(), na = a.size();
    if (n > 20) throw DataError("rank-sum: exact enumeration limited to 20 observations");
    const auto ranks = midranks(all);
    const double mu = static_cast<double>(na) * static_cast<double>(n + 1) / 2.0;
    const double observed = std::abs(std::accumulate(ranks.begin(), ranks.begin() + na, 0.0) - mu);
    std::size_t extreme = 0, total = 0;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<std::size_t>(std::popcount(mask)) != na) continue;
        double w = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (1u << i)) w += ranks[i];
        ++total;
        if (std::abs(w - mu) >= observed - 1e-9) ++extreme;
    }
    return static_cast<double>(extreme) / static_cast<double>(total);
}

double rank_sum_normal_p(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw DataError("rank-sum: both samples must be non-empty");
    std::vector<double> all(a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size()), n = na + nb;
    const auto ranks = midranks(all);
    const double w = std::accumulate(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(a.size()), 0.0);
    const double mu = na * (n + 1) / 2.0;

    std::vector<double> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    double tie_term = 0.0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        i = j;
    }
    const double var = na * nb / 12.0 * ((n + 1) - (n > 1 ? tie_term / (n * (n - 1)) : 0.0));
    if (var <= 0.0) return 1.0;  // every observation tied
    const double d = std::max(std::abs(w - mu) - 0.5, 0.0);
    return two_sided_normal(d / std::sqrt(var));
}

RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw DataError("rank-sum: both samples must be non-empty");
    std::vector<double> all(a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
    const auto ranks = midranks(all);
    RankSumResult r;
    r.statistic = std::accumulate(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(a.size()), 0.0);
    if (all.size() <= 12) {
        r.exact = true;
        r.p_value = rank_sum_exact_p(a, b);
        return r;
    }
    r.p_value = rank_sum_normal_p(a, b);
    const double na = static_cast<double>(a.size()), n = static_cast<double>(all.size());
    const double mu = na * (n + 1) / 2.0;
    const double p_two = r.p_value;
    r.z = p_two >= 1.0 ? 0.0 : std::copysign(
        boost::math::quantile(boost::math::complement(boost::math::normal_distribution<double>(), p_two / 2.0)),
        r.statistic - mu);
    return r;
}

double unpaired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw DataError("t-test: need at least two observations per sample");
    const double va = sample_variance(a) / a.size(), vb = sample_variance(b) / b.size();
    const double se2 = va + vb;
    if (se2 <= 0.0) throw DataError("t-test: both samples have zero variance");
    const double t = (mean(a) - mean(b)) / std::sqrt(se2);
    const double df = se2 * se2 / (va * va / (a.size() - 1.0) + vb * vb / (b.size() - 1.0));
    return two_sided_t(t, df);
}

std::string_view dimension_name(Dimension d) {
    switch (d) {
        case Dimension::Gender: return "gender";
        case Dimension::AgeBand: return "age";
        case Dimension::Censorship: return "censorship";
        case Dimension::Grade: return "grade";
        case Dimension::TimeBin: return "time_bin";
        case Dimension::Magnification: return "magnification";
    }
    return "unknown";
}

std::string age_band(double age) {
    if (!(age >= 0.0)) throw DataError("age must be non-negative");
    if (age < 40.0) return "<40";
    if (age <= 60.0) return "40-60";
    return ">60";
}

GroupKey group_of(const CaseResult& c, Dimension d, std::size_t n_grades, int magnification_levels) {
    switch (d) {
        case Dimension::Gender:
            if (c.gender != "female" && c.gender != "male") throw DataError("unknown gender '" + c.gender + "'");
            return {d, c.gender};
        case Dimension::AgeBand: return {d, age_band(c.age)};
        case Dimension::Censorship: return {d, c.censored ? "censored" : "uncensored"};
        case Dimension::Grade:
            if (c.grade < 0 || static_cast<std::size_t>(c.grade) >= n_grades) throw DataError("unknown grade");
            return {d, std::to_string(c.grade)};
        case Dimension::TimeBin:
            if (c.time_bin < 1 || c.time_bin > 4) throw DataError("unknown time bin");
            return {d, std::to_string(c.time_bin)};
        case Dimension::Magnification:
            if (c.magnification < 1 || c.magnification > magnification_levels)
                throw DataError("unknown magnification level " + std::to_string(c.magnification));
            return {d, std::to_string(c.magnification)};
    }
    throw DataError("unknown group dimension");
}

GroupMetrics group_metrics(std::span<const CaseResult* const> cases, std::string dimension, std::string value) {
    GroupMetrics m;
    m.dimension = std::move(dimension);
    m.value = std::move(value);
    m.count = cases.size();
    if (cases.empty()) return m;

    std::vector<std::vector<double>> probs;
    std::vector<int> grades;
    std::vector<double> risks, times;
    std::vector<bool> events(cases.size());
    std::size_t grade_hits = 0, risk_hits = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const CaseResult& c = *cases[i];
        probs.push_back(c.grade_probs);
        grades.push_back(c.grade);
        risks.push_back(c.risk);
        times.push_back(c.time);
        events[i] = !c.censored;
        m.mean_grade_uncertainty += c.grade_uncertainty / cases.size();
        m.mean_risk_uncertainty += c.risk_uncertainty / cases.size();
        grade_hits += c.grade_set.contains(c.grade);
        risk_hits += c.risk_set.contains(c.time_bin);
    }
    m.grade_coverage = static_cast<double>(grade_hits) / cases.size();
    m.risk_coverage = static_cast<double>(risk_hits) / cases.size();
    if (std::adjacent_find(grades.begin(), grades.end(), std::not_equal_to<>()) != grades.end())
        m.auc = auc_ovr(probs, grades);
    m.c_index = c_index(risks, times, events);
    return m;
}

EvalReport stratified_report(std::span<const CaseResult> cases, std::span<const Dimension> dimensions,
                             std::size_t n_grades, int magnification_levels) {
    EvalReport report;
    std::vector<const CaseResult*> all;
    for (const auto& c : cases) all.push_back(&c);
    report.overall = group_metrics(all, "overall", "all");
    for (Dimension d : dimensions) {
        std::map<std::string, std::vector<const CaseResult*>> buckets;
        for (const auto& c : cases) buckets[group_of(c, d, n_grades, magnification_levels).value].push_back(&c);
        for (auto& [value, members] : buckets)
            report.groups.push_back(group_metrics(members, std::string(dimension_name(d)), value));
    }
    return report;
}

}  // namespace pathgen::metrics
