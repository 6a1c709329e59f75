#include "pathgen/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>

#include "pathgen/error.hpp"
#include "pathgen/random.hpp"

namespace pathgen::synth {

namespace {

enum Stream : std::uint64_t { kWorld = 1, kCase = 2, kSplit = 3 };

// Fixed linear maps shared by every case of a cohort.
struct World {
    std::size_t d = 0, features = 0;
    ad::Tensor<double> patch_latent;   // D x d
    ad::Tensor<double> patch_slide;    // D x 2
    ad::Tensor<double> patch_type;     // D x 3
    ad::Tensor<double> gene_weights;   // G x features
    std::vector<double> gene_bias;     // G
    std::vector<double> gene_private;  // G
};

World make_world(const CohortConfig& c) {
    Rng rng(derive_seed(c.seed, kWorld));
    std::normal_distribution<double> n01;
    World w;
    w.d = c.latent_dim;
    w.features = 2 * w.d + 1;
    const std::size_t D = c.patch_dim, G = c.layout().total();
    auto fill = [&](ad::Tensor<double>& t, std::size_t r, std::size_t k, double scale) {
        t = ad::Tensor<double>::matrix(r, k);
        for (auto& v : t.values()) v = scale * n01(rng);
    };
    fill(w.patch_latent, D, w.d, 1.0 / std::sqrt(double(w.d)));
    fill(w.patch_slide, D, 2, 0.5 / std::sqrt(2.0));
    fill(w.patch_type, D, 3, 0.5 / std::sqrt(3.0));
    fill(w.gene_weights, G, w.features, c.gene_gain / std::sqrt(double(w.features)));
    w.gene_bias.resize(G);
    w.gene_private.resize(G);
    for (auto& v : w.gene_bias) v = 0.3 * n01(rng);
    for (auto& v : w.gene_private) v = n01(rng);
    return w;
}

double severity(const std::vector<double>& z) {
    return std::inner_product(z.begin(), z.end(), z.begin(), 0.0);
}

struct RawCase {
    CaseRecord record;
    std::vector<float> raw_genes;
};

RawCase make_case(const CohortConfig& c, const World& w, std::size_t index,
                  const std::vector<double>& grade_cuts) {
    Rng rng(derive_seed(c.seed, kCase, index));
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> u01;
    RawCase out;
    CaseRecord& r = out.record;
    char id[32];
    std::snprintf(id, sizeof id, "case-%04zu", index);
    r.id = id;

    r.latent.resize(w.d);
    for (auto& v : r.latent) v = n01(rng);
    const double s = severity(r.latent);
    const double dof = double(w.d);
    const double s_std = (s - dof) / std::sqrt(2.0 * dof);

    r.gender = u01(rng) < c.female_fraction ? "female" : "male";
    r.age = std::clamp(50.0 + 10.0 * n01(rng) + 4.0 * s_std, 18.0, 90.0);
    r.magnification = 1 + static_cast<int>(u01(rng) * c.magnification_levels);
    r.magnification = std::min(r.magnification, c.magnification_levels);

    const double s_obs = s + 0.5 * n01(rng);
    r.grade = static_cast<int>(std::upper_bound(grade_cuts.begin(), grade_cuts.end(), s_obs) - grade_cuts.begin());

    const double centred_grade = r.grade - 0.5 * double(c.grades - 1);
    // Survival also depends on a contrast of squared latents that the grade
    // ignores and the genes expose linearly.
    double contrast = 0.0;
    if (w.d >= 2)
        for (std::size_t k = 0; k < w.d; ++k)
            contrast += (k % 2 == 0 ? 1.0 : -1.0) * (r.latent[k] * r.latent[k] - 1.0) / std::sqrt(2.0 * dof);
    const double rate = std::exp(0.5 * s_std + 1.5 * contrast + 0.4 * centred_grade) / 24.0;
    const double event_time = std::exponential_distribution<double>(rate)(rng);
    r.survival.censored = u01(rng) < c.censoring_rate;
    r.survival.time = r.survival.censored ? event_time * (0.1 + 0.9 * u01(rng)) : event_time;

    // Slide: grid cells, background cells removed by the intensity filter,
    // at most patches_per_slide kept in row-major order.
    const auto side = static_cast<int>(std::ceil(std::sqrt(1.5 * double(c.patches_per_slide))));
    std::vector<double> slide(2);
    for (auto& v : slide) v = n01(rng);
    const double noise = c.patch_noise * (1.0 + 0.25 * (r.magnification - 1));
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < side * side && rows.size() < c.patches_per_slide; ++i) {
        const bool background = u01(rng) < c.background_rate;
        const double intensity = background ? 0.85 + 0.15 * u01(rng) : 0.2 + 0.5 * u01(rng);
        std::vector<double> zj(w.d), type(3);
        for (std::size_t k = 0; k < w.d; ++k) zj[k] = r.latent[k] + c.patch_spread * n01(rng);
        for (auto& v : type) v = n01(rng);
        std::vector<float> e(c.patch_dim);
        for (std::size_t q = 0; q < c.patch_dim; ++q) {
            double v = noise * n01(rng);
            for (std::size_t k = 0; k < w.d; ++k) v += w.patch_latent(q, k) * zj[k];
            for (std::size_t k = 0; k < 2; ++k) v += w.patch_slide(q, k) * slide[k];
            for (std::size_t k = 0; k < 3; ++k) v += w.patch_type(q, k) * type[k];
            e[q] = static_cast<float>(v);
        }
        if (!patch_filter(intensity)) continue;
        rows.push_back(std::move(e));
        r.patches.coords.push_back({i / side, i % side});
    }
    if (rows.empty()) throw DataError("case " + r.id + ": every patch was filtered out");
    r.patches.embeddings = ad::Tensor<float>::matrix(rows.size(), c.patch_dim);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), r.patches.embeddings.row_span(i).begin());
    r.patches.magnification = r.magnification;

    // Genes: tanh of a random projection of [z, (z^2 - 1)/sqrt2, standardized
    // severity], plus a private latent invisible to the slide, plus noise.
    std::vector<double> f(w.features);
    for (std::size_t k = 0; k < w.d; ++k) {
        f[k] = r.latent[k];
        f[w.d + k] = (r.latent[k] * r.latent[k] - 1.0) / std::sqrt(2.0);
    }
    f[2 * w.d] = s_std;
    const double hidden = n01(rng);
    const std::size_t G = w.gene_weights.rows();
    out.raw_genes.resize(G);
    for (std::size_t i = 0; i < G; ++i) {
        double a = w.gene_bias[i] + c.gene_private * w.gene_private[i] * hidden;
        for (std::size_t k = 0; k < w.features; ++k) a += w.gene_weights(i, k) * f[k];
        out.raw_genes[i] = static_cast<float>(std::tanh(a) + c.gene_noise * n01(rng));
    }
    return out;
}

}  // namespace

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Cal: return "cal";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    for (Split s : kSplits)
        if (split_name(s) == name) return s;
    throw ConfigError("unknown split '" + name + "' (expected train, val, cal or test)");
}

std::size_t CohortConfig::total_cases() const {
    return std::accumulate(split_sizes.begin(), split_sizes.end(), std::size_t{0});
}

void CohortConfig::validate() const {
    for (std::size_t k = 0; k < group_sizes.size(); ++k)
        if (group_sizes[k] == 0) throw ConfigError("gene group " + std::to_string(k) + " has size 0");
    for (Split s : kSplits)
        if (split_sizes[static_cast<int>(s)] == 0) throw ConfigError("split " + split_name(s) + " has 0 cases");
    if (patch_dim == 0 || patches_per_slide == 0 || latent_dim == 0) throw ConfigError("dimensions must be >= 1");
    if (grades < 2) throw ConfigError("need at least 2 grade classes");
    if (magnification_levels < 1) throw ConfigError("need at least 1 magnification level");
    if (!(censoring_rate >= 0.0 && censoring_rate < 1.0)) throw ConfigError("censoring rate must be in [0, 1)");
    if (!(female_fraction >= 0.0 && female_fraction <= 1.0)) throw ConfigError("female fraction must be in [0, 1]");
    if (!(patch_noise >= 0.0 && patch_spread >= 0.0 && gene_gain > 0.0 && gene_noise >= 0.0 && gene_private >= 0.0))
        throw ConfigError("noise scales must be non-negative");
    if (!(background_rate >= 0.0 && background_rate < 1.0)) throw ConfigError("background rate must be in [0, 1)");
}

std::vector<const CaseRecord*> Cohort::split(Split s) const {
    std::vector<const CaseRecord*> out;
    for (const auto& c : cases)
        if (c.split == s) out.push_back(&c);
    return out;
}

bool patch_filter(double mean_intensity) {
    if (!(mean_intensity >= 0.0 && mean_intensity <= 1.0))
        throw DataError("patch intensity " + std::to_string(mean_intensity) + " outside [0, 1]");
    return mean_intensity <= 0.8;
}

GeneStats fit_gene_stats(std::span<const std::vector<float>> profiles) {
    if (profiles.empty()) throw DataError("cannot fit gene statistics on zero profiles");
    const std::size_t G = profiles.front().size();
    GeneStats st{std::vector<double>(G, 0.0), std::vector<double>(G, 0.0)};
    for (const auto& p : profiles) {
        if (p.size() != G) throw ShapeError("profiles have different lengths");
        for (std::size_t i = 0; i < G; ++i) st.mean[i] += p[i];
    }
    for (auto& m : st.mean) m /= double(profiles.size());
    for (const auto& p : profiles)
        for (std::size_t i = 0; i < G; ++i) st.sd[i] += (p[i] - st.mean[i]) * (p[i] - st.mean[i]);
    for (auto& s : st.sd) s = std::sqrt(s / double(profiles.size()));
    return st;
}

std::vector<float> zscore(std::span<const float> values, const GeneStats& stats) {
    if (values.size() != stats.mean.size() || values.size() != stats.sd.size())
        throw ShapeError("profile length " + std::to_string(values.size()) + " does not match statistics length " +
                         std::to_string(stats.mean.size()));
    std::vector<float> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(stats.sd[i] > 0.0)) throw DataError("gene " + std::to_string(i) + " has zero standard deviation");
        out[i] = static_cast<float>((values[i] - stats.mean[i]) / stats.sd[i]);
    }
    return out;
}

std::array<std::vector<std::size_t>, 4> split_cohort(std::size_t n, const std::array<double, 4>& fractions,
                                                     std::uint64_t seed) {
    double sum = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

    std::array<std::size_t, 4> counts{};
    std::array<double, 4> remainder{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 4; ++k) {
        const double exact = fractions[k] * double(n);
        counts[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        remainder[k] = exact - double(counts[k]);
        assigned += counts[k];
    }
    std::array<std::size_t, 4> order{0, 1, 2, 3};
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % 4]];
    for (std::size_t k = 0; k < 4; ++k)
        if (fractions[k] > 0.0 && counts[k] == 0)
            throw DataError("split " + split_name(static_cast<Split>(k)) + " would be empty with " +
                            std::to_string(n) + " cases");

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::array<std::vector<std::size_t>, 4> out;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < 4; ++k) {
        out[k].assign(perm.begin() + pos, perm.begin() + pos + counts[k]);
        std::sort(out[k].begin(), out[k].end());
        pos += counts[k];
    }
    return out;
}

Cohort generate_cohort(const CohortConfig& config) {
    config.validate();
    const World world = make_world(config);
    boost::math::chi_squared chi(double(config.latent_dim));
    std::vector<double> cuts;
    for (std::size_t k = 1; k < config.grades; ++k) cuts.push_back(quantile(chi, double(k) / double(config.grades)));

    const std::size_t n = config.total_cases();
    std::vector<RawCase> raw;
    raw.reserve(n);
    for (std::size_t i = 0; i < n; ++i) raw.push_back(make_case(config, world, i, cuts));

    std::array<double, 4> fractions{};
    for (std::size_t k = 0; k < 4; ++k) fractions[k] = double(config.split_sizes[k]) / double(n);
    const auto parts = split_cohort(n, fractions, derive_seed(config.seed, kSplit));
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t i : parts[k]) raw[i].record.split = static_cast<Split>(k);

    Cohort cohort;
    cohort.config = config;
    std::vector<std::vector<float>> train_genes;
    std::vector<double> train_times;
    std::vector<char> train_censored;
    for (const auto& rc : raw) {
        if (rc.record.split != Split::Train) continue;
        train_genes.push_back(rc.raw_genes);
        train_times.push_back(rc.record.survival.time);
        train_censored.push_back(rc.record.survival.censored);
    }
    cohort.stats = fit_gene_stats(train_genes);
    auto flags = std::make_unique<bool[]>(train_censored.size());
    std::copy(train_censored.begin(), train_censored.end(), flags.get());
    cohort.bins = predictor::TimeBins::from_training(train_times, std::span<const bool>(flags.get(), train_censored.size()));

    cohort.cases.reserve(n);
    for (auto& rc : raw) {
        rc.record.genes.values = zscore(rc.raw_genes, cohort.stats);
        rc.record.survival.time_bin = cohort.bins.bin(rc.record.survival.time);
        cohort.cases.push_back(std::move(rc.record));
    }
    return cohort;
}

}  // namespace pathgen::synth
