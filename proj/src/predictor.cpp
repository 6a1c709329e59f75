#include "pathgen/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pathgen/random.hpp"

namespace pathgen::predictor {

using ad::Graph;
using ad::ParamStore;
using ad::Tensor;
using ad::Var;

namespace {

constexpr double kProbClamp = 1e-7;

double quantile_sorted(const std::vector<double>& v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

void check_example(const Example& e, const PredictorConfig& c) {
    if (e.patches == nullptr) throw DataError("predictor: example without patches");
    if (e.profile.size() != c.layout.total())
        throw ShapeError("predictor: profile has " + std::to_string(e.profile.size()) + " values, expected " +
                         std::to_string(c.layout.total()));
    if (e.grade < 0 || static_cast<std::size_t>(e.grade) >= c.grades)
        throw DataError("predictor: grade label " + std::to_string(e.grade) + " out of range");
    if (e.survival.time_bin < 1 || e.survival.time_bin > static_cast<int>(kTimeBins))
        throw DataError("predictor: time bin " + std::to_string(e.survival.time_bin) + " out of range");
}

struct Batch {
    Tensor<float> profiles;
    Tensor<float> patches;
    std::vector<std::size_t> counts;
    std::vector<int> grades;
    std::vector<SurvivalLabel> survival;
};

Batch make_batch(std::span<const Example> examples, std::span<const std::size_t> rows, const PredictorConfig& c) {
    Batch b;
    b.profiles = Tensor<float>::matrix(rows.size(), c.layout.total());
    std::vector<const xmodal::PatchSet*> sets;
    sets.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Example& e = examples[rows[i]];
        check_example(e, c);
        std::copy(e.profile.begin(), e.profile.end(), b.profiles.row_span(i).begin());
        sets.push_back(e.patches);
        b.grades.push_back(e.grade);
        b.survival.push_back(e.survival);
    }
    b.patches = xmodal::stack_patches(sets, b.counts);
    if (b.patches.cols() != c.patch_dim)
        throw ShapeError("predictor: patch dim " + std::to_string(b.patches.cols()) + " != " +
                         std::to_string(c.patch_dim));
    return b;
}

}  // namespace

TimeBins::TimeBins(std::array<double, kTimeBins - 1> edges) : edges_(edges) {
    for (std::size_t i = 0; i < edges_.size(); ++i) {
        if (!std::isfinite(edges_[i])) throw DataError("time bins: non-finite edge");
        if (i > 0 && edges_[i] < edges_[i - 1]) throw DataError("time bins: edges must be non-decreasing");
    }
}

TimeBins TimeBins::from_training(std::span<const double> times, std::span<const bool> censored) {
    if (times.size() != censored.size()) throw DataError("time bins: times and censoring differ in length");
    std::vector<double> events;
    for (std::size_t i = 0; i < times.size(); ++i)
        if (!censored[i]) events.push_back(times[i]);
    if (events.empty()) throw DataError("time bins: no uncensored training times");
    std::sort(events.begin(), events.end());
    return TimeBins({quantile_sorted(events, 0.25), quantile_sorted(events, 0.5), quantile_sorted(events, 0.75)});
}

int TimeBins::bin(double time) const {
    if (!(time >= 0.0)) throw DataError("time bins: survival time must be >= 0");
    int b = 1;
    for (double e : edges_)
        if (time > e) ++b;
    return b;
}

void PredictorConfig::validate() const {
    if (layout.total() == 0) throw ConfigError("predictor: empty gene layout");
    if (patch_dim == 0 || embed_dim == 0 || hidden == 0) throw ConfigError("predictor: dimensions must be positive");
    if (heads == 0 || embed_dim % heads != 0) throw ConfigError("predictor: embed_dim must be divisible by heads");
    if (grades < 2) throw ConfigError("predictor: need at least two grades");
}

ParamStore<float> init_mcat_gr(const PredictorConfig& c, std::uint64_t seed) {
    c.validate();
    Rng rng(seed);
    ParamStore<float> p;
    const std::size_t e = c.embed_dim;
    xmodal::init_gene_encoders(p, "genc", c.layout, c.hidden, e, rng);
    nn::init_linear(p, "patch.proj", c.patch_dim, e, rng);
    xmodal::init_coattention(p, "coattn", e, e, rng);
    for (std::size_t l = 0; l < c.path_layers; ++l)
        nn::init_transformer_layer(p, "path." + std::to_string(l), c.transformer(), rng);
    for (std::size_t l = 0; l < c.gene_layers; ++l)
        nn::init_transformer_layer(p, "gene." + std::to_string(l), c.transformer(), rng);
    nn::init_attention_pool(p, "pool.grade", e, e, rng);
    nn::init_attention_pool(p, "pool.risk", e, e, rng);
    nn::init_attention_pool(p, "pool.gene", e, e, rng);
    const std::array<std::size_t, 3> grade_widths{e, e, c.grades};
    nn::init_mlp(p, "head.grade", grade_widths, rng);
    const std::array<std::size_t, 3> risk_widths{2 * e, e, kTimeBins};
    nn::init_mlp(p, "head.risk", risk_widths, rng);
    return p;
}

template <typename T>
McatGraph<T> mcat_gr_graph(Graph<T>& g, const ParamStore<T>& p, const PredictorConfig& c, Var<T> profiles,
                           Var<T> patches, std::span<const std::size_t> patch_counts) {
    const std::size_t batch = profiles.rows();
    if (patch_counts.size() != batch) throw ShapeError("mcat_gr: one patch count per profile required");
    if (patches.cols() != c.patch_dim) throw ShapeError("mcat_gr: patch dim mismatch");
    const std::vector<std::size_t> blocks(batch, xmodal::kGroupCount);

    Var<T> genes = xmodal::encode_genes(g, p, "genc", c.layout, profiles);
    Var<T> projected = ad::elu(nn::linear(g, p, "patch.proj", patches));
    xmodal::CoAttended<T> co = xmodal::coattend(g, p, "coattn", genes, projected, patch_counts);

    Var<T> path = co.features;
    for (std::size_t l = 0; l < c.path_layers; ++l)
        path = nn::transformer_layer(g, p, "path." + std::to_string(l), c.transformer(), path, blocks);
    Var<T> gene = genes;
    for (std::size_t l = 0; l < c.gene_layers; ++l)
        gene = nn::transformer_layer(g, p, "gene." + std::to_string(l), c.transformer(), gene, blocks);

    Var<T> grade_pooled = nn::attention_pool(g, p, "pool.grade", path, blocks);
    Var<T> risk_pooled = nn::attention_pool(g, p, "pool.risk", path, blocks);
    Var<T> gene_pooled = nn::attention_pool(g, p, "pool.gene", gene, blocks);

    McatGraph<T> out;
    out.grade_logits = nn::mlp(g, p, "head.grade", 2, grade_pooled, false);
    out.hazard_logits = nn::mlp(g, p, "head.risk", 2, ad::concat_cols<T>({risk_pooled, gene_pooled}), false);
    out.attention = std::move(co.attention);
    return out;
}

std::array<double, kTimeBins> survival_from_hazards(const std::array<double, kTimeBins>& hazards) {
    std::array<double, kTimeBins> s{};
    double running = 1.0;
    for (std::size_t t = 0; t < kTimeBins; ++t) {
        running *= 1.0 - hazards[t];
        s[t] = running;
    }
    return s;
}

double risk_from_hazards(const std::array<double, kTimeBins>& hazards) {
    const auto s = survival_from_hazards(hazards);
    return -(1.0 + std::accumulate(s.begin(), s.end(), 0.0));
}

std::vector<double> softmax(std::span<const double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) z += out[i] = std::exp(logits[i] - m);
    for (auto& v : out) v /= z;
    return out;
}

double grade_loss(std::span<const double> probs, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) throw DataError("grade_loss: label out of range");
    double total = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
        if (!(probs[j] >= 0.0 && probs[j] <= 1.0)) throw NumericError("grade_loss: probability outside [0, 1]");
        const double q = std::clamp(probs[j], kProbClamp, 1.0 - kProbClamp);
        total -= static_cast<int>(j) == label ? std::log(q) : std::log(1.0 - q);
    }
    return total / static_cast<double>(probs.size());
}

double survival_nll_loss(const std::array<double, kTimeBins>& hazards, const SurvivalLabel& label) {
    if (label.time_bin < 1 || label.time_bin > static_cast<int>(kTimeBins))
        throw DataError("survival_nll_loss: time bin out of range");
    auto log_clamped = [](double x) { return std::log(std::clamp(x, kProbClamp, 1.0)); };
    const std::size_t k = static_cast<std::size_t>(label.time_bin);
    double log_s_before = 0.0;  // log S(k - 1)
    for (std::size_t j = 0; j + 1 < k; ++j) log_s_before += log_clamped(1.0 - hazards[j]);
    if (label.censored) return -(log_s_before + log_clamped(1.0 - hazards[k - 1]));
    return -(log_s_before + log_clamped(hazards[k - 1]));
}

double joint_loss(double grade, double survival, double lambda, LambdaAssignment assignment) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("joint_loss: lambda must lie in [0, 1]");
    return assignment == LambdaAssignment::GradeFirst ? lambda * grade + (1.0 - lambda) * survival
                                                      : lambda * survival + (1.0 - lambda) * grade;
}

template <typename T>
Var<T> grade_bce(Graph<T>& g, Var<T> logits, std::span<const int> labels) {
    const std::size_t b = logits.rows(), n = logits.cols();
    if (labels.size() != b) throw ShapeError("grade_bce: one label per row required");
    Tensor<T> pos = Tensor<T>::matrix(b, n), neg = Tensor<T>::matrix(b, n, T(1));
    for (std::size_t i = 0; i < b; ++i) {
        pos(i, static_cast<std::size_t>(labels[i])) = T(1);
        neg(i, static_cast<std::size_t>(labels[i])) = T(0);
    }
    Var<T> ll = ad::add(ad::sum(ad::mul(g.input(std::move(pos)), ad::log_sigmoid(logits))),
                        ad::sum(ad::mul(g.input(std::move(neg)), ad::log_sigmoid(ad::scale(logits, -1.0)))));
    return ad::scale(ll, -1.0 / static_cast<double>(b * n));
}

template <typename T>
Var<T> survival_nll(Graph<T>& g, Var<T> hazard_logits, std::span<const SurvivalLabel> labels) {
    const std::size_t b = hazard_logits.rows();
    if (labels.size() != b || hazard_logits.cols() != kTimeBins)
        throw ShapeError("survival_nll: expected one label and four hazard logits per row");
    // event picks log h(k); survive picks the log(1 - h_j) terms making up log S.
    Tensor<T> event = Tensor<T>::matrix(b, kTimeBins), survive = Tensor<T>::matrix(b, kTimeBins);
    for (std::size_t i = 0; i < b; ++i) {
        const auto k = static_cast<std::size_t>(labels[i].time_bin);
        if (k < 1 || k > kTimeBins) throw DataError("survival_nll: time bin out of range");
        for (std::size_t j = 0; j + 1 < k; ++j) survive(i, j) = T(1);
        if (labels[i].censored)
            survive(i, k - 1) = T(1);
        else
            event(i, k - 1) = T(1);
    }
    Var<T> ll = ad::add(ad::sum(ad::mul(g.input(std::move(event)), ad::log_sigmoid(hazard_logits))),
                        ad::sum(ad::mul(g.input(std::move(survive)), ad::log_sigmoid(ad::scale(hazard_logits, -1.0)))));
    return ad::scale(ll, -1.0 / static_cast<double>(b));
}

std::vector<PredictorOutput> predict(const ParamStore<float>& params, const PredictorConfig& config,
                                     std::span<const Example> examples, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("predict: batch size must be positive");
    std::vector<PredictorOutput> out;
    out.reserve(examples.size());
    for (std::size_t start = 0; start < examples.size(); start += batch_size) {
        const std::size_t count = std::min(batch_size, examples.size() - start);
        std::vector<std::size_t> rows(count);
        std::iota(rows.begin(), rows.end(), start);
        const Batch b = make_batch(examples, rows, config);
        Graph<float> g;
        const auto m = mcat_gr_graph(g, params, config, g.input(b.profiles), g.input(b.patches), b.counts);
        const Tensor<float>& gl = m.grade_logits.value();
        const Tensor<float>& hl = m.hazard_logits.value();
        for (std::size_t i = 0; i < count; ++i) {
            PredictorOutput o;
            std::vector<double> logits(gl.row_span(i).begin(), gl.row_span(i).end());
            o.grade_probs = softmax(logits);
            for (std::size_t t = 0; t < kTimeBins; ++t) o.hazards[t] = sigmoid(hl(i, t));
            o.survival = survival_from_hazards(o.hazards);
            o.risk = risk_from_hazards(o.hazards);
            o.coattention = xmodal::CoAttentionMap{m.attention[i].value()};
            out.push_back(std::move(o));
        }
    }
    return out;
}

PredictorOutput mcat_gr_forward(const xmodal::PatchSet& patches, const xmodal::GeneProfile& profile,
                                const ParamStore<float>& params, const PredictorConfig& config) {
    patches.validate();
    profile.validate(config.layout);
    const std::array<Example, 1> ex{Example{&patches, profile.values, 0, SurvivalLabel{}}};
    return std::move(predict(params, config, ex).front());
}

DistributedPrediction distributed_predict(const xmodal::PatchSet& patches, const xmodal::GeneProfile& profile,
                                          const ParamStore<float>& params, const PredictorConfig& config,
                                          std::size_t window) {
    if (window == 0) throw ConfigError("distributed_predict: window must be >= 1");
    if (patches.count() == 0) throw DataError("distributed_predict: empty patch set");
    patches.validate();
    profile.validate(config.layout);
    const std::size_t m = patches.count(), d = patches.dim();
    std::vector<xmodal::PatchSet> windows;
    for (std::size_t start = 0; start < m; start += window) {
        const std::size_t n = std::min(window, m - start);
        xmodal::PatchSet w;
        w.embeddings = Tensor<float>::matrix(n, d);
        std::copy(patches.embeddings.ptr() + start * d, patches.embeddings.ptr() + (start + n) * d, w.embeddings.ptr());
        w.coords.assign(patches.coords.begin() + static_cast<std::ptrdiff_t>(start),
                        patches.coords.begin() + static_cast<std::ptrdiff_t>(start + n));
        w.magnification = patches.magnification;
        windows.push_back(std::move(w));
    }
    std::vector<Example> examples;
    for (const auto& w : windows) examples.push_back(Example{&w, profile.values, 0, SurvivalLabel{}});
    const auto outputs = predict(params, config, examples);

    DistributedPrediction r;
    r.coords = patches.coords;
    r.mean_grade_probs.assign(config.grades, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const PredictorOutput& o = outputs[i / window];
        r.grade_probs.push_back(o.grade_probs);
        r.risk.push_back(o.risk);
        for (std::size_t j = 0; j < config.grades; ++j) r.mean_grade_probs[j] += o.grade_probs[j] / m;
        r.mean_risk += o.risk / m;
    }
    return r;
}

std::vector<PredictorEpochLog> train_predictor(ParamStore<float>& params, const PredictorConfig& config,
                                               std::span<const Example> examples,
                                               const PredictorTrainOptions& options,
                                               ad::OptimizerState<float>& state, int start_epoch,
                                               const std::function<void(const PredictorEpochLog&)>& on_epoch) {
    if (examples.empty()) throw DataError("train_predictor: no training examples");
    if (options.batch_size == 0) throw ConfigError("train_predictor: batch size must be positive");
    const double lambda = options.lambda;
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("train_predictor: lambda must lie in [0, 1]");
    const bool grade_first = options.assignment == LambdaAssignment::GradeFirst;
    const double w_grade = grade_first ? lambda : 1.0 - lambda;
    const double w_surv = 1.0 - w_grade;
    state.config = options.adam;

    std::vector<PredictorEpochLog> logs;
    for (int epoch = start_epoch; epoch < options.epochs; ++epoch) {
        Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> order(examples.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);

        PredictorEpochLog log;
        log.epoch = epoch;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t count = std::min(options.batch_size, order.size() - start);
            const Batch b = make_batch(examples, std::span(order).subspan(start, count), config);
            Graph<float> g;
            const auto m = mcat_gr_graph(g, params, config, g.input(b.profiles), g.input(b.patches), b.counts);
            Var<float> lg = grade_bce(g, m.grade_logits, b.grades);
            Var<float> ls = survival_nll(g, m.hazard_logits, b.survival);
            Var<float> loss = ad::add(ad::scale(lg, w_grade), ad::scale(ls, w_surv));
            const double value = loss.value()[0];
            if (!std::isfinite(value)) throw NumericError("train_predictor: non-finite loss");
            ad::adam_step(params, g.gradient(loss), state);
            log.mean_loss += value;
            log.mean_grade_loss += lg.value()[0];
            log.mean_survival_loss += ls.value()[0];
            ++steps;
        }
        log.mean_loss /= steps;
        log.mean_grade_loss /= steps;
        log.mean_survival_loss /= steps;
        logs.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    return logs;
}

#define PATHGEN_INSTANTIATE_PREDICTOR(T)                                                                    \
    template McatGraph<T> mcat_gr_graph(Graph<T>&, const ParamStore<T>&, const PredictorConfig&, Var<T>,    \
                                        Var<T>, std::span<const std::size_t>);                              \
    template Var<T> grade_bce(Graph<T>&, Var<T>, std::span<const int>);                                     \
    template Var<T> survival_nll(Graph<T>&, Var<T>, std::span<const SurvivalLabel>);

PATHGEN_INSTANTIATE_PREDICTOR(float)
PATHGEN_INSTANTIATE_PREDICTOR(double)

}  // namespace pathgen::predictor
