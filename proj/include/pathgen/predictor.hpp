#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "pathgen/ad/adam.hpp"
#include "pathgen/crossmodal.hpp"

// MCAT_GR: joint grade classification and discrete-time survival over a
// slide's patches and a gene profile (real or synthesized).
namespace pathgen::predictor {

inline constexpr std::size_t kTimeBins = 4;

struct SurvivalLabel {
    double time = 0.0;     // months
    bool censored = false; // alive at last follow-up
    int time_bin = 1;      // 1..4
};

// Three cut points splitting survival time into four bins. A time equal to a
// cut point falls into the lower bin.
class TimeBins {
public:
    TimeBins() = default;
    explicit TimeBins(std::array<double, kTimeBins - 1> edges);

    // Quartiles (linear interpolation) of the uncensored training times.
    static TimeBins from_training(std::span<const double> times, std::span<const bool> censored);

    int bin(double time) const;
    const std::array<double, kTimeBins - 1>& edges() const noexcept { return edges_; }

private:
    std::array<double, kTimeBins - 1> edges_{};
};

struct PredictorConfig {
    xmodal::GeneLayout layout;
    std::size_t patch_dim = 64;
    std::size_t embed_dim = 64;
    std::size_t hidden = 256;    // gene encoder width
    std::size_t heads = 4;
    std::size_t path_layers = 2; // pathomic transformer depth
    std::size_t gene_layers = 2;
    std::size_t grades = 3;

    nn::TransformerShape transformer() const { return {embed_dim, heads, 4 * embed_dim}; }
    void validate() const;
};

ad::ParamStore<float> init_mcat_gr(const PredictorConfig& config, std::uint64_t seed);

template <typename T>
struct McatGraph {
    ad::Var<T> grade_logits;           // B x N
    ad::Var<T> hazard_logits;          // B x 4
    std::vector<ad::Var<T>> attention; // per sample, 6 x M_b
};

// Batched forward over B samples: profiles B x G, patches stacked as in
// xmodal::coattend.
template <typename T>
McatGraph<T> mcat_gr_graph(ad::Graph<T>& g, const ad::ParamStore<T>& p, const PredictorConfig& config,
                           ad::Var<T> profiles, ad::Var<T> patches, std::span<const std::size_t> patch_counts);

struct PredictorOutput {
    std::vector<double> grade_probs;
    std::array<double, kTimeBins> hazards{};
    std::array<double, kTimeBins> survival{};
    double risk = 0.0;
    xmodal::CoAttentionMap coattention;
};

std::array<double, kTimeBins> survival_from_hazards(const std::array<double, kTimeBins>& hazards);
// -(1 + sum_t S(t)), in [-5, -1].
double risk_from_hazards(const std::array<double, kTimeBins>& hazards);
std::vector<double> softmax(std::span<const double> logits);

PredictorOutput mcat_gr_forward(const xmodal::PatchSet& patches, const xmodal::GeneProfile& profile,
                                const ad::ParamStore<float>& params, const PredictorConfig& config);

// Mean over classes of binary cross entropy against the one-hot target.
// Probabilities are clamped to [1e-7, 1 - 1e-7].
double grade_loss(std::span<const double> probs, int label);
// Uncensored: -[log S(bin-1) + log h(bin)]. Censored: -log S(bin). S(0) = 1.
double survival_nll_loss(const std::array<double, kTimeBins>& hazards, const SurvivalLabel& label);

// Which task lambda weights. GradeFirst: lambda * grade + (1 - lambda) * survival.
enum class LambdaAssignment { GradeFirst, SurvivalFirst };

double joint_loss(double grade, double survival, double lambda,
                  LambdaAssignment assignment = LambdaAssignment::GradeFirst);

// Graph versions used for training, averaged over the batch. The grade loss is
// the per-class sigmoid BCE on the logits.
template <typename T>
ad::Var<T> grade_bce(ad::Graph<T>& g, ad::Var<T> logits, std::span<const int> labels);
template <typename T>
ad::Var<T> survival_nll(ad::Graph<T>& g, ad::Var<T> hazard_logits, std::span<const SurvivalLabel> labels);

struct DistributedPrediction {
    std::vector<xmodal::GridCoord> coords;
    std::vector<std::vector<double>> grade_probs; // per patch
    std::vector<double> risk;                     // per patch
    std::vector<double> mean_grade_probs;
    double mean_risk = 0.0;
};

// Predicts on consecutive windows of `window` patches independently and
// assigns each window's prediction to its patches.
DistributedPrediction distributed_predict(const xmodal::PatchSet& patches, const xmodal::GeneProfile& profile,
                                          const ad::ParamStore<float>& params, const PredictorConfig& config,
                                          std::size_t window = 1);

struct Example {
    const xmodal::PatchSet* patches = nullptr;
    std::span<const float> profile;
    int grade = 0;
    SurvivalLabel survival;
};

struct PredictorTrainOptions {
    int epochs = 20;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    double lambda = 0.3;
    LambdaAssignment assignment = LambdaAssignment::GradeFirst;
    ad::AdamConfig adam{2e-4};
};

struct PredictorEpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    double mean_grade_loss = 0.0;
    double mean_survival_loss = 0.0;
};

std::vector<PredictorEpochLog> train_predictor(ad::ParamStore<float>& params, const PredictorConfig& config,
                                               std::span<const Example> examples,
                                               const PredictorTrainOptions& options,
                                               ad::OptimizerState<float>& state, int start_epoch = 0,
                                               const std::function<void(const PredictorEpochLog&)>& on_epoch = {});

// Batched inference; outputs align with `examples`.
std::vector<PredictorOutput> predict(const ad::ParamStore<float>& params, const PredictorConfig& config,
                                     std::span<const Example> examples, std::size_t batch_size = 32);

}  // namespace pathgen::predictor
