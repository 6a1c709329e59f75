#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pathgen/conformal.hpp"
#include "pathgen/diffusion.hpp"
#include "pathgen/io.hpp"
#include "pathgen/metrics.hpp"
#include "pathgen/predictor.hpp"
#include "pathgen/synthdata.hpp"

// End-to-end steps shared by the CLI and the acceptance runs.
namespace pathgen::pipeline {

using io::RunConfig;

enum class SeedStream : std::uint64_t { PathGenInit = 1, PathGenTrain, Sample, PredictorInit, PredictorTrain };
std::uint64_t stream_seed(const RunConfig& config, SeedStream stream);
io::json seed_lineage(const RunConfig& config);

diffusion::NoiseSchedule make_schedule(const RunConfig& config);

struct PathGenState {
    ad::ParamStore<float> params;
    ad::OptimizerState<float> optimizer;
    ad::ParamStore<float> average;  // EMA of params; empty when ema_decay is 0
    int epoch = 0;
    std::vector<diffusion::EpochLog> log;
};

PathGenState init_pathgen(const RunConfig& config);
// Trains on the cohort's training split until `until_epoch` epochs are done.
void train_pathgen(PathGenState& state, const synth::Cohort& cohort, const RunConfig& config, int until_epoch,
                   const std::function<void(const diffusion::EpochLog&)>& on_epoch = {});
// The parameters to sample from: the average when one is tracked.
const ad::ParamStore<float>& sampling_params(const PathGenState& state);

io::Checkpoint pathgen_checkpoint(const PathGenState& state, const RunConfig& config);
PathGenState pathgen_from_checkpoint(const io::Checkpoint& ckpt);

// One synthesized profile per case. Case c draws its noise from a seed derived
// from (seed, id), so results do not depend on which cases are synthesized together.
std::vector<std::vector<float>> synthesize(const diffusion::NoiseModel& model, const diffusion::NoiseSchedule& schedule,
                                           std::span<const synth::CaseRecord* const> cases, std::uint64_t seed,
                                           std::size_t batch = 64);

struct SimilarityRow {
    std::string group;  // gene group name or "all"
    std::size_t genes = 0;
    double spearman = 0.0;  // pooled over (case, gene) pairs
    double spearman_p = 1.0;
    double mae = 0.0;
    double t_test_p = 1.0;  // Welch test, real vs synthesized values
};

// Six group rows followed by the all-gene row.
std::vector<SimilarityRow> similarity_report(std::span<const std::vector<float>> real,
                                             std::span<const std::vector<float>> synthesized,
                                             const xmodal::GeneLayout& layout);
io::json to_json(std::span<const SimilarityRow> rows);

// Predictor examples for `cases`; profiles[i] replaces the case's genes when given.
std::vector<predictor::Example> make_examples(std::span<const synth::CaseRecord* const> cases,
                                              std::span<const std::vector<float>> profiles = {});

double mean_joint_loss(const ad::ParamStore<float>& params, const predictor::PredictorConfig& config,
                       std::span<const predictor::Example> examples, double lambda,
                       predictor::LambdaAssignment assignment);

struct PredictorEpoch {
    predictor::PredictorEpochLog train;
    std::optional<double> val_loss;
};

struct PredictorState {
    ad::ParamStore<float> params;
    ad::OptimizerState<float> optimizer;
    int epoch = 0;
    std::vector<PredictorEpoch> log;
    ad::ParamStore<float> best;  // lowest validation loss so far
    int best_epoch = -1;
    double best_val = 0.0;
};

PredictorState init_predictor(const RunConfig& config);
// With a non-empty validation set each epoch is scored on it and the best
// parameters are kept.
void train_predictor(PredictorState& state, std::span<const predictor::Example> train,
                     std::span<const predictor::Example> val, const RunConfig& config, int until_epoch,
                     const std::function<void(const PredictorEpoch&)>& on_epoch = {});
// Best-on-validation parameters when selection is enabled, else the last ones.
const ad::ParamStore<float>& final_params(const PredictorState& state, const RunConfig& config);

io::Checkpoint predictor_checkpoint(const PredictorState& state, const RunConfig& config);
PredictorState predictor_from_checkpoint(const io::Checkpoint& ckpt);

struct Calibration {
    conformal::GradeCalibration grade;
    conformal::RiskCalibration risk;
};

Calibration calibrate(std::span<const predictor::PredictorOutput> outputs,
                      std::span<const predictor::Example> examples, double alpha);
io::json to_json(const Calibration& cal);
Calibration calibration_from_json(const io::json& j);

metrics::CaseResult case_result(const synth::CaseRecord& record, const predictor::PredictorOutput& out,
                                const Calibration& cal);
// One JSONL line's worth: probabilities, set, risk interval and uncertainties.
io::json prediction_record(const std::string& id, const metrics::CaseResult& result);
io::json to_json(const metrics::EvalReport& report);

// AUC and C-index of outputs against their examples.
struct TaskScores {
    double auc = 0.0;
    double c_index = 0.0;
};
TaskScores score(std::span<const predictor::PredictorOutput> outputs, std::span<const predictor::Example> examples);

}  // namespace pathgen::pipeline
