#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pathgen/ad/adam.hpp"
#include "pathgen/ad/graph.hpp"
#include "pathgen/crossmodal.hpp"
#include "pathgen/random.hpp"

namespace pathgen::diffusion {

// beta, alpha = 1 - beta, alpha_bar = running product of alpha, and the
// posterior variance beta_tilde_t = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t
// with alpha_bar_0 = 1. Accessors take t in 1..T.
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    explicit NoiseSchedule(std::vector<double> betas);

    int steps() const noexcept { return static_cast<int>(beta_.size()); }
    double beta(int t) const { return beta_.at(index(t)); }
    double alpha(int t) const { return alpha_.at(index(t)); }
    double alpha_bar(int t) const { return alpha_bar_.at(index(t)); }
    double beta_tilde(int t) const { return beta_tilde_.at(index(t)); }
    double sigma(int t) const { return sigma_.at(index(t)); }

    const std::vector<double>& betas() const noexcept { return beta_; }
    const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

private:
    std::size_t index(int t) const;

    std::vector<double> beta_, alpha_, alpha_bar_, beta_tilde_, sigma_;
};

enum class ScheduleShape { Linear };

NoiseSchedule build_schedule(int steps, double beta_start, double beta_end, ScheduleShape shape = ScheduleShape::Linear);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
std::vector<float> forward_sample(std::span<const float> x0, int t, std::span<const float> eps,
                                  const NoiseSchedule& schedule);
std::vector<double> forward_sample(std::span<const double> x0, int t, std::span<const double> eps,
                                   const NoiseSchedule& schedule);

// x_{t-1} = (x_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_t) + sigma_t z.
// z is ignored (treated as 0) at t = 1.
std::vector<float> reverse_update(std::span<const float> x_t, std::span<const float> eps_hat, int t,
                                  std::span<const float> z, const NoiseSchedule& schedule);
std::vector<double> reverse_update(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                                   std::span<const double> z, const NoiseSchedule& schedule);

// The conditional noise predictor eps_theta(x_t, t, patches). Rows of x_t are
// independent samples, each with its own timestep and patch set.
class NoiseModel {
public:
    virtual ~NoiseModel() = default;
    virtual std::size_t dim() const = 0;
    virtual ad::Tensor<float> predict(const ad::Tensor<float>& x_t, std::span<const int> t,
                                      std::span<const xmodal::PatchSet* const> patches) const = 0;
};

// A noise predictor expressed as a differentiable graph over a parameter store.
class TrainableNoiseModel : public NoiseModel {
public:
    virtual ad::ParamStore<float>& params() = 0;
    virtual const ad::ParamStore<float>& params() const = 0;
    virtual ad::Var<float> build(ad::Graph<float>& g, ad::Var<float> x_t, std::span<const int> t,
                                 std::span<const xmodal::PatchSet* const> patches) const = 0;

    ad::Tensor<float> predict(const ad::Tensor<float>& x_t, std::span<const int> t,
                              std::span<const xmodal::PatchSet* const> patches) const override;
};

// PathGen: the crossmodal transformer as a noise model.
class PathGenModel final : public TrainableNoiseModel {
public:
    PathGenModel(xmodal::PathGenConfig config, ad::ParamStore<float> params);
    PathGenModel(xmodal::PathGenConfig config, std::uint64_t seed);

    std::size_t dim() const override { return config_.layout.total(); }
    ad::ParamStore<float>& params() override { return params_; }
    const ad::ParamStore<float>& params() const override { return params_; }
    const xmodal::PathGenConfig& config() const noexcept { return config_; }
    ad::Var<float> build(ad::Graph<float>& g, ad::Var<float> x_t, std::span<const int> t,
                         std::span<const xmodal::PatchSet* const> patches) const override;

private:
    xmodal::PathGenConfig config_;
    ad::ParamStore<float> params_;
};

struct TrainStepResult {
    double loss = 0.0;
    ad::Gradients<float> grads;
    std::vector<int> timesteps;
};

// One Monte-Carlo estimate of the simplified diffusion loss on a batch:
// t ~ U{1..T}, eps ~ N(0, I) per row, loss = mean over rows and coordinates
// of (eps - eps_theta(x_t, t))^2, with gradients w.r.t. the model parameters.
TrainStepResult train_step(const TrainableNoiseModel& model, const ad::Tensor<float>& x0,
                           std::span<const xmodal::PatchSet* const> patches, const NoiseSchedule& schedule, Rng& rng);

// One reverse step for a batch whose rows share timestep t.
ad::Tensor<float> reverse_step(const NoiseModel& model, const ad::Tensor<float>& x_t, int t,
                               std::span<const xmodal::PatchSet* const> patches, const NoiseSchedule& schedule,
                               const ad::Tensor<float>& z);

// Ancestral sampling from x_T ~ N(0, I). Row b draws all its noise from an
// rng seeded with seeds[b], so each row is a pure function of
// (model, patches[b], seeds[b]) regardless of how rows are batched.
ad::Tensor<float> sample(const NoiseModel& model, std::span<const xmodal::PatchSet* const> patches,
                         const NoiseSchedule& schedule, std::span<const std::uint64_t> seeds);

struct TrainingData {
    ad::Tensor<float> profiles;                        // N x G, z-scored
    std::vector<const xmodal::PatchSet*> patches;      // N
};

struct TrainOptions {
    int epochs = 1;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    ad::AdamConfig adam{};
    double ema_decay = 0.0;  // per-step decay of the parameter average; 0 disables
};

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    std::size_t steps = 0;
};

// Runs epochs [start_epoch, options.epochs). The shuffling and
// noise of epoch e depend only on (options.seed, e), so a run resumed from a
// saved optimizer state and epoch reproduces the uninterrupted trajectory.
// With options.ema_decay > 0 and `ema` given, `ema` tracks an exponential
// moving average of the parameters (seeded from them when empty); sampling
// from the average is much less noisy than from the last iterate.
std::vector<EpochLog> train(TrainableNoiseModel& model, const TrainingData& data, const NoiseSchedule& schedule,
                            const TrainOptions& options, ad::OptimizerState<float>& state, int start_epoch = 0,
                            const std::function<void(const EpochLog&)>& on_epoch = {},
                            ad::ParamStore<float>* ema = nullptr);

// ema = decay * ema + (1 - decay) * params, entry by entry.
void update_average(ad::ParamStore<float>& ema, const ad::ParamStore<float>& params, double decay);

}  // namespace pathgen::diffusion
