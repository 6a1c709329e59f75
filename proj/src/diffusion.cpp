#include "pathgen/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pathgen::diffusion {

using ad::Graph;
using ad::Tensor;
using ad::Var;

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    if (beta_.empty()) throw ConfigError("noise schedule needs at least one step");
    double running = 1.0;
    double previous_bar = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
        const double b = beta_[i];
        if (!(b > 0.0 && b < 1.0)) throw ConfigError("noise schedule: beta must lie in (0, 1)");
        if (i > 0 && b < beta_[i - 1]) throw ConfigError("noise schedule: betas must be non-decreasing");
        alpha_.push_back(1.0 - b);
        running *= 1.0 - b;
        alpha_bar_.push_back(running);
        const double tilde = (1.0 - previous_bar) / (1.0 - running) * b;
        beta_tilde_.push_back(tilde);
        sigma_.push_back(std::sqrt(tilde));
        previous_bar = running;
    }
}

std::size_t NoiseSchedule::index(int t) const {
    if (t < 1 || t > steps())
        throw ConfigError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
    return static_cast<std::size_t>(t - 1);
}

NoiseSchedule build_schedule(int steps, double beta_start, double beta_end, ScheduleShape shape) {
    if (steps < 1) throw ConfigError("schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(static_cast<std::size_t>(steps));
    switch (shape) {
        case ScheduleShape::Linear:
            for (int i = 0; i < steps; ++i)
                betas[i] = steps == 1 ? beta_start
                                      : beta_start + (beta_end - beta_start) * i / static_cast<double>(steps - 1);
            break;
    }
    return NoiseSchedule(std::move(betas));
}

namespace {

template <typename T>
std::vector<T> forward_impl(std::span<const T> x0, int t, std::span<const T> eps, const NoiseSchedule& schedule) {
    if (x0.size() != eps.size()) throw ShapeError("forward_sample: x0 and eps differ in length");
    const double ab = schedule.alpha_bar(t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    std::vector<T> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = static_cast<T>(a * x0[i] + b * eps[i]);
    return out;
}

template <typename T>
std::vector<T> reverse_impl(std::span<const T> x_t, std::span<const T> eps_hat, int t, std::span<const T> z,
                            const NoiseSchedule& schedule) {
    if (x_t.size() != eps_hat.size()) throw ShapeError("reverse_update: x_t and eps_hat differ in length");
    const bool noisy = t > 1;
    if (noisy && z.size() != x_t.size()) throw ShapeError("reverse_update: z has the wrong length");
    const double alpha = schedule.alpha(t);
    const double coef = (1.0 - alpha) / std::sqrt(1.0 - schedule.alpha_bar(t));
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    const double sigma = schedule.sigma(t);
    std::vector<T> out(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i) {
        double v = inv_sqrt_alpha * (x_t[i] - coef * eps_hat[i]);
        if (noisy) v += sigma * z[i];
        out[i] = static_cast<T>(v);
    }
    return out;
}

}  // namespace

std::vector<float> forward_sample(std::span<const float> x0, int t, std::span<const float> eps,
                                  const NoiseSchedule& schedule) {
    return forward_impl(x0, t, eps, schedule);
}

std::vector<double> forward_sample(std::span<const double> x0, int t, std::span<const double> eps,
                                   const NoiseSchedule& schedule) {
    return forward_impl(x0, t, eps, schedule);
}

std::vector<float> reverse_update(std::span<const float> x_t, std::span<const float> eps_hat, int t,
                                  std::span<const float> z, const NoiseSchedule& schedule) {
    return reverse_impl(x_t, eps_hat, t, z, schedule);
}

std::vector<double> reverse_update(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                                   std::span<const double> z, const NoiseSchedule& schedule) {
    return reverse_impl(x_t, eps_hat, t, z, schedule);
}

Tensor<float> TrainableNoiseModel::predict(const Tensor<float>& x_t, std::span<const int> t,
                                           std::span<const xmodal::PatchSet* const> patches) const {
    Graph<float> g;
    return build(g, g.input(x_t), t, patches).value();
}

PathGenModel::PathGenModel(xmodal::PathGenConfig config, ad::ParamStore<float> params)
    : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
}

PathGenModel::PathGenModel(xmodal::PathGenConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(xmodal::init_pathgen(config_, seed)) {}

Var<float> PathGenModel::build(Graph<float>& g, Var<float> x_t, std::span<const int> t,
                               std::span<const xmodal::PatchSet* const> patches) const {
    std::vector<std::size_t> counts;
    Var<float> stacked = g.input(xmodal::stack_patches(patches, counts));
    return xmodal::pathgen_eps(g, params_, config_, x_t, t, stacked, counts).eps;
}

TrainStepResult train_step(const TrainableNoiseModel& model, const Tensor<float>& x0,
                           std::span<const xmodal::PatchSet* const> patches, const NoiseSchedule& schedule, Rng& rng) {
    const std::size_t batch = x0.rows();
    const std::size_t dim = x0.cols();
    if (dim != model.dim()) throw ShapeError("train_step: profile width does not match the model");
    if (patches.size() != batch) throw ShapeError("train_step: one patch set per row required");

    TrainStepResult result;
    std::uniform_int_distribution<int> pick_t(1, schedule.steps());
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor<float> eps = Tensor<float>::matrix(batch, dim);
    Tensor<float> x_t = Tensor<float>::matrix(batch, dim);
    result.timesteps.resize(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const int t = pick_t(rng);
        result.timesteps[b] = t;
        for (auto& v : eps.row_span(b)) v = static_cast<float>(normal(rng));
        const auto row = forward_sample(x0.row_span(b), t, eps.row_span(b), schedule);
        std::copy(row.begin(), row.end(), x_t.row_span(b).begin());
    }

    Graph<float> g;
    Var<float> predicted = model.build(g, g.input(x_t), result.timesteps, patches);
    Var<float> loss = ad::scale(ad::sum_squares(ad::sub(g.input(eps), predicted)), 1.0 / static_cast<double>(batch * dim));
    result.loss = loss.value()[0];
    if (!std::isfinite(result.loss)) throw NumericError("train_step: non-finite loss");
    result.grads = g.gradient(loss);
    return result;
}

Tensor<float> reverse_step(const NoiseModel& model, const Tensor<float>& x_t, int t,
                           std::span<const xmodal::PatchSet* const> patches, const NoiseSchedule& schedule,
                           const Tensor<float>& z) {
    const std::vector<int> ts(x_t.rows(), t);
    const Tensor<float> eps_hat = model.predict(x_t, ts, patches);
    Tensor<float> out = Tensor<float>::matrix(x_t.rows(), x_t.cols());
    for (std::size_t b = 0; b < x_t.rows(); ++b) {
        const std::span<const float> zrow = t > 1 ? z.row_span(b) : std::span<const float>{};
        const auto row = reverse_update(x_t.row_span(b), eps_hat.row_span(b), t, zrow, schedule);
        std::copy(row.begin(), row.end(), out.row_span(b).begin());
    }
    return out;
}

Tensor<float> sample(const NoiseModel& model, std::span<const xmodal::PatchSet* const> patches,
                     const NoiseSchedule& schedule, std::span<const std::uint64_t> seeds) {
    const std::size_t batch = patches.size();
    const std::size_t dim = model.dim();
    if (seeds.size() != batch) throw ShapeError("sample: one seed per patch set required");
    // One distribution per row: normal_distribution caches values between calls.
    std::vector<Rng> rngs;
    std::vector<std::normal_distribution<double>> normals(batch);
    rngs.reserve(batch);
    for (auto s : seeds) rngs.emplace_back(s);

    Tensor<float> x = Tensor<float>::matrix(batch, dim);
    for (std::size_t b = 0; b < batch; ++b)
        for (auto& v : x.row_span(b)) v = static_cast<float>(normals[b](rngs[b]));
    Tensor<float> z = Tensor<float>::matrix(batch, dim);
    for (int t = schedule.steps(); t >= 1; --t) {
        if (t > 1) {
            for (std::size_t b = 0; b < batch; ++b)
                for (auto& v : z.row_span(b)) v = static_cast<float>(normals[b](rngs[b]));
        } else {
            z.fill(0.0f);
        }
        x = reverse_step(model, x, t, patches, schedule, z);
        if (!x.all_finite()) throw NumericError("sample: non-finite state at t=" + std::to_string(t));
    }
    return x;
}

std::vector<EpochLog> train(TrainableNoiseModel& model, const TrainingData& data, const NoiseSchedule& schedule,
                            const TrainOptions& options, ad::OptimizerState<float>& state, int start_epoch,
                            const std::function<void(const EpochLog&)>& on_epoch, ad::ParamStore<float>* ema) {
    const std::size_t n = data.profiles.rows();
    if (!(options.ema_decay >= 0.0 && options.ema_decay < 1.0)) throw ConfigError("ema decay must be in [0, 1)");
    const bool averaging = ema != nullptr && options.ema_decay > 0.0;
    if (averaging && ema->size() == 0) *ema = model.params();
    if (n == 0 || data.patches.size() != n) throw DataError("diffusion train: empty or misaligned training data");
    if (options.batch_size == 0) throw ConfigError("diffusion train: batch size must be positive");
    state.config = options.adam;
    std::vector<EpochLog> logs;
    for (int epoch = start_epoch; epoch < options.epochs; ++epoch) {
        Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);

        EpochLog log;
        log.epoch = epoch;
        double total = 0.0;
        for (std::size_t start = 0; start < n; start += options.batch_size) {
            const std::size_t count = std::min(options.batch_size, n - start);
            Tensor<float> x0 = Tensor<float>::matrix(count, data.profiles.cols());
            std::vector<const xmodal::PatchSet*> patches(count);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t src = order[start + i];
                std::copy(data.profiles.row_span(src).begin(), data.profiles.row_span(src).end(),
                          x0.row_span(i).begin());
                patches[i] = data.patches[src];
            }
            TrainStepResult step = train_step(model, x0, patches, schedule, rng);
            ad::adam_step(model.params(), step.grads, state);
            if (averaging) update_average(*ema, model.params(), options.ema_decay);
            total += step.loss;
            ++log.steps;
        }
        log.mean_loss = total / static_cast<double>(log.steps);
        logs.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    return logs;
}

void update_average(ad::ParamStore<float>& ema, const ad::ParamStore<float>& params, double decay) {
    for (const auto& [name, value] : params.tensors()) {
        Tensor<float>& avg = ema.at(name);
        if (avg.shape() != value.shape()) throw ShapeError("update_average: shape mismatch for '" + name + "'");
        const float keep = static_cast<float>(decay), take = static_cast<float>(1.0 - decay);
        for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = keep * avg[i] + take * value[i];
    }
}

}  // namespace pathgen::diffusion
