#include "pathgen/pipeline.hpp"

#include <cmath>
#include <limits>

#include "pathgen/error.hpp"
#include "pathgen/random.hpp"

namespace pathgen::pipeline {

using io::json;

std::uint64_t stream_seed(const RunConfig& config, SeedStream stream) {
    return derive_seed(config.seed, static_cast<std::uint64_t>(stream));
}

json seed_lineage(const RunConfig& config) {
    return {{"seed", config.seed},
            {"cohort_seed", config.cohort.seed},
            {"pathgen_init", stream_seed(config, SeedStream::PathGenInit)},
            {"pathgen_train", stream_seed(config, SeedStream::PathGenTrain)},
            {"sample", stream_seed(config, SeedStream::Sample)},
            {"predictor_init", stream_seed(config, SeedStream::PredictorInit)},
            {"predictor_train", stream_seed(config, SeedStream::PredictorTrain)}};
}

diffusion::NoiseSchedule make_schedule(const RunConfig& config) {
    return diffusion::build_schedule(config.timesteps, config.beta_start, config.beta_end);
}

namespace {

diffusion::TrainOptions pathgen_options(const RunConfig& config, int epochs) {
    diffusion::TrainOptions o;
    o.epochs = epochs;
    o.batch_size = config.pathgen_batch;
    o.seed = stream_seed(config, SeedStream::PathGenTrain);
    o.adam.learning_rate = config.pathgen_lr;
    o.ema_decay = config.ema_decay;
    return o;
}

predictor::PredictorTrainOptions predictor_options(const RunConfig& config, int epochs) {
    predictor::PredictorTrainOptions o;
    o.epochs = epochs;
    o.batch_size = config.predictor_batch;
    o.seed = stream_seed(config, SeedStream::PredictorTrain);
    o.lambda = config.lambda;
    o.assignment = config.assignment;
    o.adam.learning_rate = config.predictor_lr;
    return o;
}

}  // namespace

PathGenState init_pathgen(const RunConfig& config) {
    config.validate();
    PathGenState s;
    s.params = xmodal::init_pathgen(config.pathgen, stream_seed(config, SeedStream::PathGenInit));
    s.optimizer = ad::make_optimizer_state(s.params, pathgen_options(config, 0).adam);
    return s;
}

void train_pathgen(PathGenState& state, const synth::Cohort& cohort, const RunConfig& config, int until_epoch,
                   const std::function<void(const diffusion::EpochLog&)>& on_epoch) {
    const auto train = cohort.split(synth::Split::Train);
    if (train.empty()) throw DataError("training split is empty");
    const std::size_t G = config.cohort.layout().total();
    diffusion::TrainingData data;
    data.profiles = ad::Tensor<float>::matrix(train.size(), G);
    for (std::size_t i = 0; i < train.size(); ++i) {
        train[i]->genes.validate(config.cohort.layout());
        std::copy(train[i]->genes.values.begin(), train[i]->genes.values.end(), data.profiles.row_span(i).begin());
        data.patches.push_back(&train[i]->patches);
    }
    diffusion::PathGenModel model(config.pathgen, std::move(state.params));
    const auto schedule = make_schedule(config);
    auto record = [&](const diffusion::EpochLog& log) {
        if (!std::isfinite(log.mean_loss)) throw NumericError("pathgen loss is not finite at epoch " + std::to_string(log.epoch));
        state.log.push_back(log);
        state.epoch = log.epoch + 1;
        if (on_epoch) on_epoch(log);
    };
    try {
        diffusion::train(model, data, schedule, pathgen_options(config, until_epoch), state.optimizer, state.epoch,
                         record, config.ema_decay > 0 ? &state.average : nullptr);
    } catch (...) {
        state.params = std::move(model.params());
        throw;
    }
    state.params = std::move(model.params());
}

const ad::ParamStore<float>& sampling_params(const PathGenState& state) {
    return state.average.size() > 0 ? state.average : state.params;
}

io::Checkpoint pathgen_checkpoint(const PathGenState& state, const RunConfig& config) {
    io::Checkpoint c;
    c.module = "pathgen";
    c.config = io::to_json(config);
    c.params = state.params;
    c.optimizer = state.optimizer;
    if (state.average.size() > 0) c.average = state.average;
    c.epoch = state.epoch;
    c.lineage = seed_lineage(config);
    c.log = json::array();
    for (const auto& l : state.log) c.log.push_back({{"epoch", l.epoch}, {"mean_loss", l.mean_loss}, {"steps", l.steps}});
    return c;
}

PathGenState pathgen_from_checkpoint(const io::Checkpoint& ckpt) {
    if (ckpt.module != "pathgen") throw ConfigError("expected a pathgen checkpoint, got '" + ckpt.module + "'");
    PathGenState s;
    s.params = ckpt.params;
    if (!ckpt.optimizer) throw DataError("pathgen checkpoint has no optimizer state");
    s.optimizer = *ckpt.optimizer;
    if (ckpt.average) s.average = *ckpt.average;
    s.epoch = ckpt.epoch;
    for (const auto& l : ckpt.log)
        s.log.push_back({l.at("epoch").get<int>(), l.at("mean_loss").get<double>(), l.at("steps").get<std::size_t>()});
    return s;
}

std::vector<std::vector<float>> synthesize(const diffusion::NoiseModel& model, const diffusion::NoiseSchedule& schedule,
                                           std::span<const synth::CaseRecord* const> cases, std::uint64_t seed,
                                           std::size_t batch) {
    if (cases.empty()) throw DataError("no cases to synthesize");
    if (batch == 0) throw ConfigError("synthesis batch must be >= 1");
    std::vector<std::vector<float>> out;
    out.reserve(cases.size());
    for (std::size_t start = 0; start < cases.size(); start += batch) {
        const std::size_t count = std::min(batch, cases.size() - start);
        std::vector<const xmodal::PatchSet*> patches;
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = start; i < start + count; ++i) {
            patches.push_back(&cases[i]->patches);
            seeds.push_back(derive_seed(seed, io::fnv1a(cases[i]->id)));
        }
        const auto rows = diffusion::sample(model, patches, schedule, seeds);
        if (!rows.all_finite()) throw NumericError("synthesized profiles contain non-finite values");
        for (std::size_t r = 0; r < count; ++r) out.emplace_back(rows.row_span(r).begin(), rows.row_span(r).end());
    }
    return out;
}

std::vector<SimilarityRow> similarity_report(std::span<const std::vector<float>> real,
                                             std::span<const std::vector<float>> synthesized,
                                             const xmodal::GeneLayout& layout) {
    if (real.size() != synthesized.size()) throw ShapeError("similarity: real and synthesized case counts differ");
    if (real.empty()) throw DataError("similarity: no cases");
    for (std::size_t i = 0; i < real.size(); ++i)
        if (real[i].size() != layout.total() || synthesized[i].size() != layout.total())
            throw ShapeError("similarity: profile length differs from the gene layout");
    auto row = [&](std::string name, std::size_t begin, std::size_t end) {
        std::vector<double> a, b;
        for (std::size_t i = 0; i < real.size(); ++i)
            for (std::size_t g = begin; g < end; ++g) {
                a.push_back(real[i][g]);
                b.push_back(synthesized[i][g]);
            }
        SimilarityRow r;
        r.group = std::move(name);
        r.genes = end - begin;
        const auto c = metrics::spearman(a, b);
        r.spearman = c.rho;
        r.spearman_p = c.p_value;
        r.mae = metrics::mae(a, b);
        r.t_test_p = metrics::unpaired_t_test(a, b);
        return r;
    };
    std::vector<SimilarityRow> rows;
    for (std::size_t k = 0; k < xmodal::kGroupCount; ++k)
        rows.push_back(row(std::string(xmodal::kGroupNames[k]), layout.offset(k), layout.offset(k) + layout.size(k)));
    rows.push_back(row("all", 0, layout.total()));
    return rows;
}

json to_json(std::span<const SimilarityRow> rows) {
    json out = json::array();
    for (const auto& r : rows)
        out.push_back({{"group", r.group},
                       {"genes", r.genes},
                       {"spearman", r.spearman},
                       {"spearman_p", r.spearman_p},
                       {"mae", r.mae},
                       {"t_test_p", r.t_test_p}});
    return out;
}

std::vector<predictor::Example> make_examples(std::span<const synth::CaseRecord* const> cases,
                                              std::span<const std::vector<float>> profiles) {
    if (!profiles.empty() && profiles.size() != cases.size())
        throw ShapeError("examples: profile count differs from case count");
    std::vector<predictor::Example> out;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& c = *cases[i];
        std::span<const float> profile = profiles.empty() ? std::span<const float>(c.genes.values) : profiles[i];
        out.push_back({&c.patches, profile, c.grade, c.survival});
    }
    return out;
}

double mean_joint_loss(const ad::ParamStore<float>& params, const predictor::PredictorConfig& config,
                       std::span<const predictor::Example> examples, double lambda,
                       predictor::LambdaAssignment assignment) {
    if (examples.empty()) throw DataError("mean loss over an empty set");
    const auto out = predictor::predict(params, config, examples);
    double total = 0.0;
    for (std::size_t i = 0; i < examples.size(); ++i)
        total += predictor::joint_loss(predictor::grade_loss(out[i].grade_probs, examples[i].grade),
                                       predictor::survival_nll_loss(out[i].hazards, examples[i].survival), lambda,
                                       assignment);
    return total / static_cast<double>(examples.size());
}

PredictorState init_predictor(const RunConfig& config) {
    config.validate();
    PredictorState s;
    s.params = predictor::init_mcat_gr(config.predictor, stream_seed(config, SeedStream::PredictorInit));
    s.optimizer = ad::make_optimizer_state(s.params, predictor_options(config, 0).adam);
    return s;
}

void train_predictor(PredictorState& state, std::span<const predictor::Example> train,
                     std::span<const predictor::Example> val, const RunConfig& config, int until_epoch,
                     const std::function<void(const PredictorEpoch&)>& on_epoch) {
    if (train.empty()) throw DataError("predictor training set is empty");
    for (int epoch = state.epoch; epoch < until_epoch; ++epoch) {
        const auto logs = predictor::train_predictor(state.params, config.predictor, train,
                                                     predictor_options(config, epoch + 1), state.optimizer, epoch);
        PredictorEpoch e;
        e.train = logs.at(0);
        if (!std::isfinite(e.train.mean_loss)) throw NumericError("predictor loss is not finite at epoch " + std::to_string(epoch));
        if (!val.empty()) {
            e.val_loss = mean_joint_loss(state.params, config.predictor, val, config.lambda, config.assignment);
            if (state.best_epoch < 0 || *e.val_loss < state.best_val) {
                state.best = state.params;
                state.best_epoch = epoch;
                state.best_val = *e.val_loss;
            }
        }
        state.log.push_back(e);
        state.epoch = epoch + 1;
        if (on_epoch) on_epoch(e);
    }
}

const ad::ParamStore<float>& final_params(const PredictorState& state, const RunConfig& config) {
    if (config.select_on_validation) {
        if (state.best_epoch < 0) throw DataError("validation selection requested but no validation scores recorded");
        return state.best;
    }
    return state.params;
}

io::Checkpoint predictor_checkpoint(const PredictorState& state, const RunConfig& config) {
    io::Checkpoint c;
    c.module = "mcat_gr";
    c.config = io::to_json(config);
    c.params = state.params;
    c.optimizer = state.optimizer;
    if (state.best_epoch >= 0) c.best = state.best;
    c.epoch = state.epoch;
    c.lineage = seed_lineage(config);
    c.lineage["best_epoch"] = state.best_epoch;
    c.lineage["best_val_loss"] = state.best_val;
    c.log = json::array();
    for (const auto& e : state.log) {
        json r = {{"epoch", e.train.epoch},
                  {"mean_loss", e.train.mean_loss},
                  {"mean_grade_loss", e.train.mean_grade_loss},
                  {"mean_survival_loss", e.train.mean_survival_loss}};
        r["val_loss"] = e.val_loss ? json(*e.val_loss) : json(nullptr);
        c.log.push_back(r);
    }
    return c;
}

PredictorState predictor_from_checkpoint(const io::Checkpoint& ckpt) {
    if (ckpt.module != "mcat_gr") throw ConfigError("expected an mcat_gr checkpoint, got '" + ckpt.module + "'");
    PredictorState s;
    s.params = ckpt.params;
    if (!ckpt.optimizer) throw DataError("predictor checkpoint has no optimizer state");
    s.optimizer = *ckpt.optimizer;
    s.epoch = ckpt.epoch;
    s.best_epoch = ckpt.lineage.value("best_epoch", -1);
    s.best_val = ckpt.lineage.value("best_val_loss", 0.0);
    if (ckpt.best) s.best = *ckpt.best;
    for (const auto& r : ckpt.log) {
        PredictorEpoch e;
        e.train = {r.at("epoch").get<int>(), r.at("mean_loss").get<double>(), r.at("mean_grade_loss").get<double>(),
                   r.at("mean_survival_loss").get<double>()};
        if (!r.at("val_loss").is_null()) e.val_loss = r.at("val_loss").get<double>();
        s.log.push_back(e);
    }
    return s;
}

Calibration calibrate(std::span<const predictor::PredictorOutput> outputs,
                      std::span<const predictor::Example> examples, double alpha) {
    if (outputs.size() != examples.size()) throw ShapeError("calibrate: outputs and examples differ in length");
    std::vector<std::vector<double>> probs;
    std::vector<int> grades, bins;
    std::vector<double> risks;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        probs.push_back(outputs[i].grade_probs);
        grades.push_back(examples[i].grade);
        risks.push_back(outputs[i].risk);
        bins.push_back(examples[i].survival.time_bin);
    }
    return {conformal::calibrate_gradation(probs, grades, alpha), conformal::calibrate_risk(risks, bins, alpha)};
}

json to_json(const Calibration& cal) {
    json bins = json::array();
    for (const auto& b : cal.risk.bins) bins.push_back({b.lower, b.upper});
    return {{"grade", {{"q_hat", cal.grade.q_hat}, {"alpha", cal.grade.alpha}, {"n_cal", cal.grade.n_cal},
                       {"n_classes", cal.grade.n_classes}, {"guaranteed", cal.grade.guaranteed}}},
            {"risk", {{"q_hat", cal.risk.q_hat}, {"alpha", cal.risk.alpha}, {"n_cal", cal.risk.n_cal},
                      {"bins", bins}, {"guaranteed", cal.risk.guaranteed}}}};
}

Calibration calibration_from_json(const json& j) {
    Calibration c;
    try {
        const json& g = j.at("grade");
        c.grade.q_hat = g.at("q_hat").get<double>();
        c.grade.alpha = g.at("alpha").get<double>();
        c.grade.n_cal = g.at("n_cal").get<std::size_t>();
        c.grade.n_classes = g.at("n_classes").get<std::size_t>();
        c.grade.guaranteed = g.at("guaranteed").get<bool>();
        const json& r = j.at("risk");
        c.risk.q_hat = r.at("q_hat").get<double>();
        c.risk.alpha = r.at("alpha").get<double>();
        c.risk.n_cal = r.at("n_cal").get<std::size_t>();
        c.risk.guaranteed = r.at("guaranteed").get<bool>();
        const auto bins = r.at("bins").get<std::vector<std::array<double, 2>>>();
        if (bins.size() != conformal::kRiskBins) throw DataError("calibration: expected 4 risk bins");
        for (std::size_t k = 0; k < bins.size(); ++k) c.risk.bins[k] = {bins[k][0], bins[k][1]};
    } catch (const json::exception& e) {
        throw DataError(std::string("calibration: ") + e.what());
    }
    return c;
}

metrics::CaseResult case_result(const synth::CaseRecord& record, const predictor::PredictorOutput& out,
                                const Calibration& cal) {
    metrics::CaseResult r;
    r.grade_probs = out.grade_probs;
    r.grade = record.grade;
    r.risk = out.risk;
    r.time = record.survival.time;
    r.censored = record.survival.censored;
    r.time_bin = record.survival.time_bin;
    r.grade_set = conformal::grade_set(out.grade_probs, cal.grade);
    r.risk_set = conformal::risk_interval(out.risk, cal.risk);
    r.grade_uncertainty = conformal::grade_uncertainty(r.grade_set, out.grade_probs.size());
    r.risk_uncertainty = conformal::risk_uncertainty(r.risk_set);
    r.gender = record.gender;
    r.age = record.age;
    r.magnification = record.magnification;
    return r;
}

json prediction_record(const std::string& id, const metrics::CaseResult& r) {
    return {{"id", id},
            {"grade_probs", r.grade_probs},
            {"grade", r.grade},
            {"grade_set", r.grade_set.members},
            {"grade_uncertainty", r.grade_uncertainty},
            {"risk", r.risk},
            {"risk_interval", {r.risk_set.lower, r.risk_set.upper}},
            {"risk_bins", r.risk_set.members},
            {"risk_uncertainty", r.risk_uncertainty},
            {"time", r.time},
            {"censored", r.censored},
            {"time_bin", r.time_bin}};
}

namespace {

json group_json(const metrics::GroupMetrics& g) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"dimension", g.dimension},
            {"value", g.value},
            {"count", g.count},
            {"auc", opt(g.auc)},
            {"c_index", opt(g.c_index)},
            {"mean_grade_uncertainty", g.mean_grade_uncertainty},
            {"mean_risk_uncertainty", g.mean_risk_uncertainty},
            {"grade_coverage", g.grade_coverage},
            {"risk_coverage", g.risk_coverage}};
}

}  // namespace

json to_json(const metrics::EvalReport& report) {
    json groups = json::array();
    for (const auto& g : report.groups) groups.push_back(group_json(g));
    return {{"overall", group_json(report.overall)}, {"groups", groups}};
}

TaskScores score(std::span<const predictor::PredictorOutput> outputs, std::span<const predictor::Example> examples) {
    if (outputs.size() != examples.size()) throw ShapeError("score: outputs and examples differ in length");
    std::vector<std::vector<double>> probs;
    std::vector<int> grades;
    std::vector<double> risks, times;
    std::vector<bool> events;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        probs.push_back(outputs[i].grade_probs);
        grades.push_back(examples[i].grade);
        risks.push_back(outputs[i].risk);
        times.push_back(examples[i].survival.time);
        events.push_back(!examples[i].survival.censored);
    }
    const auto ci = metrics::c_index(risks, times, events);
    return {metrics::auc_ovr(probs, grades), ci.value_or(std::numeric_limits<double>::quiet_NaN())};
}

}  // namespace pathgen::pipeline
