#include <doctest.h>

#include <cmath>
#include <map>

#include "pathgen/error.hpp"
#include "pathgen/pipeline.hpp"
#include "tiny_config.hpp"

using namespace pathgen;
using namespace pathgen::pipeline;
using io::json;

namespace {

// Returns the exact noise for each row's true profile, looked up by patch set:
// sampling with it reproduces the real transcriptome.
class EchoModel final : public diffusion::NoiseModel {
public:
    EchoModel(const diffusion::NoiseSchedule& s, const synth::Cohort& cohort) : schedule_(s) {
        for (const auto& c : cohort.cases) truth_[&c.patches] = &c.genes.values;
        dim_ = cohort.config.layout().total();
    }
    std::size_t dim() const override { return dim_; }
    ad::Tensor<float> predict(const ad::Tensor<float>& x_t, std::span<const int> t,
                              std::span<const xmodal::PatchSet* const> patches) const override {
        ad::Tensor<float> out = ad::Tensor<float>::matrix(x_t.rows(), x_t.cols());
        for (std::size_t b = 0; b < x_t.rows(); ++b) {
            const double ab = schedule_.alpha_bar(t[b]);
            const auto& x0 = *truth_.at(patches[b]);
            for (std::size_t g = 0; g < x_t.cols(); ++g)
                out(b, g) = static_cast<float>((x_t(b, g) - std::sqrt(ab) * x0[g]) / std::sqrt(1 - ab));
        }
        return out;
    }

private:
    const diffusion::NoiseSchedule& schedule_;
    std::map<const xmodal::PatchSet*, const std::vector<float>*> truth_;
    std::size_t dim_ = 0;
};

std::vector<std::vector<float>> real_profiles(std::span<const synth::CaseRecord* const> cases) {
    std::vector<std::vector<float>> out;
    for (const auto* c : cases) out.push_back(c->genes.values);
    return out;
}

}  // namespace

TEST_CASE("echo model synthesis reproduces the real profiles") {
    const auto cfg = tiny_run_config(2);
    const auto cohort = synth::generate_cohort(cfg.cohort);
    const auto schedule = make_schedule(cfg);
    const EchoModel echo(schedule, cohort);
    const auto test = cohort.split(synth::Split::Test);
    const auto synth = synthesize(echo, schedule, test, 11);
    const auto rows = similarity_report(real_profiles(test), synth, cfg.cohort.layout());
    REQUIRE(rows.size() == 7);
    for (std::size_t k = 0; k < 6; ++k) CHECK(rows[k].group == xmodal::kGroupNames[k]);
    CHECK(rows[6].group == "all");
    CHECK(rows[6].genes == cfg.cohort.layout().total());
    for (const auto& r : rows) {
        CHECK(r.spearman == doctest::Approx(1.0));
        CHECK(r.mae < 1e-4);
    }
    CHECK(to_json(rows).size() == 7);
}

TEST_CASE("synthesis does not depend on batching") {
    const auto cfg = tiny_run_config(2);
    const auto cohort = synth::generate_cohort(cfg.cohort);
    const auto state = init_pathgen(cfg);
    const diffusion::PathGenModel model(cfg.pathgen, state.params);
    const auto schedule = make_schedule(cfg);
    const auto val = cohort.split(synth::Split::Val);
    const auto a = synthesize(model, schedule, val, 5, 64);
    const auto b = synthesize(model, schedule, val, 5, 3);
    // Same noise per row; batch composition only changes GEMM rounding.
    auto max_diff = [](const std::vector<std::vector<float>>& x, const std::vector<std::vector<float>>& y) {
        double d = 0;
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t g = 0; g < x[i].size(); ++g) d = std::max(d, double(std::abs(x[i][g] - y[i][g])));
        return d;
    };
    CHECK(max_diff(a, b) < 1e-4);
    const std::vector<const synth::CaseRecord*> one = {val[2]};
    CHECK(max_diff(synthesize(model, schedule, one, 5), {a[2]}) < 1e-4);
    CHECK(max_diff(synthesize(model, schedule, val, 6), a) > 0.1);
    CHECK(synthesize(model, schedule, val, 5, 3) == b);
    CHECK_THROWS_AS(synthesize(model, schedule, std::span<const synth::CaseRecord* const>{}, 5), DataError);
}

TEST_CASE("similarity report rejects mismatched input") {
    const xmodal::GeneLayout layout({1, 1, 1, 1, 1, 1});
    std::vector<std::vector<float>> a(3, std::vector<float>(6, 0.0f)), b(2, std::vector<float>(6, 0.0f));
    CHECK_THROWS_AS(similarity_report(a, b, layout), ShapeError);
    b.assign(3, std::vector<float>(5, 0.0f));
    CHECK_THROWS_AS(similarity_report(a, b, layout), ShapeError);
}

TEST_CASE("pathgen training resumes to the same trajectory") {
    const auto cfg = tiny_run_config(3);
    const auto cohort = synth::generate_cohort(cfg.cohort);

    auto fresh = init_pathgen(cfg);
    train_pathgen(fresh, cohort, cfg, 3);
    CHECK(fresh.epoch == 3);
    CHECK(fresh.log.size() == 3);
    CHECK(fresh.average.size() == fresh.params.size());

    auto first = init_pathgen(cfg);
    train_pathgen(first, cohort, cfg, 1);
    auto resumed = pathgen_from_checkpoint(io::decode_checkpoint(io::encode_checkpoint(pathgen_checkpoint(first, cfg))));
    train_pathgen(resumed, cohort, cfg, 3);

    CHECK(resumed.params == fresh.params);
    CHECK(resumed.average == fresh.average);
    CHECK(resumed.optimizer == fresh.optimizer);
    REQUIRE(resumed.log.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) CHECK(resumed.log[e].mean_loss == fresh.log[e].mean_loss);
    CHECK(io::encode_checkpoint(pathgen_checkpoint(resumed, cfg)) == io::encode_checkpoint(pathgen_checkpoint(fresh, cfg)));

    auto other = cfg;
    other.seed = 4;
    auto different = init_pathgen(other);
    train_pathgen(different, cohort, other, 1);
    CHECK(different.params != first.params);
    CHECK_THROWS_AS(predictor_from_checkpoint(pathgen_checkpoint(first, cfg)), ConfigError);
}

TEST_CASE("predictor training resumes and selects on validation") {
    const auto cfg = tiny_run_config(5);
    const auto cohort = synth::generate_cohort(cfg.cohort);
    const auto tr_cases = cohort.split(synth::Split::Train);
    const auto va_cases = cohort.split(synth::Split::Val);
    const auto train = make_examples(tr_cases);
    const auto val = make_examples(va_cases);

    auto fresh = init_predictor(cfg);
    train_predictor(fresh, train, val, cfg, 3);
    REQUIRE(fresh.log.size() == 3);
    double best = 1e300;
    int best_epoch = -1;
    for (const auto& e : fresh.log) {
        REQUIRE(e.val_loss.has_value());
        if (*e.val_loss < best) {
            best = *e.val_loss;
            best_epoch = e.train.epoch;
        }
    }
    CHECK(fresh.best_epoch == best_epoch);
    CHECK(fresh.best_val == best);
    CHECK(mean_joint_loss(final_params(fresh, cfg), cfg.predictor, val, cfg.lambda, cfg.assignment) == best);
    auto no_select = cfg;
    no_select.select_on_validation = false;
    CHECK(&final_params(fresh, no_select) == &fresh.params);

    auto first = init_predictor(cfg);
    train_predictor(first, train, val, cfg, 2);
    auto resumed =
        predictor_from_checkpoint(io::decode_checkpoint(io::encode_checkpoint(predictor_checkpoint(first, cfg))));
    train_predictor(resumed, train, val, cfg, 3);
    CHECK(resumed.params == fresh.params);
    CHECK(resumed.best == fresh.best);
    CHECK(resumed.best_epoch == fresh.best_epoch);
    CHECK(io::encode_checkpoint(predictor_checkpoint(resumed, cfg)) ==
          io::encode_checkpoint(predictor_checkpoint(fresh, cfg)));
}

TEST_CASE("mean joint loss matches the per-case formula") {
    const auto cfg = tiny_run_config(6);
    const auto cohort = synth::generate_cohort(cfg.cohort);
    const auto cases = cohort.split(synth::Split::Test);
    const auto ex = make_examples(cases);
    const auto state = init_predictor(cfg);
    const auto out = predictor::predict(state.params, cfg.predictor, ex);
    for (double lambda : {0.0, 0.3, 1.0}) {
        double total = 0;
        for (std::size_t i = 0; i < ex.size(); ++i) {
            const double g = predictor::grade_loss(out[i].grade_probs, ex[i].grade);
            const double s = predictor::survival_nll_loss(out[i].hazards, ex[i].survival);
            total += lambda * s + (1 - lambda) * g;
        }
        CHECK(mean_joint_loss(state.params, cfg.predictor, ex, lambda, predictor::LambdaAssignment::SurvivalFirst) ==
              doctest::Approx(total / ex.size()).epsilon(1e-12));
    }
}

TEST_CASE("calibration behaviour on a trained predictor") {
    const auto cfg = tiny_run_config(7);
    const auto cohort = synth::generate_cohort(cfg.cohort);
    const auto cal_cases = cohort.split(synth::Split::Cal);
    const auto cal_ex = make_examples(cal_cases);
    auto state = init_predictor(cfg);
    const auto train = make_examples(cohort.split(synth::Split::Train));
    train_predictor(state, train, {}, cfg, 2);
    const auto out = predictor::predict(state.params, cfg.predictor, cal_ex);

    const auto loose = calibrate(out, cal_ex, 0.5);
    const auto tight = calibrate(out, cal_ex, 0.05);
    CHECK(loose.grade.q_hat <= tight.grade.q_hat);
    CHECK(loose.risk.q_hat <= tight.risk.q_hat);
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(case_result(*cal_cases[i], out[i], loose).grade_set.members.size() <=
              case_result(*cal_cases[i], out[i], tight).grade_set.members.size());
        CHECK(case_result(*cal_cases[i], out[i], loose).risk_set.members.size() <=
              case_result(*cal_cases[i], out[i], tight).risk_set.members.size());
    }

    // Evaluating on the calibration split itself covers at least 1 - alpha.
    for (double alpha : {0.1, 0.2, 0.3}) {
        const auto cal = calibrate(out, cal_ex, alpha);
        std::vector<metrics::CaseResult> results;
        for (std::size_t i = 0; i < out.size(); ++i) results.push_back(case_result(*cal_cases[i], out[i], cal));
        const auto report = metrics::stratified_report(results, {}, cfg.cohort.grades, cfg.cohort.magnification_levels);
        CHECK(report.overall.grade_coverage >= 1 - alpha);
        CHECK(report.overall.risk_coverage >= 1 - alpha);
        CHECK(to_json(report).at("overall").at("count") == out.size());
    }

    const auto cal = calibrate(out, cal_ex, 0.1);
    const json j = to_json(cal);
    CHECK(to_json(calibration_from_json(j)) == j);
    CHECK_THROWS_AS(calibration_from_json(json::object()), DataError);

    const auto rec = prediction_record(cal_cases[0]->id, case_result(*cal_cases[0], out[0], cal));
    const std::string line = rec.dump();
    CHECK(json::parse(line).dump() == line);
    CHECK(rec.at("grade_set").is_array());
    CHECK(rec.at("risk_interval").size() == 2);
}

TEST_CASE("score reports AUC and C-index") {
    const auto cfg = tiny_run_config(8);
    const auto cohort = synth::generate_cohort(cfg.cohort);
    const auto ex = make_examples(cohort.split(synth::Split::Train));
    const auto state = init_predictor(cfg);
    const auto out = predictor::predict(state.params, cfg.predictor, ex);
    const auto s = score(out, ex);
    CHECK(s.auc >= 0.0);
    CHECK(s.auc <= 1.0);
    CHECK(s.c_index >= 0.0);
    CHECK(s.c_index <= 1.0);
}
