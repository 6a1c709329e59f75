#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "pathgen/error.hpp"
#include "pathgen/io.hpp"
#include "pathgen/pipeline.hpp"

using namespace pathgen;
using io::json;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kConfigExit = 2, kDataExit = 3, kNumericExit = 4 };

void log_line(const json& j) { std::cerr << j.dump() << std::endl; }

void info(const std::string& event, json fields = json::object()) {
    fields["level"] = "info";
    fields["event"] = event;
    log_line(fields);
}

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> alpha;
    std::optional<double> lambda;
};

io::RunConfig apply_overrides(io::RunConfig c, const Common& o) {
    if (o.seed) c.seed = *o.seed;
    if (o.alpha) c.alpha = *o.alpha;
    if (o.lambda) c.lambda = *o.lambda;
    c.validate();
    return c;
}

io::RunConfig load_config(const Common& o) {
    io::RunConfig c = o.config.empty() ? io::RunConfig{} : io::load_run_config(o.config);
    c.sync_models();
    return apply_overrides(c, o);
}

io::RunConfig config_of(const io::Checkpoint& ckpt, const Common& o) {
    return apply_overrides(io::run_config_from_json(ckpt.config), o);
}

void check_cohort_matches(const synth::Cohort& cohort, const io::RunConfig& config) {
    if (cohort.config.layout() != config.cohort.layout() || cohort.config.patch_dim != config.cohort.patch_dim ||
        cohort.config.grades != config.cohort.grades)
        throw ShapeError("cohort shape (gene groups, patch dim, grades) differs from the run config");
}

// Synthesized profiles keyed by case id.
using ProfileMap = std::map<std::string, std::vector<float>>;

ProfileMap read_profiles(const fs::path& path) {
    const json j = io::read_json(path);
    ProfileMap out;
    try {
        const auto ids = j.at("ids").get<std::vector<std::string>>();
        const auto rows = j.at("profiles").get<std::vector<std::vector<float>>>();
        if (ids.size() != rows.size()) throw DataError(path.string() + ": ids and profiles differ in length");
        for (std::size_t i = 0; i < ids.size(); ++i) out[ids[i]] = rows[i];
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return out;
}

std::vector<const synth::CaseRecord*> cases_of(const synth::Cohort& cohort, const std::vector<std::string>& splits) {
    std::vector<const synth::CaseRecord*> out;
    for (const auto& name : splits) {
        const auto part = cohort.split(synth::parse_split(name));
        out.insert(out.end(), part.begin(), part.end());
    }
    if (out.empty()) throw DataError("selected split is empty");
    return out;
}

// Profiles aligned with `cases`: synthesized ones when a map is given, else none (real genes).
std::vector<std::vector<float>> profiles_for(std::span<const synth::CaseRecord* const> cases,
                                             const std::optional<ProfileMap>& map) {
    std::vector<std::vector<float>> out;
    if (!map) return out;
    for (const auto* c : cases) {
        auto it = map->find(c->id);
        if (it == map->end()) throw DataError("no synthesized profile for case " + c->id);
        out.push_back(it->second);
    }
    return out;
}

std::optional<ProfileMap> maybe_profiles(const std::string& path) {
    if (path.empty()) return std::nullopt;
    return read_profiles(path);
}

std::string csv_number(double v) {
    std::ostringstream s;
    s.precision(9);
    s << v;
    return s.str();
}

void check_finite_outputs(std::span<const predictor::PredictorOutput> out) {
    for (const auto& o : out) {
        if (!std::isfinite(o.risk)) throw NumericError("predictor produced a non-finite risk");
        for (double p : o.grade_probs)
            if (!std::isfinite(p)) throw NumericError("predictor produced non-finite grade probabilities");
    }
}

int cmd_gen_data(const Common& o, const std::string& out) {
    auto config = load_config(o);
    if (o.seed) config.cohort.seed = *o.seed;
    const auto cohort = synth::generate_cohort(config.cohort);
    io::write_cohort(cohort, out);
    json counts = json::object();
    for (synth::Split s : synth::kSplits) counts[synth::split_name(s)] = cohort.split(s).size();
    std::cout << json{{"cohort", out}, {"cases", cohort.cases.size()}, {"splits", counts}}.dump() << std::endl;
    return kOk;
}

int cmd_train_pathgen(const Common& o, const std::string& cohort_dir, const std::string& out,
                      const std::string& resume, std::optional<int> epochs, int save_every) {
    const auto cohort = io::read_cohort(cohort_dir);
    io::RunConfig config;
    pipeline::PathGenState state;
    if (!resume.empty()) {
        const auto ckpt = io::load_checkpoint(resume);
        config = config_of(ckpt, o);
        state = pipeline::pathgen_from_checkpoint(ckpt);
    } else {
        config = load_config(o);
        state = pipeline::init_pathgen(config);
    }
    config.cohort_path = cohort_dir;
    check_cohort_matches(cohort, config);
    const int until = epochs.value_or(config.pathgen_epochs);
    auto save = [&] {
        const auto ckpt = pipeline::pathgen_checkpoint(state, config);
        io::save_checkpoint(ckpt, out);
        io::write_text(out + ".log.json", ckpt.log.dump(1) + "\n");
    };
    pipeline::train_pathgen(state, cohort, config, until, [&](const diffusion::EpochLog& l) {
        info("epoch", {{"module", "pathgen"}, {"epoch", l.epoch}, {"mean_loss", l.mean_loss}});
        if (save_every > 0 && (l.epoch + 1) % save_every == 0) save();
    });
    save();
    info("saved", {{"checkpoint", out}, {"epochs", state.epoch}});
    return kOk;
}

int cmd_train_predictor(const Common& o, const std::string& cohort_dir, const std::string& out,
                        const std::string& resume, std::optional<int> epochs, const std::string& profiles_path,
                        int save_every) {
    const auto cohort = io::read_cohort(cohort_dir);
    io::RunConfig config;
    pipeline::PredictorState state;
    if (!resume.empty()) {
        const auto ckpt = io::load_checkpoint(resume);
        config = config_of(ckpt, o);
        state = pipeline::predictor_from_checkpoint(ckpt);
    } else {
        config = load_config(o);
        state = pipeline::init_predictor(config);
    }
    config.cohort_path = cohort_dir;
    check_cohort_matches(cohort, config);
    const auto profiles = maybe_profiles(profiles_path);
    const auto tr_cases = cohort.split(synth::Split::Train);
    const auto va_cases = cohort.split(synth::Split::Val);
    const auto tr_prof = profiles_for(tr_cases, profiles);
    const auto va_prof = profiles_for(va_cases, profiles);
    const auto train = pipeline::make_examples(tr_cases, tr_prof);
    std::vector<predictor::Example> val;
    if (config.select_on_validation) val = pipeline::make_examples(va_cases, va_prof);
    const int until = epochs.value_or(config.predictor_epochs);
    auto save = [&] {
        auto ckpt = pipeline::predictor_checkpoint(state, config);
        ckpt.lineage["genes"] = profiles ? "synthesized" : "real";
        if (profiles) ckpt.lineage["profiles_fnv1a"] = io::fnv1a([&] {
            const auto bytes = io::read_file(profiles_path);
            return std::string(bytes.begin(), bytes.end());
        }());
        io::save_checkpoint(ckpt, out);
        io::write_text(out + ".log.json", ckpt.log.dump(1) + "\n");
    };
    pipeline::train_predictor(state, train, val, config, until, [&](const pipeline::PredictorEpoch& e) {
        json f = {{"module", "mcat_gr"}, {"epoch", e.train.epoch}, {"mean_loss", e.train.mean_loss}};
        if (e.val_loss) f["val_loss"] = *e.val_loss;
        info("epoch", f);
        if (save_every > 0 && (e.train.epoch + 1) % save_every == 0) save();
    });
    save();
    info("saved", {{"checkpoint", out}, {"epochs", state.epoch}, {"best_epoch", state.best_epoch}});
    return kOk;
}

int cmd_synthesize(const Common& o, const std::string& checkpoint, const std::string& cohort_dir,
                   const std::vector<std::string>& splits, const std::string& out_dir) {
    const auto ckpt = io::load_checkpoint(checkpoint);
    const auto config = config_of(ckpt, o);
    const auto state = pipeline::pathgen_from_checkpoint(ckpt);
    const auto cohort = io::read_cohort(cohort_dir);
    check_cohort_matches(cohort, config);
    const auto cases = cases_of(cohort, splits);
    const diffusion::PathGenModel model(config.pathgen, pipeline::sampling_params(state));
    const auto synth = pipeline::synthesize(model, pipeline::make_schedule(config), cases,
                                            pipeline::stream_seed(config, pipeline::SeedStream::Sample));
    std::vector<std::string> ids;
    std::vector<std::vector<float>> real;
    for (const auto* c : cases) {
        ids.push_back(c->id);
        real.push_back(c->genes.values);
    }
    const auto rows = pipeline::similarity_report(real, synth, config.cohort.layout());
    const fs::path dir(out_dir);
    io::write_text(dir / "profiles.json", json{{"splits", splits}, {"ids", ids}, {"profiles", synth}}.dump() + "\n");
    io::write_text(dir / "similarity.json", json{{"splits", splits}, {"cases", cases.size()},
                                                 {"rows", pipeline::to_json(rows)}}.dump(1) + "\n");
    std::string csv = "group,genes,spearman,spearman_p,mae,t_test_p\n";
    for (const auto& r : rows)
        csv += r.group + "," + std::to_string(r.genes) + "," + csv_number(r.spearman) + "," + csv_number(r.spearman_p) +
               "," + csv_number(r.mae) + "," + csv_number(r.t_test_p) + "\n";
    io::write_text(dir / "similarity.csv", csv);
    info("synthesized", {{"cases", cases.size()}, {"all_gene_spearman", rows.back().spearman},
                         {"all_gene_mae", rows.back().mae}});
    return kOk;
}

struct PredictorInputs {
    io::RunConfig config;
    synth::Cohort cohort;
    ad::ParamStore<float> params;
    std::optional<ProfileMap> profiles;
};

PredictorInputs load_predictor(const Common& o, const std::string& checkpoint, const std::string& cohort_dir,
                               const std::string& profiles_path) {
    const auto ckpt = io::load_checkpoint(checkpoint);
    PredictorInputs in;
    in.config = config_of(ckpt, o);
    const auto state = pipeline::predictor_from_checkpoint(ckpt);
    in.params = pipeline::final_params(state, in.config);
    in.cohort = io::read_cohort(cohort_dir);
    check_cohort_matches(in.cohort, in.config);
    in.profiles = maybe_profiles(profiles_path);
    return in;
}

struct Scored {
    std::vector<const synth::CaseRecord*> cases;
    std::vector<predictor::PredictorOutput> outputs;
    std::vector<predictor::Example> examples;
    std::vector<std::vector<float>> profiles;
};

Scored run_predictor(const PredictorInputs& in, const std::vector<std::string>& splits) {
    Scored s;
    s.cases = cases_of(in.cohort, splits);
    s.profiles = profiles_for(s.cases, in.profiles);
    s.examples = pipeline::make_examples(s.cases, s.profiles);
    s.outputs = predictor::predict(in.params, in.config.predictor, s.examples);
    check_finite_outputs(s.outputs);
    return s;
}

int cmd_calibrate(const Common& o, const std::string& checkpoint, const std::string& cohort_dir,
                  const std::vector<std::string>& splits, const std::string& profiles, const std::string& out) {
    const auto in = load_predictor(o, checkpoint, cohort_dir, profiles);
    const auto s = run_predictor(in, splits);
    const auto cal = pipeline::calibrate(s.outputs, s.examples, in.config.alpha);
    json j = pipeline::to_json(cal);
    j["splits"] = splits;
    io::write_text(out, j.dump(1) + "\n");
    info("calibrated", {{"n_cal", cal.grade.n_cal}, {"grade_q_hat", cal.grade.q_hat}, {"risk_q_hat", cal.risk.q_hat},
                        {"guaranteed", cal.grade.guaranteed && cal.risk.guaranteed}});
    return kOk;
}

pipeline::Calibration load_calibration(const std::string& path) {
    if (path.empty()) throw DataError("a calibration file is required (run calibrate first)");
    if (!fs::exists(path)) throw DataError("calibration file " + path + " does not exist (run calibrate first)");
    return pipeline::calibration_from_json(io::read_json(path));
}

int cmd_predict(const Common& o, const std::string& checkpoint, const std::string& cohort_dir,
                const std::vector<std::string>& splits, const std::string& profiles, const std::string& calibration,
                const std::string& out) {
    const auto cal = load_calibration(calibration);
    const auto in = load_predictor(o, checkpoint, cohort_dir, profiles);
    const auto s = run_predictor(in, splits);
    std::string text;
    for (std::size_t i = 0; i < s.cases.size(); ++i)
        text += pipeline::prediction_record(s.cases[i]->id, pipeline::case_result(*s.cases[i], s.outputs[i], cal)).dump() +
                "\n";
    io::write_text(out, text);
    info("predicted", {{"cases", s.cases.size()}, {"out", out}});
    return kOk;
}

int cmd_evaluate(const Common& o, const std::string& checkpoint, const std::string& cohort_dir,
                 const std::vector<std::string>& splits, const std::string& profiles, const std::string& calibration,
                 const std::string& out) {
    const auto cal = load_calibration(calibration);
    const auto in = load_predictor(o, checkpoint, cohort_dir, profiles);
    const auto s = run_predictor(in, splits);
    std::vector<metrics::CaseResult> results;
    for (std::size_t i = 0; i < s.cases.size(); ++i) results.push_back(pipeline::case_result(*s.cases[i], s.outputs[i], cal));
    const std::vector<metrics::Dimension> dims = {metrics::Dimension::Gender,  metrics::Dimension::AgeBand,
                                                  metrics::Dimension::Censorship, metrics::Dimension::Grade,
                                                  metrics::Dimension::TimeBin, metrics::Dimension::Magnification};
    const auto report = metrics::stratified_report(results, dims, in.config.cohort.grades,
                                                   in.config.cohort.magnification_levels);
    json j = pipeline::to_json(report);
    j["splits"] = splits;
    j["alpha"] = cal.grade.alpha;
    io::write_text(out, j.dump(1) + "\n");
    std::string csv = "dimension,value,count,auc,c_index,grade_coverage,risk_coverage,mean_grade_uncertainty,"
                      "mean_risk_uncertainty\n";
    auto row = [&](const metrics::GroupMetrics& g) {
        auto opt = [](const std::optional<double>& v) { return v ? csv_number(*v) : std::string(); };
        csv += g.dimension + "," + g.value + "," + std::to_string(g.count) + "," + opt(g.auc) + "," + opt(g.c_index) +
               "," + csv_number(g.grade_coverage) + "," + csv_number(g.risk_coverage) + "," +
               csv_number(g.mean_grade_uncertainty) + "," + csv_number(g.mean_risk_uncertainty) + "\n";
    };
    row(report.overall);
    for (const auto& g : report.groups) row(g);
    const fs::path csv_path = fs::path(out).replace_extension(".csv");
    io::write_text(csv_path, csv);
    json f = {{"cases", s.cases.size()}, {"grade_coverage", report.overall.grade_coverage},
              {"risk_coverage", report.overall.risk_coverage}};
    if (report.overall.auc) f["auc"] = *report.overall.auc;
    if (report.overall.c_index) f["c_index"] = *report.overall.c_index;
    info("evaluated", f);
    return kOk;
}

// Values on the patch grid; cells without a patch are NaN.
struct Grid {
    std::string name;
    std::size_t rows = 0, cols = 0;
    std::vector<double> cells;
};

Grid make_grid(const std::string& name, const std::vector<xmodal::GridCoord>& coords, std::span<const double> values) {
    Grid g;
    g.name = name;
    for (const auto& c : coords) {
        g.rows = std::max<std::size_t>(g.rows, c.row + 1);
        g.cols = std::max<std::size_t>(g.cols, c.col + 1);
    }
    g.cells.assign(g.rows * g.cols, std::nan(""));
    for (std::size_t i = 0; i < coords.size(); ++i) g.cells[coords[i].row * g.cols + coords[i].col] = values[i];
    return g;
}

json write_grid(const Grid& g, const fs::path& dir) {
    std::string csv;
    double lo = INFINITY, hi = -INFINITY;
    for (double v : g.cells)
        if (!std::isnan(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < g.cols; ++c) {
            if (c) csv += ",";
            const double v = g.cells[r * g.cols + c];
            if (!std::isnan(v)) csv += csv_number(v);
        }
        csv += "\n";
    }
    io::write_text(dir / (g.name + ".csv"), csv);
    // Binary PGM, 8 bit; value 0 marks cells without a patch, patches map to 1..255.
    std::string pgm = "P5\n" + std::to_string(g.cols) + " " + std::to_string(g.rows) + "\n255\n";
    for (double v : g.cells) {
        int level = 0;
        if (!std::isnan(v)) level = hi > lo ? 1 + static_cast<int>(std::lround((v - lo) / (hi - lo) * 254.0)) : 128;
        pgm.push_back(static_cast<char>(level));
    }
    io::write_text(dir / (g.name + ".pgm"), pgm);
    return {{"name", g.name}, {"rows", g.rows}, {"cols", g.cols}, {"min", lo}, {"max", hi},
            {"pgm_scale", "level = 1 + round((value - min) / (max - min) * 254); 0 = no patch"}};
}

int cmd_heatmap(const Common& o, const std::string& checkpoint, const std::string& cohort_dir,
                const std::string& case_id, const std::string& profiles, std::size_t window, const std::string& out) {
    const auto in = load_predictor(o, checkpoint, cohort_dir, profiles);
    const synth::CaseRecord* record = nullptr;
    for (const auto& c : in.cohort.cases)
        if (c.id == case_id) record = &c;
    if (!record) throw DataError("unknown case '" + case_id + "'");
    xmodal::GeneProfile profile = record->genes;
    if (in.profiles) {
        auto it = in.profiles->find(case_id);
        if (it == in.profiles->end()) throw DataError("no synthesized profile for case " + case_id);
        profile.values = it->second;
    }
    const auto dist = predictor::distributed_predict(record->patches, profile, in.params, in.config.predictor, window);
    const auto full = predictor::mcat_gr_forward(record->patches, profile, in.params, in.config.predictor);

    std::vector<double> grade(dist.coords.size()), risk = dist.risk;
    for (std::size_t i = 0; i < grade.size(); ++i)
        for (std::size_t k = 0; k < dist.grade_probs[i].size(); ++k) grade[i] += double(k) * dist.grade_probs[i][k];
    std::vector<Grid> grids = {make_grid("grade", dist.coords, grade), make_grid("risk", dist.coords, risk)};
    const auto& w = full.coattention.weights;
    for (std::size_t k = 0; k < xmodal::kGroupCount; ++k) {
        std::vector<double> row(w.row_span(k).begin(), w.row_span(k).end());
        grids.push_back(make_grid("coattn_" + std::string(xmodal::kGroupNames[k]), record->patches.coords, row));
    }
    const fs::path dir(out);
    json sidecar = {{"case", case_id}, {"window", window}, {"grade_value", "expected grade index sum_k k p_k"},
                    {"mean_risk", dist.mean_risk}, {"grids", json::array()}};
    for (const auto& g : grids) sidecar["grids"].push_back(write_grid(g, dir));
    io::write_text(dir / "heatmap.json", sidecar.dump(1) + "\n");
    info("heatmap", {{"case", case_id}, {"grids", grids.size()}, {"out", out}});
    return kOk;
}

int error_exit(const std::string& kind, const std::string& message, int code) {
    log_line({{"level", "error"}, {"kind", kind}, {"message", message}, {"exit_code", code}});
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PathGen pipeline: synthetic cohort, transcriptome diffusion, MCAT_GR prediction, conformal calibration"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "run config JSON (defaults apply when omitted)");
        sub->add_option("--seed", common.seed, "override the run seed");
        sub->add_option("--alpha", common.alpha, "override the conformal error rate");
        sub->add_option("--lambda", common.lambda, "override the loss weight");
    };

    std::string out, cohort, checkpoint, resume, profiles, calibration, case_id;
    std::vector<std::string> splits;
    std::optional<int> epochs;
    int save_every = 0;
    std::size_t window = 1;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic cohort directory");
    add_common(gen);
    gen->add_option("--out", out, "cohort directory")->required();

    auto* tpg = app.add_subcommand("train-pathgen", "train the transcriptome diffusion model");
    add_common(tpg);
    tpg->add_option("--cohort", cohort, "cohort directory")->required();
    tpg->add_option("--out", out, "checkpoint path")->required();
    tpg->add_option("--resume", resume, "continue from this checkpoint");
    tpg->add_option("--epochs", epochs, "train until this many epochs are done");
    tpg->add_option("--save-every", save_every, "also checkpoint every N epochs");

    auto* tpr = app.add_subcommand("train-predictor", "train MCAT_GR on real or synthesized genes");
    add_common(tpr);
    tpr->add_option("--cohort", cohort, "cohort directory")->required();
    tpr->add_option("--out", out, "checkpoint path")->required();
    tpr->add_option("--resume", resume, "continue from this checkpoint");
    tpr->add_option("--epochs", epochs, "train until this many epochs are done");
    tpr->add_option("--profiles", profiles, "synthesized profiles.json to use instead of real genes");
    tpr->add_option("--save-every", save_every, "also checkpoint every N epochs");

    auto* syn = app.add_subcommand("synthesize", "sample transcriptomes and report similarity to the real ones");
    add_common(syn);
    syn->add_option("--checkpoint", checkpoint, "pathgen checkpoint")->required();
    syn->add_option("--cohort", cohort, "cohort directory")->required();
    syn->add_option("--split", splits, "split(s) to synthesize (default test)");
    syn->add_option("--out", out, "output directory")->required();

    auto* cal = app.add_subcommand("calibrate", "fit conformal thresholds on the calibration split");
    add_common(cal);
    cal->add_option("--checkpoint", checkpoint, "mcat_gr checkpoint")->required();
    cal->add_option("--cohort", cohort, "cohort directory")->required();
    cal->add_option("--split", splits, "calibration split(s) (default cal)");
    cal->add_option("--profiles", profiles, "synthesized profiles.json");
    cal->add_option("--out", out, "calibration JSON")->required();

    auto* pre = app.add_subcommand("predict", "per-case predictions with conformal sets");
    add_common(pre);
    pre->add_option("--checkpoint", checkpoint, "mcat_gr checkpoint")->required();
    pre->add_option("--cohort", cohort, "cohort directory")->required();
    pre->add_option("--calibration", calibration, "calibration JSON");
    pre->add_option("--split", splits, "split(s) to predict (default test)");
    pre->add_option("--profiles", profiles, "synthesized profiles.json");
    pre->add_option("--out", out, "predictions JSONL")->required();

    auto* eva = app.add_subcommand("evaluate", "stratified metrics, coverage and uncertainty");
    add_common(eva);
    eva->add_option("--checkpoint", checkpoint, "mcat_gr checkpoint")->required();
    eva->add_option("--cohort", cohort, "cohort directory")->required();
    eva->add_option("--calibration", calibration, "calibration JSON");
    eva->add_option("--split", splits, "split(s) to evaluate (default test)");
    eva->add_option("--profiles", profiles, "synthesized profiles.json");
    eva->add_option("--out", out, "report JSON (a CSV is written next to it)")->required();

    auto* heat = app.add_subcommand("heatmap", "grade, risk and co-attention grids for one case");
    add_common(heat);
    heat->add_option("--checkpoint", checkpoint, "mcat_gr checkpoint")->required();
    heat->add_option("--cohort", cohort, "cohort directory")->required();
    heat->add_option("--case", case_id, "case id")->required();
    heat->add_option("--profiles", profiles, "synthesized profiles.json");
    heat->add_option("--window", window, "patches per prediction window")->default_val(1);
    heat->add_option("--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return error_exit("config", e.what(), kConfigExit);
    }

    if (splits.empty()) splits = {*cal ? "cal" : "test"};

    try {
        if (*gen) return cmd_gen_data(common, out);
        if (*tpg) return cmd_train_pathgen(common, cohort, out, resume, epochs, save_every);
        if (*tpr) return cmd_train_predictor(common, cohort, out, resume, epochs, profiles, save_every);
        if (*syn) return cmd_synthesize(common, checkpoint, cohort, splits, out);
        if (*cal) return cmd_calibrate(common, checkpoint, cohort, splits, profiles, out);
        if (*pre) return cmd_predict(common, checkpoint, cohort, splits, profiles, calibration, out);
        if (*eva) return cmd_evaluate(common, checkpoint, cohort, splits, profiles, calibration, out);
        if (*heat) return cmd_heatmap(common, checkpoint, cohort, case_id, profiles, window, out);
    } catch (const ConfigError& e) {
        return error_exit("config", e.what(), kConfigExit);
    } catch (const DataError& e) {
        return error_exit("data", e.what(), kDataExit);
    } catch (const NumericError& e) {
        return error_exit("numeric", e.what(), kNumericExit);
    } catch (const fs::filesystem_error& e) {
        return error_exit("data", e.what(), kDataExit);
    }
    return kOk;
}
