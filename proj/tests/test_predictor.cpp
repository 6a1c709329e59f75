#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "pathgen/ad/gradcheck.hpp"
#include "pathgen/predictor.hpp"

using namespace pathgen;
using namespace pathgen::ad;
using namespace pathgen::predictor;
using xmodal::GeneLayout;
using xmodal::GeneProfile;
using xmodal::PatchSet;

namespace {

PredictorConfig tiny_config() {
    PredictorConfig c;
    c.layout = GeneLayout({2, 2, 2, 2, 2, 2});
    c.patch_dim = 5;
    c.embed_dim = 8;
    c.hidden = 6;
    c.heads = 2;
    c.path_layers = 1;
    c.gene_layers = 1;
    c.grades = 3;
    return c;
}

PatchSet random_patches(Rng& rng, std::size_t m, std::size_t d, double sd = 1.0) {
    PatchSet s;
    s.embeddings = Tensor<float>({m, d}, normal_vector<float>(rng, m * d, 0.0, sd));
    for (std::size_t i = 0; i < m; ++i) s.coords.push_back({static_cast<int>(i / 8), static_cast<int>(i % 8)});
    return s;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_output(const PredictorOutput& o, std::size_t grades) {
    REQUIRE(o.grade_probs.size() == grades);
    double total = 0;
    for (double p : o.grade_probs) {
        CHECK(p >= 0.0);
        total += p;
    }
    CHECK(std::abs(total - 1.0) < 1e-5);
    for (double h : o.hazards) {
        CHECK(h > 0.0);
        CHECK(h < 1.0);
    }
    for (std::size_t t = 1; t < kTimeBins; ++t) CHECK(o.survival[t] <= o.survival[t - 1]);
    CHECK(o.risk >= -5.0);
    CHECK(o.risk <= -1.0);
}

}  // namespace

TEST_CASE("grade loss reference values") {
    const std::vector<double> uniform(3, 1.0 / 3.0);
    const double expected = -(std::log(1.0 / 3.0) + 2.0 * std::log(2.0 / 3.0)) / 3.0;
    CHECK(expected == doctest::Approx(0.6365).epsilon(1e-4));
    for (int label = 0; label < 3; ++label) CHECK(grade_loss(uniform, label) == doctest::Approx(expected).epsilon(1e-12));

    const std::vector<double> perfect{0.0, 1.0, 0.0};
    CHECK(grade_loss(perfect, 1) < 1e-6);
    CHECK(grade_loss(perfect, 0) > 10.0);

    const std::vector<double> tied{0.4, 0.4, 0.2};
    CHECK(grade_loss(tied, 0) == doctest::Approx(grade_loss(tied, 1)).epsilon(1e-12));
    CHECK_THROWS_AS(grade_loss(tied, 3), DataError);
}

TEST_CASE("survival negative log-likelihood reference values") {
    CHECK(survival_nll_loss({1.0, 0.3, 0.3, 0.3}, {1.0, false, 1}) == doctest::Approx(0.0));
    CHECK(survival_nll_loss({0.0, 0.0, 0.0, 0.0}, {50.0, true, 4}) == doctest::Approx(0.0));
    CHECK(survival_nll_loss({0.1, 0.5, 0.2, 0.2}, {3.0, false, 2}) ==
          doctest::Approx(-(std::log(0.9) + std::log(0.5))).epsilon(1e-12));
    CHECK(-(std::log(0.9) + std::log(0.5)) == doctest::Approx(0.7985).epsilon(1e-4));
    CHECK(survival_nll_loss({0.1, 0.5, 0.2, 0.2}, {3.0, true, 2}) ==
          doctest::Approx(-(std::log(0.9) + std::log(0.5))).epsilon(1e-12));
    CHECK(survival_nll_loss({0.1, 0.5, 0.2, 0.2}, {3.0, true, 3}) ==
          doctest::Approx(-(std::log(0.9) + std::log(0.5) + std::log(0.8))).epsilon(1e-12));
    CHECK_THROWS_AS(survival_nll_loss({0.1, 0.1, 0.1, 0.1}, {1.0, false, 5}), DataError);
}

TEST_CASE("joint loss weighting") {
    CHECK(joint_loss(1.0, 2.0, 0.3) == doctest::Approx(1.7));
    CHECK(joint_loss(1.0, 2.0, 0.0) == doctest::Approx(2.0));
    CHECK(joint_loss(1.0, 2.0, 1.0) == doctest::Approx(1.0));
    CHECK(joint_loss(1.0, 2.0, 0.3, LambdaAssignment::SurvivalFirst) == doctest::Approx(0.3 * 2.0 + 0.7 * 1.0));
    // Linear in each component.
    Rng rng(1);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    for (int i = 0; i < 20; ++i) {
        const double a = u(rng), b = u(rng), c = u(rng), lam = u(rng) / 3.0;
        CHECK(joint_loss(a + c, b, lam) - joint_loss(a, b, lam) == doctest::Approx(lam * c));
        CHECK(joint_loss(a, b + c, lam) - joint_loss(a, b, lam) == doctest::Approx((1 - lam) * c));
    }
    CHECK_THROWS_AS(joint_loss(1.0, 1.0, 1.5), ConfigError);
    CHECK_THROWS_AS(joint_loss(1.0, 1.0, -0.1), ConfigError);
}

TEST_CASE("survival curve and risk") {
    Rng rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        const std::array<double, 4> h{u(rng), u(rng), u(rng), u(rng)};
        const auto s = survival_from_hazards(h);
        for (std::size_t t = 0; t < 4; ++t) {
            double direct = 1.0;
            for (std::size_t j = 0; j <= t; ++j) direct *= 1.0 - h[j];
            CHECK(std::abs(s[t] - direct) < 1e-6);
        }
        const double r = risk_from_hazards(h);
        CHECK(r == doctest::Approx(-(1.0 + s[0] + s[1] + s[2] + s[3])));
        CHECK(r >= -5.0);
        CHECK(r <= -1.0);
    }
    CHECK(risk_from_hazards({0, 0, 0, 0}) == -5.0);
    CHECK(risk_from_hazards({1, 1, 1, 1}) == -1.0);
    CHECK(risk_from_hazards({1e-9, 1e-9, 1e-9, 1e-9}) == doctest::Approx(-5.0));
    CHECK(risk_from_hazards({1 - 1e-9, 1 - 1e-9, 1 - 1e-9, 1 - 1e-9}) == doctest::Approx(-1.0));
}

TEST_CASE("time bins from training quartiles") {
    const std::vector<double> times{1, 2, 3, 4, 5, 6, 7, 8, 100};
    const std::vector<bool> censored{false, false, false, false, false, false, false, false, true};
    std::array<bool, 9> flags{};
    std::copy(censored.begin(), censored.end(), flags.begin());
    const TimeBins bins = TimeBins::from_training(times, flags);
    CHECK(bins.edges()[0] == doctest::Approx(2.75));
    CHECK(bins.edges()[1] == doctest::Approx(4.5));
    CHECK(bins.edges()[2] == doctest::Approx(6.25));
    CHECK(bins.bin(0.0) == 1);
    CHECK(bins.bin(2.75) == 1);
    CHECK(bins.bin(2.76) == 2);
    CHECK(bins.bin(4.5) == 2);
    CHECK(bins.bin(6.0) == 3);
    CHECK(bins.bin(1000.0) == 4);
    CHECK_THROWS_AS(bins.bin(-1.0), DataError);
    const std::array<bool, 2> all_censored{true, true};
    const std::array<double, 2> two{1.0, 2.0};
    CHECK_THROWS_AS(TimeBins::from_training(two, all_censored), DataError);
}

TEST_CASE("graph losses agree with the scalar definitions") {
    Rng rng(3);
    std::normal_distribution<double> n(0.0, 2.0);
    const std::size_t b = 6;
    Tensor<double> gl = Tensor<double>::matrix(b, 3), hl = Tensor<double>::matrix(b, 4);
    for (auto& v : gl.values()) v = n(rng);
    for (auto& v : hl.values()) v = n(rng);
    const std::vector<int> grades{0, 1, 2, 2, 1, 0};
    const std::vector<SurvivalLabel> surv{{1, false, 1}, {2, true, 1}, {3, false, 2}, {4, true, 3},
                                          {5, false, 4}, {6, true, 4}};
    Graph<double> g;
    const double bce = grade_bce(g, g.input(gl), grades).value()[0];
    const double nll = survival_nll(g, g.input(hl), surv).value()[0];
    double bce_ref = 0, nll_ref = 0;
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<double> p(3);
        for (std::size_t j = 0; j < 3; ++j) p[j] = sigmoid(gl(i, j));
        bce_ref += grade_loss(p, grades[i]) / b;
        std::array<double, 4> h{};
        for (std::size_t j = 0; j < 4; ++j) h[j] = sigmoid(hl(i, j));
        nll_ref += survival_nll_loss(h, surv[i]) / b;
    }
    CHECK(bce == doctest::Approx(bce_ref).epsilon(1e-9));
    CHECK(nll == doctest::Approx(nll_ref).epsilon(1e-9));
}

TEST_CASE("forward output contract and the zero-profile ablation") {
    const PredictorConfig c = tiny_config();
    const ParamStore<float> p = init_mcat_gr(c, 4);
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        const PatchSet patches = random_patches(rng, 3 + trial, c.patch_dim);
        const GeneProfile profile{normal_vector<float>(rng, c.layout.total())};
        const PredictorOutput o = mcat_gr_forward(patches, profile, p, c);
        check_output(o, c.grades);
        CHECK(o.coattention.weights.rows() == 6);
        CHECK(o.coattention.weights.cols() == patches.count());

        const GeneProfile zeros{std::vector<float>(c.layout.total(), 0.0f)};
        const PredictorOutput z = mcat_gr_forward(patches, zeros, p, c);
        check_output(z, c.grades);
        CHECK(z.risk != o.risk);
    }
    CHECK_THROWS_AS(mcat_gr_forward(random_patches(rng, 3, c.patch_dim + 1),
                                    GeneProfile{std::vector<float>(c.layout.total())}, p, c),
                    ShapeError);
}

TEST_CASE("batched prediction matches single-sample prediction") {
    const PredictorConfig c = tiny_config();
    const ParamStore<float> p = init_mcat_gr(c, 6);
    Rng rng(7);
    std::vector<PatchSet> sets;
    std::vector<std::vector<float>> profiles;
    for (int i = 0; i < 5; ++i) {
        sets.push_back(random_patches(rng, 2 + i, c.patch_dim));
        profiles.push_back(normal_vector<float>(rng, c.layout.total()));
    }
    std::vector<Example> ex;
    for (int i = 0; i < 5; ++i) ex.push_back({&sets[i], profiles[i], 0, {}});
    const auto batched = predict(p, c, ex, 4);
    for (int i = 0; i < 5; ++i) {
        const auto single = mcat_gr_forward(sets[i], GeneProfile{profiles[i]}, p, c);
        CHECK(batched[i].risk == doctest::Approx(single.risk).epsilon(1e-5));
        for (std::size_t j = 0; j < c.grades; ++j)
            CHECK(batched[i].grade_probs[j] == doctest::Approx(single.grade_probs[j]).epsilon(1e-5));
    }
}

TEST_CASE("distributed prediction") {
    const PredictorConfig c = tiny_config();
    const ParamStore<float> p = init_mcat_gr(c, 8);
    Rng rng(9);
    const GeneProfile profile{normal_vector<float>(rng, c.layout.total())};

    SUBCASE("a single patch reproduces the slide-level prediction") {
        const PatchSet one = random_patches(rng, 1, c.patch_dim);
        const auto d = distributed_predict(one, profile, p, c);
        const auto o = mcat_gr_forward(one, profile, p, c);
        CHECK(d.risk.size() == 1);
        CHECK(d.risk[0] == doctest::Approx(o.risk).epsilon(1e-6));
        CHECK(d.mean_risk == doctest::Approx(o.risk).epsilon(1e-6));
    }
    SUBCASE("identical patches give a constant map") {
        PatchSet same = random_patches(rng, 9, c.patch_dim);
        for (std::size_t i = 1; i < 9; ++i)
            for (std::size_t j = 0; j < c.patch_dim; ++j) same.embeddings(i, j) = same.embeddings(0, j);
        const auto d = distributed_predict(same, profile, p, c);
        // Batch rows may take different SIMD paths, so equality is up to float rounding.
        for (double r : d.risk) CHECK(std::abs(r - d.risk[0]) < 1e-6);
        for (const auto& g : d.grade_probs)
            for (std::size_t j = 0; j < g.size(); ++j) CHECK(std::abs(g[j] - d.grade_probs[0][j]) < 1e-6);
    }
    SUBCASE("two tissue regions separate in the risk map") {
        const std::size_t m = 32;
        PatchSet slide = random_patches(rng, m, c.patch_dim, 0.05);
        const auto centre_a = normal_vector<float>(rng, c.patch_dim, 0.0, 2.0);
        const auto centre_b = normal_vector<float>(rng, c.patch_dim, 0.0, 2.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c.patch_dim; ++j)
                slide.embeddings(i, j) += i < m / 2 ? centre_a[j] : centre_b[j];
        const auto d = distributed_predict(slide, profile, p, c);
        auto stats = [&](std::size_t from) {
            double mean = 0, var = 0;
            for (std::size_t i = from; i < from + m / 2; ++i) mean += d.risk[i] / (m / 2);
            for (std::size_t i = from; i < from + m / 2; ++i) var += (d.risk[i] - mean) * (d.risk[i] - mean) / (m / 2 - 1);
            return std::pair{mean, std::sqrt(var)};
        };
        const auto [ma, sa] = stats(0);
        const auto [mb, sb] = stats(m / 2);
        INFO("means " << ma << " " << mb << " sds " << sa << " " << sb);
        CHECK(std::abs(ma - mb) > 3.0 * std::max(sa, sb));
    }
    SUBCASE("windows") {
        const PatchSet slide = random_patches(rng, 7, c.patch_dim);
        const auto d = distributed_predict(slide, profile, p, c, 3);
        CHECK(d.risk.size() == 7);
        CHECK(d.risk[0] == d.risk[2]);
        CHECK(d.risk[3] == d.risk[5]);
        CHECK_THROWS_AS(distributed_predict(slide, profile, p, c, 0), ConfigError);
    }
}

TEST_CASE("predictor gradients match finite differences") {
    const PredictorConfig c = tiny_config();
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        ParamStore<double> p = init_mcat_gr(c, 50 + seed).cast<double>();
        Rng rng(60 + seed);
        const PatchSet a = random_patches(rng, 3, c.patch_dim), b = random_patches(rng, 4, c.patch_dim);
        const std::array<const PatchSet*, 2> sets{&a, &b};
        std::vector<std::size_t> counts;
        const Tensor<double> stacked = xmodal::stack_patches(sets, counts).cast<double>();
        Graph<double> g;
        auto m = mcat_gr_graph(g, p, c, g.input(Tensor<double>({2, c.layout.total()}, normal_vector<double>(rng, 24))),
                               g.input(stacked), counts);
        const std::vector<int> grades{2, 0};
        const std::vector<SurvivalLabel> surv{{1.0, false, 2}, {3.0, true, 3}};
        auto loss = add(scale(grade_bce(g, m.grade_logits, grades), 0.3),
                        scale(survival_nll(g, m.hazard_logits, surv), 0.7));
        const auto report = finite_difference_check(g, loss, p, 1e-6, 1e-3);
        INFO(report.worst_parameter << " rel " << report.max_relative_error);
        CHECK(report.pass);
    }
}

TEST_CASE("training fits a small separable task") {
    PredictorConfig c = tiny_config();
    c.embed_dim = 16;
    c.hidden = 16;
    ParamStore<float> p = init_mcat_gr(c, 10);
    Rng rng(11);
    const std::size_t n = 48;
    std::vector<PatchSet> sets;
    std::vector<std::vector<float>> profiles;
    std::vector<Example> ex;
    for (std::size_t i = 0; i < n; ++i) {
        const int grade = static_cast<int>(i % 3);
        PatchSet s = random_patches(rng, 4, c.patch_dim, 0.5);
        for (std::size_t r = 0; r < 4; ++r) s.embeddings(r, 0) += 2.0f * grade;
        sets.push_back(std::move(s));
        profiles.push_back(normal_vector<float>(rng, c.layout.total()));
    }
    for (std::size_t i = 0; i < n; ++i) {
        const int grade = static_cast<int>(i % 3);
        ex.push_back({&sets[i], profiles[i], grade, SurvivalLabel{1.0, false, 3 - grade}});
    }
    PredictorTrainOptions opt;
    opt.epochs = 30;
    opt.batch_size = 8;
    opt.adam.learning_rate = 3e-3;
    auto state = make_optimizer_state(p, opt.adam);
    const auto logs = train_predictor(p, c, ex, opt, state);
    INFO("first " << logs.front().mean_loss << " last " << logs.back().mean_loss);
    CHECK(logs.back().mean_loss < 0.5 * logs.front().mean_loss);
    const auto out = predict(p, c, ex);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& pr = out[i].grade_probs;
        correct += static_cast<int>(std::max_element(pr.begin(), pr.end()) - pr.begin()) == ex[i].grade;
    }
    CHECK(correct >= n * 9 / 10);

    Example bad = ex[0];
    bad.grade = 3;
    const std::array<Example, 1> bad_set{bad};
    CHECK_THROWS_AS(train_predictor(p, c, bad_set, opt, state), DataError);
}
