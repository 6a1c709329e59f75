#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pathgen/ad/adam.hpp"
#include "pathgen/ad/gradcheck.hpp"
#include "pathgen/crossmodal.hpp"

using namespace pathgen;
using namespace pathgen::ad;
using namespace pathgen::xmodal;

namespace {

PathGenConfig tiny_config() {
    PathGenConfig c;
    c.layout = GeneLayout({2, 2, 2, 2, 2, 2});
    c.patch_dim = 5;
    c.embed_dim = 8;
    c.hidden = 6;
    c.heads = 2;
    c.ffn_mult = 2;
    c.stages = 3;
    return c;
}

PatchSet random_patches(Rng& rng, std::size_t m, std::size_t d) {
    PatchSet s;
    s.embeddings = Tensor<float>::matrix(m, d);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : s.embeddings.values()) v = static_cast<float>(n(rng));
    for (std::size_t i = 0; i < m; ++i) s.coords.push_back({static_cast<int>(i / 4), static_cast<int>(i % 4)});
    return s;
}

GeneProfile random_profile(Rng& rng, const GeneLayout& layout) {
    return GeneProfile{normal_vector<float>(rng, layout.total())};
}

void zero_biases(ParamStore<float>& p) {
    for (auto& [name, t] : p.tensors())
        if (name.ends_with(".b")) t.fill(0.0f);
}

Tensor<double> random_weights(Rng& rng, std::size_t r, std::size_t c) {
    Tensor<double> t = Tensor<double>::matrix(r, c);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : t.values()) v = n(rng);
    return t;
}

}  // namespace

TEST_CASE("gene layout offsets and validation") {
    const GeneLayout layout({3, 1, 4, 1, 5, 9});
    CHECK(layout.total() == 23);
    CHECK(layout.offset(2) == 4);
    CHECK(layout.offset(5) == 14);
    CHECK_THROWS_AS(GeneLayout({1, 1, 0, 1, 1, 1}), ConfigError);
    GeneProfile bad{std::vector<float>(22, 0.0f)};
    CHECK_THROWS_AS(bad.validate(layout), ShapeError);
}

TEST_CASE("patch set validation") {
    Rng rng(1);
    PatchSet s = random_patches(rng, 3, 4);
    CHECK_NOTHROW(s.validate());
    s.coords[2] = s.coords[0];
    CHECK_THROWS_AS(s.validate(), DataError);
    s = random_patches(rng, 3, 4);
    s.embeddings(1, 1) = std::nanf("");
    CHECK_THROWS_AS(s.validate(), DataError);
}

TEST_CASE("encoder and decoder map zero to zero when biases are zero") {
    const PathGenConfig c = tiny_config();
    ParamStore<float> p = init_pathgen(c, 3);
    zero_biases(p);
    const Tensor<float> emb = encode_genes(GeneProfile{std::vector<float>(c.layout.total(), 0.0f)}, p, c.layout);
    CHECK(emb.rows() == 6);
    CHECK(emb.cols() == c.embed_dim);
    for (float v : emb.values()) CHECK(v == 0.0f);
    const GeneProfile out = decode_genes(Tensor<float>::matrix(6, c.embed_dim), p, c.layout);
    CHECK(out.values.size() == c.layout.total());
    for (float v : out.values) CHECK(v == 0.0f);
}

TEST_CASE("encoder and decoder are separable by group") {
    const PathGenConfig c = tiny_config();
    const ParamStore<float> p = init_pathgen(c, 4);
    Rng rng(5);
    const GeneProfile a = random_profile(rng, c.layout);
    for (std::size_t k = 0; k < kGroupCount; ++k) {
        GeneProfile b = a;
        for (std::size_t i = 0; i < c.layout.size(k); ++i) b.values[c.layout.offset(k) + i] += 0.7f;
        const auto ea = encode_genes(a, p, c.layout);
        const auto eb = encode_genes(b, p, c.layout);
        for (std::size_t r = 0; r < 6; ++r) {
            bool differs = false;
            for (std::size_t j = 0; j < c.embed_dim; ++j) differs |= ea(r, j) != eb(r, j);
            CHECK(differs == (r == k));
        }

        Tensor<float> ec = ea;
        for (std::size_t j = 0; j < c.embed_dim; ++j) ec(k, j) += 0.5f;
        const GeneProfile da = decode_genes(ea, p, c.layout);
        const GeneProfile dc = decode_genes(ec, p, c.layout);
        for (std::size_t g = 0; g < kGroupCount; ++g) {
            bool differs = false;
            for (std::size_t i = 0; i < c.layout.size(g); ++i)
                differs |= da.values[c.layout.offset(g) + i] != dc.values[c.layout.offset(g) + i];
            CHECK(differs == (g == k));
        }
    }
}

TEST_CASE("batched encoding matches per-sample encoding") {
    const PathGenConfig c = tiny_config();
    const ParamStore<float> p = init_pathgen(c, 6);
    Rng rng(7);
    const GeneProfile a = random_profile(rng, c.layout), b = random_profile(rng, c.layout);
    std::vector<float> both = a.values;
    both.insert(both.end(), b.values.begin(), b.values.end());
    Graph<float> g;
    const auto batched = encode_genes(g, p, "enc", c.layout, g.input(Tensor<float>({2, c.layout.total()}, both))).value();
    const auto ea = encode_genes(a, p, c.layout), eb = encode_genes(b, p, c.layout);
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t j = 0; j < c.embed_dim; ++j) {
            CHECK(batched(r, j) == doctest::Approx(ea(r, j)).epsilon(1e-6));
            CHECK(batched(6 + r, j) == doctest::Approx(eb(r, j)).epsilon(1e-6));
        }
}

TEST_CASE("co-attention with a single patch puts all weight on it") {
    const PathGenConfig c = tiny_config();
    const ParamStore<float> p = init_pathgen(c, 8);
    Rng rng(9);
    const PatchSet one = random_patches(rng, 1, c.patch_dim);
    const auto genes = encode_genes(random_profile(rng, c.layout), p, c.layout);
    const auto [features, map] = coattend(genes, one, p, "stage0.coattn");
    CHECK(map.weights.rows() == 6);
    CHECK(map.weights.cols() == 1);
    for (float v : map.weights.values()) CHECK(v == doctest::Approx(1.0f).epsilon(1e-6));

    // Output equals the value projection of the patch for every gene row.
    const auto& w = p.at("stage0.coattn.v.w");
    const auto& b = p.at("stage0.coattn.v.b");
    for (std::size_t j = 0; j < c.embed_dim; ++j) {
        double v = b(0, j);
        for (std::size_t d = 0; d < c.patch_dim; ++d) v += double(one.embeddings(0, d)) * w(d, j);
        for (std::size_t r = 0; r < 6; ++r) CHECK(features(r, j) == doctest::Approx(v).epsilon(1e-5));
    }
}

TEST_CASE("duplicated patches receive uniform attention") {
    const PathGenConfig c = tiny_config();
    const ParamStore<float> p = init_pathgen(c, 10);
    Rng rng(11);
    const PatchSet base = random_patches(rng, 1, c.patch_dim);
    const std::size_t m = 5;
    PatchSet dup = random_patches(rng, m, c.patch_dim);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t d = 0; d < c.patch_dim; ++d) dup.embeddings(i, d) = base.embeddings(0, d);
    const auto genes = encode_genes(random_profile(rng, c.layout), p, c.layout);
    const auto map = coattend(genes, dup, p, "stage1.coattn").second;
    for (float v : map.weights.values()) CHECK(v == doctest::Approx(1.0 / m).epsilon(1e-6));
}

TEST_CASE("co-attention weights match a hand-computed softmax") {
    // Identity projections with zero bias so Q = genes, K = V = patches.
    const std::size_t e = 2;
    ParamStore<float> p;
    Tensor<float> eye = Tensor<float>::matrix(e, e);
    eye(0, 0) = eye(1, 1) = 1.0f;
    for (const char* n : {"h.q", "h.k", "h.v"}) {
        p.add(std::string(n) + ".w", eye);
        p.add(std::string(n) + ".b", Tensor<float>::matrix(1, e));
    }
    Tensor<float> genes = Tensor<float>::matrix(6, e);
    genes(0, 0) = 1.0f;
    genes(0, 1) = 0.0f;
    genes(1, 0) = 0.5f;
    genes(1, 1) = -1.0f;
    PatchSet patches;
    patches.embeddings = Tensor<float>({3, e}, {1.0f, 2.0f, 0.0f, 1.0f, -1.0f, 0.5f});
    patches.coords = {{0, 0}, {0, 1}, {1, 0}};
    const auto [features, map] = coattend(genes, patches, p, "h");

    // Row 0: logits (1, 0, -1)/sqrt2. Row 1: (-1.5, -1, -1)/sqrt2.
    const double s = std::sqrt(2.0);
    const double l0[3] = {1.0 / s, 0.0, -1.0 / s};
    const double l1[3] = {-1.5 / s, -1.0 / s, -1.0 / s};
    for (int r = 0; r < 2; ++r) {
        const double* l = r == 0 ? l0 : l1;
        const double z = std::exp(l[0]) + std::exp(l[1]) + std::exp(l[2]);
        for (int j = 0; j < 3; ++j) CHECK(std::abs(map.weights(r, j) - std::exp(l[j]) / z) < 1e-6);
    }
    // Zero queries attend uniformly.
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(map.weights(3, j) - 1.0 / 3.0) < 1e-6);
    // Output row = weights . patches
    for (std::size_t d = 0; d < e; ++d) {
        double v = 0.0;
        for (std::size_t j = 0; j < 3; ++j) v += double(map.weights(1, j)) * patches.embeddings(j, d);
        CHECK(std::abs(features(1, d) - v) < 1e-6);
    }
}

TEST_CASE("pathgen output shape, rows of the map, and conditioning on patches") {
    const PathGenConfig c = tiny_config();
    const ParamStore<float> p = init_pathgen(c, 12);
    Rng rng(13);
    for (int trial = 0; trial < 5; ++trial) {
        const GeneProfile x = random_profile(rng, c.layout);
        const PatchSet pa = random_patches(rng, 4 + trial, c.patch_dim);
        const PatchSet pb = random_patches(rng, 4 + trial, c.patch_dim);
        const int t = 1 + trial * 17;
        const auto [ea, ma] = pathgen_eps(x, t, pa, p, c);
        const auto [eb, mb] = pathgen_eps(x, t, pb, p, c);
        CHECK(ea.values.size() == x.values.size());
        CHECK(ma.weights.rows() == 6);
        CHECK(ma.weights.cols() == pa.count());
        for (std::size_t r = 0; r < 6; ++r) {
            double total = 0.0;
            for (std::size_t j = 0; j < pa.count(); ++j) {
                CHECK(ma.weights(r, j) >= 0.0f);
                total += ma.weights(r, j);
            }
            CHECK(std::abs(total - 1.0) < 1e-5);
        }
        CHECK(ea.values != eb.values);
    }
}

TEST_CASE("pathgen output is invariant to patch order") {
    const PathGenConfig c = tiny_config();
    const ParamStore<float> p = init_pathgen(c, 14);
    Rng rng(15);
    for (int trial = 0; trial < 5; ++trial) {
        const GeneProfile x = random_profile(rng, c.layout);
        const PatchSet pa = random_patches(rng, 7, c.patch_dim);
        std::vector<std::size_t> perm(7);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        PatchSet pb = pa;
        for (std::size_t i = 0; i < 7; ++i)
            for (std::size_t d = 0; d < c.patch_dim; ++d) pb.embeddings(i, d) = pa.embeddings(perm[i], d);
        for (std::size_t i = 0; i < 7; ++i) pb.coords[i] = pa.coords[perm[i]];
        const auto [ea, ma] = pathgen_eps(x, 40, pa, p, c);
        const auto [eb, mb] = pathgen_eps(x, 40, pb, p, c);
        for (std::size_t i = 0; i < ea.values.size(); ++i) CHECK(std::abs(ea.values[i] - eb.values[i]) < 1e-5);
        for (std::size_t r = 0; r < 6; ++r)
            for (std::size_t i = 0; i < 7; ++i) CHECK(std::abs(mb.weights(r, i) - ma.weights(r, perm[i])) < 1e-6);
    }
}

TEST_CASE("batched pathgen matches per-sample evaluation") {
    const PathGenConfig c = tiny_config();
    const ParamStore<float> p = init_pathgen(c, 16);
    Rng rng(17);
    const GeneProfile a = random_profile(rng, c.layout), b = random_profile(rng, c.layout);
    const PatchSet pa = random_patches(rng, 3, c.patch_dim), pb = random_patches(rng, 6, c.patch_dim);
    std::vector<float> both = a.values;
    both.insert(both.end(), b.values.begin(), b.values.end());
    const std::array<const PatchSet*, 2> sets{&pa, &pb};
    std::vector<std::size_t> counts;
    const Tensor<float> stacked = stack_patches(sets, counts);
    Graph<float> g;
    const std::array<int, 2> ts{5, 60};
    const auto pred =
        pathgen_eps(g, p, c, g.input(Tensor<float>({2, c.layout.total()}, both)), ts, g.input(stacked), counts);
    const auto single_a = pathgen_eps(a, 5, pa, p, c).first;
    const auto single_b = pathgen_eps(b, 60, pb, p, c).first;
    const auto& batched = pred.eps.value();
    for (std::size_t i = 0; i < c.layout.total(); ++i) {
        CHECK(batched(0, i) == doctest::Approx(single_a.values[i]).epsilon(1e-5));
        CHECK(batched(1, i) == doctest::Approx(single_b.values[i]).epsilon(1e-5));
    }
}

TEST_CASE("shape errors are reported") {
    const PathGenConfig c = tiny_config();
    const ParamStore<float> p = init_pathgen(c, 18);
    Rng rng(19);
    const PatchSet wrong_dim = random_patches(rng, 3, c.patch_dim + 1);
    CHECK_THROWS_AS(pathgen_eps(random_profile(rng, c.layout), 1, wrong_dim, p, c), ShapeError);
    GeneProfile short_profile{std::vector<float>(c.layout.total() - 1, 0.0f)};
    CHECK_THROWS_AS(encode_genes(short_profile, p, c.layout), ShapeError);
    CHECK_THROWS_AS(decode_genes(Tensor<float>::matrix(5, c.embed_dim), p, c.layout), ShapeError);
    PathGenConfig odd = c;
    odd.heads = 3;
    CHECK_THROWS_AS(init_pathgen(odd, 1), ConfigError);
}

TEST_CASE("gradients of the crossmodal blocks match finite differences") {
    const PathGenConfig c = tiny_config();
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        ParamStore<double> p = init_pathgen(c, 100 + seed).cast<double>();
        Rng rng(200 + seed);
        const PatchSet patches = random_patches(rng, 4, c.patch_dim);
        const Tensor<double> x = Tensor<double>::row(normal_vector<double>(rng, c.layout.total()));

        SUBCASE("encoder") {
            Graph<double> g;
            auto out = encode_genes(g, p, "enc", c.layout, g.input(x));
            auto loss = sum(mul(out, g.input(random_weights(rng, out.rows(), out.cols()))));
            CHECK(finite_difference_check(g, loss, p, 1e-6, 1e-3).pass);
        }
        SUBCASE("decoder") {
            Graph<double> g;
            auto out = decode_genes(g, p, "dec", c.layout, g.input(random_weights(rng, 6, c.embed_dim)));
            auto loss = sum(mul(out, g.input(random_weights(rng, 1, c.layout.total()))));
            CHECK(finite_difference_check(g, loss, p, 1e-6, 1e-3).pass);
        }
        SUBCASE("co-attention") {
            Graph<double> g;
            const std::array<std::size_t, 1> counts{4};
            auto co = coattend(g, p, "stage0.coattn", g.input(random_weights(rng, 6, c.embed_dim)),
                               g.input(patches.embeddings.cast<double>()), counts);
            auto loss = sum(mul(co.features, g.input(random_weights(rng, 6, c.embed_dim))));
            CHECK(finite_difference_check(g, loss, p, 1e-6, 1e-3).pass);
        }
        SUBCASE("full noise predictor") {
            Graph<double> g;
            const std::array<std::size_t, 1> counts{4};
            const std::array<int, 1> ts{7};
            auto pred = pathgen_eps(g, p, c, g.input(x), ts, g.input(patches.embeddings.cast<double>()), counts);
            auto loss = sum(mul(pred.eps, g.input(random_weights(rng, 1, c.layout.total()))));
            const auto report = finite_difference_check(g, loss, p, 1e-6, 1e-3);
            INFO(report.worst_parameter << " rel " << report.max_relative_error);
            CHECK(report.pass);
        }
    }
}

TEST_CASE("encoder-decoder autoencoder fits low-rank profiles") {
    PathGenConfig c;
    c.layout = GeneLayout({6, 6, 6, 6, 6, 6});
    c.embed_dim = 16;
    c.hidden = 32;
    ParamStore<float> p;
    Rng init(21);
    init_gene_encoders(p, "enc", c.layout, c.hidden, c.embed_dim, init);
    init_gene_decoders(p, "dec", c.layout, c.hidden, c.embed_dim, init);

    // Profiles from a 3-dimensional latent, standardized per gene.
    const std::size_t n = 256, g_total = c.layout.total();
    Rng rng(22);
    const Tensor<float> mixing({3, g_total}, normal_vector<float>(rng, 3 * g_total));
    Tensor<float> data = Tensor<float>::matrix(n, g_total);
    for (std::size_t i = 0; i < n; ++i) {
        const auto z = normal_vector<double>(rng, 3);
        for (std::size_t j = 0; j < g_total; ++j)
            data(i, j) = static_cast<float>(std::tanh(z[0] * mixing(0, j) + z[1] * mixing(1, j) + z[2] * mixing(2, j)));
    }
    for (std::size_t j = 0; j < g_total; ++j) {
        double m = 0, s = 0;
        for (std::size_t i = 0; i < n; ++i) m += data(i, j);
        m /= n;
        for (std::size_t i = 0; i < n; ++i) s += (data(i, j) - m) * (data(i, j) - m);
        s = std::sqrt(s / n);
        for (std::size_t i = 0; i < n; ++i) data(i, j) = static_cast<float>((data(i, j) - m) / s);
    }

    auto state = make_optimizer_state(p, AdamConfig{3e-3});
    auto mae = [&] {
        Graph<float> g;
        const auto rec = decode_genes(g, p, "dec", c.layout, encode_genes(g, p, "enc", c.layout, g.input(data))).value();
        double total = 0;
        for (std::size_t i = 0; i < data.size(); ++i) total += std::abs(rec[i] - data[i]);
        return total / data.size();
    };
    const double before = mae();
    for (int epoch = 0; epoch < 150; ++epoch) {
        for (std::size_t start = 0; start < n; start += 64) {
            std::vector<float> rows(data.ptr() + start * g_total, data.ptr() + (start + 64) * g_total);
            Graph<float> g;
            auto x = g.input(Tensor<float>({64, g_total}, rows));
            auto rec = decode_genes(g, p, "dec", c.layout, encode_genes(g, p, "enc", c.layout, x));
            auto loss = scale(sum_squares(sub(rec, x)), 1.0 / (64.0 * g_total));
            adam_step(p, g.gradient(loss), state);
        }
    }
    const double after = mae();
    INFO("mae before " << before << " after " << after);
    CHECK(after < 0.2);
}
