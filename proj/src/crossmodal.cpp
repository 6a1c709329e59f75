#include "pathgen/crossmodal.hpp"

#include <cmath>
#include <numeric>
#include <set>

namespace pathgen::xmodal {

using ad::Graph;
using ad::ParamStore;
using ad::Tensor;
using ad::Var;

namespace {

constexpr std::size_t kCoderLayers = 4;

std::string group_prefix(const std::string& prefix, std::size_t k) { return prefix + "." + std::to_string(k); }

std::string stage_prefix(const PathGenConfig& c, std::size_t s) {
    return "stage" + std::to_string(c.share_stage_weights ? 0 : s);
}

}  // namespace

GeneLayout::GeneLayout(std::array<std::size_t, kGroupCount> sizes) : sizes_(sizes) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < kGroupCount; ++k) {
        if (sizes_[k] == 0) throw ConfigError("gene group " + std::string(kGroupNames[k]) + " has size 0");
        offsets_[k] = offset;
        offset += sizes_[k];
    }
    total_ = offset;
}

void GeneProfile::validate(const GeneLayout& layout) const {
    if (values.size() != layout.total())
        throw ShapeError("gene profile has " + std::to_string(values.size()) + " values, layout expects " +
                         std::to_string(layout.total()));
}

void PatchSet::validate() const {
    if (embeddings.rank() != 2 || embeddings.rows() == 0) throw DataError("patch set is empty");
    if (!embeddings.all_finite()) throw DataError("patch set contains non-finite embeddings");
    if (coords.size() != embeddings.rows()) throw DataError("patch set: coordinate count differs from patch count");
    std::set<GridCoord> seen(coords.begin(), coords.end());
    if (seen.size() != coords.size()) throw DataError("patch set: duplicate grid coordinates");
}

void PathGenConfig::validate() const {
    if (layout.total() == 0) throw ConfigError("pathgen: empty gene layout");
    if (embed_dim == 0 || patch_dim == 0 || hidden == 0 || stages == 0)
        throw ConfigError("pathgen: dimensions must be positive");
    if (heads == 0 || embed_dim % heads != 0) throw ConfigError("pathgen: embed_dim must be divisible by heads");
    if (embed_dim % 2 != 0) throw ConfigError("pathgen: embed_dim must be even for the timestep embedding");
}

void init_gene_encoders(ParamStore<float>& p, const std::string& prefix, const GeneLayout& layout,
                        std::size_t hidden, std::size_t embed, Rng& rng) {
    for (std::size_t k = 0; k < kGroupCount; ++k) {
        const std::array<std::size_t, kCoderLayers + 1> widths{layout.size(k), hidden, hidden, hidden, embed};
        nn::init_mlp(p, group_prefix(prefix, k), widths, rng);
    }
}

void init_gene_decoders(ParamStore<float>& p, const std::string& prefix, const GeneLayout& layout,
                        std::size_t hidden, std::size_t embed, Rng& rng) {
    for (std::size_t k = 0; k < kGroupCount; ++k) {
        const std::array<std::size_t, kCoderLayers + 1> widths{embed, hidden, hidden, hidden, layout.size(k)};
        nn::init_mlp(p, group_prefix(prefix, k), widths, rng);
    }
}

void init_coattention(ParamStore<float>& p, const std::string& prefix, std::size_t embed, std::size_t patch_dim,
                      Rng& rng) {
    nn::init_linear(p, prefix + ".q", embed, embed, rng);
    nn::init_linear(p, prefix + ".k", patch_dim, embed, rng);
    nn::init_linear(p, prefix + ".v", patch_dim, embed, rng);
}

ParamStore<float> init_pathgen(const PathGenConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    ParamStore<float> p;
    init_gene_encoders(p, "enc", config.layout, config.hidden, config.embed_dim, rng);
    nn::init_linear(p, "time.proj", config.embed_dim, config.embed_dim, rng);
    nn::init_linear(p, "time.skip", config.embed_dim, 1, rng);
    const std::size_t distinct = config.share_stage_weights ? 1 : config.stages;
    for (std::size_t s = 0; s < distinct; ++s) {
        const std::string sp = "stage" + std::to_string(s);
        init_coattention(p, sp + ".coattn", config.embed_dim, config.patch_dim, rng);
        nn::init_transformer_layer(p, sp + ".encoder", config.transformer(), rng);
    }
    init_gene_decoders(p, "dec", config.layout, config.hidden, config.embed_dim, rng);
    return p;
}

template <typename T>
Var<T> encode_genes(Graph<T>& g, const ParamStore<T>& p, const std::string& prefix, const GeneLayout& layout,
                    Var<T> profiles) {
    if (profiles.cols() != layout.total())
        throw ShapeError("encode_genes: profile width " + std::to_string(profiles.cols()) + " != " +
                         std::to_string(layout.total()));
    const std::size_t batch = profiles.rows();
    std::vector<Var<T>> groups;
    groups.reserve(kGroupCount);
    for (std::size_t k = 0; k < kGroupCount; ++k) {
        Var<T> seg = ad::slice_cols(profiles, layout.offset(k), layout.size(k));
        groups.push_back(nn::mlp(g, p, group_prefix(prefix, k), kCoderLayers, seg, true));
    }
    Var<T> group_major = ad::concat_rows<T>(groups);
    if (batch == 1) return group_major;
    std::vector<std::uint32_t> order(kGroupCount * batch);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t k = 0; k < kGroupCount; ++k)
            order[b * kGroupCount + k] = static_cast<std::uint32_t>(k * batch + b);
    return ad::gather_rows(group_major, std::move(order));
}

template <typename T>
Var<T> decode_genes(Graph<T>& g, const ParamStore<T>& p, const std::string& prefix, const GeneLayout& layout,
                    Var<T> tokens) {
    if (tokens.rows() % kGroupCount != 0) throw ShapeError("decode_genes: token rows not a multiple of 6");
    const std::size_t batch = tokens.rows() / kGroupCount;
    std::vector<Var<T>> parts;
    parts.reserve(kGroupCount);
    for (std::size_t k = 0; k < kGroupCount; ++k) {
        Var<T> rows;
        if (batch == 1) {
            rows = ad::slice_rows(tokens, k, 1);
        } else {
            std::vector<std::uint32_t> idx(batch);
            for (std::size_t b = 0; b < batch; ++b) idx[b] = static_cast<std::uint32_t>(b * kGroupCount + k);
            rows = ad::gather_rows(tokens, std::move(idx));
        }
        parts.push_back(nn::mlp(g, p, group_prefix(prefix, k), kCoderLayers, rows, false));
    }
    Var<T> out = ad::concat_cols<T>(parts);
    if (out.cols() != layout.total()) throw ShapeError("decode_genes: decoder widths do not match the layout");
    return out;
}

template <typename T>
CoAttended<T> coattend(Graph<T>& g, const ParamStore<T>& p, const std::string& prefix, Var<T> gene_tokens,
                       Var<T> patches, std::span<const std::size_t> patch_counts) {
    const std::size_t batch = patch_counts.size();
    if (gene_tokens.rows() != kGroupCount * batch) throw ShapeError("coattend: gene token rows != 6 * batch");
    if (std::accumulate(patch_counts.begin(), patch_counts.end(), std::size_t{0}) != patches.rows())
        throw ShapeError("coattend: patch counts do not match stacked patches");
    Var<T> q = nn::linear(g, p, prefix + ".q", gene_tokens);
    Var<T> k = nn::linear(g, p, prefix + ".k", patches);
    Var<T> v = nn::linear(g, p, prefix + ".v", patches);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    CoAttended<T> out;
    std::vector<Var<T>> features;
    features.reserve(batch);
    std::size_t p0 = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t m = patch_counts[b];
        if (m == 0) throw DataError("coattend: sample without patches");
        Var<T> qb = batch == 1 ? q : ad::slice_rows(q, b * kGroupCount, kGroupCount);
        Var<T> kb = batch == 1 ? k : ad::slice_rows(k, p0, m);
        Var<T> vb = batch == 1 ? v : ad::slice_rows(v, p0, m);
        Var<T> attn = ad::softmax_rows(ad::scale(ad::matmul_nt(qb, kb), inv_sqrt));
        out.attention.push_back(attn);
        features.push_back(ad::matmul(attn, vb));
        p0 += m;
    }
    out.features = batch == 1 ? features[0] : ad::concat_rows<T>(features);
    return out;
}

Tensor<float> timestep_features(std::span<const int> t, std::size_t dim) {
    const std::size_t half = dim / 2;
    Tensor<float> out = Tensor<float>::matrix(t.size(), dim);
    for (std::size_t b = 0; b < t.size(); ++b) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            out(b, i) = static_cast<float>(std::sin(t[b] * freq));
            out(b, half + i) = static_cast<float>(std::cos(t[b] * freq));
        }
    }
    return out;
}

template <typename T>
EpsPrediction<T> pathgen_eps(Graph<T>& g, const ParamStore<T>& p, const PathGenConfig& config, Var<T> x_t,
                             std::span<const int> t, Var<T> patches, std::span<const std::size_t> patch_counts) {
    const std::size_t batch = x_t.rows();
    if (t.size() != batch || patch_counts.size() != batch)
        throw ShapeError("pathgen_eps: batch size mismatch between x_t, t and patches");
    if (patches.cols() != config.patch_dim)
        throw ShapeError("pathgen_eps: patch dim " + std::to_string(patches.cols()) + " != " +
                         std::to_string(config.patch_dim));

    Var<T> tokens = encode_genes(g, p, "enc", config.layout, x_t);

    const Var<T> tfeat = g.input(timestep_features(t, config.embed_dim).template cast<T>());
    Var<T> temb = nn::linear(g, p, "time.proj", tfeat);
    std::vector<std::uint32_t> repeat(kGroupCount * batch);
    for (std::size_t i = 0; i < repeat.size(); ++i) repeat[i] = static_cast<std::uint32_t>(i / kGroupCount);
    tokens = ad::add(tokens, ad::gather_rows(temb, std::move(repeat)));

    const std::vector<std::size_t> blocks(batch, kGroupCount);
    EpsPrediction<T> out;
    for (std::size_t s = 0; s < config.stages; ++s) {
        const std::string sp = stage_prefix(config, s);
        CoAttended<T> co = coattend(g, p, sp + ".coattn", tokens, patches, patch_counts);
        tokens = ad::add(tokens, co.features);
        tokens = nn::transformer_layer(g, p, sp + ".encoder", config.transformer(), tokens, blocks);
        if (s + 1 == config.stages) out.attention = std::move(co.attention);
    }
    // Timestep-scaled skip from the input. The target noise is roughly
    // (x_t - sqrt(abar) mu) / sqrt(1 - abar), whose x_t coefficient the
    // LayerNorm'd token path cannot reproduce in scale. Unbounded: it exceeds 1
    // at small t.
    const Var<T> gate = nn::linear(g, p, "time.skip", tfeat);
    const Var<T> spread = ad::matmul(gate, g.input(Tensor<T>::matrix(1, config.layout.total(), T(1))));
    out.eps = ad::add(decode_genes(g, p, "dec", config.layout, tokens), ad::mul(spread, x_t));
    return out;
}

Tensor<float> stack_patches(std::span<const PatchSet* const> sets, std::vector<std::size_t>& counts) {
    counts.clear();
    if (sets.empty()) throw DataError("stack_patches: no patch sets");
    const std::size_t dim = sets.front()->dim();
    std::size_t rows = 0;
    for (const auto* s : sets) {
        if (s->count() == 0) throw DataError("stack_patches: empty patch set");
        if (s->dim() != dim) throw ShapeError("stack_patches: inconsistent embedding dims");
        rows += s->count();
        counts.push_back(s->count());
    }
    Tensor<float> out = Tensor<float>::matrix(rows, dim);
    float* dst = out.ptr();
    for (const auto* s : sets) dst = std::copy(s->embeddings.ptr(), s->embeddings.ptr() + s->embeddings.size(), dst);
    return out;
}

Tensor<float> encode_genes(const GeneProfile& profile, const ParamStore<float>& p, const GeneLayout& layout,
                           const std::string& prefix) {
    profile.validate(layout);
    Graph<float> g;
    return encode_genes(g, p, prefix, layout, g.input(Tensor<float>::row(profile.values))).value();
}

GeneProfile decode_genes(const Tensor<float>& embeddings, const ParamStore<float>& p, const GeneLayout& layout,
                         const std::string& prefix) {
    if (embeddings.rows() != kGroupCount) throw ShapeError("decode_genes: expected 6 embedding rows");
    Graph<float> g;
    const auto out = decode_genes(g, p, prefix, layout, g.input(embeddings)).value();
    return GeneProfile{out.storage()};
}

std::pair<Tensor<float>, CoAttentionMap> coattend(const Tensor<float>& gene_embeddings, const PatchSet& patches,
                                                 const ParamStore<float>& p, const std::string& prefix) {
    patches.validate();
    Graph<float> g;
    const std::array<std::size_t, 1> counts{patches.count()};
    auto co = coattend(g, p, prefix, g.input(gene_embeddings), g.input(patches.embeddings), counts);
    return {co.features.value(), CoAttentionMap{co.attention.front().value()}};
}

std::pair<GeneProfile, CoAttentionMap> pathgen_eps(const GeneProfile& x_t, int t, const PatchSet& patches,
                                                   const ParamStore<float>& p, const PathGenConfig& config) {
    x_t.validate(config.layout);
    patches.validate();
    Graph<float> g;
    const std::array<int, 1> ts{t};
    const std::array<std::size_t, 1> counts{patches.count()};
    auto pred = pathgen_eps(g, p, config, g.input(Tensor<float>::row(x_t.values)), ts, g.input(patches.embeddings),
                            counts);
    return {GeneProfile{pred.eps.value().storage()}, CoAttentionMap{pred.attention.front().value()}};
}

#define PATHGEN_INSTANTIATE_XMODAL(T)                                                                          \
    template Var<T> encode_genes(Graph<T>&, const ParamStore<T>&, const std::string&, const GeneLayout&,      \
                                 Var<T>);                                                                     \
    template Var<T> decode_genes(Graph<T>&, const ParamStore<T>&, const std::string&, const GeneLayout&,      \
                                 Var<T>);                                                                     \
    template CoAttended<T> coattend(Graph<T>&, const ParamStore<T>&, const std::string&, Var<T>, Var<T>,      \
                                    std::span<const std::size_t>);                                            \
    template EpsPrediction<T> pathgen_eps(Graph<T>&, const ParamStore<T>&, const PathGenConfig&, Var<T>,      \
                                          std::span<const int>, Var<T>, std::span<const std::size_t>);

PATHGEN_INSTANTIATE_XMODAL(float)
PATHGEN_INSTANTIATE_XMODAL(double)

}  // namespace pathgen::xmodal
