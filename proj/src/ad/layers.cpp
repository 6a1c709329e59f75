#include "pathgen/ad/layers.hpp"

#include <cmath>

namespace pathgen::nn {

void init_linear(ParamStore<float>& p, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    ad::Tensor<float> w = ad::Tensor<float>::matrix(in, out);
    for (auto& v : w.values()) v = static_cast<float>(dist(rng));
    ad::Tensor<float> b = ad::Tensor<float>::matrix(1, out);
    for (auto& v : b.values()) v = static_cast<float>(dist(rng));
    p.add(prefix + ".w", std::move(w));
    p.add(prefix + ".b", std::move(b));
}

template <typename T>
Var<T> linear(Graph<T>& g, const ParamStore<T>& p, const std::string& prefix, Var<T> x) {
    return ad::add_row(ad::matmul(x, g.param(p, prefix + ".w")), g.param(p, prefix + ".b"));
}

void init_mlp(ParamStore<float>& p, const std::string& prefix, std::span<const std::size_t> widths, Rng& rng) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
        init_linear(p, prefix + "." + std::to_string(i), widths[i], widths[i + 1], rng);
}

template <typename T>
Var<T> mlp(Graph<T>& g, const ParamStore<T>& p, const std::string& prefix, std::size_t layers, Var<T> x,
           bool elu_last) {
    for (std::size_t i = 0; i < layers; ++i) {
        x = linear(g, p, prefix + "." + std::to_string(i), x);
        if (i + 1 < layers || elu_last) x = ad::elu(x);
    }
    return x;
}

void init_layer_norm(ParamStore<float>& p, const std::string& prefix, std::size_t dim) {
    p.add(prefix + ".gain", ad::Tensor<float>::matrix(1, dim, 1.0f));
    p.add(prefix + ".bias", ad::Tensor<float>::matrix(1, dim, 0.0f));
}

template <typename T>
Var<T> layer_norm(Graph<T>& g, const ParamStore<T>& p, const std::string& prefix, Var<T> x) {
    return ad::layer_norm(x, g.param(p, prefix + ".gain"), g.param(p, prefix + ".bias"));
}

void init_transformer_layer(ParamStore<float>& p, const std::string& prefix, const TransformerShape& shape, Rng& rng) {
    if (shape.heads == 0 || shape.dim % shape.heads != 0)
        throw ConfigError("transformer: dim " + std::to_string(shape.dim) + " not divisible by heads " +
                          std::to_string(shape.heads));
    init_linear(p, prefix + ".qkv", shape.dim, 3 * shape.dim, rng);
    init_linear(p, prefix + ".out", shape.dim, shape.dim, rng);
    init_layer_norm(p, prefix + ".ln1", shape.dim);
    init_linear(p, prefix + ".ffn1", shape.dim, shape.ffn, rng);
    init_linear(p, prefix + ".ffn2", shape.ffn, shape.dim, rng);
    init_layer_norm(p, prefix + ".ln2", shape.dim);
}

template <typename T>
Var<T> transformer_layer(Graph<T>& g, const ParamStore<T>& p, const std::string& prefix,
                         const TransformerShape& shape, Var<T> x, std::span<const std::size_t> blocks) {
    const std::size_t dim = shape.dim;
    const std::size_t dh = dim / shape.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Var<T> qkv = linear(g, p, prefix + ".qkv", x);

    std::vector<Var<T>> per_block;
    per_block.reserve(blocks.size());
    std::vector<Var<T>> heads(shape.heads);
    std::size_t r0 = 0;
    for (const std::size_t n : blocks) {
        for (std::size_t h = 0; h < shape.heads; ++h) {
            Var<T> q = ad::slice(qkv, r0, n, h * dh, dh);
            Var<T> k = ad::slice(qkv, r0, n, dim + h * dh, dh);
            Var<T> v = ad::slice(qkv, r0, n, 2 * dim + h * dh, dh);
            Var<T> attn = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt));
            heads[h] = ad::matmul(attn, v);
        }
        per_block.push_back(shape.heads == 1 ? heads[0] : ad::concat_cols<T>(heads));
        r0 += n;
    }
    if (r0 != x.rows()) throw ShapeError("transformer_layer: block sizes do not cover the input rows");
    Var<T> attended = per_block.size() == 1 ? per_block[0] : ad::concat_rows<T>(per_block);
    x = layer_norm(g, p, prefix + ".ln1", ad::add(x, linear(g, p, prefix + ".out", attended)));
    Var<T> ff = linear(g, p, prefix + ".ffn2", ad::elu(linear(g, p, prefix + ".ffn1", x)));
    return layer_norm(g, p, prefix + ".ln2", ad::add(x, ff));
}

void init_attention_pool(ParamStore<float>& p, const std::string& prefix, std::size_t dim, std::size_t hidden,
                         Rng& rng) {
    init_linear(p, prefix + ".v", dim, hidden, rng);
    init_linear(p, prefix + ".u", dim, hidden, rng);
    init_linear(p, prefix + ".score", hidden, 1, rng);
}

template <typename T>
Var<T> attention_pool(Graph<T>& g, const ParamStore<T>& p, const std::string& prefix, Var<T> x,
                      std::span<const std::size_t> blocks) {
    Var<T> gate = ad::mul(ad::tanh(linear(g, p, prefix + ".v", x)), ad::sigmoid(linear(g, p, prefix + ".u", x)));
    Var<T> scores = linear(g, p, prefix + ".score", gate);  // rows x 1
    std::vector<Var<T>> pooled;
    pooled.reserve(blocks.size());
    std::size_t r0 = 0;
    for (const std::size_t n : blocks) {
        Var<T> w = ad::softmax_rows(ad::transpose(ad::slice_rows(scores, r0, n)));  // 1 x n
        pooled.push_back(ad::matmul(w, ad::slice_rows(x, r0, n)));
        r0 += n;
    }
    return pooled.size() == 1 ? pooled[0] : ad::concat_rows<T>(pooled);
}

#define PATHGEN_INSTANTIATE_LAYERS(T)                                                                      \
    template Var<T> linear(Graph<T>&, const ParamStore<T>&, const std::string&, Var<T>);                   \
    template Var<T> mlp(Graph<T>&, const ParamStore<T>&, const std::string&, std::size_t, Var<T>, bool);   \
    template Var<T> layer_norm(Graph<T>&, const ParamStore<T>&, const std::string&, Var<T>);               \
    template Var<T> transformer_layer(Graph<T>&, const ParamStore<T>&, const std::string&,                 \
                                      const TransformerShape&, Var<T>, std::span<const std::size_t>);      \
    template Var<T> attention_pool(Graph<T>&, const ParamStore<T>&, const std::string&, Var<T>,            \
                                   std::span<const std::size_t>);

PATHGEN_INSTANTIATE_LAYERS(float)
PATHGEN_INSTANTIATE_LAYERS(double)

}  // namespace pathgen::nn
