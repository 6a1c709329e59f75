#pragma once

#include <span>
#include <string>
#include <vector>

#include "pathgen/ad/graph.hpp"
#include "pathgen/random.hpp"

// Layer building blocks shared by the generative and predictive networks.
// Parameters live in a ParamStore under "<prefix>.w" / "<prefix>.b" style
// names; the graph functions only read them.
namespace pathgen::nn {

using ad::Graph;
using ad::ParamStore;
using ad::Var;

// y = x W + b with W: in x out, b: 1 x out. Uniform(-1/sqrt(in), 1/sqrt(in)) init.
void init_linear(ParamStore<float>& p, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);
template <typename T>
Var<T> linear(Graph<T>& g, const ParamStore<T>& p, const std::string& prefix, Var<T> x);

// Linear layers with ELU between them; `elu_last` applies ELU after the final layer too.
void init_mlp(ParamStore<float>& p, const std::string& prefix, std::span<const std::size_t> widths, Rng& rng);
template <typename T>
Var<T> mlp(Graph<T>& g, const ParamStore<T>& p, const std::string& prefix, std::size_t layers, Var<T> x,
           bool elu_last);

void init_layer_norm(ParamStore<float>& p, const std::string& prefix, std::size_t dim);
template <typename T>
Var<T> layer_norm(Graph<T>& g, const ParamStore<T>& p, const std::string& prefix, Var<T> x);

struct TransformerShape {
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t ffn = 256;
};

// Post-norm encoder layer: x = LN(x + MHA(x)); x = LN(x + FFN(x)), ELU in the
// feed-forward block. `x` stacks several independent sequences: rows
// [offset_i, offset_i + blocks[i]) attend only to each other.
void init_transformer_layer(ParamStore<float>& p, const std::string& prefix, const TransformerShape& shape, Rng& rng);
template <typename T>
Var<T> transformer_layer(Graph<T>& g, const ParamStore<T>& p, const std::string& prefix,
                         const TransformerShape& shape, Var<T> x, std::span<const std::size_t> blocks);

// Gated global attention pooling: score_i = w^T (tanh(V h_i) * sigmoid(U h_i)),
// softmax within each block, weighted sum. Returns one row per block.
void init_attention_pool(ParamStore<float>& p, const std::string& prefix, std::size_t dim, std::size_t hidden,
                         Rng& rng);
template <typename T>
Var<T> attention_pool(Graph<T>& g, const ParamStore<T>& p, const std::string& prefix, Var<T> x,
                      std::span<const std::size_t> blocks);

}  // namespace pathgen::nn
