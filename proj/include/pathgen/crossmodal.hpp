#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pathgen/ad/graph.hpp"
#include "pathgen/ad/layers.hpp"

namespace pathgen::xmodal {

inline constexpr std::size_t kGroupCount = 6;

inline constexpr std::array<std::string_view, kGroupCount> kGroupNames = {
    "tumour_suppressor", "oncogene", "protein_kinase", "cell_differentiation", "transcription_factor",
    "cytokine_growth_factor"};

// Sizes and offsets of the six ordered gene groups within a profile vector.
class GeneLayout {
public:
    GeneLayout() = default;
    explicit GeneLayout(std::array<std::size_t, kGroupCount> sizes);

    std::size_t size(std::size_t group) const { return sizes_.at(group); }
    std::size_t offset(std::size_t group) const { return offsets_.at(group); }
    std::size_t total() const noexcept { return total_; }
    const std::array<std::size_t, kGroupCount>& sizes() const noexcept { return sizes_; }

    bool operator==(const GeneLayout&) const = default;

private:
    std::array<std::size_t, kGroupCount> sizes_{};
    std::array<std::size_t, kGroupCount> offsets_{};
    std::size_t total_ = 0;
};

// z-scored expression values laid out group after group.
struct GeneProfile {
    std::vector<float> values;

    std::span<const float> group(const GeneLayout& layout, std::size_t k) const {
        return std::span<const float>(values).subspan(layout.offset(k), layout.size(k));
    }
    void validate(const GeneLayout& layout) const;
};

struct GridCoord {
    int row = 0;
    int col = 0;
    auto operator<=>(const GridCoord&) const = default;
};

// Per-slide patch embeddings (M x D) with their grid positions.
struct PatchSet {
    ad::Tensor<float> embeddings;
    std::vector<GridCoord> coords;
    int magnification = 1;

    std::size_t count() const noexcept { return embeddings.rows(); }
    std::size_t dim() const noexcept { return embeddings.cols(); }
    void validate() const;
};

// One row per gene group, one column per patch; rows are distributions.
struct CoAttentionMap {
    ad::Tensor<float> weights;
};

struct PathGenConfig {
    GeneLayout layout;
    std::size_t patch_dim = 64;
    std::size_t embed_dim = 64;
    std::size_t hidden = 256;
    std::size_t heads = 4;
    std::size_t ffn_mult = 4;
    std::size_t stages = 3;
    bool share_stage_weights = false;

    nn::TransformerShape transformer() const { return {embed_dim, heads, ffn_mult * embed_dim}; }
    void validate() const;
};

// Per-group encoder: group_size -> hidden -> hidden -> hidden -> E, ELU after every layer.
void init_gene_encoders(ad::ParamStore<float>& p, const std::string& prefix, const GeneLayout& layout,
                        std::size_t hidden, std::size_t embed, Rng& rng);
// Per-group decoder: E -> hidden -> hidden -> hidden -> group_size, last layer linear.
void init_gene_decoders(ad::ParamStore<float>& p, const std::string& prefix, const GeneLayout& layout,
                        std::size_t hidden, std::size_t embed, Rng& rng);
// Query projection on gene tokens, key/value projections on patches.
void init_coattention(ad::ParamStore<float>& p, const std::string& prefix, std::size_t embed,
                      std::size_t patch_dim, Rng& rng);

ad::ParamStore<float> init_pathgen(const PathGenConfig& config, std::uint64_t seed);

// Token layout used throughout: profiles are B x G; token matrices are
// (6B) x E, sample-major (row b*6 + k is group k of sample b).
template <typename T>
ad::Var<T> encode_genes(ad::Graph<T>& g, const ad::ParamStore<T>& p, const std::string& prefix,
                        const GeneLayout& layout, ad::Var<T> profiles);
template <typename T>
ad::Var<T> decode_genes(ad::Graph<T>& g, const ad::ParamStore<T>& p, const std::string& prefix,
                        const GeneLayout& layout, ad::Var<T> tokens);

template <typename T>
struct CoAttended {
    ad::Var<T> features;                 // (6B) x E, attention-weighted patch values
    std::vector<ad::Var<T>> attention;   // per sample, 6 x M_b
};

// softmax(Q K^T / sqrt(E)) V with gene tokens as queries and patches as keys
// and values. `patches` stacks all samples' patches; `patch_counts[b]` = M_b.
template <typename T>
CoAttended<T> coattend(ad::Graph<T>& g, const ad::ParamStore<T>& p, const std::string& prefix,
                       ad::Var<T> gene_tokens, ad::Var<T> patches, std::span<const std::size_t> patch_counts);

// Sinusoidal embedding of the timestep, one row per entry of `t`.
ad::Tensor<float> timestep_features(std::span<const int> t, std::size_t dim);

template <typename T>
struct EpsPrediction {
    ad::Var<T> eps;                      // B x G
    std::vector<ad::Var<T>> attention;   // final stage map per sample, 6 x M_b
};

// The PathGen noise predictor: encode genes, add timestep embedding, then
// [co-attention (residual) -> transformer encoder layer] per stage, decode,
// plus a timestep-gated copy of x_t.
template <typename T>
EpsPrediction<T> pathgen_eps(ad::Graph<T>& g, const ad::ParamStore<T>& p, const PathGenConfig& config,
                             ad::Var<T> x_t, std::span<const int> t, ad::Var<T> patches,
                             std::span<const std::size_t> patch_counts);

// Stacks patch embeddings of several slides into one (sum M_b) x D tensor.
ad::Tensor<float> stack_patches(std::span<const PatchSet* const> sets, std::vector<std::size_t>& counts);

// Convenience single-sample entry points over float parameters.
ad::Tensor<float> encode_genes(const GeneProfile& profile, const ad::ParamStore<float>& p, const GeneLayout& layout,
                               const std::string& prefix = "enc");
GeneProfile decode_genes(const ad::Tensor<float>& embeddings, const ad::ParamStore<float>& p,
                         const GeneLayout& layout, const std::string& prefix = "dec");
std::pair<ad::Tensor<float>, CoAttentionMap> coattend(const ad::Tensor<float>& gene_embeddings, const PatchSet& patches,
                                                     const ad::ParamStore<float>& p, const std::string& prefix);
std::pair<GeneProfile, CoAttentionMap> pathgen_eps(const GeneProfile& x_t, int t, const PatchSet& patches,
                                                   const ad::ParamStore<float>& p, const PathGenConfig& config);

}  // namespace pathgen::xmodal
