#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pathgen/crossmodal.hpp"
#include "pathgen/predictor.hpp"

// Synthetic paired slides and transcriptomes. A per-case latent z drives the
// patch embeddings (linearly), the gene profile (through linear and quadratic
// features of z), the grade and the survival time.
namespace pathgen::synth {

enum class Split { Train = 0, Val = 1, Cal = 2, Test = 3 };
inline constexpr std::array<Split, 4> kSplits = {Split::Train, Split::Val, Split::Cal, Split::Test};
std::string split_name(Split s);
Split parse_split(const std::string& name);

struct CohortConfig {
    std::array<std::size_t, xmodal::kGroupCount> group_sizes{8, 16, 24, 20, 48, 16};
    std::size_t patch_dim = 64;
    std::size_t patches_per_slide = 32;
    std::array<std::size_t, 4> split_sizes{300, 60, 80, 80};
    std::size_t grades = 3;
    double censoring_rate = 0.3;
    double female_fraction = 0.5;
    int magnification_levels = 3;
    std::uint64_t seed = 7;

    std::size_t latent_dim = 6;
    double patch_noise = 0.3;      // per-patch isotropic noise at magnification 1
    double patch_spread = 0.3;     // per-patch jitter of the latent
    double gene_gain = 0.5;        // pre-tanh scale; larger saturates the genes
    double gene_noise = 0.02;      // relative to the group signal scale
    double gene_private = 0.03;    // weight of a latent seen only by the genes
    double background_rate = 0.12; // chance a grid cell is mostly background

    xmodal::GeneLayout layout() const { return xmodal::GeneLayout(group_sizes); }
    std::size_t total_cases() const;
    void validate() const;
};

struct CaseRecord {
    std::string id;
    Split split = Split::Train;
    xmodal::PatchSet patches;
    xmodal::GeneProfile genes;  // z-scored with training statistics
    int grade = 0;
    predictor::SurvivalLabel survival;
    std::string gender;
    double age = 0.0;
    int magnification = 1;
    std::vector<double> latent;  // generator ground truth, for diagnostics only
};

struct GeneStats {
    std::vector<double> mean;
    std::vector<double> sd;
};

struct Cohort {
    CohortConfig config;
    std::vector<CaseRecord> cases;
    GeneStats stats;
    predictor::TimeBins bins;

    std::vector<const CaseRecord*> split(Split s) const;
};

// Keep a patch unless its normalised mean intensity exceeds 0.8.
bool patch_filter(double mean_intensity);

GeneStats fit_gene_stats(std::span<const std::vector<float>> profiles);
// (x - mean) / sd per gene; DataError naming the gene if its sd is zero.
std::vector<float> zscore(std::span<const float> values, const GeneStats& stats);

// Disjoint random partition of n items with sizes from largest-remainder
// rounding of the fractions. Splits with a positive fraction must be non-empty.
std::array<std::vector<std::size_t>, 4> split_cohort(std::size_t n, const std::array<double, 4>& fractions,
                                                     std::uint64_t seed);

Cohort generate_cohort(const CohortConfig& config);

}  // namespace pathgen::synth
