#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pathgen/ad/adam.hpp"
#include "pathgen/crossmodal.hpp"
#include "pathgen/predictor.hpp"
#include "pathgen/synthdata.hpp"

// JSON forms of the configs, the checkpoint container and the on-disk cohort.
namespace pathgen::io {

using json = nlohmann::json;

// Everything a run needs besides the cohort itself. Defaults are the reference
// hyperparameters; configs/desk.json holds the single-core values.
struct RunConfig {
    synth::CohortConfig cohort;
    xmodal::PathGenConfig pathgen;        // layout and patch_dim follow the cohort
    predictor::PredictorConfig predictor; // likewise

    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double pathgen_lr = 1e-4;
    int pathgen_epochs = 200;
    std::size_t pathgen_batch = 16;
    double ema_decay = 0.0;

    double predictor_lr = 2e-4;
    int predictor_epochs = 20;
    std::size_t predictor_batch = 16;
    double lambda = 0.3;
    predictor::LambdaAssignment assignment = predictor::LambdaAssignment::SurvivalFirst;
    // Keep the epoch with the lowest mean validation loss instead of the last.
    bool select_on_validation = false;

    double alpha = 0.1;
    std::uint64_t seed = 0;
    std::string cohort_path;  // informational; commands take the cohort directory as an argument

    // Copies the cohort's layout, patch dim and grade count into the model configs.
    void sync_models();
    void validate() const;
};

json to_json(const synth::CohortConfig& c);
synth::CohortConfig cohort_config_from_json(const json& j);
json to_json(const xmodal::PathGenConfig& c);
xmodal::PathGenConfig pathgen_config_from_json(const json& j, const xmodal::GeneLayout& layout);
json to_json(const predictor::PredictorConfig& c);
predictor::PredictorConfig predictor_config_from_json(const json& j, const xmodal::GeneLayout& layout);
// Missing keys keep their defaults; unknown keys and wrong types raise ConfigError.
json to_json(const RunConfig& c);
RunConfig run_config_from_json(const json& j);
RunConfig load_run_config(const std::filesystem::path& path);

std::string assignment_name(predictor::LambdaAssignment a);
predictor::LambdaAssignment parse_assignment(const std::string& name);

inline constexpr int kCheckpointVersion = 1;

// File layout: 8-byte magic "PGCKPT\0\1", u64 little-endian header length, the
// header as compact JSON (keys sorted), then float32 little-endian blobs at the
// offsets listed in the header's tensor table.
struct Checkpoint {
    int version = kCheckpointVersion;
    std::string module;  // "pathgen" | "mcat_gr"
    json config;
    ad::ParamStore<float> params;
    std::optional<ad::OptimizerState<float>> optimizer;
    std::optional<ad::ParamStore<float>> average;  // EMA of params, when tracked
    std::optional<ad::ParamStore<float>> best;     // best-on-validation params, when tracked
    int epoch = 0;     // completed epochs
    json lineage;      // seeds and provenance of inputs
    json log;          // per-epoch records

    bool operator==(const Checkpoint&) const = default;
};

std::vector<char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<char>& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<char> read_file(const std::filesystem::path& path);
// Writes through a temporary file and renames, so readers never see partial output.
void write_file(const std::filesystem::path& path, const std::vector<char>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
json read_json(const std::filesystem::path& path);

// Cohort directory: cohort.json (config, training statistics, time bins and one
// entry per case), splits/<name>.json (case ids), cases/<id>.bin holding the
// arrays patches [M x D], coords [M x 2], genes [G] and latent [d], each as u32
// rank, u64 dims, float32 values, all little endian.
void write_cohort(const synth::Cohort& cohort, const std::filesystem::path& dir);
synth::Cohort read_cohort(const std::filesystem::path& dir);

// Stable 64-bit FNV-1a, used to derive per-case seeds from ids.
std::uint64_t fnv1a(std::string_view bytes);

}  // namespace pathgen::io
