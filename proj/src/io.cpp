#include "pathgen/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "pathgen/error.hpp"

namespace pathgen::io {

namespace fs = std::filesystem;

namespace {

// Reads known keys from a JSON object and rejects anything else. Keys starting
// with '_' are free-form notes.
class Fields {
public:
    Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        known_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_.at(key);
        if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
            if (!v.is_number_unsigned()) throw ConfigError(where_ + "." + key + ": expected a non-negative integer");
        } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
            if (!v.is_number_integer()) throw ConfigError(where_ + "." + key + ": expected an integer");
        }
        try {
            out = v.get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const std::string& key) {
        known_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [k, _] : j_.items())
            if (!k.empty() && k[0] != '_' && !known_.count(k)) throw ConfigError("unknown key " + where_ + "." + k);
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> known_;
};

void put_u32(std::vector<char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_floats(std::vector<char>& out, std::span<const float> values) {
    const std::size_t at = out.size();
    out.resize(at + 4 * values.size());
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out.data() + at, values.data(), 4 * values.size());
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(values[i]);
            for (int b = 0; b < 4; ++b) out[at + 4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
        }
    }
}

class ByteReader {
public:
    ByteReader(const std::vector<char>& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    std::uint64_t uint(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i)
            v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += width;
        return v;
    }

    void floats(std::span<float> out) {
        need(4 * out.size());
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(out.data(), bytes_.data() + pos_, 4 * out.size());
        } else {
            for (std::size_t i = 0; i < out.size(); ++i) {
                std::uint32_t bits = 0;
                for (int b = 0; b < 4; ++b)
                    bits |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + 4 * i + b])) << (8 * b);
                out[i] = std::bit_cast<float>(bits);
            }
        }
        pos_ += 4 * out.size();
    }

    std::string text(std::size_t n) {
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }
    void seek(std::size_t p) {
        if (p > bytes_.size()) throw DataError(what_ + ": offset past end of file");
        pos_ = p;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (n > bytes_.size() - pos_) throw DataError(what_ + ": truncated");
    }

    const std::vector<char>& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

constexpr char kMagic[8] = {'P', 'G', 'C', 'K', 'P', 'T', '\0', '\1'};

template <std::size_t N>
json sizes_json(const std::array<std::size_t, N>& a) {
    return json(std::vector<std::size_t>(a.begin(), a.end()));
}

template <std::size_t N>
void read_sizes(Fields& f, const std::string& key, std::array<std::size_t, N>& out) {
    std::vector<std::size_t> v(out.begin(), out.end());
    f.get(key, v);
    if (v.size() != N) throw ConfigError(key + ": expected " + std::to_string(N) + " entries");
    std::copy(v.begin(), v.end(), out.begin());
}

}  // namespace

json to_json(const synth::CohortConfig& c) {
    return {{"group_sizes", sizes_json(c.group_sizes)},
            {"patch_dim", c.patch_dim},
            {"patches_per_slide", c.patches_per_slide},
            {"split_sizes", sizes_json(c.split_sizes)},
            {"grades", c.grades},
            {"censoring_rate", c.censoring_rate},
            {"female_fraction", c.female_fraction},
            {"magnification_levels", c.magnification_levels},
            {"seed", c.seed},
            {"latent_dim", c.latent_dim},
            {"patch_noise", c.patch_noise},
            {"patch_spread", c.patch_spread},
            {"gene_gain", c.gene_gain},
            {"gene_noise", c.gene_noise},
            {"gene_private", c.gene_private},
            {"background_rate", c.background_rate}};
}

synth::CohortConfig cohort_config_from_json(const json& j) {
    synth::CohortConfig c;
    Fields f(j, "cohort");
    read_sizes(f, "group_sizes", c.group_sizes);
    f.get("patch_dim", c.patch_dim);
    f.get("patches_per_slide", c.patches_per_slide);
    read_sizes(f, "split_sizes", c.split_sizes);
    f.get("grades", c.grades);
    f.get("censoring_rate", c.censoring_rate);
    f.get("female_fraction", c.female_fraction);
    f.get("magnification_levels", c.magnification_levels);
    f.get("seed", c.seed);
    f.get("latent_dim", c.latent_dim);
    f.get("patch_noise", c.patch_noise);
    f.get("patch_spread", c.patch_spread);
    f.get("gene_gain", c.gene_gain);
    f.get("gene_noise", c.gene_noise);
    f.get("gene_private", c.gene_private);
    f.get("background_rate", c.background_rate);
    f.finish();
    c.validate();
    return c;
}

json to_json(const xmodal::PathGenConfig& c) {
    return {{"embed_dim", c.embed_dim}, {"hidden", c.hidden},   {"heads", c.heads},
            {"ffn_mult", c.ffn_mult},   {"stages", c.stages},   {"share_stage_weights", c.share_stage_weights},
            {"patch_dim", c.patch_dim}, {"group_sizes", sizes_json(c.layout.sizes())}};
}

xmodal::PathGenConfig pathgen_config_from_json(const json& j, const xmodal::GeneLayout& layout) {
    xmodal::PathGenConfig c;
    c.layout = layout;
    Fields f(j, "pathgen");
    f.get("embed_dim", c.embed_dim);
    f.get("hidden", c.hidden);
    f.get("heads", c.heads);
    f.get("ffn_mult", c.ffn_mult);
    f.get("stages", c.stages);
    f.get("share_stage_weights", c.share_stage_weights);
    f.get("patch_dim", c.patch_dim);
    auto sizes = layout.sizes();
    read_sizes(f, "group_sizes", sizes);
    c.layout = xmodal::GeneLayout(sizes);
    f.finish();
    c.validate();
    return c;
}

json to_json(const predictor::PredictorConfig& c) {
    return {{"embed_dim", c.embed_dim},     {"hidden", c.hidden},         {"heads", c.heads},
            {"path_layers", c.path_layers}, {"gene_layers", c.gene_layers}, {"grades", c.grades},
            {"patch_dim", c.patch_dim},     {"group_sizes", sizes_json(c.layout.sizes())}};
}

predictor::PredictorConfig predictor_config_from_json(const json& j, const xmodal::GeneLayout& layout) {
    predictor::PredictorConfig c;
    c.layout = layout;
    Fields f(j, "predictor");
    f.get("embed_dim", c.embed_dim);
    f.get("hidden", c.hidden);
    f.get("heads", c.heads);
    f.get("path_layers", c.path_layers);
    f.get("gene_layers", c.gene_layers);
    f.get("grades", c.grades);
    f.get("patch_dim", c.patch_dim);
    auto sizes = layout.sizes();
    read_sizes(f, "group_sizes", sizes);
    c.layout = xmodal::GeneLayout(sizes);
    f.finish();
    c.validate();
    return c;
}

std::string assignment_name(predictor::LambdaAssignment a) {
    return a == predictor::LambdaAssignment::GradeFirst ? "grade_first" : "survival_first";
}

predictor::LambdaAssignment parse_assignment(const std::string& name) {
    if (name == "grade_first") return predictor::LambdaAssignment::GradeFirst;
    if (name == "survival_first") return predictor::LambdaAssignment::SurvivalFirst;
    throw ConfigError("unknown lambda assignment '" + name + "' (grade_first | survival_first)");
}

void RunConfig::sync_models() {
    pathgen.layout = predictor.layout = cohort.layout();
    pathgen.patch_dim = predictor.patch_dim = cohort.patch_dim;
    predictor.grades = cohort.grades;
}

void RunConfig::validate() const {
    cohort.validate();
    pathgen.validate();
    predictor.validate();
    if (pathgen.layout != cohort.layout() || predictor.layout != cohort.layout())
        throw ConfigError("model gene layout differs from the cohort's");
    if (pathgen.patch_dim != cohort.patch_dim || predictor.patch_dim != cohort.patch_dim)
        throw ConfigError("model patch_dim differs from the cohort's");
    if (predictor.grades != cohort.grades) throw ConfigError("predictor grades differ from the cohort's");
    if (timesteps < 1) throw ConfigError("timesteps must be >= 1");
    if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1)) throw ConfigError("need 0 < beta_start <= beta_end < 1");
    if (!(pathgen_lr > 0 && predictor_lr > 0)) throw ConfigError("learning rates must be positive");
    if (pathgen_epochs < 0 || predictor_epochs < 0) throw ConfigError("epochs must be >= 0");
    if (pathgen_batch == 0 || predictor_batch == 0) throw ConfigError("batch sizes must be >= 1");
    if (!(ema_decay >= 0 && ema_decay < 1)) throw ConfigError("ema_decay must be in [0, 1)");
    if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("lambda must be in [0, 1]");
    if (!(alpha > 0 && alpha < 1)) throw ConfigError("alpha must be in (0, 1)");
}

json to_json(const RunConfig& c) {
    json pg = to_json(c.pathgen), pr = to_json(c.predictor);
    // Layout and patch dim are derived from the cohort.
    for (auto* j : {&pg, &pr}) {
        j->erase("group_sizes");
        j->erase("patch_dim");
    }
    pr.erase("grades");
    return {{"cohort", to_json(c.cohort)},
            {"pathgen", pg},
            {"predictor", pr},
            {"timesteps", c.timesteps},
            {"beta_start", c.beta_start},
            {"beta_end", c.beta_end},
            {"pathgen_lr", c.pathgen_lr},
            {"pathgen_epochs", c.pathgen_epochs},
            {"pathgen_batch", c.pathgen_batch},
            {"ema_decay", c.ema_decay},
            {"predictor_lr", c.predictor_lr},
            {"predictor_epochs", c.predictor_epochs},
            {"predictor_batch", c.predictor_batch},
            {"lambda", c.lambda},
            {"lambda_assignment", assignment_name(c.assignment)},
            {"select_on_validation", c.select_on_validation},
            {"alpha", c.alpha},
            {"seed", c.seed},
            {"cohort_path", c.cohort_path}};
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    Fields f(j, "config");
    if (const json* v = f.child("cohort")) c.cohort = cohort_config_from_json(*v);
    c.sync_models();
    if (const json* v = f.child("pathgen")) c.pathgen = pathgen_config_from_json(*v, c.cohort.layout());
    if (const json* v = f.child("predictor")) c.predictor = predictor_config_from_json(*v, c.cohort.layout());
    c.sync_models();
    f.get("timesteps", c.timesteps);
    f.get("beta_start", c.beta_start);
    f.get("beta_end", c.beta_end);
    f.get("pathgen_lr", c.pathgen_lr);
    f.get("pathgen_epochs", c.pathgen_epochs);
    f.get("pathgen_batch", c.pathgen_batch);
    f.get("ema_decay", c.ema_decay);
    f.get("predictor_lr", c.predictor_lr);
    f.get("predictor_epochs", c.predictor_epochs);
    f.get("predictor_batch", c.predictor_batch);
    f.get("lambda", c.lambda);
    std::string assignment = assignment_name(c.assignment);
    f.get("lambda_assignment", assignment);
    c.assignment = parse_assignment(assignment);
    f.get("select_on_validation", c.select_on_validation);
    f.get("alpha", c.alpha);
    f.get("seed", c.seed);
    f.get("cohort_path", c.cohort_path);
    f.finish();
    c.validate();
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    json j;
    try {
        j = read_json(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    return run_config_from_json(j);
}

std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
    json table = json::array();
    std::vector<const ad::Tensor<float>*> blobs;
    std::uint64_t offset = 0;
    auto add_section = [&](const std::string& section, const ad::ParamStore<float>& store) {
        for (const auto& [name, t] : store.tensors()) {
            table.push_back({{"section", section}, {"name", name}, {"shape", t.shape()}, {"offset", offset},
                             {"count", t.size()}});
            offset += 4 * t.size();
            blobs.push_back(&t);
        }
    };
    add_section("params", ckpt.params);
    json optimizer = nullptr;
    if (ckpt.optimizer) {
        const auto& o = *ckpt.optimizer;
        optimizer = {{"step", o.step},
                     {"learning_rate", o.config.learning_rate},
                     {"beta1", o.config.beta1},
                     {"beta2", o.config.beta2},
                     {"epsilon", o.config.epsilon}};
        add_section("adam_m", o.first_moment);
        add_section("adam_v", o.second_moment);
    }
    if (ckpt.average) add_section("average", *ckpt.average);
    if (ckpt.best) add_section("best", *ckpt.best);

    const json header = {{"format_version", ckpt.version}, {"module", ckpt.module}, {"config", ckpt.config},
                         {"epoch", ckpt.epoch},            {"lineage", ckpt.lineage}, {"log", ckpt.log},
                         {"optimizer", optimizer},         {"has_average", ckpt.average.has_value()},
                         {"has_best", ckpt.best.has_value()},
                         {"tensors", table}};
    const std::string text = header.dump();
    std::vector<char> out(kMagic, kMagic + 8);
    put_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    out.reserve(out.size() + offset);
    for (const auto* t : blobs) put_floats(out, t->values());
    return out;
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
    ByteReader in(bytes, "checkpoint");
    if (in.text(8) != std::string(kMagic, 8)) throw DataError("not a checkpoint file (bad magic)");
    const std::uint64_t header_len = in.uint(8);
    if (header_len > bytes.size()) throw DataError("checkpoint: truncated");
    json header;
    try {
        header = json::parse(in.text(header_len));
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint header: ") + e.what());
    }
    const std::size_t base = in.pos();
    Checkpoint c;
    try {
        c.version = header.at("format_version").get<int>();
        if (c.version != kCheckpointVersion)
            throw ConfigError("checkpoint format version " + std::to_string(c.version) + ", this build reads version " +
                              std::to_string(kCheckpointVersion));
        c.module = header.at("module").get<std::string>();
        c.config = header.at("config");
        c.epoch = header.at("epoch").get<int>();
        c.lineage = header.at("lineage");
        c.log = header.at("log");
        if (!header.at("optimizer").is_null()) {
            const json& o = header.at("optimizer");
            ad::OptimizerState<float> st;
            st.step = o.at("step").get<std::uint64_t>();
            st.config = {o.at("learning_rate").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                         o.at("epsilon").get<double>()};
            c.optimizer = std::move(st);
        }
        if (header.at("has_average").get<bool>()) c.average.emplace();
        if (header.at("has_best").get<bool>()) c.best.emplace();
        std::uint64_t expected = 0;
        for (const auto& e : header.at("tensors")) {
            const auto section = e.at("section").get<std::string>();
            const auto shape = e.at("shape").get<ad::Shape>();
            const auto count = e.at("count").get<std::uint64_t>();
            const auto offset = e.at("offset").get<std::uint64_t>();
            if (count != ad::shape_size(shape) || offset != expected)
                throw DataError("checkpoint: inconsistent tensor table at " + e.at("name").get<std::string>());
            expected += 4 * count;
            ad::Tensor<float> t(shape);
            in.seek(base + offset);
            in.floats(t.values());
            ad::ParamStore<float>* store = nullptr;
            if (section == "params") store = &c.params;
            else if (section == "adam_m" && c.optimizer) store = &c.optimizer->first_moment;
            else if (section == "adam_v" && c.optimizer) store = &c.optimizer->second_moment;
            else if (section == "average" && c.average) store = &*c.average;
            else if (section == "best" && c.best) store = &*c.best;
            else throw DataError("checkpoint: unexpected section '" + section + "'");
            store->add(e.at("name").get<std::string>(), std::move(t));
        }
        if (base + expected != bytes.size()) throw DataError("checkpoint: trailing or missing bytes");
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint header: ") + e.what());
    }
    return c;
}

std::vector<char> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw DataError("error reading " + path.string());
    return bytes;
}

void write_file(const fs::path& path, const std::vector<char>& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("error writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_text(const fs::path& path, const std::string& text) {
    write_file(path, std::vector<char>(text.begin(), text.end()));
}

json read_json(const fs::path& path) {
    const auto bytes = read_file(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) { write_file(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path)); }

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : bytes) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return h;
}


namespace {

void put_array(std::vector<char>& out, const ad::Shape& shape, std::span<const float> values) {
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_u64(out, d);
    put_floats(out, values);
}

std::vector<float> get_array(ByteReader& in, ad::Shape& shape) {
    const auto rank = in.uint(4);
    if (rank > 4) throw DataError("case file: bad array rank");
    shape.assign(rank, 0);
    for (auto& d : shape) d = in.uint(8);
    std::vector<float> v(ad::shape_size(shape));
    in.floats(v);
    return v;
}

std::string case_file(const std::string& id) { return "cases/" + id + ".bin"; }

}  // namespace

void write_cohort(const synth::Cohort& cohort, const fs::path& dir) {
    fs::create_directories(dir / "cases");
    fs::create_directories(dir / "splits");
    json cases = json::array();
    std::array<json, 4> split_ids;
    for (auto& s : split_ids) s = json::array();
    for (const auto& c : cohort.cases) {
        cases.push_back({{"id", c.id},
                         {"split", synth::split_name(c.split)},
                         {"grade", c.grade},
                         {"survival", {{"time", c.survival.time}, {"censored", c.survival.censored},
                                       {"time_bin", c.survival.time_bin}}},
                         {"gender", c.gender},
                         {"age", c.age},
                         {"magnification", c.magnification},
                         {"file", case_file(c.id)}});
        split_ids[static_cast<int>(c.split)].push_back(c.id);

        std::vector<char> bytes;
        put_array(bytes, c.patches.embeddings.shape(), c.patches.embeddings.values());
        std::vector<float> coords;
        for (const auto& g : c.patches.coords) {
            coords.push_back(static_cast<float>(g.row));
            coords.push_back(static_cast<float>(g.col));
        }
        put_array(bytes, {c.patches.count(), 2}, coords);
        put_array(bytes, {c.genes.values.size()}, c.genes.values);
        std::vector<float> latent(c.latent.begin(), c.latent.end());
        put_array(bytes, {latent.size()}, latent);
        write_file(dir / case_file(c.id), bytes);
    }
    json counts = json::object();
    for (synth::Split s : synth::kSplits) {
        const auto name = synth::split_name(s);
        counts[name] = split_ids[static_cast<int>(s)].size();
        write_text(dir / "splits" / (name + ".json"),
                   json{{"split", name}, {"case_ids", split_ids[static_cast<int>(s)]}}.dump(1) + "\n");
    }
    const auto& edges = cohort.bins.edges();
    const json manifest = {{"format_version", 1},
                           {"config", to_json(cohort.config)},
                           {"gene_stats", {{"mean", cohort.stats.mean}, {"sd", cohort.stats.sd}}},
                           {"time_bin_edges", std::vector<double>(edges.begin(), edges.end())},
                           {"split_counts", counts},
                           {"cases", cases}};
    write_text(dir / "cohort.json", manifest.dump(1) + "\n");
}

synth::Cohort read_cohort(const fs::path& dir) {
    const json manifest = read_json(dir / "cohort.json");
    synth::Cohort cohort;
    try {
        if (manifest.at("format_version").get<int>() != 1) throw DataError("unsupported cohort format version");
        cohort.config = cohort_config_from_json(manifest.at("config"));
        cohort.stats.mean = manifest.at("gene_stats").at("mean").get<std::vector<double>>();
        cohort.stats.sd = manifest.at("gene_stats").at("sd").get<std::vector<double>>();
        const auto edges = manifest.at("time_bin_edges").get<std::vector<double>>();
        if (edges.size() != predictor::kTimeBins - 1) throw DataError("cohort.json: expected 3 time bin edges");
        cohort.bins = predictor::TimeBins({edges[0], edges[1], edges[2]});
        const auto layout = cohort.config.layout();
        for (const auto& e : manifest.at("cases")) {
            synth::CaseRecord c;
            c.id = e.at("id").get<std::string>();
            c.split = synth::parse_split(e.at("split").get<std::string>());
            c.grade = e.at("grade").get<int>();
            c.survival.time = e.at("survival").at("time").get<double>();
            c.survival.censored = e.at("survival").at("censored").get<bool>();
            c.survival.time_bin = e.at("survival").at("time_bin").get<int>();
            c.gender = e.at("gender").get<std::string>();
            c.age = e.at("age").get<double>();
            c.magnification = e.at("magnification").get<int>();

            const auto bytes = read_file(dir / e.at("file").get<std::string>());
            ByteReader in(bytes, c.id);
            ad::Shape shape;
            auto emb = get_array(in, shape);
            if (shape.size() != 2) throw DataError(c.id + ": patches must be rank 2");
            c.patches.embeddings = ad::Tensor<float>(shape, std::move(emb));
            const auto coords = get_array(in, shape);
            if (shape != ad::Shape{c.patches.count(), 2}) throw DataError(c.id + ": coords shape mismatch");
            for (std::size_t i = 0; i < c.patches.count(); ++i)
                c.patches.coords.push_back({static_cast<int>(coords[2 * i]), static_cast<int>(coords[2 * i + 1])});
            c.patches.magnification = c.magnification;
            c.genes.values = get_array(in, shape);
            const auto latent = get_array(in, shape);
            c.latent.assign(latent.begin(), latent.end());
            if (!in.done()) throw DataError(c.id + ": trailing bytes in case file");
            c.patches.validate();
            c.genes.validate(layout);
            if (c.patches.dim() != cohort.config.patch_dim) throw DataError(c.id + ": patch dim mismatch");
            if (c.grade < 0 || static_cast<std::size_t>(c.grade) >= cohort.config.grades)
                throw DataError(c.id + ": grade out of range");
            cohort.cases.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        throw DataError("cohort.json: " + std::string(e.what()));
    }
    return cohort;
}

}  // namespace pathgen::io
