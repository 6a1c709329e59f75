#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pathgen/io.hpp"
#include "tiny_config.hpp"

using namespace pathgen;
using io::json;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "pathgen_test_cli";

// Runs the CLI inside kWork; stderr goes to err.log. Returns the exit status.
int cli(const std::string& args) {
    const std::string cmd = "cd '" + kWork.string() + "' && '" PATHGEN_CLI "' " + args + " >out.log 2>err.log";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

struct Workspace {
    Workspace() {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
        io::write_text(kWork / "tiny.json", io::to_json(tiny_run_config(1)).dump(1));
        REQUIRE(cli("gen-data --config tiny.json --out cohort") == 0);
    }
};

}  // namespace

TEST_CASE("gen-data writes a deterministic cohort") {
    Workspace w;
    for (const char* s : {"train", "val", "cal", "test"}) CHECK(fs::exists(kWork / "cohort" / "splits" / (std::string(s) + ".json")));
    const auto out = json::parse(slurp(kWork / "out.log"));
    CHECK(out.at("splits").at("train") == 24);
    CHECK(cli("gen-data --config tiny.json --out again") == 0);
    CHECK(slurp(kWork / "cohort" / "cohort.json") == slurp(kWork / "again" / "cohort.json"));
    CHECK(cli("gen-data --config tiny.json --seed 9 --out other") == 0);
    CHECK(slurp(kWork / "cohort" / "cohort.json") != slurp(kWork / "other" / "cohort.json"));

    auto small = io::to_json(tiny_run_config(1));
    small["cohort"]["split_sizes"] = {3, 1, 0, 1};
    io::write_text(kWork / "small.json", small.dump());
    CHECK(cli("gen-data --config small.json --out small") == 2);
    const auto err = json::parse(slurp(kWork / "err.log"));
    CHECK(err.at("level") == "error");
    CHECK(err.at("exit_code") == 2);

    CHECK(cli("gen-data --config missing.json --out x") == 2);
    CHECK(cli("gen-data") == 2);
    CHECK(cli("no-such-verb") == 2);
}

TEST_CASE("training is fast, logged and resumable") {
    Workspace w;
    const auto start = std::chrono::steady_clock::now();
    CHECK(cli("train-pathgen --config tiny.json --cohort cohort --out one.ckpt --epochs 1") == 0);
    CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < 60.0);

    CHECK(cli("train-pathgen --config tiny.json --cohort cohort --out full.ckpt") == 0);
    const auto log = json::parse(slurp(kWork / "full.ckpt.log.json"));
    CHECK(log.size() == 3);
    CHECK(cli("train-pathgen --cohort cohort --resume one.ckpt --out resumed.ckpt") == 0);
    CHECK(slurp(kWork / "resumed.ckpt") == slurp(kWork / "full.ckpt"));

    CHECK(cli("train-predictor --config tiny.json --cohort cohort --out p1.ckpt --epochs 1") == 0);
    CHECK(cli("train-predictor --config tiny.json --cohort cohort --out pfull.ckpt") == 0);
    CHECK(cli("train-predictor --cohort cohort --resume p1.ckpt --out presumed.ckpt") == 0);
    CHECK(slurp(kWork / "presumed.ckpt") == slurp(kWork / "pfull.ckpt"));

    CHECK(cli("train-predictor --cohort cohort --resume full.ckpt --out bad.ckpt") == 2);
    CHECK(cli("train-pathgen --cohort nowhere --config tiny.json --out x.ckpt") == 3);
}

TEST_CASE("full pipeline artifacts and determinism") {
    Workspace w;
    REQUIRE(cli("train-pathgen --config tiny.json --cohort cohort --out pg.ckpt") == 0);
    REQUIRE(cli("synthesize --checkpoint pg.ckpt --cohort cohort --split train --split val --split cal --split test "
                "--out syn") == 0);
    const auto sim = json::parse(slurp(kWork / "syn" / "similarity.json"));
    CHECK(sim.at("rows").size() == 7);
    CHECK(sim.at("rows").back().at("group") == "all");

    REQUIRE(cli("train-predictor --config tiny.json --cohort cohort --profiles syn/profiles.json --out pr.ckpt") == 0);
    CHECK(cli("predict --checkpoint pr.ckpt --cohort cohort --profiles syn/profiles.json --out p.jsonl") == 3);
    CHECK(cli("predict --checkpoint pr.ckpt --cohort cohort --calibration nope.json --out p.jsonl") == 3);

    REQUIRE(cli("calibrate --checkpoint pr.ckpt --cohort cohort --profiles syn/profiles.json --out cal.json") == 0);
    REQUIRE(cli("predict --checkpoint pr.ckpt --cohort cohort --profiles syn/profiles.json --calibration cal.json "
                "--out p.jsonl") == 0);
    std::istringstream lines(slurp(kWork / "p.jsonl"));
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        const auto rec = json::parse(line);
        CHECK(rec.dump() == line);
        CHECK(rec.contains("grade_set"));
        CHECK(rec.contains("risk_interval"));
        ++n;
    }
    CHECK(n == 8);

    // Coverage on the calibration split itself is at least 1 - alpha.
    REQUIRE(cli("evaluate --checkpoint pr.ckpt --cohort cohort --profiles syn/profiles.json --calibration cal.json "
                "--split cal --out eval_cal.json") == 0);
    const auto report = json::parse(slurp(kWork / "eval_cal.json"));
    CHECK(report.at("overall").at("grade_coverage").get<double>() >= 0.9);
    CHECK(report.at("overall").at("risk_coverage").get<double>() >= 0.9);
    CHECK(fs::exists(kWork / "eval_cal.csv"));

    // Smaller alpha, larger sets.
    REQUIRE(cli("calibrate --checkpoint pr.ckpt --cohort cohort --profiles syn/profiles.json --alpha 0.5 --out c5.json") == 0);
    REQUIRE(cli("calibrate --checkpoint pr.ckpt --cohort cohort --profiles syn/profiles.json --alpha 0.05 --out c05.json") == 0);
    const auto c5 = json::parse(slurp(kWork / "c5.json")), c05 = json::parse(slurp(kWork / "c05.json"));
    CHECK(c5.at("grade").at("q_hat").get<double>() <= c05.at("grade").at("q_hat").get<double>());

    REQUIRE(cli("heatmap --checkpoint pr.ckpt --cohort cohort --case case-0003 --out heat") == 0);
    const auto side = json::parse(slurp(kWork / "heat" / "heatmap.json"));
    CHECK(side.at("grids").size() == 8);
    int coattn = 0;
    for (const auto& e : fs::directory_iterator(kWork / "heat"))
        if (e.path().extension() == ".pgm" && e.path().filename().string().rfind("coattn_", 0) == 0) ++coattn;
    CHECK(coattn == 6);
    const auto cohort = io::read_cohort(kWork / "cohort");
    int rows = 0, cols = 0;
    for (const auto& c : cohort.cases)
        if (c.id == "case-0003")
            for (const auto& g : c.patches.coords) {
                rows = std::max(rows, g.row + 1);
                cols = std::max(cols, g.col + 1);
            }
    for (const auto& g : side.at("grids")) {
        CHECK(g.at("rows") == rows);
        CHECK(g.at("cols") == cols);
    }
    const std::string pgm = slurp(kWork / "heat" / "risk.pgm");
    CHECK(pgm.rfind("P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n", 0) == 0);
    CHECK(cli("heatmap --checkpoint pr.ckpt --cohort cohort --case case-9999 --out heat2") == 3);

    // A second run from scratch reproduces every artifact byte for byte.
    REQUIRE(cli("train-pathgen --config tiny.json --cohort cohort --out pg2.ckpt") == 0);
    CHECK(slurp(kWork / "pg2.ckpt") == slurp(kWork / "pg.ckpt"));
    REQUIRE(cli("synthesize --checkpoint pg2.ckpt --cohort cohort --split train --split val --split cal --split test "
                "--out syn2") == 0);
    CHECK(slurp(kWork / "syn2" / "profiles.json") == slurp(kWork / "syn" / "profiles.json"));
    REQUIRE(cli("train-predictor --config tiny.json --cohort cohort --profiles syn2/profiles.json --out pr2.ckpt") == 0);
    CHECK(slurp(kWork / "pr2.ckpt") == slurp(kWork / "pr.ckpt"));
    REQUIRE(cli("calibrate --checkpoint pr2.ckpt --cohort cohort --profiles syn2/profiles.json --out cal2.json") == 0);
    REQUIRE(cli("predict --checkpoint pr2.ckpt --cohort cohort --profiles syn2/profiles.json --calibration cal2.json "
                "--out p2.jsonl") == 0);
    CHECK(slurp(kWork / "p2.jsonl") == slurp(kWork / "p.jsonl"));
}
