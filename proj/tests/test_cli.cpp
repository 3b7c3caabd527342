#include "hiermask/evalmetrics.hpp"
#include "hiermask/inference.hpp"
#include "hiermask/phantom.hpp"
#include "hiermask/pipeline.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace hiermask;
namespace fs = std::filesystem;

namespace {

const fs::path& work()
{
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "hiermask_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args, const std::string& env = "")
{
    const auto log = work() / "last.log";
    const std::string cmd = env + " " HIERMASK_CLI " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string field(const std::string& text, const std::string& key)
{
    const auto pos = text.find(key + " ");
    if (pos == std::string::npos) return {};
    const auto start = pos + key.size() + 1;
    return text.substr(start, text.find('\n', start) - start);
}

std::string p(const fs::path& path) { return path.string(); }

// Small model trained for two steps; enough to exercise the plumbing.
const fs::path& tiny_config()
{
    static const fs::path path = [] {
        const auto f = work() / "tiny.json";
        std::ofstream(f) << R"({"patch": [16, 16, 16], "batch": 1, "steps_per_epoch": 2,
            "model": {"d": 8, "widths": [4, 4, 8, 8], "heads": 2}})";
        return f;
    }();
    return path;
}

const fs::path& dataset()
{
    static const fs::path dir = [] {
        const auto d = work() / "data";
        const auto r = run("gen --out " + p(d) + " --n 5 --seed 0 --dims 32 32 32");
        REQUIRE(r.code == 0);
        return d;
    }();
    return dir;
}

} // namespace

TEST_SUITE("cli") {

TEST_CASE("gen writes cases and a reproducible manifest")
{
    const auto a = run("gen --out " + p(work() / "gen_a") + " --n 4 --seed 3 --dims 32 32 32");
    REQUIRE(a.code == 0);
    const auto b = run("gen --out " + p(work() / "gen_b") + " --n 4 --seed 3 --dims 32 32 32");
    REQUIRE(b.code == 0);
    CHECK(field(a.out, "manifest_hash").size() == 64);
    CHECK(field(a.out, "manifest_hash") == field(b.out, "manifest_hash"));
    const auto m = load_manifest(work() / "gen_a" / "manifest.json");
    CHECK(m.cases.size() == 4);
    for (const auto& c : m.cases) CHECK(fs::exists(work() / "gen_a" / c.volume_path));
    CHECK(fs::exists(work() / "gen_a" / "run_config.json"));

    CHECK(run("gen --out " + p(work() / "gen_c") + " --n 0").code == 2);
}

TEST_CASE("usage errors exit with 2")
{
    CHECK(run("").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("train").code == 2);
    CHECK(run("train --manifest " + p(dataset() / "manifest.json") + " --mode tree --out " + p(work() / "bad")).code == 2);
    CHECK(run("infer --manifest " + p(dataset() / "manifest.json") + " --checkpoint x --connectivity 18").code == 2);
}

TEST_CASE("missing files exit with 3")
{
    CHECK(run("train --manifest " + p(work() / "nope.json")).code == 3);
    CHECK(run("infer --manifest " + p(dataset() / "manifest.json") + " --checkpoint " + p(work() / "none.hmw")).code == 3);
}

TEST_CASE("train, infer and eval")
{
    const auto manifest = p(dataset() / "manifest.json");
    const auto run_dir = work() / "run";
    auto t = run("train --manifest " + manifest + " --config " + p(tiny_config()) + " --out " + p(run_dir));
    REQUIRE(t.code == 0);
    CHECK(fs::exists(run_dir / "checkpoint.hmw"));
    CHECK(fs::exists(run_dir / "loss_trace.jsonl"));
    CHECK(fs::exists(run_dir / "train_config.json"));
    const auto ckpt = p(run_dir / "checkpoint.hmw");

    auto plain = run("train --manifest " + manifest + " --config " + p(tiny_config()) + " --mode plain --out " +
                     p(work() / "run_plain"));
    REQUIRE(plain.code == 0);
    CHECK(load_checkpoint(work() / "run_plain" / "checkpoint.hmw").model.queries().mode() == RepresentationMode::Plain);

    const auto pred = work() / "pred";
    auto i = run("infer --manifest " + manifest + " --checkpoint " + ckpt + " --out " + p(pred) + " --no-tta");
    REQUIRE(i.code == 0);
    auto index = load_prediction_index(pred);
    CHECK(index.config.at("inference").at("tta") == false);
    CHECK(index.config.at("inference").at("gaussian") == true);
    CHECK(index.cases.size() == 1);

    // replace predictions by the ground truth: the report is perfect
    const auto m = load_manifest(dataset() / "manifest.json");
    const auto tax = Taxonomy::parse(m.taxonomy);
    for (const auto& rec : m.split("test")) {
        const auto c = load_manifest_case(m, *rec);
        save_prediction(pred, rec->id, merge_labelmap(tax, c.labels), c.labels, tax, index.min_voxels, 26);
    }
    auto e = run("eval --manifest " + manifest + " --predictions " + p(pred) + " --checkpoint " + ckpt + " --out " +
                 p(work() / "eval") + " --plots");
    REQUIRE(e.code == 0);
    auto report = load_report(work() / "eval" / "report.json");
    CHECK(report.dice_organ.mean.value_or(1.0) == 1.0);
    CHECK(report.lesion.recall.value_or(1.0) == 1.0);
    CHECK(report.patient.specificity.value_or(1.0) == 1.0);
    CHECK(report.patient.mean_sensitivity.value_or(1.0) == 1.0);
    CHECK(report.metadata.connectivity == 26);
    CHECK(fs::exists(work() / "eval" / "dice_organ.svg"));

    e = run("eval --manifest " + manifest + " --predictions " + p(pred) + " --connectivity 6 --out " + p(work() / "eval6"));
    REQUIRE(e.code == 0);
    CHECK(load_report(work() / "eval6" / "report.json").metadata.connectivity == 6);

    // other checkpoint or other manifest
    CHECK(run("eval --manifest " + manifest + " --predictions " + p(pred) + " --checkpoint " +
              p(work() / "run_plain" / "checkpoint.hmw"))
              .code == 3);
    REQUIRE(run("gen --out " + p(work() / "other") + " --n 5 --seed 1 --dims 32 32 32").code == 0);
    CHECK(run("eval --manifest " + p(work() / "other" / "manifest.json") + " --predictions " + p(pred)).code == 3);
}

TEST_CASE("ablate defaults to all three modes")
{
    const auto out = work() / "ablate";
    const auto r = run("ablate --manifest " + p(dataset() / "manifest.json") + " --config " + p(tiny_config()) +
                       " --steps 1 --no-tta --out " + p(out));
    REQUIRE(r.code == 0);
    std::ifstream in(out / "ablation.md");
    std::string header;
    std::getline(in, header);
    CHECK(header.find("Sensitivity") != std::string::npos);
    CHECK(header.find("Specificity") != std::string::npos);
    CHECK(header.find("Dice") != std::string::npos);
    int rows = 0;
    for (std::string line; std::getline(in, line);) rows += line.rfind("| ", 0) == 0 && line.find("---") == std::string::npos;
    CHECK(rows == 3);
    for (const char* mode : {"plain", "parallel", "hierarchy"}) CHECK(fs::exists(out / mode));
}

TEST_CASE("relative outputs honor the output root")
{
    const auto root = work() / "root";
    fs::create_directories(root);
    const auto r = run("gen --out rel --n 1 --dims 32 32 32", "HIERMASK_OUTPUT_ROOT=" + p(root));
    REQUIRE(r.code == 0);
    CHECK(fs::exists(root / "rel" / "manifest.json"));
}

}
