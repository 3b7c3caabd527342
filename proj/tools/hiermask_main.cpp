#include "hiermask/error.hpp"
#include "hiermask/evalmetrics.hpp"
#include "hiermask/phantom.hpp"
#include "hiermask/pipeline.hpp"
#include "hiermask/taxonomy.hpp"
#include "hiermask/trainer.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hiermask;

namespace {

// Relative output paths land under $HIERMASK_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& p)
{
    const fs::path path(p);
    if (path.is_absolute()) return path;
    if (const char* root = std::getenv("HIERMASK_OUTPUT_ROOT"); root && *root) return fs::path(root) / path;
    return path;
}

json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw UsageError("config '" + path + "': " + e.what());
    }
}

void write_json(const fs::path& path, const json& doc)
{
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << doc.dump(2) << "\n";
}

Manifest open_manifest(const std::string& path)
{
    if (path.empty()) throw UsageError("--manifest is required");
    if (!fs::exists(path)) throw DataError("manifest '" + path + "' does not exist");
    Manifest m = load_manifest(path);
    validate_manifest(m);
    return m;
}

struct GenArgs {
    std::string out = "data";
    int n = 80;
    std::uint64_t seed = 0;
    std::string spec;
    std::vector<int> dims;
    double train_fraction = 0.8;
};

struct TrainArgs {
    std::string manifest, out = "run", config, mode;
    std::optional<std::uint64_t> seed;
    std::optional<int> steps;
    std::optional<double> lr;
};

struct InferArgs {
    std::string manifest, checkpoint, out = "predictions", split = "test";
    bool no_tta = false, no_gaussian = false;
    std::optional<double> step_fraction;
    std::optional<int> min_voxels;
    int connectivity = 26;
};

struct EvalArgs {
    std::string manifest, predictions, out, checkpoint;
    std::optional<int> min_voxels, connectivity;
    bool plots = false;
};

struct AblateArgs {
    std::string manifest, out = "ablation", config;
    std::vector<std::string> modes;
    std::optional<std::uint64_t> seed;
    std::optional<int> steps;
    bool no_tta = false;
};

TrainConfig resolve_train_config(const std::string& config_path, const std::string& mode,
                                 const std::optional<std::uint64_t>& seed, const std::optional<int>& steps,
                                 const std::optional<double>& lr)
{
    TrainConfig c = config_path.empty() ? TrainConfig{} : train_config_from_json(read_json_file(config_path));
    if (!mode.empty()) c.model.mode = mode_from_string(mode);
    if (seed) {
        c.seed = *seed;
        c.model.seed = *seed;
    }
    if (steps) {
        c.epochs = 1;
        c.steps_per_epoch = *steps;
    }
    if (lr) c.lr = *lr;
    validate_train_config(c);
    return c;
}

void print_progress(const StepRecord& r, int total)
{
    if (r.step % 50 == 0 || r.step == total)
        std::cerr << "step " << r.step << "/" << total << " loss " << r.loss.total << "\n";
}

int cmd_gen(const GenArgs& a)
{
    if (a.n < 1) throw UsageError("--n must be >= 1");
    if (!(a.train_fraction >= 0.0 && a.train_fraction <= 1.0)) throw UsageError("--train-fraction must lie in [0, 1]");
    PhantomSpec spec = a.spec.empty() ? default_phantom_spec() : phantom_spec_from_json(read_json_file(a.spec));
    if (!a.dims.empty()) {
        if (a.dims.size() != 3) throw UsageError("--dims takes three values");
        spec = rescale_phantom_spec(spec, {a.dims[0], a.dims[1], a.dims[2]});
    }
    const Taxonomy tax = Taxonomy::build(toy_taxonomy_config());
    const auto out = output_path(a.out);
    const Manifest m =
        make_dataset(out, spec, tax, a.n, a.seed, {{"train", a.train_fraction}, {"test", 1.0 - a.train_fraction}});
    write_json(out / "run_config.json", {{"subcommand", "gen"},
                                         {"n", a.n},
                                         {"seed", a.seed},
                                         {"train_fraction", a.train_fraction},
                                         {"phantom_spec", to_json(spec)}});
    std::cout << "manifest " << (out / "manifest.json").string() << "\n";
    std::cout << "manifest_hash " << m.hash() << "\n";
    return 0;
}

int cmd_train(const TrainArgs& a)
{
    const Manifest m = open_manifest(a.manifest);
    const TrainConfig c = resolve_train_config(a.config, a.mode, a.seed, a.steps, a.lr);
    const auto out = output_path(a.out);
    write_json(out / "train_config.json", to_json(c));
    const int total = c.total_steps();
    const TrainOutputs r = train(m, c, out, [total](const StepRecord& s) { print_progress(s, total); });
    std::cout << "checkpoint " << r.checkpoint.string() << "\n";
    std::cout << "checkpoint_hash " << load_checkpoint(r.checkpoint).hash << "\n";
    return 0;
}

int cmd_infer(const InferArgs& a)
{
    const Manifest m = open_manifest(a.manifest);
    if (a.checkpoint.empty()) throw UsageError("--checkpoint is required");
    if (!fs::exists(a.checkpoint)) throw DataError("checkpoint '" + a.checkpoint + "' does not exist");
    const LoadedCheckpoint ckpt = load_checkpoint(a.checkpoint);
    InferRequest req;
    req.split = a.split;
    req.options.tta = !a.no_tta;
    req.options.gaussian = !a.no_gaussian;
    if (a.step_fraction) req.options.step_fraction = *a.step_fraction;
    req.min_voxels = a.min_voxels;
    req.connectivity = a.connectivity;
    const auto out = output_path(a.out);
    const PredictionIndex index = run_inference(m, ckpt, req, out);
    std::cout << "predictions " << out.string() << " (" << index.cases.size() << " cases)\n";
    return 0;
}

int cmd_eval(const EvalArgs& a)
{
    const Manifest m = open_manifest(a.manifest);
    if (a.predictions.empty()) throw UsageError("--predictions is required");
    if (!a.checkpoint.empty()) {
        const LoadedCheckpoint ckpt = load_checkpoint(a.checkpoint);
        if (ckpt.hash != load_prediction_index(a.predictions).checkpoint_hash)
            throw DataError("predictions were not made with checkpoint '" + a.checkpoint + "'");
    }
    EvalRequest req;
    req.min_voxels = a.min_voxels;
    req.connectivity = a.connectivity;
    const EvalReport report = run_evaluation(m, a.predictions, req);
    const auto out = output_path(a.out.empty() ? (fs::path(a.predictions) / "eval").string() : a.out);
    std::error_code ec;
    fs::create_directories(out, ec);
    save_report(out / "report.json", report);
    if (a.plots) write_report_plots(out, report);
    std::cout << "report " << (out / "report.json").string() << "\n";
    const auto show = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("null"); };
    std::cout << "sensitivity " << show(report.patient.mean_sensitivity) << " specificity "
              << show(report.patient.specificity) << " dice " << show(report.dice_organ.mean) << " diagnosis "
              << show(report.diagnosis.accuracy) << " (majority " << show(report.diagnosis.majority_accuracy) << ")\n";
    return 0;
}

int cmd_ablate(const AblateArgs& a)
{
    const Manifest m = open_manifest(a.manifest);
    const TrainConfig base = resolve_train_config(a.config, "", a.seed, a.steps, std::nullopt);
    std::vector<RepresentationMode> modes;
    for (const auto& s : a.modes) modes.push_back(mode_from_string(s));
    if (modes.empty())
        modes = {RepresentationMode::Plain, RepresentationMode::Parallel, RepresentationMode::Hierarchy};
    InferRequest infer;
    infer.options.tta = !a.no_tta;
    const auto out = output_path(a.out);
    const int total = base.total_steps();
    const auto rows = run_ablation(m, base, modes, infer, out, [total](const StepRecord& s) { print_progress(s, total); });
    std::cout << ablation_markdown(rows);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"hiermask: hierarchical-query tumor segmentation on synthetic phantoms"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "generate a phantom dataset and manifest");
    g->add_option("--out", gen.out, "output directory");
    g->add_option("--n", gen.n, "number of cases");
    g->add_option("--seed", gen.seed, "dataset seed");
    g->add_option("--spec", gen.spec, "phantom spec (JSON)");
    g->add_option("--dims", gen.dims, "volume dims z y x (radii rescale)")->expected(3);
    g->add_option("--train-fraction", gen.train_fraction, "fraction of cases in the train split");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train a model on the train split");
    t->add_option("--manifest", tr.manifest)->required();
    t->add_option("--out", tr.out, "run directory");
    t->add_option("--config", tr.config, "train config (JSON)");
    t->add_option("--mode", tr.mode, "hierarchy, parallel or plain");
    t->add_option("--seed", tr.seed, "training and init seed");
    t->add_option("--steps", tr.steps, "total optimizer steps");
    t->add_option("--lr", tr.lr, "learning rate");

    InferArgs inf;
    auto* i = app.add_subcommand("infer", "predict a split with a checkpoint");
    i->add_option("--manifest", inf.manifest)->required();
    i->add_option("--checkpoint", inf.checkpoint)->required();
    i->add_option("--out", inf.out, "prediction directory");
    i->add_option("--split", inf.split);
    i->add_flag("--no-tta", inf.no_tta, "disable flip test-time augmentation");
    i->add_flag("--no-gaussian", inf.no_gaussian, "uniform window blending");
    i->add_option("--step-fraction", inf.step_fraction);
    i->add_option("--min-voxels", inf.min_voxels);
    i->add_option("--connectivity", inf.connectivity)->check(CLI::IsMember({6, 26}));

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "evaluate predictions against the manifest");
    e->add_option("--manifest", ev.manifest)->required();
    e->add_option("--predictions", ev.predictions)->required();
    e->add_option("--checkpoint", ev.checkpoint, "verify the predictions came from this checkpoint");
    e->add_option("--out", ev.out, "report directory");
    e->add_option("--min-voxels", ev.min_voxels);
    e->add_option("--connectivity", ev.connectivity)->check(CLI::IsMember({6, 26}));
    e->add_flag("--plots", ev.plots, "write SVG bar charts");

    AblateArgs ab;
    auto* a = app.add_subcommand("ablate", "compare query representations");
    a->add_option("--manifest", ab.manifest)->required();
    a->add_option("--out", ab.out);
    a->add_option("--config", ab.config, "base train config (JSON)");
    a->add_option("--modes", ab.modes, "subset of hierarchy, parallel, plain");
    a->add_option("--seed", ab.seed);
    a->add_option("--steps", ab.steps);
    a->add_flag("--no-tta", ab.no_tta);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*g) return cmd_gen(gen);
        if (*t) return cmd_train(tr);
        if (*i) return cmd_infer(inf);
        if (*e) return cmd_eval(ev);
        if (*a) return cmd_ablate(ab);
    } catch (const UsageError& err) {
        std::cerr << "usage error: " << err.what() << "\n";
        return 2;
    } catch (const DataError& err) {
        std::cerr << "data error: " << err.what() << "\n";
        return 3;
    } catch (const DivergenceError& err) {
        std::cerr << "divergence: " << err.what() << "\n";
        return 4;
    }
    return 2;
}
