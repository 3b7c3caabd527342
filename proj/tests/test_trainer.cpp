#include "hiermask/error.hpp"
#include "hiermask/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

using namespace hiermask;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("hiermask_trainer_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

PatchPair ramp_pair(Dims dims)
{
    PatchPair p{Volume(dims, {1, 1, 1}), LabelMap(dims, {1, 1, 1}), {0, 0, 0}, -1};
    for (std::size_t i = 0; i < p.volume.data.size(); ++i) {
        p.volume.data[i] = static_cast<float>(i);
        p.labels.data[i] = static_cast<std::uint8_t>(i % 251);
    }
    return p;
}

TrainConfig tiny_config()
{
    TrainConfig c;
    c.patch = {16, 16, 16};
    c.batch = 1;
    c.steps_per_epoch = 10;
    c.model.backbone = BackboneConfig{8, {4, 4, 8, 8}};
    c.model.decoder.heads = 2;
    return c;
}

std::vector<TrainingCase> tiny_cases()
{
    static const auto cases = [] {
        const auto tax = Taxonomy::build(toy_taxonomy_config());
        const auto m = make_dataset(scratch("data"), rescale_phantom_spec(default_phantom_spec(), {32, 32, 32}), tax,
                                    2, 5, {{"train", 1.0}});
        return load_training_cases(m, "train");
    }();
    return cases;
}

} // namespace

TEST_SUITE("trainer") {

TEST_CASE("patch equal to the volume returns the volume")
{
    const auto p = ramp_pair({4, 6, 8});
    const auto index = ClassIndex::build(p.labels);
    std::mt19937_64 rng(0);
    for (bool balanced : {false, true}) {
        const auto s = sample_patch(p.volume, p.labels, index, rng, {4, 6, 8}, balanced);
        CHECK(s.volume.data == p.volume.data);
        CHECK(s.labels.data == p.labels.data);
        CHECK(s.origin == Dims{0, 0, 0});
    }
    CHECK_THROWS_AS(sample_patch(p.volume, p.labels, index, rng, {8, 6, 8}, false), UsageError);
}

TEST_CASE("balanced sampling targets classes evenly")
{
    LabelMap labels({16, 16, 16}, {1, 1, 1});
    Volume volume({16, 16, 16}, {1, 1, 1});
    // one small blob per class, far apart
    for (int z = 1; z < 3; ++z)
        for (int y = 1; y < 3; ++y)
            for (int x = 1; x < 3; ++x) labels.at(z, y, x) = 3;
    for (int z = 12; z < 15; ++z)
        for (int y = 12; y < 15; ++y)
            for (int x = 12; x < 15; ++x) labels.at(z, y, x) = 4;
    labels.at(8, 1, 14) = 1;
    const auto index = ClassIndex::build(labels);
    std::mt19937_64 rng(42);
    std::map<int, int> counts;
    for (int i = 0; i < 1000; ++i) {
        const auto s = sample_patch(volume, labels, index, rng, {8, 8, 8}, true);
        ++counts[s.target_class];
        bool found = false;
        for (auto v : s.labels.data) found |= v == s.target_class;
        CHECK(found);
    }
    REQUIRE(counts.size() == 3);
    for (auto [cls, n] : counts) {
        INFO("class " << cls);
        CHECK(n >= 283);
        CHECK(n <= 383);
    }
}

TEST_CASE("sampling is deterministic in the rng state")
{
    const auto p = ramp_pair({16, 16, 16});
    const auto index = ClassIndex::build(p.labels);
    std::mt19937_64 a(7), b(7);
    for (int i = 0; i < 20; ++i) {
        const bool balanced = i % 2 == 0;
        CHECK(sample_patch(p.volume, p.labels, index, a, {8, 8, 8}, balanced).origin ==
              sample_patch(p.volume, p.labels, index, b, {8, 8, 8}, balanced).origin);
    }
}

TEST_CASE("crop copies the addressed block")
{
    const auto p = ramp_pair({4, 5, 6});
    const auto c = crop(p.volume, {1, 2, 3}, {2, 2, 2});
    for (int z = 0; z < 2; ++z)
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) CHECK(c.at(z, y, x) == p.volume.at(1 + z, 2 + y, 3 + x));
}

TEST_CASE("augmentation")
{
    const auto original = ramp_pair({4, 4, 4});
    std::mt19937_64 rng(1);

    auto off = original;
    augment(off, rng, AugmentConfig{false, false, 0.1});
    CHECK(off.volume.data == original.volume.data);
    CHECK(off.labels.data == original.labels.data);

    for (int axis = 0; axis < 3; ++axis) {
        auto twice = original;
        flip_axis(twice.volume, axis);
        flip_axis(twice.volume, axis);
        CHECK(twice.volume.data == original.volume.data);

        auto once = original;
        flip_axis(once.labels, axis);
        for (int z = 0; z < 4; ++z)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x) {
                    std::array<int, 3> m{z, y, x};
                    m[axis] = 3 - m[axis];
                    CHECK(once.labels.at(m[0], m[1], m[2]) == original.labels.at(z, y, x));
                }
    }

    // flips move labels together with the volume; noise touches the volume only
    for (int trial = 0; trial < 10; ++trial) {
        auto a = original;
        augment(a, rng, AugmentConfig{true, true, 0.1});
        for (std::size_t i = 0; i < a.labels.data.size(); ++i) {
            const auto label = a.labels.data[i];
            const float source = original.volume.data[std::find(original.labels.data.begin(), original.labels.data.end(), label) -
                                                      original.labels.data.begin()];
            CHECK(std::abs(a.volume.data[i] - source) < 1.0f);
        }
        auto sorted = a.labels.data, ref = original.labels.data;
        std::sort(sorted.begin(), sorted.end());
        std::sort(ref.begin(), ref.end());
        CHECK(sorted == ref);
    }
}

TEST_CASE("intensity normalization")
{
    Volume v({4, 4, 4}, {1, 1, 1});
    std::mt19937_64 rng(3);
    std::normal_distribution<float> nd(50.0f, 7.0f);
    for (auto& x : v.data) x = nd(rng);
    const auto n = normalize_intensity(v);
    double mean = 0, sq = 0;
    for (float x : n.data) mean += x / 64.0;
    for (float x : n.data) sq += (x - mean) * (x - mean) / 64.0;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(sq == doctest::Approx(1.0).epsilon(1e-5));
    Volume flat({2, 2, 2}, {1, 1, 1}, 3.0f);
    for (float x : normalize_intensity(flat).data) CHECK(x == 0.0f);
}

TEST_CASE("AdamW first step and zero gradients")
{
    auto w = ag::Tensor<float>::from({3}, {1.0f, -2.0f, 0.5f}, true);
    AdamW opt({{"w", w}}, 0.1, 0.9, 0.999, 1e-8, 0.0);
    opt.zero_grad();
    ag::backward(ag::sum(ag::scale(w, 3.0f)));
    opt.step();
    // bias-corrected first step is lr * g / (|g| + eps)
    CHECK(w.data()[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(w.data()[1] == doctest::Approx(-2.1).epsilon(1e-6));

    auto z = ag::Tensor<float>::from({2}, {1.5f, -0.25f}, true);
    AdamW zero_opt({{"z", z}}, 0.1, 0.9, 0.999, 1e-8, 0.0);
    for (int i = 0; i < 3; ++i) {
        zero_opt.zero_grad();
        ag::backward(ag::sum(ag::scale(z, 0.0f)));
        zero_opt.step();
    }
    CHECK(z.data()[0] == 1.5f);
    CHECK(z.data()[1] == -0.25f);
}

TEST_CASE("config round trip and validation")
{
    auto c = tiny_config();
    c.lr = 1e-3;
    c.augment.noise = false;
    c.model.mode = RepresentationMode::Parallel;
    const auto back = train_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    auto doc = to_json(c);
    doc["bogus"] = 1;
    CHECK_THROWS_AS(train_config_from_json(doc), UsageError);

    auto bad = c;
    bad.patch = {12, 16, 16};
    CHECK_THROWS_AS(validate_train_config(bad), UsageError);
    bad = c;
    bad.batch = 0;
    CHECK_THROWS_AS(validate_train_config(bad), UsageError);
    bad = c;
    bad.lr = -1.0;
    CHECK_THROWS_AS(validate_train_config(bad), UsageError);
}

TEST_CASE("zero learning rate leaves parameters unchanged")
{
    auto c = tiny_config();
    c.lr = 0.0;
    c.steps_per_epoch = 3;
    const auto tax = Taxonomy::build(toy_taxonomy_config());
    Model<float> model(tax, c.model);
    std::vector<std::vector<float>> before;
    for (const auto& p : model.params()) before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    const auto trace = train_model(model, tiny_cases(), c);
    CHECK(trace.size() == 3);
    const auto after = model.params();
    for (std::size_t k = 0; k < after.size(); ++k)
        CHECK(std::vector<float>(after[k].tensor.data().begin(), after[k].tensor.data().end()) == before[k]);
}

TEST_CASE("training is deterministic and finite")
{
    const auto c = tiny_config();
    const auto tax = Taxonomy::build(toy_taxonomy_config());
    Model<float> m1(tax, c.model), m2(tax, c.model);
    const auto t1 = train_model(m1, tiny_cases(), c);
    const auto t2 = train_model(m2, tiny_cases(), c);
    REQUIRE(t1.size() == 10);
    for (std::size_t i = 0; i < t1.size(); ++i) {
        CHECK(std::isfinite(t1[i].loss.total));
        CHECK(std::abs(t1[i].loss.total - t2[i].loss.total) <= 1e-7);
    }
}

TEST_CASE("train writes a loadable checkpoint and a loss trace")
{
    const auto tax = Taxonomy::build(toy_taxonomy_config());
    const auto dir = scratch("run");
    const auto m = make_dataset(dir / "data", rescale_phantom_spec(default_phantom_spec(), {32, 32, 32}), tax, 2, 5,
                                {{"train", 1.0}});
    auto c = tiny_config();
    c.steps_per_epoch = 2;
    const auto out = train(m, c, dir / "run");
    CHECK(out.trace.size() == 2);
    std::ifstream trace(out.loss_trace);
    std::string line;
    int lines = 0;
    while (std::getline(trace, line)) {
        const auto rec = nlohmann::json::parse(line);
        CHECK(rec.contains("total"));
        CHECK(rec.contains("dice_diag"));
        ++lines;
    }
    CHECK(lines == 2);

    auto loaded = load_checkpoint(out.checkpoint);
    CHECK(loaded.metadata.at("manifest_hash") == m.hash());
    Model<float> fresh(tax, c.model);
    const auto trained = loaded.model.params();
    const auto initial = fresh.params();
    REQUIRE(trained.size() == initial.size());
    bool changed = false;
    for (std::size_t k = 0; k < trained.size(); ++k)
        changed |= !std::equal(trained[k].tensor.data().begin(), trained[k].tensor.data().end(),
                               initial[k].tensor.data().begin());
    CHECK(changed);

    // corrupted checkpoint
    std::string bytes;
    {
        std::ifstream in(out.checkpoint, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    std::ofstream(dir / "cut.hmw", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(dir / "cut.hmw"), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.hmw"), DataError);
    CHECK_THROWS_AS(load_training_cases(m, "validation"), DataError);
}

TEST_CASE("checkpoint round trip reproduces the forward pass")
{
    const auto tax = Taxonomy::build(paper_taxonomy_config());
    auto c = tiny_config();
    c.model.seed = 11;
    Model<float> model(tax, c.model);
    const auto dir = scratch("ckpt");
    save_checkpoint(dir / "m.hmw", model, {{"note", "x"}});
    auto loaded = load_checkpoint(dir / "m.hmw");
    CHECK(loaded.metadata.at("note") == "x");
    CHECK(loaded.hash.size() == 64);
    std::mt19937_64 rng(0);
    std::normal_distribution<float> nd;
    std::vector<float> v(8 * 8 * 8);
    for (auto& x : v) x = nd(rng);
    const auto input = ag::Tensor<float>::from({1, 8, 8, 8}, v);
    ag::NoGradGuard guard;
    const auto a = model.forward(input), b = loaded.model.forward(input);
    CHECK(std::equal(a.diag.data().begin(), a.diag.data().end(), b.diag.data().begin()));
    CHECK(std::equal(a.det.data().begin(), a.det.data().end(), b.det.data().begin()));
}

}
