#include "hiermask/phantom.hpp"

#include "hiermask/components.hpp"
#include "hiermask/error.hpp"
#include "hiermask/hash.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace hiermask {

using nlohmann::json;

namespace {

bool valid_range(const Range& r) { return std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi; }

double sample(std::mt19937_64& rng, const Range& r)
{
    if (r.lo == r.hi) return r.lo;
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

bool bernoulli(std::mt19937_64& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

// Voxel range for each axis around `center` with half-extent `radius`.
struct Box {
    std::array<int, 3> lo, hi;  // inclusive
};

Box bounding_box(const std::array<double, 3>& center, const std::array<double, 3>& radius, const Dims& dims,
                 bool clip)
{
    Box b;
    for (int a = 0; a < 3; ++a) {
        b.lo[a] = static_cast<int>(std::floor(center[a] - radius[a]));
        b.hi[a] = static_cast<int>(std::ceil(center[a] + radius[a]));
        if (clip) {
            b.lo[a] = std::max(b.lo[a], 0);
            b.hi[a] = std::min(b.hi[a], dims[a] - 1);
        }
    }
    return b;
}

bool inside_superellipsoid(const std::array<double, 3>& p, const std::array<double, 3>& center,
                           const std::array<double, 3>& radius, double exponent)
{
    double s = 0.0;
    for (int a = 0; a < 3; ++a) s += std::pow(std::abs((p[a] - center[a]) / radius[a]), exponent);
    return s <= 1.0;
}

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }
Range range_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }
json ranges_json(const std::array<Range, 3>& r) { return json::array({range_json(r[0]), range_json(r[1]), range_json(r[2])}); }
std::array<Range, 3> ranges_from(const json& j) { return {range_from(j.at(0)), range_from(j.at(1)), range_from(j.at(2))}; }

Range vox_to_mm(double lo_vox, double hi_vox, double spacing) { return {lo_vox * spacing, hi_vox * spacing}; }

} // namespace

PhantomSpec default_phantom_spec()
{
    PhantomSpec s;
    const auto& sp = s.spacing;
    auto radii = [&](double zl, double zh, double yl, double yh, double xl, double xh) {
        return std::array<Range, 3>{vox_to_mm(zl, zh, sp[0]), vox_to_mm(yl, yh, sp[1]), vox_to_mm(xl, xh, sp[2])};
    };
    s.background_intensity = 0.0;
    s.noise_sigma = 10.0;
    s.normal_probability = 0.2;

    OrganShape liver;
    liver.organ = "liver";
    liver.center_fraction = {Range{0.45, 0.55}, Range{0.42, 0.58}, Range{0.29, 0.34}};
    liver.radii_mm = radii(16, 20, 15, 18, 14, 17);
    liver.exponent = {1.8, 2.6};
    liver.intensity = 100.0;
    liver.tumor_probability = 0.6;

    OrganShape kidney;
    kidney.organ = "kidney";
    kidney.center_fraction = {Range{0.45, 0.55}, Range{0.42, 0.58}, Range{0.72, 0.76}};
    kidney.radii_mm = radii(12, 15, 10, 12, 9, 11);
    kidney.exponent = {1.8, 2.4};
    kidney.intensity = 200.0;
    kidney.tumor_probability = 0.6;

    TumorShape hcc;
    hcc.tumor_class = "HCC";
    hcc.min_count = 1;
    hcc.max_count = 2;
    hcc.radii_mm = radii(5, 7, 5, 7, 5, 7);
    hcc.exponent = {2.0, 3.0};
    hcc.intensity_offset = -55.0;
    hcc.texture_noise = 6.0;

    TumorShape icc = hcc;
    icc.tumor_class = "ICC";
    icc.intensity_offset = 60.0;
    icc.texture_noise = 15.0;

    TumorShape kt;
    kt.tumor_class = "kidney tumor";
    kt.radii_mm = radii(5, 6, 5, 6, 5, 6);
    kt.exponent = {2.0, 3.0};
    kt.intensity_offset = -80.0;
    kt.texture_noise = 8.0;

    s.organs = {liver, kidney};
    s.tumors = {hcc, icc, kt};
    return s;
}

PhantomSpec rescale_phantom_spec(const PhantomSpec& spec, const Dims& dims)
{
    double factor = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) factor = std::min(factor, static_cast<double>(dims[a]) / spec.dims[a]);
    PhantomSpec out = spec;
    out.dims = dims;
    auto scale = [factor](std::array<Range, 3>& radii) {
        for (auto& r : radii) r = {r.lo * factor, r.hi * factor};
    };
    for (auto& o : out.organs) scale(o.radii_mm);
    for (auto& t : out.tumors) scale(t.radii_mm);
    return out;
}

void validate_phantom_spec(const PhantomSpec& spec, const Taxonomy& taxonomy)
{
    for (int a = 0; a < 3; ++a) {
        if (spec.dims[a] < 8) throw UsageError("phantom spec: every dimension must be >= 8");
        if (!(spec.spacing[a] > 0.0)) throw UsageError("phantom spec: spacing must be positive");
    }
    auto prob = [](double p, const char* what) {
        if (!(p >= 0.0 && p <= 1.0)) throw UsageError(std::string("phantom spec: ") + what + " must lie in [0, 1]");
    };
    prob(spec.normal_probability, "normal_probability");
    if (!(spec.noise_sigma >= 0.0)) throw UsageError("phantom spec: noise_sigma must be >= 0");
    if (spec.placement_attempts < 1) throw UsageError("phantom spec: placement_attempts must be >= 1");

    std::set<std::string> seen;
    for (const auto& o : spec.organs) {
        const auto& organs = taxonomy.organs();
        if (std::find(organs.begin(), organs.end(), o.organ) == organs.end())
            throw UsageError("phantom spec: unknown organ '" + o.organ + "'");
        if (!seen.insert(o.organ).second) throw UsageError("phantom spec: duplicate organ '" + o.organ + "'");
        prob(o.tumor_probability, "tumor_probability");
        for (int a = 0; a < 3; ++a) {
            if (!valid_range(o.center_fraction[a]) || o.center_fraction[a].lo < 0.0 || o.center_fraction[a].hi > 1.0)
                throw UsageError("phantom spec: organ center fractions must be ordered ranges in [0, 1]");
            if (!valid_range(o.radii_mm[a]) || !(o.radii_mm[a].lo > 0.0))
                throw UsageError("phantom spec: organ radii must be positive ordered ranges");
        }
        if (!valid_range(o.exponent) || o.exponent.lo < 1.0) throw UsageError("phantom spec: exponents must be >= 1");
    }

    for (const auto& t : spec.tumors) {
        const ClassId id = taxonomy.class_id(LabelSpace::Diagnosis, t.tumor_class);
        if (!taxonomy.is_tumor(LabelSpace::Diagnosis, id))
            throw UsageError("phantom spec: '" + t.tumor_class + "' is not a tumor class");
        const auto& host_name = taxonomy.organs()[*taxonomy.host_organ(LabelSpace::Diagnosis, id)];
        auto host = std::find_if(spec.organs.begin(), spec.organs.end(),
                                 [&](const OrganShape& o) { return o.organ == host_name; });
        if (host == spec.organs.end())
            throw UsageError("phantom spec: host organ '" + host_name + "' of '" + t.tumor_class + "' is not generated");
        if (t.min_count < 1 || t.max_count < t.min_count) throw UsageError("phantom spec: invalid tumor count range");
        if (!(t.weight > 0.0)) throw UsageError("phantom spec: tumor weights must be positive");
        if (!(t.texture_noise >= 0.0)) throw UsageError("phantom spec: texture noise must be >= 0");
        if (!valid_range(t.exponent) || t.exponent.lo < 1.0) throw UsageError("phantom spec: exponents must be >= 1");
        for (int a = 0; a < 3; ++a) {
            if (!valid_range(t.radii_mm[a]) || !(t.radii_mm[a].lo > 0.0))
                throw UsageError("phantom spec: tumor radii must be positive ordered ranges");
            if (!(t.radii_mm[a].hi < host->radii_mm[a].lo))
                throw UsageError("phantom spec: '" + t.tumor_class + "' radii must be smaller than '" + host_name +
                                 "' radii on every axis");
        }
    }
    for (const auto& o : spec.organs) {
        const bool hosted = std::any_of(spec.tumors.begin(), spec.tumors.end(), [&](const TumorShape& t) {
            const ClassId id = taxonomy.class_id(LabelSpace::Diagnosis, t.tumor_class);
            return taxonomy.organs()[*taxonomy.host_organ(LabelSpace::Diagnosis, id)] == o.organ;
        });
        if (o.tumor_probability > 0.0 && !hosted)
            throw UsageError("phantom spec: organ '" + o.organ + "' has a tumor probability but no tumor shapes");
    }
}

json to_json(const PhantomSpec& s)
{
    json doc;
    doc["dims"] = s.dims;
    doc["spacing"] = s.spacing;
    doc["background_intensity"] = s.background_intensity;
    doc["noise_sigma"] = s.noise_sigma;
    doc["normal_probability"] = s.normal_probability;
    doc["placement_attempts"] = s.placement_attempts;
    json organs = json::array();
    for (const auto& o : s.organs) {
        organs.push_back({{"organ", o.organ},
                          {"center_fraction", ranges_json(o.center_fraction)},
                          {"radii_mm", ranges_json(o.radii_mm)},
                          {"exponent", range_json(o.exponent)},
                          {"intensity", o.intensity},
                          {"tumor_probability", o.tumor_probability}});
    }
    doc["organs"] = organs;
    json tumors = json::array();
    for (const auto& t : s.tumors) {
        tumors.push_back({{"tumor_class", t.tumor_class},
                          {"weight", t.weight},
                          {"count", {t.min_count, t.max_count}},
                          {"radii_mm", ranges_json(t.radii_mm)},
                          {"exponent", range_json(t.exponent)},
                          {"intensity_offset", t.intensity_offset},
                          {"texture_noise", t.texture_noise}});
    }
    doc["tumors"] = tumors;
    return doc;
}

PhantomSpec phantom_spec_from_json(const json& doc)
{
    PhantomSpec s;
    try {
        s.dims = doc.at("dims").get<Dims>();
        s.spacing = doc.at("spacing").get<Spacing>();
        s.background_intensity = doc.at("background_intensity").get<double>();
        s.noise_sigma = doc.at("noise_sigma").get<double>();
        s.normal_probability = doc.at("normal_probability").get<double>();
        s.placement_attempts = doc.at("placement_attempts").get<int>();
        for (const auto& o : doc.at("organs")) {
            OrganShape shape;
            shape.organ = o.at("organ").get<std::string>();
            shape.center_fraction = ranges_from(o.at("center_fraction"));
            shape.radii_mm = ranges_from(o.at("radii_mm"));
            shape.exponent = range_from(o.at("exponent"));
            shape.intensity = o.at("intensity").get<double>();
            shape.tumor_probability = o.at("tumor_probability").get<double>();
            s.organs.push_back(shape);
        }
        for (const auto& t : doc.at("tumors")) {
            TumorShape shape;
            shape.tumor_class = t.at("tumor_class").get<std::string>();
            shape.weight = t.at("weight").get<double>();
            shape.min_count = t.at("count").at(0).get<int>();
            shape.max_count = t.at("count").at(1).get<int>();
            shape.radii_mm = ranges_from(t.at("radii_mm"));
            shape.exponent = range_from(t.at("exponent"));
            shape.intensity_offset = t.at("intensity_offset").get<double>();
            shape.texture_noise = t.at("texture_noise").get<double>();
            s.tumors.push_back(shape);
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("phantom spec: ") + e.what());
    }
    return s;
}

std::string phantom_spec_hash(const PhantomSpec& spec) { return sha256_hex(to_json(spec).dump()); }

Phantom generate_phantom(std::uint64_t seed, const PhantomSpec& spec, const Taxonomy& taxonomy)
{
    validate_phantom_spec(spec, taxonomy);
    std::mt19937_64 rng(seed);
    const Dims& dims = spec.dims;

    Phantom ph;
    ph.labels = LabelMap(dims, spec.spacing, LabelSpace::Diagnosis, kBackground);
    std::vector<double> organ_intensity(taxonomy.diagnosis_size(), spec.background_intensity);
    std::vector<std::vector<std::int64_t>> organ_voxels(spec.organs.size());

    for (std::size_t k = 0; k < spec.organs.size(); ++k) {
        const auto& o = spec.organs[k];
        const ClassId id = taxonomy.class_id(LabelSpace::Diagnosis, o.organ);
        organ_intensity[id] = o.intensity;
        std::array<double, 3> center{}, radius{};
        for (int a = 0; a < 3; ++a) center[a] = sample(rng, o.center_fraction[a]) * (dims[a] - 1);
        for (int a = 0; a < 3; ++a) radius[a] = sample(rng, o.radii_mm[a]) / spec.spacing[a];
        const double e = sample(rng, o.exponent);
        const Box b = bounding_box(center, radius, dims, true);
        for (int z = b.lo[0]; z <= b.hi[0]; ++z)
            for (int y = b.lo[1]; y <= b.hi[1]; ++y)
                for (int x = b.lo[2]; x <= b.hi[2]; ++x) {
                    auto& v = ph.labels.at(z, y, x);
                    if (v == kBackground && inside_superellipsoid({double(z), double(y), double(x)}, center, radius, e)) {
                        v = static_cast<std::uint8_t>(id);
                        organ_voxels[k].push_back(ph.labels.index(z, y, x));
                    }
                }
    }
    ph.organ_labels = ph.labels;

    // Voxels belonging to or touching an already placed tumor.
    Grid3<std::uint8_t> blocked(dims, spec.spacing, 0);
    std::vector<double> tumor_offset(taxonomy.diagnosis_size(), 0.0);
    std::vector<double> tumor_texture(taxonomy.diagnosis_size(), 0.0);

    const bool normal = bernoulli(rng, spec.normal_probability);
    for (std::size_t k = 0; k < spec.organs.size() && !normal; ++k) {
        const auto& o = spec.organs[k];
        if (!bernoulli(rng, o.tumor_probability)) continue;
        const ClassId organ_id = taxonomy.class_id(LabelSpace::Diagnosis, o.organ);
        if (organ_voxels[k].empty()) throw DataError("phantom: organ '" + o.organ + "' is empty; cannot host a tumor");

        std::vector<const TumorShape*> candidates;
        std::vector<double> weights;
        for (const auto& t : spec.tumors) {
            const ClassId tid = taxonomy.class_id(LabelSpace::Diagnosis, t.tumor_class);
            if (taxonomy.host_organ(LabelSpace::Diagnosis, tid) == taxonomy.host_organ(LabelSpace::Diagnosis, organ_id)) {
                candidates.push_back(&t);
                weights.push_back(t.weight);
            }
        }
        const TumorShape& shape = *candidates[std::discrete_distribution<int>(weights.begin(), weights.end())(rng)];
        const ClassId tumor_id = taxonomy.class_id(LabelSpace::Diagnosis, shape.tumor_class);
        tumor_offset[tumor_id] = shape.intensity_offset;
        tumor_texture[tumor_id] = shape.texture_noise;
        const int count = std::uniform_int_distribution<int>(shape.min_count, shape.max_count)(rng);

        for (int n = 0; n < count; ++n) {
            // Centers whose axis points at the smallest radii are free organ voxels. Every
            // acceptable placement passes this test, so filtering does not bias the draw.
            std::vector<std::int64_t> centers;
            for (auto i : organ_voxels[k]) {
                const int c[3] = {int(i / (std::int64_t(dims[1]) * dims[2])), int((i / dims[2]) % dims[1]), int(i % dims[2])};
                bool free = true;
                for (int a = 0; a < 3 && free; ++a) {
                    const int r = static_cast<int>(std::floor(shape.radii_mm[a].lo / spec.spacing[a]));
                    for (int sign : {-1, 1}) {
                        int q[3] = {c[0], c[1], c[2]};
                        q[a] += sign * r;
                        if (q[a] < 0 || q[a] >= dims[a]) {
                            free = false;
                            break;
                        }
                        const auto j = ph.labels.index(q[0], q[1], q[2]);
                        if (ph.labels.data[j] != organ_id || blocked.data[j]) {
                            free = false;
                            break;
                        }
                    }
                }
                if (free) centers.push_back(i);
            }
            bool placed = false;
            for (int attempt = 0; attempt < spec.placement_attempts && !placed && !centers.empty(); ++attempt) {
                std::array<double, 3> radius{}, center{};
                for (int a = 0; a < 3; ++a) radius[a] = sample(rng, shape.radii_mm[a]) / spec.spacing[a];
                const double e = sample(rng, shape.exponent);
                const auto pick = centers[std::uniform_int_distribution<std::size_t>(0, centers.size() - 1)(rng)];
                center = {double(pick / (std::int64_t(dims[1]) * dims[2])), double((pick / dims[2]) % dims[1]),
                          double(pick % dims[2])};
                const Box b = bounding_box(center, radius, dims, false);
                bool ok = true;
                std::vector<std::int64_t> voxels;
                Dims box_dims{b.hi[0] - b.lo[0] + 1, b.hi[1] - b.lo[1] + 1, b.hi[2] - b.lo[2] + 1};
                Grid3<std::uint8_t> local(box_dims, spec.spacing, 0);
                for (int z = b.lo[0]; z <= b.hi[0] && ok; ++z)
                    for (int y = b.lo[1]; y <= b.hi[1] && ok; ++y)
                        for (int x = b.lo[2]; x <= b.hi[2] && ok; ++x) {
                            if (!inside_superellipsoid({double(z), double(y), double(x)}, center, radius, e)) continue;
                            if (z < 0 || y < 0 || x < 0 || z >= dims[0] || y >= dims[1] || x >= dims[2]) {
                                ok = false;
                                break;
                            }
                            const auto i = ph.labels.index(z, y, x);
                            if (ph.labels.data[i] != organ_id || blocked.data[i]) {
                                ok = false;
                                break;
                            }
                            voxels.push_back(i);
                            local.at(z - b.lo[0], y - b.lo[1], x - b.lo[2]) = 1;
                        }
                if (!ok || voxels.empty() || connected_components(local, 26).count != 1) continue;

                for (auto i : voxels) ph.labels.data[i] = static_cast<std::uint8_t>(tumor_id);
                for (auto i : voxels) {
                    const int z = static_cast<int>(i / (std::int64_t(dims[1]) * dims[2]));
                    const int y = static_cast<int>((i / dims[2]) % dims[1]);
                    const int x = static_cast<int>(i % dims[2]);
                    for (int dz = -1; dz <= 1; ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int nz = z + dz, ny = y + dy, nx = x + dx;
                                if (nz < 0 || ny < 0 || nx < 0 || nz >= dims[0] || ny >= dims[1] || nx >= dims[2]) continue;
                                blocked.at(nz, ny, nx) = 1;
                            }
                }
                ph.tumors.push_back({tumor_id, organ_id, std::move(voxels)});
                placed = true;
            }
            if (!placed)
                throw DataError("phantom: could not place '" + shape.tumor_class + "' inside '" + o.organ + "' within " +
                                std::to_string(spec.placement_attempts) + " attempts (spec infeasible)");
        }
    }

    ph.volume = Volume(dims, spec.spacing, 0.0f);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (std::int64_t i = 0; i < ph.labels.size(); ++i) {
        const ClassId label = ph.labels.data[i];
        double value = spec.background_intensity;
        if (taxonomy.is_tumor(LabelSpace::Diagnosis, label)) {
            value = organ_intensity[ph.organ_labels.data[i]] + tumor_offset[label] + tumor_texture[label] * unit(rng);
        } else if (label != kBackground) {
            value = organ_intensity[label];
        }
        value += spec.noise_sigma * unit(rng);
        ph.volume.data[i] = static_cast<float>(value);
    }

    std::set<ClassId> present;
    for (const auto& t : ph.tumors) present.insert(t.class_id);
    ph.patient_labels.assign(present.begin(), present.end());
    return ph;
}

std::string Manifest::serialize() const
{
    json doc;
    doc["format"] = "hiermask-manifest";
    doc["version"] = 1;
    doc["seed"] = seed;
    doc["phantom_spec_hash"] = phantom_spec_hash;
    doc["taxonomy_hash"] = taxonomy_hash;
    doc["taxonomy"] = json::parse(taxonomy);
    doc["phantom_spec"] = phantom_spec;
    json cases = json::array();
    for (const auto& c : this->cases) {
        cases.push_back({{"id", c.id},
                         {"volume", c.volume_path},
                         {"labels", c.labels_path},
                         {"tumors", c.tumors},
                         {"tumor_ids", c.tumor_ids},
                         {"split", c.split}});
    }
    doc["cases"] = cases;
    return doc.dump(2) + "\n";
}

std::string Manifest::hash() const { return sha256_hex(serialize()); }

std::vector<const CaseRecord*> Manifest::split(const std::string& tag) const
{
    std::vector<const CaseRecord*> out;
    for (const auto& c : cases)
        if (c.split == tag) out.push_back(&c);
    return out;
}

const CaseRecord& Manifest::find(const std::string& id) const
{
    for (const auto& c : cases)
        if (c.id == id) return c;
    throw DataError("manifest has no case '" + id + "'");
}

std::vector<int> split_counts(int n_cases, const SplitFractions& fractions)
{
    if (fractions.empty()) throw UsageError("at least one split is required");
    double total = 0.0;
    for (const auto& [name, f] : fractions) {
        if (!(f >= 0.0)) throw UsageError("split fractions must be non-negative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw UsageError("split fractions must sum to 1");
    std::vector<int> counts;
    std::vector<std::pair<double, int>> remainders;
    int assigned = 0;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        const double exact = fractions[i].second * n_cases;
        counts.push_back(static_cast<int>(std::floor(exact)));
        assigned += counts.back();
        remainders.emplace_back(exact - counts.back(), static_cast<int>(i));
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (int k = 0; assigned < n_cases; ++k, ++assigned) ++counts[remainders[k].second];
    return counts;
}

Manifest make_dataset(const std::filesystem::path& out_dir, const PhantomSpec& spec, const Taxonomy& taxonomy,
                      int n_cases, std::uint64_t seed, const SplitFractions& fractions)
{
    if (n_cases < 1) throw UsageError("make_dataset: n_cases must be >= 1");
    validate_phantom_spec(spec, taxonomy);
    const auto counts = split_counts(n_cases, fractions);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir))
        throw DataError("cannot create output directory '" + out_dir.string() + "'");

    Manifest m;
    m.seed = seed;
    m.taxonomy = taxonomy.serialize();
    m.taxonomy_hash = taxonomy.hash();
    m.phantom_spec = to_json(spec);
    m.phantom_spec_hash = phantom_spec_hash(spec);
    m.root = out_dir;

    std::size_t split_index = 0;
    int in_split = 0;
    for (int i = 0; i < n_cases; ++i) {
        while (in_split >= counts[split_index]) {
            ++split_index;
            in_split = 0;
        }
        ++in_split;
        char id[32];
        std::snprintf(id, sizeof(id), "case_%04d", i);
        const Phantom ph = generate_phantom(mix_seed(seed, static_cast<std::uint64_t>(i)), spec, taxonomy);
        CaseRecord rec;
        rec.id = id;
        rec.volume_path = rec.id + "_image.hmc";
        rec.labels_path = rec.id + "_label.hmc";
        rec.split = fractions[split_index].first;
        rec.tumor_ids = ph.patient_labels;
        for (ClassId t : ph.patient_labels) {
            const int organ = *taxonomy.host_organ(LabelSpace::Diagnosis, t);
            rec.tumors[taxonomy.organs()[organ]] = taxonomy.class_name(LabelSpace::Diagnosis, t);
        }
        save_case(out_dir / rec.volume_path, out_dir / rec.labels_path, Case{ph.volume, ph.labels}, m.taxonomy_hash);
        m.cases.push_back(std::move(rec));
    }
    save_manifest(out_dir / "manifest.json", m);
    return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
    out << manifest.serialize();
    if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
}

Manifest load_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    Manifest m;
    try {
        const json doc = json::parse(ss.str());
        if (doc.at("format") != "hiermask-manifest" || doc.at("version") != 1)
            throw DataError("unsupported manifest format in '" + path.string() + "'");
        m.seed = doc.at("seed").get<std::uint64_t>();
        m.phantom_spec_hash = doc.at("phantom_spec_hash").get<std::string>();
        m.taxonomy_hash = doc.at("taxonomy_hash").get<std::string>();
        m.taxonomy = doc.at("taxonomy").dump(2) + "\n";
        m.phantom_spec = doc.at("phantom_spec");
        for (const auto& c : doc.at("cases")) {
            CaseRecord rec;
            rec.id = c.at("id").get<std::string>();
            rec.volume_path = c.at("volume").get<std::string>();
            rec.labels_path = c.at("labels").get<std::string>();
            rec.tumors = c.at("tumors").get<std::map<std::string, std::string>>();
            rec.tumor_ids = c.at("tumor_ids").get<std::vector<ClassId>>();
            rec.split = c.at("split").get<std::string>();
            m.cases.push_back(std::move(rec));
        }
    } catch (const json::exception& e) {
        throw DataError("corrupt manifest '" + path.string() + "': " + e.what());
    }
    m.root = path.parent_path();
    if (Taxonomy::parse(m.taxonomy).hash() != m.taxonomy_hash)
        throw DataError("manifest taxonomy does not match its recorded hash");
    return m;
}

void validate_manifest(const Manifest& manifest)
{
    std::set<std::string> ids;
    for (const auto& c : manifest.cases) {
        if (!ids.insert(c.id).second) throw DataError("manifest: duplicate case id '" + c.id + "'");
        for (const auto& p : {c.volume_path, c.labels_path})
            if (!std::filesystem::exists(manifest.root / p))
                throw DataError("manifest: missing file '" + (manifest.root / p).string() + "'");
    }
}

Case load_manifest_case(const Manifest& manifest, const CaseRecord& record)
{
    return load_case(manifest.root / record.volume_path, manifest.root / record.labels_path);
}

} // namespace hiermask
