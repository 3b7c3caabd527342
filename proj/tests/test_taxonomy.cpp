#include "hiermask/error.hpp"
#include "hiermask/taxonomy.hpp"
#include "hiermask/volume.hpp"

#include <doctest.h>

#include <random>
#include <set>

using namespace hiermask;

TEST_SUITE("taxonomy") {

TEST_CASE("paper configuration counts")
{
    const auto t = Taxonomy::build(paper_taxonomy_config());
    CHECK(t.organs().size() == 8);
    CHECK(t.tumors_flat().size() == 14);
    CHECK(t.organs().size() + t.tumors_flat().size() == 22);
    CHECK(t.num_majors() == 4);
    CHECK(t.num_subtypes() == 10);
    CHECK(t.num_shared() == 12);
    CHECK(t.detection_size() == 4 + 12 + 1);
    CHECK(t.diagnosis_size() == 10 + 12 + 1);
    CHECK(t.group_size(1) == 4);
}

TEST_CASE("toy configuration counts")
{
    const auto t = Taxonomy::build(toy_taxonomy_config());
    CHECK(t.num_shared() == 3);
    CHECK(t.detection_size() == 5);
    CHECK(t.diagnosis_size() == 6);
}

TEST_CASE("invalid configurations are rejected")
{
    auto c = paper_taxonomy_config();
    c.tumors[1].subtypes = {"HCC"};
    CHECK_THROWS_AS(Taxonomy::build(c), UsageError);

    c = toy_taxonomy_config();
    c.tumors.push_back({"HCC", "liver", {}});
    CHECK_THROWS_AS(Taxonomy::build(c), UsageError);

    c = toy_taxonomy_config();
    c.tumors.push_back({"spleen tumor", "spleen", {}});
    CHECK_THROWS_AS(Taxonomy::build(c), UsageError);
}

TEST_CASE("subtype_to_major")
{
    const auto t = Taxonomy::build(paper_taxonomy_config());
    const auto D = LabelSpace::Diagnosis, E = LabelSpace::Detection;
    CHECK(t.subtype_to_major(t.class_id(D, "HCC")) == t.class_id(E, "liver tumor"));
    CHECK(t.subtype_to_major(t.class_id(D, "nonPDAC")) == t.class_id(E, "pancreas tumor"));
    CHECK(t.subtype_to_major(kBackground) == kBackground);
    CHECK(t.subtype_to_major(t.class_id(D, "lung cancer")) == t.class_id(E, "lung cancer"));
    CHECK_THROWS_AS(t.subtype_to_major(t.diagnosis_size()), UsageError);
    CHECK_THROWS_AS(t.subtype_to_major(-1), UsageError);

    // total on the diagnosis space and surjective onto the detection space
    std::set<ClassId> image;
    for (ClassId c = 0; c < t.diagnosis_size(); ++c) image.insert(t.subtype_to_major(c));
    CHECK(static_cast<int>(image.size()) == t.detection_size());
}

TEST_CASE("merge_map covers exactly the subtypes")
{
    const auto t = Taxonomy::build(paper_taxonomy_config());
    CHECK(t.merge_map().size() == 10);
    for (std::size_t g = 0; g < t.subtype_groups().size(); ++g)
        for (const auto& s : t.subtype_groups()[g]) CHECK(t.merge_map().at(s) == t.majors()[g]);
    for (const auto& s : t.shared()) CHECK(t.merge_map().count(s) == 0);
}

TEST_CASE("merge_labelmap")
{
    const auto t = Taxonomy::build(paper_taxonomy_config());
    const auto D = LabelSpace::Diagnosis;
    LabelMap m({2, 2, 2}, {1, 2, 3});
    m.data = {0, static_cast<std::uint8_t>(t.class_id(D, "PDAC")), static_cast<std::uint8_t>(t.class_id(D, "nonPDAC")),
              0, 0, 0, 0, 0};
    const auto merged = merge_labelmap(t, m);
    CHECK(merged.space == LabelSpace::Detection);
    CHECK(merged.spacing == m.spacing);
    CHECK(merged.data[1] == t.class_id(LabelSpace::Detection, "pancreas tumor"));
    CHECK(merged.data[2] == merged.data[1]);

    LabelMap empty({3, 3, 3}, {1, 1, 1});
    CHECK(merge_labelmap(t, empty).data == empty.data);

    std::mt19937_64 rng(7);
    LabelMap r({5, 4, 3}, {1, 1, 1});
    for (auto& v : r.data) v = static_cast<std::uint8_t>(rng() % t.diagnosis_size());
    const auto rm = merge_labelmap(t, r);
    for (std::size_t i = 0; i < r.data.size(); ++i) CHECK(rm.data[i] == t.subtype_to_major(r.data[i]));

    r.data[3] = static_cast<std::uint8_t>(t.diagnosis_size());
    CHECK_THROWS(merge_labelmap(t, r));
}

TEST_CASE("shared and background voxels are fixed by the merge")
{
    const auto t = Taxonomy::build(paper_taxonomy_config());
    for (ClassId c = 0; c < t.diagnosis_size(); ++c) {
        if (t.group_of_subtype(c) >= 0) continue;
        CHECK(t.class_name(LabelSpace::Detection, t.subtype_to_major(c)) == t.class_name(LabelSpace::Diagnosis, c));
    }
}

TEST_CASE("serialization is deterministic and round-trips")
{
    const auto a = Taxonomy::build(paper_taxonomy_config());
    const auto b = Taxonomy::build(paper_taxonomy_config());
    CHECK(a.serialize() == b.serialize());
    CHECK(a.hash() == b.hash());
    const auto c = Taxonomy::parse(a.serialize());
    CHECK(c.serialize() == a.serialize());
    CHECK(Taxonomy::build(toy_taxonomy_config()).hash() != a.hash());
}

}
