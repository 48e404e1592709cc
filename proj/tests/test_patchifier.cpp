#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dpar/patchify.hpp"
#include "dpar/verify.hpp"

using namespace dpar;

namespace {

EntropySequence seq(std::vector<float> v) {
    EntropySequence e;
    e.values = std::move(v);
    return e;
}

const float kInf = EntropySequence::kSentinel;

}  // namespace

TEST_CASE("worked example: T=8, row_width=4, E_Th=1.0, P_max=2") {
    PatchifierConfig cfg;
    cfg.entropy_threshold = 1.0;
    cfg.max_patch_len = 2;
    cfg.row_width = 4;
    auto part = patchify(seq({kInf, 0.5f, 0.3f, 2.0f, 0.2f, 0.4f, 0.1f, 0.9f}), cfg);
    const std::vector<std::pair<int32_t, int32_t>> expect = {{0, 0}, {1, 2}, {3, 3}, {4, 5}, {6, 7}};
    CHECK(part.spans == expect);
    CHECK(part.num_patches() == 5);
    part.validate(cfg);
}

TEST_CASE("all entropies above threshold give singletons") {
    PatchifierConfig cfg;
    cfg.entropy_threshold = 0.5;
    cfg.max_patch_len = 8;
    cfg.row_width = 64;
    auto part = patchify(seq({kInf, 1.0f, 2.0f, 3.0f, 1.5f, 0.9f}), cfg);
    CHECK(part.num_patches() == 6);
    for (const auto& [s, e] : part.spans) CHECK(s == e);
}

TEST_CASE("incremental decision gates") {
    PatchifierConfig cfg;
    cfg.entropy_threshold = 1.0;
    cfg.max_patch_len = 4;
    cfg.row_width = 8;
    // threshold is inclusive
    CHECK(incremental_decision(1.0, 2, 3, cfg) == Decision::extend);
    CHECK(incremental_decision(1.0 + 1e-9, 2, 3, cfg) == Decision::new_patch);
    // length gate wins regardless of entropy
    CHECK(incremental_decision(0.0, 4, 3, cfg) == Decision::new_patch);
    // first column of the second row forces a new patch
    CHECK(incremental_decision(0.0, 1, 8, cfg) == Decision::new_patch);
    CHECK(incremental_decision(0.0, 1, 9, cfg) == Decision::extend);
}

TEST_CASE("patchify edge cases") {
    PatchifierConfig cfg;
    CHECK(patchify(seq({kInf}), cfg).spans ==
          std::vector<std::pair<int32_t, int32_t>>{{0, 0}});
    CHECK_THROWS_AS(patchify(seq({}), cfg), ValidationError);
    CHECK_THROWS_AS(patchify(seq({0.5f, 0.5f}), cfg), ValidationError);  // missing sentinel
}

TEST_CASE("static patchify layouts") {
    PatchifierConfig cfg;
    cfg.row_width = 4;
    SUBCASE("fixed_len=3 with row resets") {
        auto part = static_patchify(8, 3, cfg);
        const std::vector<std::pair<int32_t, int32_t>> expect = {{0, 2}, {3, 3}, {4, 6}, {7, 7}};
        CHECK(part.spans == expect);
    }
    SUBCASE("fixed_len=1 gives singletons") {
        CHECK(static_patchify(6, 1, cfg).num_patches() == 6);
    }
    SUBCASE("fixed_len >= row_width gives one span per row") {
        auto part = static_patchify(12, 9, cfg);
        CHECK(part.num_patches() == 3);
        for (const auto& [s, e] : part.spans) CHECK(e - s + 1 == 4);
    }
}

TEST_CASE("partition stats") {
    PatchifierConfig cfg;
    cfg.entropy_threshold = 1.0;
    cfg.max_patch_len = 2;
    cfg.row_width = 4;
    auto part = patchify(seq({kInf, 0.5f, 0.3f, 2.0f, 0.2f, 0.4f, 0.1f, 0.9f}), cfg);
    auto stats = partition_stats({part});
    CHECK(stats.avg_patch_len == doctest::Approx(8.0 / 5.0));
    CHECK(stats.generation_steps == doctest::Approx(5.0));

    // all-singleton partitions: avg length 1, steps = T
    PatchifierConfig strict = cfg;
    strict.entropy_threshold = 0.0;
    auto singles = patchify(seq({kInf, 1.f, 1.f, 1.f}), strict);
    auto s2 = partition_stats({singles});
    CHECK(s2.avg_patch_len == doctest::Approx(1.0));
    CHECK(s2.generation_steps == doctest::Approx(4.0));

    // paper-scale arithmetic: T=256 at P_avg=1.81 is ~141.4 steps (Table 2's 142)
    CHECK(256.0 / 1.81 == doctest::Approx(141.43).epsilon(1e-3));
    CHECK(std::abs(256.0 / 1.81 - 142.0) < 1.0);
}

TEST_CASE("bos-extended partition shifts token geometry") {
    PatchifierConfig cfg;
    cfg.entropy_threshold = 1.0;
    cfg.max_patch_len = 4;
    cfg.row_width = 4;
    // tokens 0..7 all below threshold: row reset must fire at token index 4,
    // i.e. BOS-extended position 5
    std::vector<float> ent = {kInf, 0.1f, 0.1f, 0.1f, 0.1f, 0.1f, 0.1f, 0.1f};
    auto part = patchify_with_bos(ent, cfg);
    const std::vector<std::pair<int32_t, int32_t>> expect = {{0, 0}, {1, 4}, {5, 8}};
    CHECK(part.spans == expect);
    part.validate(cfg, /*index_offset=*/-1);

    // degenerate: empty prefix is just the BOS patch
    CHECK(patchify_with_bos({}, cfg).spans ==
          std::vector<std::pair<int32_t, int32_t>>{{0, 0}});
}

TEST_CASE("span grid coords and position map") {
    PatchifierConfig cfg;
    cfg.entropy_threshold = 1.0;
    cfg.max_patch_len = 2;
    cfg.row_width = 4;
    auto part = patchify(seq({kInf, 0.5f, 0.3f, 2.0f, 0.2f, 0.4f, 0.1f, 0.9f}), cfg);
    auto coords = span_grid_coords(part, 4);
    REQUIRE(coords.size() == 5);
    CHECK(coords[1].x == 0);
    CHECK(coords[1].y_s == 1);
    CHECK(coords[1].y_e == 2);
    CHECK(coords[3].x == 1);
    CHECK(coords[3].y_s == 0);
    CHECK(coords[3].y_e == 1);

    auto map = position_to_patch(part);
    CHECK(map == std::vector<int32_t>{0, 1, 1, 2, 3, 3, 4, 4});
}

TEST_CASE("property: random sequences satisfy invariants and replay") {
    auto r = check_patchifier_invariants(300, 256, 99);
    INFO(r.detail);
    CHECK(r.pass);
}
