#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dpar/rope.hpp"
#include "dpar/verify.hpp"

using namespace dpar;

TEST_CASE("2d rope angle schedule") {
    SUBCASE("zero coordinate gives identity rotation") {
        auto t = rope2d_angles(0, 0, 8);
        REQUIRE(t.angles.size() == 4);
        for (double a : t.angles) CHECK(a == 0.0);
        std::vector<double> v = {1, 2, 3, 4, 5, 6, 7, 8};
        CHECK(apply_rotary(v, t) == v);
    }
    SUBCASE("frequency values at d=8") {
        auto t = rope2d_angles(1, 1, 8);
        CHECK(t.angles[0] == doctest::Approx(1.0));          // omega_1 = 1
        CHECK(t.angles[1] == doctest::Approx(0.01));         // omega_2 = 10000^(-1/2)
        CHECK(t.angles[2] == doctest::Approx(1.0));          // y group restarts
        CHECK(t.angles[3] == doctest::Approx(0.01));
    }
    SUBCASE("x=2 rotates the first pair by 2 radians") {
        auto t = rope2d_angles(2, 0, 8);
        CHECK(t.angles[0] == doctest::Approx(2.0));
        std::vector<double> v(8, 0.0);
        v[0] = 1.0;
        auto r = apply_rotary(v, t);
        CHECK(r[1] == doctest::Approx(std::sin(2.0)).epsilon(1e-6));  // 0.9093
    }
    SUBCASE("indivisible head dim rejected") {
        CHECK_THROWS_AS(rope2d_angles(0, 0, 6), ValidationError);
    }
}

TEST_CASE("dynamic rope layout") {
    SUBCASE("d=32 encodes 32 components: 16 from x plus 4 groups of 4") {
        PatchSpanCoord span{1, 2, 5};
        auto t = dynamic_rope_angles(span, 32);
        REQUIRE(t.angles.size() == 16);  // d/2 angles = d components
        // x group: d/4 = 8 angles; then 4 groups of d/16 = 2
        CHECK(t.angles[0] == doctest::Approx(1.0));   // omega_1 * x with x=1
        // group order [y_s, y_e, y_e, y_s]
        CHECK(t.angles[8] == doctest::Approx(2.0));   // alpha_1 * y_s
        CHECK(t.angles[10] == doctest::Approx(5.0));  // alpha_1 * y_e
        CHECK(t.angles[12] == doctest::Approx(5.0));
        CHECK(t.angles[14] == doctest::Approx(2.0));
    }
    SUBCASE("alpha frequencies at d=32") {
        PatchSpanCoord span{0, 1, 1};
        auto t = dynamic_rope_angles(span, 32);
        CHECK(t.angles[8] == doctest::Approx(1.0));    // alpha_1 = 1
        CHECK(t.angles[9] == doctest::Approx(0.01));   // alpha_2 = 10000^(-16/32)
    }
    SUBCASE("singleton span degenerates to a function of (x, y)") {
        PatchSpanCoord span{3, 4, 4};
        auto t = dynamic_rope_angles(span, 32);
        for (size_t i = 8; i < 16; i += 2) {
            CHECK(t.angles[i] == t.angles[8]);  // every group carries alpha_i * y
            CHECK(t.angles[i + 1] == t.angles[9]);
        }
    }
    SUBCASE("validation") {
        CHECK_THROWS_AS(dynamic_rope_angles({0, 3, 1}, 32), ValidationError);  // y_s > y_e
        CHECK_THROWS_AS(dynamic_rope_angles({0, 0, 1}, 24), ValidationError);  // d % 16 != 0
    }
    SUBCASE("no-redundancy variant fills d/2 angles with two column groups") {
        auto t = dynamic_rope_angles({1, 2, 5}, 32, EmbeddingVariant::dynamic_no_redundancy);
        REQUIRE(t.angles.size() == 16);
        CHECK(t.angles[8] == doctest::Approx(2.0));   // y_s group, d/8 = 4 angles
        CHECK(t.angles[12] == doctest::Approx(5.0));  // y_e group
    }
    SUBCASE("plain-2d variant uses the starting coordinate") {
        auto t = dynamic_rope_angles({1, 2, 5}, 32, EmbeddingVariant::plain_2d);
        auto ref = rope2d_angles(1, 2, 32);
        CHECK(t.angles == ref.angles);
    }
}

TEST_CASE("apply_rotary basics") {
    SUBCASE("quarter rotation") {
        AngleTable t;
        t.head_dim = 2;
        t.angles = {M_PI / 2};
        auto r = apply_rotary({1.0, 0.0}, t);
        CHECK(r[0] == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(r[1] == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("dim mismatch rejected") {
        AngleTable t;
        t.head_dim = 4;
        t.angles = {0.1, 0.2};
        CHECK_THROWS_AS(apply_rotary({1.0, 2.0}, t), ValidationError);
    }
}

TEST_CASE("property suite: norms, offsets, dimension arithmetic") {
    auto r = check_rope_properties();
    INFO(r.detail);
    CHECK(r.pass);
}
