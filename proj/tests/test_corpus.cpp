#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dpar/corpus.hpp"
#include "dpar/rng.hpp"

using namespace dpar;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("single region with zero noise fills the grid with one token") {
    SyntheticSpec spec{4, 4, 16, 1, 0.0, 4};
    auto sample = generate_synthetic_grid(spec, 7);
    REQUIRE(sample.grid.tokens.size() == 16);
    for (int32_t t : sample.grid.tokens) CHECK(t == sample.grid.tokens[0]);
}

TEST_CASE("generation is a pure function of (spec, seed)") {
    SyntheticSpec spec{8, 8, 32, 5, 0.1, 4};
    auto a = generate_synthetic_detailed(spec, 1234);
    auto b = generate_synthetic_detailed(spec, 1234);
    CHECK(a.sample.grid.tokens == b.sample.grid.tokens);
    CHECK(a.sample.label == b.sample.label);
    CHECK(a.region_ids == b.region_ids);
    auto c = generate_synthetic_grid(spec, 1235);
    CHECK(c.grid.tokens != a.sample.grid.tokens);
}

TEST_CASE("num_regions bounded by the cell count") {
    SyntheticSpec spec{2, 2, 16, 5, 0.0, 4};
    CHECK_THROWS_AS(generate_synthetic_grid(spec, 0), ValidationError);
    spec.num_regions = 4;  // exactly one cell per region works
    auto s = generate_synthetic_detailed(spec, 3);
    CHECK(s.region_tokens.size() == 4);
}

TEST_CASE("noise fraction matches the Monte-Carlo expectation") {
    // replacement is uniform over V, so the differ rate is noise * (V-1)/V
    SyntheticSpec spec{16, 16, 64, 4, 0.05, 4};
    int64_t differ = 0, total = 0;
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        auto s = generate_synthetic_detailed(spec, seed);
        for (size_t i = 0; i < s.sample.grid.tokens.size(); ++i) {
            differ += s.sample.grid.tokens[i] != s.region_tokens[s.region_ids[i]];
            ++total;
        }
    }
    const double rate = static_cast<double>(differ) / static_cast<double>(total);
    CHECK(rate > 0.03);
    CHECK(rate < 0.07);
}

TEST_CASE("raster flatten ordering") {
    TokenGrid grid{2, 2, 16, {3, 5, 7, 9}};
    auto seq = raster_flatten(grid);
    CHECK(seq.tokens == std::vector<int32_t>{3, 5, 7, 9});
    const std::vector<std::pair<int, int>> expect = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    CHECK(seq.coords == expect);

    TokenGrid one{1, 1, 4, {2}};
    auto sq = raster_flatten(one);
    CHECK(sq.tokens.size() == 1);
    CHECK(sq.coords[0] == std::pair<int, int>{0, 0});

    TokenGrid tall{3, 2, 8, {0, 1, 2, 3, 4, 5}};
    CHECK(raster_flatten(tall).coords[4] == std::pair<int, int>{2, 0});
}

TEST_CASE("property: flatten then regroup reconstructs the grid") {
    Rng rng(5);
    for (int c = 0; c < 50; ++c) {
        SyntheticSpec spec;
        spec.height = 1 + static_cast<int>(rng.below(6));
        spec.width = 1 + static_cast<int>(rng.below(6));
        spec.num_regions =
            1 + static_cast<int>(rng.below(std::min<uint64_t>(3, spec.height * spec.width)));
        spec.noise_rate = rng.real01();
        auto grid = generate_synthetic_grid(spec, rng.next_u64()).grid;
        auto seq = raster_flatten(grid);
        TokenGrid rebuilt{grid.height, grid.width, grid.vocab_size, {}};
        rebuilt.tokens.assign(seq.tokens.begin(), seq.tokens.end());
        CHECK(rebuilt.tokens == grid.tokens);
        for (size_t i = 0; i < seq.tokens.size(); ++i) {
            CHECK(seq.coords[i].first == static_cast<int>(i) / grid.width);
            CHECK(seq.coords[i].second == static_cast<int>(i) % grid.width);
        }
    }
}

TEST_CASE("token file round trip") {
    SyntheticSpec spec{4, 4, 400, 3, 0.2, 6};
    std::vector<LabeledSample> samples;
    for (uint64_t s = 0; s < 9; ++s) samples.push_back(generate_synthetic_grid(spec, s));
    const auto path = temp_path("dpar_corpus_test.dptk");
    write_token_file(samples, spec.num_classes, path);
    auto file = read_token_file(path);
    CHECK(file.num_classes == 6);
    REQUIRE(file.samples.size() == samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        CHECK(file.samples[i].grid.tokens == samples[i].grid.tokens);
        CHECK(file.samples[i].label == samples[i].label);
        CHECK(file.samples[i].grid.vocab_size == 400);
    }
    std::remove(path.c_str());
}

TEST_CASE("token value 300 serializes as little-endian 0x2C 0x01") {
    TokenGrid grid{1, 1, 400, {300}};
    const auto path = temp_path("dpar_le_test.dptk");
    write_token_file({{grid, 0}}, 1, path);
    std::ifstream is(path, std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    // header (20 bytes) + label u16 + one token
    REQUIRE(bytes.size() == 24);
    CHECK(bytes[22] == 0x2C);
    CHECK(bytes[23] == 0x01);
    std::remove(path.c_str());
}

TEST_CASE("empty sample list writes exactly the header") {
    const auto path = temp_path("dpar_empty_test.dptk");
    write_token_file({}, 1, path);
    CHECK(std::filesystem::file_size(path) == 20);
    auto file = read_token_file(path);
    CHECK(file.samples.empty());
    std::remove(path.c_str());
}

TEST_CASE("read errors: magic, truncation, token out of vocab") {
    const auto path = temp_path("dpar_bad_test.dptk");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE";
    }
    CHECK_THROWS_AS(read_token_file(path), ValidationError);

    TokenGrid grid{2, 2, 16, {1, 2, 3, 4}};
    write_token_file({{grid, 0}}, 1, path);
    {
        // truncate the payload
        std::filesystem::resize_file(path, 23);
    }
    CHECK_THROWS_AS(read_token_file(path), ValidationError);

    write_token_file({{grid, 0}}, 1, path);
    {
        // corrupt a token to >= vocab
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(22);
        const unsigned char big[2] = {0xFF, 0xFF};
        f.write(reinterpret_cast<const char*>(big), 2);
    }
    CHECK_THROWS_AS(read_token_file(path), ValidationError);
    std::remove(path.c_str());
}
