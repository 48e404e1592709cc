#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "dpar/entropy.hpp"
#include "dpar/rng.hpp"

using namespace dpar;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

EntropyModel<double> tiny_model(int vocab, uint64_t seed) {
    EntropyModelConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.vocab_size = vocab;
    return EntropyModel<double>::init(cfg, seed);
}

RasterSequence random_sequence(int height, int width, int vocab, uint64_t seed) {
    Rng rng(seed);
    TokenGrid grid{height, width, vocab, {}};
    grid.tokens.resize(static_cast<size_t>(height) * width);
    for (auto& t : grid.tokens) t = static_cast<int32_t>(rng.below(vocab));
    return raster_flatten(grid);
}

}  // namespace

TEST_CASE("softmax entropy closed forms") {
    SUBCASE("uniform distribution over V=16384") {
        std::vector<double> logits(16384, 0.7);
        CHECK(softmax_entropy(logits.data(), 16384) ==
              doctest::Approx(std::log(16384.0)).epsilon(1e-9));
        CHECK(std::log(16384.0) == doctest::Approx(9.7041).epsilon(1e-4));
    }
    SUBCASE("saturated logit is deterministic") {
        std::vector<double> logits(32, 0.0);
        logits[5] = 40.0;
        CHECK(softmax_entropy(logits.data(), 32) < 1e-6);
    }
    SUBCASE("logits [0, ln 2] give ln 3 - (2/3) ln 2") {
        std::vector<double> logits = {0.0, std::log(2.0)};
        const double expect = std::log(3.0) - (2.0 / 3.0) * std::log(2.0);
        CHECK(softmax_entropy(logits.data(), 2) == doctest::Approx(expect).epsilon(1e-9));
        CHECK(expect == doctest::Approx(0.6365).epsilon(1e-3));
    }
    SUBCASE("invariant to uniform logit shift") {
        Rng rng(3);
        std::vector<double> logits(10);
        for (auto& v : logits) v = rng.normal();
        std::vector<double> shifted = logits;
        for (auto& v : shifted) v += 42.0;
        CHECK(std::abs(softmax_entropy(logits.data(), 10) -
                       softmax_entropy(shifted.data(), 10)) < 1e-6);
    }
}

TEST_CASE("entropy map") {
    auto model = tiny_model(8, 5);
    SUBCASE("length-1 sequence is the sentinel alone") {
        auto seq = random_sequence(1, 1, 8, 1);
        auto ent = entropy_map(model, seq);
        REQUIRE(ent.size() == 1);
        CHECK(std::isinf(ent.values[0]));
    }
    SUBCASE("exactly one non-finite value, at index 0, all bounded by ln V") {
        auto seq = random_sequence(3, 4, 8, 2);
        auto ent = entropy_map(model, seq);
        ent.validate();
        int nonfinite = 0;
        for (size_t i = 0; i < ent.size(); ++i) {
            if (!std::isfinite(ent.values[i])) {
                ++nonfinite;
                CHECK(i == 0);
            } else {
                CHECK(ent.values[i] <= std::log(8.0) + 1e-6);
            }
        }
        CHECK(nonfinite == 1);
    }
    SUBCASE("one pass equals per-prefix evaluation on a length-12 sequence") {
        auto seq = random_sequence(3, 4, 8, 7);
        auto ent = entropy_map(model, seq);
        for (size_t i = 1; i < seq.tokens.size(); ++i) {
            std::vector<int32_t> prefix(seq.tokens.begin(), seq.tokens.begin() + i);
            std::vector<std::pair<int, int>> coords(seq.coords.begin(), seq.coords.begin() + i);
            const double direct = next_token_entropy(model, prefix, coords);
            CHECK(std::abs(direct - static_cast<double>(ent.values[i])) < 1e-5);
        }
    }
    SUBCASE("prefix token out of vocabulary rejected") {
        CHECK_THROWS_AS(next_token_entropy(model, {9}, {{0, 0}}), ValidationError);
    }
}

TEST_CASE("entropy cache round trip and integrity") {
    auto model = tiny_model(8, 11);
    std::vector<EntropySequence> seqs;
    for (uint64_t s = 0; s < 5; ++s)
        seqs.push_back(entropy_map(model, random_sequence(2, 4, 8, s)));

    const auto path = temp_path("dpar_cache_test.dpen");
    write_entropy_cache(seqs, 0xABCD, path);
    auto cache = load_entropy_cache(path, 0xABCD);
    REQUIRE(cache.sequences.size() == seqs.size());
    for (size_t i = 0; i < seqs.size(); ++i) CHECK(cache.sequences[i].values == seqs[i].values);

    SUBCASE("digest mismatch is an error") {
        CHECK_THROWS_AS(load_entropy_cache(path, 0x1234), ValidationError);
    }
    SUBCASE("payload size is exactly header plus count*length f32s") {
        // magic 4 + version 2 + digest 8 + count 4 + length 4 = 22 byte header
        CHECK(std::filesystem::file_size(path) == 22 + 5 * 8 * 4);
    }
    std::remove(path.c_str());
}
