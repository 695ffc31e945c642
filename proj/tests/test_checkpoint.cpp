// SPDX-License-Identifier: Apache-2.0
#include <cstring>
#include <fstream>
#include <sstream>

#include "avdf/errors.hpp"
#include "avdf/train.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace avdf;
using namespace avdf::train;

namespace {

TrainConfig quick(int steps) {
    TrainConfig c;
    c.batch_size = 4;
    c.max_steps = steps;
    c.eval_every = 4;
    return c;
}

void check_same(const ParamSet& a, const ParamSet& b) {
    REQUIRE(a.same_layout(b));
    for (int i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("encode/decode round trip") {
    testing::TempDir dir("ckpt");
    const auto model = testing::tiny_model();
    const auto manifest = corpus::generate_corpus(testing::tiny_corpus(), dir / "corpus");
    const auto splits = data::load_splits(manifest, model, 10, 1);
    auto ck = finetune_detection(splits, nullptr, model, quick(4));
    ck.extra = {{"note", "x"}};

    const auto back = decode_checkpoint(encode_checkpoint(ck));
    CHECK(back.stage == ck.stage);
    CHECK(back.step == ck.step);
    CHECK(back.adam.t == ck.adam.t);
    CHECK(back.early.best_step == ck.early.best_step);
    CHECK(back.early.best_metric == ck.early.best_metric);
    CHECK(back.extra == ck.extra);
    CHECK(back.rng_digest() == ck.rng_digest());
    CHECK(nlohmann::json(back.model) == nlohmann::json(ck.model));
    check_same(back.params, ck.params);
    check_same(back.adam.m, ck.adam.m);
    check_same(back.adam.v, ck.adam.v);
    REQUIRE(back.best_params.has_value());
    check_same(*back.best_params, *ck.best_params);

    const auto wide = decode_checkpoint(encode_checkpoint(ck, BlobType::kF64));
    check_same(wide.params, ck.params);

    save_checkpoint(ck, dir / "c.ckpt");
    check_same(load_checkpoint(dir / "c.ckpt").params, ck.params);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
}

TEST_CASE("resume continues bit-exactly") {
    testing::TempDir dir("resume");
    const auto model = testing::tiny_model();
    const auto manifest = corpus::generate_corpus(testing::tiny_corpus(), dir / "corpus");
    const auto splits = data::load_splits(manifest, model, 10, 1);

    for (Stage stage : {Stage::kAvsr, Stage::kDetect}) {
        const auto cfg = quick(16);
        const auto init = model::init_params(model, 9);
        std::ostringstream full_log;
        Trainer full(stage, model, cfg, init, splits, JsonlLog(&full_log));
        std::vector<double> full_losses;
        while (!full.finished()) full_losses.push_back(full.step().loss.total);

        std::ostringstream first_log, second_log;
        Trainer first(stage, model, cfg, init, splits, JsonlLog(&first_log));
        for (int i = 0; i < 6; ++i) first.step();
        save_checkpoint(first.checkpoint(), dir / "mid.ckpt");

        const auto mid = load_checkpoint(dir / "mid.ckpt");
        CHECK(mid.step == 6);
        Trainer second(stage, model, cfg, model::init_params(model, 123), splits, JsonlLog(&second_log));
        second.restore(mid);
        CHECK(second.current_step() == 6);
        std::vector<double> resumed;
        while (!second.finished()) resumed.push_back(second.step().loss.total);
        REQUIRE(resumed.size() == 10);
        for (std::size_t i = 0; i < resumed.size(); ++i) CHECK(resumed[i] == full_losses[6 + i]);
        check_same(second.params(), full.params());
        CHECK(first_log.str() + second_log.str() == full_log.str());
    }
}

TEST_CASE("corrupt and foreign files are rejected") {
    const auto model = testing::tiny_model();
    Checkpoint ck;
    ck.model = model;
    ck.params = model::init_params(model, 1);
    ck.adam = Adam(ck.params, 0.9, 0.999, 1e-8);
    const auto bytes = encode_checkpoint(ck);
    CHECK_NOTHROW(decode_checkpoint(bytes));

    auto magic = bytes;
    magic[3] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(magic), FormatError);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 8);
    CHECK_THROWS_AS(decode_checkpoint(truncated), CorruptionError);

    auto header_cut = bytes;
    header_cut.resize(40);
    CHECK_THROWS_AS(decode_checkpoint(header_cut), CorruptionError);

    // Bump the major version inside the JSON header.
    std::uint32_t len;
    std::memcpy(&len, bytes.data() + 8, 4);
    std::string header(bytes.begin() + 12, bytes.begin() + 12 + len);
    auto j = nlohmann::json::parse(header);
    j["version"]["major"] = 2;
    const std::string h2 = j.dump();
    std::vector<std::uint8_t> major(bytes.begin(), bytes.begin() + 8);
    const std::uint32_t len2 = std::uint32_t(h2.size());
    major.insert(major.end(), reinterpret_cast<const std::uint8_t*>(&len2),
                 reinterpret_cast<const std::uint8_t*>(&len2) + 4);
    major.insert(major.end(), h2.begin(), h2.end());
    major.insert(major.end(), bytes.begin() + 12 + len, bytes.end());
    CHECK_THROWS_AS(decode_checkpoint(major), FormatError);

    // Newer minor versions with extra keys still load.
    j = nlohmann::json::parse(header);
    j["version"]["minor"] = 7;
    j["future_field"] = {1, 2, 3};
    const std::string h3 = j.dump();
    std::vector<std::uint8_t> minor(bytes.begin(), bytes.begin() + 8);
    const std::uint32_t len3 = std::uint32_t(h3.size());
    minor.insert(minor.end(), reinterpret_cast<const std::uint8_t*>(&len3),
                 reinterpret_cast<const std::uint8_t*>(&len3) + 4);
    minor.insert(minor.end(), h3.begin(), h3.end());
    minor.insert(minor.end(), bytes.begin() + 12 + len, bytes.end());
    CHECK(decode_checkpoint(minor).params.same_layout(ck.params));
}

TEST_CASE("restore rejects mismatched checkpoints") {
    testing::TempDir dir("restore");
    const auto model = testing::tiny_model();
    const auto manifest = corpus::generate_corpus(testing::tiny_corpus(), dir / "corpus");
    const auto splits = data::load_splits(manifest, model, 10, 1);
    const auto pre = pretrain_avsr(splits, model, quick(1));
    Trainer t(Stage::kDetect, model, quick(2), model::init_params(model, 1), splits);
    CHECK_THROWS_AS(t.restore(pre), ConfigError);
}

}  // TEST_SUITE
