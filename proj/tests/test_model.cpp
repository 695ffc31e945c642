// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include "avdf/errors.hpp"
#include "avdf/losses.hpp"
#include "avdf/model.hpp"
#include "avdf/train.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace avdf;
using namespace avdf::model;
using avdf::nn::Mat;

namespace {

Mat two(double a, double b) {
    Mat m(1, 2);
    m << a, b;
    return m;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config presets and validation") {
    const auto desk = ModelConfig::desk();
    CHECK(desk.d_model == 64);
    CHECK(std::array{desk.layers_audio_enc, desk.layers_video_enc, desk.layers_joint_dec, desk.layers_fcd,
                     desk.layers_tam} == std::array{2, 2, 2, 1, 1});
    const auto paper = ModelConfig::paper();
    CHECK(std::array{paper.layers_audio_enc, paper.layers_video_enc, paper.layers_joint_dec, paper.layers_fcd,
                     paper.layers_tam} == std::array{6, 6, 6, 1, 2});
    CHECK(paper.blank_id() == 40);
    CHECK(desk.mca_mode == McaMode::kAudio);

    ModelConfig bad;
    bad.n_heads = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ModelConfig{};
    bad.layers_tam = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(mca_mode_from_string("both"), ConfigError);
    CHECK(mca_mode_from_string("video") == McaMode::kVideo);

    nlohmann::json j = paper;
    const auto back = j.get<ModelConfig>();
    CHECK(back.backbone_compatible(paper));
    CHECK(back.layers_tam == 2);
    CHECK_FALSE(back.backbone_compatible(desk));
}

TEST_CASE("presence masks") {
    CHECK(PresenceMask::from_name("audio") == PresenceMask{true, false});
    CHECK(PresenceMask{false, true}.name() == "video");
    CHECK_THROWS_AS(PresenceMask::from_name("none"), ConfigError);
    CHECK_THROWS_AS((PresenceMask{false, false}.validate()), ConfigError);
}

TEST_CASE("parameter initialization") {
    const auto cfg = testing::tiny_model();
    const auto a = init_params(cfg, 7);
    const auto b = init_params(cfg, 7);
    const auto c = init_params(cfg, 8);
    REQUIRE(a.same_layout(b));
    bool all_same = true, any_diff = false;
    for (int i = 0; i < a.size(); ++i) {
        all_same = all_same && a[i] == b[i];
        any_diff = any_diff || a[i] != c[i];
        for (Eigen::Index k = 0; k < a[i].size(); ++k)
            CHECK(double(float(a[i].data()[k])) == a[i].data()[k]);
    }
    CHECK(all_same);
    CHECK(any_diff);
    CHECK(a.at("audio_enc.layers.0.ln1.gamma").isOnes(0.0));
    CHECK(a.at("joint.proj.bias").isZero(0.0));
    const double bound = std::sqrt(6.0 / (2 * 8 + 8));
    CHECK(a.at("mca.weight").cwiseAbs().maxCoeff() <= bound);
    CHECK(is_backbone("audio_enc.layers.0.ff1.weight"));
    CHECK(is_backbone("joint.proj.weight"));
    CHECK_FALSE(is_backbone("mca.weight"));
    CHECK_FALSE(is_backbone("avsr_head.weight"));
    CHECK_FALSE(is_backbone("dlc.token_fake"));
}

TEST_CASE("encoder with no layers adds positions only") {
    auto cfg = testing::tiny_model();
    cfg.layers_audio_enc = 0;
    const auto p = init_params(cfg, 1);
    std::mt19937_64 rng(1);
    const Mat x = testing::random_mat(5, cfg.d_model, rng);
    nn::Graph g;
    Network net(g, cfg, p);
    const auto y = net.encode(g.constant(x), Modality::kAudio);
    CHECK(g.value(y) == x + nn::sinusoidal_positions(5, cfg.d_model));
    for (int t : {1, 4, 17}) {
        const auto z = net.encode(g.constant(testing::random_mat(t, cfg.d_model, rng)), Modality::kVideo);
        CHECK(g.value(z).rows() == t);
        CHECK(g.value(z).cols() == cfg.d_model);
    }
    Mat nan = x;
    nan(2, 3) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(net.encode(g.constant(nan), Modality::kAudio), NumericError);
    CHECK_THROWS_AS(net.encode(g.constant(Mat(0, cfg.d_model)), Modality::kAudio), DataError);
}

TEST_CASE("compensation adapter") {
    auto cfg = testing::tiny_model();
    cfg.d_model = 2;
    cfg.n_heads = 1;
    auto p = init_params(cfg, 2);

    SUBCASE("worked example") {
        p.at("mca.weight").setZero();
        p.at("mca.weight").topRows(2).setIdentity();
        p.at("mca.bias").setZero();
        nn::Graph g;
        Network net(g, cfg, p);
        const auto [ca, cv] = net.compensate(g.constant(two(3, 4)), g.constant(two(0, 1)), McaMode::kAudio);
        CHECK(g.value(ca)(0, 0) == doctest::Approx(3.6).epsilon(1e-15));
        CHECK(g.value(ca)(0, 1) == doctest::Approx(4.8).epsilon(1e-15));
        CHECK(g.value(cv) == two(0, 1));

        const auto [va, vv] = net.compensate(g.constant(two(3, 4)), g.constant(two(0, 1)), McaMode::kVideo);
        CHECK(g.value(va) == two(3, 4));
        CHECK(g.value(vv)(0, 0) == doctest::Approx(0.6));
        CHECK(g.value(vv)(0, 1) == doctest::Approx(1.8));
    }

    SUBCASE("zero residual is the identity") {
        p.at("mca.weight").setZero();
        p.at("mca.bias").setZero();
        std::mt19937_64 rng(3);
        const Mat ea = testing::random_mat(6, 2, rng);
        const Mat ev = testing::random_mat(6, 2, rng);
        nn::Graph g;
        Network net(g, cfg, p);
        for (auto mode : {McaMode::kAudio, McaMode::kVideo, McaMode::kNone}) {
            const auto [ca, cv] = net.compensate(g.constant(ea), g.constant(ev), mode);
            CHECK(g.value(ca) == ea);
            CHECK(g.value(cv) == ev);
        }
    }

    SUBCASE("zero audio row contributes nothing") {
        std::mt19937_64 rng(4);
        p.at("mca.weight") = testing::random_mat(4, 2, rng);
        p.at("mca.bias") = testing::random_mat(1, 2, rng);
        const Mat ev = two(0.3, -0.4);
        nn::Graph g;
        Network net(g, cfg, p);
        const auto [ca, cv] = net.compensate(g.constant(Mat::Zero(1, 2)), g.constant(ev), McaMode::kAudio);
        const Mat nv = ev / ev.norm();
        const Mat expected = nv * p.at("mca.weight").bottomRows(2) + p.at("mca.bias");
        CHECK((g.value(ca) - expected).cwiseAbs().maxCoeff() <= 1e-15);
    }

    SUBCASE("none mode and length mismatch") {
        nn::Graph g;
        Network net(g, cfg, p);
        CHECK_THROWS_AS(net.compensate(g.constant(Mat::Ones(3, 2)), g.constant(Mat::Ones(2, 2)), McaMode::kAudio),
                        DataError);
    }
}

TEST_CASE("joint decoder") {
    auto cfg = testing::tiny_model();
    auto p = init_params(cfg, 5);
    std::mt19937_64 rng(5);
    const Mat ca = testing::random_mat(5, 8, rng);
    const Mat cv = testing::random_mat(5, 8, rng);

    nn::Graph g;
    Network net(g, cfg, p);
    const auto missing = net.joint_decode(g.constant(ca), g.constant(cv), {false, true});
    const auto zeroed = net.joint_decode(g.constant(Mat::Zero(5, 8)), g.constant(cv), {true, true});
    CHECK(g.value(missing.seq) == g.value(zeroed.seq));
    CHECK(missing.presence == PresenceMask{false, true});
    CHECK_THROWS_AS(net.joint_decode(g.constant(ca), g.constant(cv), {false, false}), ConfigError);
    CHECK_THROWS_AS(net.joint_decode(g.constant(ca), g.constant(Mat::Zero(4, 8)), {true, true}), DataError);

    for (int t = 4; t <= 32; t += 7) {
        const auto d = net.joint_decode(g.constant(testing::random_mat(t, 8, rng)),
                                        g.constant(testing::random_mat(t, 8, rng)), {true, true});
        CHECK(g.value(d.seq).rows() == t);
    }

    auto flat = cfg;
    flat.layers_joint_dec = 0;
    auto fp = init_params(flat, 5);
    fp.at("joint.proj.weight").setZero();
    fp.at("joint.proj.bias").setZero();
    nn::Graph h;
    Network fnet(h, flat, fp);
    const auto z = fnet.joint_decode(h.constant(Mat::Zero(4, 8)), h.constant(Mat::Zero(4, 8)), {true, true});
    CHECK(h.value(z.seq) == nn::sinusoidal_positions(4, 8));
}

TEST_CASE("speech recognition head") {
    const ModelConfig cfg;
    auto p = init_params(cfg, 6);
    std::mt19937_64 rng(6);
    nn::Graph g;
    Network net(g, cfg, p);
    const auto logits = net.avsr_head(g.constant(testing::random_mat(7, cfg.d_model, rng)));
    CHECK(g.value(logits).rows() == 7);
    CHECK(g.value(logits).cols() == 41);
    const auto probs = nn::softmax_rows(g, logits);
    for (int t = 0; t < 7; ++t) CHECK(g.value(probs).row(t).sum() == doctest::Approx(1.0).epsilon(1e-12));

    p.at("avsr_head.weight").setZero();
    p.at("avsr_head.bias").setZero();
    nn::Graph h;
    Network zero(h, cfg, p);
    const auto u = nn::softmax_rows(h, zero.avsr_head(h.constant(testing::random_mat(3, cfg.d_model, rng))));
    CHECK((h.value(u).array() - 1.0 / 41).abs().maxCoeff() <= 1e-15);
}

TEST_CASE("dual-label classifier shapes and token layout") {
    const auto cfg = testing::tiny_model();
    const auto p = init_params(cfg, 7);
    std::mt19937_64 rng(7);
    for (int t : {1, 4, 9}) {
        nn::Graph g;
        Network net(g, cfg, p);
        const auto out = net.dlc_forward(g.constant(testing::random_mat(t, 8, rng)));
        CHECK(out.fcd_tokens == t + 1);
        CHECK(out.tam_tokens == t + 2);
        CHECK(g.value(out.modality_logits).size() == 2);
        CHECK(g.value(out.count_logits).size() == 3);
        CHECK(g.value(out.embedding).cols() == 8);
    }
}

TEST_CASE("classifier is not permutation invariant with positions") {
    const auto cfg = testing::tiny_model();
    const auto p = init_params(cfg, 8);
    std::mt19937_64 rng(8);
    const Mat c = testing::random_mat(5, 8, rng);
    Mat reversed = c.colwise().reverse();
    nn::Graph g;
    Network net(g, cfg, p);
    const auto a = net.dlc_forward(g.constant(c));
    const auto b = net.dlc_forward(g.constant(reversed));
    CHECK((g.value(a.modality_logits) - g.value(b.modality_logits)).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("detection output") {
    const auto half = make_detection(two(0, 0), Mat::Zero(1, 3), Mat::Zero(1, 4), {true, true});
    CHECK(half.p_audio_fake == 0.5);
    CHECK(half.p_video_fake == 0.5);
    CHECK(half.fused_real_score == 0.25);
    CHECK(half.count_probs[0] == doctest::Approx(1.0 / 3));
    CHECK(half.embedding.size() == 4);

    const auto sat = make_detection(two(-50, 50), Mat::Zero(1, 3), Mat::Zero(1, 4), {true, true});
    CHECK(sat.fused_real_score < 1e-20);

    Mat counts(1, 3);
    counts << 2.0, -1.0, 0.5;
    const auto v = make_detection(two(1.0, -2.0), counts, Mat::Zero(1, 4), {false, true});
    CHECK(v.count_probs[0] + v.count_probs[1] + v.count_probs[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_FALSE(v.audio_supported);
    CHECK(v.video_supported);
    CHECK(v.fused_real_score == doctest::Approx(1.0 - v.p_video_fake));
}

TEST_CASE("absent modality ignores its features") {
    const auto cfg = testing::tiny_model();
    const auto p = init_params(cfg, 9);
    std::mt19937_64 rng(9);
    const auto in = testing::random_inputs(cfg, 6, rng);
    auto blank = in;
    blank.audio.setZero();
    const auto a = detect(cfg, p, in, {false, true});
    const auto b = detect(cfg, p, blank, {false, true});
    CHECK(a.p_audio_fake == b.p_audio_fake);
    CHECK(a.p_video_fake == b.p_video_fake);
    CHECK(a.embedding == b.embedding);

    const auto full = detect(cfg, p, in, {true, true});
    CHECK(full.p_video_fake != a.p_video_fake);
}

TEST_CASE("evaluation forward is deterministic; dropout only with an rng") {
    auto cfg = testing::tiny_model();
    cfg.dropout_rate = 0.3;
    const auto p = init_params(cfg, 10);
    std::mt19937_64 rng(10);
    const auto in = testing::random_inputs(cfg, 6, rng);
    const auto a = detect(cfg, p, in, {true, true});
    const auto b = detect(cfg, p, in, {true, true});
    CHECK(a.p_audio_fake == b.p_audio_fake);
    CHECK(a.embedding == b.embedding);

    Rng drop(1);
    nn::Graph g;
    Network net(g, cfg, p, nullptr, &drop);
    const auto out = net.forward_detect(in, {true, true});
    CHECK(g.value(out.modality_logits)(0, 0) != doctest::Approx(std::log(a.p_audio_fake / (1 - a.p_audio_fake))));
}

TEST_CASE("full-model gradient matches finite differences") {
    auto cfg = testing::tiny_model();
    auto p = init_params(cfg, 11);
    std::mt19937_64 rng(11);
    for (int i = 0; i < p.size(); ++i)
        if (p.name(i).ends_with(".bias") || p.name(i).ends_with(".beta"))
            p[i] = testing::random_mat(int(p[i].rows()), int(p[i].cols()), rng, 0.1);
    const auto in = testing::random_inputs(cfg, 4, rng);
    const corpus::DualLabel label{true, false};
    auto grads = p.zeros_like();
    train::detection_loss(cfg, p, in, label, {true, true}, {}, {}, &grads);
    auto f = [&] { return train::detection_loss(cfg, p, in, label, {true, true}, {}).total; };
    int checked = 0;
    for (int i = 0; i < p.size(); ++i) {
        const Eigen::Index k = Eigen::Index(rng() % p[i].size());
        const double fd = testing::central_difference4(p[i], k, f);
        INFO(p.name(i) << "[" << k << "] analytic " << grads[i].data()[k] << " fd " << fd);
        CHECK(testing::relative_error(grads[i].data()[k], fd) <= 1e-4);
        ++checked;
    }
    CHECK(checked == p.size());
}

TEST_CASE("greedy decode collapses repeats and drops blanks") {
    Mat logits = Mat::Zero(7, 4);
    const int path[] = {3, 1, 1, 3, 1, 2, 2};
    for (int t = 0; t < 7; ++t) logits(t, path[t]) = 5.0;
    CHECK(greedy_decode(logits, 3) == std::vector<int>{1, 1, 2});
}

TEST_CASE("inputs from a sample") {
    corpus::CorpusSpec spec;
    const auto t = corpus::draw_transcript(spec, 3, 1);
    const auto s = corpus::synthesize_sample(t, {}, spec, 12);
    const ModelConfig cfg;
    const auto in = make_inputs(s, cfg);
    CHECK(in.audio.rows() == s.frames);
    CHECK(in.audio.cols() == 1284);
    CHECK(in.video.rows() == s.frames);
    CHECK(in.frames() == s.frames);
    auto other = cfg;
    other.video_dim = 32;
    CHECK_THROWS_AS(make_inputs(s, other), ConfigError);
}

}  // TEST_SUITE
