// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <complex>
#include <numbers>

#include "avdf/errors.hpp"
#include "avdf/features.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace avdf;
using namespace avdf::features;
using avdf::nn::Mat;

namespace {

std::vector<float> tone(double hz, int samples, double amp = 1.0) {
    std::vector<float> w(samples);
    for (int n = 0; n < samples; ++n) w[n] = float(amp * std::sin(2 * std::numbers::pi * hz * n / 16000.0));
    return w;
}

// Direct O(N^2) DFT magnitude of one Hann-windowed, zero-padded frame.
std::vector<double> brute_force_frame(const std::vector<float>& w, int frame) {
    std::vector<double> out(kBins);
    for (int k = 0; k < kBins; ++k) {
        std::complex<double> acc = 0;
        for (int n = 0; n < kWindow; ++n) {
            const std::size_t idx = std::size_t(frame) * kHop + n;
            const double x = idx < w.size() ? w[idx] : 0.0;
            const double hann = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * n / kWindow);
            acc += x * hann * std::polar(1.0, -2 * std::numbers::pi * k * n / kWindow);
        }
        out[k] = std::abs(acc);
    }
    return out;
}

}  // namespace

TEST_SUITE("features") {

TEST_CASE("spectrogram shape and zero input") {
    const std::vector<float> zeros(6400, 0.0f);
    const Mat s = stft_spectrogram(zeros);
    CHECK(s.rows() == 40);
    CHECK(s.cols() == 321);
    CHECK(s.isZero(0.0));

    const std::vector<float> odd(6401, 0.25f);
    CHECK(stft_spectrogram(odd).rows() == 41);
    CHECK(stft_spectrogram(odd).minCoeff() >= 0.0);
}

TEST_CASE("short waveforms are rejected") {
    CHECK_THROWS_AS(stft_spectrogram(std::vector<float>(639, 0.0f)), DataError);
    CHECK_NOTHROW(stft_spectrogram(std::vector<float>(640, 0.0f)));
}

TEST_CASE("1 kHz tone peaks in bin 40") {
    const auto w = tone(1000.0, 6400);
    const Mat s = stft_spectrogram(w);
    for (Eigen::Index t = 0; t < s.rows(); ++t) {
        Eigen::Index k;
        s.row(t).maxCoeff(&k);
        CHECK(k == 40);
    }
}

TEST_CASE("matches a brute-force DFT") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 1);
    std::vector<float> w(2000);
    for (auto& x : w) x = float(n(rng));
    const Mat s = stft_spectrogram(w);
    CHECK(s.rows() == 13);
    for (int frame : {0, 5, 12}) {
        const auto ref = brute_force_frame(w, frame);
        for (int k = 0; k < kBins; ++k) CHECK(s(frame, k) == doctest::Approx(ref[k]).epsilon(1e-9));
    }
}

TEST_CASE("magnitudes scale linearly with the waveform") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0, 1);
    std::vector<float> w(3200), w2(3200);
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = float(n(rng));
        w2[i] = 2.0f * w[i];
    }
    const Mat a = stft_spectrogram(w);
    const Mat b = stft_spectrogram(w2);
    CHECK((b - 2.0 * a).cwiseAbs().maxCoeff() <= 1e-9 * a.maxCoeff());
}

TEST_CASE("alignment to visual frames") {
    std::mt19937_64 rng(5);
    const Mat spec40 = testing::random_mat(40, kBins, rng);
    const Mat rows = align_audio_frames(spec40, 10);
    CHECK(rows.rows() == 10);
    CHECK(rows.cols() == 1284);
    for (int t = 0; t < 10; ++t)
        for (int g = 0; g < 4; ++g) CHECK(rows.block(t, g * kBins, 1, kBins) == spec40.row(4 * t + g));

    const Mat spec38 = spec40.topRows(38);
    const Mat padded = align_audio_frames(spec38, 10);
    CHECK(padded.rows() == 10);
    CHECK(padded.block(9, 0, 1, 2 * kBins) == align_audio_frames(spec40, 10).block(9, 0, 1, 2 * kBins));
    CHECK(padded.block(9, 2 * kBins, 1, 2 * kBins).isZero(0.0));

    const Mat spec44 = testing::random_mat(44, kBins, rng);
    CHECK(align_audio_frames(spec44, 10).rows() == 10);
    CHECK_THROWS_AS(align_audio_frames(testing::random_mat(35, kBins, rng), 10), DataError);
    CHECK_THROWS_AS(align_audio_frames(testing::random_mat(45, kBins, rng), 10), DataError);
}

TEST_CASE("audio features: one row per visual frame, optional normalization") {
    const auto w = tone(500.0, 12 * 640);
    FeatureConfig raw{false, false};
    const Mat a = audio_features(w, 12, raw);
    CHECK(a.rows() == 12);
    CHECK(a.cols() == kAlignedWidth);
    CHECK(a.minCoeff() >= 0.0);

    FeatureConfig norm{false, true};
    const Mat b = audio_features(w, 12, norm);
    CHECK(std::abs(b.mean()) <= 1e-9);
    const double var = (b.array() - b.mean()).square().mean();
    CHECK(var == doctest::Approx(1.0).epsilon(1e-9));

    FeatureConfig log{true, false};
    const Mat c = audio_features(w, 12, log);
    CHECK(c.allFinite());
    CHECK(c.maxCoeff() < a.maxCoeff());
}

TEST_CASE("video features copy the raw rows") {
    corpus::AVSample s;
    s.frames = 2;
    s.video_dim = 3;
    s.video_rows = {1, 2, 3, 4, 5, 6};
    const Mat v = video_features(s);
    CHECK(v.rows() == 2);
    CHECK(v(1, 0) == 4.0);
    CHECK(v(0, 2) == 3.0);
}

TEST_CASE("front-ends: zero input, identity block, shape errors") {
    for (int in_dim : {kAlignedWidth, 6}) {
        const int d = 4;
        nn::Graph g;
        auto fe = in_dim == kAlignedWidth ? audio_frontend : video_frontend;
        const auto zero = fe(g, g.constant(Mat::Zero(5, in_dim)), g.constant(Mat::Ones(in_dim, d)),
                             g.constant(Mat::Zero(1, d)));
        CHECK(g.value(zero).isZero(0.0));

        std::mt19937_64 rng(6);
        const Mat x = testing::random_mat(5, in_dim, rng);
        Mat eye = Mat::Zero(in_dim, d);
        eye.topRows(d).setIdentity();
        const auto y = fe(g, g.constant(x), g.constant(eye), g.constant(Mat::Zero(1, d)));
        CHECK(g.value(y) == x.leftCols(d));

        CHECK_THROWS_AS(fe(g, g.constant(x), g.constant(Mat::Zero(in_dim + 1, d)), g.constant(Mat::Zero(1, d))),
                        ConfigError);
        CHECK_THROWS_AS(fe(g, g.constant(x), g.constant(eye), g.constant(Mat::Zero(1, d + 1))), ConfigError);
    }
}

TEST_CASE("front-end gradients match finite differences") {
    std::mt19937_64 rng(7);
    for (int in_dim : {kAlignedWidth, 6}) {
        auto fe = in_dim == kAlignedWidth ? audio_frontend : video_frontend;
        nn::ParamSet p;
        p.add("w", testing::random_mat(in_dim, 4, rng, 0.1));
        p.add("b", testing::random_mat(1, 4, rng, 0.1));
        const Mat x = testing::random_mat(3, in_dim, rng);
        auto grads = p.zeros_like();
        auto loss = [&](nn::ParamSet* gs) {
            nn::Graph g;
            const auto y = fe(g, g.constant(x), g.param(p, 0, gs), g.param(p, 1, gs));
            const auto s = nn::sum(g, y);
            if (gs) g.backward(s);
            return g.value(s)(0, 0);
        };
        loss(&grads);
        for (int i = 0; i < 2; ++i)
            for (Eigen::Index k = 0; k < p[i].size(); k += std::max<Eigen::Index>(1, p[i].size() / 40)) {
                const double fd = testing::central_difference(p[i], k, [&] { return loss(nullptr); });
                CHECK(testing::relative_error(grads[i].data()[k], fd) <= 1e-4);
            }
    }
}

}  // TEST_SUITE
