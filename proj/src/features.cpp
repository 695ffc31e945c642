// SPDX-License-Identifier: Apache-2.0
#include "avdf/features.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include <unsupported/Eigen/FFT>

#include "avdf/errors.hpp"

namespace avdf::features {

namespace {

const std::vector<double>& hann_window() {
    static const std::vector<double> w = [] {
        std::vector<double> out(kWindow);
        for (int n = 0; n < kWindow; ++n) out[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / kWindow);
        return out;
    }();
    return w;
}

nn::Var frontend(nn::Graph& g, nn::Var x, nn::Var weight, nn::Var bias, const char* what) {
    const auto& xv = g.value(x);
    const auto& wv = g.value(weight);
    if (xv.cols() != wv.rows() || g.value(bias).rows() != 1 || g.value(bias).cols() != wv.cols())
        throw ConfigError(std::string(what) + " front-end shape mismatch: input width " + std::to_string(xv.cols()) +
                          ", weight " + std::to_string(wv.rows()) + "x" + std::to_string(wv.cols()));
    return nn::linear(g, x, weight, bias);
}

}  // namespace

Mat stft_spectrogram(std::span<const float> waveform) {
    if (waveform.size() < static_cast<std::size_t>(kWindow))
        throw DataError("waveform shorter than one 640-sample window");
    const auto len = static_cast<long>(waveform.size());
    const long frames = (len + kHop - 1) / kHop;
    const auto& window = hann_window();

    Eigen::FFT<double> fft;
    std::vector<double> buf(kWindow);
    std::vector<std::complex<double>> spec;
    Mat out(frames, kBins);
    for (long t = 0; t < frames; ++t) {
        const long start = t * kHop;
        for (int n = 0; n < kWindow; ++n) {
            const long i = start + n;
            buf[n] = i < len ? double(waveform[i]) * window[n] : 0.0;
        }
        fft.fwd(spec, buf);
        for (int k = 0; k < kBins; ++k) out(t, k) = std::abs(spec[k]);
    }
    return out;
}

Mat align_audio_frames(const Mat& spectrogram, int frames) {
    if (frames < 1) throw DataError("need at least one visual frame");
    if (spectrogram.cols() != kBins) throw DataError("spectrogram must have 321 bins");
    const long target = long(kGroup) * frames;
    if (std::abs(spectrogram.rows() - target) > kGroup)
        throw DataError("acoustic/visual frame mismatch: " + std::to_string(spectrogram.rows()) +
                        " acoustic frames for " + std::to_string(frames) + " visual frames");
    Mat padded = Mat::Zero(target, kBins);
    const long keep = std::min<long>(target, spectrogram.rows());
    padded.topRows(keep) = spectrogram.topRows(keep);
    // Row-major storage makes the grouped view a plain reshape.
    return Eigen::Map<const Mat>(padded.data(), frames, kAlignedWidth);
}

Mat audio_features(std::span<const float> waveform, int frames, const FeatureConfig& cfg) {
    Mat spec = stft_spectrogram(waveform);
    if (cfg.log_spec) spec = (spec.array() + 1e-6).log().matrix();
    if (cfg.normalize) {
        const double mean = spec.mean();
        const double var = (spec.array() - mean).square().mean();
        spec = ((spec.array() - mean) / std::sqrt(var + 1e-12)).matrix();
    }
    return align_audio_frames(spec, frames);
}

Mat video_features(const corpus::AVSample& sample) {
    Mat rows(sample.frames, sample.video_dim);
    for (int t = 0; t < sample.frames; ++t)
        for (int j = 0; j < sample.video_dim; ++j)
            rows(t, j) = sample.video_rows[static_cast<std::size_t>(t) * sample.video_dim + j];
    return rows;
}

nn::Var audio_frontend(nn::Graph& g, nn::Var aligned, nn::Var weight, nn::Var bias) {
    return frontend(g, aligned, weight, bias, "audio");
}

nn::Var video_frontend(nn::Graph& g, nn::Var rows, nn::Var weight, nn::Var bias) {
    return frontend(g, rows, weight, bias, "video");
}

}  // namespace avdf::features
