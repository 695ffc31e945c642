// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "avdf/corpus.hpp"
#include "avdf/nn.hpp"

namespace avdf::features {

using nn::Mat;

inline constexpr int kWindow = 640;  // 40 ms at 16 kHz
inline constexpr int kHop = 160;     // 10 ms
inline constexpr int kBins = kWindow / 2 + 1;
inline constexpr int kGroup = 4;  // acoustic frames per visual frame
inline constexpr int kAlignedWidth = kGroup * kBins;

struct FeatureConfig {
    bool log_spec = false;
    // Per-utterance mean/std normalisation of the spectrogram.
    bool normalize = true;
};

// T_a x 321 magnitude STFT, periodic Hann window, T_a = ceil(len / 160).
// Frames running past the end are zero-padded.
Mat stft_spectrogram(std::span<const float> waveform);

// Pads (with zero frames) or truncates to 4*frames rows, then concatenates
// each group of four rows: result is frames x 1284.
Mat align_audio_frames(const Mat& spectrogram, int frames);

// Spectrogram -> optional log -> optional normalisation -> aligned rows.
Mat audio_features(std::span<const float> waveform, int frames, const FeatureConfig& cfg);
Mat video_features(const corpus::AVSample& sample);

// Row-wise affine maps into the model width. `weight` is in_dim x d_model,
// `bias` 1 x d_model. The stride-4 convolution over acoustic frames is the
// same map applied to each 1284-wide group.
nn::Var audio_frontend(nn::Graph& g, nn::Var aligned, nn::Var weight, nn::Var bias);
nn::Var video_frontend(nn::Graph& g, nn::Var rows, nn::Var weight, nn::Var bias);

}  // namespace avdf::features
