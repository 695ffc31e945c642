// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avdf/corpus.hpp"
#include "avdf/dataset.hpp"
#include "avdf/model.hpp"

namespace avdf::metrics {

inline constexpr int kReportVersion = 1;

struct ScoredSample {
    std::string sample_id;
    double p_audio_fake = 0.0;
    double p_video_fake = 0.0;
    double fused_real_score = 0.0;
    int predicted_count = 0;
    corpus::DualLabel label;
    model::PresenceMask scenario;
};

// 1 iff score >= threshold.
std::vector<int> binarize(std::span<const double> scores, double threshold = 0.5);

struct F1Suite {
    double af1 = 0, vf1 = 0, of1 = 0, cf1 = 0, wf1 = 0;
};

// Two binary slots (audio, video), positive class = fake. OF1 pools both
// slots' counts, CF1 averages the slot F1s, WF1 weights them by positives.
// A zero denominator gives F1 = 0.
F1Suite f1_suite(std::span<const std::array<int, 2>> preds, std::span<const corpus::DualLabel> labels);

struct Confusion {
    long tp = 0, fp = 0, fn = 0, tn = 0;
    double f1() const;
    double accuracy() const;
    long positives() const { return tp + fn; }
};
Confusion confusion(std::span<const int> preds, std::span<const int> labels);

// Mann-Whitney AUC with half credit for ties. Throws DataError when only one
// class is present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Equal error rate from the threshold sweep at score midpoints, linearly
// interpolated where FPR and FNR cross. Throws on single-class input.
double eer(std::span<const double> scores, std::span<const int> labels);

struct EvalReport {
    std::string scenario;
    int n_samples = 0;
    std::optional<double> af1, vf1, of1, cf1, wf1;
    std::optional<double> aacc, vacc;
    std::optional<double> auc_audio, auc_video, auc_fused;
    std::optional<double> eer_audio, eer_video;
    std::array<std::array<int, 3>, 3> count_confusion{};  // [true][predicted]

    nlohmann::json to_json() const;
};

// Metrics for one scenario. Slots for absent modalities are left empty and
// the fused AUC is only reported with both modalities.
EvalReport build_report(std::span<const ScoredSample> scored, model::PresenceMask scenario);

// Runs the detector over `examples` under one presence scenario.
std::vector<ScoredSample> score_examples(const model::ModelConfig& cfg, const nn::ParamSet& params,
                                         std::span<const data::Example> examples, model::PresenceMask scenario);

// One report per scenario; defaults to audio-visual, audio-only, video-only.
std::vector<EvalReport> evaluate_scenarios(const model::ModelConfig& cfg, const nn::ParamSet& params,
                                           std::span<const data::Example> examples,
                                           std::span<const model::PresenceMask> scenarios = {});

}  // namespace avdf::metrics
