// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <span>

#include "avdf/corpus.hpp"
#include "avdf/nn.hpp"

namespace avdf::losses {

using nn::Mat;

// Which modality label slots contribute to the BCE term.
struct LossMask {
    bool audio = true;
    bool video = true;
    int active() const { return int(audio) + int(video); }
};

struct LossBreakdown {
    double ctc = 0.0;
    double bce = 0.0;
    double ce = 0.0;
    double total = 0.0;
};

struct ScalarGrad {
    double loss = 0.0;
    Mat grad;  // same shape as the logits
};

// -log P(target | logits) for one utterance. `logits` is T x (C+1) with the
// blank at column `blank`. Log-space forward/backward recursions.
ScalarGrad ctc_loss(const Mat& logits, std::span<const int> target, int blank);
// Minimum frame count that can emit `target` (length plus repeated pairs).
int ctc_min_frames(std::span<const int> target);

// Mean over the active slots of BCE(sigmoid(z_m), y_m); 0 when none active.
ScalarGrad dual_bce(const Mat& modality_logits, const corpus::DualLabel& label, LossMask mask);
// Cross-entropy of softmax(count_logits) against the fake count.
ScalarGrad count_ce(const Mat& count_logits, const corpus::DualLabel& label);

LossBreakdown total_detection_loss(double bce, double ce, double ce_weight = 1.0);

// Graph-node versions; the node value is the 1x1 loss.
nn::Var ctc_loss(nn::Graph& g, nn::Var logits, std::span<const int> target, int blank);
nn::Var dual_bce(nn::Graph& g, nn::Var modality_logits, const corpus::DualLabel& label, LossMask mask);
nn::Var count_ce(nn::Graph& g, nn::Var count_logits, const corpus::DualLabel& label);

// Numerically stable helpers shared with inference code.
double sigmoid(double z);
double log_sum_exp(double a, double b);

}  // namespace avdf::losses
