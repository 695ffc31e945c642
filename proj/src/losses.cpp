// SPDX-License-Identifier: Apache-2.0
#include "avdf/losses.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "avdf/errors.hpp"

namespace avdf::losses {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

Mat log_softmax_rows(const Mat& x) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double m = x.row(r).maxCoeff();
        const double lse = m + std::log((x.row(r).array() - m).exp().sum());
        out.row(r) = x.row(r).array() - lse;
    }
    return out;
}

nn::Var loss_node(nn::Graph& g, nn::Var input, ScalarGrad r) {
    return g.push(Mat::Constant(1, 1, r.loss), {input}, [input, grad = std::move(r.grad)](nn::Graph& g, int self) {
        g.accumulate_expr(input, g.grad(self)(0, 0) * grad);
    });
}

}  // namespace

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double log_sum_exp(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

int ctc_min_frames(std::span<const int> target) {
    int n = static_cast<int>(target.size());
    for (std::size_t i = 1; i < target.size(); ++i)
        if (target[i] == target[i - 1]) ++n;
    return n;
}

ScalarGrad ctc_loss(const Mat& logits, std::span<const int> target, int blank) {
    const int frames = static_cast<int>(logits.rows());
    if (frames < 1) throw DataError("CTC needs at least one frame");
    if (!logits.allFinite()) throw NumericError("non-finite logits passed to CTC");
    if (blank < 0 || blank >= logits.cols()) throw DataError("CTC blank index out of range");
    for (int k : target)
        if (k < 0 || k >= logits.cols() || k == blank) throw DataError("CTC target id out of range");
    if (ctc_min_frames(target) > frames)
        throw DataError("CTC target of length " + std::to_string(target.size()) + " cannot be emitted in " +
                        std::to_string(frames) + " frames");

    // Blank-extended label sequence: b l1 b l2 ... lL b
    const int states = 2 * static_cast<int>(target.size()) + 1;
    std::vector<int> ext(states, blank);
    for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
    auto can_skip = [&](int s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

    const Mat logp = log_softmax_rows(logits);
    Mat alpha = Mat::Constant(frames, states, kNegInf);
    alpha(0, 0) = logp(0, ext[0]);
    if (states > 1) alpha(0, 1) = logp(0, ext[1]);
    for (int t = 1; t < frames; ++t)
        for (int s = 0; s < states; ++s) {
            double a = alpha(t - 1, s);
            if (s >= 1) a = log_sum_exp(a, alpha(t - 1, s - 1));
            if (can_skip(s)) a = log_sum_exp(a, alpha(t - 1, s - 2));
            if (a != kNegInf) alpha(t, s) = a + logp(t, ext[s]);
        }

    double log_p = alpha(frames - 1, states - 1);
    if (states > 1) log_p = log_sum_exp(log_p, alpha(frames - 1, states - 2));
    if (log_p == kNegInf) throw DataError("CTC target has zero probability under the alignment lattice");

    // beta(t, s): log-probability of emitting the rest after being in s at t.
    Mat beta = Mat::Constant(frames, states, kNegInf);
    beta(frames - 1, states - 1) = 0.0;
    if (states > 1) beta(frames - 1, states - 2) = 0.0;
    for (int t = frames - 2; t >= 0; --t)
        for (int s = 0; s < states; ++s) {
            double b = beta(t + 1, s) + logp(t + 1, ext[s]);
            if (s + 1 < states) b = log_sum_exp(b, beta(t + 1, s + 1) + logp(t + 1, ext[s + 1]));
            if (s + 2 < states && can_skip(s + 2)) b = log_sum_exp(b, beta(t + 1, s + 2) + logp(t + 1, ext[s + 2]));
            beta(t, s) = b;
        }

    ScalarGrad out;
    out.loss = -log_p;
    out.grad = logp.array().exp().matrix();
    for (int t = 0; t < frames; ++t)
        for (int s = 0; s < states; ++s) {
            const double ab = alpha(t, s) + beta(t, s);
            if (ab != kNegInf) out.grad(t, ext[s]) -= std::exp(ab - log_p);
        }
    return out;
}

ScalarGrad dual_bce(const Mat& logits, const corpus::DualLabel& label, LossMask mask) {
    if (logits.size() != 2) throw DataError("dual_bce expects two modality logits");
    ScalarGrad out{0.0, Mat::Zero(logits.rows(), logits.cols())};
    const int active = mask.active();
    if (active == 0) return out;
    const bool on[2] = {mask.audio, mask.video};
    const double y[2] = {label.audio_fake ? 1.0 : 0.0, label.video_fake ? 1.0 : 0.0};
    for (int m = 0; m < 2; ++m) {
        if (!on[m]) continue;
        const double z = logits.data()[m];
        out.loss += (softplus(z) - y[m] * z) / active;
        out.grad.data()[m] = (sigmoid(z) - y[m]) / active;
    }
    return out;
}

ScalarGrad count_ce(const Mat& logits, const corpus::DualLabel& label) {
    if (logits.size() != 3) throw DataError("count_ce expects three count logits");
    const Mat row = Eigen::Map<const Mat>(logits.data(), 1, 3);
    const Mat logp = log_softmax_rows(row);
    const int p = label.fake_count();
    ScalarGrad out;
    out.loss = -logp(0, p);
    Mat g = logp.array().exp().matrix();
    g(0, p) -= 1.0;
    out.grad = Eigen::Map<const Mat>(g.data(), logits.rows(), logits.cols());
    return out;
}

LossBreakdown total_detection_loss(double bce, double ce, double ce_weight) {
    LossBreakdown b;
    b.bce = bce;
    b.ce = ce;
    b.total = bce + ce_weight * ce;
    return b;
}

nn::Var ctc_loss(nn::Graph& g, nn::Var logits, std::span<const int> target, int blank) {
    return loss_node(g, logits, ctc_loss(g.value(logits), target, blank));
}

nn::Var dual_bce(nn::Graph& g, nn::Var logits, const corpus::DualLabel& label, LossMask mask) {
    return loss_node(g, logits, dual_bce(g.value(logits), label, mask));
}

nn::Var count_ce(nn::Graph& g, nn::Var logits, const corpus::DualLabel& label) {
    return loss_node(g, logits, count_ce(g.value(logits), label));
}

}  // namespace avdf::losses
