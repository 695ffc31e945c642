// SPDX-License-Identifier: Apache-2.0
#include "avdf/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "avdf/errors.hpp"

namespace avdf::metrics {

namespace {

double f1_from(long tp, long fp, long fn) {
    const long denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * double(tp) / double(denom);
}

void check_binary_input(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
    bool pos = false, neg = false;
    for (int l : labels) (l ? pos : neg) = true;
    if (!pos || !neg) throw DataError("metric undefined: only one class present");
}

// Groups of tied scores in descending order: {positives, negatives} per group.
std::vector<std::array<long, 2>> tie_groups_descending(std::span<const double> scores, std::span<const int> labels) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
    std::vector<std::array<long, 2>> groups;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i == 0 || scores[order[i]] != scores[order[i - 1]]) groups.push_back({0, 0});
        ++groups.back()[labels[order[i]] ? 0 : 1];
    }
    return groups;
}

template <class T>
std::optional<double> try_metric(T&& fn) {
    try {
        return fn();
    } catch (const DataError&) {
        return std::nullopt;
    }
}

}  // namespace

std::vector<int> binarize(std::span<const double> scores, double threshold) {
    std::vector<int> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= threshold ? 1 : 0;
    return out;
}

double Confusion::f1() const { return f1_from(tp, fp, fn); }

double Confusion::accuracy() const {
    const long n = tp + fp + fn + tn;
    return n == 0 ? 0.0 : double(tp + tn) / double(n);
}

Confusion confusion(std::span<const int> preds, std::span<const int> labels) {
    if (preds.size() != labels.size()) throw DataError("predictions and labels differ in length");
    Confusion c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] && labels[i]) ++c.tp;
        else if (preds[i]) ++c.fp;
        else if (labels[i]) ++c.fn;
        else ++c.tn;
    }
    return c;
}

F1Suite f1_suite(std::span<const std::array<int, 2>> preds, std::span<const corpus::DualLabel> labels) {
    if (preds.empty()) throw DataError("f1_suite needs at least one sample");
    if (preds.size() != labels.size()) throw DataError("predictions and labels differ in length");
    std::array<Confusion, 2> slot;
    for (int m = 0; m < 2; ++m) {
        std::vector<int> p(preds.size()), y(preds.size());
        for (std::size_t i = 0; i < preds.size(); ++i) {
            p[i] = preds[i][m];
            y[i] = m == 0 ? labels[i].audio_fake : labels[i].video_fake;
        }
        slot[m] = confusion(p, y);
    }
    F1Suite s;
    s.af1 = slot[0].f1();
    s.vf1 = slot[1].f1();
    s.of1 = f1_from(slot[0].tp + slot[1].tp, slot[0].fp + slot[1].fp, slot[0].fn + slot[1].fn);
    s.cf1 = 0.5 * (s.af1 + s.vf1);
    const long support = slot[0].positives() + slot[1].positives();
    s.wf1 = support == 0 ? 0.0 : (slot[0].positives() * s.af1 + slot[1].positives() * s.vf1) / double(support);
    return s;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    check_binary_input(scores, labels);
    // Walk from the lowest score up, counting negatives already passed.
    auto groups = tie_groups_descending(scores, labels);
    std::reverse(groups.begin(), groups.end());
    long neg_below = 0, pos_total = 0;
    long long twice_wins = 0;
    for (const auto& [pos, neg] : groups) {
        twice_wins += 2LL * pos * neg_below + 1LL * pos * neg;
        neg_below += neg;
        pos_total += pos;
    }
    return double(twice_wins) / (2.0 * double(pos_total) * double(neg_below));
}

double eer(std::span<const double> scores, std::span<const int> labels) {
    check_binary_input(scores, labels);
    const auto groups = tie_groups_descending(scores, labels);
    long pos_total = 0, neg_total = 0;
    for (const auto& [p, n] : groups) {
        pos_total += p;
        neg_total += n;
    }
    // Operating point k flags the top k tie groups as positive (k = 0 is a
    // threshold above every score). FPR rises and FNR falls with k.
    std::vector<double> fpr{0.0}, fnr{1.0};
    long tp = 0, fp = 0;
    for (const auto& [p, n] : groups) {
        tp += p;
        fp += n;
        fpr.push_back(double(fp) / double(neg_total));
        fnr.push_back(double(pos_total - tp) / double(pos_total));
    }
    for (std::size_t k = 0; k < fpr.size(); ++k) {
        const double diff = fpr[k] - fnr[k];
        if (diff == 0.0) return fpr[k];
        if (diff > 0.0) {
            const double prev = fpr[k - 1] - fnr[k - 1];
            const double lambda = -prev / (diff - prev);
            return fpr[k - 1] + lambda * (fpr[k] - fpr[k - 1]);
        }
    }
    return fpr.back();
}

nlohmann::json EvalReport::to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"report_version", kReportVersion},
            {"scenario", scenario},
            {"n_samples", n_samples},
            {"AF1", opt(af1)},
            {"VF1", opt(vf1)},
            {"OF1", opt(of1)},
            {"CF1", opt(cf1)},
            {"WF1", opt(wf1)},
            {"AACC", opt(aacc)},
            {"VACC", opt(vacc)},
            {"AUC_audio", opt(auc_audio)},
            {"AUC_video", opt(auc_video)},
            {"AUC_fused", opt(auc_fused)},
            {"EER_audio", opt(eer_audio)},
            {"EER_video", opt(eer_video)},
            {"count_confusion", count_confusion}};
}

EvalReport build_report(std::span<const ScoredSample> scored, model::PresenceMask scenario) {
    scenario.validate();
    if (scored.empty()) throw DataError("cannot evaluate an empty split");
    EvalReport r;
    r.scenario = scenario.name();
    r.n_samples = static_cast<int>(scored.size());

    const auto n = scored.size();
    std::vector<double> sa(n), sv(n), sf(n);
    std::vector<int> ya(n), yv(n), yany(n);
    for (std::size_t i = 0; i < n; ++i) {
        sa[i] = scored[i].p_audio_fake;
        sv[i] = scored[i].p_video_fake;
        sf[i] = 1.0 - scored[i].fused_real_score;
        ya[i] = scored[i].label.audio_fake;
        yv[i] = scored[i].label.video_fake;
        yany[i] = scored[i].label.fake_count() > 0;
        const int truth = scored[i].label.fake_count();
        const int pred = std::clamp(scored[i].predicted_count, 0, 2);
        ++r.count_confusion[truth][pred];
    }
    const auto pa = binarize(sa);
    const auto pv = binarize(sv);
    const auto ca = confusion(pa, ya);
    const auto cv = confusion(pv, yv);

    if (scenario.audio) {
        r.af1 = ca.f1();
        r.aacc = ca.accuracy();
        r.auc_audio = try_metric([&] { return roc_auc(sa, ya); });
        r.eer_audio = try_metric([&] { return eer(sa, ya); });
    }
    if (scenario.video) {
        r.vf1 = cv.f1();
        r.vacc = cv.accuracy();
        r.auc_video = try_metric([&] { return roc_auc(sv, yv); });
        r.eer_video = try_metric([&] { return eer(sv, yv); });
    }
    if (scenario.audio && scenario.video) {
        std::vector<std::array<int, 2>> preds(n);
        std::vector<corpus::DualLabel> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            preds[i] = {pa[i], pv[i]};
            labels[i] = scored[i].label;
        }
        const auto s = f1_suite(preds, labels);
        r.of1 = s.of1;
        r.cf1 = s.cf1;
        r.wf1 = s.wf1;
        r.auc_fused = try_metric([&] { return roc_auc(sf, yany); });
    } else {
        // One slot left: micro, per-label and weighted F1 all reduce to it.
        r.of1 = r.cf1 = r.wf1 = scenario.audio ? r.af1 : r.vf1;
    }
    return r;
}

std::vector<ScoredSample> score_examples(const model::ModelConfig& cfg, const nn::ParamSet& params,
                                         std::span<const data::Example> examples, model::PresenceMask scenario) {
    std::vector<ScoredSample> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) {
        const auto det = model::detect(cfg, params, ex.inputs, scenario);
        ScoredSample s;
        s.sample_id = ex.id;
        s.p_audio_fake = det.p_audio_fake;
        s.p_video_fake = det.p_video_fake;
        s.fused_real_score = det.fused_real_score;
        s.predicted_count = static_cast<int>(
            std::max_element(det.count_probs.begin(), det.count_probs.end()) - det.count_probs.begin());
        s.label = ex.label;
        s.scenario = scenario;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<EvalReport> evaluate_scenarios(const model::ModelConfig& cfg, const nn::ParamSet& params,
                                           std::span<const data::Example> examples,
                                           std::span<const model::PresenceMask> scenarios) {
    if (examples.empty()) throw DataError("evaluation split is empty");
    static const std::array<model::PresenceMask, 3> kAll{
        model::PresenceMask{true, true}, model::PresenceMask{true, false}, model::PresenceMask{false, true}};
    if (scenarios.empty()) scenarios = kAll;
    std::vector<EvalReport> reports;
    for (const auto& sc : scenarios) reports.push_back(build_report(score_examples(cfg, params, examples, sc), sc));
    return reports;
}

}  // namespace avdf::metrics
