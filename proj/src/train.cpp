// SPDX-License-Identifier: Apache-2.0
#include "avdf/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include "avdf/errors.hpp"

namespace avdf::train {

namespace {

// RNG stream tags.
enum : std::uint64_t {
    kInitSeedAvsr = 1,
    kInitSeedDetect = 2,
    kEpochOrder = 0x0de7,
    kModalityDrop = 0xd20b,
    kLayerDropout = 0xd20c,
};

void round_to_float(nn::Mat& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

void check_finite(const losses::LossBreakdown& b) {
    if (!std::isfinite(b.total)) throw NumericError("loss became non-finite");
}

}  // namespace

std::string to_string(Stage s) { return s == Stage::kAvsr ? "avsr" : "detect"; }

Stage stage_from_string(const std::string& s) {
    if (s == "avsr") return Stage::kAvsr;
    if (s == "detect") return Stage::kDetect;
    throw ConfigError("stage must be avsr or detect (got '" + s + "')");
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
    TrainConfig c;
    c.batch_size = 12;
    c.learning_rate = 1e-5;
    return c;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
    if (modality_dropout < 0.0 || modality_dropout > 0.5) throw ConfigError("modality_dropout must be in [0, 0.5]");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (val_percent < 0 || val_percent >= 100) throw ConfigError("val_percent must be in [0, 100)");
    if (ce_weight < 0 || ctc_aux_weight < 0) throw ConfigError("loss weights must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"batch_size", c.batch_size},
                       {"learning_rate", c.learning_rate},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"adam_eps", c.adam_eps},
                       {"max_steps", c.max_steps},
                       {"modality_dropout", c.modality_dropout},
                       {"seed", c.seed},
                       {"grad_clip", c.grad_clip},
                       {"eval_every", c.eval_every},
                       {"patience", c.patience},
                       {"early_stop", c.early_stop},
                       {"ce_weight", c.ce_weight},
                       {"ctc_aux_weight", c.ctc_aux_weight},
                       {"freeze_backbone", c.freeze_backbone},
                       {"val_percent", c.val_percent},
                       {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.batch_size = j.value("batch_size", d.batch_size);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
    c.max_steps = j.value("max_steps", d.max_steps);
    c.modality_dropout = j.value("modality_dropout", d.modality_dropout);
    c.seed = j.value("seed", d.seed);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.eval_every = j.value("eval_every", d.eval_every);
    c.patience = j.value("patience", d.patience);
    c.early_stop = j.value("early_stop", d.early_stop);
    c.ce_weight = j.value("ce_weight", d.ce_weight);
    c.ctc_aux_weight = j.value("ctc_aux_weight", d.ctc_aux_weight);
    c.freeze_backbone = j.value("freeze_backbone", d.freeze_backbone);
    c.val_percent = j.value("val_percent", d.val_percent);
    c.threads = j.value("threads", d.threads);
}

// ---------------------------------------------------------------------------

losses::LossBreakdown avsr_loss(const model::ModelConfig& cfg, const ParamSet& params, const model::ModelInputs& in,
                                std::span<const int> transcript, ParamSet* grads, Rng* dropout_rng,
                                double grad_scale) {
    nn::Graph g;
    model::Network net(g, cfg, params, grads, dropout_rng);
    const auto logits = net.forward_avsr(in);
    const auto loss = losses::ctc_loss(g, logits, transcript, cfg.blank_id());
    losses::LossBreakdown b;
    b.ctc = g.value(loss)(0, 0);
    b.total = b.ctc;
    check_finite(b);
    if (grads) g.backward(loss, grad_scale);
    return b;
}

losses::LossBreakdown detection_loss(const model::ModelConfig& cfg, const ParamSet& params,
                                     const model::ModelInputs& in, const corpus::DualLabel& label,
                                     model::PresenceMask presence, losses::LossMask mask,
                                     const DetectionLossOptions& opts, ParamSet* grads, Rng* dropout_rng,
                                     double grad_scale) {
    nn::Graph g;
    model::Network net(g, cfg, params, grads, dropout_rng);
    const auto out = net.forward_detect(in, presence);
    const auto bce = losses::dual_bce(g, out.modality_logits, label, mask);
    const auto ce = losses::count_ce(g, out.count_logits, label);
    nn::Var total = nn::add(g, bce, nn::scale(g, ce, opts.ce_weight));
    auto b = losses::total_detection_loss(g.value(bce)(0, 0), g.value(ce)(0, 0), opts.ce_weight);
    if (opts.ctc_aux_weight > 0 && !opts.transcript.empty()) {
        const auto ctc = losses::ctc_loss(g, net.avsr_head(out.decoded), opts.transcript, cfg.blank_id());
        b.ctc = g.value(ctc)(0, 0);
        total = nn::add(g, total, nn::scale(g, ctc, opts.ctc_aux_weight));
        b.total += opts.ctc_aux_weight * b.ctc;
    }
    check_finite(b);
    if (grads) g.backward(total, grad_scale);
    return b;
}

// ---------------------------------------------------------------------------

DropDecision draw_modality_dropout(double rho, Rng& rng) {
    if (rho < 0.0 || rho > 0.5) throw ConfigError("modality dropout probability must be in [0, 0.5]");
    DropDecision d;
    if (rho == 0.0) return d;
    bool drop_audio, drop_video;
    do {
        drop_audio = uniform01(rng) < rho;
        drop_video = uniform01(rng) < rho;
    } while (drop_audio && drop_video);
    d.presence = {!drop_audio, !drop_video};
    d.loss_mask = {!drop_audio, !drop_video};
    return d;
}

std::vector<DropDecision> apply_modality_dropout(std::span<model::ModelInputs> batch, double rho, Rng& rng) {
    std::vector<DropDecision> out;
    out.reserve(batch.size());
    for (auto& in : batch) {
        auto d = draw_modality_dropout(rho, rng);
        if (!d.presence.audio) in.audio.setZero();
        if (!d.presence.video) in.video.setZero();
        out.push_back(d);
    }
    return out;
}

// ---------------------------------------------------------------------------

Adam::Adam(const ParamSet& like, double beta1, double beta2, double eps)
    : m(like.zeros_like()), v(like.zeros_like()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParamSet& params, const ParamSet& grads, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1_, double(t));
    const double c2 = 1.0 - std::pow(beta2_, double(t));
    for (int i = 0; i < params.size(); ++i) {
        auto& mi = m[i];
        auto& vi = v[i];
        const auto& g = grads[i];
        mi = beta1_ * mi + (1.0 - beta1_) * g;
        vi = beta2_ * vi + (1.0 - beta2_) * g.cwiseProduct(g);
        round_to_float(mi);
        round_to_float(vi);
        params[i].array() -= lr * (mi.array() / c1) / ((vi.array() / c2).sqrt() + eps_);
        round_to_float(params[i]);
    }
}

double clip_global_norm(ParamSet& grads, double max_norm) {
    const double norm = std::sqrt(grads.squared_norm());
    if (max_norm > 0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (int i = 0; i < grads.size(); ++i) grads[i] *= s;
    }
    return norm;
}

// ---------------------------------------------------------------------------

void JsonlLog::write(const nlohmann::json& j) {
    if (out_) *out_ << j.dump() << '\n' << std::flush;
}

Trainer::Trainer(Stage stage, model::ModelConfig model_cfg, TrainConfig train_cfg, ParamSet params,
                 const data::Splits& data, JsonlLog log)
    : stage_(stage), model_(std::move(model_cfg)), cfg_(std::move(train_cfg)), params_(std::move(params)),
      log_(log) {
    model_.validate();
    cfg_.validate();
    if (!params_.same_layout(model::init_params(model_, 0)))
        throw ConfigError("parameter set does not match the model configuration");
    adam_ = Adam(params_, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);

    auto keep = [&](const data::Example& e) {
        return stage_ == Stage::kDetect || (!e.label.audio_fake && !e.label.video_fake);
    };
    for (const auto& e : data.train)
        if (keep(e)) train_.push_back(&e);
    for (const auto& e : data.val)
        if (keep(e)) val_.push_back(&e);
    for (const auto& e : data.test) test_.push_back(&e);

    if (train_.empty())
        throw DataError(stage_ == Stage::kAvsr ? "no real (RR) samples available for pretraining"
                                               : "training split is empty");
    if (stage_ == Stage::kDetect) {
        std::array<bool, 4> seen{};
        for (const auto* e : train_) seen[e->label.category()] = true;
        if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }))
            throw DataError("detection finetuning needs all four label classes in the training split");
    }
}

void Trainer::restore(const Checkpoint& ckpt) {
    if (ckpt.stage != stage_) throw ConfigError("checkpoint stage does not match the trainer");
    if (!ckpt.params.same_layout(params_)) throw ConfigError("checkpoint parameters do not match the model");
    params_ = ckpt.params;
    adam_ = ckpt.adam;
    step_ = ckpt.step;
    early_ = ckpt.early;
    best_ = ckpt.best_params;
}

std::vector<std::size_t> Trainer::batch_indices(long step) const {
    const std::size_t n = train_.size();
    std::vector<std::size_t> out;
    out.reserve(cfg_.batch_size);
    std::vector<std::size_t> perm;
    long cached_epoch = -1;
    for (int i = 0; i < cfg_.batch_size; ++i) {
        const auto pos = static_cast<std::uint64_t>(step) * cfg_.batch_size + i;
        const long epoch = static_cast<long>(pos / n);
        if (epoch != cached_epoch) {
            perm.resize(n);
            std::iota(perm.begin(), perm.end(), 0);
            auto rng = make_rng(cfg_.seed, {kEpochOrder, static_cast<std::uint64_t>(epoch)});
            std::shuffle(perm.begin(), perm.end(), rng);
            cached_epoch = epoch;
        }
        out.push_back(perm[pos % n]);
    }
    return out;
}

bool Trainer::finished() const { return step_ >= cfg_.max_steps || early_.stopped; }

StepResult Trainer::step() {
    const auto idx = batch_indices(step_);
    const int batch = static_cast<int>(idx.size());

    std::vector<model::ModelInputs> inputs;
    std::vector<DropDecision> drops(batch);
    inputs.reserve(batch);
    for (auto i : idx) inputs.push_back(train_[i]->inputs);
    if (stage_ == Stage::kDetect) {
        auto rng = make_rng(cfg_.seed, {kModalityDrop, static_cast<std::uint64_t>(step_)});
        drops = apply_modality_dropout(inputs, cfg_.modality_dropout, rng);
    }

    // Per-sample gradients are summed in batch order regardless of threading.
    const double scale = 1.0 / batch;
    const int workers = std::min(cfg_.threads, batch);
    std::vector<ParamSet> scratch(workers == 1 ? 1 : batch, params_.zeros_like());
    std::vector<losses::LossBreakdown> parts(batch);
    ParamSet total = params_.zeros_like();

    auto run_sample = [&](int b, ParamSet& grads) {
        auto rng = make_rng(cfg_.seed, {kLayerDropout, static_cast<std::uint64_t>(step_), std::uint64_t(b)});
        const auto& ex = *train_[idx[b]];
        if (stage_ == Stage::kAvsr) {
            parts[b] = avsr_loss(model_, params_, inputs[b], ex.transcript, &grads, &rng, scale);
        } else {
            DetectionLossOptions opts{cfg_.ce_weight, cfg_.ctc_aux_weight, ex.transcript};
            parts[b] = detection_loss(model_, params_, inputs[b], ex.label, drops[b].presence, drops[b].loss_mask,
                                      opts, &grads, &rng, scale);
        }
    };

    if (workers == 1) {
        for (int b = 0; b < batch; ++b) {
            scratch[0].set_zero();
            run_sample(b, scratch[0]);
            total.accumulate(scratch[0]);
        }
    } else {
        std::atomic<int> next{0};
        std::vector<std::exception_ptr> errors(workers);
        {
            std::vector<std::jthread> pool;
            for (int w = 0; w < workers; ++w)
                pool.emplace_back([&, w] {
                    try {
                        for (int b = next++; b < batch; b = next++) run_sample(b, scratch[b]);
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                });
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        for (int b = 0; b < batch; ++b) total.accumulate(scratch[b]);
    }

    if (cfg_.freeze_backbone && stage_ == Stage::kDetect)
        for (int i = 0; i < total.size(); ++i)
            if (model::is_backbone(total.name(i))) total[i].setZero();

    StepResult r;
    r.step = step_;
    for (const auto& p : parts) {
        r.loss.ctc += p.ctc / batch;
        r.loss.bce += p.bce / batch;
        r.loss.ce += p.ce / batch;
        r.loss.total += p.total / batch;
    }
    r.grad_norm = clip_global_norm(total, cfg_.grad_clip);
    if (!std::isfinite(r.grad_norm)) throw NumericError("gradient became non-finite");
    adam_.step(params_, total, cfg_.learning_rate);
    ++step_;

    log_.write({{"stage", to_string(stage_)},
                {"step", r.step},
                {"loss", {{"ctc", r.loss.ctc}, {"bce", r.loss.bce}, {"ce", r.loss.ce}, {"total", r.loss.total}}},
                {"grad_norm", r.grad_norm}});

    const std::uint64_t n = train_.size();
    const bool epoch_end = (std::uint64_t(step_) * cfg_.batch_size) / n != (std::uint64_t(r.step) * cfg_.batch_size) / n;
    if (stage_ == Stage::kAvsr && epoch_end && !val_.empty())
        log_.write({{"stage", "avsr"}, {"step", step_}, {"val_per", phoneme_error_rate(val_)}});
    if (stage_ == Stage::kDetect && (step_ % cfg_.eval_every == 0 || step_ == cfg_.max_steps)) evaluate();
    return r;
}

void Trainer::evaluate() {
    const model::PresenceMask av{true, true};
    auto score = [&](const std::vector<const data::Example*>& pool) {
        std::vector<metrics::ScoredSample> scored;
        for (const auto* e : pool) scored.push_back(metrics::score_examples(model_, params_, std::span(e, 1), av)[0]);
        return metrics::build_report(scored, av);
    };
    nlohmann::json line{{"stage", "detect"}, {"step", step_}};
    if (!val_.empty()) {
        const auto report = score(val_);
        const double of1 = report.of1.value_or(0.0);
        line["val_of1"] = of1;
        if (of1 > early_.best_metric) {
            early_.best_metric = of1;
            early_.best_step = step_;
            early_.evals_since_best = 0;
            best_ = params_;
        } else if (++early_.evals_since_best >= cfg_.patience && cfg_.early_stop) {
            early_.stopped = true;
        }
    }
    if (!test_.empty()) {
        history_.push_back(score(test_));
        line["test"] = history_.back().to_json();
    }
    line["early_stopped"] = early_.stopped;
    log_.write(line);
}

void Trainer::run() {
    while (!finished()) step();
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.stage = stage_;
    c.step = step_;
    c.model = model_;
    c.train = cfg_;
    c.params = params_;
    c.best_params = best_;
    c.adam = adam_;
    c.early = early_;
    return c;
}

double Trainer::phoneme_error_rate(std::span<const data::Example* const> examples) const {
    long errors = 0, total = 0;
    for (const auto* e : examples) {
        nn::Graph g;
        model::Network net(g, model_, params_);
        const auto logits = net.forward_avsr(e->inputs);
        const auto hyp = model::greedy_decode(g.value(logits), model_.blank_id());
        errors += edit_distance(hyp, e->transcript);
        total += static_cast<long>(e->transcript.size());
    }
    return total == 0 ? 0.0 : double(errors) / double(total);
}

// ---------------------------------------------------------------------------

Checkpoint pretrain_avsr(const data::Splits& data, const model::ModelConfig& model_cfg, const TrainConfig& cfg,
                         JsonlLog log) {
    Trainer t(Stage::kAvsr, model_cfg, cfg, model::init_params(model_cfg, derive_seed(cfg.seed, {kInitSeedAvsr})),
              data, log);
    t.run();
    return t.checkpoint();
}

ParamSet detection_init_params(const model::ModelConfig& model_cfg, const TrainConfig& cfg, const Checkpoint* init) {
    auto params = model::init_params(model_cfg, derive_seed(cfg.seed, {kInitSeedDetect}));
    if (init) {
        if (!init->model.backbone_compatible(model_cfg))
            throw ConfigError("initial checkpoint's model configuration does not match the requested model");
        const auto& src = init->inference_params();
        for (int i = 0; i < params.size(); ++i)
            if (model::is_backbone(params.name(i))) params[i] = src.at(params.name(i));
    }
    return params;
}

Checkpoint finetune_detection(const data::Splits& data, const Checkpoint* init, const model::ModelConfig& model_cfg,
                              const TrainConfig& cfg, JsonlLog log) {
    Trainer t(Stage::kDetect, model_cfg, cfg, detection_init_params(model_cfg, cfg, init), data, log);
    t.run();
    return t.checkpoint();
}

int edit_distance(std::span<const int> a, std::span<const int> b) {
    std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace avdf::train
