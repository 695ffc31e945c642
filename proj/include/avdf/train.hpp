// SPDX-License-Identifier: Apache-2.0
//
// Two-stage training: CTC pretraining of the speech-recognition backbone on
// real clips, then dual-label detection finetuning with modality dropout.
//
// Every random draw is a pure function of (seed, step, position), so a run
// is reproducible from its config alone and a resumed run replays the exact
// batches, dropout masks and modality drops it would have seen.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avdf/dataset.hpp"
#include "avdf/losses.hpp"
#include "avdf/metrics.hpp"
#include "avdf/model.hpp"

namespace avdf::train {

using nn::ParamSet;

enum class Stage { kAvsr, kDetect };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct TrainConfig {
    int batch_size = 8;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int max_steps = 2000;
    double modality_dropout = 0.2;
    std::uint64_t seed = 1;
    double grad_clip = 5.0;  // global L2 norm; <= 0 disables
    int eval_every = 50;
    int patience = 8;  // evaluations without validation OF1 gain
    bool early_stop = true;
    double ce_weight = 1.0;
    double ctc_aux_weight = 0.0;  // optional CTC term during detection finetuning
    bool freeze_backbone = false;
    int threads = 1;
    int val_percent = 10;

    static TrainConfig desk();
    // Batch 12, Adam at 1e-5.
    static TrainConfig paper();
    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// ---- objectives ------------------------------------------------------------

// Stage-1 loss for one sample; when `grads` is given, adds grad_scale * dL/dθ.
losses::LossBreakdown avsr_loss(const model::ModelConfig& cfg, const ParamSet& params, const model::ModelInputs& in,
                                std::span<const int> transcript, ParamSet* grads = nullptr,
                                Rng* dropout_rng = nullptr, double grad_scale = 1.0);

// Stage-2 loss for one sample: masked dual BCE + ce_weight * count CE
// (+ ctc_aux_weight * CTC when a transcript is given).
struct DetectionLossOptions {
    double ce_weight = 1.0;
    double ctc_aux_weight = 0.0;
    std::span<const int> transcript{};
};
losses::LossBreakdown detection_loss(const model::ModelConfig& cfg, const ParamSet& params,
                                     const model::ModelInputs& in, const corpus::DualLabel& label,
                                     model::PresenceMask presence, losses::LossMask mask,
                                     const DetectionLossOptions& opts = {}, ParamSet* grads = nullptr,
                                     Rng* dropout_rng = nullptr, double grad_scale = 1.0);

// ---- modality dropout ------------------------------------------------------

struct DropDecision {
    model::PresenceMask presence;
    losses::LossMask loss_mask;
};

// Drops audio with probability rho and video independently with probability
// rho, redrawing whenever both would go.
DropDecision draw_modality_dropout(double rho, Rng& rng);

// Zeroes the dropped modality's features in place and returns per-sample
// presence and loss masks. Labels are untouched.
std::vector<DropDecision> apply_modality_dropout(std::span<model::ModelInputs> batch, double rho, Rng& rng);

// ---- optimizer -------------------------------------------------------------

// Adam. Parameters and moments are rounded to float after every update so
// that f32 checkpoints reproduce them exactly.
class Adam {
public:
    Adam() = default;
    Adam(const ParamSet& like, double beta1, double beta2, double eps);
    void step(ParamSet& params, const ParamSet& grads, double lr);

    ParamSet m;
    ParamSet v;
    long t = 0;

private:
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

// Scales grads so the global norm is at most max_norm; returns the pre-clip norm.
double clip_global_norm(ParamSet& grads, double max_norm);

// ---- checkpoints -----------------------------------------------------------

struct EarlyStopState {
    double best_metric = -1.0;
    long best_step = -1;
    int evals_since_best = 0;
    bool stopped = false;
};

struct Checkpoint {
    Stage stage = Stage::kAvsr;
    long step = 0;
    model::ModelConfig model;
    TrainConfig train;
    ParamSet params;
    std::optional<ParamSet> best_params;
    Adam adam;
    EarlyStopState early;
    nlohmann::json extra = nlohmann::json::object();  // provenance, resolved config

    // Best-by-validation parameters when tracked, otherwise the latest.
    const ParamSet& inference_params() const { return best_params ? *best_params : params; }
    std::string rng_digest() const;
};

inline constexpr int kCheckpointMajor = 1;
inline constexpr int kCheckpointMinor = 0;

enum class BlobType { kF32, kF64 };

// File layout: "AVDFCKPT", u32 header length, UTF-8 JSON header, then the
// little-endian tensor blobs listed in the header.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, BlobType type = BlobType::kF32);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt, BlobType type = BlobType::kF32);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

// ---- training loop ---------------------------------------------------------

// Appends one JSON object per line; null stream discards.
class JsonlLog {
public:
    explicit JsonlLog(std::ostream* out = nullptr) : out_(out) {}
    void write(const nlohmann::json& j);

private:
    std::ostream* out_;
};

struct StepResult {
    long step = 0;
    losses::LossBreakdown loss;
    double grad_norm = 0.0;
};

class Trainer {
public:
    Trainer(Stage stage, model::ModelConfig model_cfg, TrainConfig train_cfg, ParamSet params,
            const data::Splits& data, JsonlLog log = JsonlLog());

    // Continue from a checkpoint's step, optimizer and early-stop state.
    void restore(const Checkpoint& ckpt);

    StepResult step();
    bool finished() const;
    // Steps until max_steps or early stop.
    void run();
    Checkpoint checkpoint() const;

    const ParamSet& params() const { return params_; }
    long current_step() const { return step_; }
    const std::vector<metrics::EvalReport>& test_history() const { return history_; }

    // Sample indices (into the stage's training pool) for a given step.
    std::vector<std::size_t> batch_indices(long step) const;
    std::size_t pool_size() const { return train_.size(); }

    // Greedy-decode phoneme error rate on the validation reals.
    double phoneme_error_rate(std::span<const data::Example* const> examples) const;

private:
    void evaluate();

    Stage stage_;
    model::ModelConfig model_;
    TrainConfig cfg_;
    ParamSet params_;
    Adam adam_;
    long step_ = 0;
    EarlyStopState early_;
    std::optional<ParamSet> best_;
    std::vector<const data::Example*> train_;
    std::vector<const data::Example*> val_;
    std::vector<const data::Example*> test_;
    std::vector<metrics::EvalReport> history_;
    JsonlLog log_;
};

// Stage 1 on the real (RR) clips only. Throws DataError without any.
Checkpoint pretrain_avsr(const data::Splits& data, const model::ModelConfig& model_cfg, const TrainConfig& cfg,
                         JsonlLog log = JsonlLog());

// Stage 2. With `init`, the backbone groups are copied from it (shapes must
// match); the compensation adapter and classifier start fresh either way.
ParamSet detection_init_params(const model::ModelConfig& model_cfg, const TrainConfig& cfg, const Checkpoint* init);
Checkpoint finetune_detection(const data::Splits& data, const Checkpoint* init, const model::ModelConfig& model_cfg,
                              const TrainConfig& cfg, JsonlLog log = JsonlLog());

// Levenshtein distance between two id sequences.
int edit_distance(std::span<const int> a, std::span<const int> b);

}  // namespace avdf::train
