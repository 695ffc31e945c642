// SPDX-License-Identifier: Apache-2.0
//
// Two-stage audio-visual network.
//
//   audio rows -> front-end -> encoder ┐
//                                      ├ compensation adapter -> joint decoder ┬ CTC head (pretraining)
//   video rows -> front-end -> encoder ┘                                       └ dual-label classifier
//
// The dual-label classifier prepends a fake-aware token and runs the fake
// composition block, then prepends a temporal token and runs the temporal
// aggregation block. Output row 0 (temporal token) feeds the per-modality
// head, row 1 (fake-aware token) feeds the fake-count head.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avdf/features.hpp"
#include "avdf/nn.hpp"

namespace avdf::model {

using nn::Mat;
using nn::ParamSet;
using nn::Var;

enum class McaMode { kNone, kAudio, kVideo };
std::string to_string(McaMode mode);
McaMode mca_mode_from_string(const std::string& s);

enum class Modality { kAudio = 0, kVideo = 1 };

struct ModelConfig {
    int d_model = 64;
    int n_heads = 4;
    int ff_mult = 4;
    int layers_audio_enc = 2;
    int layers_video_enc = 2;
    int layers_joint_dec = 2;
    int layers_fcd = 1;
    int layers_tam = 1;
    int n_phonemes = 40;
    int video_dim = 64;
    double dropout_rate = 0.1;
    McaMode mca_mode = McaMode::kAudio;
    // Positional encodings on the classifier's token sequence.
    bool dlc_positional = true;
    features::FeatureConfig features;

    int blank_id() const { return n_phonemes; }
    int audio_in() const { return features::kAlignedWidth; }

    static ModelConfig desk();
    // Layer counts 6/6/6/1/2 at width 512.
    static ModelConfig paper();
    void validate() const;
    // Same shapes for everything transferred from pretraining.
    bool backbone_compatible(const ModelConfig& other) const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct PresenceMask {
    bool audio = true;
    bool video = true;

    void validate() const;
    std::string name() const;  // "av", "audio", "video"
    static PresenceMask from_name(const std::string& name);
    bool operator==(const PresenceMask&) const = default;
};

struct DetectionOutput {
    double p_audio_fake = 0.5;
    double p_video_fake = 0.5;
    std::array<double, 3> count_probs{};
    double fused_real_score = 0.25;
    std::vector<double> embedding;
    // A missing modality still gets a probability, but it is flagged.
    bool audio_supported = true;
    bool video_supported = true;
};

// Parameter groups copied from the pretraining checkpoint.
const std::vector<std::string>& backbone_prefixes();
bool is_backbone(const std::string& param_name);

ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed);

// One sample's model inputs: aligned audio rows (T x 1284) and raw visual
// rows (T x video_dim).
struct ModelInputs {
    Mat audio;
    Mat video;
    int frames() const { return static_cast<int>(video.rows()); }
};

// Forward-pass context over one graph. A null `grads` builds a constant
// graph; a null `dropout_rng` disables dropout (evaluation mode).
class Network {
public:
    Network(nn::Graph& g, const ModelConfig& cfg, const ParamSet& params, ParamSet* grads = nullptr,
            Rng* dropout_rng = nullptr);

    nn::Graph& graph() { return g_; }
    Var param(const std::string& name);

    Var frontend(const Mat& rows, Modality which);
    Var encode(Var features, Modality which);
    std::pair<Var, Var> compensate(Var e_a, Var e_v, McaMode mode);

    struct Decoded {
        Var seq;
        PresenceMask presence;
    };
    Decoded joint_decode(Var c_a, Var c_v, PresenceMask presence);
    Var avsr_head(Var decoded);

    struct DlcOut {
        Var modality_logits;  // 1 x 2
        Var count_logits;     // 1 x 3
        Var embedding;        // 1 x d_model
        Var decoded;          // decoder output the classifier consumed
        int fcd_tokens = 0;
        int tam_tokens = 0;
    };
    DlcOut dlc_forward(Var decoded);

    // Full pipelines. Missing modalities are replaced by zero embeddings
    // straight after the encoders and at the decoder concatenation.
    Var forward_avsr(const ModelInputs& in, PresenceMask presence = {});
    DlcOut forward_detect(const ModelInputs& in, PresenceMask presence);

    Var transformer_stack(Var x, const std::string& prefix, int layers);

private:
    Var transformer_layer(Var x, const std::string& prefix);
    Var attention(Var x, const std::string& prefix);
    Var mlp(Var x, const std::string& prefix);
    Var maybe_dropout(Var x);
    Var add_positions(Var x);

    nn::Graph& g_;
    const ModelConfig& cfg_;
    const ParamSet& params_;
    ParamSet* grads_;
    Rng* rng_;
};

DetectionOutput make_detection(const Mat& modality_logits, const Mat& count_logits, const Mat& embedding,
                               PresenceMask presence);

// Evaluation-mode forward without gradients.
DetectionOutput detect(const ModelConfig& cfg, const ParamSet& params, const ModelInputs& in,
                       PresenceMask presence);

// Greedy CTC decode: per-frame argmax, collapse repeats, drop blanks.
std::vector<int> greedy_decode(const Mat& logits, int blank);

ModelInputs make_inputs(const corpus::AVSample& sample, const ModelConfig& cfg);

}  // namespace avdf::model
