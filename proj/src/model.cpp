// SPDX-License-Identifier: Apache-2.0
#include "avdf/model.hpp"

#include <cmath>

#include "avdf/errors.hpp"
#include "avdf/losses.hpp"

namespace avdf::model {

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Parameters are kept float-representable so f32 checkpoints are lossless.
Mat round_to_float(Mat m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
    return m;
}

class Initializer {
public:
    Initializer(ParamSet& params, std::uint64_t seed) : params_(params), seed_(seed) {}

    void linear(const std::string& name, int in, int out) {
        auto rng = make_rng(seed_, {fnv1a(name)});
        const double a = std::sqrt(6.0 / (in + out));
        Mat w(in, out);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * uniform01(rng) - 1.0) * a;
        params_.add(name + ".weight", round_to_float(std::move(w)));
        params_.add(name + ".bias", Mat::Zero(1, out));
    }
    void layer_norm(const std::string& name, int dim) {
        params_.add(name + ".gamma", Mat::Ones(1, dim));
        params_.add(name + ".beta", Mat::Zero(1, dim));
    }
    void token(const std::string& name, int dim) {
        auto rng = make_rng(seed_, {fnv1a(name)});
        Mat t(1, dim);
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = normal(rng, 0.0, 0.02);
        params_.add(name, round_to_float(std::move(t)));
    }
    void stack(const std::string& prefix, int layers, int d, int ff) {
        for (int l = 0; l < layers; ++l) {
            const auto p = prefix + ".layers." + std::to_string(l);
            layer_norm(p + ".ln1", d);
            linear(p + ".attn.q", d, d);
            linear(p + ".attn.k", d, d);
            linear(p + ".attn.v", d, d);
            linear(p + ".attn.o", d, d);
            layer_norm(p + ".ln2", d);
            linear(p + ".ff1", d, ff);
            linear(p + ".ff2", ff, d);
        }
        if (layers > 0) layer_norm(prefix + ".ln_f", d);
    }

private:
    ParamSet& params_;
    std::uint64_t seed_;
};

}  // namespace

std::string to_string(McaMode mode) {
    switch (mode) {
        case McaMode::kNone: return "none";
        case McaMode::kAudio: return "audio";
        case McaMode::kVideo: return "video";
    }
    return "none";
}

McaMode mca_mode_from_string(const std::string& s) {
    if (s == "none") return McaMode::kNone;
    if (s == "audio") return McaMode::kAudio;
    if (s == "video") return McaMode::kVideo;
    throw ConfigError("mca_mode must be none, audio or video (got '" + s + "')");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
    ModelConfig c;
    c.d_model = 512;
    c.n_heads = 8;
    c.layers_audio_enc = 6;
    c.layers_video_enc = 6;
    c.layers_joint_dec = 6;
    c.layers_fcd = 1;
    c.layers_tam = 2;
    return c;
}

void ModelConfig::validate() const {
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
        throw ConfigError("d_model must be a positive multiple of n_heads");
    if (ff_mult < 1) throw ConfigError("ff_mult must be >= 1");
    for (int l : {layers_audio_enc, layers_video_enc, layers_joint_dec, layers_fcd, layers_tam})
        if (l < 0) throw ConfigError("layer counts must be >= 0");
    if (n_phonemes < 1 || n_phonemes > 65535) throw ConfigError("n_phonemes must be in [1, 65535]");
    if (video_dim < 1) throw ConfigError("video_dim must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout_rate must be in [0, 1)");
}

bool ModelConfig::backbone_compatible(const ModelConfig& o) const {
    return d_model == o.d_model && n_heads == o.n_heads && ff_mult == o.ff_mult &&
           layers_audio_enc == o.layers_audio_enc && layers_video_enc == o.layers_video_enc &&
           layers_joint_dec == o.layers_joint_dec && n_phonemes == o.n_phonemes && video_dim == o.video_dim &&
           features.log_spec == o.features.log_spec && features.normalize == o.features.normalize;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"d_model", c.d_model},
                       {"n_heads", c.n_heads},
                       {"ff_mult", c.ff_mult},
                       {"layers_audio_enc", c.layers_audio_enc},
                       {"layers_video_enc", c.layers_video_enc},
                       {"layers_joint_dec", c.layers_joint_dec},
                       {"layers_fcd", c.layers_fcd},
                       {"layers_tam", c.layers_tam},
                       {"n_phonemes", c.n_phonemes},
                       {"video_dim", c.video_dim},
                       {"dropout_rate", c.dropout_rate},
                       {"mca_mode", to_string(c.mca_mode)},
                       {"dlc_positional", c.dlc_positional},
                       {"log_spec", c.features.log_spec},
                       {"normalize_spec", c.features.normalize},
                       {"blank_id", c.blank_id()}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.d_model = j.value("d_model", d.d_model);
    c.n_heads = j.value("n_heads", d.n_heads);
    c.ff_mult = j.value("ff_mult", d.ff_mult);
    c.layers_audio_enc = j.value("layers_audio_enc", d.layers_audio_enc);
    c.layers_video_enc = j.value("layers_video_enc", d.layers_video_enc);
    c.layers_joint_dec = j.value("layers_joint_dec", d.layers_joint_dec);
    c.layers_fcd = j.value("layers_fcd", d.layers_fcd);
    c.layers_tam = j.value("layers_tam", d.layers_tam);
    c.n_phonemes = j.value("n_phonemes", d.n_phonemes);
    c.video_dim = j.value("video_dim", d.video_dim);
    c.dropout_rate = j.value("dropout_rate", d.dropout_rate);
    c.mca_mode = mca_mode_from_string(j.value("mca_mode", to_string(d.mca_mode)));
    c.dlc_positional = j.value("dlc_positional", d.dlc_positional);
    c.features.log_spec = j.value("log_spec", d.features.log_spec);
    c.features.normalize = j.value("normalize_spec", d.features.normalize);
}

void PresenceMask::validate() const {
    if (!audio && !video) throw ConfigError("at least one modality must be present");
}

std::string PresenceMask::name() const {
    if (audio && video) return "av";
    return audio ? "audio" : "video";
}

PresenceMask PresenceMask::from_name(const std::string& name) {
    if (name == "av") return {true, true};
    if (name == "audio") return {true, false};
    if (name == "video") return {false, true};
    throw ConfigError("presence must be av, audio or video (got '" + name + "')");
}

const std::vector<std::string>& backbone_prefixes() {
    static const std::vector<std::string> p{"audio_frontend.", "video_frontend.", "audio_enc.", "video_enc.",
                                            "joint."};
    return p;
}

bool is_backbone(const std::string& name) {
    for (const auto& p : backbone_prefixes())
        if (name.starts_with(p)) return true;
    return false;
}

ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamSet params;
    Initializer init(params, seed);
    const int d = cfg.d_model;
    const int ff = cfg.ff_mult * d;
    init.linear("audio_frontend", cfg.audio_in(), d);
    init.linear("video_frontend", cfg.video_dim, d);
    init.stack("audio_enc", cfg.layers_audio_enc, d, ff);
    init.stack("video_enc", cfg.layers_video_enc, d, ff);
    init.linear("joint.proj", 2 * d, d);
    init.stack("joint", cfg.layers_joint_dec, d, ff);
    init.linear("avsr_head", d, cfg.n_phonemes + 1);
    init.linear("mca", 2 * d, d);
    init.token("dlc.token_fake", d);
    init.token("dlc.token_temp", d);
    init.stack("dlc.fcd", cfg.layers_fcd, d, ff);
    init.stack("dlc.tam", cfg.layers_tam, d, ff);
    init.linear("dlc.mlp_y.fc1", d, d);
    init.linear("dlc.mlp_y.fc2", d, 2);
    init.linear("dlc.mlp_p.fc1", d, d);
    init.linear("dlc.mlp_p.fc2", d, 3);
    return params;
}

// ---------------------------------------------------------------------------

Network::Network(nn::Graph& g, const ModelConfig& cfg, const ParamSet& params, ParamSet* grads, Rng* dropout_rng)
    : g_(g), cfg_(cfg), params_(params), grads_(grads), rng_(dropout_rng) {}

Var Network::param(const std::string& name) { return g_.param(params_, name, grads_); }

Var Network::frontend(const Mat& rows, Modality which) {
    if (!rows.allFinite()) throw NumericError("non-finite model input");
    const Var x = g_.constant(rows);
    if (which == Modality::kAudio)
        return features::audio_frontend(g_, x, param("audio_frontend.weight"), param("audio_frontend.bias"));
    return features::video_frontend(g_, x, param("video_frontend.weight"), param("video_frontend.bias"));
}

Var Network::add_positions(Var x) {
    const auto& v = g_.value(x);
    return nn::add(g_, x, g_.constant(nn::sinusoidal_positions(int(v.rows()), int(v.cols()))));
}

Var Network::maybe_dropout(Var x) {
    if (rng_ == nullptr || cfg_.dropout_rate <= 0.0) return x;
    return nn::dropout(g_, x, cfg_.dropout_rate, *rng_);
}

Var Network::attention(Var x, const std::string& prefix) {
    const int d = cfg_.d_model;
    const int heads = cfg_.n_heads;
    const int dh = d / heads;
    const Var q = nn::linear(g_, x, param(prefix + ".q.weight"), param(prefix + ".q.bias"));
    const Var k = nn::linear(g_, x, param(prefix + ".k.weight"), param(prefix + ".k.bias"));
    const Var v = nn::linear(g_, x, param(prefix + ".v.weight"), param(prefix + ".v.bias"));
    const double inv_sqrt = 1.0 / std::sqrt(double(dh));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        const Var qh = heads == 1 ? q : nn::slice_cols(g_, q, h * dh, dh);
        const Var kh = heads == 1 ? k : nn::slice_cols(g_, k, h * dh, dh);
        const Var vh = heads == 1 ? v : nn::slice_cols(g_, v, h * dh, dh);
        const Var scores = nn::scale(g_, nn::matmul_nt(g_, qh, kh), inv_sqrt);
        outs.push_back(nn::matmul(g_, nn::softmax_rows(g_, scores), vh));
    }
    const Var merged = heads == 1 ? outs[0] : nn::concat_cols(g_, outs);
    return nn::linear(g_, merged, param(prefix + ".o.weight"), param(prefix + ".o.bias"));
}

Var Network::mlp(Var x, const std::string& prefix) {
    const Var h = nn::gelu(g_, nn::linear(g_, x, param(prefix + ".fc1.weight"), param(prefix + ".fc1.bias")));
    return nn::linear(g_, h, param(prefix + ".fc2.weight"), param(prefix + ".fc2.bias"));
}

Var Network::transformer_layer(Var x, const std::string& p) {
    Var h = nn::layer_norm(g_, x, param(p + ".ln1.gamma"), param(p + ".ln1.beta"));
    x = nn::add(g_, x, maybe_dropout(attention(h, p + ".attn")));
    h = nn::layer_norm(g_, x, param(p + ".ln2.gamma"), param(p + ".ln2.beta"));
    h = nn::gelu(g_, nn::linear(g_, h, param(p + ".ff1.weight"), param(p + ".ff1.bias")));
    h = nn::linear(g_, h, param(p + ".ff2.weight"), param(p + ".ff2.bias"));
    return nn::add(g_, x, maybe_dropout(h));
}

Var Network::transformer_stack(Var x, const std::string& prefix, int layers) {
    for (int l = 0; l < layers; ++l) x = transformer_layer(x, prefix + ".layers." + std::to_string(l));
    if (layers > 0) x = nn::layer_norm(g_, x, param(prefix + ".ln_f.gamma"), param(prefix + ".ln_f.beta"));
    return x;
}

Var Network::encode(Var features, Modality which) {
    const auto& v = g_.value(features);
    if (v.rows() < 1) throw DataError("cannot encode an empty sequence");
    if (!v.allFinite()) throw NumericError("non-finite features passed to the encoder");
    const Var x = add_positions(features);
    return which == Modality::kAudio ? transformer_stack(x, "audio_enc", cfg_.layers_audio_enc)
                                     : transformer_stack(x, "video_enc", cfg_.layers_video_enc);
}

std::pair<Var, Var> Network::compensate(Var e_a, Var e_v, McaMode mode) {
    if (g_.value(e_a).rows() != g_.value(e_v).rows())
        throw DataError("audio and video embeddings differ in length");
    if (mode == McaMode::kNone) return {e_a, e_v};
    const Var na = nn::l2_normalize_rows(g_, e_a, 1e-8);
    const Var nv = nn::l2_normalize_rows(g_, e_v, 1e-8);
    const Var joint = nn::concat_cols(g_, std::array{na, nv});
    const Var residual = nn::linear(g_, joint, param("mca.weight"), param("mca.bias"));
    if (mode == McaMode::kAudio) return {nn::add(g_, e_a, residual), e_v};
    return {e_a, nn::add(g_, e_v, residual)};
}

Network::Decoded Network::joint_decode(Var c_a, Var c_v, PresenceMask presence) {
    presence.validate();
    const auto& av = g_.value(c_a);
    if (av.rows() != g_.value(c_v).rows()) throw DataError("audio and video embeddings differ in length");
    if (!presence.audio) c_a = g_.constant(Mat::Zero(av.rows(), av.cols()));
    if (!presence.video) c_v = g_.constant(Mat::Zero(g_.value(c_v).rows(), g_.value(c_v).cols()));
    const Var joint = nn::concat_cols(g_, std::array{c_a, c_v});
    Var x = nn::linear(g_, joint, param("joint.proj.weight"), param("joint.proj.bias"));
    x = add_positions(x);
    return {transformer_stack(x, "joint", cfg_.layers_joint_dec), presence};
}

Var Network::avsr_head(Var decoded) {
    return nn::linear(g_, decoded, param("avsr_head.weight"), param("avsr_head.bias"));
}

Network::DlcOut Network::dlc_forward(Var decoded) {
    if (g_.value(decoded).rows() < 1) throw DataError("classifier needs at least one frame");
    Var fcd_in = nn::concat_rows(g_, std::array{param("dlc.token_fake"), decoded});
    if (cfg_.dlc_positional) fcd_in = add_positions(fcd_in);
    const Var seq_temp = transformer_stack(fcd_in, "dlc.fcd", cfg_.layers_fcd);
    const Var tam_in = nn::concat_rows(g_, std::array{param("dlc.token_temp"), seq_temp});
    const Var seq = transformer_stack(tam_in, "dlc.tam", cfg_.layers_tam);

    DlcOut out;
    out.fcd_tokens = static_cast<int>(g_.value(fcd_in).rows());
    out.tam_tokens = static_cast<int>(g_.value(tam_in).rows());
    out.embedding = nn::slice_rows(g_, seq, 0, 1);
    const Var fake_token = nn::slice_rows(g_, seq, 1, 1);
    out.modality_logits = mlp(out.embedding, "dlc.mlp_y");
    out.count_logits = mlp(fake_token, "dlc.mlp_p");
    return out;
}

Var Network::forward_avsr(const ModelInputs& in, PresenceMask presence) {
    presence.validate();
    if (in.audio.rows() != in.video.rows()) throw DataError("audio and video frame counts differ");
    const int t = in.frames();
    const int d = cfg_.d_model;
    const Var e_a = presence.audio ? encode(frontend(in.audio, Modality::kAudio), Modality::kAudio)
                                   : g_.constant(Mat::Zero(t, d));
    const Var e_v = presence.video ? encode(frontend(in.video, Modality::kVideo), Modality::kVideo)
                                   : g_.constant(Mat::Zero(t, d));
    return avsr_head(joint_decode(e_a, e_v, presence).seq);
}

Network::DlcOut Network::forward_detect(const ModelInputs& in, PresenceMask presence) {
    presence.validate();
    if (in.audio.rows() != in.video.rows()) throw DataError("audio and video frame counts differ");
    const int t = in.frames();
    const int d = cfg_.d_model;
    const Var e_a = presence.audio ? encode(frontend(in.audio, Modality::kAudio), Modality::kAudio)
                                   : g_.constant(Mat::Zero(t, d));
    const Var e_v = presence.video ? encode(frontend(in.video, Modality::kVideo), Modality::kVideo)
                                   : g_.constant(Mat::Zero(t, d));
    const auto [c_a, c_v] = compensate(e_a, e_v, cfg_.mca_mode);
    const Var decoded = joint_decode(c_a, c_v, presence).seq;
    auto out = dlc_forward(decoded);
    out.decoded = decoded;
    return out;
}

// ---------------------------------------------------------------------------

DetectionOutput make_detection(const Mat& modality_logits, const Mat& count_logits, const Mat& embedding,
                               PresenceMask presence) {
    DetectionOutput out;
    out.p_audio_fake = losses::sigmoid(modality_logits.data()[0]);
    out.p_video_fake = losses::sigmoid(modality_logits.data()[1]);
    const double m = count_logits.maxCoeff();
    double z = 0;
    for (int k = 0; k < 3; ++k) z += std::exp(count_logits.data()[k] - m);
    for (int k = 0; k < 3; ++k) out.count_probs[k] = std::exp(count_logits.data()[k] - m) / z;
    out.audio_supported = presence.audio;
    out.video_supported = presence.video;
    if (presence.audio && presence.video)
        out.fused_real_score = (1.0 - out.p_audio_fake) * (1.0 - out.p_video_fake);
    else if (presence.audio)
        out.fused_real_score = 1.0 - out.p_audio_fake;
    else
        out.fused_real_score = 1.0 - out.p_video_fake;
    out.embedding.assign(embedding.data(), embedding.data() + embedding.size());
    return out;
}

DetectionOutput detect(const ModelConfig& cfg, const ParamSet& params, const ModelInputs& in,
                       PresenceMask presence) {
    nn::Graph g;
    Network net(g, cfg, params);
    const auto out = net.forward_detect(in, presence);
    return make_detection(g.value(out.modality_logits), g.value(out.count_logits), g.value(out.embedding),
                          presence);
}

std::vector<int> greedy_decode(const Mat& logits, int blank) {
    std::vector<int> out;
    int prev = -1;
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        Eigen::Index k;
        logits.row(t).maxCoeff(&k);
        if (int(k) != prev && int(k) != blank) out.push_back(int(k));
        prev = int(k);
    }
    return out;
}

ModelInputs make_inputs(const corpus::AVSample& sample, const ModelConfig& cfg) {
    if (sample.video_dim != cfg.video_dim)
        throw ConfigError("sample video_dim " + std::to_string(sample.video_dim) + " does not match model (" +
                          std::to_string(cfg.video_dim) + ")");
    return {features::audio_features(sample.waveform, sample.frames, cfg.features),
            features::video_features(sample)};
}

}  // namespace avdf::model
