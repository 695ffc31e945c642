// SPDX-License-Identifier: Apache-2.0
//
// Synthetic audio-visual speech corpus.
//
// Real clips share one latent phoneme stream between the waveform and the
// per-frame visual rows. A fake modality is re-synthesized from an
// independently drawn phoneme stream, so each fake looks like speech on its
// own but no longer agrees with the other modality.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace avdf::corpus {

inline constexpr int kSampleRate = 16000;
inline constexpr int kSamplesPerFrame = 640;  // 40 ms of audio per 25 fps frame

struct PhonemeSeq {
    std::vector<int> ids;
    int vocab = 40;

    // Throws DataError if empty or any id falls outside [0, vocab).
    void validate() const;
};

// Index 0 = audio, index 1 = video everywhere.
struct DualLabel {
    bool audio_fake = false;
    bool video_fake = false;

    int fake_count() const { return int(audio_fake) + int(video_fake); }
    // 0..3 in the order RR, RF, FR, FF (first letter audio).
    int category() const { return int(audio_fake) * 2 + int(video_fake); }
    std::string category_name() const;
    static DualLabel from_category(int category);
    bool operator==(const DualLabel&) const = default;
};

struct AVSample {
    std::string sample_id;
    std::vector<float> waveform;    // frames * 640 samples at 16 kHz
    std::vector<float> video_rows;  // frames x video_dim, row-major
    int frames = 0;
    int video_dim = 0;
    PhonemeSeq transcript;
    DualLabel label;
    std::uint64_t seed = 0;

    bool operator==(const AVSample& o) const;
};

struct CorpusSpec {
    std::array<int, 4> samples_per_class{200, 200, 200, 200};  // RR, RF, FR, FF
    int frames_min = 8;
    int frames_max = 16;
    int n_phonemes = 40;
    int video_dim = 64;
    double noise_std = 0.1;
    // Per-frame probability that a modality follows its phoneme schedule;
    // otherwise the frame shows a uniformly drawn phoneme.
    double correlation_strength = 1.0;
    std::uint64_t master_seed = 1234;
    int test_percent = 15;
    // Fixed seeds for the tone map's companion table, the visual projection
    // and the phonotactic successor table. Not tied to master_seed so that
    // every corpus speaks the same "language".
    std::uint64_t projection_seed = 0x5eed0001;
    std::uint64_t grammar_seed = 0x5eed0002;
    int successors_per_phoneme = 2;

    void validate() const;
    int total() const;
};

void to_json(nlohmann::json& j, const CorpusSpec& s);
void from_json(const nlohmann::json& j, CorpusSpec& s);

// Deterministic per-seed clip length in [frames_min, frames_max].
int frames_for_seed(const CorpusSpec& spec, std::uint64_t seed);

// Stretch `ids` uniformly over `frames` frames: frame t shows ids[t*L/frames].
std::vector<int> frame_schedule(std::span<const int> ids, int frames);

// Primary (dominant) and secondary tone frequencies for a phoneme, both on
// exact STFT bin centres (25 Hz spacing). The primary bin is injective in id.
int primary_bin(int phoneme, int vocab);
int secondary_bin(int phoneme, int vocab);

// Fixed vocab x video_dim random projection used for the visual rows.
std::vector<double> visual_projection(const CorpusSpec& spec);

// Draws a transcript of `length` ids that follows the fixed successor table.
PhonemeSeq draw_transcript(const CorpusSpec& spec, int length, std::uint64_t seed);
// Whether consecutive ids follow the successor table.
bool is_phonotactic(const CorpusSpec& spec, std::span<const int> ids);

AVSample synthesize_sample(const PhonemeSeq& transcript, const DualLabel& label,
                           const CorpusSpec& spec, std::uint64_t seed);

struct ManifestEntry {
    std::string id;
    std::string path;  // relative to the manifest's directory
    DualLabel label;
    int frames = 0;
    std::string split;  // "train" | "test"
};

struct Manifest {
    int version = 1;
    CorpusSpec spec;
    std::vector<ManifestEntry> samples;
    std::filesystem::path root;  // directory holding manifest.json

    nlohmann::json to_json() const;
    static Manifest load(const std::filesystem::path& manifest_path);
    std::vector<const ManifestEntry*> split(const std::string& name) const;
};

// Writes <out_dir>/manifest.json and <out_dir>/samples/<id>.avs.
Manifest generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir);

void write_sample(const AVSample& sample, const std::filesystem::path& path);
AVSample read_sample(const std::filesystem::path& path);

// Byte-level codec shared by the file functions.
std::vector<std::uint8_t> encode_sample(const AVSample& sample);
AVSample decode_sample(std::span<const std::uint8_t> bytes);

// Writes to a sibling temporary file and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace avdf::corpus
