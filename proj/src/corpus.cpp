// SPDX-License-Identifier: Apache-2.0
#include "avdf/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "avdf/errors.hpp"
#include "avdf/random.hpp"

namespace avdf::corpus {

static_assert(std::endian::native == std::endian::little, "sample files assume a little-endian host");

namespace {

constexpr int kLowBin = 8;
constexpr int kBinBudget = 304;
constexpr double kPrimaryAmp = 1.0;
constexpr double kSecondaryAmp = 0.5;
constexpr double kBinHz = double(kSampleRate) / kSamplesPerFrame;

// Sub-stream tags for one sample's RNG.
enum Stream : std::uint64_t {
    kFrames = 0,
    kAudioFakeStream = 1,
    kVideoFakeStream = 2,
    kAudioJitter = 3,
    kVideoJitter = 4,
    kAudioNoise = 5,
    kVideoNoise = 6,
};

int bin_step(int vocab) { return std::max(1, kBinBudget / vocab); }

std::vector<std::vector<int>> successor_table(const CorpusSpec& spec) {
    auto rng = make_rng(spec.grammar_seed);
    const int c = spec.n_phonemes;
    const int k = std::min(spec.successors_per_phoneme, c - 1);
    std::vector<std::vector<int>> table(c);
    for (int i = 0; i < c; ++i) {
        std::vector<int> others;
        for (int j = 0; j < c; ++j)
            if (j != i) others.push_back(j);
        std::shuffle(others.begin(), others.end(), rng);
        others.resize(k);
        std::sort(others.begin(), others.end());
        table[i] = std::move(others);
    }
    return table;
}

std::vector<int> jitter(std::vector<int> schedule, double strength, int vocab, Rng& rng) {
    if (strength >= 1.0) return schedule;
    for (auto& id : schedule)
        if (uniform01(rng) >= strength) id = uniform_int(rng, 0, vocab - 1);
    return schedule;
}

void check_finite(std::span<const float> xs, const char* what) {
    for (float x : xs)
        if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
}

class ByteWriter {
public:
    template <class T>
    void put(T v) {
        auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        auto* p = static_cast<const std::uint8_t*>(data);
        bytes_.insert(bytes_.end(), p, p + n);
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> b) : bytes_(b) {}
    template <class T>
    T get() {
        T v;
        get_bytes(&v, sizeof(T));
        return v;
    }
    void get_bytes(void* out, std::size_t n) {
        if (remaining() < n) throw CorruptionError("sample payload truncated");
        std::memcpy(out, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

constexpr std::array<char, 4> kMagic{'A', 'V', 'D', 'S'};
constexpr std::uint8_t kVersion = 1;

}  // namespace

void PhonemeSeq::validate() const {
    if (ids.empty()) throw DataError("phoneme sequence is empty");
    if (vocab < 1 || vocab > 65535) throw DataError("phoneme vocabulary must be in [1, 65535]");
    for (int id : ids)
        if (id < 0 || id >= vocab) throw DataError("phoneme id out of range: " + std::to_string(id));
}

std::string DualLabel::category_name() const {
    static constexpr const char* kNames[] = {"RR", "RF", "FR", "FF"};
    return kNames[category()];
}

DualLabel DualLabel::from_category(int category) {
    if (category < 0 || category > 3) throw DataError("label category must be 0..3");
    return DualLabel{(category & 2) != 0, (category & 1) != 0};
}

bool AVSample::operator==(const AVSample& o) const {
    return sample_id == o.sample_id && waveform == o.waveform && video_rows == o.video_rows &&
           frames == o.frames && video_dim == o.video_dim && transcript.ids == o.transcript.ids &&
           transcript.vocab == o.transcript.vocab && label == o.label && seed == o.seed;
}

void CorpusSpec::validate() const {
    for (int n : samples_per_class)
        if (n < 0) throw ConfigError("per-class sample counts must be >= 0");
    if (frames_min < 4 || frames_max < frames_min) throw ConfigError("frame range must satisfy 4 <= min <= max");
    if (n_phonemes < 2) throw ConfigError("need at least two phonemes");
    if (kLowBin + (n_phonemes - 1) * bin_step(n_phonemes) > kSamplesPerFrame / 2 - 8)
        throw ConfigError("too many phonemes for the tone map");
    if (video_dim < 1) throw ConfigError("video_dim must be >= 1");
    if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
    if (!(correlation_strength > 0.0 && correlation_strength <= 1.0))
        throw ConfigError("correlation_strength must be in (0, 1]");
    if (test_percent < 0 || test_percent > 100) throw ConfigError("test_percent must be in [0, 100]");
    if (successors_per_phoneme < 1) throw ConfigError("successors_per_phoneme must be >= 1");
}

int CorpusSpec::total() const { return std::accumulate(samples_per_class.begin(), samples_per_class.end(), 0); }

void to_json(nlohmann::json& j, const CorpusSpec& s) {
    j = nlohmann::json{{"samples_per_class", s.samples_per_class},
                       {"frames_min", s.frames_min},
                       {"frames_max", s.frames_max},
                       {"n_phonemes", s.n_phonemes},
                       {"video_dim", s.video_dim},
                       {"noise_std", s.noise_std},
                       {"correlation_strength", s.correlation_strength},
                       {"master_seed", s.master_seed},
                       {"test_percent", s.test_percent},
                       {"projection_seed", s.projection_seed},
                       {"grammar_seed", s.grammar_seed},
                       {"successors_per_phoneme", s.successors_per_phoneme}};
}

void from_json(const nlohmann::json& j, CorpusSpec& s) {
    CorpusSpec d;
    s.samples_per_class = j.value("samples_per_class", d.samples_per_class);
    s.frames_min = j.value("frames_min", d.frames_min);
    s.frames_max = j.value("frames_max", d.frames_max);
    s.n_phonemes = j.value("n_phonemes", d.n_phonemes);
    s.video_dim = j.value("video_dim", d.video_dim);
    s.noise_std = j.value("noise_std", d.noise_std);
    s.correlation_strength = j.value("correlation_strength", d.correlation_strength);
    s.master_seed = j.value("master_seed", d.master_seed);
    s.test_percent = j.value("test_percent", d.test_percent);
    s.projection_seed = j.value("projection_seed", d.projection_seed);
    s.grammar_seed = j.value("grammar_seed", d.grammar_seed);
    s.successors_per_phoneme = j.value("successors_per_phoneme", d.successors_per_phoneme);
}

int frames_for_seed(const CorpusSpec& spec, std::uint64_t seed) {
    auto rng = make_rng(seed, {kFrames});
    return uniform_int(rng, spec.frames_min, spec.frames_max);
}

std::vector<int> frame_schedule(std::span<const int> ids, int frames) {
    std::vector<int> out(frames);
    const auto len = static_cast<long>(ids.size());
    for (int t = 0; t < frames; ++t) out[t] = ids[static_cast<std::size_t>(long(t) * len / frames)];
    return out;
}

int primary_bin(int phoneme, int vocab) { return kLowBin + phoneme * bin_step(vocab); }

int secondary_bin(int phoneme, int vocab) {
    const int step = bin_step(vocab);
    return kLowBin + ((phoneme * 17 + 5) % vocab) * step + step / 2;
}

std::vector<double> visual_projection(const CorpusSpec& spec) {
    auto rng = make_rng(spec.projection_seed);
    std::vector<double> proj(static_cast<std::size_t>(spec.n_phonemes) * spec.video_dim);
    for (auto& x : proj) x = normal(rng);
    return proj;
}

PhonemeSeq draw_transcript(const CorpusSpec& spec, int length, std::uint64_t seed) {
    if (length < 1) throw DataError("transcript length must be >= 1");
    const auto table = successor_table(spec);
    auto rng = make_rng(seed);
    PhonemeSeq seq{{}, spec.n_phonemes};
    seq.ids.push_back(uniform_int(rng, 0, spec.n_phonemes - 1));
    while (static_cast<int>(seq.ids.size()) < length) {
        const auto& next = table[seq.ids.back()];
        seq.ids.push_back(next[uniform_int(rng, 0, int(next.size()) - 1)]);
    }
    return seq;
}

bool is_phonotactic(const CorpusSpec& spec, std::span<const int> ids) {
    const auto table = successor_table(spec);
    for (std::size_t i = 1; i < ids.size(); ++i) {
        const auto& next = table[ids[i - 1]];
        if (!std::binary_search(next.begin(), next.end(), ids[i])) return false;
    }
    return true;
}

AVSample synthesize_sample(const PhonemeSeq& transcript, const DualLabel& label, const CorpusSpec& spec,
                           std::uint64_t seed) {
    spec.validate();
    transcript.validate();
    if (transcript.vocab != spec.n_phonemes) throw DataError("transcript vocabulary differs from corpus spec");
    const int frames = frames_for_seed(spec, seed);
    const int length = static_cast<int>(transcript.ids.size());
    if (length > frames)
        throw DataError("transcript of length " + std::to_string(length) + " exceeds " + std::to_string(frames) +
                        " frames");

    const int c = spec.n_phonemes;
    auto independent_stream = [&](Stream tag) {
        auto rng = make_rng(seed, {tag});
        std::vector<int> ids(length);
        for (auto& id : ids) id = uniform_int(rng, 0, c - 1);
        return ids;
    };

    const auto true_schedule = frame_schedule(transcript.ids, frames);
    auto audio_schedule =
        label.audio_fake ? frame_schedule(independent_stream(kAudioFakeStream), frames) : true_schedule;
    auto video_schedule =
        label.video_fake ? frame_schedule(independent_stream(kVideoFakeStream), frames) : true_schedule;
    {
        auto rng = make_rng(seed, {kAudioJitter});
        audio_schedule = jitter(std::move(audio_schedule), spec.correlation_strength, c, rng);
    }
    {
        auto rng = make_rng(seed, {kVideoJitter});
        video_schedule = jitter(std::move(video_schedule), spec.correlation_strength, c, rng);
    }

    AVSample s;
    s.frames = frames;
    s.video_dim = spec.video_dim;
    s.transcript = transcript;
    s.label = label;
    s.seed = seed;

    s.waveform.resize(static_cast<std::size_t>(frames) * kSamplesPerFrame);
    {
        auto rng = make_rng(seed, {kAudioNoise});
        for (int t = 0; t < frames; ++t) {
            const double f1 = primary_bin(audio_schedule[t], c) * kBinHz;
            const double f2 = secondary_bin(audio_schedule[t], c) * kBinHz;
            for (int k = 0; k < kSamplesPerFrame; ++k) {
                const int n = t * kSamplesPerFrame + k;
                const double time = double(n) / kSampleRate;
                double x = kPrimaryAmp * std::sin(2.0 * std::numbers::pi * f1 * time) +
                           kSecondaryAmp * std::sin(2.0 * std::numbers::pi * f2 * time);
                if (spec.noise_std > 0) x += normal(rng, 0.0, spec.noise_std);
                s.waveform[n] = static_cast<float>(x);
            }
        }
    }

    const auto proj = visual_projection(spec);
    const int d = spec.video_dim;
    s.video_rows.resize(static_cast<std::size_t>(frames) * d);
    {
        auto rng = make_rng(seed, {kVideoNoise});
        for (int t = 0; t < frames; ++t)
            for (int j = 0; j < d; ++j) {
                double x = proj[static_cast<std::size_t>(video_schedule[t]) * d + j];
                if (spec.noise_std > 0) x += normal(rng, 0.0, spec.noise_std);
                s.video_rows[static_cast<std::size_t>(t) * d + j] = static_cast<float>(x);
            }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Sample codec

std::vector<std::uint8_t> encode_sample(const AVSample& s) {
    s.transcript.validate();
    if (s.frames < 1 || s.waveform.size() != std::size_t(s.frames) * kSamplesPerFrame ||
        s.video_rows.size() != std::size_t(s.frames) * s.video_dim)
        throw DataError("sample arrays do not match its frame count");
    check_finite(s.waveform, "waveform");
    check_finite(s.video_rows, "video rows");

    ByteWriter w;
    w.put_bytes(kMagic.data(), kMagic.size());
    w.put<std::uint8_t>(kVersion);
    w.put<std::uint32_t>(s.frames);
    w.put<std::uint32_t>(s.transcript.vocab);
    w.put<std::uint32_t>(s.video_dim);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.transcript.ids.size()));
    w.put<std::uint32_t>((s.label.audio_fake ? 1u : 0u) | (s.label.video_fake ? 2u : 0u));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.sample_id.size()));
    w.put<std::uint64_t>(s.seed);
    w.put_bytes(s.sample_id.data(), s.sample_id.size());
    w.put_bytes(s.waveform.data(), s.waveform.size() * sizeof(float));
    w.put_bytes(s.video_rows.data(), s.video_rows.size() * sizeof(float));
    for (int id : s.transcript.ids) w.put<std::uint16_t>(static_cast<std::uint16_t>(id));
    return w.take();
}

AVSample decode_sample(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kMagic.size() + 1 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
        throw FormatError("not an .avs sample file (bad magic)");
    if (bytes[kMagic.size()] != kVersion)
        throw FormatError("unsupported .avs version " + std::to_string(bytes[kMagic.size()]));

    ByteReader r(bytes.subspan(kMagic.size() + 1));
    AVSample s;
    s.frames = static_cast<int>(r.get<std::uint32_t>());
    s.transcript.vocab = static_cast<int>(r.get<std::uint32_t>());
    s.video_dim = static_cast<int>(r.get<std::uint32_t>());
    const auto length = r.get<std::uint32_t>();
    const auto label_bits = r.get<std::uint32_t>();
    const auto id_len = r.get<std::uint32_t>();
    s.seed = r.get<std::uint64_t>();
    if (label_bits > 3) throw CorruptionError("label bits out of range");
    s.label = DualLabel{(label_bits & 1u) != 0, (label_bits & 2u) != 0};

    const std::uint64_t expected = std::uint64_t(id_len) + std::uint64_t(s.frames) * kSamplesPerFrame * 4 +
                                   std::uint64_t(s.frames) * s.video_dim * 4 + std::uint64_t(length) * 2;
    if (expected != r.remaining())
        throw CorruptionError("payload length " + std::to_string(r.remaining()) + " does not match header (" +
                              std::to_string(expected) + ")");

    s.sample_id.resize(id_len);
    r.get_bytes(s.sample_id.data(), id_len);
    s.waveform.resize(std::size_t(s.frames) * kSamplesPerFrame);
    r.get_bytes(s.waveform.data(), s.waveform.size() * sizeof(float));
    s.video_rows.resize(std::size_t(s.frames) * s.video_dim);
    r.get_bytes(s.video_rows.data(), s.video_rows.size() * sizeof(float));
    s.transcript.ids.resize(length);
    for (auto& id : s.transcript.ids) id = r.get<std::uint16_t>();
    try {
        s.transcript.validate();
    } catch (const DataError& e) {
        throw CorruptionError(e.what());
    }
    return s;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

void write_sample(const AVSample& sample, const std::filesystem::path& path) {
    write_file_atomic(path, encode_sample(sample));
}

AVSample read_sample(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open sample file " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_sample(bytes);
}

// ---------------------------------------------------------------------------
// Corpus + manifest

nlohmann::json Manifest::to_json() const {
    nlohmann::json samples_json = nlohmann::json::array();
    for (const auto& e : samples)
        samples_json.push_back({{"id", e.id},
                                {"path", e.path},
                                {"label", {int(e.label.audio_fake), int(e.label.video_fake)}},
                                {"frames", e.frames},
                                {"split", e.split}});
    return {{"version", version}, {"spec", spec}, {"samples", samples_json}};
}

Manifest Manifest::load(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest " + manifest_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest is not valid JSON: " + std::string(e.what()));
    }
    Manifest m;
    try {
        m.version = j.at("version").get<int>();
        if (m.version != 1) throw FormatError("unsupported manifest version " + std::to_string(m.version));
        m.spec = j.at("spec").get<CorpusSpec>();
        for (const auto& s : j.at("samples")) {
            ManifestEntry e;
            e.id = s.at("id").get<std::string>();
            e.path = s.at("path").get<std::string>();
            const auto lab = s.at("label").get<std::array<int, 2>>();
            e.label = DualLabel{lab[0] != 0, lab[1] != 0};
            e.frames = s.at("frames").get<int>();
            e.split = s.at("split").get<std::string>();
            m.samples.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed manifest: " + std::string(e.what()));
    }
    m.root = manifest_path.parent_path();
    return m;
}

std::vector<const ManifestEntry*> Manifest::split(const std::string& name) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : samples)
        if (e.split == name) out.push_back(&e);
    return out;
}

Manifest generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    const int total = spec.total();
    if (total == 0) throw ConfigError("corpus spec requests zero samples");

    Manifest m;
    m.spec = spec;
    m.root = out_dir;

    // Split: shuffle indices with the master seed, the first round(15%) are test.
    std::vector<int> order(total);
    std::iota(order.begin(), order.end(), 0);
    {
        auto rng = make_rng(spec.master_seed, {0x5b117});
        std::shuffle(order.begin(), order.end(), rng);
    }
    const int n_test = (total * spec.test_percent + 50) / 100;
    std::vector<bool> is_test(total, false);
    for (int i = 0; i < n_test; ++i) is_test[order[i]] = true;

    int index = 0;
    for (int category = 0; category < 4; ++category) {
        for (int k = 0; k < spec.samples_per_class[category]; ++k, ++index) {
            const auto seed = derive_seed(spec.master_seed, {static_cast<std::uint64_t>(index)});
            const int frames = frames_for_seed(spec, seed);
            auto len_rng = make_rng(seed, {0x7e47});
            const int len = uniform_int(len_rng, std::max(1, (frames + 3) / 4), std::max(1, frames / 2));
            const auto transcript = draw_transcript(spec, len, derive_seed(seed, {0x7e48}));
            auto sample = synthesize_sample(transcript, DualLabel::from_category(category), spec, seed);
            char id[16];
            std::snprintf(id, sizeof id, "s%06d", index);
            sample.sample_id = id;
            const std::string rel = std::string("samples/") + id + ".avs";
            write_sample(sample, out_dir / rel);
            m.samples.push_back({id, rel, sample.label, sample.frames, is_test[index] ? "test" : "train"});
        }
    }
    write_text_atomic(out_dir / "manifest.json", m.to_json().dump(2) + "\n");
    return m;
}

}  // namespace avdf::corpus
