// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "avdf/corpus.hpp"
#include "avdf/errors.hpp"
#include "avdf/train.hpp"

namespace avdf::train {

namespace {

constexpr char kMagic[8] = {'A', 'V', 'D', 'F', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

struct Group {
    const char* name;
    const ParamSet* set;
};

template <class T>
void append_raw(std::vector<std::uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

}  // namespace

std::string Checkpoint::rng_digest() const {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << derive_seed(train.seed, {static_cast<std::uint64_t>(step)});
    return s.str();
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt, BlobType type) {
    std::vector<Group> groups{{"params", &ckpt.params}, {"adam.m", &ckpt.adam.m}, {"adam.v", &ckpt.adam.v}};
    if (ckpt.best_params) groups.push_back({"best", &*ckpt.best_params});
    const std::size_t width = type == BlobType::kF32 ? 4 : 8;

    nlohmann::json tensors = nlohmann::json::array();
    std::vector<std::uint8_t> blob;
    for (const auto& grp : groups) {
        for (int i = 0; i < grp.set->size(); ++i) {
            const auto& m = (*grp.set)[i];
            tensors.push_back({{"group", grp.name},
                               {"name", grp.set->name(i)},
                               {"rows", m.rows()},
                               {"cols", m.cols()},
                               {"dtype", width == 4 ? "f32" : "f64"},
                               {"offset", blob.size()}});
            for (Eigen::Index k = 0; k < m.size(); ++k) {
                if (width == 4) append_raw(blob, static_cast<float>(m.data()[k]));
                else append_raw(blob, m.data()[k]);
            }
        }
    }

    nlohmann::json header{{"format", "avdf-checkpoint"},
                          {"version", {{"major", kCheckpointMajor}, {"minor", kCheckpointMinor}}},
                          {"stage", to_string(ckpt.stage)},
                          {"step", ckpt.step},
                          {"model", ckpt.model},
                          {"train", ckpt.train},
                          {"adam", {{"t", ckpt.adam.t}}},
                          {"early_stop",
                           {{"best_metric", ckpt.early.best_metric},
                            {"best_step", ckpt.early.best_step},
                            {"evals_since_best", ckpt.early.evals_since_best},
                            {"stopped", ckpt.early.stopped}}},
                          {"rng_digest", ckpt.rng_digest()},
                          {"extra", ckpt.extra},
                          {"tensors", tensors},
                          {"blob_bytes", blob.size()}};
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kMagic, kMagic + 8);
    append_raw(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), blob.begin(), blob.end());
    return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw FormatError("not a checkpoint (bad magic)");
    std::uint32_t header_len = 0;
    std::memcpy(&header_len, bytes.data() + 8, 4);
    if (bytes.size() < 12 + std::size_t(header_len)) throw CorruptionError("checkpoint header is truncated");

    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    const auto blob = bytes.subspan(12 + header_len);

    Checkpoint c;
    try {
        const int major = h.at("version").at("major").get<int>();
        if (major != kCheckpointMajor)
            throw FormatError("unsupported checkpoint major version " + std::to_string(major));
        if (h.at("blob_bytes").get<std::size_t>() != blob.size())
            throw CorruptionError("checkpoint payload length does not match its header");
        c.stage = stage_from_string(h.at("stage").get<std::string>());
        c.step = h.at("step").get<long>();
        c.model = h.at("model").get<model::ModelConfig>();
        c.train = h.at("train").get<TrainConfig>();
        const auto& es = h.at("early_stop");
        c.early.best_metric = es.at("best_metric").get<double>();
        c.early.best_step = es.at("best_step").get<long>();
        c.early.evals_since_best = es.at("evals_since_best").get<int>();
        c.early.stopped = es.at("stopped").get<bool>();
        c.extra = h.value("extra", nlohmann::json::object());

        ParamSet params, m, v, best;
        for (const auto& t : h.at("tensors")) {
            const auto group = t.at("group").get<std::string>();
            const auto rows = t.at("rows").get<Eigen::Index>();
            const auto cols = t.at("cols").get<Eigen::Index>();
            const auto dtype = t.at("dtype").get<std::string>();
            const auto offset = t.at("offset").get<std::size_t>();
            if (rows < 0 || cols < 0) throw CorruptionError("negative tensor shape in checkpoint");
            const std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
            if (width == 0) throw FormatError("unknown tensor dtype '" + dtype + "'");
            const std::size_t count = std::size_t(rows) * std::size_t(cols);
            if (offset > blob.size() || count * width > blob.size() - offset)
                throw CorruptionError("tensor '" + t.at("name").get<std::string>() + "' runs past the payload");
            nn::Mat mat(rows, cols);
            for (std::size_t k = 0; k < count; ++k) {
                if (width == 4) {
                    float f;
                    std::memcpy(&f, blob.data() + offset + 4 * k, 4);
                    mat.data()[k] = f;
                } else {
                    std::memcpy(mat.data() + k, blob.data() + offset + 8 * k, 8);
                }
            }
            ParamSet* dst = group == "params" ? &params
                            : group == "adam.m" ? &m
                            : group == "adam.v" ? &v
                            : group == "best"   ? &best
                                                : nullptr;
            if (dst) dst->add(t.at("name").get<std::string>(), std::move(mat));
        }
        if (!params.same_layout(model::init_params(c.model, 0)))
            throw CorruptionError("checkpoint parameters do not match its model configuration");
        c.params = std::move(params);
        c.adam = Adam(c.params, c.train.beta1, c.train.beta2, c.train.adam_eps);
        if (m.size() > 0) {
            if (!m.same_layout(c.params) || !v.same_layout(c.params))
                throw CorruptionError("optimizer state does not match the parameters");
            c.adam.m = std::move(m);
            c.adam.v = std::move(v);
        }
        c.adam.t = h.at("adam").at("t").get<long>();
        if (best.size() > 0) {
            if (!best.same_layout(c.params)) throw CorruptionError("best parameters do not match the model");
            c.best_params = std::move(best);
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("malformed checkpoint header: ") + e.what());
    } catch (const ConfigError& e) {
        throw CorruptionError(std::string("checkpoint holds an invalid configuration: ") + e.what());
    }
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, BlobType type) {
    corpus::write_file_atomic(path, encode_checkpoint(ckpt, type));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace avdf::train
