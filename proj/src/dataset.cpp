// SPDX-License-Identifier: Apache-2.0
#include "avdf/dataset.hpp"

#include <algorithm>
#include <numeric>

#include "avdf/errors.hpp"
#include "avdf/random.hpp"

namespace avdf::data {

Example make_example(const corpus::AVSample& sample, const model::ModelConfig& cfg) {
    if (sample.transcript.vocab != cfg.n_phonemes)
        throw ConfigError("sample vocabulary " + std::to_string(sample.transcript.vocab) +
                          " does not match model n_phonemes " + std::to_string(cfg.n_phonemes));
    return {sample.sample_id, model::make_inputs(sample, cfg), sample.transcript.ids, sample.label};
}

Splits load_splits(const corpus::Manifest& manifest, const model::ModelConfig& cfg, int val_percent,
                   std::uint64_t seed) {
    if (val_percent < 0 || val_percent >= 100) throw ConfigError("val_percent must be in [0, 100)");
    Splits s;
    std::vector<Example> train_all;
    for (const auto& e : manifest.samples) {
        auto ex = make_example(corpus::read_sample(manifest.root / e.path), cfg);
        if (ex.label != e.label) throw CorruptionError("label of " + e.id + " disagrees with the manifest");
        if (e.split == "test") s.test.push_back(std::move(ex));
        else if (e.split == "train") train_all.push_back(std::move(ex));
        else throw FormatError("unknown split '" + e.split + "' for " + e.id);
    }
    std::vector<std::size_t> order(train_all.size());
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(seed, {0xa11da7e});
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_val = (train_all.size() * val_percent + 50) / 100;
    std::vector<bool> is_val(train_all.size(), false);
    for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
    for (std::size_t i = 0; i < train_all.size(); ++i)
        (is_val[i] ? s.val : s.train).push_back(std::move(train_all[i]));
    return s;
}

}  // namespace avdf::data
