// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "avdf/corpus.hpp"
#include "avdf/model.hpp"

namespace avdf::data {

// A sample with its features already extracted.
struct Example {
    std::string id;
    model::ModelInputs inputs;
    std::vector<int> transcript;
    corpus::DualLabel label;
};

Example make_example(const corpus::AVSample& sample, const model::ModelConfig& cfg);

struct Splits {
    std::vector<Example> train;
    std::vector<Example> val;  // carved out of the manifest's train split
    std::vector<Example> test;
};

// Loads and featurises every sample in the manifest. `val_percent` of the
// train split (chosen deterministically from `seed`) becomes validation.
Splits load_splits(const corpus::Manifest& manifest, const model::ModelConfig& cfg, int val_percent,
                   std::uint64_t seed);

}  // namespace avdf::data
