// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the `avdf` executable. Each command is a
// plain function so tests and the acceptance runner can call it directly.
#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avdf/corpus.hpp"
#include "avdf/model.hpp"
#include "avdf/train.hpp"

namespace avdf::cli {

namespace fs = std::filesystem;

struct RunConfig {
    corpus::CorpusSpec corpus;
    model::ModelConfig model;
    train::TrainConfig pretrain;
    train::TrainConfig finetune;
    std::vector<model::PresenceMask> scenarios{{true, true}, {true, false}, {false, true}};

    static RunConfig desk();
    // Paper layer counts and width, batch 12, lr 1e-5.
    static RunConfig paper();
    static RunConfig preset(const std::string& name);
    nlohmann::json to_json() const;
    void validate() const;
};

// Parses TOML-style text ("[section]" headers, "key = value" lines) into
// {section: {key: value}}.
nlohmann::json parse_config_text(const std::string& text);

// Applies `patch` over `base`. Every section and key in the patch must exist
// in the base; throws ConfigError otherwise.
RunConfig apply_overrides(const RunConfig& base, const nlohmann::json& patch);

// "section.key=value" -> {section: {key: value}}.
nlohmann::json parse_assignment(const std::string& text);

// AVDF_SEED, when set. Throws ConfigError if it is not an unsigned integer.
std::optional<std::uint64_t> env_seed();

// Sets the corpus and both training seeds.
RunConfig with_seed(RunConfig cfg, std::uint64_t seed);

fs::path cmd_gen_corpus(const RunConfig& cfg, const fs::path& out_dir);

struct TrainArgs {
    fs::path manifest;
    fs::path out;
    std::optional<fs::path> log;
    std::optional<fs::path> resume;
    std::optional<fs::path> init;  // finetune only
    std::optional<int> max_steps;  // overrides the resumed checkpoint's budget
};

fs::path cmd_pretrain(const RunConfig& cfg, const TrainArgs& args);
fs::path cmd_finetune(const RunConfig& cfg, const TrainArgs& args);

// {"report_version", "checkpoint", "split", "reports": [...]}.
nlohmann::json cmd_eval(const fs::path& checkpoint, const fs::path& manifest,
                        const std::vector<model::PresenceMask>& scenarios, const std::string& split = "test");

nlohmann::json cmd_predict(const fs::path& checkpoint, const fs::path& sample, model::PresenceMask presence);

struct AblateArgs {
    fs::path manifest;
    fs::path out_dir;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<bool> pretrain{true, false};
    std::vector<model::McaMode> mca{model::McaMode::kNone, model::McaMode::kAudio, model::McaMode::kVideo};
};

// One cell per (pretrain, mca, seed), then per-(pretrain, mca) means.
nlohmann::json cmd_ablate(const RunConfig& cfg, const AblateArgs& args);

// Writes sample_id,category,v0..v{d-1}; returns the row count.
std::size_t cmd_export_embeddings(const fs::path& checkpoint, const fs::path& manifest, const fs::path& out_csv,
                                  const std::string& split = "test");

// Full argument handling; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace avdf::cli
