// SPDX-License-Identifier: Apache-2.0
#include "avdf/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>

#include "avdf/dataset.hpp"
#include "avdf/errors.hpp"
#include "avdf/metrics.hpp"

namespace avdf::cli {

using nlohmann::json;

RunConfig RunConfig::desk() {
    RunConfig c;
    c.pretrain.max_steps = 400;
    return c;
}

RunConfig RunConfig::paper() {
    RunConfig c;
    c.model = model::ModelConfig::paper();
    c.pretrain = train::TrainConfig::paper();
    c.finetune = train::TrainConfig::paper();
    return c;
}

RunConfig RunConfig::preset(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

json RunConfig::to_json() const {
    json scen = json::array();
    for (const auto& s : scenarios) scen.push_back(s.name());
    return {{"corpus", corpus},
            {"model", model},
            {"pretrain", pretrain},
            {"finetune", finetune},
            {"eval", {{"scenarios", scen}}}};
}

void RunConfig::validate() const {
    corpus.validate();
    model.validate();
    pretrain.validate();
    finetune.validate();
    if (scenarios.empty()) throw ConfigError("eval.scenarios must not be empty");
    for (const auto& s : scenarios) s.validate();
    if (corpus.n_phonemes != model.n_phonemes) throw ConfigError("corpus.n_phonemes and model.n_phonemes differ");
    if (corpus.video_dim != model.video_dim) throw ConfigError("corpus.video_dim and model.video_dim differ");
}

namespace {

// Config values arrive as text; numbers and booleans become typed JSON.
json typed_value(const std::string& text) {
    if (text.empty()) return text;
    try {
        auto v = json::parse(text);
        if (v.is_number() || v.is_boolean()) return v;
    } catch (const json::exception&) {
    }
    return text;
}

RunConfig from_json_sections(const json& j) {
    RunConfig c;
    try {
        c.corpus = j.at("corpus").get<corpus::CorpusSpec>();
        c.model = j.at("model").get<model::ModelConfig>();
        c.pretrain = j.at("pretrain").get<train::TrainConfig>();
        c.finetune = j.at("finetune").get<train::TrainConfig>();
        c.scenarios.clear();
        const auto& scen = j.at("eval").at("scenarios");
        if (scen.is_string()) {
            c.scenarios.push_back(model::PresenceMask::from_name(scen.get<std::string>()));
        } else {
            for (const auto& s : scen) c.scenarios.push_back(model::PresenceMask::from_name(s.get<std::string>()));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad configuration value: ") + e.what());
    }
    return c;
}

bool compatible(const json& base, const json& v) {
    if (base.is_number()) return v.is_number();
    if (base.is_boolean()) return v.is_boolean();
    if (base.is_string()) return v.is_string();
    if (base.is_array()) return v.is_array() || (base.size() > 0 && v.is_number());
    return true;
}

data::Splits load_data(const fs::path& manifest, const model::ModelConfig& m, const train::TrainConfig& t) {
    return data::load_splits(corpus::Manifest::load(manifest), m, t.val_percent, t.seed);
}

const std::vector<data::Example>& pick_split(const data::Splits& s, const std::string& name) {
    if (name == "test") return s.test;
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

std::ofstream open_log(const std::optional<fs::path>& path, bool append) {
    std::ofstream out;
    if (path) {
        if (path->has_parent_path()) fs::create_directories(path->parent_path());
        out.open(*path, append ? std::ios::app : std::ios::trunc);
        if (!out) throw DataError("cannot open log file " + path->string());
    }
    return out;
}

fs::path run_stage(train::Stage stage, const RunConfig& cfg, const TrainArgs& args) {
    cfg.validate();
    auto out = open_log(args.log, args.resume.has_value());
    train::JsonlLog log(args.log ? &out : nullptr);
    const auto& tc = stage == train::Stage::kAvsr ? cfg.pretrain : cfg.finetune;

    train::Checkpoint ck;
    json resolved = cfg.to_json();
    if (args.resume) {
        auto prev = train::load_checkpoint(*args.resume);
        if (prev.stage != stage)
            throw ConfigError("cannot resume " + train::to_string(stage) + " from a " +
                              train::to_string(prev.stage) + " checkpoint");
        auto resumed_cfg = prev.train;
        if (args.max_steps) resumed_cfg.max_steps = *args.max_steps;
        const auto splits = load_data(args.manifest, prev.model, resumed_cfg);
        train::Trainer t(stage, prev.model, resumed_cfg, prev.params, splits, log);
        t.restore(prev);
        t.run();
        ck = t.checkpoint();
        resolved["model"] = prev.model;
        resolved[stage == train::Stage::kAvsr ? "pretrain" : "finetune"] = resumed_cfg;
        ck.extra = prev.extra;
        ck.extra["resumed_from"] = args.resume->string();
    } else {
        const auto splits = load_data(args.manifest, cfg.model, tc);
        if (stage == train::Stage::kAvsr) {
            ck = train::pretrain_avsr(splits, cfg.model, tc, log);
        } else if (args.init) {
            const auto init = train::load_checkpoint(*args.init);
            ck = train::finetune_detection(splits, &init, cfg.model, tc, log);
            ck.extra["init"] = args.init->string();
        } else {
            ck = train::finetune_detection(splits, nullptr, cfg.model, tc, log);
        }
    }
    ck.extra["resolved_config"] = resolved;
    ck.extra["corpus"] = fs::absolute(args.manifest).string();
    if (args.out.has_parent_path()) fs::create_directories(args.out.parent_path());
    train::save_checkpoint(ck, args.out);
    return args.out;
}

}  // namespace

json parse_config_text(const std::string& text) {
    std::istringstream in(text);
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error& e) {
        throw ConfigError(std::string("cannot parse config: ") + e.what());
    }
    json out = json::object();
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;
        if (item.parents.size() != 1)
            throw ConfigError("config key '" + item.name + "' must sit inside exactly one [section]");
        json value;
        if (item.inputs.size() == 1) {
            value = typed_value(item.inputs.front());
        } else {
            value = json::array();
            for (const auto& s : item.inputs) value.push_back(typed_value(s));
        }
        out[item.parents.front()][item.name] = value;
    }
    return out;
}

json parse_assignment(const std::string& text) {
    const auto eq = text.find('=');
    const auto dot = text.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
        throw ConfigError("override '" + text + "' must look like section.key=value");
    const std::string section = text.substr(0, dot);
    const std::string key = text.substr(dot + 1, eq - dot - 1);
    std::string value = text.substr(eq + 1);
    json v;
    if (value.size() >= 2 && value.front() == '[' && value.back() == ']') {
        v = json::array();
        std::istringstream parts(value.substr(1, value.size() - 2));
        std::string part;
        while (std::getline(parts, part, ',')) {
            part.erase(0, part.find_first_not_of(' '));
            part.erase(part.find_last_not_of(' ') + 1);
            if (!part.empty()) v.push_back(typed_value(part));
        }
    } else {
        v = typed_value(value);
    }
    return {{section, {{key, v}}}};
}

RunConfig apply_overrides(const RunConfig& base, const json& patch) {
    if (!patch.is_object()) throw ConfigError("configuration must be a table of sections");
    json j = base.to_json();
    for (const auto& [section, body] : patch.items()) {
        if (!j.contains(section)) throw ConfigError("unknown config section [" + section + "]");
        if (!body.is_object()) throw ConfigError("config section [" + section + "] must be a table");
        for (const auto& [key, value] : body.items()) {
            if (!j[section].contains(key)) throw ConfigError("unknown config key " + section + "." + key);
            const auto& current = j[section][key];
            if (!compatible(current, value)) throw ConfigError("config key " + section + "." + key + " has the wrong type");
            if (current.is_array() && value.is_number()) {
                for (auto& x : j[section][key]) x = value;
            } else {
                j[section][key] = value;
            }
        }
    }
    auto c = from_json_sections(j);
    c.validate();
    return c;
}

std::optional<std::uint64_t> env_seed() {
    const char* raw = std::getenv("AVDF_SEED");
    if (!raw || !*raw) return std::nullopt;
    const std::string s(raw);
    if (s.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("AVDF_SEED must be an unsigned integer, got '" + s + "'");
    try {
        return std::stoull(s);
    } catch (const std::exception&) {
        throw ConfigError("AVDF_SEED is out of range");
    }
}

RunConfig with_seed(RunConfig cfg, std::uint64_t seed) {
    cfg.corpus.master_seed = seed;
    cfg.pretrain.seed = seed;
    cfg.finetune.seed = seed;
    return cfg;
}

fs::path cmd_gen_corpus(const RunConfig& cfg, const fs::path& out_dir) {
    cfg.corpus.validate();
    const auto manifest = corpus::generate_corpus(cfg.corpus, out_dir);
    corpus::write_text_atomic(out_dir / "run_config.json", cfg.to_json().dump(2) + "\n");
    return out_dir / "manifest.json";
}

fs::path cmd_pretrain(const RunConfig& cfg, const TrainArgs& args) {
    if (args.init) throw ConfigError("--init only applies to finetune");
    return run_stage(train::Stage::kAvsr, cfg, args);
}

fs::path cmd_finetune(const RunConfig& cfg, const TrainArgs& args) {
    if (args.init && args.resume) throw ConfigError("--init and --resume are mutually exclusive");
    return run_stage(train::Stage::kDetect, cfg, args);
}

json cmd_eval(const fs::path& checkpoint, const fs::path& manifest, const std::vector<model::PresenceMask>& scenarios,
              const std::string& split) {
    const auto ck = train::load_checkpoint(checkpoint);
    if (ck.stage != train::Stage::kDetect) throw ConfigError("eval needs a detection checkpoint");
    const auto splits = load_data(manifest, ck.model, ck.train);
    const auto& examples = pick_split(splits, split);
    json reports = json::array();
    for (const auto& r : metrics::evaluate_scenarios(ck.model, ck.inference_params(), examples, scenarios))
        reports.push_back(r.to_json());
    return {{"report_version", metrics::kReportVersion},
            {"checkpoint", checkpoint.string()},
            {"split", split},
            {"step", ck.step},
            {"model", ck.model},
            {"reports", reports}};
}

json cmd_predict(const fs::path& checkpoint, const fs::path& sample, model::PresenceMask presence) {
    presence.validate();
    const auto ck = train::load_checkpoint(checkpoint);
    if (ck.stage != train::Stage::kDetect) throw ConfigError("predict needs a detection checkpoint");
    const auto s = corpus::read_sample(sample);
    const auto out = model::detect(ck.model, ck.inference_params(), model::make_inputs(s, ck.model), presence);
    json j{{"sample_id", s.sample_id}, {"presence", presence.name()}};
    if (presence.audio) j["p_audio_fake"] = out.p_audio_fake;
    if (presence.video) j["p_video_fake"] = out.p_video_fake;
    j["count_probs"] = out.count_probs;
    j["fused_real_score"] = out.fused_real_score;
    return j;
}

json cmd_ablate(const RunConfig& cfg, const AblateArgs& args) {
    cfg.validate();
    if (args.seeds.empty() || args.pretrain.empty() || args.mca.empty())
        throw ConfigError("ablation grid must not be empty");
    fs::create_directories(args.out_dir);
    json cells = json::array();
    const bool any_pretrain = std::find(args.pretrain.begin(), args.pretrain.end(), true) != args.pretrain.end();
    for (const auto seed : args.seeds) {
        const auto c = with_seed(cfg, seed);
        const auto splits = load_data(args.manifest, c.model, c.finetune);
        std::optional<train::Checkpoint> pre;
        if (any_pretrain) pre = train::pretrain_avsr(splits, c.model, c.pretrain);
        for (const bool use_pretrain : args.pretrain) {
            for (const auto mca : args.mca) {
                auto m = c.model;
                m.mca_mode = mca;
                const std::string name = std::string(use_pretrain ? "pretrained" : "fresh") + "_mca-" +
                                         model::to_string(mca) + "_seed-" + std::to_string(seed);
                std::ofstream log_file(args.out_dir / (name + ".jsonl"), std::ios::trunc);
                const auto ck = train::finetune_detection(splits, use_pretrain ? &*pre : nullptr, m, c.finetune,
                                                          train::JsonlLog(&log_file));
                const auto scored = metrics::score_examples(m, ck.inference_params(), splits.test, {true, true});
                const auto r = metrics::build_report(scored, {true, true}).to_json();
                cells.push_back({{"pretrain", use_pretrain},
                                 {"mca", model::to_string(mca)},
                                 {"seed", seed},
                                 {"steps", ck.step},
                                 {"OF1", r["OF1"]},
                                 {"CF1", r["CF1"]},
                                 {"WF1", r["WF1"]},
                                 {"AUC_audio", r["AUC_audio"]},
                                 {"AUC_video", r["AUC_video"]},
                                 {"AUC_fused", r["AUC_fused"]}});
            }
        }
    }
    json summary = json::array();
    for (const bool use_pretrain : args.pretrain) {
        for (const auto mca : args.mca) {
            double of1 = 0, cf1 = 0, wf1 = 0;
            int n = 0;
            for (const auto& cell : cells) {
                if (cell["pretrain"] != use_pretrain || cell["mca"] != model::to_string(mca)) continue;
                of1 += cell["OF1"].get<double>();
                cf1 += cell["CF1"].get<double>();
                wf1 += cell["WF1"].get<double>();
                ++n;
            }
            summary.push_back({{"pretrain", use_pretrain},
                               {"mca", model::to_string(mca)},
                               {"runs", n},
                               {"OF1_mean", of1 / n},
                               {"CF1_mean", cf1 / n},
                               {"WF1_mean", wf1 / n}});
        }
    }
    json report{{"report_version", metrics::kReportVersion},
                {"resolved_config", cfg.to_json()},
                {"seeds", args.seeds},
                {"cells", cells},
                {"summary", summary}};
    corpus::write_text_atomic(args.out_dir / "ablation.json", report.dump(2) + "\n");
    return report;
}

std::size_t cmd_export_embeddings(const fs::path& checkpoint, const fs::path& manifest, const fs::path& out_csv,
                                  const std::string& split) {
    const auto ck = train::load_checkpoint(checkpoint);
    if (ck.stage != train::Stage::kDetect) throw ConfigError("export-embeddings needs a detection checkpoint");
    const auto splits = load_data(manifest, ck.model, ck.train);
    const auto& examples = pick_split(splits, split);
    std::ostringstream csv;
    csv << "sample_id,category";
    for (int i = 0; i < ck.model.d_model; ++i) csv << ",v" << i;
    csv << "\n" << std::setprecision(9);
    for (const auto& e : examples) {
        const auto out = model::detect(ck.model, ck.inference_params(), e.inputs, {true, true});
        csv << e.id << "," << e.label.category_name();
        for (double v : out.embedding) csv << "," << v;
        csv << "\n";
    }
    if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
    corpus::write_text_atomic(out_csv, csv.str());
    return examples.size();
}

// ---------------------------------------------------------------------------

namespace {

struct Common {
    std::string preset = "desk";
    std::optional<std::string> config_file;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;

    void attach(CLI::App* cmd) {
        cmd->add_option("--preset", preset, "desk or paper")->capture_default_str();
        cmd->add_option("--config", config_file, "TOML-style config file")->check(CLI::ExistingFile);
        cmd->add_option("--seed", seed, "global seed (falls back to AVDF_SEED)");
        cmd->add_option("--set", sets, "override, e.g. finetune.max_steps=500");
    }

    // preset < AVDF_SEED < config file < --set < flags
    RunConfig resolve() const {
        auto cfg = RunConfig::preset(preset);
        if (const auto s = env_seed()) cfg = with_seed(cfg, *s);
        if (config_file) {
            std::ifstream in(*config_file);
            std::stringstream text;
            text << in.rdbuf();
            cfg = apply_overrides(cfg, parse_config_text(text.str()));
        }
        for (const auto& s : sets) cfg = apply_overrides(cfg, parse_assignment(s));
        if (seed) cfg = with_seed(cfg, *seed);
        return cfg;
    }
};

std::vector<model::PresenceMask> parse_scenarios(const std::vector<std::string>& names,
                                                 const std::vector<model::PresenceMask>& fallback) {
    if (names.empty()) return fallback;
    std::vector<model::PresenceMask> out;
    for (const auto& n : names) out.push_back(model::PresenceMask::from_name(n));
    return out;
}

void emit(std::ostream& out, const json& j, const std::optional<fs::path>& path, int indent = 2) {
    const auto text = j.dump(indent) + "\n";
    if (path) {
        if (path->has_parent_path()) fs::create_directories(path->parent_path());
        corpus::write_text_atomic(*path, text);
    }
    out << text;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Audio-visual deepfake detection on synthetic corpora", "avdf"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    // gen-corpus
    Common gen_common;
    fs::path gen_out;
    std::optional<int> per_class, frames_min, frames_max;
    auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic four-class corpus");
    gen_common.attach(gen);
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--samples-per-class", per_class, "samples in each of RR, RF, FR, FF");
    gen->add_option("--frames-min", frames_min);
    gen->add_option("--frames-max", frames_max);

    // pretrain / finetune
    Common pre_common, fine_common;
    TrainArgs pre_args, fine_args;
    std::optional<int> pre_threads, fine_threads;
    auto add_train = [&](CLI::App* cmd, Common& common, TrainArgs& a, std::optional<int>& threads) {
        common.attach(cmd);
        cmd->add_option("--corpus", a.manifest, "manifest.json")->required();
        cmd->add_option("--out", a.out, "checkpoint path")->required();
        cmd->add_option("--log", a.log, "JSON-lines training log");
        cmd->add_option("--resume", a.resume, "continue from a checkpoint");
        cmd->add_option("--max-steps", a.max_steps);
        cmd->add_option("--threads", threads);
    };
    auto* pre = app.add_subcommand("pretrain", "speech-recognition pretraining on real clips");
    add_train(pre, pre_common, pre_args, pre_threads);
    auto* fine = app.add_subcommand("finetune", "dual-label detection finetuning");
    add_train(fine, fine_common, fine_args, fine_threads);
    fine->add_option("--init", fine_args.init, "pretrained checkpoint (omit for fresh weights)");

    // eval
    fs::path eval_ckpt, eval_corpus;
    std::vector<std::string> eval_scen;
    std::string eval_split = "test";
    std::optional<fs::path> eval_out;
    auto* ev = app.add_subcommand("eval", "evaluate a detection checkpoint per presence scenario");
    ev->add_option("--checkpoint", eval_ckpt)->required();
    ev->add_option("--corpus", eval_corpus)->required();
    ev->add_option("--scenario", eval_scen, "av, audio or video (repeatable)");
    ev->add_option("--split", eval_split)->capture_default_str();
    ev->add_option("--out", eval_out, "also write the report here");

    // predict
    fs::path pred_ckpt, pred_sample;
    std::string pred_presence = "av";
    auto* pr = app.add_subcommand("predict", "score one sample file");
    pr->add_option("--checkpoint", pred_ckpt)->required();
    pr->add_option("--sample", pred_sample)->required();
    pr->add_option("--presence", pred_presence, "av, audio or video")->capture_default_str();

    // ablate
    Common abl_common;
    AblateArgs abl_args;
    std::vector<std::string> abl_mca, abl_pretrain;
    auto* ab = app.add_subcommand("ablate", "pretraining x compensation-mode grid over seeds");
    abl_common.attach(ab);
    ab->add_option("--corpus", abl_args.manifest)->required();
    ab->add_option("--out", abl_args.out_dir, "output directory")->required();
    ab->add_option("--seeds", abl_args.seeds, "seeds (default 1 2 3)");
    ab->add_option("--mca", abl_mca, "subset of none, audio, video");
    ab->add_option("--pretrain", abl_pretrain, "subset of on, off");

    // export-embeddings
    fs::path emb_ckpt, emb_corpus, emb_out;
    std::string emb_split = "test";
    auto* em = app.add_subcommand("export-embeddings", "write classifier embeddings as CSV");
    em->add_option("--checkpoint", emb_ckpt)->required();
    em->add_option("--corpus", emb_corpus)->required();
    em->add_option("--out", emb_out, "CSV path")->required();
    em->add_option("--split", emb_split)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
    }

    try {
        if (gen->parsed()) {
            auto cfg = gen_common.resolve();
            if (per_class) cfg.corpus.samples_per_class.fill(*per_class);
            if (frames_min) cfg.corpus.frames_min = *frames_min;
            if (frames_max) cfg.corpus.frames_max = *frames_max;
            out << cmd_gen_corpus(cfg, gen_out).string() << "\n";
        } else if (pre->parsed() || fine->parsed()) {
            const bool is_pre = pre->parsed();
            auto cfg = (is_pre ? pre_common : fine_common).resolve();
            auto& a = is_pre ? pre_args : fine_args;
            auto& tc = is_pre ? cfg.pretrain : cfg.finetune;
            if (a.max_steps) tc.max_steps = *a.max_steps;
            if (const auto t = is_pre ? pre_threads : fine_threads) tc.threads = *t;
            out << (is_pre ? cmd_pretrain(cfg, a) : cmd_finetune(cfg, a)).string() << "\n";
        } else if (ev->parsed()) {
            const auto defaults = RunConfig::desk().scenarios;
            emit(out, cmd_eval(eval_ckpt, eval_corpus, parse_scenarios(eval_scen, defaults), eval_split), eval_out);
        } else if (pr->parsed()) {
            out << cmd_predict(pred_ckpt, pred_sample, model::PresenceMask::from_name(pred_presence)).dump() << "\n";
        } else if (ab->parsed()) {
            const auto cfg = abl_common.resolve();
            if (!abl_mca.empty()) {
                abl_args.mca.clear();
                for (const auto& m : abl_mca) abl_args.mca.push_back(model::mca_mode_from_string(m));
            }
            if (!abl_pretrain.empty()) {
                abl_args.pretrain.clear();
                for (const auto& p : abl_pretrain) {
                    if (p != "on" && p != "off") throw ConfigError("--pretrain takes on or off, got '" + p + "'");
                    abl_args.pretrain.push_back(p == "on");
                }
            }
            const auto report = cmd_ablate(cfg, abl_args);
            out << report["summary"].dump(2) << "\n";
        } else if (em->parsed()) {
            const auto rows = cmd_export_embeddings(emb_ckpt, emb_corpus, emb_out, emb_split);
            out << rows << " rows written to " << emb_out.string() << "\n";
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return static_cast<int>(e.exit_code());
    } catch (const json::exception& e) {
        err << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::kConfig);
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::kData);
    }
    return 0;
}

}  // namespace avdf::cli
