#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtmem/common.hpp"
#include "dtmem/eval.hpp"
#include "dtmem/lora.hpp"
#include "dtmem/model.hpp"
#include "dtmem/tasks.hpp"
#include "dtmem/train.hpp"

namespace dtmem {

inline constexpr const char* kVersion = "dtmem 0.1.0";

struct SuiteConfig {
    std::string family = "GRID_NAV";
    int grid_size = 7;
    int train_tasks = 10;
    int test_tasks = 2;
    std::int64_t episodes = 200;       // per training task
    double finetune_fraction = 0.1;    // test-task data size relative to train
    std::uint64_t seed = 0;
    std::vector<double> epsilons{0.0, 0.3, 0.7};  // behavior-policy mixture

    void validate() const {
        family_from_name(family);
        if (grid_size < 3) throw ContractError("suite.grid_size must be >= 3");
        if (train_tasks < 1 || test_tasks < 0) throw ContractError("suite task counts invalid");
        if (episodes < 1) throw ContractError("suite.episodes must be >= 1");
        if (finetune_fraction <= 0.0 || finetune_fraction > 1.0)
            throw ContractError("suite.finetune_fraction in (0, 1]");
        if (epsilons.empty()) throw ContractError("suite.epsilons must not be empty");
        for (double e : epsilons)
            if (e < 0.0 || e > 1.0) throw ContractError("suite.epsilons entries in [0, 1]");
    }
};

// The merged configuration every artifact embeds. Keys are flat and dotted;
// unknown keys are rejected so typos surface instead of silently defaulting.
struct RunConfig {
    RunConfig() { model.backbone.state_dim = 0; }  // 0: derive from the suite grid

    std::uint64_t seed = 0;  // model init + training stream
    ModelConfig model;
    LoraConfig lora;
    TrainConfig train;
    EvalConfig eval;
    SuiteConfig suite;

    std::string provenance_config_file;
    std::string provenance_overrides;
    std::string provenance_version = kVersion;

    // Desk-scale defaults are the struct defaults; this switches to the
    // paper-scale table values.
    void apply_paper_profile() {
        model.backbone.layers = 4;
        model.backbone.hidden = 512;
        model.backbone.heads = 8;
        model.backbone.context = 28;
        model.backbone.dropout = 0.1;
        model.memory.slots = 1290;
        train.lr = 1e-4;
        train.batch = 64;
        train.epochs = 1000;
        train.steps_per_epoch = 1000;
    }

    // state_dim tracks the suite grid unless set explicitly (non-zero).
    void finalize() {
        if (model.backbone.state_dim == 0)
            model.backbone.state_dim = suite.grid_size * suite.grid_size + 2;
        suite.validate();
        model.validate();
        lora.validate();
        train.validate();
        eval.validate();
    }

    nlohmann::json to_flat_json() const {
        nlohmann::json j;
        j["seed"] = seed;
        j["backbone.layers"] = model.backbone.layers;
        j["backbone.hidden"] = model.backbone.hidden;
        j["backbone.heads"] = model.backbone.heads;
        j["backbone.context"] = model.backbone.context;
        j["backbone.dropout"] = model.backbone.dropout;
        j["backbone.action_vocab"] = model.backbone.action_vocab;
        j["backbone.state_dim"] = model.backbone.state_dim;
        j["backbone.head_skip"] = model.backbone.head_skip;
        j["memory.slots"] = model.memory.slots;
        j["memory.rounds"] = model.memory.rounds;
        j["lora.rank"] = lora.rank;
        j["lora.alpha"] = lora.alpha;
        j["lora.dropout"] = lora.dropout;
        j["train.lr"] = train.lr;
        j["train.weight_decay"] = train.weight_decay;
        j["train.grad_clip"] = train.grad_clip;
        j["train.batch"] = train.batch;
        j["train.alpha_loss"] = train.alpha_loss;
        j["train.lambda_loss"] = train.lambda_loss;
        j["train.epochs"] = train.epochs;
        j["train.steps_per_epoch"] = train.steps_per_epoch;
        j["train.warmup_steps"] = train.warmup_steps;
        j["train.action_loss"] =
            train.action_loss == ActionLossKind::SquaredProbs ? "squared-probs" : "cross-entropy";
        j["train.literal_eq1"] = train.literal_eq1;
        j["train.finetune_steps"] = train.finetune_steps;
        j["eval.runs"] = eval.runs;
        j["eval.target_mode"] =
            eval.target_mode == TargetReturnMode::DatasetMax ? "dataset-max" : "multiple";
        j["eval.target_multiple"] = eval.target_multiple;
        j["eval.persist_memory"] = eval.persist_memory;
        j["eval.max_steps"] = eval.max_steps;
        j["eval.anchor_episodes"] = eval.anchor_episodes;
        j["eval.anchor_seed"] = eval.anchor_seed;
        j["suite.family"] = suite.family;
        j["suite.grid_size"] = suite.grid_size;
        j["suite.train_tasks"] = suite.train_tasks;
        j["suite.test_tasks"] = suite.test_tasks;
        j["suite.episodes"] = suite.episodes;
        j["suite.finetune_fraction"] = suite.finetune_fraction;
        j["suite.seed"] = suite.seed;
        j["suite.epsilons"] = suite.epsilons;
        j["provenance.config_file"] = provenance_config_file;
        j["provenance.overrides"] = provenance_overrides;
        j["provenance.version"] = provenance_version;
        return j;
    }

    void set_key(const std::string& key, const nlohmann::json& v) {
        try {
            if (key == "seed") seed = v.get<std::uint64_t>();
            else if (key == "backbone.layers") model.backbone.layers = v.get<int>();
            else if (key == "backbone.hidden") model.backbone.hidden = v.get<int>();
            else if (key == "backbone.heads") model.backbone.heads = v.get<int>();
            else if (key == "backbone.context") model.backbone.context = v.get<int>();
            else if (key == "backbone.dropout") model.backbone.dropout = v.get<double>();
            else if (key == "backbone.action_vocab") model.backbone.action_vocab = v.get<int>();
            else if (key == "backbone.state_dim") model.backbone.state_dim = v.get<int>();
            else if (key == "backbone.head_skip") model.backbone.head_skip = v.get<bool>();
            else if (key == "memory.slots") model.memory.slots = v.get<int>();
            else if (key == "memory.rounds") model.memory.rounds = v.get<int>();
            else if (key == "lora.rank") lora.rank = v.get<int>();
            else if (key == "lora.alpha") lora.alpha = v.get<double>();
            else if (key == "lora.dropout") lora.dropout = v.get<double>();
            else if (key == "train.lr") train.lr = v.get<double>();
            else if (key == "train.weight_decay") train.weight_decay = v.get<double>();
            else if (key == "train.grad_clip") train.grad_clip = v.get<double>();
            else if (key == "train.batch") train.batch = v.get<int>();
            else if (key == "train.alpha_loss") train.alpha_loss = v.get<double>();
            else if (key == "train.lambda_loss") train.lambda_loss = v.get<double>();
            else if (key == "train.epochs") train.epochs = v.get<int>();
            else if (key == "train.steps_per_epoch") train.steps_per_epoch = v.get<int>();
            else if (key == "train.warmup_steps") train.warmup_steps = v.get<int>();
            else if (key == "train.action_loss") {
                const std::string s = v.get<std::string>();
                if (s == "squared-probs") train.action_loss = ActionLossKind::SquaredProbs;
                else if (s == "cross-entropy") train.action_loss = ActionLossKind::CrossEntropy;
                else throw ContractError("train.action_loss: '" + s + "'");
            } else if (key == "train.literal_eq1") train.literal_eq1 = v.get<bool>();
            else if (key == "train.finetune_steps") train.finetune_steps = v.get<int>();
            else if (key == "eval.runs") eval.runs = v.get<int>();
            else if (key == "eval.target_mode") {
                const std::string s = v.get<std::string>();
                if (s == "dataset-max") eval.target_mode = TargetReturnMode::DatasetMax;
                else if (s == "multiple") eval.target_mode = TargetReturnMode::Multiple;
                else throw ContractError("eval.target_mode: '" + s + "'");
            } else if (key == "eval.target_multiple") eval.target_multiple = v.get<double>();
            else if (key == "eval.persist_memory") eval.persist_memory = v.get<bool>();
            else if (key == "eval.max_steps") eval.max_steps = v.get<int>();
            else if (key == "eval.anchor_episodes") eval.anchor_episodes = v.get<std::int64_t>();
            else if (key == "eval.anchor_seed") eval.anchor_seed = v.get<std::uint64_t>();
            else if (key == "suite.family") suite.family = v.get<std::string>();
            else if (key == "suite.grid_size") suite.grid_size = v.get<int>();
            else if (key == "suite.train_tasks") suite.train_tasks = v.get<int>();
            else if (key == "suite.test_tasks") suite.test_tasks = v.get<int>();
            else if (key == "suite.episodes") suite.episodes = v.get<std::int64_t>();
            else if (key == "suite.finetune_fraction") suite.finetune_fraction = v.get<double>();
            else if (key == "suite.seed") suite.seed = v.get<std::uint64_t>();
            else if (key == "suite.epsilons") suite.epsilons = v.get<std::vector<double>>();
            else if (key.rfind("provenance.", 0) == 0 || key.rfind("finetune.", 0) == 0 ||
                     key == "train.optimizer_step" || key == "train.rng_state" ||
                     key == "eval.checkpoint") {
                // provenance and trainer-state entries ride along untyped
            } else {
                throw ContractError("unknown config key '" + key + "'");
            }
        } catch (const nlohmann::json::exception&) {
            throw ContractError("config key '" + key + "' has the wrong type: " + v.dump());
        }
    }

    static RunConfig from_flat_json(const nlohmann::json& j) {
        RunConfig cfg;
        for (const auto& [key, value] : j.items()) cfg.set_key(key, value);
        return cfg;
    }

    static RunConfig load_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open config '" + path + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("config '" + path + "': " + e.what());
        }
        if (!j.is_object()) throw ParseError("config '" + path + "': not a JSON object");
        RunConfig cfg = from_flat_json(j);
        cfg.provenance_config_file = path;
        return cfg;
    }
};

// "key=value" override; the value is parsed as JSON when possible, else
// taken as a string.
inline void apply_override(RunConfig& cfg, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
        throw ContractError("override '" + spec + "' is not of the form key=value");
    const std::string key = spec.substr(0, eq);
    const std::string raw = spec.substr(eq + 1);
    nlohmann::json v = nlohmann::json::parse(raw, nullptr, false);
    if (v.is_discarded()) v = raw;
    cfg.set_key(key, v);
}

}  // namespace dtmem
