#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtmem/common.hpp"
#include "dtmem/model.hpp"
#include "dtmem/tasks.hpp"
#include "dtmem/train.hpp"

namespace dtmem {

enum class TargetReturnMode { DatasetMax, Multiple };

struct EvalConfig {
    int runs = 16;
    TargetReturnMode target_mode = TargetReturnMode::DatasetMax;
    double target_multiple = 1.0;  // scales the dataset max in Multiple mode
    bool persist_memory = true;    // carry memory across context windows in an episode
    int max_steps = 0;             // 0: the environment's own step limit
    std::int64_t anchor_episodes = 1000;  // Monte-Carlo budget for the random-policy anchor
    std::uint64_t anchor_seed = 7;

    void validate() const {
        if (runs < 3) throw ContractError("eval: runs must be >= 3 (Top3 needs three rollouts)");
        if (anchor_episodes < 1) throw ContractError("eval: anchor_episodes must be >= 1");
    }
};

// The paper's seed rule: run i uses seed i * 100.
inline std::vector<std::uint64_t> eval_seeds(int runs) {
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < runs; ++i) seeds.push_back(static_cast<std::uint64_t>(i) * 100);
    return seeds;
}

// rel-imp(%) = (score_model - score_dataset) / score_dataset * 100
inline double rel_imp(double score_model, double score_dataset) {
    if (score_dataset == 0.0)
        throw ContractError("rel_imp: zero dataset score leaves the baseline undefined");
    return (score_model - score_dataset) / score_dataset * 100.0;
}

// (raw - random) / (optimal - random): 0 at the random policy, 1 at optimal.
inline double normalized_score(double raw, double random_mean, double optimal) {
    if (optimal == random_mean)
        throw ContractError("normalized_score: optimal equals random, no scale");
    return (raw - random_mean) / (optimal - random_mean);
}

// One return-conditioned greedy episode. The context is the last K
// timesteps; each step feeds (rtg, state) plus a zero placeholder action for
// the current step, reads the action logits at the current state token, and
// decrements the return target by the observed reward.
inline double rollout(const Model& model, const TaskSpec& spec, std::uint64_t seed,
                      double target_return, const EvalConfig& cfg) {
    if (spec.state_dim() != model.config().backbone.state_dim)
        throw ContractError("rollout: task state dim " + std::to_string(spec.state_dim()) +
                            " != model " + std::to_string(model.config().backbone.state_dim));
    if (kActionCount != model.config().backbone.action_vocab)
        throw ContractError("rollout: action vocab mismatch");

    NoGradGuard guard;
    const std::int64_t k = model.config().backbone.context;
    Rng env_rng(seed);

    struct StepRecord {
        double rtg;
        std::vector<double> state;
        std::uint32_t action;
        std::int64_t t;
    };
    std::vector<StepRecord> history;

    EnvState env = reset_env(spec);
    double remaining = target_return;
    double episode_return = 0.0;
    Tensor memory_carry;  // undefined until first window when persisting
    std::int64_t t = 0;

    while (!env.done) {
        if (cfg.max_steps > 0 && t >= cfg.max_steps) break;
        history.push_back({remaining, encode_state(spec, env), 0u, t});
        const std::int64_t window =
            std::min<std::int64_t>(k, static_cast<std::int64_t>(history.size()));
        const std::size_t first = history.size() - static_cast<std::size_t>(window);

        Segment seg;
        for (std::int64_t i = 0; i < k; ++i) {
            if (i < window) {
                const StepRecord& rec = history[first + static_cast<std::size_t>(i)];
                seg.rtg.push_back(rec.rtg);
                seg.states.push_back(rec.state);
                seg.actions.push_back(rec.action);
                seg.rewards.push_back(0.0);
                seg.timesteps.push_back(rec.t);
                seg.pad.push_back(false);
            } else {
                seg.rtg.push_back(0.0);
                seg.states.emplace_back(static_cast<std::size_t>(spec.state_dim()), 0.0);
                seg.actions.push_back(0);
                seg.rewards.push_back(0.0);
                seg.timesteps.push_back(t + i);
                seg.pad.push_back(true);
            }
        }

        const Tensor* mem_in =
            (cfg.persist_memory && memory_carry.defined()) ? &memory_carry : nullptr;
        auto fwd = model.forward(seg, /*training=*/false, nullptr, mem_in);
        if (cfg.persist_memory) memory_carry = fwd.memory.memory_out;

        const std::int64_t row = window - 1;
        std::int64_t action = 0;
        for (std::int64_t a = 1; a < fwd.heads.action_logits.cols(); ++a)
            if (fwd.heads.action_logits.at(row, a) > fwd.heads.action_logits.at(row, action))
                action = a;

        history.back().action = static_cast<std::uint32_t>(action);
        const StepResult res = step(spec, env, static_cast<int>(action), env_rng);
        episode_return += res.reward;
        remaining -= res.reward;
        env = res.next;
        ++t;
    }
    return episode_return;
}

struct TaskAnchors {
    double optimal = 0.0;
    double random_mean = 0.0;
    double random_stderr = 0.0;
};

inline TaskAnchors task_anchors(const TaskSpec& spec, const EvalConfig& cfg) {
    TaskAnchors a;
    a.optimal = optimal_return(spec);
    const RandomPolicyStats rp = random_policy_stats(spec, cfg.anchor_episodes, cfg.anchor_seed);
    a.random_mean = rp.mean;
    a.random_stderr = rp.stderr_mean;
    return a;
}

struct TaskEvalResult {
    std::string task_id;
    Split split = Split::Train;
    std::vector<std::uint64_t> seeds;
    std::vector<double> returns;
    double target_return = 0.0;
    double average = 0.0;
    double top3 = 0.0;
    double dataset_mean = 0.0;
    double dataset_max = 0.0;
    TaskAnchors anchors;
    double optimal_normalized = 0.0;   // average, normalized random->optimal
    double dataset_normalized = 0.0;   // average, normalized random->dataset max
    double rel_improvement = 0.0;      // vs the behavior dataset mean

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["task_id"] = task_id;
        j["split"] = split == Split::Train ? "TRAIN" : "TEST";
        j["seeds"] = seeds;
        j["returns"] = returns;
        j["target_return"] = target_return;
        j["average"] = average;
        j["top3"] = top3;
        j["dataset_mean"] = dataset_mean;
        j["dataset_max"] = dataset_max;
        j["optimal_return"] = anchors.optimal;
        j["random_mean"] = anchors.random_mean;
        j["random_stderr"] = anchors.random_stderr;
        j["optimal_normalized"] = optimal_normalized;
        j["dataset_normalized"] = dataset_normalized;
        j["rel_improvement"] = rel_improvement;
        return j;
    }
};

inline double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

inline double top3_of(std::vector<double> xs) {
    if (xs.size() < 3) throw ContractError("top3: need at least 3 values");
    std::partial_sort(xs.begin(), xs.begin() + 3, xs.end(), std::greater<double>());
    return (xs[0] + xs[1] + xs[2]) / 3.0;
}

struct EvalReport {
    std::vector<TaskEvalResult> tasks;
    nlohmann::json config = nlohmann::json::object();

    double suite_average(Split split) const {
        std::vector<double> vals;
        for (const auto& t : tasks)
            if (t.split == split) vals.push_back(t.average);
        return mean_of(vals);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format_version"] = 1;
        j["type"] = "eval_report";
        j["config"] = config;
        j["tasks"] = nlohmann::json::array();
        for (const auto& t : tasks) j["tasks"].push_back(t.to_json());
        nlohmann::json agg;
        std::vector<double> train_avg, test_avg, train_top3, test_top3;
        for (const auto& t : tasks) {
            (t.split == Split::Train ? train_avg : test_avg).push_back(t.average);
            (t.split == Split::Train ? train_top3 : test_top3).push_back(t.top3);
        }
        agg["train_average"] = mean_of(train_avg);
        agg["train_top3"] = mean_of(train_top3);
        agg["test_average"] = mean_of(test_avg);
        agg["test_top3"] = mean_of(test_top3);
        j["aggregate"] = agg;
        return j;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open '" + path + "' for writing");
        out << to_json().dump(2) << "\n";
    }

    // Raw per-rollout returns; the report is recomputable from this file.
    void save_raw_csv(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open '" + path + "' for writing");
        out << "task_id,seed,return\n";
        for (const auto& t : tasks)
            for (std::size_t i = 0; i < t.returns.size(); ++i)
                out << t.task_id << "," << t.seeds[i] << ","
                    << nlohmann::json(t.returns[i]).dump() << "\n";
    }
};

// 16 seeded rollouts per task (seed = run * 100), Average and Top3, plus
// normalized scores against the BFS-optimal and random-policy anchors.
inline EvalReport evaluate_suite(const Model& model, const std::vector<TaskSpec>& tasks,
                                 const std::vector<DatasetManifest>& manifests,
                                 const EvalConfig& cfg) {
    cfg.validate();
    if (tasks.empty()) throw ContractError("evaluate_suite: no tasks");
    if (manifests.size() != tasks.size())
        throw ContractError("evaluate_suite: need one dataset manifest per task");

    EvalReport report;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const TaskSpec& spec = tasks[i];
        TaskEvalResult r;
        r.task_id = spec.task_id;
        r.split = spec.split;
        r.dataset_mean = manifests[i].mean_return;
        r.dataset_max = manifests[i].max_return;
        r.target_return = cfg.target_mode == TargetReturnMode::DatasetMax
                              ? manifests[i].max_return
                              : manifests[i].max_return * cfg.target_multiple;
        r.seeds = eval_seeds(cfg.runs);
        for (std::uint64_t seed : r.seeds)
            r.returns.push_back(rollout(model, spec, seed, r.target_return, cfg));
        r.average = mean_of(r.returns);
        r.top3 = top3_of(r.returns);
        r.anchors = task_anchors(spec, cfg);
        r.optimal_normalized = normalized_score(r.average, r.anchors.random_mean, r.anchors.optimal);
        r.dataset_normalized = r.dataset_max == r.anchors.random_mean
                                   ? 0.0
                                   : (r.average - r.anchors.random_mean) /
                                         (r.dataset_max - r.anchors.random_mean);
        r.rel_improvement = rel_imp(r.average, r.dataset_mean);
        report.tasks.push_back(std::move(r));
    }
    return report;
}

// Recomputes Average/Top3 from a persisted raw-returns CSV; oracle for the
// evaluation-protocol acceptance check.
struct RawStats {
    std::string task_id;
    std::vector<std::uint64_t> seeds;
    std::vector<double> returns;
    double average = 0.0;
    double top3 = 0.0;
};

inline std::vector<RawStats> recompute_from_raw_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != "task_id,seed,return")
        throw ParseError("raw csv '" + path + "': bad header");
    std::vector<RawStats> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw ParseError("raw csv '" + path + "': bad row '" + line + "'");
        const std::string task = line.substr(0, c1);
        if (out.empty() || out.back().task_id != task) {
            out.push_back({});
            out.back().task_id = task;
        }
        out.back().seeds.push_back(std::stoull(line.substr(c1 + 1, c2 - c1 - 1)));
        out.back().returns.push_back(std::stod(line.substr(c2 + 1)));
    }
    for (RawStats& r : out) {
        r.average = mean_of(r.returns);
        r.top3 = top3_of(r.returns);
    }
    return out;
}

// ---------------------------------------------------------------------------
// memory-size sweep

struct SweepRow {
    int slots = 0;
    double average = 0.0;
    double top3 = 0.0;
    std::vector<double> returns;
};

struct SweepReport {
    std::vector<SweepRow> rows;
    nlohmann::json config = nlohmann::json::object();

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format_version"] = 1;
        j["type"] = "sweep_report";
        j["config"] = config;
        j["rows"] = nlohmann::json::array();
        for (const SweepRow& r : rows) {
            nlohmann::json row;
            row["slots"] = r.slots;
            row["average"] = r.average;
            row["top3"] = r.top3;
            row["returns"] = r.returns;
            j["rows"].push_back(row);
        }
        return j;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open '" + path + "' for writing");
        out << to_json().dump(2) << "\n";
    }
};

// Trains one model per slot count at a fixed step budget and evaluates each
// with the full seed protocol. Budget = epochs * steps_per_epoch per count.
inline SweepReport memory_sweep(const std::vector<int>& slot_counts, ModelConfig model_cfg,
                                const TrainConfig& train_cfg, const EvalConfig& eval_cfg,
                                const TaskDataset& task, std::uint64_t model_seed) {
    if (slot_counts.empty()) throw ContractError("memory_sweep: no slot counts");
    SweepReport report;
    for (int slots : slot_counts) {
        model_cfg.memory.slots = slots;
        Model model(model_cfg, model_seed);
        pretrain(model, {task}, train_cfg);
        SweepRow row;
        row.slots = slots;
        for (std::uint64_t seed : eval_seeds(eval_cfg.runs))
            row.returns.push_back(
                rollout(model, task.spec, seed, task.manifest.max_return, eval_cfg));
        row.average = mean_of(row.returns);
        row.top3 = top3_of(row.returns);
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace dtmem
