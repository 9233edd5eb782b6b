#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dtmem/checkpoint.hpp"
#include "dtmem/common.hpp"
#include "dtmem/model.hpp"
#include "dtmem/tasks.hpp"
#include "dtmem/tensor.hpp"
#include "dtmem/trajectory.hpp"

namespace dtmem {

enum class ActionLossKind { SquaredProbs, CrossEntropy };

struct TrainConfig {
    double lr = 1e-3;             // desk default; the paper profile uses 1e-4
    double weight_decay = 1e-4;
    double grad_clip = 1.0;
    int batch = 16;               // paper profile: 64
    double alpha_loss = 1.0;      // reward-term weight
    double lambda_loss = 1.0;     // return-term weight
    int epochs = 10;
    int steps_per_epoch = 30;
    int warmup_steps = 100;       // linear warmup, then constant
    std::uint64_t seed = 0;
    ActionLossKind action_loss = ActionLossKind::SquaredProbs;
    bool literal_eq1 = false;     // swap reward/return targets as printed in the loss
    int finetune_steps = 2000;

    void validate() const {
        if (lr < 0 || weight_decay < 0 || grad_clip <= 0 || batch < 1 || epochs < 1 ||
            steps_per_epoch < 1 || warmup_steps < 0 || finetune_steps < 0)
            throw ContractError("train config: invalid field");
        if (alpha_loss < 0 || lambda_loss < 0)
            throw ContractError("train config: loss weights must be non-negative");
    }
};

// ---------------------------------------------------------------------------
// loss

// The three-term objective over one segment, averaged over unpadded steps:
//   sum_t ||softmax(action_logits)_t - onehot(a_t)||^2
//        + alpha (reward_pred_t - r_t)^2 + lambda (rtg_pred_t - rtg_t)^2
// With literal_eq1 the reward head targets rtg_t and the return head r_t.
// CrossEntropy mode swaps the action term for -log p(a_t).
inline Tensor segment_loss(const HeadOutputs& pred, const Segment& seg, const TrainConfig& cfg) {
    const std::int64_t k = seg.length();
    const std::int64_t vocab = pred.action_logits.cols();
    const std::int64_t n = seg.unpadded_count();
    if (n == 0) throw ContractError("segment_loss: all positions padded");
    if (pred.action_logits.rows() != k)
        throw ShapeError("segment_loss: prediction rows " +
                         std::to_string(pred.action_logits.rows()) + " vs segment length " +
                         std::to_string(k));

    std::vector<double> onehot(static_cast<std::size_t>(k * vocab), 0.0);
    std::vector<double> mask_wide(static_cast<std::size_t>(k * vocab), 0.0);
    std::vector<double> mask_col(static_cast<std::size_t>(k), 0.0);
    std::vector<double> pad_col(static_cast<std::size_t>(k), 0.0);
    std::vector<double> reward_t(static_cast<std::size_t>(k), 0.0);
    std::vector<double> rtg_t(static_cast<std::size_t>(k), 0.0);
    for (std::int64_t t = 0; t < k; ++t) {
        if (seg.pad[static_cast<std::size_t>(t)]) {
            pad_col[static_cast<std::size_t>(t)] = 1.0;
            continue;
        }
        mask_col[static_cast<std::size_t>(t)] = 1.0;
        onehot[static_cast<std::size_t>(t * vocab + seg.actions[static_cast<std::size_t>(t)])] =
            1.0;
        for (std::int64_t a = 0; a < vocab; ++a)
            mask_wide[static_cast<std::size_t>(t * vocab + a)] = 1.0;
        reward_t[static_cast<std::size_t>(t)] = seg.rewards[static_cast<std::size_t>(t)];
        rtg_t[static_cast<std::size_t>(t)] = seg.rtg[static_cast<std::size_t>(t)];
    }

    Tensor probs = softmax_rows(pred.action_logits);
    Tensor action_term;
    if (cfg.action_loss == ActionLossKind::SquaredProbs) {
        Tensor diff = sub(probs, Tensor::from_values({k, vocab}, std::move(onehot)));
        action_term = sum(mul(mul(diff, diff), Tensor::from_values({k, vocab}, std::move(mask_wide))));
    } else {
        Tensor picked = matmul(mul(probs, Tensor::from_values({k, vocab}, std::move(onehot))),
                               Tensor::full({vocab, 1}, 1.0));
        // padded rows carry probability 0; substitute 1 so log stays finite
        Tensor safe = add(mul(picked, Tensor::from_values({k, 1}, mask_col)),
                          Tensor::from_values({k, 1}, pad_col));
        action_term = neg(sum(mul(log(safe), Tensor::from_values({k, 1}, mask_col))));
    }

    const std::vector<double>& reward_target = cfg.literal_eq1 ? rtg_t : reward_t;
    const std::vector<double>& rtg_target = cfg.literal_eq1 ? reward_t : rtg_t;
    Tensor mask = Tensor::from_values({k, 1}, mask_col);
    Tensor rdiff = sub(pred.reward_pred, Tensor::from_values({k, 1}, reward_target));
    Tensor gdiff = sub(pred.rtg_pred, Tensor::from_values({k, 1}, rtg_target));
    Tensor reward_term = sum(mul(mul(rdiff, rdiff), mask));
    Tensor rtg_term = sum(mul(mul(gdiff, gdiff), mask));

    Tensor total = add(action_term, add(scale(reward_term, cfg.alpha_loss),
                                        scale(rtg_term, cfg.lambda_loss)));
    return scale(total, 1.0 / static_cast<double>(n));
}

struct BatchMetrics {
    double loss = 0.0;
    double action_acc = 0.0;
    double reward_acc = 0.0;
    double rtg_acc = 0.0;
};

// Within-tolerance fraction used for the reward/return "accuracy" curves.
inline constexpr double kValueAccTolerance = 0.1;

inline void accumulate_metrics(BatchMetrics& m, const HeadOutputs& pred, const Segment& seg,
                               std::int64_t& positions) {
    for (std::int64_t t = 0; t < seg.length(); ++t) {
        if (seg.pad[static_cast<std::size_t>(t)]) continue;
        ++positions;
        std::int64_t best = 0;
        for (std::int64_t a = 1; a < pred.action_logits.cols(); ++a)
            if (pred.action_logits.at(t, a) > pred.action_logits.at(t, best)) best = a;
        if (best == static_cast<std::int64_t>(seg.actions[static_cast<std::size_t>(t)]))
            m.action_acc += 1.0;
        if (std::abs(pred.reward_pred.at(t, 0) - seg.rewards[static_cast<std::size_t>(t)]) <=
            kValueAccTolerance)
            m.reward_acc += 1.0;
        if (std::abs(pred.rtg_pred.at(t, 0) - seg.rtg[static_cast<std::size_t>(t)]) <=
            kValueAccTolerance)
            m.rtg_acc += 1.0;
    }
}

// ---------------------------------------------------------------------------
// optimizer

// AdamW with decoupled weight decay, bias correction, and a linear-warmup
// constant schedule. Parameter iteration order is the store's lexicographic
// order, so updates are deterministic.
class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, Tensor>> params, const TrainConfig& cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (const auto& [path, t] : params_) {
            moment1_[path].assign(static_cast<std::size_t>(t.size()), 0.0);
            moment2_[path].assign(static_cast<std::size_t>(t.size()), 0.0);
        }
    }

    std::int64_t step_count() const { return step_; }

    double schedule(std::int64_t step) const {
        if (cfg_.warmup_steps == 0) return 1.0;
        if (step >= cfg_.warmup_steps) return 1.0;
        return static_cast<double>(step + 1) / static_cast<double>(cfg_.warmup_steps);
    }

    // Scales all gradients so the global norm is at most max_norm.
    // Returns the pre-clip norm.
    double clip_gradients(double max_norm) {
        double sq = 0.0;
        for (const auto& [path, t] : params_) {
            if (!t.has_grad()) continue;
            for (double g : t.grad()) sq += g * g;
        }
        const double norm = std::sqrt(sq);
        if (norm > max_norm) {
            const double f = max_norm / norm;
            for (auto& [path, t] : params_) {
                if (!t.has_grad()) continue;
                for (double& g : t.grad_mut()) g *= f;
            }
        }
        return norm;
    }

    void step() {
        ++step_;
        const double lr_t = cfg_.lr * schedule(step_ - 1);
        const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
        for (auto& [path, t] : params_) {
            auto& m = moment1_[path];
            auto& v = moment2_[path];
            const bool has_grad = t.has_grad();
            auto& values = t.values_mut();
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double g = has_grad ? t.grad()[i] : 0.0;
                m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
                v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                values[i] -= lr_t * mhat / (std::sqrt(vhat) + kEps);
                values[i] -= lr_t * cfg_.weight_decay * values[i];
            }
        }
    }

    void export_state(Checkpoint& ck) const {
        for (const auto& [path, buf] : moment1_)
            ck.put("optim.m." + path, Tensor::from_values({static_cast<std::int64_t>(buf.size())},
                                                          buf));
        for (const auto& [path, buf] : moment2_)
            ck.put("optim.v." + path, Tensor::from_values({static_cast<std::int64_t>(buf.size())},
                                                          buf));
        ck.config["train.optimizer_step"] = step_;
    }

    void restore_state(const Checkpoint& ck) {
        for (auto& [path, buf] : moment1_)
            if (ck.has("optim.m." + path)) buf = ck.get("optim.m." + path).values();
        for (auto& [path, buf] : moment2_)
            if (ck.has("optim.v." + path)) buf = ck.get("optim.v." + path).values();
        step_ = ck.config.value("train.optimizer_step", std::int64_t{0});
    }

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    TrainConfig cfg_;
    std::int64_t step_ = 0;
    std::map<std::string, std::vector<double>> moment1_;
    std::map<std::string, std::vector<double>> moment2_;
};

// ---------------------------------------------------------------------------
// metrics stream

class MetricsCsv {
public:
    explicit MetricsCsv(const std::string& path) {
        if (path.empty()) return;
        out_.open(path);
        if (!out_) throw IoError("cannot open metrics file '" + path + "'");
        out_ << "step,loss,action_acc,reward_acc,rtg_acc,wallclock\n";
        start_ = std::chrono::steady_clock::now();
    }

    void log(std::int64_t step, const BatchMetrics& m) {
        if (!out_.is_open()) return;
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        out_ << step << "," << m.loss << "," << m.action_acc << "," << m.reward_acc << ","
             << m.rtg_acc << "," << wall << "\n";
    }

private:
    std::ofstream out_;
    std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// training loops

struct TaskDataset {
    TaskSpec spec;
    DatasetManifest manifest;
    std::vector<Segment> segments;
};

inline TaskDataset load_task_dataset(const TaskSpec& spec, const std::string& data_path,
                                     std::int64_t context) {
    TaskDataset ds;
    ds.spec = spec;
    ds.manifest = DatasetManifest::load(manifest_path_for(data_path));
    const std::vector<Trajectory> trajs = read_dataset(data_path);
    if (ds.manifest.episodes != static_cast<std::int64_t>(trajs.size()))
        throw FormatError("dataset '" + data_path + "': manifest says " +
                          std::to_string(ds.manifest.episodes) + " episodes, file has " +
                          std::to_string(trajs.size()));
    for (const Trajectory& t : trajs)
        for (Segment& s : segment(t, context)) ds.segments.push_back(std::move(s));
    if (ds.segments.empty()) throw ContractError("dataset '" + data_path + "' is empty");
    return ds;
}

struct TrainRunStats {
    double first_loss = 0.0;
    double last_loss = 0.0;
    std::int64_t steps = 0;
    std::vector<double> losses;
};

// One optimizer step on a sampled batch from one task.
inline BatchMetrics train_step(Model& model, AdamW& opt, const TaskDataset& task,
                               const TrainConfig& cfg, Rng& rng) {
    std::vector<const Segment*> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b)
        batch.push_back(&task.segments[rng.uniform_int(task.segments.size())]);

    model.params().zero_grads();
    BatchMetrics metrics;
    std::int64_t positions = 0;
    Tensor total;
    for (const Segment* seg : batch) {
        auto fwd = model.forward(*seg, /*training=*/true, &rng);
        Tensor item = segment_loss(fwd.heads, *seg, cfg);
        total = total.defined() ? add(total, item) : item;
        accumulate_metrics(metrics, fwd.heads, *seg, positions);
    }
    Tensor loss = scale(total, 1.0 / static_cast<double>(cfg.batch));
    backward(loss);
    opt.clip_gradients(cfg.grad_clip);
    opt.step();

    metrics.loss = loss.item();
    if (positions > 0) {
        metrics.action_acc /= static_cast<double>(positions);
        metrics.reward_acc /= static_cast<double>(positions);
        metrics.rtg_acc /= static_cast<double>(positions);
    }
    return metrics;
}

// Pre-training over the task set: each inner step takes one gradient step
// per task, round-robin, so every update cycle sees every training task.
inline TrainRunStats pretrain(Model& model, const std::vector<TaskDataset>& tasks,
                              const TrainConfig& cfg, const std::string& metrics_path = "",
                              Rng* resume_rng = nullptr, AdamW* external_opt = nullptr) {
    cfg.validate();
    if (tasks.empty()) throw ContractError("pretrain: no task datasets");
    AdamW local_opt(model.trainable_params(), cfg);
    AdamW& opt = external_opt ? *external_opt : local_opt;
    Rng local_rng(cfg.seed);
    Rng& rng = resume_rng ? *resume_rng : local_rng;
    MetricsCsv csv(metrics_path);

    TrainRunStats stats;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int s = 0; s < cfg.steps_per_epoch; ++s) {
            for (const TaskDataset& task : tasks) {
                const BatchMetrics m = train_step(model, opt, task, cfg, rng);
                if (stats.steps == 0) stats.first_loss = m.loss;
                stats.last_loss = m.loss;
                stats.losses.push_back(m.loss);
                csv.log(stats.steps, m);
                ++stats.steps;
            }
        }
    }
    return stats;
}

// Memory-only fine-tuning: adapters go on the five memory projections, the
// optimizer sees only adapter tensors, everything else stays frozen.
inline TrainRunStats finetune(Model& model, const TaskDataset& task, const LoraConfig& lora,
                              const TrainConfig& cfg, const std::string& metrics_path = "") {
    cfg.validate();
    model.attach_lora(lora);  // throws if already attached
    model.set_adapters_only_trainable(true);
    AdamW opt(model.trainable_params(), cfg);
    Rng rng(cfg.seed);
    MetricsCsv csv(metrics_path);

    TrainRunStats stats;
    for (int s = 0; s < cfg.finetune_steps; ++s) {
        const BatchMetrics m = train_step(model, opt, task, cfg, rng);
        if (stats.steps == 0) stats.first_loss = m.loss;
        stats.last_loss = m.loss;
        stats.losses.push_back(m.loss);
        csv.log(stats.steps, m);
        ++stats.steps;
    }
    return stats;
}

// Mean loss of the model over every segment of a dataset (no updates).
inline double dataset_loss(const Model& model, const TaskDataset& task, const TrainConfig& cfg) {
    NoGradGuard guard;
    double total = 0.0;
    for (const Segment& seg : task.segments) {
        auto fwd = model.forward(seg);
        total += segment_loss(fwd.heads, seg, cfg).item();
    }
    return total / static_cast<double>(task.segments.size());
}

}  // namespace dtmem
