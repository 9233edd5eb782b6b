#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dtmem/backbone.hpp"
#include "dtmem/checkpoint.hpp"
#include "dtmem/common.hpp"
#include "dtmem/lora.hpp"
#include "dtmem/memory.hpp"
#include "dtmem/param_store.hpp"
#include "dtmem/tensor.hpp"
#include "dtmem/trajectory.hpp"

namespace dtmem {

struct ModelConfig {
    BackboneConfig backbone;
    MemoryConfig memory;

    void validate() const {
        backbone.validate();
        memory.validate();
    }
};

struct ParamSpecEntry {
    std::string path;
    Shape shape;
    ParamInit init;
};

inline const std::array<std::string, 5>& memory_projection_paths() {
    static const std::array<std::string, 5> kPaths{
        "memory.Wq", "memory.Wk", "memory.Wq_write", "memory.Wk_write", "memory.Wv_write"};
    return kPaths;
}

// Full parameter layout in creation order (which fixes the init rng stream).
inline std::vector<ParamSpecEntry> model_layout(const ModelConfig& cfg) {
    cfg.validate();
    const std::int64_t d = cfg.backbone.hidden;
    const std::int64_t k = cfg.backbone.context;
    const std::int64_t v = cfg.backbone.action_vocab;
    const std::int64_t s = cfg.backbone.state_dim;
    const std::int64_t n = cfg.memory.slots;

    std::vector<ParamSpecEntry> out;
    out.push_back({"embed.rtg.w", {1, d}, ParamInit::TruncNormal02});
    out.push_back({"embed.rtg.b", {d}, ParamInit::Zeros});
    out.push_back({"embed.state.w", {s, d}, ParamInit::TruncNormal02});
    out.push_back({"embed.state.b", {d}, ParamInit::Zeros});
    out.push_back({"embed.action.w", {v, d}, ParamInit::TruncNormal02});
    out.push_back({"embed.pos.w", {k, d}, ParamInit::TruncNormal02});
    for (int layer = 0; layer < cfg.backbone.layers; ++layer) {
        const std::string base = "encoder.l" + std::to_string(layer) + ".";
        out.push_back({base + "ln.gain", {d}, ParamInit::Ones});
        out.push_back({base + "ln.bias", {d}, ParamInit::Zeros});
        for (const char* w : {"wq", "wk", "wv", "wo"})
            out.push_back({base + "attn." + w, {d, d}, ParamInit::TruncNormal02});
        for (const char* b : {"bq", "bk", "bv", "bo"})
            out.push_back({base + "attn." + b, {d}, ParamInit::Zeros});
    }
    out.push_back({"encoder.final_ln.gain", {d}, ParamInit::Ones});
    out.push_back({"encoder.final_ln.bias", {d}, ParamInit::Zeros});
    out.push_back({"memory.M0", {n, d}, ParamInit::TruncNormal02});
    for (const std::string& p : memory_projection_paths())
        out.push_back({p, {d, d}, ParamInit::TruncNormal02});
    for (const char* head : {"action", "reward", "rtg"}) {
        const std::string base = std::string("heads.") + head + ".";
        const std::int64_t width = std::string(head) == "action" ? v : 1;
        out.push_back({base + "l1.w", {d, d}, ParamInit::TruncNormal02});
        out.push_back({base + "l1.b", {d}, ParamInit::Zeros});
        out.push_back({base + "l2.w", {d, width}, ParamInit::TruncNormal02});
        out.push_back({base + "l2.b", {width}, ParamInit::Zeros});
    }
    return out;
}

struct ParamCounts {
    std::int64_t backbone = 0;
    std::int64_t memory = 0;
    std::int64_t heads = 0;
    std::int64_t adapters = 0;

    std::int64_t total() const { return backbone + memory + heads + adapters; }
};

// The assembled DT-Mem model: backbone + working memory + prediction heads,
// with optional LoRA adapters on the five memory projections.
class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), store_(seed) {
        for (const ParamSpecEntry& e : model_layout(cfg_)) store_.create(e.path, e.shape, e.init);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    struct ForwardResult {
        HeadOutputs heads;
        Tensor encoder_out;  // e_seq, [3K x d]
        MemoryForward memory;
    };

    // One segment through embed -> encode -> memory -> heads. `memory_in`
    // overrides the learned initial memory (evaluation carries the previous
    // window's memory through here); training always starts from M0.
    ForwardResult forward(const Segment& seg, bool training = false, Rng* rng = nullptr,
                          const Tensor* memory_in = nullptr,
                          EncoderTrace* trace = nullptr) const {
        if (training && cfg_.backbone.dropout > 0.0 && rng == nullptr)
            throw ContractError("forward: training mode with dropout requires an rng");
        ForwardResult out;
        Tensor embedded = embed_segment(seg, store_, cfg_.backbone, training, rng);
        out.encoder_out = encode(embedded, store_, cfg_.backbone, training, rng, trace);
        Tensor initial = memory_in ? *memory_in : store_.get("memory.M0");
        out.memory = memory_forward(initial, out.encoder_out, memory_params(), cfg_.memory.rounds,
                                    training, rng);
        Tensor features = cfg_.backbone.head_skip ? add(out.encoder_out, out.memory.retrieved)
                                                  : out.memory.retrieved;
        out.heads = predict_heads(features, store_, cfg_.backbone);
        return out;
    }

    MemoryParams memory_params() const {
        MemoryParams p;
        p.address_query = store_.get("memory.Wq");
        p.address_key = store_.get("memory.Wk");
        p.write_query = store_.get("memory.Wq_write");
        p.write_key = store_.get("memory.Wk_write");
        p.write_value = store_.get("memory.Wv_write");
        p.address_query_lora = adapter_for("memory.Wq");
        p.address_key_lora = adapter_for("memory.Wk");
        p.write_query_lora = adapter_for("memory.Wq_write");
        p.write_key_lora = adapter_for("memory.Wk_write");
        p.write_value_lora = adapter_for("memory.Wv_write");
        return p;
    }

    // ---- LoRA -------------------------------------------------------------

    bool lora_attached() const { return !adapters_.empty(); }
    const LoraConfig& lora_config() const { return lora_cfg_; }

    // Attaches zero-initialized adapters to the five memory projections.
    // Model outputs are unchanged until the adapters train away from zero.
    void attach_lora(const LoraConfig& lc) {
        lc.validate();
        if (lora_attached()) throw ContractError("attach_lora: adapters already attached");
        const std::int64_t d = cfg_.backbone.hidden;
        if (lc.rank > d / 2)
            throw ContractError("attach_lora: rank " + std::to_string(lc.rank) +
                                " exceeds hidden/2 = " + std::to_string(d / 2));
        lora_cfg_ = lc;
        for (const std::string& target : memory_projection_paths()) {
            LoraAdapter ad;
            ad.rank = lc.rank;
            ad.alpha = lc.alpha;
            ad.dropout = lc.dropout;
            ad.target = target;
            ad.down = store_.create("lora." + target + ".B", {d, lc.rank}, ParamInit::Zeros);
            ad.up = store_.create("lora." + target + ".A", {lc.rank, d},
                                  ParamInit::TruncNormal02);
            adapters_.emplace(target, std::move(ad));
        }
    }

    // Folds each adapter's delta into the dense weight and removes it.
    void merge_lora() {
        if (!lora_attached()) throw ContractError("merge_lora: no adapters attached");
        NoGradGuard guard;
        for (auto& [target, ad] : adapters_) {
            Tensor merged = ad.materialize(store_.get(target));
            store_.get(target).values_mut() = merged.values();
        }
        adapters_.clear();
        store_.remove_prefix("lora.");
        lora_cfg_ = LoraConfig{};
    }

    // Adapter-only training: freezes every non-adapter parameter so frozen
    // gradients are never even computed.
    void set_adapters_only_trainable(bool adapters_only) {
        for (const auto& [path, t] : store_.items()) {
            const bool is_adapter = path.rfind("lora.", 0) == 0;
            const_cast<Tensor&>(t).set_requires_grad(!adapters_only || is_adapter);
        }
    }

    std::vector<std::pair<std::string, Tensor>> trainable_params() const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (const auto& [path, t] : store_.items())
            if (t.requires_grad()) out.emplace_back(path, t);
        return out;
    }

    // ---- accounting ---------------------------------------------------------

    ParamCounts counts() const {
        ParamCounts c;
        for (const auto& [path, t] : store_.items()) {
            if (path.rfind("lora.", 0) == 0)
                c.adapters += t.size();
            else if (path.rfind("memory.", 0) == 0)
                c.memory += t.size();
            else if (path.rfind("heads.", 0) == 0)
                c.heads += t.size();
            else
                c.backbone += t.size();
        }
        return c;
    }

    // ---- checkpoint glue ----------------------------------------------------

    void export_tensors(Checkpoint& ck) const { ck.add_params(store_); }

    // Restores parameter values (and adapter structure) from a checkpoint.
    // The model must already be built with the matching configuration.
    void import_tensors(const Checkpoint& ck, const LoraConfig& lc_if_present = {}) {
        bool has_lora = false;
        for (const auto& [path, t] : ck.tensors)
            if (path.rfind("lora.", 0) == 0) has_lora = true;
        if (has_lora && !lora_attached()) attach_lora(lc_if_present);
        for (const auto& [path, t] : store_.items()) {
            if (path.rfind("optim.", 0) == 0) continue;
            Tensor dst = t;
            Tensor src = ck.get(path);
            if (src.shape() != dst.shape())
                throw FormatError("checkpoint tensor '" + path + "' has shape " +
                                  shape_str(src.shape()) + ", model expects " +
                                  shape_str(dst.shape()));
            dst.values_mut() = src.values();
        }
    }

private:
    const LoraAdapter* adapter_for(const std::string& target) const {
        auto it = adapters_.find(target);
        return it == adapters_.end() ? nullptr : &it->second;
    }

    ModelConfig cfg_;
    ParamStore store_;
    std::map<std::string, LoraAdapter> adapters_;
    LoraConfig lora_cfg_;
};

}  // namespace dtmem
