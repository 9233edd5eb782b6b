#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dtmem/common.hpp"
#include "dtmem/param_store.hpp"
#include "dtmem/tensor.hpp"
#include "dtmem/trajectory.hpp"

namespace dtmem {

struct BackboneConfig {
    int layers = 2;        // paper profile: 4
    int hidden = 64;       // paper profile: 512
    int heads = 4;         // paper profile: 8
    int context = 12;      // K; paper profile: 28
    double dropout = 0.1;
    int action_vocab = 4;
    int state_dim = 51;
    bool head_skip = false;  // heads read encoder output + retrieval instead of retrieval alone

    void validate() const {
        if (layers < 1 || hidden < 1 || heads < 1 || context < 1 || action_vocab < 1 ||
            state_dim < 1)
            throw ContractError("backbone: all dimensions must be positive");
        if (hidden % heads != 0)
            throw ContractError("backbone: hidden (" + std::to_string(hidden) +
                                ") not divisible by heads (" + std::to_string(heads) + ")");
        if (dropout < 0.0 || dropout >= 1.0) throw ContractError("backbone: dropout in [0, 1)");
    }

    std::int64_t tokens_per_segment() const { return 3 * static_cast<std::int64_t>(context); }
};

// Per-layer attention maps captured during a forward pass (values only).
struct EncoderTrace {
    // [layer][head] -> row-major L x L attention probabilities
    std::vector<std::vector<std::vector<double>>> attention;
};

// Token embedding of a (rtg, state, action) segment: three linear/table
// embeddings interleaved per timestep, plus a learned per-timestep position
// embedding shared by the three tokens of that timestep.
inline Tensor embed_segment(const Segment& seg, const ParamStore& params,
                            const BackboneConfig& cfg, bool training = false,
                            Rng* rng = nullptr) {
    const std::int64_t k = seg.length();
    if (k != cfg.context)
        throw ContractError("embed_segment: segment length " + std::to_string(k) +
                            " != context " + std::to_string(cfg.context));
    for (std::uint32_t a : seg.actions)
        if (a >= static_cast<std::uint32_t>(cfg.action_vocab))
            throw ContractError("embed_segment: action id " + std::to_string(a) +
                                " outside vocab " + std::to_string(cfg.action_vocab));

    std::vector<double> rtg_flat(seg.rtg);
    Tensor rtg_col = Tensor::from_values({k, 1}, std::move(rtg_flat));

    std::vector<double> state_flat;
    state_flat.reserve(static_cast<std::size_t>(k * cfg.state_dim));
    for (const auto& s : seg.states) {
        if (s.size() != static_cast<std::size_t>(cfg.state_dim))
            throw ContractError("embed_segment: state dim " + std::to_string(s.size()) +
                                " != configured " + std::to_string(cfg.state_dim));
        state_flat.insert(state_flat.end(), s.begin(), s.end());
    }
    Tensor state_mat = Tensor::from_values({k, cfg.state_dim}, std::move(state_flat));

    std::vector<std::int64_t> action_ids(seg.actions.begin(), seg.actions.end());
    std::vector<std::int64_t> positions(static_cast<std::size_t>(k));
    for (std::int64_t i = 0; i < k; ++i) positions[static_cast<std::size_t>(i)] = i;

    Tensor pos = gather_rows(params.get("embed.pos.w"), positions);
    Tensor rtg_e = add(add_row_vector(matmul(rtg_col, params.get("embed.rtg.w")),
                                      params.get("embed.rtg.b")),
                       pos);
    Tensor state_e = add(add_row_vector(matmul(state_mat, params.get("embed.state.w")),
                                        params.get("embed.state.b")),
                         pos);
    Tensor action_e = add(gather_rows(params.get("embed.action.w"), action_ids), pos);

    Tensor e = interleave_rows({rtg_e, state_e, action_e});
    if (training && cfg.dropout > 0.0) {
        if (!rng) throw ContractError("embed_segment: dropout requires an rng");
        e = dropout(e, cfg.dropout, *rng);
    }
    return e;
}

// GPT-2 style causal encoder without the position-wise feed-forward:
// `layers` blocks of {layer norm -> masked multi-head attention -> residual},
// then a final layer norm.
inline Tensor encode(const Tensor& embedded, const ParamStore& params, const BackboneConfig& cfg,
                     bool training = false, Rng* rng = nullptr, EncoderTrace* trace = nullptr) {
    if (embedded.rank() != 2 || embedded.cols() != cfg.hidden)
        throw ShapeError("encode: expected [L x " + std::to_string(cfg.hidden) + "], got " +
                         shape_str(embedded.shape()));
    const int head_dim = cfg.hidden / cfg.heads;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(head_dim));
    if (trace) trace->attention.assign(static_cast<std::size_t>(cfg.layers), {});

    Tensor x = embedded;
    for (int layer = 0; layer < cfg.layers; ++layer) {
        const std::string base = "encoder.l" + std::to_string(layer) + ".";
        Tensor normed = layer_norm_rows(x, params.get(base + "ln.gain"),
                                        params.get(base + "ln.bias"));
        Tensor q = add_row_vector(matmul(normed, params.get(base + "attn.wq")),
                                  params.get(base + "attn.bq"));
        Tensor kk = add_row_vector(matmul(normed, params.get(base + "attn.wk")),
                                   params.get(base + "attn.bk"));
        Tensor v = add_row_vector(matmul(normed, params.get(base + "attn.wv")),
                                  params.get(base + "attn.bv"));

        std::vector<Tensor> contexts;
        contexts.reserve(static_cast<std::size_t>(cfg.heads));
        for (int h = 0; h < cfg.heads; ++h) {
            Tensor qh = slice_cols(q, h * head_dim, head_dim);
            Tensor kh = slice_cols(kk, h * head_dim, head_dim);
            Tensor vh = slice_cols(v, h * head_dim, head_dim);
            Tensor probs = softmax_rows_causal(scale(matmul(qh, transpose(kh)), inv_sqrt_hd));
            if (trace) trace->attention[static_cast<std::size_t>(layer)].push_back(probs.values());
            if (training && cfg.dropout > 0.0) probs = dropout(probs, cfg.dropout, *rng);
            contexts.push_back(matmul(probs, vh));
        }
        Tensor mixed = add_row_vector(matmul(concat_cols(contexts), params.get(base + "attn.wo")),
                                      params.get(base + "attn.bo"));
        if (training && cfg.dropout > 0.0) mixed = dropout(mixed, cfg.dropout, *rng);
        x = add(x, mixed);
    }
    return layer_norm_rows(x, params.get("encoder.final_ln.gain"),
                           params.get("encoder.final_ln.bias"));
}

struct HeadOutputs {
    Tensor action_logits;  // [K x action_vocab], read from state-token positions
    Tensor reward_pred;    // [K x 1], read from action-token positions
    Tensor rtg_pred;       // [K x 1], read from action-token positions
};

namespace detail {

inline Tensor head_mlp(const Tensor& x, const ParamStore& params, const std::string& base) {
    Tensor hidden = gelu(add_row_vector(matmul(x, params.get(base + "l1.w")),
                                        params.get(base + "l1.b")));
    return add_row_vector(matmul(hidden, params.get(base + "l2.w")), params.get(base + "l2.b"));
}

}  // namespace detail

// Two-layer GELU MLPs over the per-timestep feature rows. The action head
// conditions on everything up to and including the state token; reward and
// return heads additionally see the action token.
inline HeadOutputs predict_heads(const Tensor& features, const ParamStore& params,
                                 const BackboneConfig& cfg) {
    if (features.rank() != 2 || features.rows() != cfg.tokens_per_segment())
        throw ShapeError("predict_heads: expected [" + std::to_string(cfg.tokens_per_segment()) +
                         " x d], got " + shape_str(features.shape()));
    Tensor state_feats = stride_rows(features, 1, 3);
    Tensor action_feats = stride_rows(features, 2, 3);
    HeadOutputs out;
    out.action_logits = detail::head_mlp(state_feats, params, "heads.action.");
    out.reward_pred = detail::head_mlp(action_feats, params, "heads.reward.");
    out.rtg_pred = detail::head_mlp(action_feats, params, "heads.rtg.");
    return out;
}

}  // namespace dtmem
