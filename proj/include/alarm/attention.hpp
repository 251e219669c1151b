#pragma once

#include <string>
#include <vector>

#include "alarm/autograd.hpp"

namespace alm {

struct NormParams {
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;

    static NormParams create(ParameterStore& store, const std::string& prefix, int dim);
    ad::Var apply(ad::Var x) const;
};

/// Multi-head attention maps. Keys carry no bias: a key bias only shifts each score row by a
/// constant and would receive an identically zero gradient.
struct AttentionParams {
    Parameter* wq = nullptr;
    Parameter* bq = nullptr;
    Parameter* wk = nullptr;
    Parameter* wv = nullptr;
    Parameter* bv = nullptr;
    Parameter* wo = nullptr;
    Parameter* bo = nullptr;
    int heads = 1;

    /// `zero_output` zero-initializes the output map so a residual block starts as the identity.
    static AttentionParams create(ParameterStore& store, const std::string& prefix, int dim, int heads, bool zero_output,
                                  Rng& rng);
    int dim() const { return static_cast<int>(wq->value.rows()); }
};

ad::Var multi_head_attention(ad::Var query, ad::Var kv, const AttentionParams& p, bool causal);

struct FeedForward {
    Parameter* w1 = nullptr;
    Parameter* b1 = nullptr;
    Parameter* w2 = nullptr;
    Parameter* b2 = nullptr;

    static FeedForward create(ParameterStore& store, const std::string& prefix, int dim, int expansion,
                              bool zero_output, Rng& rng);
    ad::Var forward(ad::Var x) const;
};

/// Pre-norm self-attention block: x + Attn(LN x), then x + FF(LN x).
struct SelfAttentionBlock {
    NormParams norm_attn;
    AttentionParams attn;
    NormParams norm_ff;
    FeedForward ff;

    static SelfAttentionBlock create(ParameterStore& store, const std::string& prefix, int dim, int heads,
                                     int expansion, bool zero_output, Rng& rng);
    ad::Var forward(ad::Var x, bool causal) const;
};

/// Pre-norm cross-attention block: q + Attn(LN q, LN kv), then q + FF(LN q).
struct CrossAttentionLayer {
    NormParams norm_query;
    NormParams norm_kv;
    AttentionParams attn;
    NormParams norm_ff;
    FeedForward ff;

    static CrossAttentionLayer create(ParameterStore& store, const std::string& prefix, int dim, int heads,
                                      int expansion, bool zero_output, Rng& rng);
    ad::Var forward(ad::Var query, ad::Var kv) const;
};

} // namespace alm
