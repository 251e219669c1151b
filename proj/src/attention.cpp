#include "alarm/attention.hpp"

#include <cmath>

#include "alarm/error.hpp"

namespace alm {

NormParams NormParams::create(ParameterStore& store, const std::string& prefix, int dim) {
    NormParams n;
    n.gamma = &store.add(prefix + ".gamma", Matrix::Ones(1, dim), false);
    n.beta = &store.add(prefix + ".beta", Matrix::Zero(1, dim), false);
    return n;
}

ad::Var NormParams::apply(ad::Var x) const {
    ad::Tape& t = *x.tape();
    return ad::layer_norm(x, t.param(*gamma), t.param(*beta));
}

AttentionParams AttentionParams::create(ParameterStore& store, const std::string& prefix, int dim, int heads,
                                        bool zero_output, Rng& rng) {
    if (heads <= 0 || dim % heads != 0) throw Error(ErrorKind::InvalidSpec, "head count must divide the model width");
    AttentionParams p;
    p.heads = heads;
    p.wq = &store.add(prefix + ".wq", fan_in_gaussian(dim, dim, rng), true);
    p.bq = &store.add(prefix + ".bq", Matrix::Zero(1, dim), false);
    p.wk = &store.add(prefix + ".wk", fan_in_gaussian(dim, dim, rng), true);
    p.wv = &store.add(prefix + ".wv", fan_in_gaussian(dim, dim, rng), true);
    p.bv = &store.add(prefix + ".bv", Matrix::Zero(1, dim), false);
    p.wo = &store.add(prefix + ".wo", zero_output ? Matrix::Zero(dim, dim) : fan_in_gaussian(dim, dim, rng), true);
    p.bo = &store.add(prefix + ".bo", Matrix::Zero(1, dim), false);
    return p;
}

ad::Var multi_head_attention(ad::Var query, ad::Var kv, const AttentionParams& p, bool causal) {
    if (query.cols() != p.dim() || kv.cols() != p.dim())
        throw Error(ErrorKind::InvalidInput, "attention input width does not match the model width");
    ad::Tape& t = *query.tape();
    ad::Var q = ad::add_row(ad::matmul(query, t.param(*p.wq)), t.param(*p.bq));
    ad::Var k = ad::matmul(kv, t.param(*p.wk));
    ad::Var v = ad::add_row(ad::matmul(kv, t.param(*p.wv)), t.param(*p.bv));
    const int head_dim = p.dim() / p.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<ad::Var> outputs;
    outputs.reserve(static_cast<std::size_t>(p.heads));
    for (int h = 0; h < p.heads; ++h) {
        ad::Var qh = ad::slice_cols(q, h * head_dim, head_dim);
        ad::Var kh = ad::slice_cols(k, h * head_dim, head_dim);
        ad::Var vh = ad::slice_cols(v, h * head_dim, head_dim);
        ad::Var scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt);
        outputs.push_back(ad::matmul(ad::softmax_rows(scores, causal), vh));
    }
    ad::Var merged = p.heads == 1 ? outputs.front() : ad::concat_cols(outputs);
    return ad::add_row(ad::matmul(merged, t.param(*p.wo)), t.param(*p.bo));
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& prefix, int dim, int expansion,
                                bool zero_output, Rng& rng) {
    FeedForward f;
    const int hidden = dim * expansion;
    f.w1 = &store.add(prefix + ".w1", fan_in_gaussian(dim, hidden, rng), true);
    f.b1 = &store.add(prefix + ".b1", Matrix::Zero(1, hidden), false);
    f.w2 = &store.add(prefix + ".w2", zero_output ? Matrix::Zero(hidden, dim) : fan_in_gaussian(hidden, dim, rng), true);
    f.b2 = &store.add(prefix + ".b2", Matrix::Zero(1, dim), false);
    return f;
}

ad::Var FeedForward::forward(ad::Var x) const {
    ad::Tape& t = *x.tape();
    ad::Var h = ad::gelu(ad::add_row(ad::matmul(x, t.param(*w1)), t.param(*b1)));
    return ad::add_row(ad::matmul(h, t.param(*w2)), t.param(*b2));
}

SelfAttentionBlock SelfAttentionBlock::create(ParameterStore& store, const std::string& prefix, int dim, int heads,
                                              int expansion, bool zero_output, Rng& rng) {
    SelfAttentionBlock b;
    b.norm_attn = NormParams::create(store, prefix + ".norm_attn", dim);
    b.attn = AttentionParams::create(store, prefix + ".attn", dim, heads, zero_output, rng);
    b.norm_ff = NormParams::create(store, prefix + ".norm_ff", dim);
    b.ff = FeedForward::create(store, prefix + ".ff", dim, expansion, zero_output, rng);
    return b;
}

ad::Var SelfAttentionBlock::forward(ad::Var x, bool causal) const {
    ad::Var n = norm_attn.apply(x);
    x = ad::add(x, multi_head_attention(n, n, attn, causal));
    return ad::add(x, ff.forward(norm_ff.apply(x)));
}

CrossAttentionLayer CrossAttentionLayer::create(ParameterStore& store, const std::string& prefix, int dim, int heads,
                                                int expansion, bool zero_output, Rng& rng) {
    CrossAttentionLayer b;
    b.norm_query = NormParams::create(store, prefix + ".norm_query", dim);
    b.norm_kv = NormParams::create(store, prefix + ".norm_kv", dim);
    b.attn = AttentionParams::create(store, prefix + ".attn", dim, heads, zero_output, rng);
    b.norm_ff = NormParams::create(store, prefix + ".norm_ff", dim);
    b.ff = FeedForward::create(store, prefix + ".ff", dim, expansion, zero_output, rng);
    return b;
}

ad::Var CrossAttentionLayer::forward(ad::Var query, ad::Var kv) const {
    ad::Var h = ad::add(query, multi_head_attention(norm_query.apply(query), norm_kv.apply(kv), attn, false));
    return ad::add(h, ff.forward(norm_ff.apply(h)));
}

} // namespace alm
