#include "alarm/backbone.hpp"

#include <bit>
#include <cstring>

#include <openssl/evp.h>

#include "alarm/error.hpp"

namespace alm {

void to_json(nlohmann::json& j, const BackboneConfig& c) {
    j = {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},         {"n_layers", c.n_layers},
         {"n_heads", c.n_heads},       {"ff_expansion", c.ff_expansion}, {"max_context", c.max_context},
         {"frozen", c.frozen}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.ff_expansion = j.value("ff_expansion", c.ff_expansion);
    c.max_context = j.value("max_context", c.max_context);
    c.frozen = j.value("frozen", true);
}

Backbone::Backbone(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
    if (config.vocab_size < tokenizer::kVocabSize) throw Error(ErrorKind::InvalidSpec, "vocabulary too small");
    Rng rng(derive_seed(seed, {"backbone"}));
    const int d = config.d_model;
    token_embedding_ = &params_.add("backbone.token_embedding", gaussian<double>(config.vocab_size, d, 1.0, rng), false);
    position_embedding_ =
        &params_.add("backbone.position_embedding", gaussian<double>(config.max_context, d, 0.5, rng), false);
    for (int i = 0; i < config.n_layers; ++i)
        blocks_.push_back(SelfAttentionBlock::create(params_, "backbone.block" + std::to_string(i), d, config.n_heads,
                                                     config.ff_expansion, false, rng));
    final_norm_ = NormParams::create(params_, "backbone.final_norm", d);
    unembedding_ = &params_.add("backbone.unembedding", fan_in_gaussian(d, config.vocab_size, rng), true);
    set_frozen(true);
}

void Backbone::set_frozen(bool frozen) {
    config_.frozen = frozen;
    params_.set_trainable("backbone.", !frozen);
}

TokenBlock Backbone::embed_tokens(ad::Tape& tape, const std::vector<int>& ids) const {
    TokenBlock b;
    b.tokens = ids;
    if (ids.empty()) {
        b.embeddings = tape.constant(Matrix(0, config_.d_model));
        return b;
    }
    b.embeddings = ad::gather_rows(tape.param(*token_embedding_), ids);
    return b;
}

TokenBlock Backbone::embed_text(ad::Tape& tape, const std::string& text, bool append_eos) const {
    auto ids = tokenizer::encode(text);
    if (append_eos) ids.push_back(tokenizer::kEos);
    return embed_tokens(tape, ids);
}

ad::Var Backbone::forward_embeddings(ad::Var x) const {
    const Eigen::Index T = x.rows();
    if (T > config_.max_context)
        throw Error(ErrorKind::TooLong, "sequence of " + std::to_string(T) + " tokens exceeds the context of " +
                                            std::to_string(config_.max_context));
    if (x.cols() != config_.d_model) throw Error(ErrorKind::InvalidInput, "input embeddings are not in backbone width");
    ad::Tape& t = *x.tape();
    ad::Var h = ad::add(x, ad::slice_rows(t.param(*position_embedding_), 0, T));
    for (const auto& block : blocks_) h = block.forward(h, true);
    h = final_norm_.apply(h);
    return ad::matmul(h, t.param(*unembedding_));
}

ad::Var Backbone::forward_logits(const AudioPromptSequence& seq) const { return forward_embeddings(seq.embeddings()); }

Generation Backbone::generate(const AudioPromptSequence& prefix, int max_new_tokens) const {
    return generate(prefix.embeddings().value(), max_new_tokens);
}

Generation Backbone::generate(const Matrix& prefix_embeddings, int max_new_tokens) const {
    if (max_new_tokens < 0) throw Error(ErrorKind::InvalidInput, "max_new_tokens must be non-negative");
    if (prefix_embeddings.rows() + max_new_tokens > config_.max_context)
        throw Error(ErrorKind::TooLong, "prefix plus generation budget exceeds the context");
    Generation out;
    Matrix inputs = prefix_embeddings;
    for (int step = 0; step < max_new_tokens; ++step) {
        ad::Tape tape;
        ad::Var logits = forward_embeddings(tape.constant(inputs));
        Eigen::Index next = 0;
        logits.value().row(logits.rows() - 1).maxCoeff(&next);
        const int id = static_cast<int>(next);
        if (id == tokenizer::kEos) {
            out.stopped_at_eos = true;
            break;
        }
        out.tokens.push_back(id);
        inputs.conservativeResize(inputs.rows() + 1, Eigen::NoChange);
        inputs.row(inputs.rows() - 1) = token_embedding_->value.row(id);
    }
    out.text = tokenizer::decode(out.tokens);
    return out;
}

ad::Var response_ce_loss(ad::Var logits, const std::vector<int>& token_ids, const TargetSpan& span) {
    if (span.empty()) throw Error(ErrorKind::InvalidSpan, "target span is empty");
    if (span.start < 1 || span.end > logits.rows() || span.end > static_cast<Eigen::Index>(token_ids.size()))
        throw Error(ErrorKind::InvalidSpan, "target span lies outside the sequence");
    std::vector<int> targets;
    std::vector<Eigen::Index> positions;
    for (Eigen::Index p = span.start; p < span.end; ++p) {
        if (token_ids[static_cast<std::size_t>(p)] < 0) throw Error(ErrorKind::InvalidSpan, "target span covers non-text");
        targets.push_back(token_ids[static_cast<std::size_t>(p)]);
        positions.push_back(p - 1);
    }
    return ad::cross_entropy(logits, targets, positions);
}

std::string freeze_fingerprint(const ParameterStore& params) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    for (const Parameter* p : params.all()) {
        if (p->name.rfind("backbone.", 0) != 0) continue;
        EVP_DigestUpdate(ctx, p->name.data(), p->name.size() + 1);
        const std::int64_t shape[2] = {p->value.rows(), p->value.cols()};
        EVP_DigestUpdate(ctx, shape, sizeof(shape));
        for (Eigen::Index r = 0; r < p->value.rows(); ++r)
            for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
                std::uint64_t bits;
                const double v = p->value(r, c);
                std::memcpy(&bits, &v, sizeof(bits));
                if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
                EVP_DigestUpdate(ctx, &bits, sizeof(bits));
            }
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

} // namespace alm
