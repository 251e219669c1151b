#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "alarm/attention.hpp"
#include "alarm/fusion.hpp"
#include "alarm/tokenizer.hpp"

namespace alm {

struct BackboneConfig {
    int vocab_size = tokenizer::kVocabSize;
    int d_model = 96;
    int n_layers = 2;
    int n_heads = 4;
    int ff_expansion = 4;
    int max_context = 512;
    bool frozen = true;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

struct Generation {
    std::vector<int> tokens;
    std::string text;
    bool stopped_at_eos = false;
};

/// Small causal transformer LM standing in for the frozen reasoning model.
/// Parameters live under "backbone." and are frozen unless explicitly unfrozen (pretraining only).
class Backbone {
public:
    Backbone(const BackboneConfig& config, std::uint64_t seed);

    const BackboneConfig& config() const { return config_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    TokenBlock embed_tokens(ad::Tape& tape, const std::vector<int>& ids) const;
    TokenBlock embed_text(ad::Tape& tape, const std::string& text, bool append_eos = false) const;

    /// Logits (T x vocab) for a full input sequence; causal.
    ad::Var forward_logits(const AudioPromptSequence& seq) const;
    ad::Var forward_embeddings(ad::Var inputs) const;

    /// Greedy continuation of `prefix`; stops at EOS or after max_new_tokens.
    Generation generate(const AudioPromptSequence& prefix, int max_new_tokens) const;
    Generation generate(const Matrix& prefix_embeddings, int max_new_tokens) const;

    void set_frozen(bool frozen);

private:
    BackboneConfig config_;
    ParameterStore params_;
    Parameter* token_embedding_ = nullptr;    // vocab x d
    Parameter* position_embedding_ = nullptr; // max_context x d
    std::vector<SelfAttentionBlock> blocks_;
    NormParams final_norm_;
    Parameter* unembedding_ = nullptr; // d x vocab
};

/// Mean of -log p(target token) over the target span: logits row p predicts token p + 1.
ad::Var response_ce_loss(ad::Var logits, const std::vector<int>& token_ids, const TargetSpan& span);

/// SHA-256 (hex) over backbone parameter names, shapes and raw values.
std::string freeze_fingerprint(const ParameterStore& params);

} // namespace alm
