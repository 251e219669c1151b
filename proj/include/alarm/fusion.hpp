#pragma once

#include <array>
#include <string>
#include <vector>

#include "alarm/attention.hpp"
#include "alarm/frontend.hpp"

namespace alm {

/// One cross-attention fusion stage A_c: a stack of `depth` cross-attention layers (2 by default).
struct CrossAttentionParams {
    std::vector<CrossAttentionLayer> layers;
    int heads = 4;

    static CrossAttentionParams create(ParameterStore& store, const std::string& prefix, int dim, int heads, int depth,
                                       int expansion, Rng& rng);
    int depth() const { return static_cast<int>(layers.size()); }
};

/// Output has the query's length; the key/value stream may be longer or shorter.
FrameMatrix cross_attention_block(const FrameMatrix& query, const FrameMatrix& kv, const CrossAttentionParams& params);

/// h0 = x_wh; h_k = A_c(h_{k-1}, x_k) over the three auxiliary streams in the order given.
FrameMatrix fuse_ca(const FrameMatrix& x_wh, const FrameMatrix& x_w2v, const FrameMatrix& x_muq,
                    const FrameMatrix& x_sslam, const std::array<CrossAttentionParams, 3>& stages);

struct PerceiverLayer {
    CrossAttentionLayer cross; // latents attend to the input sequence
    SelfAttentionBlock self;   // latents attend to each other
};

struct PerceiverParams {
    Parameter* latents = nullptr; // count x in_dim
    std::vector<PerceiverLayer> layers;
    NormParams out_norm;
    Projection out_proj; // in_dim -> backbone width

    static PerceiverParams create(ParameterStore& store, const std::string& prefix, int in_dim, int out_dim,
                                  int latent_count, int heads, int depth, int expansion, Rng& rng);
    Eigen::Index latent_count() const { return latents->value.rows(); }
};

/// Compresses any T >= 1 input into exactly latent_count tokens in backbone space.
FrameMatrix perceiver_compress(const FrameMatrix& features, const PerceiverParams& params);

struct BoundaryPair {
    Parameter* pre = nullptr;  // 1 x D_lm
    Parameter* post = nullptr; // 1 x D_lm

    static BoundaryPair create(ParameterStore& store, const std::string& prefix, int dim, Rng& rng);
};

enum class SegmentTag { InstructionText, BoundaryPre, Audio, BoundaryPost, PromptText, TargetText };
std::string to_string(SegmentTag tag);

struct Segment {
    SegmentTag tag = SegmentTag::Audio;
    ad::Var embeddings;
    std::vector<int> tokens; // text segments only
    std::string label;
};

struct TargetSpan {
    Eigen::Index start = 0;
    Eigen::Index end = 0;
    Eigen::Index size() const { return end - start; }
    bool empty() const { return end == start; }
};

/// The ordered model input: boundary vectors, audio embeddings, instruction/prompt/target text.
struct AudioPromptSequence {
    std::vector<Segment> segments;

    Eigen::Index total_length() const;
    Eigen::Index audio_token_count() const;
    std::vector<SegmentTag> tags() const;
    /// [start, end) of the target-text segment; empty at the sequence end when there is none.
    TargetSpan target_span() const;
    /// Token id per position, -1 where the position is not text.
    std::vector<int> token_ids() const;
    ad::Var embeddings() const;
    /// Checks ordering (audio before prompt) and boundary pairing; throws invalid-input.
    void validate() const;
};

/// A tokenized text block together with its embeddings on the tape.
struct TokenBlock {
    std::vector<int> tokens;
    ad::Var embeddings;
    Eigen::Index size() const { return static_cast<Eigen::Index>(tokens.size()); }
};

/// [inner-pre, p_w2v, p_muq, p_sslam, inner-post, x_wh]: a 62 + T_wh token audio region.
AudioPromptSequence assemble_prefix_p(const FrameMatrix& p_w2v, const FrameMatrix& p_muq, const FrameMatrix& p_sslam,
                                      const FrameMatrix& x_wh, const BoundaryPair& inner, Eigen::Index prefix_tokens = 20);

struct EnsembleTexts {
    TokenBlock intro;       // I_e
    TokenBlock first_pass;  // I_1
    TokenBlock second_pass; // I_2
};

/// [I_e, I_1, <h3>, I_2, <x_wh>] where each <.> is wrapped by that stream's own boundary pair.
AudioPromptSequence assemble_ensemble_e(const FrameMatrix& h3, const FrameMatrix& x_wh, const EnsembleTexts& texts,
                                        const BoundaryPair& ca_boundaries, const BoundaryPair& wh_boundaries);

/// [pre, audio..., post, prompt, target]; target may be empty at inference.
AudioPromptSequence wrap_audio_prompt(const AudioPromptSequence& audio, const TokenBlock& prompt,
                                      const TokenBlock& target, const BoundaryPair& boundaries);
/// Appends prompt and target to an audio region that already carries its boundaries.
AudioPromptSequence append_prompt(const AudioPromptSequence& audio, const TokenBlock& prompt, const TokenBlock& target);

/// Wraps a single frame stream as an audio region.
AudioPromptSequence audio_region(const FrameMatrix& stream, const std::string& label);

} // namespace alm
