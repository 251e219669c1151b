#include "alarm/fusion.hpp"

#include "alarm/error.hpp"

namespace alm {

CrossAttentionParams CrossAttentionParams::create(ParameterStore& store, const std::string& prefix, int dim, int heads,
                                                  int depth, int expansion, Rng& rng) {
    CrossAttentionParams p;
    p.heads = heads;
    for (int i = 0; i < depth; ++i)
        p.layers.push_back(
            CrossAttentionLayer::create(store, prefix + ".layer" + std::to_string(i), dim, heads, expansion, true, rng));
    return p;
}

FrameMatrix cross_attention_block(const FrameMatrix& query, const FrameMatrix& kv, const CrossAttentionParams& params) {
    if (query.space != kv.space || query.dim() != kv.dim())
        throw Error(ErrorKind::InvalidInput, "cross-attention query and key/value widths differ");
    ad::Var h = query.data;
    for (const auto& layer : params.layers) h = layer.forward(h, kv.data);
    return {h, query.token_rate, query.space};
}

FrameMatrix fuse_ca(const FrameMatrix& x_wh, const FrameMatrix& x_w2v, const FrameMatrix& x_muq,
                    const FrameMatrix& x_sslam, const std::array<CrossAttentionParams, 3>& stages) {
    for (const FrameMatrix* x : {&x_wh, &x_w2v, &x_muq, &x_sslam})
        if (!x->data.valid()) throw Error(ErrorKind::InvalidInput, "fuse_ca needs all four adapted streams");
    FrameMatrix h = x_wh;
    h = cross_attention_block(h, x_w2v, stages[0]);
    h = cross_attention_block(h, x_muq, stages[1]);
    h = cross_attention_block(h, x_sslam, stages[2]);
    return h;
}

PerceiverParams PerceiverParams::create(ParameterStore& store, const std::string& prefix, int in_dim, int out_dim,
                                        int latent_count, int heads, int depth, int expansion, Rng& rng) {
    PerceiverParams p;
    p.latents = &store.add(prefix + ".latents", gaussian<double>(latent_count, in_dim, 0.02, rng), false);
    for (int i = 0; i < depth; ++i) {
        const std::string lp = prefix + ".layer" + std::to_string(i);
        p.layers.push_back({CrossAttentionLayer::create(store, lp + ".cross", in_dim, heads, expansion, false, rng),
                            SelfAttentionBlock::create(store, lp + ".self", in_dim, heads, expansion, false, rng)});
    }
    p.out_norm = NormParams::create(store, prefix + ".out_norm", in_dim);
    p.out_proj = Projection::create(store, prefix + ".proj", in_dim, out_dim, rng);
    return p;
}

FrameMatrix perceiver_compress(const FrameMatrix& features, const PerceiverParams& params) {
    if (!features.data.valid() || features.frames() < 1)
        throw Error(ErrorKind::InvalidInput, "perceiver input is empty");
    if (features.dim() != params.latents->value.cols())
        throw Error(ErrorKind::InvalidInput, "perceiver input width mismatch");
    ad::Tape& t = *features.data.tape();
    ad::Var h = t.param(*params.latents);
    for (const auto& layer : params.layers) {
        h = layer.cross.forward(h, features.data);
        h = layer.self.forward(h, false);
    }
    FrameMatrix latent{params.out_norm.apply(h), features.token_rate, DimSpace::EncoderNative};
    FrameMatrix out = project(latent, params.out_proj);
    // A fixed-size token block carries no frame rate of its own.
    out.token_rate = 0.0;
    return out;
}

BoundaryPair BoundaryPair::create(ParameterStore& store, const std::string& prefix, int dim, Rng& rng) {
    BoundaryPair b;
    b.pre = &store.add(prefix + ".pre", gaussian<double>(1, dim, 1.0, rng), false);
    b.post = &store.add(prefix + ".post", gaussian<double>(1, dim, 1.0, rng), false);
    return b;
}

std::string to_string(SegmentTag tag) {
    switch (tag) {
    case SegmentTag::InstructionText: return "instruction-text";
    case SegmentTag::BoundaryPre: return "boundary-pre";
    case SegmentTag::Audio: return "audio";
    case SegmentTag::BoundaryPost: return "boundary-post";
    case SegmentTag::PromptText: return "prompt-text";
    case SegmentTag::TargetText: return "target-text";
    }
    return "unknown";
}

Eigen::Index AudioPromptSequence::total_length() const {
    Eigen::Index n = 0;
    for (const auto& s : segments) n += s.embeddings.rows();
    return n;
}

Eigen::Index AudioPromptSequence::audio_token_count() const {
    Eigen::Index n = 0;
    for (const auto& s : segments)
        if (s.tag == SegmentTag::Audio) n += s.embeddings.rows();
    return n;
}

std::vector<SegmentTag> AudioPromptSequence::tags() const {
    std::vector<SegmentTag> out;
    for (const auto& s : segments) out.push_back(s.tag);
    return out;
}

TargetSpan AudioPromptSequence::target_span() const {
    Eigen::Index offset = 0;
    for (const auto& s : segments) {
        if (s.tag == SegmentTag::TargetText) return {offset, offset + s.embeddings.rows()};
        offset += s.embeddings.rows();
    }
    return {offset, offset};
}

std::vector<int> AudioPromptSequence::token_ids() const {
    std::vector<int> ids;
    for (const auto& s : segments) {
        if (!s.tokens.empty())
            ids.insert(ids.end(), s.tokens.begin(), s.tokens.end());
        else
            ids.insert(ids.end(), static_cast<std::size_t>(s.embeddings.rows()), -1);
    }
    return ids;
}

ad::Var AudioPromptSequence::embeddings() const {
    std::vector<ad::Var> parts;
    for (const auto& s : segments)
        if (s.embeddings.rows() > 0) parts.push_back(s.embeddings);
    return ad::concat_rows(parts);
}

void AudioPromptSequence::validate() const {
    bool seen_prompt = false;
    int open = 0;
    for (const auto& s : segments) {
        switch (s.tag) {
        case SegmentTag::Audio:
            if (seen_prompt) throw Error(ErrorKind::InvalidInput, "audio must precede the prompt");
            break;
        case SegmentTag::BoundaryPre: ++open; break;
        case SegmentTag::BoundaryPost:
            if (--open < 0) throw Error(ErrorKind::InvalidInput, "boundary-post without boundary-pre");
            break;
        case SegmentTag::PromptText: seen_prompt = true; break;
        default: break;
        }
    }
    if (open != 0) throw Error(ErrorKind::InvalidInput, "unmatched boundary-pre");
}

namespace {

Segment boundary(const BoundaryPair& b, SegmentTag tag, ad::Tape& t, const std::string& label) {
    return {tag, t.param(tag == SegmentTag::BoundaryPre ? *b.pre : *b.post), {}, label};
}

void require_backbone(const FrameMatrix& x, const char* what) {
    if (x.space != DimSpace::Backbone) throw Error(ErrorKind::InvalidInput, std::string(what) + " is not in backbone space");
}

} // namespace

AudioPromptSequence assemble_prefix_p(const FrameMatrix& p_w2v, const FrameMatrix& p_muq, const FrameMatrix& p_sslam,
                                      const FrameMatrix& x_wh, const BoundaryPair& inner, Eigen::Index prefix_tokens) {
    for (const FrameMatrix* p : {&p_w2v, &p_muq, &p_sslam}) {
        if (p->frames() != prefix_tokens)
            throw Error(ErrorKind::InvalidInput, "perceiver block must have exactly " + std::to_string(prefix_tokens) +
                                                     " tokens, got " + std::to_string(p->frames()));
        require_backbone(*p, "perceiver block");
    }
    require_backbone(x_wh, "content stream");
    ad::Tape& t = *x_wh.data.tape();
    AudioPromptSequence seq;
    seq.segments.push_back(boundary(inner, SegmentTag::BoundaryPre, t, "prefix"));
    seq.segments.push_back({SegmentTag::Audio, p_w2v.data, {}, "prefix:speech-traits"});
    seq.segments.push_back({SegmentTag::Audio, p_muq.data, {}, "prefix:music"});
    seq.segments.push_back({SegmentTag::Audio, p_sslam.data, {}, "prefix:sound"});
    seq.segments.push_back(boundary(inner, SegmentTag::BoundaryPost, t, "prefix"));
    seq.segments.push_back({SegmentTag::Audio, x_wh.data, {}, "content"});
    return seq;
}

AudioPromptSequence assemble_ensemble_e(const FrameMatrix& h3, const FrameMatrix& x_wh, const EnsembleTexts& texts,
                                        const BoundaryPair& ca_boundaries, const BoundaryPair& wh_boundaries) {
    if (h3.token_rate != x_wh.token_rate)
        throw Error(ErrorKind::InvalidInput, "ensemble streams have different frame rates");
    require_backbone(h3, "fused stream");
    require_backbone(x_wh, "content stream");
    ad::Tape& t = *h3.data.tape();
    AudioPromptSequence seq;
    seq.segments.push_back({SegmentTag::InstructionText, texts.intro.embeddings, texts.intro.tokens, "I_e"});
    seq.segments.push_back({SegmentTag::InstructionText, texts.first_pass.embeddings, texts.first_pass.tokens, "I_1"});
    seq.segments.push_back(boundary(ca_boundaries, SegmentTag::BoundaryPre, t, "fused"));
    seq.segments.push_back({SegmentTag::Audio, h3.data, {}, "fused"});
    seq.segments.push_back(boundary(ca_boundaries, SegmentTag::BoundaryPost, t, "fused"));
    seq.segments.push_back({SegmentTag::InstructionText, texts.second_pass.embeddings, texts.second_pass.tokens, "I_2"});
    seq.segments.push_back(boundary(wh_boundaries, SegmentTag::BoundaryPre, t, "content"));
    seq.segments.push_back({SegmentTag::Audio, x_wh.data, {}, "content"});
    seq.segments.push_back(boundary(wh_boundaries, SegmentTag::BoundaryPost, t, "content"));
    return seq;
}

AudioPromptSequence append_prompt(const AudioPromptSequence& audio, const TokenBlock& prompt, const TokenBlock& target) {
    if (prompt.tokens.empty()) throw Error(ErrorKind::InvalidInput, "prompt is empty");
    AudioPromptSequence seq = audio;
    seq.segments.push_back({SegmentTag::PromptText, prompt.embeddings, prompt.tokens, "prompt"});
    if (!target.tokens.empty())
        seq.segments.push_back({SegmentTag::TargetText, target.embeddings, target.tokens, "target"});
    seq.validate();
    return seq;
}

AudioPromptSequence wrap_audio_prompt(const AudioPromptSequence& audio, const TokenBlock& prompt,
                                      const TokenBlock& target, const BoundaryPair& boundaries) {
    if (prompt.tokens.empty()) throw Error(ErrorKind::InvalidInput, "prompt is empty");
    if (audio.segments.empty()) throw Error(ErrorKind::InvalidInput, "audio region is empty");
    ad::Tape& t = *audio.segments.front().embeddings.tape();
    AudioPromptSequence seq;
    seq.segments.push_back(boundary(boundaries, SegmentTag::BoundaryPre, t, "audio"));
    seq.segments.insert(seq.segments.end(), audio.segments.begin(), audio.segments.end());
    seq.segments.push_back(boundary(boundaries, SegmentTag::BoundaryPost, t, "audio"));
    return append_prompt(seq, prompt, target);
}

AudioPromptSequence audio_region(const FrameMatrix& stream, const std::string& label) {
    require_backbone(stream, "audio stream");
    AudioPromptSequence seq;
    seq.segments.push_back({SegmentTag::Audio, stream.data, {}, label});
    return seq;
}

} // namespace alm
