#include "alarm/model.hpp"

#include "alarm/error.hpp"

namespace alm {

std::string to_string(Variant v) {
    switch (v) {
    case Variant::SingleContent: return "single-content";
    case Variant::SingleSpeechTraits: return "single-speech";
    case Variant::SingleMusic: return "single-music";
    case Variant::SingleSound: return "single-sound";
    case Variant::CrossAttention: return "ca";
    case Variant::Perceiver: return "p";
    case Variant::Ensemble: return "e";
    }
    return "unknown";
}

Variant parse_variant(const std::string& text) {
    for (auto v : {Variant::SingleContent, Variant::SingleSpeechTraits, Variant::SingleMusic, Variant::SingleSound,
                   Variant::CrossAttention, Variant::Perceiver, Variant::Ensemble})
        if (to_string(v) == text) return v;
    if (text == "single-speech-traits") return Variant::SingleSpeechTraits;
    throw Error(ErrorKind::InvalidInput, "unknown variant '" + text + "'");
}

std::optional<EncoderRole> single_role(Variant v) {
    switch (v) {
    case Variant::SingleContent: return EncoderRole::Content;
    case Variant::SingleSpeechTraits: return EncoderRole::SpeechTraits;
    case Variant::SingleMusic: return EncoderRole::Music;
    case Variant::SingleSound: return EncoderRole::Sound;
    default: return std::nullopt;
    }
}

Variant single_variant(EncoderRole role) {
    switch (role) {
    case EncoderRole::Content: return Variant::SingleContent;
    case EncoderRole::SpeechTraits: return Variant::SingleSpeechTraits;
    case EncoderRole::Music: return Variant::SingleMusic;
    case EncoderRole::Sound: return Variant::SingleSound;
    }
    return Variant::SingleContent;
}

std::vector<EncoderRole> required_roles(Variant v) {
    if (auto r = single_role(v)) return {*r};
    return {kFusionOrder.begin(), kFusionOrder.end()};
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"fusion_width", c.fusion_width},
         {"mlp_hidden", c.mlp_hidden},
         {"heads", c.heads},
         {"ff_expansion", c.ff_expansion},
         {"ca_depth", c.ca_depth},
         {"perceiver_latents", c.perceiver_latents},
         {"perceiver_depth", c.perceiver_depth},
         {"seed", c.seed},
         {"ensemble_intro", c.ensemble_intro},
         {"ensemble_first", c.ensemble_first},
         {"ensemble_second", c.ensemble_second}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.fusion_width = j.value("fusion_width", c.fusion_width);
    c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
    c.heads = j.value("heads", c.heads);
    c.ff_expansion = j.value("ff_expansion", c.ff_expansion);
    c.ca_depth = j.value("ca_depth", c.ca_depth);
    c.perceiver_latents = j.value("perceiver_latents", c.perceiver_latents);
    c.perceiver_depth = j.value("perceiver_depth", c.perceiver_depth);
    c.seed = j.value("seed", c.seed);
    c.ensemble_intro = j.value("ensemble_intro", c.ensemble_intro);
    c.ensemble_first = j.value("ensemble_first", c.ensemble_first);
    c.ensemble_second = j.value("ensemble_second", c.ensemble_second);
}

FeatureSet FeatureProvider::features(const AudioRef& audio, const std::vector<EncoderRole>& roles) {
    FeatureSet out;
    for (auto role : roles) {
        const auto key = std::make_pair(audio.id, role_index(role));
        {
            std::lock_guard lock(mutex_);
            if (auto it = cache_.find(key); it != cache_.end()) {
                out[role_index(role)] = it->second;
                continue;
            }
        }
        LayerFeatures f = load_features(audio, bank_.spec(role));
        std::lock_guard lock(mutex_);
        out[role_index(role)] = cache_.emplace(key, std::move(f)).first->second;
    }
    return out;
}

namespace {

Rng component_rng(std::uint64_t seed, const std::string& name) { return Rng(derive_seed(seed, {name})); }

} // namespace

AlarmModel::AlarmModel(Variant variant, BankConfig bank, ModelConfig config, std::shared_ptr<Backbone> backbone)
    : variant_(variant), bank_(std::move(bank)), config_(std::move(config)), backbone_(std::move(backbone)) {
    if (variant_ == Variant::Ensemble)
        throw Error(ErrorKind::InvalidInput, "the ensemble is assembled from trained models, not built directly");
    if (!backbone_) throw Error(ErrorKind::InvalidInput, "model needs a backbone");
    const int d_lm = backbone_->config().d_model;
    const int width = config_.fusion_width;

    auto add_frontend = [&](EncoderRole role, bool with_projection) {
        const std::string prefix = "frontend." + to_string(role);
        Rng rng = component_rng(config_.seed, prefix);
        frontends_[role_index(role)] =
            EncoderFrontend::create(params_, prefix, bank_.spec(role), width, config_.mlp_hidden, rng);
        if (with_projection) projections_[role_index(role)] = Projection::create(params_, prefix + ".proj", width, d_lm, rng);
    };

    if (auto role = single_role(variant_)) {
        add_frontend(*role, true);
    } else if (variant_ == Variant::CrossAttention) {
        for (auto role : kFusionOrder) add_frontend(role, false);
        for (int s = 0; s < 3; ++s) {
            const std::string prefix = "fusion.ca.stage" + std::to_string(s + 1);
            Rng rng = component_rng(config_.seed, prefix);
            ca_stages_[static_cast<std::size_t>(s)] = CrossAttentionParams::create(
                params_, prefix, width, config_.heads, config_.ca_depth, config_.ff_expansion, rng);
        }
        Rng rng = component_rng(config_.seed, "fusion.ca.proj");
        ca_projection_ = Projection::create(params_, "fusion.ca.proj", width, d_lm, rng);
    } else if (variant_ == Variant::Perceiver) {
        add_frontend(EncoderRole::Content, true);
        for (auto role : {EncoderRole::SpeechTraits, EncoderRole::Music, EncoderRole::Sound}) {
            const std::string prefix = "fusion.p." + to_string(role);
            const auto& spec = bank_.spec(role);
            Rng rng = component_rng(config_.seed, prefix);
            perceiver_weights_[role_index(role)] =
                LayerWeights::create(params_, prefix, spec.name, spec.layer_indices.size());
            perceivers_[role_index(role)] =
                PerceiverParams::create(params_, prefix, spec.feature_dim, d_lm, config_.perceiver_latents,
                                        config_.heads, config_.perceiver_depth, config_.ff_expansion, rng);
        }
        Rng rng = component_rng(config_.seed, "boundary.inner");
        inner_ = BoundaryPair::create(params_, "boundary.inner", d_lm, rng);
    }
    Rng rng = component_rng(config_.seed, "boundary.outer");
    outer_ = BoundaryPair::create(params_, "boundary.outer", d_lm, rng);
}

const PerceiverParams& AlarmModel::perceiver(EncoderRole role) const {
    const auto& p = perceivers_[role_index(role)];
    if (!p) throw Error(ErrorKind::InvalidInput, "no perceiver for role " + to_string(role));
    return *p;
}

const LayerFeatures& AlarmModel::feature(const FeatureSet& features, EncoderRole role) const {
    const auto& f = features[role_index(role)];
    if (!f) throw Error(ErrorKind::InvalidInput, "missing features for role " + to_string(role));
    return *f;
}

FrameMatrix AlarmModel::adapted_stream(ad::Tape& tape, EncoderRole role, const FeatureSet& features) const {
    const auto& fe = frontends_[role_index(role)];
    if (!fe) throw Error(ErrorKind::InvalidInput, to_string(variant_) + " has no frontend for " + to_string(role));
    return fe->forward(tape, feature(features, role));
}

FrameMatrix AlarmModel::audio_stream(ad::Tape& tape, const FeatureSet& features) const {
    if (auto role = single_role(variant_))
        return project(adapted_stream(tape, *role, features), *projections_[role_index(*role)]);
    if (variant_ == Variant::CrossAttention) {
        FrameMatrix h3 = fuse_ca(adapted_stream(tape, EncoderRole::Content, features),
                                 adapted_stream(tape, EncoderRole::SpeechTraits, features),
                                 adapted_stream(tape, EncoderRole::Music, features),
                                 adapted_stream(tape, EncoderRole::Sound, features), ca_stages_);
        return project(h3, *ca_projection_);
    }
    throw Error(ErrorKind::InvalidInput, to_string(variant_) + " has no single audio stream");
}

AudioPromptSequence AlarmModel::audio_region(ad::Tape& tape, const FeatureSet& features) const {
    if (variant_ != Variant::Perceiver) return alm::audio_region(audio_stream(tape, features), to_string(variant_));
    FrameMatrix x_wh =
        project(adapted_stream(tape, EncoderRole::Content, features), *projections_[role_index(EncoderRole::Content)]);
    std::array<FrameMatrix, 4> prefix;
    for (auto role : {EncoderRole::SpeechTraits, EncoderRole::Music, EncoderRole::Sound}) {
        FrameMatrix agg = aggregate_layers(tape, feature(features, role), *perceiver_weights_[role_index(role)]);
        prefix[role_index(role)] = perceiver_compress(agg, *perceivers_[role_index(role)]);
    }
    return assemble_prefix_p(prefix[role_index(EncoderRole::SpeechTraits)], prefix[role_index(EncoderRole::Music)],
                             prefix[role_index(EncoderRole::Sound)], x_wh, inner_, config_.perceiver_latents);
}

AudioPromptSequence AlarmModel::build_sequence(ad::Tape& tape, const FeatureSet& features, const std::string& prompt,
                                               const std::string& target) const {
    TokenBlock p = backbone_->embed_text(tape, prompt);
    TokenBlock r = target.empty() ? backbone_->embed_tokens(tape, {}) : backbone_->embed_text(tape, target, true);
    return wrap_audio_prompt(audio_region(tape, features), p, r, outer_);
}

EnsembleModel::EnsembleModel(const AlarmModel& fused, const AlarmModel& content) : fused_(fused), content_(content) {
    if (fused.variant() != Variant::CrossAttention)
        throw Error(ErrorKind::IncompatibleCheckpoint, "ensemble needs a CA model as its first checkpoint");
    if (content.variant() != Variant::SingleContent)
        throw Error(ErrorKind::IncompatibleCheckpoint, "ensemble needs a single-content model as its second checkpoint");
    if (freeze_fingerprint(fused.backbone().params()) != freeze_fingerprint(content.backbone().params()))
        throw Error(ErrorKind::IncompatibleCheckpoint, "ensemble members use different backbones");
}

AudioPromptSequence EnsembleModel::ensemble_region(ad::Tape& tape, const FeatureSet& features) const {
    const Backbone& bb = backbone();
    const ModelConfig& cfg = fused_.config();
    EnsembleTexts texts{bb.embed_text(tape, cfg.ensemble_intro), bb.embed_text(tape, cfg.ensemble_first),
                        bb.embed_text(tape, cfg.ensemble_second)};
    return assemble_ensemble_e(fused_.audio_stream(tape, features), content_.audio_stream(tape, features), texts,
                               fused_.outer_boundaries(), content_.outer_boundaries());
}

AudioPromptSequence EnsembleModel::build_sequence(ad::Tape& tape, const FeatureSet& features, const std::string& prompt,
                                                  const std::string& target) const {
    const Backbone& bb = backbone();
    TokenBlock p = bb.embed_text(tape, prompt);
    TokenBlock r = target.empty() ? bb.embed_tokens(tape, {}) : bb.embed_text(tape, target, true);
    return append_prompt(ensemble_region(tape, features), p, r);
}

} // namespace alm
