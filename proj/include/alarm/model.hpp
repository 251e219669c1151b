#pragma once

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "alarm/backbone.hpp"
#include "alarm/encoder_bank.hpp"
#include "alarm/frontend.hpp"
#include "alarm/fusion.hpp"

namespace alm {

enum class Variant { SingleContent, SingleSpeechTraits, SingleMusic, SingleSound, CrossAttention, Perceiver, Ensemble };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);
std::optional<EncoderRole> single_role(Variant v);
Variant single_variant(EncoderRole role);
std::vector<EncoderRole> required_roles(Variant v);

struct ModelConfig {
    int fusion_width = 64;
    int mlp_hidden = 128;
    int heads = 4;
    int ff_expansion = 4;
    int ca_depth = 2;
    int perceiver_latents = 20;
    int perceiver_depth = 2;
    std::uint64_t seed = 0;
    std::string ensemble_intro = "Listen to the audio in two passes focusing on different characteristics.";
    std::string ensemble_first = "Pass one:";
    std::string ensemble_second = "Pass two:";
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Per-role layer features of one clip; roles a variant does not use stay empty.
using FeatureSet = std::array<std::optional<LayerFeatures>, 4>;

/// Computes (pseudo) or loads (imported) features for clips and caches them by clip id.
class FeatureProvider {
public:
    explicit FeatureProvider(BankConfig bank) : bank_(std::move(bank)) {}

    FeatureSet features(const AudioRef& audio, const std::vector<EncoderRole>& roles);
    const BankConfig& bank() const { return bank_; }

private:
    BankConfig bank_;
    std::mutex mutex_;
    std::map<std::pair<std::string, std::size_t>, LayerFeatures> cache_;
};

/// Anything that turns (features, prompt, target) into a backbone input sequence.
class SequenceModel {
public:
    virtual ~SequenceModel() = default;
    virtual const Backbone& backbone() const = 0;
    virtual std::vector<EncoderRole> roles() const = 0;
    /// An empty target yields an inference prefix.
    virtual AudioPromptSequence build_sequence(ad::Tape& tape, const FeatureSet& features, const std::string& prompt,
                                               const std::string& target) const = 0;
};

/// Trainable audio front-end + fusion around a shared frozen backbone.
class AlarmModel : public SequenceModel {
public:
    AlarmModel(Variant variant, BankConfig bank, ModelConfig config, std::shared_ptr<Backbone> backbone);

    Variant variant() const { return variant_; }
    const BankConfig& bank() const { return bank_; }
    const ModelConfig& config() const { return config_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }
    const Backbone& backbone() const override { return *backbone_; }
    std::shared_ptr<Backbone> shared_backbone() const { return backbone_; }
    std::vector<EncoderRole> roles() const override { return required_roles(variant_); }

    /// Adapter output of the aggregated layers at 25 frames/s, fusion width.
    FrameMatrix adapted_stream(ad::Tape& tape, EncoderRole role, const FeatureSet& features) const;
    /// Backbone-space audio stream for single-encoder and CA variants (x_m or projected h3).
    FrameMatrix audio_stream(ad::Tape& tape, const FeatureSet& features) const;
    /// Audio region before the outer boundaries are added.
    AudioPromptSequence audio_region(ad::Tape& tape, const FeatureSet& features) const;
    AudioPromptSequence build_sequence(ad::Tape& tape, const FeatureSet& features, const std::string& prompt,
                                       const std::string& target) const override;

    const BoundaryPair& outer_boundaries() const { return outer_; }
    const std::array<CrossAttentionParams, 3>& ca_stages() const { return ca_stages_; }
    const PerceiverParams& perceiver(EncoderRole role) const;
    std::vector<std::string> census() const { return params_.census(); }

private:
    const LayerFeatures& feature(const FeatureSet& features, EncoderRole role) const;

    Variant variant_;
    BankConfig bank_;
    ModelConfig config_;
    std::shared_ptr<Backbone> backbone_;
    ParameterStore params_;
    std::array<std::optional<EncoderFrontend>, 4> frontends_;
    std::array<std::optional<Projection>, 4> projections_;
    std::array<CrossAttentionParams, 3> ca_stages_;
    std::optional<Projection> ca_projection_;
    std::array<std::optional<LayerWeights>, 4> perceiver_weights_;
    std::array<std::optional<PerceiverParams>, 4> perceivers_;
    BoundaryPair inner_;
    BoundaryPair outer_;
};

/// Inference-only ensemble of a CA model and a single-content model. Owns no parameters.
class EnsembleModel : public SequenceModel {
public:
    EnsembleModel(const AlarmModel& fused, const AlarmModel& content);

    const Backbone& backbone() const override { return fused_.backbone(); }
    std::vector<EncoderRole> roles() const override { return required_roles(Variant::Ensemble); }
    AudioPromptSequence ensemble_region(ad::Tape& tape, const FeatureSet& features) const;
    AudioPromptSequence build_sequence(ad::Tape& tape, const FeatureSet& features, const std::string& prompt,
                                       const std::string& target) const override;

private:
    const AlarmModel& fused_;
    const AlarmModel& content_;
};

} // namespace alm
