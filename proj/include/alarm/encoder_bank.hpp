#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "alarm/parameter.hpp"

namespace alm {

enum class EncoderRole { Content, SpeechTraits, Music, Sound };
enum class FeatureSource { Pseudo, Imported };

/// Fixed fusion order: content -> speech-traits -> music -> sound.
inline constexpr std::array<EncoderRole, 4> kFusionOrder = {EncoderRole::Content, EncoderRole::SpeechTraits,
                                                           EncoderRole::Music, EncoderRole::Sound};

std::string to_string(EncoderRole role);
EncoderRole parse_role(const std::string& text);
std::size_t role_index(EncoderRole role);

struct EncoderSpec {
    std::string name;
    EncoderRole role = EncoderRole::Content;
    double native_rate = 50.0;
    int feature_dim = 64;
    std::vector<int> layer_indices;
    FeatureSource source = FeatureSource::Pseudo;

    /// Throws invalid-spec when an invariant is broken.
    void validate() const;
};

struct AudioRef {
    std::string id;
    double duration = 0.0;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> path;
};

/// Multi-layer frame features of one encoder for one clip; every layer is frames x dim.
struct LayerFeatures {
    std::string encoder;
    std::vector<Matrix> layers;
    double token_rate = 0.0;
    double duration = 0.0;

    Eigen::Index frames() const { return layers.empty() ? 0 : layers.front().rows(); }
    Eigen::Index dim() const { return layers.empty() ? 0 : layers.front().cols(); }
};

struct BankConfig {
    std::array<EncoderSpec, 4> encoders; // indexed by role_index()

    const EncoderSpec& spec(EncoderRole role) const { return encoders[role_index(role)]; }
    /// Frames per second if every encoder stream were concatenated along time.
    double naive_concat_rate() const;
};

/// round-half-up(duration * rate)
Eigen::Index frame_count(double duration, double rate);

LayerFeatures encode_pseudo(const AudioRef& audio, const EncoderSpec& spec);
LayerFeatures import_features(const AudioRef& audio, const EncoderSpec& spec);
/// Dispatches on spec.source.
LayerFeatures load_features(const AudioRef& audio, const EncoderSpec& spec);

/// Writes the self-describing container: one JSON header line, then little-endian float32 row-major payload.
void write_features(const std::filesystem::path& path, const LayerFeatures& features, const std::vector<int>& layer_ids);
/// Resolves the feature file for (audio, encoder); a directory path maps to <dir>/<encoder>.feat.
std::filesystem::path feature_path(const AudioRef& audio, const EncoderSpec& spec);

BankConfig validate_bank(const std::vector<EncoderSpec>& specs);
/// Whisper / W2V-BERT-2.0 / MuQ / SSLAM stand-ins with their layer selections at the given width.
std::vector<EncoderSpec> default_encoder_specs(int feature_dim = 64);
BankConfig default_bank(int feature_dim = 64);

void to_json(nlohmann::json& j, const EncoderSpec& spec);
void from_json(const nlohmann::json& j, EncoderSpec& spec);
void to_json(nlohmann::json& j, const AudioRef& audio);
void from_json(const nlohmann::json& j, AudioRef& audio);
/// Reads {"encoders": [...]} from a JSON file.
BankConfig load_bank_config(const std::filesystem::path& path);
BankConfig bank_from_json(const nlohmann::json& j);
nlohmann::json bank_to_json(const BankConfig& bank);

} // namespace alm
