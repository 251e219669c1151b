#include "alarm/encoder_bank.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "alarm/error.hpp"
#include "alarm/rng.hpp"

namespace alm {

std::string to_string(EncoderRole role) {
    switch (role) {
    case EncoderRole::Content: return "content";
    case EncoderRole::SpeechTraits: return "speech-traits";
    case EncoderRole::Music: return "music";
    case EncoderRole::Sound: return "sound";
    }
    return "unknown";
}

EncoderRole parse_role(const std::string& text) {
    for (auto r : kFusionOrder)
        if (to_string(r) == text) return r;
    if (text == "speech") return EncoderRole::SpeechTraits;
    throw Error(ErrorKind::InvalidSpec, "unknown encoder role '" + text + "'");
}

std::size_t role_index(EncoderRole role) { return static_cast<std::size_t>(role); }

void EncoderSpec::validate() const {
    if (feature_dim <= 0) throw Error(ErrorKind::InvalidSpec, name + ": feature_dim must be positive");
    if (native_rate != 25.0 && native_rate != 50.0)
        throw Error(ErrorKind::InvalidSpec, name + ": native_rate must be 25 or 50");
    if (layer_indices.empty()) throw Error(ErrorKind::InvalidSpec, name + ": layer_indices is empty");
    for (std::size_t i = 1; i < layer_indices.size(); ++i)
        if (layer_indices[i] <= layer_indices[i - 1])
            throw Error(ErrorKind::InvalidSpec, name + ": layer_indices must be strictly increasing");
}

double BankConfig::naive_concat_rate() const {
    double total = 0.0;
    for (const auto& e : encoders) total += e.native_rate;
    return total;
}

Eigen::Index frame_count(double duration, double rate) {
    return static_cast<Eigen::Index>(std::floor(duration * rate + 0.5));
}

LayerFeatures encode_pseudo(const AudioRef& audio, const EncoderSpec& spec) {
    if (spec.feature_dim <= 0) throw Error(ErrorKind::InvalidSpec, spec.name + ": feature_dim must be positive");
    spec.validate();
    if (spec.source != FeatureSource::Pseudo) throw Error(ErrorKind::InvalidSpec, spec.name + " is not a pseudo encoder");
    if (!(audio.duration > 0.0) || !std::isfinite(audio.duration))
        throw Error(ErrorKind::InvalidInput, "audio '" + audio.id + "' has non-positive duration");
    const Eigen::Index frames = frame_count(audio.duration, spec.native_rate);
    if (frames < 1) throw Error(ErrorKind::InvalidInput, "audio '" + audio.id + "' is shorter than one frame");

    LayerFeatures out;
    out.encoder = spec.name;
    out.token_rate = spec.native_rate;
    out.duration = audio.duration;
    const std::uint64_t base = audio.seed.value_or(0);
    for (int layer : spec.layer_indices) {
        Rng rng(derive_seed(base, {audio.id, spec.name, std::to_string(layer), std::to_string(spec.feature_dim)}));
        Matrix steps = gaussian<double>(frames, spec.feature_dim, 1.0, rng);
        // Smooth random walk: cumulative sum over time, then standardize each feature column.
        for (Eigen::Index t = 1; t < frames; ++t) steps.row(t) += steps.row(t - 1);
        Eigen::RowVectorXd mean = steps.colwise().mean();
        steps.rowwise() -= mean;
        Eigen::RowVectorXd sd = (steps.array().square().colwise().sum() / static_cast<double>(frames)).sqrt();
        for (Eigen::Index d = 0; d < steps.cols(); ++d)
            if (sd(d) > 1e-12) steps.col(d) /= sd(d);
        out.layers.push_back(std::move(steps));
    }
    return out;
}

std::filesystem::path feature_path(const AudioRef& audio, const EncoderSpec& spec) {
    if (!audio.path) throw Error(ErrorKind::IoError, "audio '" + audio.id + "' has no feature path");
    std::filesystem::path p(*audio.path);
    if (std::filesystem::is_directory(p)) return p / (spec.name + ".feat");
    return p;
}

namespace {

float le_to_host(float v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    bits = __builtin_bswap32(bits);
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace

LayerFeatures import_features(const AudioRef& audio, const EncoderSpec& spec) {
    spec.validate();
    if (spec.source != FeatureSource::Imported) throw Error(ErrorKind::InvalidSpec, spec.name + " is not an imported encoder");
    const auto path = feature_path(audio, spec);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open feature file " + path.string());
    std::string header_line;
    if (!std::getline(in, header_line)) throw Error(ErrorKind::IoError, "cannot read header of " + path.string());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::FormatError, path.string() + ": bad header: " + e.what());
    }
    std::vector<std::int64_t> shape;
    double rate = 0.0;
    std::string dtype;
    try {
        shape = header.at("shape").get<std::vector<std::int64_t>>();
        rate = header.at("rate").get<double>();
        dtype = header.at("dtype").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::FormatError, path.string() + ": incomplete header: " + e.what());
    }
    if (dtype != "float32") throw Error(ErrorKind::FormatError, path.string() + ": dtype must be float32");
    if (shape.size() != 3 || shape[0] <= 0 || shape[1] <= 0 || shape[2] <= 0)
        throw Error(ErrorKind::FormatError, path.string() + ": shape must be [layers, frames, dim]");
    if (rate != spec.native_rate)
        throw Error(ErrorKind::SpecMismatch, path.string() + ": file rate " + std::to_string(rate) +
                                                 " differs from encoder rate " + std::to_string(spec.native_rate));
    if (shape[0] != static_cast<std::int64_t>(spec.layer_indices.size()))
        throw Error(ErrorKind::FormatError, path.string() + ": layer count does not match the encoder spec");
    if (shape[2] != spec.feature_dim)
        throw Error(ErrorKind::FormatError, path.string() + ": feature dim does not match the encoder spec");
    if (header.contains("layer_ids") && header["layer_ids"].get<std::vector<int>>() != spec.layer_indices)
        throw Error(ErrorKind::FormatError, path.string() + ": layer_ids differ from the encoder spec");
    if (audio.duration > 0.0 && std::llabs(shape[1] - frame_count(audio.duration, rate)) > 1)
        throw Error(ErrorKind::FormatError, path.string() + ": frame count inconsistent with clip duration");

    const std::size_t count = static_cast<std::size_t>(shape[0] * shape[1] * shape[2]);
    std::vector<float> payload(count);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
        throw Error(ErrorKind::FormatError, path.string() + ": truncated payload");
    if (in.peek() != std::char_traits<char>::eof())
        throw Error(ErrorKind::FormatError, path.string() + ": trailing bytes after payload");

    LayerFeatures out;
    out.encoder = spec.name;
    out.token_rate = rate;
    out.duration = audio.duration > 0.0 ? audio.duration : static_cast<double>(shape[1]) / rate;
    std::size_t k = 0;
    for (std::int64_t l = 0; l < shape[0]; ++l) {
        Matrix m(shape[1], shape[2]);
        for (std::int64_t t = 0; t < shape[1]; ++t)
            for (std::int64_t d = 0; d < shape[2]; ++d) {
                const float v = le_to_host(payload[k++]);
                if (!std::isfinite(v)) throw Error(ErrorKind::FormatError, path.string() + ": non-finite feature value");
                m(t, d) = v;
            }
        out.layers.push_back(std::move(m));
    }
    return out;
}

LayerFeatures load_features(const AudioRef& audio, const EncoderSpec& spec) {
    return spec.source == FeatureSource::Pseudo ? encode_pseudo(audio, spec) : import_features(audio, spec);
}

void write_features(const std::filesystem::path& path, const LayerFeatures& features, const std::vector<int>& layer_ids) {
    if (features.layers.empty()) throw Error(ErrorKind::InvalidInput, "no layers to write");
    nlohmann::json header = {
        {"shape", {features.layers.size(), features.frames(), features.dim()}},
        {"dtype", "float32"},
        {"rate", features.token_rate},
        {"layer_ids", layer_ids},
    };
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    out << header.dump() << '\n';
    for (const auto& layer : features.layers) {
        if (layer.rows() != features.frames() || layer.cols() != features.dim())
            throw Error(ErrorKind::InvalidInput, "layers must share one shape");
        for (Eigen::Index t = 0; t < layer.rows(); ++t)
            for (Eigen::Index d = 0; d < layer.cols(); ++d) {
                const float v = le_to_host(static_cast<float>(layer(t, d)));
                out.write(reinterpret_cast<const char*>(&v), sizeof(float));
            }
    }
}

BankConfig validate_bank(const std::vector<EncoderSpec>& specs) {
    std::array<bool, 4> seen{};
    BankConfig bank;
    for (const auto& s : specs) {
        try {
            s.validate();
        } catch (const Error& e) {
            throw Error(ErrorKind::BankError, e.what());
        }
        const auto idx = role_index(s.role);
        if (seen[idx]) throw Error(ErrorKind::BankError, "duplicate encoder role " + to_string(s.role));
        seen[idx] = true;
        bank.encoders[idx] = s;
    }
    for (auto r : kFusionOrder)
        if (!seen[role_index(r)]) throw Error(ErrorKind::BankError, "missing encoder role " + to_string(r));
    return bank;
}

std::vector<EncoderSpec> default_encoder_specs(int feature_dim) {
    return {
        {"whisper", EncoderRole::Content, 50.0, feature_dim, {8, 16, 24, 32}, FeatureSource::Pseudo},
        {"w2v-bert-2.0", EncoderRole::SpeechTraits, 50.0, feature_dim, {7, 11, 16, 21, 25}, FeatureSource::Pseudo},
        {"muq", EncoderRole::Music, 25.0, feature_dim, {5, 9, 13}, FeatureSource::Pseudo},
        {"sslam", EncoderRole::Sound, 50.0, feature_dim, {4, 8, 12}, FeatureSource::Pseudo},
    };
}

BankConfig default_bank(int feature_dim) { return validate_bank(default_encoder_specs(feature_dim)); }

void to_json(nlohmann::json& j, const EncoderSpec& spec) {
    j = {{"name", spec.name},
         {"role", to_string(spec.role)},
         {"native_rate", spec.native_rate},
         {"feature_dim", spec.feature_dim},
         {"layer_indices", spec.layer_indices},
         {"source", spec.source == FeatureSource::Pseudo ? "pseudo" : "imported"}};
}

void from_json(const nlohmann::json& j, EncoderSpec& spec) {
    spec.name = j.at("name").get<std::string>();
    spec.role = parse_role(j.at("role").get<std::string>());
    spec.native_rate = j.at("native_rate").get<double>();
    spec.feature_dim = j.value("feature_dim", 64);
    spec.layer_indices = j.at("layer_indices").get<std::vector<int>>();
    const auto src = j.value("source", std::string("pseudo"));
    if (src != "pseudo" && src != "imported") throw Error(ErrorKind::InvalidSpec, "unknown feature source '" + src + "'");
    spec.source = src == "pseudo" ? FeatureSource::Pseudo : FeatureSource::Imported;
}

void to_json(nlohmann::json& j, const AudioRef& audio) {
    j = {{"id", audio.id}, {"duration", audio.duration}};
    if (audio.seed) j["seed"] = *audio.seed;
    if (audio.path) j["path"] = *audio.path;
}

void from_json(const nlohmann::json& j, AudioRef& audio) {
    audio.id = j.at("id").get<std::string>();
    audio.duration = j.at("duration").get<double>();
    if (j.contains("seed")) audio.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("path")) audio.path = j["path"].get<std::string>();
}

BankConfig bank_from_json(const nlohmann::json& j) {
    try {
        return validate_bank(j.at("encoders").get<std::vector<EncoderSpec>>());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::BankError, std::string("bad bank config: ") + e.what());
    }
}

nlohmann::json bank_to_json(const BankConfig& bank) {
    nlohmann::json arr = nlohmann::json::array();
    for (auto r : kFusionOrder) arr.push_back(bank.spec(r));
    return {{"encoders", arr}};
}

BankConfig load_bank_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open bank config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::BankError, path.string() + ": " + e.what());
    }
    return bank_from_json(j.contains("bank") ? j["bank"] : j);
}

} // namespace alm
