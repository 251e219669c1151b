#pragma once

#include <string>
#include <vector>

#include "alarm/autograd.hpp"
#include "alarm/encoder_bank.hpp"

namespace alm {

enum class DimSpace { EncoderNative, Backbone };

/// A frame sequence living on a tape: rows are frames.
struct FrameMatrix {
    ad::Var data;
    double token_rate = 0.0;
    DimSpace space = DimSpace::EncoderNative;

    Eigen::Index frames() const { return data.rows(); }
    Eigen::Index dim() const { return data.cols(); }
};

/// Learnable per-layer logits; alpha = softmax(logits). Initialized to zero (uniform alpha).
struct LayerWeights {
    std::string encoder;
    Parameter* logits = nullptr; // 1 x L

    static LayerWeights create(ParameterStore& store, const std::string& prefix, const std::string& encoder,
                               std::size_t layers);
    Eigen::RowVectorXd alpha() const;
};

/// conv(k=3, s=1, p=1) -> GELU -> per-frame LayerNorm -> conv(k=4, s=2, p=1). Halves the frame count.
struct ConvAdapter {
    Parameter* conv1_w = nullptr; // (3 * in) x width
    Parameter* conv1_b = nullptr;
    Parameter* norm_gamma = nullptr;
    Parameter* norm_beta = nullptr;
    Parameter* conv2_w = nullptr; // (4 * width) x width
    Parameter* conv2_b = nullptr;

    static ConvAdapter create(ParameterStore& store, const std::string& prefix, int in_dim, int width, Rng& rng);
};

/// Linear -> GELU -> Linear, applied per frame.
struct MlpAdapter {
    Parameter* fc1_w = nullptr;
    Parameter* fc1_b = nullptr;
    Parameter* fc2_w = nullptr;
    Parameter* fc2_b = nullptr;

    static MlpAdapter create(ParameterStore& store, const std::string& prefix, int in_dim, int hidden, int width,
                             Rng& rng);
};

struct Projection {
    Parameter* weight = nullptr; // in x out
    Parameter* bias = nullptr;   // 1 x out

    static Projection create(ParameterStore& store, const std::string& prefix, int in_dim, int out_dim, Rng& rng);
    static Projection identity(ParameterStore& store, const std::string& prefix, int dim);
    Eigen::Index in_dim() const { return weight->value.rows(); }
    Eigen::Index out_dim() const { return weight->value.cols(); }
};

enum class AdapterKind { Conv, Mlp };

FrameMatrix aggregate_layers(ad::Tape& tape, const LayerFeatures& features, const LayerWeights& weights);
/// Differentiable in both the layer features and the logits.
FrameMatrix aggregate_layers(const std::vector<ad::Var>& layers, ad::Var logits, double token_rate);

FrameMatrix adapt_conv(const FrameMatrix& x, const ConvAdapter& params);
FrameMatrix adapt_mlp(const FrameMatrix& x, const MlpAdapter& params);
FrameMatrix project(const FrameMatrix& x, const Projection& proj);

/// Per-encoder path: layer aggregation followed by the rate-appropriate adapter.
struct EncoderFrontend {
    EncoderRole role = EncoderRole::Content;
    AdapterKind kind = AdapterKind::Conv;
    LayerWeights weights;
    ConvAdapter conv;
    MlpAdapter mlp;

    /// Builds the adapter kind that matches the encoder's native rate (conv at 50/s, MLP at 25/s).
    static EncoderFrontend create(ParameterStore& store, const std::string& prefix, const EncoderSpec& spec, int width,
                                  int mlp_hidden, Rng& rng);
    /// Output is at 25 frames/s, encoder-native width.
    FrameMatrix forward(ad::Tape& tape, const LayerFeatures& features) const;
};

} // namespace alm
