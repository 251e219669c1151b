#include "alarm/frontend.hpp"

#include "alarm/error.hpp"
#include "alarm/kernels.hpp"

namespace alm {

LayerWeights LayerWeights::create(ParameterStore& store, const std::string& prefix, const std::string& encoder,
                                  std::size_t layers) {
    LayerWeights w;
    w.encoder = encoder;
    w.logits = &store.add(prefix + ".layer_weights", Matrix::Zero(1, static_cast<Eigen::Index>(layers)), false);
    return w;
}

Eigen::RowVectorXd LayerWeights::alpha() const { return kernels::softmax_rows(logits->value).row(0); }

ConvAdapter ConvAdapter::create(ParameterStore& store, const std::string& prefix, int in_dim, int width, Rng& rng) {
    ConvAdapter a;
    a.conv1_w = &store.add(prefix + ".conv1.weight", fan_in_gaussian(3 * in_dim, width, rng), true);
    a.conv1_b = &store.add(prefix + ".conv1.bias", Matrix::Zero(1, width), false);
    a.norm_gamma = &store.add(prefix + ".norm.gamma", Matrix::Ones(1, width), false);
    a.norm_beta = &store.add(prefix + ".norm.beta", Matrix::Zero(1, width), false);
    a.conv2_w = &store.add(prefix + ".conv2.weight", fan_in_gaussian(4 * width, width, rng), true);
    a.conv2_b = &store.add(prefix + ".conv2.bias", Matrix::Zero(1, width), false);
    return a;
}

MlpAdapter MlpAdapter::create(ParameterStore& store, const std::string& prefix, int in_dim, int hidden, int width,
                              Rng& rng) {
    MlpAdapter a;
    a.fc1_w = &store.add(prefix + ".fc1.weight", fan_in_gaussian(in_dim, hidden, rng), true);
    a.fc1_b = &store.add(prefix + ".fc1.bias", Matrix::Zero(1, hidden), false);
    a.fc2_w = &store.add(prefix + ".fc2.weight", fan_in_gaussian(hidden, width, rng), true);
    a.fc2_b = &store.add(prefix + ".fc2.bias", Matrix::Zero(1, width), false);
    return a;
}

Projection Projection::create(ParameterStore& store, const std::string& prefix, int in_dim, int out_dim, Rng& rng) {
    Projection p;
    p.weight = &store.add(prefix + ".weight", fan_in_gaussian(in_dim, out_dim, rng), true);
    p.bias = &store.add(prefix + ".bias", Matrix::Zero(1, out_dim), false);
    return p;
}

Projection Projection::identity(ParameterStore& store, const std::string& prefix, int dim) {
    Projection p;
    p.weight = &store.add(prefix + ".weight", Matrix::Identity(dim, dim), true);
    p.bias = &store.add(prefix + ".bias", Matrix::Zero(1, dim), false);
    return p;
}

FrameMatrix aggregate_layers(ad::Tape& tape, const LayerFeatures& features, const LayerWeights& weights) {
    std::vector<ad::Var> layers;
    layers.reserve(features.layers.size());
    for (const auto& l : features.layers) layers.push_back(tape.constant(l));
    if (weights.logits == nullptr) throw Error(ErrorKind::InvalidInput, "layer weights are not initialized");
    return aggregate_layers(layers, tape.param(*weights.logits), features.token_rate);
}

FrameMatrix aggregate_layers(const std::vector<ad::Var>& layers, ad::Var logits, double token_rate) {
    if (layers.empty() || logits.rows() != 1 || logits.cols() != static_cast<Eigen::Index>(layers.size()))
        throw Error(ErrorKind::InvalidInput, "layer weight count does not match the number of feature layers");
    for (const auto& l : layers)
        if (l.rows() != layers.front().rows() || l.cols() != layers.front().cols())
            throw Error(ErrorKind::InvalidInput, "feature layers must share one shape");
    ad::Var alpha = ad::softmax_rows(logits);
    return {ad::weighted_sum(layers, alpha), token_rate, DimSpace::EncoderNative};
}

namespace {

ad::Var conv1d(ad::Var x, Parameter& w, Parameter& b, int kernel, int stride, int padding) {
    ad::Tape& t = *x.tape();
    ad::Var cols = ad::im2col(x, kernel, stride, padding);
    return ad::add_row(ad::matmul(cols, t.param(w)), t.param(b));
}

ad::Var linear(ad::Var x, Parameter& w, Parameter& b) {
    ad::Tape& t = *x.tape();
    return ad::add_row(ad::matmul(x, t.param(w)), t.param(b));
}

} // namespace

FrameMatrix adapt_conv(const FrameMatrix& x, const ConvAdapter& p) {
    if (x.token_rate != 50.0) throw Error(ErrorKind::RateError, "conv adapter expects 50 frames/s input");
    if (x.frames() < 4) throw Error(ErrorKind::TooShort, "conv adapter needs at least 4 frames");
    if (x.dim() * 3 != p.conv1_w->value.rows()) throw Error(ErrorKind::InvalidInput, "conv adapter input width mismatch");
    ad::Tape& t = *x.data.tape();
    ad::Var h = conv1d(x.data, *p.conv1_w, *p.conv1_b, 3, 1, 1);
    h = ad::gelu(h);
    h = ad::layer_norm(h, t.param(*p.norm_gamma), t.param(*p.norm_beta));
    h = conv1d(h, *p.conv2_w, *p.conv2_b, 4, 2, 1);
    return {h, 25.0, DimSpace::EncoderNative};
}

FrameMatrix adapt_mlp(const FrameMatrix& x, const MlpAdapter& p) {
    if (x.token_rate != 25.0) throw Error(ErrorKind::RateError, "MLP adapter expects 25 frames/s input");
    if (x.dim() != p.fc1_w->value.rows()) throw Error(ErrorKind::InvalidInput, "MLP adapter input width mismatch");
    ad::Var h = ad::gelu(linear(x.data, *p.fc1_w, *p.fc1_b));
    h = linear(h, *p.fc2_w, *p.fc2_b);
    return {h, 25.0, DimSpace::EncoderNative};
}

FrameMatrix project(const FrameMatrix& x, const Projection& proj) {
    if (x.space != DimSpace::EncoderNative) throw Error(ErrorKind::InvalidInput, "input is already in backbone space");
    if (x.dim() != proj.in_dim()) throw Error(ErrorKind::InvalidInput, "projection input width mismatch");
    return {linear(x.data, *proj.weight, *proj.bias), x.token_rate, DimSpace::Backbone};
}

EncoderFrontend EncoderFrontend::create(ParameterStore& store, const std::string& prefix, const EncoderSpec& spec,
                                        int width, int mlp_hidden, Rng& rng) {
    EncoderFrontend f;
    f.role = spec.role;
    f.weights = LayerWeights::create(store, prefix, spec.name, spec.layer_indices.size());
    if (spec.native_rate == 50.0) {
        f.kind = AdapterKind::Conv;
        f.conv = ConvAdapter::create(store, prefix + ".adapter", spec.feature_dim, width, rng);
    } else {
        f.kind = AdapterKind::Mlp;
        f.mlp = MlpAdapter::create(store, prefix + ".adapter", spec.feature_dim, mlp_hidden, width, rng);
    }
    return f;
}

FrameMatrix EncoderFrontend::forward(ad::Tape& tape, const LayerFeatures& features) const {
    FrameMatrix agg = aggregate_layers(tape, features, weights);
    return kind == AdapterKind::Conv ? adapt_conv(agg, conv) : adapt_mlp(agg, mlp);
}

} // namespace alm
