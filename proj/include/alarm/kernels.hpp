#pragma once

// Dense numeric kernels shared by the autodiff ops and by plain inference code.
// All kernels are row-oriented: a matrix is a sequence of frames/tokens (rows)
// over a feature axis (columns).

#include <cmath>
#include <concepts>
#include <numbers>
#include <limits>

#include <Eigen/Dense>

namespace alm::kernels {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

// Exact GELU: x * Phi(x).
template <std::floating_point Scalar>
Scalar gelu(Scalar x) {
    return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
}

template <std::floating_point Scalar>
Scalar gelu_derivative(Scalar x) {
    const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
    const Scalar pdf = std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
    return cdf + x * pdf;
}

template <typename Derived>
auto gelu(const Eigen::MatrixBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    return x.unaryExpr([](Scalar v) { return gelu(v); });
}

template <typename Derived>
auto gelu_derivative(const Eigen::MatrixBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    return x.unaryExpr([](Scalar v) { return gelu_derivative(v); });
}

/// Row-wise softmax. When `causal` is set, entry (i, j) with j > i is masked out.
template <typename Derived>
Mat<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& s, bool causal = false) {
    using Scalar = typename Derived::Scalar;
    Mat<Scalar> p(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const Eigen::Index valid = causal ? std::min<Eigen::Index>(i + 1, s.cols()) : s.cols();
        const Scalar mx = s.row(i).head(valid).maxCoeff();
        Scalar total(0);
        for (Eigen::Index j = 0; j < valid; ++j) {
            p(i, j) = std::exp(s(i, j) - mx);
            total += p(i, j);
        }
        for (Eigen::Index j = 0; j < valid; ++j) p(i, j) /= total;
        for (Eigen::Index j = valid; j < s.cols(); ++j) p(i, j) = Scalar(0);
    }
    return p;
}

/// Backward of row softmax given the forward probabilities.
template <typename DerivedP, typename DerivedG>
Mat<typename DerivedP::Scalar> softmax_rows_backward(const Eigen::MatrixBase<DerivedP>& p,
                                                     const Eigen::MatrixBase<DerivedG>& grad) {
    using Scalar = typename DerivedP::Scalar;
    Mat<Scalar> dot = (p.array() * grad.array()).rowwise().sum();
    Mat<Scalar> out = p.array() * (grad.colwise() - dot.col(0)).array();
    return out;
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& row) {
    using Scalar = typename Derived::Scalar;
    const Scalar mx = row.maxCoeff();
    return mx + std::log((row.array() - mx).exp().sum());
}

/// Per-row layer normalization statistics and normalized values.
template <typename Scalar>
struct LayerNormCache {
    Mat<Scalar> normalized;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std;
};

template <typename Derived>
LayerNormCache<typename Derived::Scalar> layer_norm_normalize(const Eigen::MatrixBase<Derived>& x,
                                                              typename Derived::Scalar eps) {
    using Scalar = typename Derived::Scalar;
    LayerNormCache<Scalar> cache;
    const Eigen::Index n = x.cols();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean = x.rowwise().mean();
    Mat<Scalar> centered = x.colwise() - mean;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> var = centered.array().square().rowwise().sum() / Scalar(n);
    cache.inv_std = (var.array() + eps).rsqrt();
    cache.normalized = centered.array().colwise() * cache.inv_std.array();
    return cache;
}

/// Backward through the normalization (not the affine part): given d(normalized), returns dx.
template <typename Scalar>
Mat<Scalar> layer_norm_normalize_backward(const LayerNormCache<Scalar>& cache, const Mat<Scalar>& dnorm) {
    const Scalar n = Scalar(cache.normalized.cols());
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean_d = dnorm.rowwise().sum() / n;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean_dx =
        (dnorm.array() * cache.normalized.array()).rowwise().sum() / n;
    Mat<Scalar> out = (dnorm.colwise() - mean_d).array() - cache.normalized.array().colwise() * mean_dx.array();
    return out.array().colwise() * cache.inv_std.array();
}

} // namespace alm::kernels
