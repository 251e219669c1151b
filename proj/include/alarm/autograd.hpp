#pragma once

// Reverse-mode differentiation over dense Eigen matrices.
//
// A Tape records every intermediate value of one forward evaluation. Nodes are
// appended in topological order, so the backward sweep is a single reverse pass.
// Parameters bound with Tape::param() receive their gradient (accumulated) when
// backward() finishes; frozen parameters and constants are never differentiated.

#include <cstddef>
#include <functional>
#include <unordered_map>
#include <vector>

#include "alarm/parameter.hpp"

namespace alm::ad {

class Tape;

class Var {
public:
    Var() = default;

    const Matrix& value() const;
    const Matrix& grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    bool requires_grad() const;
    bool valid() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Backward backward;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var leaf(Matrix value, bool requires_grad = true);
    /// Binds a parameter; binding the same parameter twice returns the same node.
    Var param(Parameter& p);

    /// Seeds d(out)/d(out) = 1 (out must be 1x1) and sweeps backwards.
    void backward(Var out);
    void backward(Var out, const Matrix& seed);

    std::size_t size() const { return nodes_.size(); }

    // Op-construction interface.
    Var push(Matrix value, bool requires_grad, Backward fn);
    Node& node(std::size_t id) { return nodes_[id]; }
    const Node& node(std::size_t id) const { return nodes_[id]; }
    void accumulate(std::size_t id, const Matrix& g);
    template <typename Expr>
    void accumulate_expr(std::size_t id, const Expr& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0)
            n.grad = g;
        else
            n.grad += g;
    }

private:
    std::vector<Node> nodes_;
    std::vector<std::pair<std::size_t, Parameter*>> bindings_;
    std::unordered_map<const Parameter*, std::size_t> bound_;
};

Var matmul(Var a, Var b);
/// a * b^T without materializing the transpose.
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
/// Broadcast-adds a 1 x n row to every row of a.
Var add_row(Var a, Var row);
Var transpose(Var a);
Var gelu(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var softmax_rows(Var x, bool causal = false);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
/// Unfolds a T x C sequence into T_out x (kernel*C) windows (zero padded).
Var im2col(Var x, int kernel, int stride, int padding);
/// sum_l alpha(0, l) * layers[l]; alpha is 1 x L.
Var weighted_sum(const std::vector<Var>& layers, Var alpha);
Var gather_rows(Var table, const std::vector<int>& ids);
Var sum(Var a);
/// sum(a .* weights) for a constant weight matrix; 1 x 1.
Var dot(Var a, const Matrix& weights);
/// Mean over `positions` of -log softmax(logits.row(p))[targets[k]].
Var cross_entropy(Var logits, const std::vector<int>& targets, const std::vector<Eigen::Index>& positions);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return matmul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

} // namespace alm::ad
