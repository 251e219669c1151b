#include "alarm/autograd.hpp"

#include <cmath>

#include "alarm/error.hpp"
#include "alarm/kernels.hpp"

namespace alm::ad {

namespace {

void require_same_tape(const Var& a, const Var& b) {
    if (a.tape() != b.tape() || !a.valid()) throw Error(ErrorKind::InvalidInput, "operands live on different tapes");
}

void require_shape(bool ok, const char* op) {
    if (!ok) throw Error(ErrorKind::InvalidInput, std::string("shape mismatch in ") + op);
}

} // namespace

const Matrix& Var::value() const { return tape_->node(id_).value; }
const Matrix& Var::grad() const { return tape_->node(id_).grad; }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::push(Matrix value, bool requires_grad, Backward fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(Matrix value, bool requires_grad) { return push(std::move(value), requires_grad, nullptr); }

Var Tape::param(Parameter& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
    Var v = leaf(p.value, p.trainable);
    bound_[&p] = v.id();
    if (p.trainable) bindings_.emplace_back(v.id(), &p);
    return v;
}

void Tape::accumulate(std::size_t id, const Matrix& g) { accumulate_expr(id, g); }

void Tape::backward(Var out) {
    if (out.rows() != 1 || out.cols() != 1) throw Error(ErrorKind::InvalidInput, "backward() needs a scalar output");
    backward(out, Matrix::Ones(1, 1));
}

void Tape::backward(Var out, const Matrix& seed) {
    if (out.tape() != this) throw Error(ErrorKind::InvalidInput, "output belongs to another tape");
    accumulate(out.id(), seed);
    for (std::size_t i = out.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
        n.backward(*this, i);
    }
    for (auto [id, p] : bindings_) {
        const Matrix& g = nodes_[id].grad;
        if (g.size() == 0) continue;
        if (p->grad.size() == 0)
            p->grad = g;
        else
            p->grad += g;
    }
}

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    require_shape(a.cols() == b.rows(), "matmul");
    const std::size_t ia = a.id(), ib = b.id();
    Tape& t = *a.tape();
    return t.push(a.value() * b.value(), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.node(self).grad;
        if (t.node(ia).requires_grad) t.accumulate_expr(ia, g * t.node(ib).value.transpose());
        if (t.node(ib).requires_grad) t.accumulate_expr(ib, t.node(ia).value.transpose() * g);
    });
}

Var matmul_nt(Var a, Var b) {
    require_same_tape(a, b);
    require_shape(a.cols() == b.cols(), "matmul_nt");
    const std::size_t ia = a.id(), ib = b.id();
    Tape& t = *a.tape();
    return t.push(a.value() * b.value().transpose(), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& t, std::size_t self) {
                      const Matrix& g = t.node(self).grad;
                      if (t.node(ia).requires_grad) t.accumulate_expr(ia, g * t.node(ib).value);
                      if (t.node(ib).requires_grad) t.accumulate_expr(ib, g.transpose() * t.node(ia).value);
                  });
}

Var add(Var a, Var b) {
    require_same_tape(a, b);
    require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
    const std::size_t ia = a.id(), ib = b.id();
    Tape& t = *a.tape();
    return t.push(a.value() + b.value(), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.node(self).grad;
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var sub(Var a, Var b) {
    require_same_tape(a, b);
    require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
    const std::size_t ia = a.id(), ib = b.id();
    Tape& t = *a.tape();
    return t.push(a.value() - b.value(), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.node(self).grad;
        t.accumulate(ia, g);
        t.accumulate_expr(ib, -g);
    });
}

Var hadamard(Var a, Var b) {
    require_same_tape(a, b);
    require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard");
    const std::size_t ia = a.id(), ib = b.id();
    Tape& t = *a.tape();
    return t.push(a.value().cwiseProduct(b.value()), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& t, std::size_t self) {
                      const Matrix& g = t.node(self).grad;
                      if (t.node(ia).requires_grad) t.accumulate_expr(ia, g.cwiseProduct(t.node(ib).value));
                      if (t.node(ib).requires_grad) t.accumulate_expr(ib, g.cwiseProduct(t.node(ia).value));
                  });
}

Var scale(Var a, double s) {
    const std::size_t ia = a.id();
    Tape& t = *a.tape();
    return t.push(a.value() * s, a.requires_grad(),
                  [ia, s](Tape& t, std::size_t self) { t.accumulate_expr(ia, t.node(self).grad * s); });
}

Var add_row(Var a, Var row) {
    require_same_tape(a, row);
    require_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row");
    const std::size_t ia = a.id(), ir = row.id();
    Tape& t = *a.tape();
    Matrix out = a.value().rowwise() + row.value().row(0);
    return t.push(std::move(out), a.requires_grad() || row.requires_grad(), [ia, ir](Tape& t, std::size_t self) {
        const Matrix& g = t.node(self).grad;
        t.accumulate(ia, g);
        if (t.node(ir).requires_grad) t.accumulate_expr(ir, g.colwise().sum());
    });
}

Var transpose(Var a) {
    const std::size_t ia = a.id();
    Tape& t = *a.tape();
    return t.push(a.value().transpose(), a.requires_grad(),
                  [ia](Tape& t, std::size_t self) { t.accumulate_expr(ia, t.node(self).grad.transpose()); });
}

Var gelu(Var a) {
    const std::size_t ia = a.id();
    Tape& t = *a.tape();
    return t.push(kernels::gelu(a.value()), a.requires_grad(), [ia](Tape& t, std::size_t self) {
        t.accumulate_expr(ia, t.node(self).grad.cwiseProduct(kernels::gelu_derivative(t.node(ia).value).eval()));
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    require_same_tape(x, gamma);
    require_same_tape(x, beta);
    require_shape(gamma.rows() == 1 && gamma.cols() == x.cols() && beta.rows() == 1 && beta.cols() == x.cols(),
                  "layer_norm");
    auto cache = std::make_shared<kernels::LayerNormCache<double>>(kernels::layer_norm_normalize(x.value(), eps));
    Matrix out = (cache->normalized.array().rowwise() * gamma.value().row(0).array()).matrix();
    out.rowwise() += beta.value().row(0);
    const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
    Tape& t = *x.tape();
    const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    return t.push(std::move(out), rg, [ix, ig, ib, cache](Tape& t, std::size_t self) {
        const Matrix& g = t.node(self).grad;
        if (t.node(ig).requires_grad) t.accumulate_expr(ig, g.cwiseProduct(cache->normalized).colwise().sum());
        if (t.node(ib).requires_grad) t.accumulate_expr(ib, g.colwise().sum());
        if (t.node(ix).requires_grad) {
            Matrix dnorm = (g.array().rowwise() * t.node(ig).value.row(0).array()).matrix();
            t.accumulate(ix, kernels::layer_norm_normalize_backward(*cache, dnorm));
        }
    });
}

Var softmax_rows(Var x, bool causal) {
    const std::size_t ix = x.id();
    Tape& t = *x.tape();
    return t.push(kernels::softmax_rows(x.value(), causal), x.requires_grad(), [ix](Tape& t, std::size_t self) {
        t.accumulate(ix, kernels::softmax_rows_backward(t.node(self).value, t.node(self).grad));
    });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
    require_shape(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows");
    const std::size_t ia = a.id();
    Tape& t = *a.tape();
    return t.push(a.value().middleRows(start, count), a.requires_grad(), [ia, start, count](Tape& t, std::size_t self) {
        Tape::Node& src = t.node(ia);
        if (src.grad.size() == 0) src.grad = Matrix::Zero(src.value.rows(), src.value.cols());
        src.grad.middleRows(start, count) += t.node(self).grad;
    });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    require_shape(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols");
    const std::size_t ia = a.id();
    Tape& t = *a.tape();
    return t.push(a.value().middleCols(start, count), a.requires_grad(), [ia, start, count](Tape& t, std::size_t self) {
        Tape::Node& src = t.node(ia);
        if (src.grad.size() == 0) src.grad = Matrix::Zero(src.value.rows(), src.value.cols());
        src.grad.middleCols(start, count) += t.node(self).grad;
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error(ErrorKind::InvalidInput, "concat_rows of nothing");
    Tape& t = *parts.front().tape();
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts.front().cols();
    bool rg = false;
    for (const auto& p : parts) {
        require_same_tape(parts.front(), p);
        require_shape(p.cols() == cols, "concat_rows");
        rows += p.rows();
        rg = rg || p.requires_grad();
    }
    Matrix out(rows, cols);
    std::vector<std::pair<std::size_t, Eigen::Index>> layout;
    Eigen::Index offset = 0;
    for (const auto& p : parts) {
        out.middleRows(offset, p.rows()) = p.value();
        layout.emplace_back(p.id(), offset);
        offset += p.rows();
    }
    return t.push(std::move(out), rg, [layout](Tape& t, std::size_t self) {
        const Matrix& g = t.node(self).grad;
        for (auto [id, off] : layout) {
            if (!t.node(id).requires_grad) continue;
            t.accumulate_expr(id, g.middleRows(off, t.node(id).value.rows()));
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error(ErrorKind::InvalidInput, "concat_cols of nothing");
    Tape& t = *parts.front().tape();
    Eigen::Index cols = 0;
    const Eigen::Index rows = parts.front().rows();
    bool rg = false;
    for (const auto& p : parts) {
        require_same_tape(parts.front(), p);
        require_shape(p.rows() == rows, "concat_cols");
        cols += p.cols();
        rg = rg || p.requires_grad();
    }
    Matrix out(rows, cols);
    std::vector<std::pair<std::size_t, Eigen::Index>> layout;
    Eigen::Index offset = 0;
    for (const auto& p : parts) {
        out.middleCols(offset, p.cols()) = p.value();
        layout.emplace_back(p.id(), offset);
        offset += p.cols();
    }
    return t.push(std::move(out), rg, [layout](Tape& t, std::size_t self) {
        const Matrix& g = t.node(self).grad;
        for (auto [id, off] : layout) {
            if (!t.node(id).requires_grad) continue;
            t.accumulate_expr(id, g.middleCols(off, t.node(id).value.cols()));
        }
    });
}

Var im2col(Var x, int kernel, int stride, int padding) {
    const Eigen::Index T = x.rows(), C = x.cols();
    const Eigen::Index t_out = (T + 2 * padding - kernel) / stride + 1;
    require_shape(kernel > 0 && stride > 0 && t_out >= 1, "im2col");
    Matrix out = Matrix::Zero(t_out, kernel * C);
    const Matrix& xv = x.value();
    for (Eigen::Index o = 0; o < t_out; ++o)
        for (int k = 0; k < kernel; ++k) {
            const Eigen::Index src = o * stride - padding + k;
            if (src >= 0 && src < T) out.block(o, k * C, 1, C) = xv.row(src);
        }
    const std::size_t ix = x.id();
    Tape& t = *x.tape();
    return t.push(std::move(out), x.requires_grad(), [ix, kernel, stride, padding, t_out](Tape& t, std::size_t self) {
        const Matrix& g = t.node(self).grad;
        Tape::Node& src = t.node(ix);
        const Eigen::Index T = src.value.rows(), C = src.value.cols();
        if (src.grad.size() == 0) src.grad = Matrix::Zero(T, C);
        for (Eigen::Index o = 0; o < t_out; ++o)
            for (int k = 0; k < kernel; ++k) {
                const Eigen::Index s = o * stride - padding + k;
                if (s >= 0 && s < T) src.grad.row(s) += g.block(o, k * C, 1, C);
            }
    });
}

Var weighted_sum(const std::vector<Var>& layers, Var alpha) {
    require_shape(!layers.empty() && alpha.rows() == 1 && alpha.cols() == static_cast<Eigen::Index>(layers.size()),
                  "weighted_sum");
    Tape& t = *alpha.tape();
    Matrix out = Matrix::Zero(layers.front().rows(), layers.front().cols());
    bool rg = alpha.requires_grad();
    std::vector<std::size_t> ids;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        require_same_tape(alpha, layers[l]);
        require_shape(layers[l].rows() == out.rows() && layers[l].cols() == out.cols(), "weighted_sum");
        out += alpha.value()(0, static_cast<Eigen::Index>(l)) * layers[l].value();
        rg = rg || layers[l].requires_grad();
        ids.push_back(layers[l].id());
    }
    const std::size_t ia = alpha.id();
    return t.push(std::move(out), rg, [ids, ia](Tape& t, std::size_t self) {
        const Matrix& g = t.node(self).grad;
        const bool alpha_rg = t.node(ia).requires_grad;
        Matrix dalpha = Matrix::Zero(1, static_cast<Eigen::Index>(ids.size()));
        for (std::size_t l = 0; l < ids.size(); ++l) {
            const Eigen::Index li = static_cast<Eigen::Index>(l);
            if (alpha_rg) dalpha(0, li) = g.cwiseProduct(t.node(ids[l]).value).sum();
            if (t.node(ids[l]).requires_grad) t.accumulate_expr(ids[l], g * t.node(ia).value(0, li));
        }
        if (alpha_rg) t.accumulate(ia, dalpha);
    });
}

Var gather_rows(Var table, const std::vector<int>& ids) {
    Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows()) throw Error(ErrorKind::InvalidInput, "token id out of range");
        out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
    }
    const std::size_t it = table.id();
    Tape& t = *table.tape();
    return t.push(std::move(out), table.requires_grad(), [it, ids](Tape& t, std::size_t self) {
        const Matrix& g = t.node(self).grad;
        Tape::Node& src = t.node(it);
        if (src.grad.size() == 0) src.grad = Matrix::Zero(src.value.rows(), src.value.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) src.grad.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    });
}

Var sum(Var a) {
    const std::size_t ia = a.id();
    Tape& t = *a.tape();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return t.push(std::move(out), a.requires_grad(), [ia](Tape& t, std::size_t self) {
        const Tape::Node& src = t.node(ia);
        t.accumulate_expr(ia, Matrix::Constant(src.value.rows(), src.value.cols(), t.node(self).grad(0, 0)));
    });
}

Var dot(Var a, const Matrix& weights) {
    require_shape(a.rows() == weights.rows() && a.cols() == weights.cols(), "dot");
    const std::size_t ia = a.id();
    Tape& t = *a.tape();
    Matrix out(1, 1);
    out(0, 0) = a.value().cwiseProduct(weights).sum();
    return t.push(std::move(out), a.requires_grad(), [ia, weights](Tape& t, std::size_t self) {
        t.accumulate_expr(ia, weights * t.node(self).grad(0, 0));
    });
}

Var cross_entropy(Var logits, const std::vector<int>& targets, const std::vector<Eigen::Index>& positions) {
    if (targets.size() != positions.size() || positions.empty())
        throw Error(ErrorKind::InvalidSpan, "cross_entropy needs matching, non-empty targets and positions");
    const Matrix& lv = logits.value();
    auto probs = std::make_shared<Matrix>(static_cast<Eigen::Index>(positions.size()), lv.cols());
    double total = 0.0;
    for (std::size_t k = 0; k < positions.size(); ++k) {
        const Eigen::Index p = positions[k];
        if (p < 0 || p >= lv.rows() || targets[k] < 0 || targets[k] >= lv.cols())
            throw Error(ErrorKind::InvalidSpan, "cross_entropy position or target out of range");
        const double lse = kernels::log_sum_exp(lv.row(p));
        total += lse - lv(p, targets[k]);
        probs->row(static_cast<Eigen::Index>(k)) = (lv.row(p).array() - lse).exp().matrix();
    }
    const double n = static_cast<double>(positions.size());
    Matrix out(1, 1);
    out(0, 0) = total / n;
    const std::size_t il = logits.id();
    Tape& t = *logits.tape();
    return t.push(std::move(out), logits.requires_grad(), [il, probs, targets, positions, n](Tape& t, std::size_t self) {
        const double g = t.node(self).grad(0, 0);
        Tape::Node& src = t.node(il);
        if (src.grad.size() == 0) src.grad = Matrix::Zero(src.value.rows(), src.value.cols());
        for (std::size_t k = 0; k < positions.size(); ++k) {
            Eigen::RowVectorXd d = probs->row(static_cast<Eigen::Index>(k));
            d(targets[k]) -= 1.0;
            src.grad.row(positions[k]) += d * (g / n);
        }
    });
}

} // namespace alm::ad
