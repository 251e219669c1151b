#include <doctest.h>

#include "alarm/kernels.hpp"
#include "../support.hpp"

using namespace alm;
using alm::testing::gradient_error;
using alm::testing::random_matrix;

namespace {

struct Fixture {
    ParameterStore store;
    Parameter& a;
    Parameter& b;
    Matrix probe;

    Fixture(Eigen::Index r, Eigen::Index c, Eigen::Index r2, Eigen::Index c2, Eigen::Index pr, Eigen::Index pc)
        : a(store.add("a", random_matrix(r, c, 1), false)),
          b(store.add("b", random_matrix(r2, c2, 2), false)),
          probe(random_matrix(pr, pc, 3)) {}
};

constexpr double kTol = 1e-6;

} // namespace

TEST_CASE("matmul and matmul_nt gradients") {
    Fixture f(3, 4, 4, 5, 3, 5);
    CHECK(gradient_error({&f.a, &f.b}, [&](ad::Tape& t) { return ad::dot(t.param(f.a) * t.param(f.b), f.probe); }) < kTol);
    Fixture g(3, 4, 5, 4, 3, 5);
    CHECK(gradient_error({&g.a, &g.b}, [&](ad::Tape& t) { return ad::dot(ad::matmul_nt(t.param(g.a), t.param(g.b)), g.probe); }) < kTol);
}

TEST_CASE("elementwise, broadcast and reduction gradients") {
    Fixture f(3, 4, 3, 4, 3, 4);
    CHECK(gradient_error({&f.a, &f.b}, [&](ad::Tape& t) {
              return ad::dot(ad::hadamard(t.param(f.a), t.param(f.b)) - 0.5 * t.param(f.a), f.probe);
          }) < kTol);
    Fixture r(3, 4, 1, 4, 3, 4);
    CHECK(gradient_error({&r.a, &r.b}, [&](ad::Tape& t) { return ad::dot(ad::add_row(t.param(r.a), t.param(r.b)), r.probe); }) < kTol);
    CHECK(gradient_error({&f.a}, [&](ad::Tape& t) { return ad::sum(ad::gelu(t.param(f.a))); }) < kTol);
    Fixture tr(3, 4, 1, 1, 4, 3);
    CHECK(gradient_error({&tr.a}, [&](ad::Tape& t) { return ad::dot(ad::transpose(t.param(tr.a)), tr.probe); }) < kTol);
}

TEST_CASE("softmax and layer norm gradients") {
    Fixture f(4, 4, 1, 4, 4, 4);
    for (bool causal : {false, true})
        CHECK(gradient_error({&f.a}, [&](ad::Tape& t) { return ad::dot(ad::softmax_rows(t.param(f.a), causal), f.probe); }) < kTol);
    ParameterStore s;
    Parameter& x = s.add("x", random_matrix(5, 6, 4), false);
    Parameter& gamma = s.add("g", random_matrix(1, 6, 5), false);
    Parameter& beta = s.add("b", random_matrix(1, 6, 6), false);
    const Matrix probe = random_matrix(5, 6, 7);
    CHECK(gradient_error({&x, &gamma, &beta}, [&](ad::Tape& t) {
              return ad::dot(ad::layer_norm(t.param(x), t.param(gamma), t.param(beta)), probe);
          }) < 1e-5);
}

TEST_CASE("slicing, concatenation and gathering gradients") {
    Fixture f(6, 4, 2, 4, 3, 4);
    CHECK(gradient_error({&f.a, &f.b}, [&](ad::Tape& t) {
              ad::Var cat = ad::concat_rows({ad::slice_rows(t.param(f.a), 1, 3), t.param(f.b)});
              return ad::dot(ad::slice_cols(cat, 1, 3), random_matrix(5, 3, 9));
          }) < kTol);
    CHECK(gradient_error({&f.a}, [&](ad::Tape& t) {
              return ad::dot(ad::concat_cols({t.param(f.a), t.param(f.a)}), random_matrix(6, 8, 10));
          }) < kTol);
    CHECK(gradient_error({&f.a}, [&](ad::Tape& t) {
              return ad::dot(ad::gather_rows(t.param(f.a), {0, 5, 0, 2}), random_matrix(4, 4, 11));
          }) < kTol);
}

TEST_CASE("im2col and weighted_sum gradients") {
    Fixture f(7, 3, 1, 1, 1, 1);
    const Matrix probe = random_matrix(3, 12, 12);
    CHECK(gradient_error({&f.a}, [&](ad::Tape& t) { return ad::dot(ad::im2col(t.param(f.a), 4, 2, 1), probe); }) < kTol);

    ParameterStore s;
    Parameter& l0 = s.add("l0", random_matrix(3, 2, 13), false);
    Parameter& l1 = s.add("l1", random_matrix(3, 2, 14), false);
    Parameter& w = s.add("w", random_matrix(1, 2, 15), false);
    const Matrix p2 = random_matrix(3, 2, 16);
    CHECK(gradient_error({&l0, &l1, &w}, [&](ad::Tape& t) {
              return ad::dot(ad::weighted_sum({t.param(l0), t.param(l1)}, t.param(w)), p2);
          }) < kTol);
}

TEST_CASE("cross entropy gradient and value") {
    Fixture f(5, 7, 1, 1, 1, 1);
    CHECK(gradient_error({&f.a}, [&](ad::Tape& t) { return ad::cross_entropy(t.param(f.a), {1, 6, 3}, {0, 2, 4}); }) < kTol);

    ad::Tape t;
    ad::Var logits = t.constant(Matrix::Zero(3, 16));
    CHECK(ad::cross_entropy(logits, {1, 2, 3}, {0, 1, 2}).value()(0, 0) == doctest::Approx(std::log(16.0)).epsilon(1e-12));
    CHECK_THROWS_AS(ad::cross_entropy(logits, {}, {}), Error);
}

TEST_CASE("im2col geometry halves the frame count") {
    ad::Tape t;
    for (Eigen::Index T : {4, 5, 8, 500, 501}) {
        ad::Var x = t.constant(Matrix::Ones(T, 2));
        CHECK(ad::im2col(x, 4, 2, 1).rows() == T / 2);
        CHECK(ad::im2col(x, 3, 1, 1).rows() == T);
    }
}

TEST_CASE("a parameter bound twice accumulates into one gradient") {
    ParameterStore s;
    Parameter& p = s.add("p", Matrix::Constant(1, 1, 3.0), false);
    p.zero_grad();
    ad::Tape t;
    ad::Var a = t.param(p);
    ad::Var b = t.param(p);
    CHECK(a.id() == b.id());
    t.backward(ad::hadamard(a, b));
    CHECK(p.grad(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("frozen parameters receive no gradient") {
    ParameterStore s;
    Parameter& p = s.add("p", Matrix::Ones(2, 2), false);
    p.trainable = false;
    p.zero_grad();
    ad::Tape t;
    ad::Var v = t.param(p);
    CHECK_FALSE(v.requires_grad());
    t.backward(ad::sum(ad::gelu(v)));
    CHECK(p.grad.isZero(0.0));
}

TEST_CASE("kernels: softmax rows sum to one and respect the causal mask") {
    const Matrix s = random_matrix(4, 4, 21);
    const Matrix p = kernels::softmax_rows(s, true);
    for (Eigen::Index i = 0; i < 4; ++i) {
        CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        for (Eigen::Index j = i + 1; j < 4; ++j) CHECK(p(i, j) == 0.0);
    }
    CHECK(kernels::gelu(0.0) == 0.0);
    CHECK(kernels::gelu(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
}
