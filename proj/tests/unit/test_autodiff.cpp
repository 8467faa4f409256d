#include "bmc/autodiff.hpp"
#include "bmc/optim.hpp"

#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

using namespace bmc;
using namespace bmc::ad;

namespace {

Tensor matrix(std::size_t r, std::size_t c, double start, double step) {
    Tensor t = Tensor::zeros({r, c});
    for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = start + step * static_cast<double>(i) * (i % 2 ? -1.0 : 1.0);
    return t;
}

}  // namespace

TEST_CASE("elementwise gradients") {
    Tape tape;
    Var a = tape.leaf(Tensor::vector({1.0, 2.0, 3.0}));
    Var b = tape.leaf(Tensor::vector({0.5, -1.0, 2.0}));
    Var loss = sum(a * b + square(a) - 3.0 * b);
    tape.backward(loss);
    CHECK(loss.item() == doctest::Approx(0.5 - 2.0 + 6.0 + 14.0 - 4.5));
    const std::vector<double> ga = a.grad().data, gb = b.grad().data;
    CHECK(ga == std::vector<double>{0.5 + 2.0, -1.0 + 4.0, 2.0 + 6.0});
    CHECK(gb == std::vector<double>{1.0 - 3.0, 2.0 - 3.0, 3.0 - 3.0});
}

TEST_CASE("repeated backward passes agree bitwise") {
    Tape tape;
    Var w = tape.leaf(matrix(3, 4, 0.1, 0.05));
    Var x = tape.leaf(matrix(2, 3, -0.2, 0.1));
    Var loss = sum(log_softmax(matmul(x, w)));
    tape.backward(loss);
    const Tensor first = w.grad();
    tape.backward(loss);
    CHECK(w.grad() == first);
}

TEST_CASE("stop_gradient blocks the adjoint") {
    Tape tape;
    Var a = tape.leaf(Tensor::vector({0.3, 0.7}));
    Var loss = sum(a * stop_gradient(a));
    tape.backward(loss);
    CHECK(a.grad().data == std::vector<double>{0.3, 0.7});
    CHECK_FALSE(tape.requires_grad(stop_gradient(a).id));
}

TEST_CASE("composite network matches finite differences") {
    const std::vector<Tensor> params = {matrix(4, 3, 0.2, 0.07), Tensor::vector({1.0, 0.9, 1.1}),
                                        Tensor::vector({0.0, 0.1, -0.1}), matrix(3, 5, -0.1, 0.05)};
    const std::vector<int> ids = {2, 0, 3};
    const std::vector<int> targets = {1, 4, 0};
    ScalarFn f = [&](Tape&, std::span<const Var> p) {
        Var h = embedding(p[0], ids);
        h = layer_norm(h, p[1], p[2]);
        Var att = causal_softmax(matmul_nt(h, h), 0.5);
        h = h + matmul(att, h);
        Var logits = matmul(relu(h) + sigmoid(h), p[3]);
        return -mean(gather(log_softmax(logits), targets));
    };
    const FdReport rep = fd_check(f, params, 1e-5, FdMode::freeze_sg);
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("frozen stop_gradient replays base values") {
    const std::vector<Tensor> params = {Tensor::vector({0.4, -0.3, 1.2})};
    ScalarFn f = [](Tape&, std::span<const Var> p) { return sum(p[0] * exp(stop_gradient(p[0]))); };
    CHECK(fd_check(f, params, 1e-5, FdMode::freeze_sg).max_rel_err < 1e-8);
    CHECK(fd_check(f, params, 1e-5, FdMode::naive).max_rel_err > 1e-2);
}

TEST_CASE("clamp and minimum route gradients only where active") {
    Tape tape;
    Var a = tape.leaf(Tensor::vector({-1.0, 0.5, 3.0}));
    tape.backward(sum(minimum(clamp_min(a, 0.0), 2.0)));
    CHECK(a.grad().data == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("log rejects non-positive input") {
    Tape tape;
    Var a = tape.leaf(Tensor::vector({1.0, 0.0}));
    CHECK_THROWS_AS(log(a), std::domain_error);
}

TEST_CASE("log_sigmoid is stable for large magnitudes") {
    Tape tape;
    Var a = tape.leaf(Tensor::vector({-800.0, 800.0}));
    Var v = log_sigmoid(a);
    CHECK(v.value().data[0] == doctest::Approx(-800.0));
    CHECK(v.value().data[1] == doctest::Approx(0.0));
}

TEST_CASE("cosine schedule with warmup") {
    CHECK(cosine_lr(0, 100, 10, 1.0) < cosine_lr(5, 100, 10, 1.0));
    CHECK(cosine_lr(10, 100, 10, 1.0) == doctest::Approx(1.0));
    CHECK(cosine_lr(99, 100, 10, 1.0) < 0.01);
}

TEST_CASE("global norm clipping") {
    std::vector<Tensor> g = {Tensor::vector({3.0}), Tensor::vector({4.0})};
    CHECK(global_norm(g) == doctest::Approx(5.0));
    CHECK(clip_by_global_norm(g, 1.0) == doctest::Approx(5.0));
    CHECK(global_norm(g) == doctest::Approx(1.0));
}

TEST_CASE("adam moves against the gradient") {
    std::vector<Tensor> p = {Tensor::vector({1.0, -1.0})};
    AdamState st;
    adam_step(p, {Tensor::vector({0.5, -0.5})}, st, 0.1);
    CHECK(p[0].data[0] < 1.0);
    CHECK(p[0].data[1] > -1.0);
}
