#include <doctest.h>

#include "magn/autograd.hpp"
#include "oracles.hpp"

using namespace magn;
using oracle::random_tensor;

namespace {

// Checks reverse-mode gradients of a builder expression against central
// finite differences. The builder runs both on plain tensors (for the
// numeric side) and on tape variables (for the analytic side).
template <class F>
void check_grads(std::vector<Tensor> inputs, F build, double tol = 1e-4, double h = 1e-5) {
    Rng wrng(987654);
    const Tensor out0 = build(std::as_const(inputs));
    const Tensor w = random_tensor(out0.shape, wrng);

    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (auto& t : inputs) vars.push_back(track(tape, t));
    const std::vector<Var>& cvars = vars;
    Var vout = build(cvars);
    Var loss = ops::sum_all(ops::mul(vout, track(tape, w)));
    tape.backward(loss.id);

    auto pure_loss = [&]() {
        return ops::sum_all(ops::mul(build(std::as_const(inputs)), w))[0];
    };
    for (size_t i = 0; i < inputs.size(); ++i) {
        const Tensor analytic = tape.grad(vars[i].id);
        REQUIRE(analytic.shape == inputs[i].shape);
        const Tensor numeric = oracle::finite_diff(pure_loss, inputs[i], h);
        const double err = oracle::max_rel_diff(analytic, numeric, 1e-6);
        INFO("input ", i);
        CHECK(err < tol);
    }
}

} // namespace

TEST_SUITE_BEGIN("autograd");

TEST_CASE("sum gradient is all ones") {
    Rng rng(21);
    Tape tape;
    Var x = track(tape, random_tensor({3, 4}, rng));
    Var loss = ops::sum_all(x);
    tape.backward(loss.id);
    const Tensor g = tape.grad(x.id);
    REQUIRE(g.shape == Shape{3, 4});
    for (int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == 1.0);
}

TEST_CASE("quadratic gradient is the primal") {
    Rng rng(22);
    const Tensor x0 = random_tensor({5, 2}, rng);
    Tape tape;
    Var x = track(tape, x0);
    Var loss = ops::scale(ops::sum_all(ops::mul(x, x)), 0.5);
    tape.backward(loss.id);
    const Tensor g = tape.grad(x.id);
    for (int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(x0[i]).epsilon(1e-12));
}

TEST_CASE("non-scalar loss rejected") {
    Rng rng(23);
    Tape tape;
    Var x = track(tape, random_tensor({2, 2}, rng));
    CHECK_THROWS_AS(tape.backward(x.id), std::invalid_argument);
}

TEST_CASE("fan-out accumulates gradients") {
    Rng rng(24);
    Tape tape;
    Var x = track(tape, random_tensor({4}, rng));
    Var loss = ops::sum_all(ops::add(x, x));
    tape.backward(loss.id);
    const Tensor g = tape.grad(x.id);
    for (int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == 2.0);
}

TEST_CASE("backward is deterministic") {
    Rng rng(25);
    Tape tape;
    Var x = track(tape, random_tensor({3, 3}, rng));
    Var y = track(tape, random_tensor({3, 3}, rng));
    Var loss = ops::sum_all(ops::mul(ops::matmul(x, y), ops::add(x, y)));
    tape.backward(loss.id);
    const Tensor g1 = tape.grad(x.id);
    tape.backward(loss.id);
    const Tensor g2 = tape.grad(x.id);
    CHECK(g1.data == g2.data);
}

TEST_CASE("matmul gradients") {
    Rng rng(26);
    check_grads({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                [](const auto& xs) { return ops::matmul(xs[0], xs[1]); });
}

TEST_CASE("matmul_nt gradients") {
    Rng rng(27);
    check_grads({random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)},
                [](const auto& xs) { return ops::matmul_nt(xs[0], xs[1]); });
}

TEST_CASE("conv2d gradients") {
    Rng rng(28);
    check_grads(
        {random_tensor({5, 6, 2}, rng), random_tensor({3, 3, 2, 3}, rng), random_tensor({3}, rng)},
        [](const auto& xs) { return ops::conv2d(xs[0], xs[1], xs[2], Pad2{1, 1}, Stride2{1, 1}); });
    check_grads(
        {random_tensor({5, 5, 1}, rng), random_tensor({3, 3, 1, 2}, rng), random_tensor({2}, rng)},
        [](const auto& xs) { return ops::conv2d(xs[0], xs[1], xs[2], Pad2{0, 0}, Stride2{2, 2}); });
}

TEST_CASE("prelu gradients away from the kink") {
    Rng rng(29);
    Tensor x({4, 3});
    for (auto& v : x.data) {
        v = rng.uniform(0.1, 1.0);
        if (rng.below(2)) v = -v;
    }
    Tensor slope({3}, {0.25, 0.5, -0.3});
    check_grads({x, slope}, [](const auto& xs) { return ops::prelu(xs[0], xs[1]); });
}

TEST_CASE("softmax_rows gradients") {
    Rng rng(30);
    check_grads({random_tensor({4, 5}, rng, -2.0, 2.0)},
                [](const auto& xs) { return ops::softmax_rows(xs[0]); });
}

TEST_CASE("feature_normalize gradients") {
    Rng rng(31);
    check_grads({random_tensor({4, 5, 3}, rng)},
                [](const auto& xs) { return ops::feature_normalize(xs[0]); });
}

TEST_CASE("elementwise and bias gradients") {
    Rng rng(32);
    check_grads({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                [](const auto& xs) { return ops::mul(ops::add(xs[0], xs[1]), ops::sub(xs[0], xs[1])); });
    check_grads({random_tensor({4, 3}, rng), random_tensor({3}, rng)},
                [](const auto& xs) { return ops::add_row_bias(xs[0], xs[1]); });
    check_grads({random_tensor({2, 6}, rng)},
                [](const auto& xs) { return ops::scale(ops::reshape(xs[0], {3, 4}), -1.7); });
}

TEST_CASE("concat_cols gradients") {
    Rng rng(33);
    check_grads({random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)}, [](const auto& xs) {
        using V = std::decay_t<decltype(xs[0])>;
        return ops::concat_cols(std::vector<V>{xs[0], xs[1]});
    });
}

TEST_CASE("unfold and fold gradients") {
    Rng rng(34);
    const PatchGeometry g = make_geometry(3, 2, 7, 7, 2);
    check_grads({random_tensor({7, 7, 2}, rng)},
                [g](const auto& xs) { return ops::unfold_nodes(xs[0], g); });
    check_grads({random_tensor({static_cast<int>(g.patch_count()),
                                static_cast<int>(g.node_dim())},
                               rng)},
                [g](const auto& xs) { return ops::fold_nodes(xs[0], g); });
}

TEST_CASE("mse_loss gradients") {
    Rng rng(35);
    check_grads({random_tensor({4, 4, 2}, rng), random_tensor({4, 4, 2}, rng)},
                [](const auto& xs) { return ops::mse_loss(xs[0], xs[1]); });
}

TEST_CASE("composed conv-prelu-normalize chain") {
    Rng rng(36);
    Tensor slope({2}, {0.2, 0.4});
    check_grads(
        {random_tensor({5, 5, 1}, rng), random_tensor({3, 3, 1, 2}, rng), random_tensor({2}, rng),
         slope},
        [](const auto& xs) {
            auto y = ops::conv2d(xs[0], xs[1], xs[2], Pad2{1, 1}, Stride2{1, 1});
            return ops::feature_normalize(ops::prelu(y, xs[3]));
        });
}

TEST_SUITE_END();
