#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stablept/grad_check.hpp"
#include "stablept/ops.hpp"
#include "stablept/tensor.hpp"

#include "oracles.hpp"

using namespace stablept;

namespace {

Tensor random_tensor(std::vector<Index> shape, Rng& rng, double stddev = 1.0) {
    return Tensor::randn(std::move(shape), rng, stddev);
}

}  // namespace

TEST_CASE("matmul identity and annihilator") {
    Rng rng(1);
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor r = random_tensor({2, 2}, rng);
    Tensor prod = matmul(eye, r);
    CHECK((prod.values() - r.values()).abs().maxCoeff() == 0.0);

    Tensor z = Tensor::zeros({3, 4});
    Tensor b = random_tensor({4, 2}, rng);
    Tensor zero_prod = matmul(z, b);
    CHECK(zero_prod.shape() == std::vector<Index>{3, 2});
    CHECK(zero_prod.values().abs().maxCoeff() == 0.0);
}

TEST_CASE("matmul matches the triple-loop oracle") {
    Rng rng(2);
    Tensor a = random_tensor({3, 5}, rng);
    Tensor b = random_tensor({5, 2}, rng);
    Tensor c = matmul(a, b);
    MatrixRM expect = oracle::naive_matmul(a.matrix(), b.matrix());
    CHECK((c.matrix() - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("matmul rejects mismatched inner dimensions naming both shapes") {
    Tensor a = Tensor::zeros({3, 5});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
    try {
        matmul(a, b);
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[3,5]") != std::string::npos);
        CHECK(msg.find("[4,2]") != std::string::npos);
    }
}

TEST_CASE("softmax_rows basics") {
    Tensor zeros = Tensor::zeros({1, 4});
    Tensor uniform = softmax_rows(zeros);
    for (Index j = 0; j < 4; ++j) CHECK(uniform.values()[j] == doctest::Approx(0.25).epsilon(1e-15));

    Rng rng(3);
    Tensor x = random_tensor({2, 3}, rng);
    Tensor shifted(x.shape(), x.values() + 7.5);
    CHECK((softmax_rows(x).values() - softmax_rows(shifted).values()).abs().maxCoeff() < 1e-15);

    MatrixRM expect = oracle::naive_softmax_rows(x.matrix());
    CHECK((softmax_rows(x).matrix() - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("softmax_rows output rows sum to 1 and stay nonnegative") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({3, 6}, rng, 50.0);
        Tensor y = softmax_rows(x);
        CHECK(y.values().minCoeff() >= 0.0);
        for (Index r = 0; r < 3; ++r) {
            CHECK(y.matrix().row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("softmax_rows rejects non-finite input") {
    Tensor x = Tensor::zeros({1, 3});
    x.values()[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(softmax_rows(x), NumericError);
    Tensor inf = Tensor::zeros({1, 3});
    inf.values()[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(softmax_rows(inf), NumericError);
}

TEST_CASE("layer_norm cases") {
    Tensor gain = Tensor::full({4}, 1.0);
    Tensor bias = Tensor::zeros({4});

    Tensor constant = Tensor::full({1, 4}, 3.25);
    Tensor z = layer_norm(constant, gain, bias);
    CHECK(z.values().abs().maxCoeff() == 0.0);

    Tensor pm({1, 2}, {1.0, -1.0});
    Tensor g2 = Tensor::full({2}, 1.0);
    Tensor b2 = Tensor::zeros({2});
    Tensor y = layer_norm(pm, g2, b2, 1e-12);
    CHECK(y.values()[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(y.values()[1] == doctest::Approx(-1.0).epsilon(1e-6));

    Rng rng(5);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor gr = random_tensor({4}, rng);
    Tensor br = random_tensor({4}, rng);
    MatrixRM expect = oracle::naive_layer_norm(x.matrix(), gr.matrix().row(0).transpose(),
                                               br.matrix().row(0).transpose(), 1e-5);
    CHECK((layer_norm(x, gr, br).matrix() - expect).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(layer_norm(Tensor::zeros({2, 0}), Tensor::zeros({0}), Tensor::zeros({0})),
                    ShapeError);
}

TEST_CASE("mean_axis1 cases") {
    Rng rng(6);
    Tensor single = random_tensor({2, 1, 3}, rng);
    Tensor pooled = mean_axis1(single);
    CHECK((pooled.values() - single.values()).abs().maxCoeff() == 0.0);

    Tensor same({1, 3, 2});
    for (Index j = 0; j < 3; ++j) {
        same.values()[j * 2] = 4.0;
        same.values()[j * 2 + 1] = -2.5;
    }
    Tensor mean_same = mean_axis1(same);
    CHECK(mean_same.values()[0] == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(mean_same.values()[1] == doctest::Approx(-2.5).epsilon(1e-15));

    Tensor x = random_tensor({2, 3, 4}, rng);
    Tensor m = mean_axis1(x);
    for (Index i = 0; i < 2; ++i) {
        for (Index k = 0; k < 4; ++k) {
            double acc = 0.0;
            for (Index j = 0; j < 3; ++j) acc += x.at({i, j, k});
            CHECK(m.at({i, k}) == doctest::Approx(acc / 3.0).epsilon(1e-14));
        }
    }

    CHECK_THROWS_AS(mean_axis1(Tensor::zeros({2, 0, 4})), ShapeError);
}

TEST_CASE("backward of a sum gives ones and zero-scaled roots give zeros") {
    Rng rng(7);
    Tensor x = random_tensor({3, 4}, rng);
    x.set_requires_grad(true);
    {
        Tape tape;
        Tensor root = sum(x);
        tape.backward(root);
    }
    CHECK((x.grad() - 1.0).abs().maxCoeff() == 0.0);

    Tensor y = random_tensor({5}, rng);
    y.set_requires_grad(true);
    {
        Tape tape;
        Tensor root = scale(sum(tanh(y)), 0.0);
        tape.backward(root);
    }
    CHECK(y.grad().abs().maxCoeff() == 0.0);
}

TEST_CASE("backward accumulates over repeated calls") {
    Tensor x({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    Tape tape;
    Tensor root = sum(mul(x, x));
    tape.backward(root);
    tape.backward(root);
    CHECK(x.grad()[0] == doctest::Approx(4.0).epsilon(1e-15));  // 2 * dx of x^2 at 1
    CHECK(x.grad()[1] == doctest::Approx(8.0).epsilon(1e-15));
}

TEST_CASE("backward rejects non-scalar and off-tape roots") {
    Tensor x = Tensor::zeros({2, 2});
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = add(x, x);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
    Tensor constant = Tensor::scalar(1.0);
    CHECK_THROWS_AS(tape.backward(constant), ContractError);
}

TEST_CASE("tape isolation: no-grad operands record nothing and allocate no grads") {
    Rng rng(8);
    Tensor a = random_tensor({3, 3}, rng);
    Tensor b = random_tensor({3, 3}, rng);
    Tape tape;
    Tensor c = matmul(a, b);
    Tensor d = softmax_rows(add(c, b));
    CHECK(tape.size() == 0);
    CHECK(!c.requires_grad());
    CHECK(!d.has_grad());
}

TEST_CASE("backward determinism: identical graphs give bitwise-identical gradients") {
    auto run = [](Eigen::ArrayXd& out_grad) {
        Rng rng(9);
        Tensor x = Tensor::randn({4, 4}, rng);
        x.set_requires_grad(true);
        Tensor w = Tensor::randn({4, 4}, rng);
        w.set_requires_grad(true);
        Tape tape;
        Tensor h = tanh(matmul(x, w));
        Tensor s = softmax_rows(h);
        Tensor root = sum(mul(s, h));
        tape.backward(root);
        out_grad = w.grad();
    };
    Eigen::ArrayXd g1, g2;
    run(g1);
    run(g2);
    for (Index i = 0; i < g1.size(); ++i) {
        CHECK(g1[i] == g2[i]);
    }
}

TEST_CASE("gradient property: every differentiable op passes finite differences over 20 seeds") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({3, 4}, rng);
        Tensor w = random_tensor({4, 5}, rng);
        Tensor bias = random_tensor({4}, rng);
        Tensor gain = random_tensor({4}, rng, 0.5);
        Tensor cube = random_tensor({2, 3, 4}, rng);
        Tensor table = random_tensor({6, 4}, rng);
        for (Tensor* t : {&a, &b, &w, &bias, &gain, &cube, &table}) t->set_requires_grad(true);

        const std::vector<std::pair<std::string, Tensor>> params = {
            {"a", a}, {"b", b}, {"w", w}, {"bias", bias}, {"gain", gain}, {"cube", cube},
            {"table", table}};

        auto f = [&]() {
            Tensor t1 = matmul(a, w);                        // (3,5)
            Tensor t2 = softmax_rows(t1);
            Tensor t3 = mul(t2, t1);
            Tensor t4 = tanh(add(a, b));
            Tensor t5 = layer_norm(t4, gain, bias);
            Tensor t6 = add_bias(scale(t5, 1.7), bias);
            Tensor t7 = logsumexp_rows(t6);
            Tensor t8 = mean_axis1(cube);                    // (2,4)
            Tensor t9 = normalize_rows(t8);
            Tensor t10 = gather_rows(table, {0, 5, 2});      // (3,4)
            Tensor t11 = take_positions(cube, {1, 0});       // (2,4)
            Tensor t12 = take_per_row(t6, {0, 3, 2});        // (3,1)
            Tensor t13 = gather_cols(t6, {1, 3});            // (3,2)
            Tensor t14 = concat_rows(t10, t9);               // (5,4)
            Tensor t15 = slice_axis0(t14, 3);
            Tensor t16 = stack_axis0(std::vector<Tensor>{t15, t15});
            Tensor t17 = transpose(t13);
            Tensor total = sum(t3);
            total = add(total, sum(t7));
            total = add(total, sum(reshape(t16, {8})));
            total = add(total, sum(t17));
            total = add(total, sum(t11));
            total = add(total, sum(t12));
            total = add(total, sum(sub(t5, t4)));
            return total;
        };
        GradCheckReport report = grad_check(f, params, 1e-5);
        CAPTURE(seed);
        CAPTURE(report.worst_param);
        CHECK(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("grad_check on exact quadratics and constants") {
    Rng rng(11);
    Tensor x = random_tensor({6}, rng);
    x.set_requires_grad(true);
    const std::vector<std::pair<std::string, Tensor>> params = {{"x", x}};

    GradCheckReport quad = grad_check([&]() { return sum(mul(x, x)); }, params, 1e-5);
    CHECK(quad.max_rel_err < 1e-8);

    GradCheckReport constant = grad_check([&]() { return Tensor::scalar(3.0); }, params, 1e-5);
    CHECK(constant.max_rel_err == 0.0);
}

TEST_CASE("grad_check rejects a non-deterministic function") {
    Tensor x = Tensor::zeros({2});
    x.set_requires_grad(true);
    const std::vector<std::pair<std::string, Tensor>> params = {{"x", x}};
    int calls = 0;
    auto f = [&]() { return Tensor::scalar(static_cast<double>(++calls)); };
    CHECK_THROWS_AS(grad_check(f, params, 1e-5), ContractError);
}

TEST_CASE("elementwise and structural ops match loop oracles") {
    Rng rng(12);
    Tensor a = random_tensor({4, 3}, rng);
    Tensor b = random_tensor({4, 3}, rng);

    Tensor s = add(a, b);
    Tensor d = sub(a, b);
    Tensor m = mul(a, b);
    Tensor sc = scale(a, -2.5);
    Tensor th = tanh(a);
    for (Index i = 0; i < a.numel(); ++i) {
        CHECK(s.values()[i] == a.values()[i] + b.values()[i]);
        CHECK(d.values()[i] == a.values()[i] - b.values()[i]);
        CHECK(m.values()[i] == a.values()[i] * b.values()[i]);
        CHECK(sc.values()[i] == a.values()[i] * -2.5);
        CHECK(th.values()[i] == doctest::Approx(std::tanh(a.values()[i])).epsilon(1e-15));
    }

    Tensor bias = random_tensor({3}, rng);
    Tensor ab = add_bias(a, bias);
    for (Index i = 0; i < 4; ++i) {
        for (Index j = 0; j < 3; ++j) {
            CHECK(ab.at({i, j}) == a.at({i, j}) + bias.values()[j]);
        }
    }

    Tensor t = transpose(a);
    for (Index i = 0; i < 4; ++i) {
        for (Index j = 0; j < 3; ++j) CHECK(t.at({j, i}) == a.at({i, j}));
    }

    Tensor lse = logsumexp_rows(a);
    for (Index i = 0; i < 4; ++i) {
        std::vector<double> row;
        for (Index j = 0; j < 3; ++j) row.push_back(a.at({i, j}));
        CHECK(lse.values()[i] == doctest::Approx(oracle::naive_logsumexp(row)).epsilon(1e-14));
    }

    Tensor nr = normalize_rows(a);
    for (Index i = 0; i < 4; ++i) {
        const double norm = a.matrix().row(i).norm();
        for (Index j = 0; j < 3; ++j) {
            CHECK(nr.at({i, j}) == doctest::Approx(a.at({i, j}) / norm).epsilon(1e-14));
        }
    }

    Tensor cube = random_tensor({3, 2, 3}, rng);
    Tensor sl = slice_axis0(cube, 1);
    for (Index j = 0; j < 2; ++j) {
        for (Index k = 0; k < 3; ++k) CHECK(sl.at({j, k}) == cube.at({1, j, k}));
    }
    Tensor stacked = stack_axis0(std::vector<Tensor>{a, b});
    for (Index i = 0; i < 4; ++i) {
        for (Index j = 0; j < 3; ++j) {
            CHECK(stacked.at({0, i, j}) == a.at({i, j}));
            CHECK(stacked.at({1, i, j}) == b.at({i, j}));
        }
    }
}

TEST_CASE("shape errors carry both operand shapes") {
    CHECK_THROWS_AS(add(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), ShapeError);
    CHECK_THROWS_AS(concat_rows(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), ShapeError);
    CHECK_THROWS_AS(reshape(Tensor::zeros({4}), {5}), ShapeError);
    CHECK_THROWS_AS(gather_rows(Tensor::zeros({3, 2}), {3}), ContractError);
    CHECK_THROWS_AS(take_positions(Tensor::zeros({2, 3, 2}), {0, 3}), ContractError);
    CHECK_THROWS_AS(take_per_row(Tensor::zeros({2, 3}), {0, 3}), ContractError);
    CHECK_THROWS_AS(slice_axis0(Tensor::zeros({2, 2}), 2), ContractError);
}
