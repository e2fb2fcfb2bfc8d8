#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gft/autodiff.hpp"
#include "gft/rng.hpp"

using namespace gft;
using Catch::Approx;

TEST_CASE("log_softmax handles the uniform case") {
    Value x = Value::constant(Array::row({0.0, 0.0}));
    Value y = log_softmax(x);
    REQUIRE(y.data()[0] == Approx(-std::log(2.0)).epsilon(1e-12));
    REQUIRE(y.data()[1] == Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("log_softmax is stabilized against large logits") {
    Value x = Value::constant(Array::row({1000.0, 1000.0}));
    Value y = log_softmax(x);
    REQUIRE(std::isfinite(y.data()[0]));
    REQUIRE(y.data()[0] == Approx(-std::log(2.0)).epsilon(1e-12));
    REQUIRE(y.data()[1] == Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("exponentiated log_softmax rows sum to one") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        Array a(3, 5);
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = 10.0 * rng.gaussian();
        Value y = log_softmax(Value::constant(a));
        for (int r = 0; r < 3; ++r) {
            double s = 0.0;
            for (int c = 0; c < 5; ++c) s += std::exp(y.data().at(r, c));
            REQUIRE(s == Approx(1.0).margin(1e-12));
        }
    }
}

TEST_CASE("gather selects by flat index") {
    Value v = Value::constant(Array::row({-0.1, -2.3}));
    REQUIRE(gather(v, 1).item() == -2.3);
    REQUIRE_THROWS_AS(gather(v, 2), ShapeError);
}

TEST_CASE("shape mismatch errors name the operator and shapes") {
    Value a = Value::constant(Array(2, 3));
    Value b = Value::constant(Array(3, 2));
    try {
        add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("add") != std::string::npos);
        REQUIRE(msg.find("[2x3]") != std::string::npos);
        REQUIRE(msg.find("[3x2]") != std::string::npos);
    }
}

TEST_CASE("log of non-positive input is a domain error") {
    REQUIRE_THROWS_AS(log(Value::constant(Array::row({1.0, 0.0}))), DomainError);
    REQUIRE_THROWS_AS(log(Value::constant(Array::row({-2.0}))), DomainError);
}

TEST_CASE("grad is zero after construction and zero_grad") {
    Value x = Value::parameter(Array::row({1.0, 2.0}));
    REQUIRE(x.grad()[0] == 0.0);
    REQUIRE(x.grad()[1] == 0.0);
    backward(sum(x));
    REQUIRE(x.grad()[0] == 1.0);
    x.zero_grad();
    REQUIRE(x.grad()[0] == 0.0);
    REQUIRE(x.grad()[1] == 0.0);
}

TEST_CASE("stop_gradient passes data through bitwise and severs the path") {
    Value x = Value::parameter(Array::row({0.3}));
    Value sg = stop_gradient(x);
    REQUIRE(sg.data()[0] == x.data()[0]);

    SECTION("fully severed: loss = sg(x)") {
        backward(sum(sg));
        REQUIRE(x.grad()[0] == 0.0);
    }

    SECTION("product rule with one branch severed: loss = sg(x) * x at x = 2") {
        Value x2 = Value::parameter(Array::row({2.0}));
        Value loss = sum(mul(stop_gradient(x2), x2));
        backward(loss);
        REQUIRE(x2.grad()[0] == 2.0);
    }
}

TEST_CASE("backward of sum gives all-ones gradient") {
    ParameterVector params;
    Value theta = params.add("theta", Array(2, 3, 0.5));
    backward(sum(theta));
    for (std::size_t i = 0; i < theta.grad().size(); ++i) REQUIRE(theta.grad()[i] == 1.0);
}

TEST_CASE("cross-entropy gradient on uniform logits is p minus onehot") {
    ParameterVector params;
    Value theta = params.add("logits", Array::row({0.0, 0.0, 0.0}));
    Value loss = scale(gather(log_softmax(theta), 0), -1.0);
    backward(loss);
    REQUIRE(theta.grad()[0] == Approx(-2.0 / 3.0).epsilon(1e-12));
    REQUIRE(theta.grad()[1] == Approx(1.0 / 3.0).epsilon(1e-12));
    REQUIRE(theta.grad()[2] == Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar root") {
    Value x = Value::parameter(Array::row({1.0, 2.0}));
    REQUIRE_THROWS_AS(backward(exp(x)), ShapeError);
}

TEST_CASE("repeated backward accumulates additively") {
    ParameterVector params;
    Value theta = params.add("theta", Array::row({1.0, 2.0}));
    Value loss = sum(mul(theta, theta));
    backward(loss);
    backward(loss);
    REQUIRE(theta.grad()[0] == 4.0);  // 2 * (2 * 1.0)
    REQUIRE(theta.grad()[1] == 8.0);
}

TEST_CASE("backward is deterministic on the same graph") {
    Rng rng(17);
    ParameterVector params;
    Array init(4, 3);
    for (std::size_t i = 0; i < init.size(); ++i) init[i] = rng.gaussian();
    Value theta = params.add("theta", init);
    Value v = Value::constant(Array::row({0.3, -0.2, 0.9, 0.1}));
    Value loss = mean(mul(log_softmax(matmul(v, theta)), exp(log_softmax(matmul(v, theta)))));

    backward(loss);
    Array first = theta.grad();
    params.zero_grad();
    backward(loss);
    REQUIRE(theta.grad() == first);
}

static Value composed_loss(ParameterVector& params) {
    Value a = params.get("a");        // [3,4]
    Value v = params.get("v");        // [1,3]
    Value x = matmul(v, a);           // [1,4]
    Value h = tanh(x);
    Value ls = log_softmax(h);
    Value p = exp(ls);
    Value g = gather(ls, 2);
    Value m = mean(mul(p, ls));
    Value rows = gather_rows(a, {1, 0, 2});
    Value r = sum(log(exp(reshape(rows, 1, 12))));
    return add(add(g, m), scale(r, 0.1));
}

TEST_CASE("composed graphs match central finite differences on 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(derive_seed(seed, 99));
        ParameterVector params;
        Array a(3, 4), v(1, 3);
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.gaussian();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.gaussian();
        params.add("a", a);
        params.add("v", v);
        const double err = finite_difference_check([&] { return composed_loss(params); }, params);
        INFO("seed " << seed);
        REQUIRE(err < 1e-6);
    }
}

TEST_CASE("quadratic loss matches its exact derivative") {
    ParameterVector params;
    params.add("theta", Array::row({0.7, -1.3, 2.1}));
    const double err = finite_difference_check(
        [&] { return scale(sum(mul(params.get("theta"), params.get("theta"))), 0.5); }, params);
    REQUIRE(err < 1e-8);
}

TEST_CASE("finite_difference_check reports a non-finite probe by parameter") {
    ParameterVector params;
    params.add("theta", Array::row({1e-9}));
    // log(theta) goes non-finite when the central difference probes theta - h
    try {
        finite_difference_check([&] { return sum(log(params.get("theta"))); }, params);
        FAIL("expected NumericAbort");
    } catch (const GftError& e) {
        REQUIRE(std::string(e.what()).find("theta") != std::string::npos);
    }
}

TEST_CASE("parameter names must be unique") {
    ParameterVector params;
    params.add("w", Array(1, 1));
    REQUIRE_THROWS_AS(params.add("w", Array(1, 1)), ConfigError);
}

TEST_CASE("matmul forward and backward agree with hand values") {
    ParameterVector params;
    Value a = params.add("a", Array::row({1.0, 2.0}));  // [1,2]
    Array binit(2, 2);
    binit.at(0, 0) = 3.0;
    binit.at(0, 1) = 4.0;
    binit.at(1, 0) = 5.0;
    binit.at(1, 1) = 6.0;
    Value b = params.add("b", binit);
    Value y = matmul(a, b);  // [13, 16]
    REQUIRE(y.data()[0] == 13.0);
    REQUIRE(y.data()[1] == 16.0);
    backward(sum(y));
    REQUIRE(a.grad()[0] == 7.0);
    REQUIRE(a.grad()[1] == 11.0);
    REQUIRE(b.grad().at(0, 0) == 1.0);
    REQUIRE(b.grad().at(1, 1) == 2.0);
}
