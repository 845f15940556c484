#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "tram/autodiff.hpp"
#include "tram/models.hpp"
#include "tram/rng.hpp"
#include "tram/tensor.hpp"

using namespace tram;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.values.data(), b.values.data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("forward_op basics") {
  SUBCASE("matmul against identity") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor v({2, 1}, {3, 4});
    Tensor out = matmul(eye, v);
    CHECK(out.shape == std::vector<std::size_t>{2, 1});
    CHECK(out[0] == 3.0);
    CHECK(out[1] == 4.0);
  }
  SUBCASE("relu definition") {
    Tensor out = relu(Tensor({3}, {-1, 0, 2}));
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
    CHECK(out[2] == 2.0);
  }
  SUBCASE("log_softmax symmetry") {
    Tensor out = log_softmax(Tensor({2}, {0, 0}));
    CHECK(out[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("shape mismatch names the op and shapes") {
    Tensor a({2, 3});
    Tensor b({2, 3});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(add(Tensor({2, 3}), Tensor({3, 2})), doctest::Contains("(2x3)"),
                         std::invalid_argument);
  }
  SUBCASE("pure computation records nothing") {
    Tensor out = add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4}));
    CHECK(out.tape == nullptr);
    CHECK(!out.node_id.has_value());
    CHECK(!out.requires_grad);
  }
}

TEST_CASE("log_softmax rows exponentiate to unit sums") {
  Rng rng(5);
  Tensor a = random_tensor(rng, {6, 9}, -50.0, 50.0);
  Tensor out = log_softmax(a);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      const double p = std::exp(out.at(r, c));
      CHECK(std::isfinite(out.at(r, c)));
      s += p;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("backward on simple expressions") {
  SUBCASE("x*x at x=3 gives 6") {
    Tape tape;
    Tensor x = tape.leaf(Tensor::scalar(3.0), true, "x");
    Tensor loss = mul(x, x);
    GradMap g = backward(tape, loss);
    CHECK(g.at("x")[0] == doctest::Approx(6.0).epsilon(1e-15));
  }
  SUBCASE("sum(tanh(x)) at 0 gives ones") {
    Tape tape;
    Tensor x = tape.leaf(Tensor({4}), true, "x");
    GradMap g = backward(tape, sum(tanh(x)));
    for (std::size_t i = 0; i < 4; ++i) CHECK(g.at("x")[i] == 1.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape tape;
    Tensor x = tape.leaf(Tensor({3}, {1, 2, 3}), true, "x");
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(backward(tape, y), std::logic_error);
  }
  SUBCASE("loss from a different tape is rejected") {
    Tape t1, t2;
    Tensor x = t1.leaf(Tensor::scalar(1.0), true, "x");
    Tensor loss = mul(x, x);
    CHECK_THROWS_AS(backward(t2, loss), std::logic_error);
  }
  SUBCASE("same-named leaves accumulate into one gradient entry") {
    // the pattern used when one parameter enters a graph twice: grads add
    Tape tape;
    Tensor x1 = tape.leaf(Tensor::scalar(3.0), true, "x");
    Tensor x2 = tape.leaf(Tensor::scalar(3.0), true, "x");
    GradMap g = backward(tape, add(mul(x1, x1), scalar_mul(x2, 4.0)));
    CHECK(g.at("x")[0] == doctest::Approx(10.0).epsilon(1e-15));
  }
  SUBCASE("unreached leaves report zero gradients") {
    Tape tape;
    Tensor x = tape.leaf(Tensor::scalar(2.0), true, "x");
    Tensor y = tape.leaf(Tensor::scalar(5.0), true, "y");
    (void)y;
    GradMap g = backward(tape, mul(x, x));
    CHECK(g.at("y")[0] == 0.0);
    CHECK(g.count("x") == 1);
  }
}

TEST_CASE("every catalog op matches central finite differences") {
  Rng rng(17);
  const double h = 1e-5;

  auto check_gradient = [&](const std::function<Tensor(const Tensor&)>& f, const Tensor& x0) {
    // reference: perturb one coordinate at a time through a plain forward
    ParameterSet p;
    p.insert("x", x0);
    auto loss_of = [&](const ParameterSet& ps) {
      Tape t;
      Tensor x = t.leaf(ps.at("x"), true, "x");
      return f(x).scalar_value();
    };
    Tape tape;
    Tensor x = tape.leaf(x0, true, "x");
    GradMap g = backward(tape, f(x));
    for (std::size_t i = 0; i < x0.numel(); ++i) {
      const double fd = finite_diff_grad(loss_of, p, {"x", i}, h);
      const double ad = g.at("x")[i];
      const double scale = std::max({std::fabs(fd), std::fabs(ad), 1e-8});
      CHECK(std::fabs(fd - ad) / scale < 1e-4);
    }
  };

  SUBCASE("matmul both sides") {
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {4, 2});
    check_gradient([&](const Tensor& x) { return sum(matmul(x, b)); }, a);
    check_gradient([&](const Tensor& x) { return sum(matmul(a, x)); }, b);
  }
  SUBCASE("add elementwise and bias broadcast") {
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {4});
    check_gradient([&](const Tensor& x) { return sum(mul(add(x, a), add(x, a))); }, a);
    check_gradient([&](const Tensor& x) { return sum(mul(add(a, x), add(a, x))); }, b);
  }
  SUBCASE("mul") {
    Tensor a = random_tensor(rng, {5});
    Tensor b = random_tensor(rng, {5});
    check_gradient([&](const Tensor& x) { return sum(mul(x, mul(x, b))); }, a);
  }
  SUBCASE("relu") {
    // keep coordinates away from the kink
    Tensor a = random_tensor(rng, {8});
    for (std::size_t i = 0; i < a.numel(); ++i) {
      if (std::fabs(a[i]) < 0.05) a[i] = 0.5;
    }
    check_gradient([&](const Tensor& x) { return sum(mul(relu(x), relu(x))); }, a);
  }
  SUBCASE("tanh") {
    Tensor a = random_tensor(rng, {6});
    check_gradient([&](const Tensor& x) { return sum(tanh(x)); }, a);
  }
  SUBCASE("exp") {
    Tensor a = random_tensor(rng, {6});
    check_gradient([&](const Tensor& x) { return sum(exp(x)); }, a);
  }
  SUBCASE("log_softmax") {
    Tensor a = random_tensor(rng, {3, 5});
    check_gradient([&](const Tensor& x) { return sum(mul(log_softmax(x), log_softmax(x))); }, a);
  }
  SUBCASE("gather") {
    Tensor a = random_tensor(rng, {4, 3});
    std::vector<std::size_t> idx = {2, 0, 1, 2};
    check_gradient([&](const Tensor& x) { return sum(mul(gather(x, idx), gather(x, idx))); }, a);
  }
  SUBCASE("mean") {
    Tensor a = random_tensor(rng, {7});
    check_gradient([&](const Tensor& x) { return mean(mul(x, x)); }, a);
  }
  SUBCASE("scalar_mul") {
    Tensor a = random_tensor(rng, {5});
    check_gradient([&](const Tensor& x) { return sum(scalar_mul(mul(x, x), -1.75)); }, a);
  }
}

TEST_CASE("finite_diff_grad basics") {
  ParameterSet p;
  p.insert("th", Tensor::scalar(3.0));
  auto quad = [](const ParameterSet& ps) {
    const double v = ps.at("th")[0];
    return v * v;
  };
  CHECK(finite_diff_grad(quad, p, {"th", 0}, 1e-5) == doctest::Approx(6.0).epsilon(1e-9));
  auto constant = [](const ParameterSet&) { return 4.25; };
  CHECK(finite_diff_grad(constant, p, {"th", 0}, 1e-5) == 0.0);
  CHECK_THROWS_AS(finite_diff_grad(quad, p, {"th", 0}, 0.0), std::invalid_argument);
}

TEST_CASE("mlp cross-entropy backward matches finite differences") {
  MLPConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dims = {8, 8};
  cfg.num_classes = 4;
  cfg.seed = 99;
  ParameterSet params = init_mlp(cfg);
  Rng rng(4);
  Tensor x = random_tensor(rng, {6, 2});
  std::vector<std::size_t> y = {0, 1, 2, 3, 1, 2};

  auto loss_of = [&](const ParameterSet& ps) {
    auto out = forward(cfg, ps, x, nullptr, nullptr);
    return cross_entropy(out.dist, y).scalar_value();
  };

  Tape tape;
  auto out = forward(cfg, params, x, &tape, nullptr);
  GradMap g = backward(tape, cross_entropy(out.dist, y));

  std::size_t checked = 0;
  for (const auto& [name, t] : params) {
    for (std::size_t i = 0; i < t.numel(); i += 3) {
      const double fd = finite_diff_grad(loss_of, params, {name, i}, 1e-5);
      const double ad = g.at(name)[i];
      const double scale = std::max({std::fabs(fd), std::fabs(ad), 1e-8});
      CHECK(std::fabs(fd - ad) / scale < 1e-4);
      ++checked;
    }
  }
  CHECK(checked >= 40);
}

TEST_CASE("batch gradient linearity: sum over batch of 8 equals per-example sums") {
  MLPConfig cfg;
  cfg.hidden_dims = {6};
  cfg.seed = 12;
  ParameterSet params = init_mlp(cfg);
  Rng rng(8);
  Tensor x = random_tensor(rng, {8, 2});
  std::vector<std::size_t> y = {0, 1, 2, 3, 0, 1, 2, 3};

  // total (not mean) log-likelihood so gradients add across examples
  auto total_grad = [&](const Tensor& bx, const std::vector<std::size_t>& by) {
    Tape tape;
    auto out = forward(cfg, params, bx, &tape, nullptr);
    return backward(tape, sum(gather(out.dist.log_probs, by)));
  };

  GradMap whole = total_grad(x, y);
  GradMap acc;
  for (std::size_t i = 0; i < 8; ++i) {
    Tensor xi({1, 2}, {x.at(i, 0), x.at(i, 1)});
    GradMap gi = total_grad(xi, {y[i]});
    for (auto& [name, t] : gi) {
      if (!acc.count(name)) acc[name] = Tensor(t.shape);
      for (std::size_t j = 0; j < t.numel(); ++j) acc[name][j] += t[j];
    }
  }
  for (const auto& [name, t] : whole) {
    for (std::size_t j = 0; j < t.numel(); ++j) {
      CHECK(t[j] == doctest::Approx(acc.at(name)[j]).epsilon(1e-9));
    }
  }
}

TEST_CASE("identical inputs give bit-identical outputs and gradients") {
  MLPConfig cfg;
  cfg.seed = 31;
  ParameterSet params = init_mlp(cfg);
  Rng rng(2);
  Tensor x = random_tensor(rng, {5, 2});
  std::vector<std::size_t> y = {0, 1, 2, 3, 0};

  auto run = [&]() {
    Tape tape;
    auto out = forward(cfg, params, x, &tape, nullptr);
    GradMap g = backward(tape, cross_entropy(out.dist, y));
    return std::make_pair(out.dist.log_probs.detached(), g);
  };
  auto [lp1, g1] = run();
  auto [lp2, g2] = run();
  CHECK(bitwise_equal(lp1, lp2));
  for (const auto& [name, t] : g1) CHECK(bitwise_equal(t, g2.at(name)));
}
