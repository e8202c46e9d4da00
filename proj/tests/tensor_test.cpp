#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dacca/rng.hpp"
#include "dacca/tensor.hpp"
#include "test_support.hpp"

using namespace dacca;
using dacca_test::finite_difference;
using dacca_test::max_rel_err;
using dacca_test::random_tensor;
using dacca_test::random_weights;

namespace {

// Gradient check for a unary-ish op: loss = weighted_sum(op(x)).
void check_gradient(const std::function<Tensor(Tape&, const Tensor&)>& op,
                    Tensor x, Rng& rng, double tol = 1e-6) {
  Tape probe;
  Tensor probe_out = op(probe, x);
  const std::vector<double> w = random_weights(probe_out.size(), rng);

  auto eval = [&]() {
    Tape t;
    return weighted_sum(t, op(t, x), w).item();
  };
  Tape tape;
  Tensor loss = weighted_sum(tape, op(tape, x), w);
  x.zero_grad();
  backward(loss, tape);
  const std::vector<double> numeric = finite_difference(eval, x);
  CHECK(max_rel_err(x.grad(), numeric) < tol);
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor t = Tensor::zeros({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.shape() == std::vector<int>{2, 3, 4});
  CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1.0, 2.0}, false),
                  std::invalid_argument);
  Tensor s = Tensor::scalar(3.5);
  CHECK(s.item() == 3.5);
  CHECK(s.rank() == 0);
}

TEST_CASE("backward basics") {
  SUBCASE("loss = sum(x) gives all-ones gradient") {
    Tape tape;
    Rng rng(7);
    Tensor x = random_tensor({3, 2, 2}, rng);
    Tensor loss = sum(tape, x);
    backward(loss, tape);
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("loss = sum(x*x) gives 2x") {
    Tape tape;
    Rng rng(8);
    Tensor x = random_tensor({5}, rng);
    Tensor loss = sum(tape, mul(tape, x, x));
    backward(loss, tape);
    for (int i = 0; i < x.size(); ++i)
      CHECK(x.grad()[i] == doctest::Approx(2.0 * x.values()[i]).epsilon(1e-12));
  }
  SUBCASE("double invocation accumulates leafs exactly") {
    Tape tape;
    Rng rng(9);
    Tensor x = random_tensor({4}, rng);
    Tensor loss = sum(tape, mul(tape, x, x));
    backward(loss, tape);
    std::vector<double> once = x.grad();
    backward(loss, tape);
    for (int i = 0; i < x.size(); ++i)
      CHECK(x.grad()[i] == 2.0 * once[i]);
  }
  SUBCASE("non-scalar loss rejected") {
    Tape tape;
    Tensor x = Tensor::zeros({3}, true);
    Tensor y = relu(tape, x);
    CHECK_THROWS_AS(backward(y, tape), std::invalid_argument);
  }
}

TEST_CASE("conv2d forward cases") {
  Tape tape;
  SUBCASE("1x1 identity weight returns input unchanged") {
    Rng rng(11);
    Tensor x = random_tensor({3, 4, 4}, rng, false);
    std::vector<double> w(3 * 3, 0.0);
    for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
    Tensor weight = Tensor::from_values({3, 3, 1, 1}, w);
    Tensor out = conv2d(tape, x, weight, 1, 0);
    for (int i = 0; i < x.size(); ++i)
      CHECK(out.values()[i] == x.values()[i]);
  }
  SUBCASE("zero input gives zero output") {
    Rng rng(12);
    Tensor x = Tensor::zeros({2, 5, 5});
    Tensor w = random_tensor({4, 2, 3, 3}, rng, false);
    Tensor out = conv2d(tape, x, w, 1, 1);
    for (double v : out.values()) CHECK(v == 0.0);
  }
  SUBCASE("3x3 stride-1 pad-1 preserves spatial size") {
    Rng rng(13);
    Tensor x = random_tensor({2, 6, 7}, rng, false);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, false);
    Tensor out = conv2d(tape, x, w, 1, 1);
    CHECK(out.shape() == std::vector<int>{3, 6, 7});
  }
  SUBCASE("shape mismatch reports dimensions") {
    Tensor x = Tensor::zeros({3, 4, 4});
    Tensor w = Tensor::zeros({2, 4, 3, 3});
    CHECK_THROWS_WITH_AS(conv2d(tape, x, w, 1, 1),
                         doctest::Contains("input channels 3"),
                         std::invalid_argument);
  }
  SUBCASE("kernel size restricted to 1 or 3") {
    Tensor x = Tensor::zeros({1, 8, 8});
    Tensor w = Tensor::zeros({1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d(tape, x, w, 1, 2), std::invalid_argument);
  }
}

TEST_CASE("conv2d 1x1 scalar-weight gradient matches finite differences") {
  Rng rng(21);
  Tensor x = random_tensor({1, 2, 2}, rng, false);
  Tensor w = random_tensor({1, 1, 1, 1}, rng, true);
  auto eval = [&]() {
    Tape t;
    return sum(t, conv2d(t, x, w, 1, 0)).item();
  };
  Tape tape;
  Tensor loss = sum(tape, conv2d(tape, x, w, 1, 0));
  backward(loss, tape);
  // d sum(w*x) / dw = sum(x)
  double expect = 0.0;
  for (double v : x.values()) expect += v;
  CHECK(w.grad()[0] == doctest::Approx(expect).epsilon(1e-12));
  const std::vector<double> numeric = finite_difference(eval, w);
  CHECK(max_rel_err(w.grad(), numeric) < 1e-6);
}

TEST_CASE("softmax_channel") {
  Tape tape;
  SUBCASE("symmetric logits split evenly") {
    Tensor x = Tensor::from_values({2, 1, 1}, {0.0, 0.0});
    Tensor s = softmax_channel(tape, x);
    CHECK(s.values()[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.values()[1] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("extreme logits do not overflow") {
    Tensor x = Tensor::from_values({2, 1, 1}, {1000.0, 0.0});
    Tensor s = softmax_channel(tape, x);
    CHECK(s.values()[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::isfinite(s.values()[1]));
  }
  SUBCASE("direct formula on (1,2,3)") {
    Tensor x = Tensor::from_values({3, 1, 1}, {1.0, 2.0, 3.0});
    Tensor s = softmax_channel(tape, x);
    // independent evaluation of e^{x_i} / sum_j e^{x_j}
    double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(s.values()[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
    CHECK(s.values()[1] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-12));
    CHECK(s.values()[2] == doctest::Approx(std::exp(3.0) / z).epsilon(1e-12));
    CHECK(s.values()[0] == doctest::Approx(0.09003).epsilon(1e-4));
    CHECK(s.values()[1] == doctest::Approx(0.24473).epsilon(1e-4));
    CHECK(s.values()[2] == doctest::Approx(0.66524).epsilon(1e-4));
  }
  SUBCASE("pixels sum to one and shift invariance") {
    Rng rng(31);
    Tensor x = random_tensor({4, 3, 5}, rng, false, -3.0, 3.0);
    Tensor s = softmax_channel(tape, x);
    const int hw = 15;
    for (int i = 0; i < hw; ++i) {
      double total = 0.0;
      for (int c = 0; c < 4; ++c) total += s.values()[c * hw + i];
      CHECK(std::fabs(total - 1.0) <= 1e-12);
    }
    // adding a per-pixel constant to every channel leaves softmax unchanged
    Tensor shifted = x.detach();
    for (int i = 0; i < hw; ++i)
      for (int c = 0; c < 4; ++c) shifted.values()[c * hw + i] += 0.731;
    Tensor s2 = softmax_channel(tape, shifted);
    for (int i = 0; i < x.size(); ++i)
      CHECK(std::fabs(s.values()[i] - s2.values()[i]) <= 1e-12);
  }
}

TEST_CASE("cosine_similarity") {
  Tape tape;
  SUBCASE("identical vectors give 1") {
    Tensor a = Tensor::from_values({3}, {0.3, -0.2, 0.9});
    CHECK(cosine_similarity(tape, a, a).item() ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("orthogonal vectors give 0") {
    Tensor a = Tensor::from_values({2}, {1.0, 0.0});
    Tensor b = Tensor::from_values({2}, {0.0, 1.0});
    CHECK(cosine_similarity(tape, a, b).item() == doctest::Approx(0.0));
  }
  SUBCASE("direct formula case") {
    Tensor a = Tensor::from_values({2}, {1.0, 0.0});
    Tensor b = Tensor::from_values({2}, {1.0, 1.0});
    CHECK(cosine_similarity(tape, a, b).item() ==
          doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(cosine_similarity(tape, a, b).item() ==
          doctest::Approx(0.7071).epsilon(1e-4));
  }
  SUBCASE("zero-norm input rejected") {
    Tensor a = Tensor::from_values({2}, {0.0, 0.0});
    Tensor b = Tensor::from_values({2}, {1.0, 0.0});
    CHECK_THROWS_WITH_AS(cosine_similarity(tape, a, b),
                         doctest::Contains("degenerate feature"),
                         std::invalid_argument);
  }
  SUBCASE("positive scale invariance within 1e-12") {
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor a = random_tensor({6}, rng, false);
      Tensor b = random_tensor({6}, rng, false);
      double lambda = rng.uniform(0.01, 50.0);
      Tensor a2 = a.detach();
      for (double& v : a2.values()) v *= lambda;
      double c1 = cosine_similarity(tape, a, b).item();
      double c2 = cosine_similarity(tape, a2, b).item();
      CHECK(std::fabs(c1 - c2) <= 1e-12);
      CHECK(c1 >= -1.0 - 1e-12);
      CHECK(c1 <= 1.0 + 1e-12);
      // symmetry
      CHECK(cosine_similarity(tape, b, a).item() == doctest::Approx(c1));
    }
  }
}

TEST_CASE("per-primitive gradients match central finite differences") {
  Rng rng(101);
  SUBCASE("relu") {
    // keep inputs away from the kink
    Tensor x = random_tensor({3, 2, 2}, rng);
    for (double& v : x.values())
      if (std::fabs(v) < 0.05) v = 0.1;
    check_gradient([](Tape& t, const Tensor& v) { return relu(t, v); }, x,
                   rng);
  }
  SUBCASE("exp") {
    check_gradient([](Tape& t, const Tensor& v) { return exp(t, v); },
                   random_tensor({7}, rng), rng);
  }
  SUBCASE("log") {
    check_gradient([](Tape& t, const Tensor& v) { return log(t, v); },
                   random_tensor({7}, rng, true, 0.1, 2.0), rng);
  }
  SUBCASE("add and mul") {
    Tensor b = random_tensor({6}, rng, false);
    check_gradient(
        [&b](Tape& t, const Tensor& v) { return add(t, v, b); },
        random_tensor({6}, rng), rng);
    check_gradient(
        [&b](Tape& t, const Tensor& v) { return mul(t, v, b); },
        random_tensor({6}, rng), rng);
  }
  SUBCASE("scale and add_const") {
    check_gradient(
        [](Tape& t, const Tensor& v) { return scale(t, v, -2.3); },
        random_tensor({5}, rng), rng);
    check_gradient(
        [](Tape& t, const Tensor& v) { return add_const(t, v, 0.77); },
        random_tensor({5}, rng), rng);
  }
  SUBCASE("matmul both sides") {
    Tensor b = random_tensor({4, 3}, rng, false);
    check_gradient(
        [&b](Tape& t, const Tensor& v) { return matmul(t, v, b); },
        random_tensor({2, 4}, rng), rng);
    Tensor a = random_tensor({3, 4}, rng, false);
    check_gradient(
        [&a](Tape& t, const Tensor& v) { return matmul(t, a, v); },
        random_tensor({4, 2}, rng), rng);
  }
  SUBCASE("conv2d 3x3 input and weight") {
    Tensor w = random_tensor({3, 2, 3, 3}, rng, false);
    check_gradient(
        [&w](Tape& t, const Tensor& v) { return conv2d(t, v, w, 1, 1); },
        random_tensor({2, 5, 4}, rng), rng);
    Tensor x = random_tensor({2, 5, 4}, rng, false);
    check_gradient(
        [&x](Tape& t, const Tensor& v) { return conv2d(t, x, v, 2, 1); },
        random_tensor({3, 2, 3, 3}, rng), rng);
  }
  SUBCASE("add_channel_bias") {
    Tensor b = random_tensor({3}, rng, false);
    check_gradient(
        [&b](Tape& t, const Tensor& v) { return add_channel_bias(t, v, b); },
        random_tensor({3, 4, 4}, rng), rng);
    Tensor x = random_tensor({3, 4, 4}, rng, false);
    check_gradient(
        [&x](Tape& t, const Tensor& v) { return add_channel_bias(t, x, v); },
        random_tensor({3}, rng), rng);
  }
  SUBCASE("channel_linear all parameters") {
    Tensor w = random_tensor({4, 3}, rng, false);
    Tensor b = random_tensor({4}, rng, false);
    check_gradient(
        [&](Tape& t, const Tensor& v) { return channel_linear(t, v, w, b); },
        random_tensor({3, 3, 2}, rng), rng);
    Tensor x = random_tensor({3, 3, 2}, rng, false);
    check_gradient(
        [&](Tape& t, const Tensor& v) { return channel_linear(t, x, v, b); },
        random_tensor({4, 3}, rng), rng);
    check_gradient(
        [&](Tape& t, const Tensor& v) { return channel_linear(t, x, w, v); },
        random_tensor({4}, rng), rng);
  }
  SUBCASE("softmax_channel") {
    check_gradient(
        [](Tape& t, const Tensor& v) { return softmax_channel(t, v); },
        random_tensor({3, 2, 3}, rng, true, -2.0, 2.0), rng);
  }
  SUBCASE("concat_channels") {
    Tensor b = random_tensor({2, 3, 3}, rng, false);
    check_gradient(
        [&b](Tape& t, const Tensor& v) {
          return concat_channels(t, {v, b});
        },
        random_tensor({2, 3, 3}, rng), rng);
  }
  SUBCASE("gather_pixel") {
    check_gradient(
        [](Tape& t, const Tensor& v) { return gather_pixel(t, v, 1, 2); },
        random_tensor({4, 3, 4}, rng), rng);
  }
  SUBCASE("reductions") {
    check_gradient([](Tape& t, const Tensor& v) { return sum(t, v); },
                   random_tensor({9}, rng), rng);
    Rng wrng(55);
    std::vector<double> wts = random_weights(8, wrng);
    check_gradient(
        [&wts](Tape& t, const Tensor& v) { return weighted_sum(t, v, wts); },
        random_tensor({8}, rng), rng);
    std::vector<double> mask = {1, 0, 1, 1, 0, 1, 0, 1};
    check_gradient(
        [&mask](Tape& t, const Tensor& v) { return masked_mean(t, v, mask); },
        random_tensor({8}, rng), rng);
    check_gradient([](Tape& t, const Tensor& v) { return l2_norm(t, v); },
                   random_tensor({6}, rng), rng);
    check_gradient(
        [](Tape& t, const Tensor& v) { return logsumexp(t, v); },
        random_tensor({6}, rng, true, -2.0, 2.0), rng);
  }
  SUBCASE("cosine_similarity both sides") {
    Tensor b = random_tensor({5}, rng, false);
    check_gradient(
        [&b](Tape& t, const Tensor& v) {
          return cosine_similarity(t, v, b);
        },
        random_tensor({5}, rng), rng);
    Tensor a = random_tensor({5}, rng, false);
    check_gradient(
        [&a](Tape& t, const Tensor& v) {
          return cosine_similarity(t, a, v);
        },
        random_tensor({5}, rng), rng);
  }
  SUBCASE("stack_scalars") {
    Tensor x = random_tensor({4}, rng);
    auto op = [](Tape& t, const Tensor& v) {
      std::vector<Tensor> parts;
      for (int i = 0; i < v.size(); ++i) {
        std::vector<double> m(v.size(), 0.0);
        m[i] = 1.0;
        parts.push_back(weighted_sum(t, v, m));
      }
      return exp(t, stack_scalars(t, parts));
    };
    check_gradient(op, x, rng);
  }
}

TEST_CASE("masked_mean forward") {
  Tape tape;
  Tensor x = Tensor::from_values({4}, {1.0, 2.0, 3.0, 4.0});
  CHECK(masked_mean(tape, x, {1, 0, 0, 1}).item() == doctest::Approx(2.5));
  CHECK_THROWS_AS(masked_mean(tape, x, {0, 0, 0, 0}), std::invalid_argument);
}

TEST_CASE("logsumexp is stable for large inputs") {
  Tape tape;
  Tensor x = Tensor::from_values({3}, {1000.0, 999.0, -1000.0});
  double v = logsumexp(tape, x).item();
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(1000.0 + std::log(1.0 + std::exp(-1.0))));
}

TEST_CASE("forward outputs stay finite on finite inputs") {
  Rng rng(202);
  for (int trial = 0; trial < 10; ++trial) {
    Tape tape;
    Tensor x = random_tensor({3, 6, 6}, rng, false, -5.0, 5.0);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, false, -2.0, 2.0);
    Tensor y = softmax_channel(tape, conv2d(tape, x, w, 2, 1));
    for (double v : y.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("tape replay determinism: identical seeds, bit-identical results") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tape tape;
    Tensor x = random_tensor({2, 4, 4}, rng, false);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, true);
    Tensor b = random_tensor({3}, rng, true);
    Tensor h = relu(tape, add_channel_bias(tape, conv2d(tape, x, w, 1, 1), b));
    Tensor loss = sum(tape, mul(tape, h, h));
    backward(loss, tape);
    std::vector<double> out;
    out.push_back(loss.item());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    return out;
  };
  auto a = run(77), b = run(77);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("instance_norm") {
  Rng rng(301);
  SUBCASE("normalizes each channel map to zero mean, unit variance") {
    Tape tape;
    Tensor x = random_tensor({3, 4, 5}, rng, false, -2.0, 5.0);
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    Tensor y = instance_norm(tape, x, gamma, beta);
    const int hw = 20;
    for (int c = 0; c < 3; ++c) {
      double mu = 0.0, var = 0.0;
      for (int i = 0; i < hw; ++i) mu += y.values()[c * hw + i];
      mu /= hw;
      for (int i = 0; i < hw; ++i) {
        double d = y.values()[c * hw + i] - mu;
        var += d * d;
      }
      var /= hw;
      CHECK(std::fabs(mu) <= 1e-12);
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
  }
  SUBCASE("gradients match finite differences") {
    Tensor g = random_tensor({2}, rng, false, 0.5, 1.5);
    Tensor b = random_tensor({2}, rng, false);
    check_gradient(
        [&](Tape& t, const Tensor& v) { return instance_norm(t, v, g, b); },
        random_tensor({2, 3, 3}, rng), rng, 2e-6);
    Tensor x = random_tensor({2, 3, 3}, rng, false);
    check_gradient(
        [&](Tape& t, const Tensor& v) { return instance_norm(t, x, v, b); },
        random_tensor({2}, rng, true, 0.5, 1.5), rng);
    check_gradient(
        [&](Tape& t, const Tensor& v) { return instance_norm(t, x, g, v); },
        random_tensor({2}, rng), rng);
  }
}
