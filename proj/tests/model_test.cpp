#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "dacca/errors.hpp"
#include "dacca/model.hpp"
#include "dacca/rng.hpp"
#include "test_support.hpp"

using namespace dacca;
using dacca_test::finite_difference;
using dacca_test::max_rel_err;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.num_lanes = 2;
  c.feature_dim = 4;
  c.image_height = 16;
  c.image_width = 16;
  c.encoder_channels = {4};
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("init_model determinism") {
  ModelConfig c = tiny_config();
  SegModel a = init_model(c);
  SegModel b = init_model(c);
  auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(pa[i].values() == pb[i].values());

  c.seed = 4;
  SegModel d = init_model(c);
  auto pd = d.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i].values() != pd[i].values()) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("prediction head has C+1 output channels") {
  ModelConfig c;
  c.num_lanes = 2;
  c.feature_dim = 16;
  SegModel m = init_model(c);
  CHECK(m.pred_head.weight.shape() == std::vector<int>{3, 16, 1, 1});
}

TEST_CASE("forward shape contract over the config grid") {
  for (int lanes : {1, 2, 4}) {
    for (int dim : {4, 16}) {
      for (int size : {16, 32}) {
        ModelConfig c;
        c.num_lanes = lanes;
        c.feature_dim = dim;
        c.image_height = size;
        c.image_width = size;
        c.seed = 11;
        SegModel m = init_model(c);
        Rng rng(99);
        Tensor img = dacca_test::random_tensor({3, size, size}, rng, false,
                                               0.0, 1.0);
        Tape tape;
        ForwardResult r = forward(tape, m, img, nullptr, false);
        const int hf = size / 2;
        CHECK(r.features.shape() == std::vector<int>{dim, hf, hf});
        CHECK(r.logits.shape() == std::vector<int>{lanes + 1, hf, hf});
        CHECK(r.repr.shape() == std::vector<int>{dim, hf, hf});
        for (double v : r.logits.values()) CHECK(std::isfinite(v));
      }
    }
  }
}

TEST_CASE("forward without DFA is a pure function and bypasses fusion") {
  ModelConfig c = tiny_config();
  SegModel m = init_model(c);
  Rng rng(5);
  Tensor img = dacca_test::random_tensor({3, 16, 16}, rng, false, 0.0, 1.0);
  Tape t1, t2;
  ForwardResult a = forward(t1, m, img, nullptr, false);
  ForwardResult b = forward(t2, m, img, nullptr, false);
  CHECK(a.fused.values() == a.features.values());
  CHECK(a.logits.values() == b.logits.values());
  CHECK(a.repr.values() == b.repr.values());
}

TEST_CASE("zero image with zero biases gives uniform softmax") {
  ModelConfig c = tiny_config();
  SegModel m = init_model(c);  // biases are zero-initialized
  Tensor img = Tensor::zeros({3, 16, 16});
  Tape tape;
  ForwardResult r = forward(tape, m, img, nullptr, false);
  for (double v : r.logits.values()) CHECK(v == 0.0);
  Tensor probs = softmax_channel(tape, r.logits);
  for (double v : probs.values())
    CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax of logits sums to one per pixel") {
  ModelConfig c = tiny_config();
  SegModel m = init_model(c);
  Rng rng(6);
  Tensor img = dacca_test::random_tensor({3, 16, 16}, rng, false, 0.0, 1.0);
  Tape tape;
  ForwardResult r = forward(tape, m, img, nullptr, false);
  Tensor probs = softmax_channel(tape, r.logits);
  const int hw = 8 * 8;
  for (int i = 0; i < hw; ++i) {
    double s = 0.0;
    for (int ci = 0; ci < 3; ++ci) s += probs.values()[ci * hw + i];
    CHECK(std::fabs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("DFA enabled requires warmed banks") {
  ModelConfig c = tiny_config();
  SegModel m = init_model(c);
  BankPair banks{make_bank(Domain::source, c.num_lanes, c.feature_dim),
                 make_bank(Domain::target, c.num_lanes, c.feature_dim)};
  Tensor img = Tensor::zeros({3, 16, 16});
  Tape tape;
  CHECK_THROWS_WITH_AS(forward(tape, m, img, &banks, true),
                       doctest::Contains("not warmed up"),
                       dacca::contract_error);
}

TEST_CASE("cross-entropy gradient through the encoder matches finite differences") {
  ModelConfig c = tiny_config();
  SegModel m = init_model(c);
  Rng rng(8);
  Tensor img = dacca_test::random_tensor({3, 16, 16}, rng, false, 0.0, 1.0);
  // one-hot labels at feature resolution, random classes
  const int hw = 8 * 8;
  std::vector<double> onehot(3 * hw, 0.0);
  for (int i = 0; i < hw; ++i) onehot[rng.uniform_int(3) * hw + i] = 1.0;

  auto eval = [&]() {
    Tape t;
    ForwardResult r = forward(t, m, img, nullptr, false);
    Tensor lp = dacca::log(t, softmax_channel(t, r.logits));
    return scale(t, weighted_sum(t, lp, onehot), -1.0).item();
  };

  Tape tape;
  ForwardResult r = forward(tape, m, img, nullptr, false);
  Tensor lp = dacca::log(tape, softmax_channel(tape, r.logits));
  Tensor loss = scale(tape, weighted_sum(tape, lp, onehot), -1.0);
  for (Tensor p : m.parameters()) p.zero_grad();
  backward(loss, tape);

  for (const EncoderStage& stage : m.encoder) {
    Tensor w = stage.conv.weight;
    const std::vector<double> numeric = finite_difference(eval, w);
    CHECK(max_rel_err(w.grad(), numeric) < 1e-4);
    if (stage.normalized) {
      Tensor g = stage.norm_gamma;
      const std::vector<double> ng = finite_difference(eval, g);
      CHECK(max_rel_err(g.grad(), ng) < 1e-4);
    }
  }
}

TEST_CASE("ema_update") {
  ModelConfig c = tiny_config();
  SegModel student = init_model(c);
  SegModel teacher = student.clone(false);

  SUBCASE("arithmetic of the update") {
    // w_t = 0, w_s = 1, beta = 0.9 -> 0.1
    for (Tensor t : teacher.parameters())
      std::fill(t.values().begin(), t.values().end(), 0.0);
    for (Tensor s : student.parameters())
      std::fill(s.values().begin(), s.values().end(), 1.0);
    ema_update(teacher, student, 0.9);
    for (Tensor t : teacher.parameters())
      for (double v : t.values()) CHECK(v == doctest::Approx(0.1).epsilon(1e-15));
  }
  SUBCASE("equal weights are a fixed point") {
    ema_update(teacher, student, 0.9);
    auto tp = teacher.parameters(), sp = student.parameters();
    for (std::size_t i = 0; i < tp.size(); ++i)
      for (std::size_t j = 0; j < tp[i].values().size(); ++j)
        CHECK(std::fabs(tp[i].values()[j] - sp[i].values()[j]) <= 1e-16);
  }
  SUBCASE("closed-form geometric recursion over k steps") {
    Rng rng(12);
    // teacher starts at random values, student constant
    for (Tensor t : teacher.parameters())
      for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
    std::vector<std::vector<double>> w0;
    for (Tensor t : teacher.parameters()) w0.push_back(t.values());
    const double beta = 0.9;
    const int k = 10;
    for (int i = 0; i < k; ++i) ema_update(teacher, student, beta);
    auto tp = teacher.parameters(), sp = student.parameters();
    const double bk = std::pow(beta, k);
    for (std::size_t i = 0; i < tp.size(); ++i)
      for (std::size_t j = 0; j < tp[i].values().size(); ++j) {
        const double expect =
            sp[i].values()[j] + bk * (w0[i][j] - sp[i].values()[j]);
        CHECK(std::fabs(tp[i].values()[j] - expect) <= 1e-12);
      }
  }
  SUBCASE("architecture mismatch rejected") {
    ModelConfig other = tiny_config();
    other.feature_dim = 8;
    SegModel wrong = init_model(other);
    CHECK_THROWS_AS(ema_update(wrong, student, 0.9), std::invalid_argument);
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  ModelConfig c = tiny_config();
  c.encoder_channels = {4, 6};
  SegModel m = init_model(c);
  Rng rng(21);
  for (Tensor p : m.parameters())
    for (double& v : p.values()) v = rng.uniform(-2.0, 2.0);
  BankPair banks{make_bank(Domain::source, c.num_lanes, c.feature_dim),
                 make_bank(Domain::target, c.num_lanes, c.feature_dim)};
  initialize_class(banks.source, Domain::source, 1, {{0.1, -0.7, 3.14, 0.0}});
  initialize_class(banks.target, Domain::target, 2, {{1e-17, 2.0, -0.5, 9.9}});

  const std::string path = "model_test_ckpt.bin";
  save_checkpoint(path, m, banks, 42, true);
  Checkpoint loaded = load_checkpoint(path);
  std::remove(path.c_str());

  CHECK(loaded.iteration == 42);
  CHECK(loaded.dfa_trained);
  CHECK(loaded.model.config == c);
  auto pa = m.parameters(), pb = loaded.model.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].shape() == pb[i].shape());
    for (std::size_t j = 0; j < pa[i].values().size(); ++j)
      CHECK(pa[i].values()[j] == pb[i].values()[j]);  // bitwise for doubles
  }
  CHECK(loaded.banks.source.features == banks.source.features);
  CHECK(loaded.banks.target.features == banks.target.features);
  CHECK(loaded.banks.source.initialized == banks.source.initialized);
  CHECK(loaded.banks.target.initialized == banks.target.initialized);
}

TEST_CASE("corrupt checkpoints are reported") {
  const std::string path = "model_test_bad.bin";
  std::FILE* f = std::fopen(path.c_str(), "wb");
  std::fputs("NOTDACCA", f);
  std::fclose(f);
  CHECK_THROWS_AS(load_checkpoint(path), data_error);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_checkpoint("does_not_exist.bin"), data_error);
}
