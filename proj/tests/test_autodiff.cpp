#include <cmath>

#include "csasr/autodiff.hpp"
#include "csasr/layers.hpp"
#include "doctest.h"
#include "finite_diff.hpp"

using namespace csasr;

TEST_CASE("softmax basics") {
  auto x = make_var(Tensor({2}, {1.0, 1.0}));
  auto y = softmax(x, 0);
  CHECK(y->value.data[0] == doctest::Approx(0.5));
  CHECK(y->value.data[1] == doctest::Approx(0.5));

  auto x2 = make_var(Tensor({2}, {0.0, std::log(3.0)}));
  auto y2 = softmax(x2, 0);
  CHECK(y2->value.data[0] == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(y2->value.data[1] == doctest::Approx(0.75).epsilon(1e-9));

  // stabilization: large equal inputs must not overflow
  auto x3 = make_var(Tensor({2}, {1000.0, 1000.0}));
  auto y3 = softmax(x3, 0);
  CHECK(y3->value.data[0] == doctest::Approx(0.5));
  CHECK(std::isfinite(y3->value.data[1]));
}

TEST_CASE("softmax sums to one along axis") {
  Rng rng(11);
  Tensor t({3, 4, 5});
  for (double& v : t.data) v = rng.uniform(-50, 50);
  for (int axis = 0; axis < 3; ++axis) {
    auto y = softmax(make_var(t), axis);
    // sum along `axis` for a few lanes
    int64_t outer = 1, inner = 1, S = t.shape[axis];
    for (int i = 0; i < axis; ++i) outer *= t.shape[i];
    for (size_t i = axis + 1; i < t.rank(); ++i) inner *= t.shape[i];
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        double s = 0;
        for (int64_t k = 0; k < S; ++k)
          s += y->value.data[o * S * inner + k * inner + in];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }
  }
  CHECK_THROWS(softmax(make_var(t), 7));
}

TEST_CASE("layer_norm examples") {
  Rng rng(1);
  auto gamma = make_var(Tensor({3}, {1, 1, 1}));
  auto beta = make_var(Tensor({3}, {0, 0, 0}));
  auto x = make_var(Tensor({1, 3}, {2, 2, 2}));
  auto y = layer_norm(x, gamma, beta, 1e-5);
  for (double v : y->value.data) CHECK(v == doctest::Approx(0.0));

  auto g2 = make_var(Tensor({2}, {1, 1}));
  auto b2 = make_var(Tensor({2}, {0, 0}));
  auto x2 = make_var(Tensor({1, 2}, {0, 2}));
  auto y2 = layer_norm(x2, g2, b2, 1e-12);
  CHECK(y2->value.data[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y2->value.data[1] == doctest::Approx(1.0).epsilon(1e-5));

  auto g3 = make_var(Tensor({2}, {3, 3}));
  auto b3 = make_var(Tensor({2}, {1, 1}));
  auto y3 = layer_norm(x2, g3, b3, 1e-12);
  CHECK(y3->value.data[0] == doctest::Approx(-2.0).epsilon(1e-5));
  CHECK(y3->value.data[1] == doctest::Approx(4.0).epsilon(1e-5));

  CHECK_THROWS(layer_norm(x2, gamma, beta, 1e-5));  // mismatched shapes
}

TEST_CASE("layer_norm row statistics") {
  Rng rng(3);
  Tensor t({4, 16});
  for (double& v : t.data) v = rng.uniform(-2, 7);
  auto y = layer_norm(make_var(t), make_var(Tensor::full({16}, 1.0)),
                      make_var(Tensor::zeros({16})), 1e-10);
  for (int64_t r = 0; r < 4; ++r) {
    double mu = 0, var = 0;
    for (int64_t c = 0; c < 16; ++c) mu += y->value.at(r, c);
    mu /= 16;
    for (int64_t c = 0; c < 16; ++c) {
      double d = y->value.at(r, c) - mu;
      var += d * d;
    }
    var /= 16;
    CHECK(std::fabs(mu) < 1e-6);
    CHECK(std::fabs(var - 1.0) < 1e-5);
  }
}

TEST_CASE("depthwise conv1d") {
  // identity kernel
  auto x = make_var(Tensor({3, 2}, {1, 10, 2, 20, 3, 30}));
  auto k = make_var(Tensor({2, 3}, {0, 1, 0, 0, 1, 0}));
  auto y = conv1d_depthwise(x, k);
  for (size_t i = 0; i < 6; ++i)
    CHECK(y->value.data[i] == doctest::Approx(x->value.data[i]));

  // hand convolution with zero pad: x=[1,2,3], k=[1,1,1] -> [3,6,5]
  auto x1 = make_var(Tensor({3, 1}, {1, 2, 3}));
  auto k1 = make_var(Tensor({1, 3}, {1, 1, 1}));
  auto y1 = conv1d_depthwise(x1, k1);
  CHECK(y1->value.data[0] == doctest::Approx(3.0));
  CHECK(y1->value.data[1] == doctest::Approx(6.0));
  CHECK(y1->value.data[2] == doctest::Approx(5.0));

  // impulse response recovers the reversed kernel window
  auto xi = make_var(Tensor({5, 1}, {0, 0, 1, 0, 0}));
  auto ki = make_var(Tensor({1, 3}, {0.3, -0.5, 0.9}));
  auto yi = conv1d_depthwise(xi, ki);
  CHECK(yi->value.data[1] == doctest::Approx(0.9));
  CHECK(yi->value.data[2] == doctest::Approx(-0.5));
  CHECK(yi->value.data[3] == doctest::Approx(0.3));

  CHECK_THROWS(conv1d_depthwise(x1, make_var(Tensor({1, 4}, {1, 1, 1, 1}))));
}

TEST_CASE("depthwise conv is channelwise") {
  Rng rng(5);
  Tensor xt({6, 3}), kt({3, 5});
  for (double& v : xt.data) v = rng.normal();
  for (double& v : kt.data) v = rng.normal();
  auto base = conv1d_depthwise(make_var(xt), make_var(kt));
  Tensor xp = xt;
  xp.at(2, 1) += 0.7;  // perturb channel 1 only
  auto pert = conv1d_depthwise(make_var(xp), make_var(kt));
  for (int64_t t = 0; t < 6; ++t)
    for (int64_t d = 0; d < 3; ++d) {
      if (d == 1) continue;
      CHECK(pert->value.at(t, d) == doctest::Approx(base->value.at(t, d)));
    }
}

TEST_CASE("activations") {
  auto g = glu(make_var(Tensor({1, 2}, {2, 0})));
  CHECK(g->value.data[0] == doctest::Approx(1.0));
  CHECK_THROWS(glu(make_var(Tensor({1, 3}, {1, 2, 3}))));

  auto s0 = swish(make_var(Tensor({1}, {0.0})));
  CHECK(s0->value.data[0] == doctest::Approx(0.0));
  auto s1 = swish(make_var(Tensor({1}, {1.0})));
  CHECK(s1->value.data[0] == doctest::Approx(0.7310585786300049).epsilon(1e-9));

  // monotone kinds preserve ordering
  auto r = relu(make_var(Tensor({3}, {-1, 0.5, 2})));
  CHECK(r->value.data[0] == 0.0);
  CHECK(r->value.data[1] < r->value.data[2]);
}

TEST_CASE("backward basics") {
  Rng rng(2);
  Tensor t({2, 3});
  for (double& v : t.data) v = rng.normal();
  auto x = make_var(t, true);
  auto loss = sum(x);
  backward(loss);
  for (double v : x->grad.data) CHECK(v == doctest::Approx(1.0));

  auto x2 = make_var(Tensor({1}, {3.0}), true);
  auto loss2 = sum(square(x2));
  backward(loss2);
  CHECK(x2->grad.data[0] == doctest::Approx(6.0));

  CHECK_THROWS(backward(x));  // non-scalar loss
}

TEST_CASE("finite differences: primitives") {
  Rng rng(7);
  auto randt = [&](std::vector<int64_t> s) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = rng.uniform(-1, 1);
    return t;
  };

  SUBCASE("matmul + bias + sigmoid") {
    auto a = make_var(randt({3, 4}), true);
    auto w = make_var(randt({4, 2}), true);
    auto b = make_var(randt({2}), true);
    auto make = [&] { return sum(sigmoid(add_rowvec(matmul(a, w), b))); };
    CHECK(testing::check_gradients(make, {a, w, b}) < 1e-4);
  }
  SUBCASE("softmax") {
    auto x = make_var(randt({3, 5}), true);
    auto ww = make_var(randt({3, 5}), true);
    auto make = [&] { return sum(mul(softmax(x, 1), ww)); };
    CHECK(testing::check_gradients(make, {x, ww}) < 1e-4);
  }
  SUBCASE("log_softmax") {
    auto x = make_var(randt({4, 3}), true);
    auto ww = make_var(randt({4, 3}), true);
    auto make = [&] { return sum(mul(log_softmax(x, 1), ww)); };
    CHECK(testing::check_gradients(make, {x, ww}) < 1e-4);
  }
  SUBCASE("layer_norm") {
    auto x = make_var(randt({3, 6}), true);
    auto gm = make_var(randt({6}), true);
    auto bt = make_var(randt({6}), true);
    auto ww = make_var(randt({3, 6}), true);
    auto make = [&] { return sum(mul(layer_norm(x, gm, bt, 1e-5), ww)); };
    CHECK(testing::check_gradients(make, {x, gm, bt, ww}) < 1e-4);
  }
  SUBCASE("depthwise conv") {
    auto x = make_var(randt({5, 3}), true);
    auto k = make_var(randt({3, 3}), true);
    auto make = [&] { return sum(swish(conv1d_depthwise(x, k))); };
    CHECK(testing::check_gradients(make, {x, k}) < 1e-4);
  }
  SUBCASE("glu") {
    auto x = make_var(randt({3, 4}), true);
    auto make = [&] { return sum(glu(x)); };
    CHECK(testing::check_gradients(make, {x}) < 1e-4);
  }
  SUBCASE("conv2d") {
    auto x = make_var(randt({2, 6, 5}), true);
    auto w = make_var(randt({3, 2, 3, 3}), true);
    auto b = make_var(randt({3}), true);
    auto make = [&] { return sum(relu(conv2d(x, w, b, 2, 0))); };
    CHECK(testing::check_gradients(make, {x, w, b}) < 1e-4);
  }
  SUBCASE("glu/swish/relu chain with slices") {
    auto x = make_var(randt({4, 8}), true);
    auto make = [&] {
      auto h = glu(x);
      auto a = slice_cols(h, 0, 2);
      auto b = slice_cols(h, 2, 4);
      return sum(mul(swish(a), sigmoid(b)));
    };
    CHECK(testing::check_gradients(make, {x}) < 1e-4);
  }
  SUBCASE("embedding") {
    auto e = make_var(randt({5, 3}), true);
    std::vector<int> ids{1, 4, 1};
    auto make = [&] { return sum(swish(embedding(e, ids))); };
    CHECK(testing::check_gradients(make, {e}) < 1e-4);
  }
  SUBCASE("rsqrt/mul_rowvec") {
    auto x = make_var(randt({3, 4}), true);
    auto v = make_var(Tensor({4}, {0.5, 1.5, 2.0, 0.9}), true);
    auto make = [&] { return sum(mul_rowvec(x, rsqrt_eps(v, 1e-5))); };
    CHECK(testing::check_gradients(make, {x, v}) < 1e-4);
  }
}

TEST_CASE("dropout contract") {
  Rng rng(9);
  Tensor t({4, 4});
  for (double& v : t.data) v = rng.normal();
  auto x = make_var(t, true);
  // rate 0 is identity
  auto y0 = dropout(x, 0.0, true, rng);
  CHECK(y0->value.data == t.data);
  // inference mode is identity at any rate
  auto y1 = dropout(x, 0.9, false, rng);
  CHECK(y1->value.data == t.data);
  // training mode with a seed is reproducible
  Rng r1(123), r2(123);
  auto a = dropout(x, 0.5, true, r1);
  auto b = dropout(x, 0.5, true, r2);
  CHECK(a->value.data == b->value.data);
}

TEST_CASE("batch norm train vs eval") {
  Rng rng(4);
  ParamStore ps;
  BatchNorm bn(ps, "bn", 3, rng);
  Tensor t({10, 3});
  for (double& v : t.data) v = rng.normal(2.0, 3.0);
  auto y = bn(make_var(t), true);
  // batch statistics: output approx zero-mean unit-variance per channel
  for (int64_t c = 0; c < 3; ++c) {
    double mu = 0;
    for (int64_t r = 0; r < 10; ++r) mu += y->value.at(r, c);
    CHECK(std::fabs(mu / 10) < 1e-9);
  }
  // eval mode uses running stats and is deterministic
  auto e1 = bn(make_var(t), false);
  auto e2 = bn(make_var(t), false);
  CHECK(e1->value.data == e2->value.data);

  // single-row training input must not divide by zero
  auto one = bn(make_var(Tensor({1, 3}, {1, 2, 3})), true);
  for (double v : one->value.data) CHECK(std::isfinite(v));
}

TEST_CASE("batch norm gradients") {
  Rng rng(6);
  ParamStore ps;
  BatchNorm bn(ps, "bn", 2, rng);
  Tensor t({5, 2});
  for (double& v : t.data) v = rng.uniform(-1, 1);
  auto x = make_var(t, true);
  auto make = [&] { return sum(swish(bn(x, true))); };
  CHECK(testing::check_gradients(make, {x, bn.gamma, bn.beta}) < 1e-4);
}

TEST_CASE("parallel matmul matches serial bit for bit") {
  Rng rng(8);
  Tensor a({33, 17}), b({17, 21});
  for (double& v : a.data) v = rng.normal();
  for (double& v : b.data) v = rng.normal();
  Tensor c_par({33, 21}), c_ser({33, 21});
  matmul_parallel(a.data.data(), b.data.data(), c_par.data.data(), 33, 17, 21);
  matmul_serial(a.data.data(), b.data.data(), c_ser.data.data(), 33, 17, 21);
  CHECK(c_par.data == c_ser.data);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(10);
  ParamStore ps;
  ps.create("encoder.w", {4, 3}, rng);
  ps.create("decoder.w", {2, 2}, rng);
  ps.create_buffer("encoder.bn.running_mean", {3}, 0.25);
  auto before = ps.get("encoder.w")->value.data;
  ps.save_checkpoint("ckpt_test.bin", 42);

  ParamStore ps2;
  Rng rng2(99);
  ps2.create("encoder.w", {4, 3}, rng2);
  ps2.create("decoder.w", {2, 2}, rng2);
  ps2.create_buffer("encoder.bn.running_mean", {3}, 0.0);
  uint64_t step = ps2.load_checkpoint("ckpt_test.bin");
  CHECK(step == 42);
  CHECK(ps2.get("encoder.w")->value.data == before);
  CHECK(ps2.get("encoder.bn.running_mean")->value.data[0] == 0.25);
}

TEST_CASE("set_trainable freezing") {
  Rng rng(12);
  ParamStore ps;
  ps.create("encoder.w", {4, 4}, rng);
  ps.create("decoder.w", {2, 2}, rng);
  CHECK(ps.set_trainable({}) == 20);
  CHECK(ps.set_trainable({"encoder"}) == 4);
  CHECK(ps.trainable_parameters() == ps.total_parameters() - ps.parameters_under("encoder"));
  CHECK_THROWS(ps.set_trainable({"nope"}));
  // toggling never changes values
  auto v = ps.get("encoder.w")->value.data;
  ps.set_trainable({});
  CHECK(ps.get("encoder.w")->value.data == v);
}
