// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "mofe/ops.hpp"

using namespace mofe;
using mofe::testing::gradcheck;
using mofe::testing::random_tensor;

TEST_CASE("matmul identity and hand arithmetic") {
  auto I = Tensor<float>::from_data({2, 2}, {1, 0, 0, 1});
  auto B = Tensor<float>::from_data({2, 2}, {3, 4, 5, 6});
  auto out = matmul(I, B);
  CHECK(out.data() == std::vector<float>{3, 4, 5, 6});

  auto a = Tensor<float>::from_data({1, 2}, {1, 2});
  auto b = Tensor<float>::from_data({2, 1}, {3, 4});
  CHECK(matmul(a, b).item() == doctest::Approx(11.0));

  auto zero = Tensor<float>::zeros({2, 2});
  auto annihilated = matmul(zero, B);
  for (float v : annihilated.data()) CHECK(v == 0.0f);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  auto symmetric = softmax(Tensor<float>::from_data({2}, {0, 0}));
  CHECK(symmetric.data()[0] == doctest::Approx(0.5));
  CHECK(symmetric.data()[1] == doctest::Approx(0.5));

  auto two = softmax(Tensor<float>::from_data({2}, {0.5f, 0.3f}));
  CHECK(std::abs(two.data()[0] - 0.5498) < 1e-4);
  CHECK(std::abs(two.data()[1] - 0.4502) < 1e-4);

  auto big = softmax(Tensor<float>::from_data({2}, {1000.0f, 0.0f}));
  CHECK(big.data()[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(big.data()[1] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(std::isfinite(big.data()[0]));
}

TEST_CASE("softmax outputs positive and normalized") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor<double>(rng, {5, 9}, 3.0);
    auto y = softmax(x, -1);
    for (std::size_t r = 0; r < 5; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 9; ++c) {
        double v = y.data()[r * 9 + c];
        CHECK(v > 0.0);
        total += v;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("softmax rejects NaN input") {
  auto x = Tensor<float>::from_data({2}, {std::numeric_limits<float>::quiet_NaN(), 0.0f});
  CHECK_THROWS_AS(softmax(x), ContractError);
}

TEST_CASE("backward fills ones for sum") {
  auto w = Tensor<double>::from_data({2, 3}, {1, -2, 0.5, 3, 4, -1}, true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    backward(sum(w));
  }
  for (double g : w.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("backward of sum of squares") {
  auto w = Tensor<double>::from_data({2}, {1, 2}, true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    backward(sum(mul(w, w)));
  }
  CHECK(w.grad()[0] == doctest::Approx(2.0));
  CHECK(w.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("gradients accumulate across both uses of a tensor") {
  auto w = Tensor<double>::from_data({3}, {0.5, -1, 2}, true);
  auto c = Tensor<double>::from_data({3}, {3, 3, 3});
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    // loss = sum(w*w) + sum(3*w): dw = 2w + 3
    backward(add(sum(mul(w, w)), sum(mul(w, c))));
  }
  CHECK(w.grad()[0] == doctest::Approx(2 * 0.5 + 3));
  CHECK(w.grad()[1] == doctest::Approx(2 * -1 + 3));
  CHECK(w.grad()[2] == doctest::Approx(2 * 2 + 3));
}

TEST_CASE("backward contract errors") {
  auto w = Tensor<double>::from_data({2}, {1, 2}, true);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto y = mul(w, w);
    CHECK_THROWS_AS(backward(y), ContractError);  // non-scalar loss
    Tape<double> empty;
    TapeScope<double> inner(empty);
    CHECK_THROWS_AS(backward(Tensor<double>::scalar(1.0)), ContractError);  // empty tape
  }
  CHECK_THROWS_AS(backward(Tensor<double>::scalar(1.0)), ContractError);  // no active tape
}

TEST_CASE("no recording without an active tape") {
  auto w = Tensor<double>::from_data({2}, {1, 2}, true);
  auto y = mul(w, w);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("every differentiable op matches finite differences in float64") {
  const double worst = mofe::testing::check_all_op_gradients(12345);
  CHECK(worst < 1e-5);
}

TEST_CASE("composite of matmul softmax rms_norm silu cross_entropy matches finite differences") {
  Rng rng(99);
  auto a = random_tensor<double>(rng, {3, 4});
  auto b = random_tensor<double>(rng, {4, 6});
  auto g = random_tensor<double>(rng, {6});
  std::vector<int> targets{2, 5, 0};
  std::vector<std::uint8_t> mask{1, 1, 1};
  const double err = gradcheck<double>({&a, &b, &g}, [&] {
    auto h = silu(matmul(a, b));
    auto n = rms_norm(h, g, 1e-5);
    auto s = softmax(n, -1);
    return cross_entropy_with_mask(s, targets, mask);
  });
  CHECK(err < 1e-5);
}

TEST_CASE("ops are deterministic across repeated evaluation") {
  Rng rng(3);
  auto a = random_tensor<float>(rng, {17, 23});
  auto b = random_tensor<float>(rng, {23, 11});
  auto first = matmul(a, b);
  auto second = matmul(a, b);
  CHECK(first.data() == second.data());
  auto s1 = softmax(first, -1);
  auto s2 = softmax(second, -1);
  CHECK(s1.data() == s2.data());
}

TEST_CASE("cross entropy with empty effective targets is an error") {
  auto logits = Tensor<float>::zeros({3, 5});
  std::vector<int> targets{0, 1, 2};
  std::vector<std::uint8_t> mask{0, 0, 0};
  CHECK_THROWS_AS(cross_entropy_with_mask(logits, targets, mask), ContractError);
}

TEST_CASE("embedding lookup validates ids") {
  auto table = Tensor<float>::zeros({4, 2});
  CHECK_THROWS_AS(embedding_lookup(table, {0, 4}), ContractError);
  CHECK_THROWS_AS(embedding_lookup(table, {-1}), ContractError);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor<float>::from_data({2, 2}, {1, 2, 3}), ShapeError);
  auto t = Tensor<float>::zeros({2, 2}, true);
  CHECK(t.requires_grad());
  CHECK_FALSE(t.has_grad());
  t.grad_buffer();
  CHECK(t.has_grad());
  CHECK(t.grad().size() == t.numel());
}
