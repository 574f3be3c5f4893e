#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <memory>

#include "doctest.h"
#include "idfm/adam.hpp"
#include "idfm/ops.hpp"
#include "idfm/rng.hpp"
#include "support/finite_diff.hpp"
#include "support/test_util.hpp"

using namespace idfm;
using testutil::max_grad_rel_error;
using testutil::random_param;
using testutil::random_tensor;

namespace {

std::shared_ptr<AttnMask> random_mask(Rng& rng, int n) {
  auto mask = std::make_shared<AttnMask>(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) mask->set(i, j, rng.uniform() < 0.6);
    mask->set(i, i, true);  // keep every row viable
  }
  return mask;
}

constexpr int kFdTrials = 20;
constexpr double kFdTol = 1e-6;

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor identity = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
  const Tensor prod = matmul(identity, b);
  for (std::size_t i = 0; i < 4; ++i) CHECK(prod.data()[i] == b.data()[i]);

  const Tensor zero = Tensor::zeros({3, 2});
  const Tensor z = matmul(zero, b);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z.data()[i] == 0.0);

  const Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const Tensor c = matmul(a, b);
  CHECK(c.data()[0] == 19.0);
  CHECK(c.data()[1] == 22.0);
  CHECK(c.data()[2] == 43.0);
  CHECK(c.data()[3] == 50.0);

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), std::invalid_argument);
}

TEST_CASE("masked softmax examples") {
  // Single allowed key per row: weight 1 on the diagonal.
  Rng rng(1);
  auto diag = std::make_shared<AttnMask>(4);
  for (int i = 0; i < 4; ++i) diag->set(i, i, true);
  const Tensor probs = masked_softmax(random_tensor(rng, {4, 4}), diag);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(probs.at(i, j) == (i == j ? 1.0 : 0.0));

  // Uniform logits, all columns allowed: every weight 1/k.
  auto full = std::make_shared<AttnMask>(5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) full->set(i, j, true);
  const Tensor uniform = masked_softmax(Tensor::full({5, 5}, 0.7), full);
  for (std::size_t i = 0; i < uniform.size(); ++i) CHECK(uniform.data()[i] == doctest::Approx(0.2).epsilon(1e-12));

  // Logits [1,2,3] with the middle column masked: the two-term softmax of
  // (1,3), i.e. (1/(1+e^2), 0, e^2/(1+e^2)).
  auto mask = std::make_shared<AttnMask>(3);
  for (int i = 0; i < 3; ++i) {
    mask->set(i, 0, true);
    mask->set(i, 2, true);
  }
  Tensor logits = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) {
    logits.data()[3 * i + 0] = 1.0;
    logits.data()[3 * i + 1] = 2.0;
    logits.data()[3 * i + 2] = 3.0;
  }
  const Tensor out = masked_softmax(logits, mask);
  const double lo = 1.0 / (1.0 + std::exp(2.0));
  const double hi = std::exp(2.0) / (1.0 + std::exp(2.0));
  for (int i = 0; i < 3; ++i) {
    CHECK(out.at(i, 0) == doctest::Approx(lo).epsilon(1e-9));
    CHECK(out.at(i, 0) == doctest::Approx(0.119203).epsilon(1e-5));
    CHECK(out.at(i, 1) == 0.0);
    CHECK(out.at(i, 2) == doctest::Approx(hi).epsilon(1e-9));
    CHECK(out.at(i, 2) == doctest::Approx(0.880797).epsilon(1e-5));
  }
}

TEST_CASE("masked softmax rows sum to one and masked entries are exact zeros") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = rng.uniform_int(2, 12);
    auto mask = random_mask(rng, n);
    const Tensor out = masked_softmax(random_tensor(rng, {n, n}, 3.0), mask);
    for (int i = 0; i < n; ++i) {
      double row_sum = 0.0;
      for (int j = 0; j < n; ++j) {
        if (!mask->at(i, j)) CHECK(out.at(i, j) == 0.0);
        row_sum += out.at(i, j);
      }
      CHECK(std::abs(row_sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("masked softmax rejects a fully masked row") {
  auto mask = std::make_shared<AttnMask>(2);
  mask->set(0, 0, true);
  CHECK_THROWS_AS(masked_softmax(Tensor::zeros({2, 2}), mask), std::domain_error);
}

TEST_CASE("backward examples") {
  // loss = sum x_i^2 -> grad 2x.
  Rng rng(3);
  Tensor x = random_param(rng, {3, 4});
  {
    Tape tape;
    Tensor loss = sum_sq(x);
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-15));

  // Disconnected parameter gets zero gradient.
  Tensor used = random_param(rng, {2, 2});
  Tensor unused = random_param(rng, {2, 2});
  {
    Tape tape;
    Tensor loss = sum_sq(scale(used, 1.5));
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < unused.size(); ++i) CHECK(unused.grad()[i] == 0.0);

  CHECK_THROWS(Tape{}.backward(Tensor::zeros({2, 2})));
}

TEST_CASE("finite differences validate every primitive") {
  // A random linear functional of each op output exposes the full Jacobian.
  for (int trial = 0; trial < kFdTrials; ++trial) {
    Rng point_rng(derive_seed(1234, 77, static_cast<std::uint64_t>(trial)));

    {
      Tensor a = random_param(point_rng, {3, 4}), b = random_param(point_rng, {3, 4});
      Tensor w = random_tensor(point_rng, {3, 4});
      std::vector<Tensor> params = {a, b};
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(add(a, b), w)); }) < kFdTol);
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(sub(a, b), w)); }) < kFdTol);
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(mul(a, b), w)); }) < kFdTol);
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(scale(a, -1.7), w)); }) < kFdTol);
    }
    {
      Tensor a = random_param(point_rng, {3, 4}), b = random_param(point_rng, {4, 2});
      Tensor w = random_tensor(point_rng, {3, 2});
      std::vector<Tensor> params = {a, b};
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(matmul(a, b), w)); }) < kFdTol);
    }
    {
      Tensor a = random_param(point_rng, {3, 4}), b = random_param(point_rng, {5, 4});
      Tensor w = random_tensor(point_rng, {3, 5});
      std::vector<Tensor> params = {a, b};
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(matmul_nt(a, b, 0.37), w)); }) < kFdTol);
    }
    {
      Tensor logits = random_param(point_rng, {4, 4});
      Tensor w = random_tensor(point_rng, {4, 4});
      std::vector<Tensor> params = {logits};
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(softmax_rows(logits), w)); }) < kFdTol);
      auto mask = random_mask(point_rng, 4);
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(masked_softmax(logits, mask), w)); }) < kFdTol);
    }
    {
      Tensor x = random_param(point_rng, {3, 6});
      Tensor w = random_tensor(point_rng, {3, 6});
      std::vector<Tensor> params = {x};
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(layer_norm(x), w)); }) < kFdTol);
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(gelu(x), w)); }) < kFdTol);
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(silu(x), w)); }) < kFdTol);
      CHECK(max_grad_rel_error(params, [&] { return sum_sq(x); }) < kFdTol);
    }
    {
      Tensor x = random_param(point_rng, {4, 5});
      Tensor v = random_param(point_rng, {1, 5});
      Tensor w = random_tensor(point_rng, {4, 5});
      std::vector<Tensor> params = {x, v};
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(add_rowvec(x, v), w)); }) < kFdTol);
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(mul_rowvec(x, v), w)); }) < kFdTol);
    }
    {
      Tensor table = random_param(point_rng, {6, 3});
      const std::vector<int> ids = {1, 4, 1, 0};
      Tensor w = random_tensor(point_rng, {4, 3});
      std::vector<Tensor> params = {table};
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(rows_gather(table, ids), w)); }) < kFdTol);
    }
    {
      Tensor a = random_param(point_rng, {2, 3}), b = random_param(point_rng, {3, 3});
      Tensor w = random_tensor(point_rng, {5, 3});
      std::vector<Tensor> params = {a, b};
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(concat_rows({a, b}), w)); }) < kFdTol);
      Tensor ws = random_tensor(point_rng, {2, 3});
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(slice_rows(concat_rows({a, b}), 1, 2), ws)); }) <
            kFdTol);
    }
    {
      Tensor a = random_param(point_rng, {3, 2}), b = random_param(point_rng, {3, 4});
      Tensor w = random_tensor(point_rng, {3, 6});
      std::vector<Tensor> params = {a, b};
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(concat_cols({a, b}), w)); }) < kFdTol);
      Tensor ws = random_tensor(point_rng, {3, 3});
      CHECK(max_grad_rel_error(params, [&] { return sum(mul(slice_cols(concat_cols({a, b}), 2, 3), ws)); }) <
            kFdTol);
    }
  }
}

TEST_CASE("forward ops are pure and bitwise repeatable") {
  Rng rng(5);
  const Tensor a = random_tensor(rng, {7, 9});
  const Tensor b = random_tensor(rng, {9, 4});
  const Tensor c1 = matmul(a, b);
  const Tensor c2 = matmul(a, b);
  CHECK(testutil::bitwise_equal(c1, c2));
  const Tensor s1 = softmax_rows(matmul_nt(c1, c1, 0.5));
  const Tensor s2 = softmax_rows(matmul_nt(c2, c2, 0.5));
  CHECK(testutil::bitwise_equal(s1, s2));
}

TEST_CASE("non-finite op results are an error") {
  Tensor big = Tensor::full({2, 2}, 1e308);
  CHECK_THROWS_AS(add(big, big), std::domain_error);
  CHECK_THROWS_AS(mul(big, big), std::domain_error);
}

TEST_CASE("adam examples") {
  AdamConfig config;  // lr 1e-3, betas 0.9/0.999, eps 1e-8

  // Zero gradient on a fresh state leaves parameters unchanged.
  {
    std::vector<Tensor> params = {Tensor::param({3}, {1.0, -2.0, 0.5})};
    const std::vector<double> before(params[0].data(), params[0].data() + 3);
    AdamState state(config, params);
    state.step(params);
    for (int i = 0; i < 3; ++i) CHECK(params[0].data()[i] == before[i]);
    CHECK(state.step_count() == 1);
  }

  // Constant gradient 1 at step 1: the bias-corrected update is
  // lr * 1 / (1 + eps), independent of the parameter value.
  {
    std::vector<Tensor> params = {Tensor::param({2}, {0.25, -1.5})};
    params[0].grad()[0] = 1.0;
    params[0].grad()[1] = 1.0;
    AdamState state(config, params);
    state.step(params);
    const double expected_delta = config.lr / (1.0 + config.epsilon);
    CHECK(params[0].data()[0] == doctest::Approx(0.25 - expected_delta).epsilon(1e-15));
    CHECK(params[0].data()[1] == doctest::Approx(-1.5 - expected_delta).epsilon(1e-15));
  }

  // Same seed, same trajectory: bitwise-identical parameters.
  {
    auto run = [&](std::uint64_t seed) {
      Rng rng(seed);
      std::vector<Tensor> params = {random_param(rng, {4, 4})};
      AdamState state(config, params);
      for (int step = 0; step < 25; ++step) {
        params[0].zero_grad();
        for (std::size_t i = 0; i < params[0].size(); ++i)
          params[0].grad()[i] = std::sin(0.1 * step + 0.3 * static_cast<double>(i)) * params[0].data()[i];
        state.step(params);
      }
      return params[0];
    };
    CHECK(testutil::bitwise_equal(run(99), run(99)));
  }

  // Shape mismatch is an error.
  {
    std::vector<Tensor> params = {Tensor::param({3}, {0, 0, 0})};
    AdamState state(config, params);
    std::vector<Tensor> other = {Tensor::param({4}, {0, 0, 0, 0})};
    CHECK_THROWS(state.step(other));
  }
}
