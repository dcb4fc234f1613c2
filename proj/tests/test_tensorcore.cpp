#include <doctest.h>

#include <cmath>
#include <functional>

#include "wsl/error.hpp"
#include "wsl/gradcheck.hpp"
#include "wsl/layers.hpp"
#include "wsl/ops.hpp"
#include "wsl/rng.hpp"

using namespace wsl;
using namespace wsl::tc;

namespace {

Tensor randn(Shape s, std::uint64_t seed, bool grad = true, double scale = 1.0) {
  auto rng = make_rng(seed, 77);
  std::vector<double> d(numel(s));
  for (double& v : d) v = scale * normal(rng);
  return Tensor::from(std::move(s), std::move(d), grad);
}

// values bounded away from zero and from each other, for relu / max kinks
Tensor spread(Shape s, std::uint64_t seed) {
  auto rng = make_rng(seed, 5);
  const std::size_t n = numel(s);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = (double(i) - double(n) / 2.0 + 0.25) * 0.37;
  for (std::size_t i = n; i > 1; --i) std::swap(d[i - 1], d[std::size_t(rng() % i)]);
  return Tensor::from(std::move(s), std::move(d), true);
}

// sum(t * r) with a fixed random r, so every output coordinate gets its own weight
Tensor probe(const Tensor& t, std::uint64_t seed = 999) {
  return sum(mul(t, randn(t.shape(), seed, false)));
}

double fd(const std::function<Tensor()>& f, const std::vector<Tensor>& params) {
  const auto r = finite_difference_check(f, params);
  if (r.max_rel_error >= 1e-4) MESSAGE(r.worst);
  return r.max_rel_error;
}

std::vector<double> vals(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void check_close(const Tensor& t, const std::vector<double>& want, double tol = 1e-12) {
  REQUIRE(t.numel() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(t[i] - want[i]) <= tol);
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("backward basics") {
  auto x = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  auto unused = Tensor::from({2}, {1.0, 1.0}, true);
  backward(sum(x));
  check_close(Tensor::from({3}, vals(x)), {1.0, -2.0, 0.5});
  for (double g : x.grad()) CHECK(g == 1.0);
  CHECK_FALSE(unused.has_grad());
  x.zero_grad();
  backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == -4.0);
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("a shared subexpression accumulates gradient from both uses") {
  auto x = Tensor::from({1}, {3.0}, true);
  auto y = square(x);
  backward(sum(add(y, y)));
  CHECK(x.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("no-grad mode records nothing") {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y;
  {
    NoGradGuard g;
    y = square(x);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(grad_enabled());
}

TEST_CASE("finite difference checker examples") {
  auto x = randn({5}, 1);
  const auto quad = [&] { return sum(mul(square(x), Tensor::from({5}, {1, 2, 3, 4, 5}))); };
  CHECK(finite_difference_check(quad, {x}).max_rel_error < 1e-8);
  const auto lin = [&] { return sum(scale(x, 3.0)); };
  CHECK(finite_difference_check(lin, {x}).max_rel_error < 1e-9);
  std::vector<std::vector<double>> wrong{std::vector<double>(5, 3.0)};
  wrong[0][2] = 3.1;
  const auto r = compare_gradients(lin, {x}, wrong);
  CHECK(r.max_rel_error > 1e-2);
  CHECK(r.worst.find("[2]") != std::string::npos);
}

TEST_CASE("elementwise arithmetic with broadcasting") {
  const auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto row = Tensor::from({3}, {10, 20, 30});
  const auto col = Tensor::from({2, 1}, {2, 4});
  check_close(add(a, row), {11, 22, 33, 14, 25, 36});
  check_close(sub(a, col), {-1, 0, 1, 0, 1, 2});
  check_close(mul(a, col), {2, 4, 6, 16, 20, 24});
  check_close(div(a, col), {0.5, 1, 1.5, 1, 1.25, 1.5});
  check_close(add(a, Tensor::zeros({3})), vals(a));
  CHECK_THROWS_AS(add(a, Tensor::zeros({2})), ValidationError);

  auto p = randn({2, 3}, 2), q = randn({3}, 3), r = randn({2, 1}, 4);
  auto pos = Tensor::from({2, 1}, {1.3, 2.1}, true);
  CHECK(fd([&] { return probe(add(mul(p, q), div(sub(p, r), pos))); }, {p, q, r, pos}) < 1e-4);
}

TEST_CASE("unary ops: fixed points, hand values, gradients") {
  const auto z = Tensor::from({3}, {-1.0, 0.0, 2.0});
  check_close(relu(z), {0, 0, 2});
  check_close(sigmoid(Tensor::scalar(0.0)), {0.5});
  check_close(tanh(Tensor::scalar(0.0)), {0.0});
  check_close(softplus(Tensor::scalar(0.0)), {std::log(2.0)});
  check_close(exp(Tensor::scalar(0.0)), {1.0});
  check_close(log(Tensor::scalar(std::exp(2.0))), {2.0});
  check_close(neg(z), {1, 0, -2});
  check_close(add_scalar(z, 1.5), {0.5, 1.5, 3.5});
  check_close(square(z), {1, 0, 4});
  check_close(sigmoid(Tensor::scalar(std::log(3.0))), {0.75});
  check_close(tanh(Tensor::scalar(std::atanh(0.3))), {0.3});
  for (double v : vals(softplus(Tensor::from({2}, {800.0, -800.0})))) CHECK(std::isfinite(v));

  auto x = spread({7}, 1);
  CHECK(fd([&] { return probe(relu(x)); }, {x}) < 1e-4);
  CHECK(fd([&] { return probe(sigmoid(x)); }, {x}) < 1e-4);
  CHECK(fd([&] { return probe(tanh(x)); }, {x}) < 1e-4);
  CHECK(fd([&] { return probe(softplus(x)); }, {x}) < 1e-4);
  CHECK(fd([&] { return probe(exp(x)); }, {x}) < 1e-4);
  CHECK(fd([&] { return probe(log(add_scalar(square(x), 0.5))); }, {x}) < 1e-4);
  CHECK(fd([&] { return probe(add_scalar(scale(neg(x), 2.5), 1.0)); }, {x}) < 1e-4);
}

TEST_CASE("reductions") {
  const auto a = Tensor::from({2, 3}, {1, 5, 3, 4, 2, 6});
  check_close(sum(a), {21});
  check_close(mean(a), {3.5});
  check_close(sum_axis(a, 0), {5, 7, 9});
  check_close(mean_axis(a, 1), {3, 4});
  check_close(max_axis(a, 1), {5, 6});
  CHECK(sum_axis(a, 1, true).shape() == Shape{2, 1});
  check_close(sum_axis(Tensor::from({1, 3}, {1, 2, 3}), 0), {1, 2, 3});

  auto x = spread({3, 4}, 2);
  CHECK(fd([&] { return probe(sum_axis(x, 0)); }, {x}) < 1e-4);
  CHECK(fd([&] { return probe(mean_axis(x, 1, true)); }, {x}) < 1e-4);
  CHECK(fd([&] { return probe(max_axis(x, 1)); }, {x}) < 1e-4);
  CHECK(fd([&] { return scale(mean(x), 3.0); }, {x}) < 1e-4);
}

TEST_CASE("shape ops") {
  const auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  check_close(transpose(a), {1, 4, 2, 5, 3, 6});
  check_close(reshape(a, {3, 2}), vals(a));
  CHECK_THROWS_AS(reshape(a, {4, 2}), ValidationError);
  const auto b = Tensor::from({2, 3, 2}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  const auto p = permute(b, {2, 0, 1});
  CHECK(p.shape() == Shape{2, 2, 3});
  check_close(p, {0, 2, 4, 6, 8, 10, 1, 3, 5, 7, 9, 11});
  check_close(permute(b, {0, 1, 2}), vals(b));
  check_close(narrow(a, 1, 1, 2), {2, 3, 5, 6});
  const auto c = concat({a, Tensor::from({2, 1}, {7, 8})}, 1);
  check_close(c, {1, 2, 3, 7, 4, 5, 6, 8});
  check_close(narrow(concat({a, a}, 0), 0, 2, 2), vals(a));
  const std::vector<std::size_t> cols{2, 0};
  check_close(gather_rows(a, cols), {3, 4});

  auto x = randn({2, 3, 2}, 3), y = randn({2, 3, 1}, 4);
  CHECK(fd([&] { return probe(permute(concat({x, y}, 2), {1, 2, 0})); }, {x, y}) < 1e-4);
  CHECK(fd([&] { return probe(narrow(reshape(x, {3, 4}), 1, 1, 2)); }, {x}) < 1e-4);
  auto m = randn({3, 4}, 5);
  const std::vector<std::size_t> pick{1, 3, 0};
  CHECK(fd([&] { return probe(transpose(m)); }, {m}) < 1e-4);
  CHECK(fd([&] { return probe(gather_rows(m, pick)); }, {m}) < 1e-4);
}

TEST_CASE("matmul and linear") {
  const auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
  check_close(matmul(a, b), {19, 22, 43, 50});
  check_close(matmul(Tensor::from({2, 2}, {1, 0, 0, 1}), a), vals(a));
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), ValidationError);
  // x [1,2] · W^T + b, W [3,2]
  const auto w = Tensor::from({3, 2}, {1, 0, 0, 1, 1, 1});
  check_close(linear(Tensor::from({1, 2}, {2, 5}), w, Tensor::from({3}, {0.5, 0, -1})), {2.5, 5, 6});
  check_close(linear(Tensor::from({1, 2}, {2, 5}), w, Tensor()), {2, 5, 7});

  auto p = randn({3, 4}, 6), q = randn({4, 2}, 7), wt = randn({5, 4}, 8), bias = randn({5}, 9);
  CHECK(fd([&] { return probe(matmul(p, q)); }, {p, q}) < 1e-4);
  CHECK(fd([&] { return probe(linear(p, wt, bias)); }, {p, wt, bias}) < 1e-4);
}

TEST_CASE("softmax and log_softmax") {
  const auto s = softmax(Tensor::from({1, 3}, {1, 2, 3}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  check_close(s, {std::exp(1.0) / z, std::exp(2.0) / z, std::exp(3.0) / z});
  check_close(softmax(Tensor::from({1, 4}, {0, 0, 0, 0})), {0.25, 0.25, 0.25, 0.25});
  check_close(log_softmax(Tensor::from({1, 2}, {0, 0})), {-std::log(2.0), -std::log(2.0)});
  const auto big = softmax(Tensor::from({1, 2}, {1000.0, 0.0}));
  CHECK(big[0] == 1.0);

  for (int trial = 0; trial < 20; ++trial) {
    const auto x = randn({4, 6}, 100 + trial, false, 5.0);
    const auto p = softmax(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double t = 0.0;
      for (std::size_t c = 0; c < 6; ++c) t += p[r * 6 + c];
      CHECK(std::abs(t - 1.0) < 1e-9);
    }
  }
  auto x = randn({3, 4}, 12);
  CHECK(fd([&] { return probe(softmax(x)); }, {x}) < 1e-4);
  CHECK(fd([&] { return probe(log_softmax(x)); }, {x}) < 1e-4);
}

TEST_CASE("layer norm") {
  const auto one = Tensor::full({3}, 1.0), zero = Tensor::zeros({3});
  const double r = std::sqrt(1.5);
  check_close(layer_norm(Tensor::from({1, 3}, {1, 2, 3}), one, zero, 1, 0.0), {-r, 0, r}, 1e-12);
  check_close(layer_norm(Tensor::from({1, 3}, {1, 2, 3}), Tensor::full({3}, 2.0), Tensor::full({3}, 1.0), 1, 0.0),
              {1 - 2 * r, 1, 1 + 2 * r}, 1e-12);
  // axis 0 normalizes columns
  const auto col = layer_norm(Tensor::from({2, 2}, {1, 10, 3, 30}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 0, 0.0);
  check_close(col, {-1, -1, 1, 1});

  for (int trial = 0; trial < 10; ++trial) {
    const auto x = randn({4, 16}, 200 + trial, false, 10.0);
    const auto y = layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}), 1);
    for (std::size_t row = 0; row < 4; ++row) {
      double m = 0, v = 0;
      for (std::size_t c = 0; c < 16; ++c) m += y[row * 16 + c];
      m /= 16;
      for (std::size_t c = 0; c < 16; ++c) v += (y[row * 16 + c] - m) * (y[row * 16 + c] - m);
      CHECK(std::abs(m) < 1e-6);
      CHECK(std::abs(v / 16 - 1.0) < 1e-6);
    }
  }
  auto x = randn({3, 5}, 13), g = randn({5}, 14), b = randn({5}, 15);
  CHECK(fd([&] { return probe(layer_norm(x, g, b, 1)); }, {x, g, b}) < 1e-4);
  auto x3 = randn({2, 3, 4}, 16), g3 = randn({3}, 17), b3 = randn({3}, 18);
  CHECK(fd([&] { return probe(layer_norm(x3, g3, b3, 1)); }, {x3, g3, b3}) < 1e-4);
}

TEST_CASE("batch norm in training and eval mode") {
  BatchNormState st{Tensor::zeros({1}), Tensor::full({1}, 1.0)};
  const auto y = batch_norm(Tensor::from({1, 4}, {1, 2, 3, 4}), Tensor::full({1}, 1.0), Tensor::zeros({1}), st, true);
  const double is = 1.0 / std::sqrt(1.25 + 1e-5);
  check_close(y, {-1.5 * is, -0.5 * is, 0.5 * is, 1.5 * is});
  CHECK(st.running_mean[0] == doctest::Approx(0.25));
  CHECK(st.running_var[0] == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));

  BatchNormState frozen{Tensor::from({2}, {1.0, -2.0}), Tensor::from({2}, {4.0, 0.25})};
  const auto g = Tensor::from({2}, {2.0, 1.0}), b = Tensor::from({2}, {0.5, 0.0});
  const auto x = randn({2, 3, 3}, 20, false);
  const auto e1 = batch_norm(x, g, b, frozen, false);
  const auto e2 = batch_norm(x, g, b, frozen, false);
  CHECK(vals(e1) == vals(e2));
  CHECK(frozen.running_mean[0] == 1.0);
  for (std::size_t i = 0; i < 18; ++i) {
    const std::size_t c = i / 9;
    const double m = c == 0 ? 1.0 : -2.0, v = c == 0 ? 4.0 : 0.25;
    CHECK(e1[i] == doctest::Approx((x[i] - m) / std::sqrt(v + 1e-5) * g[c] + b[c]).epsilon(1e-12));
  }

  auto xt = randn({2, 5}, 21), gt = randn({2}, 22), bt = randn({2}, 23);
  BatchNormState s2{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
  CHECK(fd([&] { return probe(batch_norm(xt, gt, bt, s2, true)); }, {xt, gt, bt}) < 1e-4);
  CHECK(fd([&] { return probe(batch_norm(xt, gt, bt, frozen, false)); }, {xt, gt, bt}) < 1e-4);
}

TEST_CASE("pooling and upsampling") {
  const auto v = Tensor::from({1, 4}, {1, 3, 2, 5});
  check_close(max_pool1d(v, 2, 2), {3, 5});
  check_close(avg_pool1d(v, 2, 2), {2, 3.5});
  check_close(max_pool1d(v, 1, 1), vals(v));
  check_close(adaptive_avg_pool1d(v, 1), {2.75});
  check_close(adaptive_avg_pool1d(v, 4), vals(v));
  check_close(adaptive_avg_pool1d(Tensor::from({1, 3}, {1, 2, 6}), 2), {1.5, 4});

  const auto m = Tensor::from({1, 4, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  check_close(max_pool2d(m, 2, 2), {6, 8, 14, 16});
  check_close(avg_pool2d(m, 2, 2), {3.5, 5.5, 11.5, 13.5});
  check_close(adaptive_avg_pool2d(m, 1, 1), {8.5});
  check_close(adaptive_avg_pool2d(m, 4, 4), vals(m));
  check_close(adaptive_avg_pool2d(m, 2, 1), {4.5, 12.5});
  check_close(upsample_nearest2d(Tensor::from({1, 1, 2}, {1, 2}), 2), {1, 1, 2, 2, 1, 1, 2, 2});
  check_close(avg_pool2d(upsample_nearest2d(m, 2), 2, 2), vals(m));
  CHECK_THROWS_AS(adaptive_avg_pool2d(m, 5, 1), ValidationError);

  auto x1 = spread({2, 6}, 30);
  CHECK(fd([&] { return probe(max_pool1d(x1, 2, 2)); }, {x1}) < 1e-4);
  CHECK(fd([&] { return probe(avg_pool1d(x1, 3, 1)); }, {x1}) < 1e-4);
  CHECK(fd([&] { return probe(adaptive_avg_pool1d(x1, 4)); }, {x1}) < 1e-4);
  auto x2 = spread({2, 4, 6}, 31);
  CHECK(fd([&] { return probe(max_pool2d(x2, 2, 2)); }, {x2}) < 1e-4);
  CHECK(fd([&] { return probe(avg_pool2d(x2, 2, 2)); }, {x2}) < 1e-4);
  CHECK(fd([&] { return probe(adaptive_avg_pool2d(x2, 3, 4)); }, {x2}) < 1e-4);
  CHECK(fd([&] { return probe(upsample_nearest2d(x2, 2)); }, {x2}) < 1e-4);
}

TEST_CASE("conv1d") {
  const auto x = Tensor::from({1, 3}, {1, 2, 3});
  check_close(conv1d(x, Tensor::from({1, 1, 3}, {1, 0, -1}), Tensor(), 1, 0), {-2});
  check_close(conv1d(x, Tensor::from({1, 1, 1}, {1}), Tensor(), 1, 0), {1, 2, 3});
  check_close(conv1d(x, Tensor::from({1, 1, 2}, {1, 1}), Tensor::from({1}, {0.5}), 1, 1), {1.5, 3.5, 5.5, 3.5});
  const auto y = conv1d(Tensor::zeros({2, 11}), Tensor::zeros({3, 2, 4}), Tensor(), 3, 2);
  CHECK(y.shape() == Shape{3, (11 + 4 - 4) / 3 + 1});
  CHECK_THROWS_AS(conv1d(x, Tensor::zeros({1, 1, 5}), Tensor(), 1, 0), ValidationError);
  CHECK_THROWS_AS(conv1d(x, Tensor::zeros({1, 2, 1}), Tensor(), 1, 0), ValidationError);

  // brute-force sliding window
  const auto a = randn({2, 9}, 40, false), k = randn({3, 2, 3}, 41, false), b = randn({3}, 42, false);
  const auto out = conv1d(a, k, b, 2, 1);
  const std::size_t olen = (9 + 2 - 3) / 2 + 1;
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t t = 0; t < olen; ++t) {
      double s = b[o];
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t j = 0; j < 3; ++j) {
          const long pos = long(t * 2 + j) - 1;
          if (pos >= 0 && pos < 9) s += k[(o * 2 + c) * 3 + j] * a[c * 9 + std::size_t(pos)];
        }
      CHECK(out[o * olen + t] == doctest::Approx(s).epsilon(1e-12));
    }

  auto xp = randn({2, 9}, 43), kp = randn({3, 2, 3}, 44), bp = randn({3}, 45);
  CHECK(fd([&] { return probe(conv1d(xp, kp, bp, 2, 1)); }, {xp, kp, bp}) < 1e-4);
}

TEST_CASE("conv2d and reverse 5x5 conv") {
  const auto x = Tensor::from({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  check_close(conv2d(x, Tensor::from({1, 1, 2, 2}, {1, 0, 0, 1}), Tensor(), 1, 0), {6, 8, 12, 14});
  check_close(conv2d(x, Tensor::from({1, 1, 1, 1}, {1}), Tensor(), 1, 0), vals(x));
  check_close(conv2d(x, Tensor::from({1, 1, 2, 2}, {1, 1, 1, 1}), Tensor(), 2, 1), {1, 5, 11, 28});

  std::vector<double> delta(25, 0.0);
  delta[12] = 1.0;
  const auto img = randn({1, 4, 5}, 50, false);
  check_close(reverse_conv2d_5x5(img, Tensor::from({1, 1, 5, 5}, delta), Tensor()), vals(img));
  std::vector<double> sym(25);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) sym[i * 5 + j] = 1.0 / (1 + std::abs(i - 2) + 2 * std::abs(j - 2));
  const auto ks = Tensor::from({1, 1, 5, 5}, sym);
  check_close(reverse_conv2d_5x5(img, ks, Tensor()), vals(conv2d(img, ks, Tensor(), 1, 2)), 1e-12);
  // an asymmetric kernel: reverse conv equals conv2d with the flipped kernel
  const auto ka = randn({2, 1, 5, 5}, 51, false);
  std::vector<double> flipped(50);
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) flipped[o * 25 + i * 5 + j] = ka[o * 25 + (4 - i) * 5 + (4 - j)];
  check_close(reverse_conv2d_5x5(img, ka, Tensor()), vals(conv2d(img, Tensor::from({2, 1, 5, 5}, flipped), Tensor(), 1, 2)),
              1e-12);

  auto xp = randn({2, 4, 5}, 52), kp = randn({3, 2, 3, 3}, 53), bp = randn({3}, 54);
  CHECK(fd([&] { return probe(conv2d(xp, kp, bp, 1, 1)); }, {xp, kp, bp}) < 1e-4);
  CHECK(fd([&] { return probe(conv2d(xp, kp, bp, 2, 0)); }, {xp, kp, bp}) < 1e-4);
  auto kr = randn({2, 2, 5, 5}, 55), br = randn({2}, 56);
  CHECK(fd([&] { return probe(reverse_conv2d_5x5(xp, kr, br)); }, {xp, kr, br}) < 1e-4);
}

TEST_CASE("selective scan matches a naive recurrence") {
  const std::size_t T = 4, D = 3, N = 2;
  auto x = randn({T, D}, 60), delta = add_scalar(square(randn({T, D}, 61, false)), 0.1).detach();
  delta.set_requires_grad(true);
  auto A = neg(add_scalar(square(randn({D, N}, 62, false)), 0.2)).detach();
  A.set_requires_grad(true);
  auto B = randn({T, N}, 63), C = randn({T, N}, 64), skip = randn({D}, 65);
  const auto y = selective_scan(x, delta, A, B, C, skip);
  std::vector<double> h(D * N, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      double out = skip[d] * x[t * D + d];
      for (std::size_t n = 0; n < N; ++n) {
        double& s = h[d * N + n];
        s = std::exp(delta[t * D + d] * A[d * N + n]) * s + delta[t * D + d] * B[t * N + n] * x[t * D + d];
        out += C[t * N + n] * s;
      }
      CHECK(y[t * D + d] == doctest::Approx(out).epsilon(1e-12));
    }
  CHECK(fd([&] { return probe(selective_scan(x, delta, A, B, C, skip)); }, {x, delta, A, B, C, skip}) < 1e-4);
}

TEST_CASE("gru scan matches the canonical cell") {
  const std::size_t T = 3, H = 2;
  auto proj = randn({T, 3 * H}, 70), w = randn({3 * H, H}, 71, true, 0.5), b = randn({3 * H}, 72);
  for (bool rev : {false, true}) {
    const auto out = gru_scan(proj, w, b, rev);
    std::vector<double> h(H, 0.0);
    for (std::size_t s = 0; s < T; ++s) {
      const std::size_t t = rev ? T - 1 - s : s;
      std::vector<double> hh(3 * H);
      for (std::size_t r = 0; r < 3 * H; ++r) {
        hh[r] = b[r];
        for (std::size_t c = 0; c < H; ++c) hh[r] += w[r * H + c] * h[c];
      }
      std::vector<double> next(H);
      for (std::size_t j = 0; j < H; ++j) {
        const double rg = sigm(proj[t * 3 * H + j] + hh[j]);
        const double zg = sigm(proj[t * 3 * H + H + j] + hh[H + j]);
        const double ng = std::tanh(proj[t * 3 * H + 2 * H + j] + rg * hh[2 * H + j]);
        next[j] = (1 - zg) * ng + zg * h[j];
      }
      h = next;
      for (std::size_t j = 0; j < H; ++j) CHECK(out[t * H + j] == doctest::Approx(h[j]).epsilon(1e-12));
    }
    CHECK(fd([&] { return probe(gru_scan(proj, w, b, rev)); }, {proj, w, b}) < 1e-4);
  }
}

TEST_CASE("bidirectional GRU") {
  ParameterSet ps(3);
  auto gru = BiGru::make(ps, "g", 3, 4, 2);
  CHECK(gru(randn({5, 3}, 80, false)).shape() == Shape{5, 8});
  CHECK_THROWS_AS(BiGru::make(ps, "bad", 3, 0, 1), ValidationError);

  for (auto p : ps.params())
    for (double& v : p.tensor.mutable_data()) v = 0.0;
  for (double v : vals(gru(randn({5, 3}, 81, false)))) CHECK(v == 0.0);

  ParameterSet ps1(4);
  auto g1 = BiGru::make(ps1, "g", 3, 4, 4);
  for (std::size_t l = 0; l < 4; ++l) {
    auto& f = g1.forward_dirs[l];
    auto& b = g1.backward_dirs[l];
    const std::vector<Tensor> src{f.w_ih, f.w_hh, f.b_ih, f.b_hh};
    std::vector<Tensor> dst{b.w_ih, b.w_hh, b.b_ih, b.b_hh};
    for (std::size_t i = 0; i < 4; ++i) std::copy(src[i].data().begin(), src[i].data().end(), dst[i].mutable_data().begin());
  }
  const auto single = g1(randn({1, 3}, 82, false));
  for (std::size_t j = 0; j < 4; ++j) CHECK(single[j] == single[4 + j]);

  ParameterSet ps2(5);
  auto g2 = BiGru::make(ps2, "g", 2, 2, 2);
  auto x = randn({3, 2}, 83);
  std::vector<Tensor> params{x};
  for (auto& p : ps2.params()) params.push_back(p.tensor);
  CHECK(fd([&] { return probe(g2(x)); }, params) < 1e-4);
}

TEST_CASE("multi-head attention") {
  ParameterSet ps(9);
  auto mha = MultiHeadAttention::make(ps, "a", 4, 2);
  CHECK_THROWS_AS(MultiHeadAttention::make(ps, "bad", 5, 2), ValidationError);

  const auto one = randn({1, 4}, 90, false);
  check_close(mha(one), vals(mha.out(mha.v(one))), 1e-12);

  const auto x = randn({5, 4}, 91, false);
  std::vector<Tensor> probs;
  mha(x, &probs);
  REQUIRE(probs.size() == 2);
  for (const auto& p : probs)
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        s += p[r * 5 + c];
        CHECK(p[r * 5 + c] > 0.0);
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }

  for (auto t : {mha.q.weight, mha.q.bias, mha.k.weight, mha.k.bias})
    for (double& v : t.mutable_data()) v = 0.0;
  const auto vx = mha.v(x);
  const auto expect = mha.out(mean_axis(vx, 0, true));
  const auto got = mha(x);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(got[r * 4 + c] == doctest::Approx(expect[c]).epsilon(1e-12));

  ParameterSet ps2(10);
  auto m2 = MultiHeadAttention::make(ps2, "a", 4, 2);
  auto xx = randn({3, 4}, 92);
  std::vector<Tensor> params{xx};
  for (auto& p : ps2.params()) params.push_back(p.tensor);
  CHECK(fd([&] { return probe(m2(xx)); }, params) < 1e-4);
}

TEST_CASE("parameter init is seeded, named and fan-in bounded") {
  ParameterSet a(1), b(1), c(2);
  const auto wa = a.weight("w", {50, 8}, 8);
  b.weight("other", {3}, 3);
  const auto wb = b.weight("w", {50, 8}, 8);
  const auto wc = c.weight("w", {50, 8}, 8);
  CHECK(vals(wa) == vals(wb));
  CHECK(vals(wa) != vals(wc));
  for (double v : wa.data()) CHECK(std::abs(v) <= std::sqrt(1.0 / 8.0));
  for (double v : a.constant("bias", {4}, 0.0).data()) CHECK(v == 0.0);
  CHECK(a.scalar_count() == 404);
  CHECK_THROWS_AS(a.weight("w", {2}, 2), ValidationError);
}
