#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "eanet/gradcheck.hpp"
#include "eanet/nn.hpp"
#include "eanet/ops.hpp"
#include "eanet/optim.hpp"

using namespace eanet;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, bool grad = false) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

void check_close(const Tensor& a, const Tensor& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol);
}

}  // namespace

TEST_CASE("tensor construction validates length") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1, 2, 3}), DimensionError);
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 6);
}

TEST_CASE("matmul") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(rng, {2, 3});
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  check_close(ops::matmul(eye, x), x, 0.0);
  CHECK(ops::matmul(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 1, {3, 4})).item() == 11.0);
  const Tensor z = ops::matmul(Tensor::zeros({2, 3}), random_tensor(rng, {3, 4}));
  check_close(z, Tensor::zeros({2, 4}), 0.0);
  CHECK_THROWS_AS(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("softmax") {
  const Tensor a = ops::softmax(Tensor::vector({0, 0}), 0);
  CHECK(a[0] == 0.5);
  CHECK(a[1] == 0.5);
  const Tensor b = ops::softmax(Tensor::vector({std::log(2.0), 0}), 0);
  CHECK(b[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(b[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  const Tensor c = ops::softmax(Tensor::vector({1000, 0}), 0);
  CHECK(std::isfinite(c[0]));
  CHECK(c[0] == doctest::Approx(1.0));
  CHECK(c[1] == doctest::Approx(0.0));

  std::mt19937_64 rng(2);
  const Tensor x = ops::scale(random_tensor(rng, {5, 7}), 20.0);
  for (std::size_t axis : {0u, 1u}) {
    const Tensor s = ops::softmax(x, axis);
    const std::size_t rows = axis == 1 ? 5 : 7;
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t k = 0; k < x.dim(axis); ++k) total += axis == 1 ? s.at({r, k}) : s.at({k, r});
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("attention") {
  std::mt19937_64 rng(3);
  const Tensor v = random_tensor(rng, {5, 4});
  const Tensor k = random_tensor(rng, {5, 4});
  const Tensor out = ops::attention(Tensor::zeros({1, 4}), k, v);
  for (std::size_t c = 0; c < 4; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < 5; ++r) m += v.at({r, c});
    CHECK(out.at({0, c}) == doctest::Approx(m / 5.0).epsilon(1e-13));
  }
  const Tensor v1 = random_tensor(rng, {1, 4});
  check_close(ops::attention(random_tensor(rng, {1, 4}), random_tensor(rng, {1, 4}), v1), v1, 0.0);

  const Tensor q = random_tensor(rng, {3, 4});
  const Tensor kk = random_tensor(rng, {3, 4});
  const Tensor vv = random_tensor(rng, {3, 4});
  const Tensor got = ops::attention(q, kk, vv);
  for (std::size_t i = 0; i < 3; ++i) {
    double s[3], mx = -1e300, z = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      s[j] = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s[j] += q.at({i, c}) * kk.at({j, c});
      s[j] /= 2.0;
      mx = std::max(mx, s[j]);
    }
    for (auto& x : s) z += (x = std::exp(x - mx));
    for (std::size_t c = 0; c < 4; ++c) {
      double o = 0.0, lo = 1e300, hi = -1e300;
      for (std::size_t j = 0; j < 3; ++j) {
        o += s[j] / z * vv.at({j, c});
        lo = std::min(lo, vv.at({j, c}));
        hi = std::max(hi, vv.at({j, c}));
      }
      CHECK(std::abs(got.at({i, c}) - o) <= 1e-12);
      CHECK(got.at({i, c}) >= lo);
      CHECK(got.at({i, c}) <= hi);
    }
  }
  CHECK_THROWS_AS(ops::attention(Tensor::zeros({2, 4}), Tensor::zeros({2, 3}), Tensor::zeros({2, 3})),
                  DimensionError);
}

TEST_CASE("residual mlp") {
  nn::ParameterStore store(4);
  auto w = nn::make_mlp(store, "mlp", 3, 12);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor(rng, {2, 3});
  const Tensor y = nn::residual_mlp(x, w);
  CHECK(y.shape() == x.shape());
  double max_diff = 0.0;
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t o = 0; o < 3; ++o) {
      double acc = w.fc2.bias[o];
      for (std::size_t h = 0; h < 12; ++h) {
        double pre = w.fc1.bias[h];
        for (std::size_t i = 0; i < 3; ++i) pre += x.at({r, i}) * w.fc1.weight.at({i, h});
        const double g = 0.5 * pre * (1.0 + std::erf(pre / std::sqrt(2.0)));
        acc += g * w.fc2.weight.at({h, o});
      }
      max_diff = std::max(max_diff, std::abs(y.at({r, o}) - (x.at({r, o}) + acc)));
    }
  }
  CHECK(max_diff <= 1e-12);

  nn::ParameterStore zero(0);
  auto wz = nn::make_mlp(zero, "mlp", 3, 12);
  for (const auto& [name, t] : zero.entries()) {
    auto d = Tensor(t).data_mut();
    std::fill(d.begin(), d.end(), 0.0);
  }
  check_close(nn::residual_mlp(x, wz), x, 0.0);
}

TEST_CASE("linear and conv1x1") {
  const Tensor x = Tensor::matrix(1, 2, {1, 1});
  CHECK(ops::linear(x, Tensor::matrix(2, 1, {1, 1}), Tensor::vector({1})).item() == 3.0);
  std::mt19937_64 rng(5);
  const Tensor r = random_tensor(rng, {4, 3});
  check_close(ops::linear(r, Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), Tensor::zeros({3})), r, 0.0);

  const Tensor map = random_tensor(rng, {2, 3, 4});
  const Tensor w = random_tensor(rng, {4, 5});
  const Tensor b = random_tensor(rng, {5});
  const Tensor viaconv = ops::conv1x1(map, w, b);
  const Tensor vialinear = ops::reshape(ops::linear(ops::reshape(map, {6, 4}), w, b), {2, 3, 5});
  check_close(viaconv, vialinear, 1e-12);
  const Tensor eye = Tensor::matrix(4, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  check_close(ops::conv1x1(map, eye, Tensor::zeros({4})), map, 0.0);
}

TEST_CASE("soft argmax") {
  const Tensor u = ops::soft_argmax_2_5d(Tensor::zeros({4, 6, 8, 2}));
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(u.at({j, 0}) == doctest::Approx(2.5));
    CHECK(u.at({j, 1}) == doctest::Approx(1.5));
    CHECK(u.at({j, 2}) == doctest::Approx(3.5));
  }
  std::vector<double> h(4 * 4 * 8, 0.0);
  h[(2 * 4 + 3) * 8 + 1] = 50.0;
  const Tensor p = ops::soft_argmax_2_5d(Tensor({4, 4, 8, 1}, h));
  CHECK(std::abs(p.at({0, 0}) - 3.0) < 1e-3);
  CHECK(std::abs(p.at({0, 1}) - 2.0) < 1e-3);
  CHECK(std::abs(p.at({0, 2}) - 1.0) < 1e-3);

  std::mt19937_64 rng(6);
  const Tensor r = ops::soft_argmax_2_5d(ops::scale(random_tensor(rng, {4, 5, 3, 7}), 30.0));
  for (std::size_t j = 0; j < 7; ++j) {
    CHECK(r.at({j, 0}) >= 0.0);
    CHECK(r.at({j, 0}) <= 4.0);
    CHECK(r.at({j, 1}) >= 0.0);
    CHECK(r.at({j, 1}) <= 3.0);
    CHECK(r.at({j, 2}) >= 0.0);
    CHECK(r.at({j, 2}) <= 2.0);
  }
}

TEST_CASE("bilinear sample") {
  std::mt19937_64 rng(7);
  const Tensor f = random_tensor(rng, {3, 4, 2});
  const Tensor at_cells = ops::bilinear_sample(f, Tensor::matrix(2, 2, {1, 2, 3, 0}));
  CHECK(at_cells.at({0, 1}) == f.at({2, 1, 1}));
  CHECK(at_cells.at({1, 0}) == f.at({0, 3, 0}));
  const Tensor mid = ops::bilinear_sample(f, Tensor::matrix(1, 2, {1.5, 1}));
  CHECK(mid.at({0, 0}) == doctest::Approx(0.5 * (f.at({1, 1, 0}) + f.at({1, 2, 0}))).epsilon(1e-14));

  std::uniform_real_distribution<double> ux(0.0, 3.0), uy(0.0, 2.0);
  for (int t = 0; t < 20; ++t) {
    const double x = ux(rng), y = uy(rng);
    const Tensor s = ops::bilinear_sample(f, Tensor::matrix(1, 2, {x, y}));
    const auto x0 = static_cast<std::size_t>(std::floor(x)), y0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t x1 = std::min<std::size_t>(x0 + 1, 3), y1 = std::min<std::size_t>(y0 + 1, 2);
    const double ax = x - x0, ay = y - y0;
    for (std::size_t c = 0; c < 2; ++c) {
      const double o = (1 - ax) * (1 - ay) * f.at({y0, x0, c}) + ax * (1 - ay) * f.at({y0, x1, c}) +
                       (1 - ax) * ay * f.at({y1, x0, c}) + ax * ay * f.at({y1, x1, c});
      CHECK(std::abs(s.at({0, c}) - o) <= 1e-12);
    }
  }
}

TEST_CASE("pooling and l1") {
  CHECK(ops::global_average_pool(Tensor::full({3, 2, 2}, 1.5)).to_vector() == std::vector<double>{1.5, 1.5});
  CHECK(ops::global_average_pool(Tensor({2, 2, 1}, {1, 2, 3, 4})).item() == 2.5);
  const Tensor a = Tensor::vector({0.3, -2});
  CHECK(ops::l1_loss(a, a).item() == 0.0);
  CHECK(ops::l1_loss(Tensor::vector({0, 0}), Tensor::vector({1, -1})).item() == 1.0);
}

TEST_CASE("backward") {
  const Tensor x = Tensor::vector({1, 2, 3}, true);
  backward(ops::sum(x));
  CHECK(x.grad_tensor().to_vector() == std::vector<double>{1, 1, 1});
  CHECK_THROWS_AS(backward(ops::scale(x, 2.0)), UsageError);

  std::mt19937_64 rng(8);
  const Tensor w = random_tensor(rng, {4, 3}, true);
  const Tensor in = random_tensor(rng, {5, 4});
  const Tensor y = random_tensor(rng, {5, 3});
  const auto r = gradcheck::grad_check([&] { return ops::l1_loss(ops::matmul(in, w), y); }, {w});
  CHECK(r.max_rel_error < 1e-6);

  auto grads = [&] {
    Tensor p = w.clone();
    p.set_requires_grad(true);
    backward(ops::sum(ops::gelu(ops::matmul(in, p))));
    return p.grad_tensor().to_vector();
  };
  const auto g1 = grads();
  const auto g2 = grads();
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("non-finite values are rejected") {
  CHECK_THROWS_AS(ops::scale(Tensor::vector({1e308}), 10.0), NumericError);
}

TEST_CASE("adam") {
  Tensor p = Tensor::vector({0.5, -1.0}, true);
  std::vector<Tensor> params{p};
  AdamState state = make_adam_state(params, {0.01});
  adam_step(params, {{0.0, 0.0}}, state);
  CHECK(p.to_vector() == std::vector<double>{0.5, -1.0});

  Tensor q = Tensor::vector({0.5, -1.0}, true);
  std::vector<Tensor> qs{q};
  AdamState s2 = make_adam_state(qs, {0.01});
  adam_step(qs, {{3.0, -0.2}}, s2);
  CHECK(q[0] == doctest::Approx(0.5 - 0.01).epsilon(1e-6));
  CHECK(q[1] == doctest::Approx(-1.0 + 0.01).epsilon(1e-6));
}

TEST_CASE("primitive gradient suite") {
  for (const auto& row : gradcheck::run_suite({})) {
    INFO(row.name);
    CHECK(row.pass);
    CHECK(row.max_rel_error < 1e-5);
  }
}
