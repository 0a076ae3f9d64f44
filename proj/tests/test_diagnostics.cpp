#include <cmath>
#include <random>

#include "doctest.h"
#include "nfr/diagnostics.hpp"
#include "nfr/error.hpp"
#include "nfr/regularizers.hpp"
#include "test_support.hpp"

using namespace nfr;
using namespace nfr::testing;

namespace {

Matrix random_batch(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  Matrix x(n, d);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (double& v : x.values()) v = u(rng);
  return x;
}

// Direct evaluation of V for a one-output L=2 tanh net, one input at a time.
double v_oracle_l2(const Network& net, const Matrix& xs) {
  const Matrix& w1 = net.weights[0];
  const Matrix& w2 = net.weights[1];
  const std::size_t d = w1.cols(), m1 = w1.rows(), m2 = w2.rows();
  double total = 0.0;
  for (std::size_t b = 0; b < xs.rows(); ++b) {
    std::vector<double> f1(m1), g2(m2), f2(m2);
    for (std::size_t j = 0; j < m1; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += w1(j, k) * xs(b, k);
      f1[j] = std::tanh(s / static_cast<double>(d));
    }
    double out = 0.0;
    for (std::size_t i = 0; i < m2; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m1; ++j) s += w2(i, j) * f1[j];
      g2[i] = s / static_cast<double>(m1);
      f2[i] = std::tanh(g2[i]);
      out += net.top(i, 0) * f2[i];
    }
    out /= static_cast<double>(m2);
    // a_i = d out / d g_i
    std::vector<double> a(m2);
    for (std::size_t i = 0; i < m2; ++i) a[i] = net.top(i, 0) * (1.0 - f2[i] * f2[i]) / static_cast<double>(m2);
    double layer = 0.0;
    for (std::size_t j = 0; j < m1; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m2; ++i) s += a[i] * (f1[j] * w2(i, j) - g2[i]);
      layer += s * s;
    }
    double top = 0.0;
    for (std::size_t i = 0; i < m2; ++i) top += std::pow(net.top(i, 0) * f2[i] - out, 2);
    total += layer / static_cast<double>(m1 * m1) + top / static_cast<double>(m2 * m2);
  }
  return total / static_cast<double>(xs.rows());
}

std::vector<KKTPair> pairs_from(std::initializer_list<std::pair<double, double>> pts) {
  std::vector<KKTPair> out;
  for (auto [u, v] : pts) out.push_back(KKTPair{1, out.size(), u, v});
  return out;
}

}  // namespace

TEST_CASE("single top neuron has zero variance") {
  const Network net = make_net({mat({{0.7, -0.4}})}, mat({{1.9}}));
  std::mt19937_64 rng(1);
  CHECK(approx_variance(net, random_batch(rng, 20, 2)) == 0.0);
}

TEST_CASE("two-neuron top term matches direct evaluation") {
  const Network net = make_net({mat({{0.8, -0.5}, {-1.1, 0.3}})}, mat({{1.5}, {-0.6}}));
  const Matrix xs = mat({{0.3, 1.0}, {-1.2, 1.0}, {2.0, 1.0}});
  double want = 0.0;
  for (std::size_t b = 0; b < 3; ++b) {
    const double f1 = std::tanh((0.8 * xs(b, 0) - 0.5) / 2.0);
    const double f2 = std::tanh((-1.1 * xs(b, 0) + 0.3) / 2.0);
    const double out = (1.5 * f1 - 0.6 * f2) / 2.0;
    want += 0.25 * (std::pow(1.5 * f1 - out, 2) + std::pow(-0.6 * f2 - out, 2));
  }
  want /= 3.0;
  CHECK(rel_err(approx_variance(net, xs), want) <= 1e-10);
}

TEST_CASE("one hidden layer variance equals the closed-form top term") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 10; ++t) {
    const Network net = random_net(rng, 3, {7}, 2);
    const Matrix xs = random_batch(rng, 15, 3);
    double want = 0.0;
    for (std::size_t b = 0; b < xs.rows(); ++b) {
      std::vector<double> f(7);
      for (std::size_t j = 0; j < 7; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) s += net.weights[0](j, k) * xs(b, k);
        f[j] = std::tanh(s / 3.0);
      }
      for (std::size_t c = 0; c < 2; ++c) {
        double out = 0.0;
        for (std::size_t j = 0; j < 7; ++j) out += net.top(j, c) * f[j];
        out /= 7.0;
        for (std::size_t j = 0; j < 7; ++j) want += std::pow(net.top(j, c) * f[j] - out, 2) / 49.0;
      }
    }
    want /= static_cast<double>(xs.rows());
    const VarianceTerms terms = approx_variance_terms(net, xs);
    CHECK(terms.layer.empty());
    CHECK(rel_err(terms.total, want) <= 1e-10);
  }
}

TEST_CASE("two hidden layer variance matches direct evaluation") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    const Network net = random_net(rng, 2, {5, 4}, 1);
    const Matrix xs = random_batch(rng, 12, 2);
    const double v = approx_variance(net, xs);
    CHECK(v >= 0.0);
    CHECK(rel_err(v, v_oracle_l2(net, xs)) <= 1e-10);
  }
}

TEST_CASE("identical neurons contribute no layer term") {
  // layer 1 of identical neurons; layer 2 rows differ so the top term is not zero
  Network same = make_net({Matrix(3, 2, 0.6), Matrix(4, 3, 0.0)}, mat({{1.0}, {-2.0}, {0.5}, {0.3}}));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) same.weights[1](i, j) = 0.4 * static_cast<double>(i + 1);
  std::mt19937_64 rng(4);
  const VarianceTerms terms = approx_variance_terms(same, random_batch(rng, 10, 2));
  REQUIRE(terms.layer.size() == 1);
  CHECK(std::fabs(terms.layer[0]) <= 1e-25);
  CHECK(terms.top > 0.0);
}

TEST_CASE("variance rejects an empty batch") {
  const Network net = make_net({mat({{1.0}})}, mat({{1.0}}));
  CHECK_THROWS_AS(approx_variance(net, Matrix(0, 1)), ValueError);
}

TEST_CASE("kkt pairs on a zero network are zero") {
  const Network net = make_net({Matrix(3, 2, 0.0), Matrix(2, 3, 0.0)}, Matrix(2, 1, 0.0));
  const RegularizerSpec s = RegularizerSpec::preset("L12", 2, 1.0);
  for (std::size_t l = 1; l <= 2; ++l)
    for (const auto& p : kkt_pairs(net, s, l)) {
      CHECK(p.u_val == 0.0);
      CHECK(p.v_val == 0.0);
    }
}

TEST_CASE("kkt pairs for single-neuron layers") {
  const double a = 0.7, b = -1.3, c = 2.1;
  const Network net = make_net({mat({{a}}), mat({{b}})}, mat({{c}}));
  const RegularizerSpec s = RegularizerSpec::preset("L12", 2, 1.0);
  const auto l1 = kkt_pairs(net, s, 1);
  REQUIRE(l1.size() == 1);
  CHECK(l1[0].u_val == doctest::Approx(a * a));
  CHECK(l1[0].v_val == doctest::Approx(b * b));
  const auto l2 = kkt_pairs(net, s, 2);
  CHECK(l2[0].u_val == doctest::Approx(b * b));
  CHECK(l2[0].v_val == doctest::Approx(c * c));
  CHECK(l2[0].layer == 2);
}

TEST_CASE("kkt pairs are linear in lambda") {
  std::mt19937_64 rng(5);
  const Network net = random_net(rng, 2, {4, 3}, 1);
  const auto base = kkt_pairs(net, RegularizerSpec::preset("L12", 2, 0.5), 1);
  const auto scaled = kkt_pairs(net, RegularizerSpec::preset("L12", 2, 1.5), 1);
  for (std::size_t j = 0; j < base.size(); ++j) {
    CHECK(scaled[j].u_val == doctest::Approx(3.0 * base[j].u_val));
    CHECK(scaled[j].v_val == doctest::Approx(3.0 * base[j].v_val));
    CHECK(base[j].u_val >= 0.0);
    CHECK(base[j].v_val >= 0.0);
  }
}

TEST_CASE("kkt balance is a rescaled row-scaling derivative") {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 5; ++t) {
    const Network net = random_net(rng, 3, {5, 4}, 1, 0.2, 1.5);
    const RegularizerSpec s = RegularizerSpec::preset("L12", 2, 0.8);
    for (std::size_t l = 1; l <= 2; ++l) {
      const auto pairs = kkt_pairs(net, s, l);
      const Matrix& w = net.weights[l - 1];
      const double m_out = static_cast<double>(w.rows());
      for (std::size_t j = 0; j < w.rows(); ++j) {
        double scale = 1.0;
        auto value = [&] {
          Matrix scaled = w;
          for (double& v : scaled.row(j)) v *= scale;
          return s.lambda[l - 1] * layer_reg(scaled, 1.0, 2.0);
        };
        const double ds = central_diff(value, scale);
        // half the derivative, with the row-average factor of the output layer undone
        CHECK(rel_err(pairs[j].u_val, 0.5 * m_out * ds) <= 1e-6);
      }
    }
  }
}

TEST_CASE("kkt pairs reject bad layers and non-L12 presets") {
  std::mt19937_64 rng(7);
  const Network net = random_net(rng, 2, {3}, 1);
  CHECK_THROWS_AS(kkt_pairs(net, RegularizerSpec::preset("L12", 1, 1.0), 0), DimensionError);
  CHECK_THROWS_AS(kkt_pairs(net, RegularizerSpec::preset("L12", 1, 1.0), 2), DimensionError);
  CHECK_THROWS_AS(kkt_pairs(net, RegularizerSpec::preset("L21", 1, 1.0), 1), ValueError);
}

TEST_CASE("pearson correlation") {
  CHECK(pearson(pairs_from({{0, 1}, {1, 3}, {2, 5}, {5, 11}})) == doctest::Approx(1.0));
  CHECK(pearson(pairs_from({{0, 0}, {1, -1}, {2.5, -2.5}})) == doctest::Approx(-1.0));
  // covariance oracle on the 4-point fixture
  const double us[] = {0, 1, 2, 3}, vs[] = {0, 2, 1, 3};
  double mu = 1.5, mv = 1.5, cuv = 0, cuu = 0, cvv = 0;
  for (int i = 0; i < 4; ++i) {
    cuv += (us[i] - mu) * (vs[i] - mv);
    cuu += (us[i] - mu) * (us[i] - mu);
    cvv += (vs[i] - mv) * (vs[i] - mv);
  }
  const double want = cuv / std::sqrt(cuu * cvv);
  CHECK(want == doctest::Approx(0.8));
  CHECK(pearson(pairs_from({{0, 0}, {1, 2}, {2, 1}, {3, 3}})) == doctest::Approx(want).epsilon(1e-14));
  CHECK_THROWS_WITH_AS(pearson(pairs_from({{1, 0}, {1, 2}, {1, 3}})), doctest::Contains("degenerate scatter"), ValueError);
  CHECK_THROWS_WITH_AS(pearson(pairs_from({{1, 0}})), doctest::Contains("degenerate scatter"), ValueError);
}

TEST_CASE("sparsity cdf examples") {
  const Matrix w = mat({{1, -2}, {3, 4}});
  const std::vector<double> t{0, 1, 2, 3, 4};
  CHECK(sparsity_cdf(w, t) == std::vector<double>{0, 0.25, 0.5, 0.75, 1.0});
  const std::vector<double> zero{0.0};
  CHECK(sparsity_cdf(Matrix(2, 3, 0.0), zero) == std::vector<double>{1.0});
  const std::vector<double> low{0.0, 0.5, 0.99};
  CHECK(sparsity_cdf(w, low) == std::vector<double>{0, 0, 0});
  const std::vector<double> unsorted{1.0, 0.5};
  CHECK_THROWS_AS(sparsity_cdf(w, unsorted), ValueError);
  const std::vector<double> negative{-1.0};
  CHECK_THROWS_AS(sparsity_cdf(w, negative), ValueError);
}

TEST_CASE("sparsity cdf is monotone and pools matrices") {
  std::mt19937_64 rng(8);
  const Network net = random_net(rng, 3, {6, 5}, 1);
  std::vector<double> t;
  for (int i = 0; i <= 40; ++i) t.push_back(0.05 * i);
  const Matrix* both[] = {&net.weights[0], &net.weights[1]};
  const auto cdf = sparsity_cdf(std::span<const Matrix* const>(both), t);
  for (std::size_t i = 1; i < cdf.size(); ++i) CHECK(cdf[i] >= cdf[i - 1]);
  CHECK(cdf.back() == 1.0);
  // pooled fraction is the entry-weighted mix of the per-matrix fractions
  const auto a = sparsity_cdf(net.weights[0], t), b = sparsity_cdf(net.weights[1], t);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(cdf[i] == doctest::Approx((18.0 * a[i] + 30.0 * b[i]) / 48.0));
}

TEST_CASE("feature functions") {
  Matrix grid(9, 1);
  for (std::size_t i = 0; i < 9; ++i) grid(i, 0) = -2.0 + 0.5 * static_cast<double>(i);
  const std::size_t first[] = {0};
  const Matrix zero = feature_functions(make_net({Matrix(2, 1, 0.0)}, Matrix(2, 1, 0.0)), 1, grid, first);
  for (double v : zero.values()) CHECK(v == 0.0);
  const Matrix id = feature_functions(make_net({mat({{1.0}})}, mat({{1.0}})), 1, grid, first);
  for (std::size_t i = 0; i < 9; ++i) CHECK(id(i, 0) == std::tanh(grid(i, 0)));

  std::mt19937_64 rng(9);
  const Network net = random_net(rng, 1, {5, 4}, 1);
  const std::size_t picks[] = {3, 0, 2};
  const Matrix f = feature_functions(net, 2, grid, picks);
  for (std::size_t i = 0; i < 9; ++i) {
    const ForwardTrace t = forward(net, grid.row(i));
    for (std::size_t c = 0; c < 3; ++c) CHECK(f(i, c) == t.act[2](0, picks[c]));
  }
  const std::size_t bad[] = {4};
  CHECK_THROWS_AS(feature_functions(net, 2, grid, bad), DimensionError);
  CHECK_THROWS_AS(feature_functions(net, 3, grid, first), DimensionError);
}
