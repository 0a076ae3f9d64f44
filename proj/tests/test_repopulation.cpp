#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "nfr/error.hpp"
#include "nfr/regularizers.hpp"
#include "nfr/repopulation.hpp"
#include "test_support.hpp"

using namespace nfr;
using namespace nfr::testing;

namespace {

ImportanceWeights random_weights(std::mt19937_64& rng, const Network& net, double lo = 0.3, double hi = 1.7) {
  ImportanceWeights p = ImportanceWeights::uniform(net);
  std::uniform_real_distribution<double> draw(lo, hi);
  for (auto& layer : p.layers) {
    double sum = 0.0;
    for (double& v : layer) sum += (v = draw(rng));
    for (double& v : layer) v *= static_cast<double>(layer.size()) / sum;
  }
  return p;
}

double dist2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Best squared distance from v over a grid of the feasible set with spacing h.
double grid_projection_distance(const std::vector<double>& v, double total, double floor, double h) {
  const std::size_t n = v.size();
  const double span = total - static_cast<double>(n) * floor;
  const auto steps = static_cast<std::size_t>(std::llround(span / h));
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> idx(n - 1, 0);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t pos, std::size_t used) {
    if (pos == n - 1) {
      std::vector<double> p(n);
      for (std::size_t i = 0; i + 1 < n; ++i) p[i] = floor + h * static_cast<double>(idx[i]);
      p[n - 1] = floor + h * static_cast<double>(steps - used);
      best = std::min(best, dist2(p, v));
      return;
    }
    for (std::size_t s = 0; s + used <= steps; ++s) {
      idx[pos] = s;
      rec(pos + 1, used + s);
    }
  };
  rec(0, 0);
  return best;
}

const Network& fixture_l1() {
  static const Network net = make_net(
      {mat({{0.9, -0.3}, {-1.2, 0.4}, {0.5, 0.8}, {1.4, -1.1}, {-0.2, 0.6}, {0.7, 0.7}, {-0.9, -0.5}, {0.3, 1.3}})},
      mat({{1.1}, {-0.7}, {0.4}, {1.6}, {-1.3}, {0.2}, {0.9}, {-0.5}}));
  return net;
}

}  // namespace

TEST_CASE("weighted forward with unit weights is bit identical to forward") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    const Network net = random_net(rng, 3, {5, 4, 3}, 2);
    const auto x = random_input(rng, 3);
    const auto got = weighted_forward(net, ImportanceWeights::uniform(net), x);
    const ForwardTrace want = forward(net, x);
    for (std::size_t c = 0; c < 2; ++c) CHECK(got[c] == want.output(0, c));
  }
}

TEST_CASE("weighted forward equals forward for positive weights") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const Network net = random_net(rng, 2, {6, 5, 4}, 1, 0.0, 2.0);
    const ImportanceWeights p = random_weights(rng, net, 0.05, 3.0);
    const auto x = random_input(rng, 2);
    CHECK(std::fabs(weighted_forward(net, p, x)[0] - forward(net, x).output(0, 0)) <= 1e-12);
  }
}

TEST_CASE("weighted forward rejects a zero weight") {
  const Network& net = fixture_l1();
  ImportanceWeights p = ImportanceWeights::uniform(net);
  p.layers[0][3] = 0.0;
  const std::vector<double> x{0.1, 0.2};
  CHECK_THROWS_AS(weighted_forward(net, p, x), ValueError);
}

TEST_CASE("projection examples") {
  const std::vector<double> feasible{0.5, 1.25, 1.25};
  CHECK(project_scaled_simplex(feasible, 3.0, 0.0) == feasible);
  const std::vector<double> ones{1.0, 1.0, 1.0};
  CHECK(project_scaled_simplex(ones, 3.0, 1e-8) == ones);
  const std::vector<double> v{10.0, 0.0};
  const auto p = project_scaled_simplex(v, 2.0, 0.0);
  CHECK(p[0] == doctest::Approx(2.0));
  CHECK(p[1] == doctest::Approx(0.0));
  // grid oracle on the segment p = (t, 2 - t)
  double best_t = 0.0, best = INFINITY;
  for (int i = 0; i <= 2000; ++i) {
    const double t = 0.001 * i;
    const double d = (t - 10.0) * (t - 10.0) + (2.0 - t) * (2.0 - t);
    if (d < best) best = d, best_t = t;
  }
  CHECK(p[0] == doctest::Approx(best_t).epsilon(1e-3));
  CHECK_THROWS_AS(project_scaled_simplex(v, 1.0, 0.6), ValueError);
  CHECK_THROWS_AS(project_scaled_simplex(std::vector<double>{}, 1.0, 0.0), ValueError);
}

TEST_CASE("projection satisfies the constraints and matches a grid search") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> coord(-2.0, 4.0);
  for (std::size_t n = 2; n <= 4; ++n) {
    for (int t = 0; t < 6; ++t) {
      std::vector<double> v(n);
      for (double& e : v) e = coord(rng);
      const double total = static_cast<double>(n), floor = t % 2 ? 0.05 : 0.0;
      const auto p = project_scaled_simplex(v, total, floor);
      double sum = 0.0;
      for (double e : p) {
        CHECK(e >= floor);
        sum += e;
      }
      CHECK(sum == doctest::Approx(total).epsilon(1e-12));
      const double h = n == 4 ? 0.02 : 0.005;
      const double grid = grid_projection_distance(v, total, floor, h);
      // The grid point nearest to the true projection is within h * sqrt(n) of it.
      const double slack = 2.0 * std::sqrt(dist2(p, v)) * h * std::sqrt(static_cast<double>(n)) + h * h * n;
      CHECK(dist2(p, v) <= grid + 1e-12);
      CHECK(grid <= dist2(p, v) + slack);
    }
  }
}

TEST_CASE("prox objective never increases") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 10; ++t) {
    const Network net = random_net(rng, 2, {6, 5}, 1, 0.0, 2.0);
    const RegularizerSpec s = RegularizerSpec::preset(t % 2 ? "L21" : "L12", 2, 0.5);
    ProxConfig cfg;
    cfg.iterations = 200;
    const ProxResult r = solve_weights_traced(net, s, cfg);
    REQUIRE(r.objective.size() >= 2);
    for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] <= r.objective[i - 1]);
    CHECK(r.objective.back() < r.objective.front());
    CHECK(r.objective.back() == doctest::Approx(weighted_reg(net, s, r.weights)).epsilon(1e-15));
    CHECK_NOTHROW(r.weights.validate(net, cfg.floor));
  }
}

TEST_CASE("symmetric layers keep uniform weights") {
  const Network l1 = make_net({Matrix(4, 2, 0.6)}, Matrix(4, 1, -1.2));
  const Network l2 = make_net({Matrix(3, 2, 0.6), Matrix(5, 3, -0.8)}, Matrix(5, 2, 0.4));
  for (const Network* net : {&l1, &l2}) {
    const ImportanceWeights p = solve_weights(*net, RegularizerSpec::preset("L12", net->depth(), 1.0), ProxConfig{});
    for (const auto& layer : p.layers)
      for (double v : layer) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("a dead neuron is driven to the floor") {
  const Network net = make_net({mat({{0.1}, {0.0}})}, mat({{3.0}, {0.0}}));
  const RegularizerSpec s = RegularizerSpec::preset("L12", 1, 1.0);
  const ProxConfig cfg;
  const ImportanceWeights p = solve_weights(net, s, cfg);
  CHECK(p.layers[0][1] == doctest::Approx(cfg.floor).epsilon(1e-6));
  CHECK(p.layers[0][0] == doctest::Approx(2.0 - cfg.floor).epsilon(1e-12));
  // scan oracle over the constraint segment: the best interior point is beaten by the boundary
  double best_t = 0.0, best = INFINITY;
  for (int i = 1; i < 2000; ++i) {
    const double t = 0.001 * i;
    const double v = weighted_reg(net, s, ImportanceWeights{{{2.0 - t, t}}});
    if (v < best) best = v, best_t = t;
  }
  CHECK(best_t == doctest::Approx(0.001));
  CHECK(weighted_reg(net, s, p) < best);
}

TEST_CASE("zero iterations return uniform weights") {
  std::mt19937_64 rng(3);
  const Network net = random_net(rng, 2, {4, 3}, 1);
  ProxConfig cfg;
  cfg.iterations = 0;
  CHECK(solve_weights(net, RegularizerSpec::preset("L12", 2, 1.0), cfg) == ImportanceWeights::uniform(net));
  cfg.step = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValueError);
}

TEST_CASE("resampling keeps widths and is seeded") {
  std::mt19937_64 rng(9);
  const Network net = random_net(rng, 2, {6, 4, 5}, 2);
  const ImportanceWeights p = random_weights(rng, net);
  const Network a = resample(net, p, 17), b = resample(net, p, 17), c = resample(net, p, 18);
  CHECK(a == b);
  CHECK(!(a == c));
  CHECK(a.hidden_widths() == net.hidden_widths());
  CHECK(a.input_dim() == net.input_dim());
  CHECK(a.output_dim() == net.output_dim());
}

TEST_CASE("resampling copies incoming rows and rescales outgoing weights") {
  std::mt19937_64 rng(10);
  const Network net = random_net(rng, 2, {5, 4}, 1);
  const ImportanceWeights p = random_weights(rng, net);
  ResampleDraws draws;
  const Network out = resample(net, p, 3, &draws);
  const auto& s1 = draws.layers[0];
  const auto& s2 = draws.layers[1];
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t k = 0; k < 2; ++k) CHECK(out.weights[0](j, k) == net.weights[0](s1[j], k));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      CHECK(out.weights[1](i, j) == doctest::Approx(net.weights[1](s2[i], s1[j]) / p.layers[0][s1[j]]).epsilon(1e-15));
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.top(i, 0) == doctest::Approx(net.top(s2[i], 0) / p.layers[1][s2[i]]));
}

TEST_CASE("identical neurons resample to the same function") {
  const Network net = make_net({Matrix(4, 2, 0.7), Matrix(3, 4, -0.5)}, Matrix(3, 1, 1.3));
  const Network out = resample(net, ImportanceWeights::uniform(net), 99);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    const auto x = random_input(rng, 2);
    CHECK(forward(out, x).output(0, 0) == forward(net, x).output(0, 0));
  }
}

TEST_CASE("concentrated weights copy the heavy neuron") {
  const std::size_t m = 6;
  const double eps = 1e-10;
  std::mt19937_64 rng(4);
  const Network net = random_net(rng, 2, {m}, 1);
  ImportanceWeights p{{std::vector<double>(m, eps)}};
  p.layers[0][0] = static_cast<double>(m) - static_cast<double>(m - 1) * eps;
  // P(any slot misses neuron 0 across all seeds) <= seeds * m * eps
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    ResampleDraws draws;
    resample(net, p, seed, &draws);
    for (auto s : draws.layers[0]) CHECK(s == 0);
  }
}

TEST_CASE("resampling rejects invalid weights") {
  const Network& net = fixture_l1();
  ImportanceWeights p = ImportanceWeights::uniform(net);
  p.layers[0][0] = 3.0;
  CHECK_THROWS_AS(resample(net, p, 1), ValueError);
  ImportanceWeights short_p{{{1.0, 1.0}}};
  CHECK_THROWS_AS(resample(net, short_p, 1), DimensionError);
}

TEST_CASE("one-layer resampling is unbiased on an input grid") {
  const Network& net = fixture_l1();
  std::mt19937_64 rng(6);
  for (const ImportanceWeights& p : {ImportanceWeights::uniform(net), random_weights(rng, net)}) {
    const std::size_t seeds = 2000, grid = 16;
    std::vector<double> sum(grid, 0.0), sq(grid, 0.0);
    Matrix inputs(grid, 2);
    for (std::size_t g = 0; g < grid; ++g) inputs(g, 0) = -2.0 + 4.0 * static_cast<double>(g) / 15.0, inputs(g, 1) = 1.0;
    for (std::uint64_t s = 0; s < seeds; ++s) {
      const Matrix out = forward_batch(resample(net, p, s), inputs).output;
      for (std::size_t g = 0; g < grid; ++g) sum[g] += out(g, 0), sq[g] += out(g, 0) * out(g, 0);
    }
    const Matrix base = forward_batch(net, inputs).output;
    const double n = static_cast<double>(seeds);
    for (std::size_t g = 0; g < grid; ++g) {
      const double mean = sum[g] / n;
      const double se = std::sqrt((sq[g] / n - mean * mean) / (n - 1.0));
      CHECK(std::fabs(mean - base(g, 0)) <= 3.0 * se);
    }
  }
}

TEST_CASE("deeper resampling keeps each layer sum unbiased") {
  std::mt19937_64 rng(8);
  const Network net = random_net(rng, 2, {7, 3}, 1);
  const ImportanceWeights p = random_weights(rng, net);
  const std::vector<double> x{0.6, 1.0};
  const ForwardTrace base = forward(net, x);
  // g^(2) of the resampled net minus the original g^(2) of the unit each slot copied
  const std::size_t seeds = 4000;
  std::vector<double> sum(3, 0.0), sq(3, 0.0);
  for (std::uint64_t s = 0; s < seeds; ++s) {
    ResampleDraws draws;
    const Network out = resample(net, p, s, &draws);
    const ForwardTrace t = forward(out, x);
    for (std::size_t i = 0; i < 3; ++i) {
      const double diff = t.pre[1](0, i) - base.pre[1](0, draws.layers[1][i]);
      sum[i] += diff, sq[i] += diff * diff;
    }
  }
  const double n = static_cast<double>(seeds);
  for (std::size_t i = 0; i < 3; ++i) {
    const double mean = sum[i] / n, se = std::sqrt((sq[i] / n - mean * mean) / (n - 1.0));
    CHECK(std::fabs(mean) <= 3.0 * se);
  }
}

TEST_CASE("importance weight invariants") {
  const Network& net = fixture_l1();
  CHECK_NOTHROW(ImportanceWeights::uniform(net).validate(net));
  ImportanceWeights p = ImportanceWeights::uniform(net);
  p.layers[0][0] = 1e-9;
  p.layers[0][1] = 2.0 - 1e-9;
  CHECK_THROWS_AS(p.validate(net), ValueError);
  CHECK_NOTHROW(p.validate(net, 1e-10));
  p.layers[0][1] = 2.5;
  CHECK_THROWS_AS(p.validate(net, 1e-10), ValueError);
}
