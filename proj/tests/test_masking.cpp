#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmdm/masking.hpp"

using namespace mmdm;
using namespace mmdm::masking;

namespace {

int count_masked(const std::vector<uint8_t>& m) {
  int n = 0;
  for (uint8_t b : m) n += b;
  return n;
}

QualitySignals uniform_signals(int V, int T, int J, double rho, double sigma) {
  QualitySignals s(V, T, J);
  for (double& r : s.rho) r = rho;
  for (double& v : s.sigma) v = sigma;
  return s;
}

}  // namespace

TEST_CASE("adaptive weight formula") {
  CHECK(adaptive_weight({0, 0, 0}, 0.0, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  // high-precision evaluation: 0.5 * exp(-1) + 0.1
  CHECK(adaptive_weight({0.5, 0.5}, 0.1, 0.5) ==
        doctest::Approx(0.28393972058572117).epsilon(1e-12));
  // saturated confidence drives the exponential term to zero
  CHECK(adaptive_weight(std::vector<double>(200, 1.0), 0.37, 1.0) ==
        doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("adaptive weight monotonicity") {
  double prev = adaptive_weight({0.0, 0.5}, 0.2, 1.0);
  for (double r : {0.2, 0.4, 0.8, 1.0}) {
    const double w = adaptive_weight({r, 0.5}, 0.2, 1.0);
    CHECK(w < prev);
    prev = w;
  }
  CHECK(adaptive_weight({0.5}, 0.3, 1.0) > adaptive_weight({0.5}, 0.1, 1.0));
}

TEST_CASE("pattern A masks floor(r*J) joints in every frame") {
  MaskingConfig cfg;
  cfg.pattern = Pattern::A;
  cfg.ratio = 0.3;
  cfg.seed = 5;
  const int T = 12, J = 17;
  const auto mask = build_mask(cfg, T, J);
  for (int t = 0; t < T; ++t) {
    int n = 0;
    for (int j = 0; j < J; ++j) n += mask[t * J + j];
    CHECK(n == 5);  // floor(0.3 * 17)
  }
}

TEST_CASE("pattern B masks floor(r*T*J) cells over the grid") {
  MaskingConfig cfg;
  cfg.pattern = Pattern::B;
  cfg.ratio = 0.5;
  cfg.seed = 9;
  const auto mask = build_mask(cfg, 10, 17);
  CHECK(count_masked(mask) == 85);
}

TEST_CASE("pattern B per-cell inclusion frequency approximates the ratio") {
  MaskingConfig cfg;
  cfg.pattern = Pattern::B;
  cfg.ratio = 0.5;
  const int T = 10, J = 17;
  std::vector<int> hits(T * J, 0);
  // a 1% band needs ~6 sigma of Monte-Carlo headroom per cell, which the
  // 1e4-seed marginal check alone cannot give across 170 cells
  const int trials = 100000;
  int64_t marginal = 0;
  for (int s = 0; s < trials; ++s) {
    cfg.seed = 1000 + s;
    const auto mask = build_mask(cfg, T, J);
    for (int c = 0; c < T * J; ++c) hits[c] += mask[c];
    if (s == 9999) {
      for (int h : hits) marginal += h;
    }
  }
  // marginal rate over the first 1e4 seeds is exactly the ratio by cardinality
  CHECK(static_cast<double>(marginal) / (10000.0 * T * J) == doctest::Approx(0.5).epsilon(1e-12));
  for (int c = 0; c < T * J; ++c) {
    const double freq = static_cast<double>(hits[c]) / trials;
    CHECK(std::fabs(freq - 0.5) <= 0.01);
  }
}

TEST_CASE("pattern cardinalities hold across grid sizes") {
  MaskingConfig cfg;
  cfg.seed = 3;
  for (double r : {0.1, 0.3, 0.7, 0.9}) {
    for (auto [T, J] : {std::pair{3, 4}, {10, 17}, {7, 22}}) {
      cfg.ratio = r;
      cfg.pattern = Pattern::A;
      const auto a = build_mask(cfg, T, J);
      CHECK(count_masked(a) == T * static_cast<int>(std::floor(r * J)));
      cfg.pattern = Pattern::B;
      const auto b = build_mask(cfg, T, J);
      CHECK(count_masked(b) == static_cast<int>(std::floor(r * T * J)));
    }
  }
}

TEST_CASE("pattern C with one dominant weight always masks that joint") {
  const int T = 4, J = 5;
  const int V = 20;
  QualitySignals sig = uniform_signals(V, T, J, 0.0, 0.0);
  // cell (1, 2) keeps rho = 0 in every view, so its weight is omega; all
  // other cells carry a confidence sum of 20, scaling theirs by e^-20,
  // a ratio well beyond 1e6
  for (int v = 0; v < V; ++v)
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < J; ++j) sig.rho_at(v, t, j) = (t == 1 && j == 2) ? 0.0 : 1.0;
  MaskingConfig cfg;
  cfg.pattern = Pattern::C;
  cfg.ratio = 0.2;  // floor(0.2*20) = 4 cells per draw
  cfg.omega = 1.0;
  cfg.force_invisible = false;
  for (int s = 0; s < 1000; ++s) {
    cfg.seed = s;
    const auto mask = build_mask(cfg, T, J, &sig);
    CHECK(mask[1 * J + 2] == 1);
  }
}

TEST_CASE("pattern C requires signals and validates ranges") {
  MaskingConfig cfg;
  cfg.pattern = Pattern::C;
  cfg.ratio = 0.5;
  CHECK_THROWS_AS(build_mask(cfg, 4, 4), DomainError);
  cfg.ratio = 1.0;
  QualitySignals sig = uniform_signals(2, 4, 4, 0.5, 0.5);
  CHECK_THROWS_AS(build_mask(cfg, 4, 4, &sig), DomainError);
  cfg.ratio = 0.5;
  QualitySignals bad = uniform_signals(2, 4, 4, 1.5, 0.5);
  CHECK_THROWS_AS(build_mask(cfg, 4, 4, &bad), DomainError);
}

TEST_CASE("pattern C inclusion frequencies are ordered by weight") {
  const int T = 4, J = 5;
  QualitySignals sig(1, T, J);
  // strictly increasing weights over cells via sigma
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < J; ++j) sig.sigma_at(t, j) = (t * J + j) / static_cast<double>(T * J);
  MaskingConfig cfg;
  cfg.pattern = Pattern::C;
  cfg.ratio = 0.4;
  cfg.omega = 0.0;  // weight = sigma exactly
  cfg.force_invisible = false;

  std::vector<int> hits(T * J, 0);
  const int trials = 10000;
  for (int s = 0; s < trials; ++s) {
    cfg.seed = 777 + s;
    const auto mask = build_mask(cfg, T, J, &sig);
    for (int c = 0; c < T * J; ++c) hits[c] += mask[c];
  }
  // cell 0 has zero weight under omega = 0: never drawn
  CHECK(hits[0] == 0);
  for (int c = 0; c + 1 < T * J; ++c) {
    const double fa = static_cast<double>(hits[c]) / trials;
    const double fb = static_cast<double>(hits[c + 1]) / trials;
    CHECK(fa <= fb + 0.01);  // order-consistent within tolerance
  }
}

TEST_CASE("invisible joints are force-masked") {
  const int T = 3, J = 4;
  QualitySignals sig = uniform_signals(3, T, J, 0.9, 0.0);
  for (int v = 0; v < 3; ++v) sig.rho_at(v, 1, 1) = 0.0;  // invisible everywhere
  MaskingConfig cfg;
  cfg.pattern = Pattern::C;
  cfg.ratio = 0.2;
  cfg.seed = 123;
  cfg.force_invisible = true;
  const auto mask = build_mask(cfg, T, J, &sig);
  CHECK(mask[1 * J + 1] == 1);

  // invisibility maximizes the weight for fixed sigma
  const double w_invisible = adaptive_weight({0.0, 0.0, 0.0}, 0.3, 1.0);
  const double w_visible = adaptive_weight({0.4, 0.0, 0.0}, 0.3, 1.0);
  CHECK(w_invisible > w_visible);
}

TEST_CASE("masks are deterministic given the seed") {
  MaskingConfig cfg;
  cfg.pattern = Pattern::B;
  cfg.ratio = 0.4;
  cfg.seed = 42;
  const auto a = build_mask(cfg, 8, 9);
  CHECK(a == build_mask(cfg, 8, 9));
  cfg.seed = 43;
  CHECK(a != build_mask(cfg, 8, 9));
}

TEST_CASE("config validation") {
  MaskingConfig cfg;
  cfg.ratio = 0.0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg.ratio = 0.5;
  cfg.omega = -0.1;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  CHECK(pattern_from_string("A") == Pattern::A);
  CHECK_THROWS_AS(pattern_from_string("Z"), DomainError);
}
