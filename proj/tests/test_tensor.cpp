#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmdm/autodiff.hpp"
#include "test_support.hpp"

using namespace mmdm;
using namespace mmdm::testing;

TEST_CASE("matmul identity and hand arithmetic") {
  RandomStream rng(1);
  auto I = ad::constant(ad::Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  auto A = ad::constant(random_tensor({3, 3}, rng));
  auto IA = ad::matmul(I, A);
  for (int64_t i = 0; i < 9; ++i) CHECK(IA->value[i] == A->value[i]);

  auto B = ad::constant(ad::Tensor({2, 2}, {1, 2, 3, 4}));
  auto v = ad::constant(ad::Tensor({2, 1}, {1, 1}));
  auto Bv = ad::matmul(B, v);
  CHECK(Bv->value[0] == 3.0);
  CHECK(Bv->value[1] == 7.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  auto A = ad::constant(ad::Tensor({2, 3}));
  auto B = ad::constant(ad::Tensor({2, 2}));
  CHECK_THROWS_AS(ad::matmul(A, B), ShapeMismatch);
}

TEST_CASE("grad of sum(A*B) matches finite differences") {
  RandomStream rng(7);
  auto A = ad::leaf(random_tensor({3, 4}, rng), true, "A");
  auto B = ad::leaf(random_tensor({4, 2}, rng), true, "B");
  auto res = grad_check([&] { return ad::sum(ad::matmul(A, B)); }, {{"A", A}, {"B", B}});
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("batched matmul broadcasts leading dimensions") {
  RandomStream rng(9);
  auto A = ad::leaf(random_tensor({2, 3, 4, 4}, rng), true, "A");
  auto B = ad::leaf(random_tensor({4, 5}, rng), true, "B");
  auto C = ad::matmul(A, B);
  CHECK(C->value.shape() == std::vector<int>{2, 3, 4, 5});
  auto res = grad_check([&] { return ad::mean(ad::mul(ad::matmul(A, B), ad::matmul(A, B))); },
                        {{"A", A}, {"B", B}}, 1e-6, 16);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("softmax symmetry, shift invariance, closed form") {
  auto z = ad::softmax(ad::constant(ad::Tensor({2}, {0, 0})), 0);
  CHECK(z->value[0] == doctest::Approx(0.5).epsilon(1e-12));

  auto big = ad::softmax(ad::constant(ad::Tensor({2}, {1000, 1000})), 0);
  CHECK(std::isfinite(big->value[0]));
  CHECK(big->value[0] == doctest::Approx(0.5).epsilon(1e-12));

  auto closed = ad::softmax(ad::constant(ad::Tensor({2}, {0.0, std::log(3.0)})), 0);
  CHECK(closed->value[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(closed->value[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one within 1e-12") {
  RandomStream rng(3);
  auto x = ad::constant(random_tensor({4, 7}, rng, -5.0, 5.0));
  auto s = ad::softmax(x, 1);
  for (int r = 0; r < 4; ++r) {
    double acc = 0.0;
    for (int c = 0; c < 7; ++c) acc += s->value[r * 7 + c];
    CHECK(std::fabs(acc - 1.0) < 1e-12);
  }
  // shift invariance
  auto shifted = ad::softmax(ad::add_scalar(x, 13.5), 1);
  for (int64_t i = 0; i < s->value.size(); ++i)
    CHECK(s->value[i] == doctest::Approx(shifted->value[i]).epsilon(1e-12));
}

TEST_CASE("layer_norm zero-variance path and closed form") {
  auto gain = ad::constant(ad::Tensor({4}, {1, 1, 1, 1}));
  auto bias = ad::constant(ad::Tensor({4}));
  auto constant_row = ad::layer_norm(ad::constant(ad::Tensor({4}, {3, 3, 3, 3})), gain, bias);
  for (int i = 0; i < 4; ++i) CHECK(constant_row->value[i] == 0.0);

  auto g2 = ad::constant(ad::Tensor({2}, {1, 1}));
  auto b2 = ad::constant(ad::Tensor({2}));
  auto pm = ad::layer_norm(ad::constant(ad::Tensor({2}, {1, -1})), g2, b2);
  CHECK(pm->value[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(pm->value[1] == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("layer_norm pre-affine mean and variance") {
  RandomStream rng(11);
  const int D = 16;
  auto gain = ad::constant(ad::Tensor({D}, std::vector<double>(D, 1.0)));
  auto bias = ad::constant(ad::Tensor({D}));
  auto y = ad::layer_norm(ad::constant(random_tensor({5, D}, rng)), gain, bias);
  for (int r = 0; r < 5; ++r) {
    double m = 0.0, v = 0.0;
    for (int c = 0; c < D; ++c) m += y->value[r * D + c];
    m /= D;
    for (int c = 0; c < D; ++c) {
      const double d = y->value[r * D + c] - m;
      v += d * d;
    }
    v /= D;
    CHECK(std::fabs(m) < 1e-9);
    CHECK(std::fabs(v - 1.0) < 1e-9);
  }
}

TEST_CASE("layer_norm rejects mismatched affine shapes") {
  auto gain = ad::constant(ad::Tensor({3}));
  auto bias = ad::constant(ad::Tensor({4}));
  CHECK_THROWS_AS(ad::layer_norm(ad::constant(ad::Tensor({2, 4})), gain, bias), ShapeMismatch);
}

TEST_CASE("backward on simple losses") {
  RandomStream rng(5);
  auto w = ad::leaf(random_tensor({6}, rng), true, "w");

  auto g1 = ad::backward(ad::sum(w));
  for (int i = 0; i < 6; ++i) CHECK(g1.at(w)[i] == 1.0);

  auto g2 = ad::backward(ad::scale(ad::sum(ad::mul(w, w)), 0.5));
  for (int i = 0; i < 6; ++i) CHECK(g2.at(w)[i] == doctest::Approx(w->value[i]).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar losses and detached leaves") {
  auto w = ad::leaf(ad::Tensor({3}, {1, 2, 3}), true, "w");
  CHECK_THROWS_AS(ad::backward(ad::mul(w, w)), DomainError);

  auto other = ad::leaf(ad::Tensor({3}), true, "other");
  auto grads = ad::backward(ad::sum(w));
  CHECK_THROWS_AS(grads.at(other), DomainError);
  CHECK(grads.contains(w));
}

TEST_CASE("gradients of a random two-layer attention-style block") {
  // q/k/v projections, softmax scores, context, ffn: the composite exercises
  // matmul, permute, softmax, layer_norm, gelu together
  for (uint64_t seed = 0; seed < 3; ++seed) {
    RandomStream rng(100 + seed);
    const int S = 4, D = 6;
    auto x = ad::leaf(random_tensor({S, D}, rng), true, "x");
    auto wq = ad::leaf(random_tensor({D, D}, rng), true, "wq");
    auto wk = ad::leaf(random_tensor({D, D}, rng), true, "wk");
    auto wv = ad::leaf(random_tensor({D, D}, rng), true, "wv");
    auto w1 = ad::leaf(random_tensor({D, D}, rng), true, "w1");
    auto gain = ad::leaf(ad::Tensor({D}, std::vector<double>(D, 1.0)), true, "gain");
    auto bias = ad::leaf(ad::Tensor({D}), true, "bias");
    auto loss = [&] {
      auto xn = ad::layer_norm(x, gain, bias);
      auto scores = ad::scale(ad::matmul(ad::matmul(xn, wq), ad::transpose(ad::matmul(xn, wk))),
                              1.0 / std::sqrt(D));
      auto ctx = ad::matmul(ad::softmax(scores, 1), ad::matmul(xn, wv));
      auto out = ad::gelu(ad::matmul(ctx, w1));
      return ad::mean(ad::mul(out, out));
    };
    auto res = grad_check(
        loss, {{"x", x}, {"wq", wq}, {"wk", wk}, {"wv", wv}, {"w1", w1}, {"gain", gain}, {"bias", bias}});
    CHECK(res.max_rel_err < 1e-5);
  }
}

TEST_CASE("per-op gradients over 10 random seeds") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    RandomStream rng(1000 + seed);
    auto a = ad::leaf(random_tensor({3, 5}, rng), true, "a");
    auto b = ad::leaf(random_tensor({3, 5}, rng), true, "b");
    auto c = ad::leaf(random_tensor({5, 3}, rng), true, "c");
    auto gain = ad::leaf(random_tensor({5}, rng, 0.5, 1.5), true, "gain");
    auto bias = ad::leaf(random_tensor({5}, rng), true, "bias");
    const std::vector<std::pair<std::string, ad::Var>> leaves = {
        {"a", a}, {"b", b}, {"c", c}, {"gain", gain}, {"bias", bias}};

    const std::vector<std::pair<std::string, std::function<ad::Var()>>> cases = {
        {"add", [&] { return ad::sum(ad::mul(ad::add(a, b), ad::add(a, b))); }},
        {"sub", [&] { return ad::sum(ad::mul(ad::sub(a, b), ad::sub(a, b))); }},
        {"mul", [&] { return ad::sum(ad::mul(ad::mul(a, b), a)); }},
        {"neg", [&] { return ad::sum(ad::mul(ad::neg(a), b)); }},
        {"scale", [&] { return ad::sum(ad::mul(ad::scale(a, 1.7), b)); }},
        {"gelu", [&] { return ad::sum(ad::mul(ad::gelu(a), b)); }},
        {"matmul", [&] { return ad::sum(ad::mul(ad::matmul(a, c), ad::matmul(a, c))); }},
        {"transpose", [&] { return ad::sum(ad::mul(ad::transpose(a), c)); }},
        {"softmax", [&] { return ad::sum(ad::mul(ad::softmax(a, 1), b)); }},
        {"layer_norm", [&] { return ad::sum(ad::mul(ad::layer_norm(a, gain, bias), b)); }},
        {"slice", [&] { return ad::sum(ad::mul(ad::slice(a, 1, 1, 3), ad::slice(b, 1, 0, 3))); }},
        {"concat", [&] { return ad::sum(ad::mul(ad::concat({a, b}, 0), ad::concat({b, a}, 0))); }},
        {"reshape", [&] { return ad::sum(ad::mul(ad::reshape(a, {5, 3}), c)); }},
        {"permute", [&] { return ad::sum(ad::mul(ad::permute(a, {1, 0}), c)); }},
        {"mean", [&] { return ad::mean(ad::mul(a, b)); }},
    };
    for (const auto& [name, fn] : cases) {
      auto res = grad_check(fn, leaves);
      INFO("op ", name, " seed ", seed);
      CHECK(res.max_rel_err < 1e-5);
    }
  }
}

TEST_CASE("determinism: identical inputs give bit-identical outputs") {
  auto run = [] {
    RandomStream rng(77);
    auto a = ad::leaf(random_tensor({4, 4}, rng), true, "a");
    auto b = ad::constant(random_tensor({4, 4}, rng));
    auto loss = ad::mean(ad::mul(ad::softmax(ad::matmul(a, b), 1), a));
    auto grads = ad::backward(loss);
    std::vector<double> out = {loss->value[0]};
    const ad::Tensor& g = grads.at(a);
    out.insert(out.end(), g.vec().begin(), g.vec().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("operations on finite inputs stay finite") {
  RandomStream rng(13);
  auto x = ad::constant(random_tensor({6, 6}, rng, -10.0, 10.0));
  CHECK(ad::softmax(x, 1)->value.all_finite());
  CHECK(ad::gelu(x)->value.all_finite());
  auto gain = ad::constant(ad::Tensor({6}, std::vector<double>(6, 1.0)));
  auto bias = ad::constant(ad::Tensor({6}));
  CHECK(ad::layer_norm(x, gain, bias)->value.all_finite());
}
