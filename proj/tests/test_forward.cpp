#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "oracle.hpp"
#include "transact/error.hpp"
#include "transact/forward.hpp"
#include "transact/model.hpp"

using namespace transact;

namespace {

double max_diff(const Matrix& a, const oracle::Mat& b) {
  double m = 0.0;
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t c = 0; c < a.cols; ++c) m = std::max(m, std::abs(a(r, c) - b[r][c]));
  return m;
}

}  // namespace

TEST_SUITE("forward") {
  TEST_CASE("matches the double-precision reference forward") {
    for (auto act : {Activation::silu, Activation::relu, Activation::gelu})
      for (bool gate : {true, false})
        for (bool tied : {false, true}) {
          auto c = testutil::small_config(2, 3, 48);
          c.activation = act;
          c.has_gate = gate;
          c.tied_embeddings = tied;
          const auto m = random_model(c, 17);
          const auto toks = testutil::random_tokens(12, c.vocab_size, 4);
          ForwardOptions opts;
          opts.taps.materialize_attn = opts.taps.materialize_mlp = true;
          const auto tr = forward(m, toks, opts);
          const auto ref = oracle::forward(m, toks);
          CHECK(max_diff(tr.logits, ref.logits) < 1e-4);
          for (std::size_t l = 0; l < c.n_layers; ++l) {
            CHECK(max_diff(tr.act_attn[l], ref.act_attn[l]) < 1e-4);
            CHECK(max_diff(tr.act_mlp[l], ref.act_mlp[l]) < 1e-4);
          }
        }
  }

  TEST_CASE("streamed taps equal materialized activations") {
    const auto m = random_model(testutil::small_config(3), 2);
    const auto toks = testutil::random_tokens(10, 32, 1);
    std::vector<Matrix> streamed_a(3), streamed_p(3);
    ForwardOptions opts;
    opts.taps.materialize_attn = opts.taps.materialize_mlp = true;
    opts.taps.sink = [&](std::size_t l, const Matrix& a, const Matrix& p) {
      streamed_a[l] = a;
      streamed_p[l] = p;
    };
    const auto tr = forward(m, toks, opts);
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(streamed_a[l] == tr.act_attn[l]);
      CHECK(streamed_p[l] == tr.act_mlp[l]);
    }
    opts.taps.layers = {1};
    const auto only1 = forward(m, toks, opts);
    CHECK(only1.act_attn[0].empty());
    CHECK(only1.act_attn[1] == tr.act_attn[1]);
    CHECK(only1.logits == tr.logits);
  }

  TEST_CASE("attention probabilities are causal and normalized") {
    const auto m = random_model(testutil::small_config(1, 2), 5);
    const auto toks = testutil::random_tokens(7, 32, 2);
    ForwardOptions opts;
    opts.taps.attention_probs = true;
    const auto tr = forward(m, toks, opts);
    const auto& p = tr.attn_probs[0];
    REQUIRE(p.size() == 2 * 7 * 7);
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t t = 0; t < 7; ++t) {
        double s = 0.0;
        for (std::size_t u = 0; u < 7; ++u) s += p[(h * 7 + t) * 7 + u];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }
  }

  TEST_CASE("a head with zero output projection contributes exactly nothing") {
    auto m = random_model(testutil::small_config(2, 4), 3);
    const auto toks = testutil::random_tokens(9, 32, 3);
    auto zeroed = m;
    for (std::size_t r = 16; r < 32; ++r)
      for (std::size_t c = 0; c < zeroed.config.hidden_dim; ++c) zeroed.layers[0].wo(r, c) = 0.0f;
    ActivationMask mask;
    mask.keep_heads = {{true, false, true, true}, {}};
    ForwardOptions opts;
    opts.mask = &mask;
    CHECK(forward(zeroed, toks).logits == forward(m, toks, opts).logits);
  }

  TEST_CASE("permuting heads consistently leaves logits unchanged") {
    const auto m = random_model(testutil::small_config(1, 3), 7);
    auto p = m;
    const std::vector<std::size_t> perm{2, 0, 1};
    const std::size_t H = m.config.hidden_dim, D = 16;
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t d = 0; d < D; ++d) {
        for (std::size_t r = 0; r < H; ++r) {
          p.layers[0].wq(r, k * D + d) = m.layers[0].wq(r, perm[k] * D + d);
          p.layers[0].wk(r, k * D + d) = m.layers[0].wk(r, perm[k] * D + d);
          p.layers[0].wv(r, k * D + d) = m.layers[0].wv(r, perm[k] * D + d);
        }
        for (std::size_t c = 0; c < H; ++c) p.layers[0].wo(k * D + d, c) = m.layers[0].wo(perm[k] * D + d, c);
      }
    const auto toks = testutil::random_tokens(11, 32, 8);
    CHECK(testutil::max_abs_diff(forward(m, toks).logits, forward(p, toks).logits) < 1e-5);
  }

  TEST_CASE("zero value projections reduce every attention block to nothing") {
    auto m = random_model(testutil::small_config(1), 9);
    for (auto& v : m.layers[0].wv.data) v = 0.0f;
    ForwardOptions opts;
    opts.taps.materialize_attn = true;
    const auto toks = testutil::random_tokens(6, 32, 1);
    const auto tr = forward(m, toks, opts);
    for (float v : tr.act_attn[0].data) CHECK(v == 0.0f);
  }

  TEST_CASE("single token input works") {
    const auto m = random_model(testutil::small_config(), 1);
    const std::vector<Token> one{5};
    const auto tr = forward(m, one);
    CHECK(tr.logits.rows == 1);
    CHECK(max_diff(tr.logits, oracle::forward(m, one).logits) < 1e-4);
  }

  TEST_CASE("bad inputs are rejected with typed errors") {
    auto m = random_model(testutil::small_config(), 1);
    const std::vector<Token> empty, oov{1, 99};
    CHECK_THROWS_AS(forward(m, empty), InputError);
    CHECK_THROWS_AS(forward(m, oov), InputError);
    const auto too_long = testutil::random_tokens(257, 32, 1);
    CHECK_THROWS_AS(forward(m, too_long), InputError);
    m.layers[1].wd.data[0] = std::nanf("");
    const std::vector<Token> ok{1, 2};
    try {
      forward(m, ok);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
  }
}
