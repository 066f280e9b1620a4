#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "oracle.hpp"
#include "transact/error.hpp"
#include "transact/pruner.hpp"

using namespace transact;

namespace {

CalibSet calib_for(std::size_t vocab, std::uint64_t seed) {
  return draw_calib_set(testutil::random_tokens(2000, vocab, seed), 6, 10, seed);
}

double max_logit_diff(const ModelWeights& full, const ModelWeights& pruned, const ActivationMask& mask,
                      std::span<const Token> toks) {
  ForwardOptions opts;
  opts.mask = &mask;
  return testutil::max_abs_diff(forward(pruned, toks).logits, forward(full, toks, opts).logits);
}

}  // namespace

TEST_SUITE("pruner") {
  TEST_CASE("scores match brute-force recomputation") {
    const auto m = random_model(testutil::small_config(2, 4, 40), 21);
    const auto calib = calib_for(32, 3);
    const auto stats = collect_stats(m, calib);
    for (bool peak : {false, true})
      for (double alpha : {0.0, 1.0, 2.5}) {
        MetricConfig mc;
        mc.alpha = alpha;
        mc.outlier = peak ? OutlierMode::token_peak : OutlierMode::channel_norm;
        const auto ref = oracle::brute_salience(m, calib.samples, alpha, peak);
        for (std::size_t l = 0; l < 2; ++l) {
          const auto hs = head_salience(stats, l, mc);
          for (std::size_t k = 0; k < 4; ++k) CHECK(hs[k] == doctest::Approx(ref.heads[l][k]).epsilon(1e-4));
          const auto cs = mlp_salience(stats, l);
          for (std::size_t i = 0; i < 40; ++i) CHECK(cs[i] == doctest::Approx(ref.channels[l][i]).epsilon(1e-4));
        }
      }
  }

  TEST_CASE("select_topk agrees with a full sort, ties to the lower index") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t n = 1 + rng() % 40;
      std::vector<double> s(n);
      for (auto& v : s) v = static_cast<double>(rng() % 5);  // plenty of ties
      const std::size_t k = 1 + rng() % n;
      CHECK(select_topk(s, k) == oracle::topk_by_sort(s, k));
    }
    const std::vector<double> all_equal(6, 1.0);
    CHECK(select_topk(all_equal, 3) == std::vector<std::size_t>{0, 1, 2});
    CHECK_THROWS_AS(select_topk(all_equal, 0), ConfigError);
    CHECK_THROWS_AS(select_topk(all_equal, 7), ConfigError);
  }

  TEST_CASE("pruning equals masking the full model") {
    for (bool gate : {true, false}) {
      auto c = testutil::small_config(3, 5, 56);
      c.has_gate = gate;
      const auto m = random_model(c, 8);
      const KeepSets heads{{0, 3}, {1, 2, 4}, {4}}, channels{{0, 10, 55}, {7}, {1, 2, 3, 4, 50}};
      // Non-uniform keep-sets are rejected; build uniform ones instead.
      CHECK_THROWS_AS(prune_model(m, heads, channels), ConfigError);
      const KeepSets uh{{0, 3}, {1, 4}, {2, 4}}, uc{{0, 10, 55}, {7, 8, 9}, {1, 2, 50}};
      const auto pruned = prune_model(m, uh, uc);
      CHECK(pruned.config.n_heads == 2);
      CHECK(pruned.config.mlp_dim == 3);
      validate(pruned);
      const auto toks = testutil::random_tokens(13, 32, 2);
      CHECK(max_logit_diff(m, pruned, mask_from_keep(c, uh, uc), toks) <= 1e-5);
    }
  }

  TEST_CASE("keeping everything is the identity and pruning is idempotent") {
    const auto m = random_model(testutil::small_config(2, 4, 32), 3);
    KeepSets heads(2, {0, 1, 2, 3}), ch(2, std::vector<std::size_t>(32));
    for (auto& v : ch) std::iota(v.begin(), v.end(), 0);
    CHECK(prune_model(m, heads, ch) == m);
    const KeepSets h2{{1, 3}, {0, 2}}, c2{{4, 9}, {30, 31}};
    const auto once = prune_model(m, h2, c2);
    CHECK(prune_model(once, KeepSets(2, {0, 1}), KeepSets(2, {0, 1})) == once);
  }

  TEST_CASE("salience ranking is invariant to scaling value projections") {
    auto m = random_model(testutil::small_config(1, 6, 32), 14);
    const auto calib = calib_for(32, 9);
    MetricConfig mc;
    const auto stats0 = collect_stats(m, calib);
    const auto before = build_report(m, &stats0, mc, {3, 16});
    for (auto& v : m.layers[0].wv.data) v *= 3.0f;
    for (auto& v : m.layers[0].wo.data) v /= 3.0f;
    const auto stats = collect_stats(m, calib);
    const auto after = build_report(m, &stats, mc, {3, 16});
    CHECK(before.layers[0].keep_heads == after.layers[0].keep_heads);
    for (std::size_t k = 0; k < 6; ++k)
      CHECK(after.layers[0].head_scores[k] == doctest::Approx(3.0 * before.layers[0].head_scores[k]).epsilon(1e-4));
  }

  TEST_CASE("magnitude baseline is the mean absolute weight") {
    auto c = testutil::small_config(1, 2, 4, 32, 16);
    auto m = random_model(c, 1);
    auto& lw = m.layers[0];
    for (auto* w : {&lw.wq, &lw.wk, &lw.wv, &lw.wo, &lw.wg, &lw.wu, &lw.wd}) std::fill(w->data.begin(), w->data.end(), 0.5f);
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t j = 16; j < 32; ++j) lw.wq(r, j) = -2.0f;  // head 1 query block
    for (std::size_t h = 0; h < 16; ++h) lw.wd(3, h) = 1.25f;
    MetricConfig mc;
    mc.metric = Metric::magnitude;
    const auto s = baseline_salience(m, 0, mc);
    CHECK(s.heads[0] == doctest::Approx(0.5));
    CHECK(s.heads[1] == doctest::Approx((2.0 + 0.5 * 3) / 4));
    CHECK(s.channels[0] == doctest::Approx(0.5));
    CHECK(s.channels[3] == doctest::Approx((0.5 + 0.5 + 1.25) / 3));
  }

  TEST_CASE("random baseline is seeded per layer") {
    const auto m = random_model(testutil::small_config(2), 1);
    MetricConfig mc;
    mc.metric = Metric::random;
    mc.random_seed = 42;
    const auto a = build_report(m, nullptr, mc, {2, 16}), b = build_report(m, nullptr, mc, {2, 16});
    CHECK(to_json(a) == to_json(b));
    CHECK(a.layers[0].head_scores != a.layers[1].head_scores);
    mc.random_seed = 43;
    CHECK(build_report(m, nullptr, mc, {2, 16}).layers[0].channel_scores != a.layers[0].channel_scores);
  }

  TEST_CASE("invalid targets and configs are rejected") {
    const auto m = random_model(testutil::small_config(1, 4, 32), 1);
    MetricConfig mc;
    mc.metric = Metric::magnitude;
    CHECK_THROWS_AS(build_report(m, nullptr, mc, {0, 8}), ConfigError);
    CHECK_THROWS_AS(build_report(m, nullptr, mc, {5, 8}), ConfigError);
    CHECK_THROWS_AS(build_report(m, nullptr, mc, {2, 33}), ConfigError);
    mc.metric = Metric::transact;
    CHECK_THROWS(build_report(m, nullptr, mc, {2, 8}));
    mc.alpha = -1.0;
    CHECK_THROWS_AS(validate(mc), ConfigError);
    CHECK_THROWS_AS(parse_metric("entropy"), ConfigError);
    CHECK(parse_outlier_mode("token-peak") == OutlierMode::token_peak);
  }

  TEST_CASE("report json carries scores, keep-sets and settings") {
    const auto m = random_model(testutil::small_config(1, 4, 32), 2);
    const auto stats = collect_stats(m, calib_for(32, 1));
    const auto r = build_report(m, &stats, MetricConfig{}, {2, 8});
    const auto j = to_json(r);
    CHECK(j["metric"] == "transact");
    CHECK(j["outlier_mode"] == "channel-norm");
    CHECK(j["token_count"] == stats.token_count);
    CHECK(j["layers"][0]["keep_heads"].size() == 2);
    CHECK(j["layers"][0]["head_scores"].size() == 4);
    CHECK(std::is_sorted(r.layers[0].keep_channels.begin(), r.layers[0].keep_channels.end()));
  }
}
