#include <doctest.h>

#include <algorithm>
#include <map>
#include <sstream>

#include "transact/analytics.hpp"
#include "transact/error.hpp"

using namespace transact;
using namespace transact::analytics;

TEST_SUITE("analytics") {
  TEST_CASE("module counts for H=4096, A=2048, P=3072") {
    const auto p = count_params(transact_2_6b());
    CHECK(p.per_mha == 33554432);
    CHECK(p.per_mlp == 37748736);
    auto ungated = transact_2_6b();
    ungated.has_gate = false;
    CHECK(count_params(ungated).per_mlp == 2ull * 4096 * 3072);
  }

  TEST_CASE("totals are the sum of their parts") {
    auto c = llama2_7b();
    const auto p = count_params(c);
    CHECK(p.total == 32 * (p.per_mha + p.per_mlp + 2 * 4096) + 2ull * 32000 * 4096 + 4096);
    c.tied_embeddings = true;
    CHECK(count_params(c).total == p.total - 32000ull * 4096);
    c.n_layers = 0;
    CHECK(count_params(c).total == 32000ull * 4096 + 4096);
  }

  TEST_CASE("kv cache is linear in sequence length and head count") {
    const auto c = llama2_7b();
    CHECK(kv_cache_values(c, 4096) == 1073741824ull);
    CHECK(kv_cache_values(c, 0) == 0);
    CHECK(kv_cache_values(c, 2048) * 2 == kv_cache_values(c, 4096));
    auto half = c;
    half.n_heads = 16;
    CHECK(kv_cache_values(half, 4096) * 2 == kv_cache_values(c, 4096));
    CHECK(kv_cache_bytes(c, 4096, 2) == 2147483648ull);
  }

  TEST_CASE("flops match a by-hand tally on a tiny config") {
    ModelConfig c;
    c.n_layers = 1;
    c.hidden_dim = 4;
    c.n_heads = 1;
    c.head_dim = 2;
    c.mlp_dim = 8;
    c.vocab_size = 10;
    // Per token: attention projections 2·(3·4·2 + 2·4) = 64, gated MLP
    // 2·(2·4·8 + 8·4) = 192, LM head 2·4·10 = 80, total 336. Each visible key
    // costs 4·A = 8.
    const auto f = flops_estimate(c, 1, 3);
    CHECK(f.prefill == 344.0);           // one position, one key
    CHECK(f.decode_per_token == 352.0);  // position 1 sees two keys
    CHECK(f.generate_total == 344.0 + 352.0 + 360.0);
    // Secondary: softmax 5 per key, norms 4·4 × 3, SiLU+gate 5·8, residual 2·4.
    CHECK(f.secondary_prefill == 5.0 + 48.0 + 40.0 + 8.0);
  }

  TEST_CASE("flops grow with context, faster for wider attention") {
    const auto wide = llama2_7b(), narrow = transact_2_6b();
    double prev_w = 0.0, prev_n = 0.0;
    for (std::uint64_t ctx : {256, 512, 1024, 2048, 4096}) {
      const double w = flops_estimate(wide, ctx).decode_per_token, n = flops_estimate(narrow, ctx).decode_per_token;
      CHECK(w > prev_w);
      CHECK(n > prev_n);
      if (prev_w > 0.0) CHECK(w - prev_w > n - prev_n);
      prev_w = w;
      prev_n = n;
    }
  }

  TEST_CASE("reports compare against a reference") {
    const std::vector<std::uint64_t> ctx{256, 4096};
    auto r = cost_report("2.6b", transact_2_6b(), 4096, ctx);
    const auto ref = cost_report("7b", llama2_7b(), 4096, ctx);
    compare(r, ref);
    CHECK(*r.kv_change_pct == doctest::Approx(-50.0));
    CHECK(r.flops_decode_change_pct.size() == 2);
    for (double v : r.flops_decode_change_pct) CHECK((v > -100.0 && v < 0.0));
    CHECK(change_pct(50.0, 200.0) == doctest::Approx(-75.0));

    const auto j = to_json(r);
    CHECK(j["kv_cache_values"] == 536870912ull);
    CHECK(j["flops"].size() == 2);
    CHECK(j.contains("flops_convention"));

    std::stringstream csv(csv_header() + csv_rows(r));
    std::size_t lines = 0;
    for (std::string line; std::getline(csv, line);) ++lines;
    CHECK(lines == 3);
  }

  TEST_CASE("grid groups agree with an exact parameter-count sort") {
    const std::vector<std::uint64_t> as{512, 1280, 2048, 2816, 3584}, ps{1024, 2048, 3072, 4096, 5120};
    const auto grid = sweep_grid(llama2_7b(), as, ps);
    CHECK(grid.size() == 25);
    std::map<std::uint64_t, std::size_t> rank;
    for (const auto& g : grid) rank[g.report.params.total] = 0;
    std::size_t i = 0;
    for (auto& [k, v] : rank) v = i++;
    for (const auto& g : grid) CHECK(g.group == rank[g.report.params.total]);

    auto find = [&](std::uint64_t a, std::uint64_t p) {
      return *std::find_if(grid.begin(), grid.end(), [&](const GridPoint& g) { return g.attn_dim == a && g.mlp_dim == p; });
    };
    const auto center = find(2048, 3072), tall = find(3584, 2048), wide = find(1280, 5120);
    CHECK(tall.group == wide.group);
    CHECK(tall.group == center.group + 1);
    CHECK(tall.report.params.total == wide.report.params.total);

    const auto single = sweep_grid(transact_2_6b(), {2048}, {3072});
    REQUIRE(single.size() == 1);
    CHECK(single[0].report.params.total == count_params(transact_2_6b()).total);
    CHECK_THROWS_AS(sweep_grid(llama2_7b(), {100}, {1024}), ConfigError);
  }
}
