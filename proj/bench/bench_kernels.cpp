#include <benchmark/benchmark.h>

#include <random>

#include "transact/calib.hpp"
#include "transact/kernels.hpp"
#include "transact/model.hpp"
#include "transact/toy.hpp"

using namespace transact;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Matrix m(r, c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist;
  for (auto& v : m.data) v = dist(rng);
  return m;
}

template <void (*Fn)(const Matrix&, const Matrix&, Matrix&)>
void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix out(n, n);
  for (auto _ : state) {
    Fn(a, b, out);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <void (*Fn)(const Matrix&, const Matrix&, const Matrix&, std::size_t, std::size_t, Matrix&,
                     std::span<float>)>
void bm_attention(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const std::size_t heads = 8, hd = 64;
  const auto q = random_matrix(t, heads * hd, 1), k = random_matrix(t, heads * hd, 2),
             v = random_matrix(t, heads * hd, 3);
  Matrix out(t, heads * hd);
  for (auto _ : state) {
    Fn(q, k, v, heads, hd, out, {});
    benchmark::DoNotOptimize(out.data.data());
  }
}

void bm_collect_stats(benchmark::State& state) {
  const auto model = random_model(toy::tiny_config(48), 7);
  CalibSet calib;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 32; ++i) {
    std::vector<Token> s(64);
    for (auto& tok : s) tok = static_cast<Token>(rng() % 48);
    calib.samples.push_back(std::move(s));
  }
  for (auto _ : state) benchmark::DoNotOptimize(collect_stats(model, calib).token_count);
}

}  // namespace

BENCHMARK_TEMPLATE(bm_matmul, kernels::matmul)->Arg(128)->Arg(256);
BENCHMARK_TEMPLATE(bm_matmul, kernels::ref::matmul)->Arg(128)->Arg(256);
BENCHMARK_TEMPLATE(bm_attention, kernels::causal_attention)->Arg(128)->Arg(512);
BENCHMARK_TEMPLATE(bm_attention, kernels::ref::causal_attention)->Arg(128)->Arg(512);
BENCHMARK(bm_collect_stats);

BENCHMARK_MAIN();
