#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "transact/config.hpp"
#include "transact/error.hpp"
#include "transact/model_io.hpp"

using namespace transact;

namespace {

std::string config_error(const nlohmann::json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("json round trip preserves every field") {
    auto c = testutil::small_config(3, 6, 96);
    c.has_gate = false;
    c.activation = Activation::gelu;
    c.tied_embeddings = true;
    c.rope_theta = 500000.0f;
    CHECK(config_from_json(to_json(c)) == c);
  }

  TEST_CASE("validation names the offending field") {
    const auto good = to_json(testutil::small_config());
    for (const char* field : {"n_layers", "hidden_dim", "n_heads", "head_dim", "mlp_dim", "vocab_size"}) {
      auto j = good;
      j[field] = 0;
      CHECK(config_error(j).starts_with(field));
      j.erase(field);
      CHECK(config_error(j).starts_with(field));
      j[field] = -3;
      CHECK(config_error(j).starts_with(field));
    }
    auto j = good;
    j["head_dim"] = 15;
    CHECK(config_error(j).starts_with("head_dim"));
    j = good;
    j["activation"] = "tanh";
    CHECK(config_error(j).starts_with("activation"));
    j = good;
    j["norm_eps"] = 0.0;
    CHECK(config_error(j).starts_with("norm_eps"));
    j = good;
    j["n_heads"] = 1 << 20;
    CHECK(config_error(j).starts_with("n_heads"));
  }

  TEST_CASE("zero layers only where explicitly allowed") {
    auto j = to_json(testutil::small_config());
    j["n_layers"] = 0;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
    CHECK(config_from_json(j, true).n_layers == 0);
  }

  TEST_CASE("load_config reads JSON files and container headers") {
    const auto dir = testutil::temp_dir("config");
    const auto c = testutil::small_config();
    std::ofstream((dir / "c.json").string()) << to_json(c).dump();
    CHECK(load_config((dir / "c.json").string()) == c);
    save_config_only(c, (dir / "c.model").string());
    CHECK(load_config((dir / "c.model").string()) == c);
    std::ofstream((dir / "bad.json").string()) << "{not json";
    CHECK_THROWS_AS(load_config((dir / "bad.json").string()), ConfigError);
  }
}
