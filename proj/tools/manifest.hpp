#pragma once

#include <chrono>
#include <map>
#include <string>

#include <json.hpp>

namespace transact::cli {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// Run record written next to a run's primary artifact.
class RunManifest {
 public:
  explicit RunManifest(std::string subcommand);

  void set_config(nlohmann::json cfg) { config_ = std::move(cfg); }
  void add_seed(const std::string& name, std::uint64_t seed) { seeds_[name] = seed; }
  void add_input(const std::string& path);
  void add_output(const std::string& path);

  [[nodiscard]] nlohmann::json to_json() const;
  /// Hashes the outputs, stamps wall time and writes `path`.
  void write(const std::string& path) const;

 private:
  std::string subcommand_;
  nlohmann::json config_ = nlohmann::json::object();
  std::map<std::string, std::uint64_t> seeds_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace transact::cli
