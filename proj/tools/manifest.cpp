#include "manifest.hpp"

#include <fstream>

#include "transact/error.hpp"
#include "transact/hash.hpp"

namespace transact::cli {

RunManifest::RunManifest(std::string subcommand)
    : subcommand_(std::move(subcommand)), start_(std::chrono::steady_clock::now()) {}

void RunManifest::add_input(const std::string& path) { inputs_[path] = sha256_file(path); }

void RunManifest::add_output(const std::string& path) { outputs_.push_back(path); }

nlohmann::json RunManifest::to_json() const {
  nlohmann::json outputs = nlohmann::json::object();
  for (const auto& p : outputs_) outputs[p] = sha256_file(p);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  return {{"subcommand", subcommand_}, {"toolkit_version", kToolkitVersion},
          {"config", config_},         {"seeds", seeds_},
          {"inputs", inputs_},         {"outputs", outputs},
          {"wall_time_s", wall}};
}

void RunManifest::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << to_json().dump(2) << '\n';
}

}  // namespace transact::cli
