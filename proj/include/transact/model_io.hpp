#pragma once

#include <string>

#include "transact/model.hpp"

namespace transact {

/// Writes `model` to a TACTMDL1 container. A config-only model produces a
/// header with an empty tensor directory.
void save_model(const ModelWeights& model, const std::string& path);
void save_config_only(const ModelConfig& cfg, const std::string& path);

/// Loads a model. Config-only files yield a model whose config_only() is
/// true; forward() rejects such models.
ModelWeights load_model(const std::string& path);

}  // namespace transact
