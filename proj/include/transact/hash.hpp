#pragma once

#include <span>
#include <string>

#include "transact/model.hpp"

namespace transact {

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const std::string& path);
/// Digest over the config JSON and every weight tensor in canonical order.
std::string model_hash(const ModelWeights& model);

}  // namespace transact
