#pragma once

#include <span>
#include <string>
#include <vector>

#include "transact/forward.hpp"

namespace transact {

/// Token streams are flat files of u32 little-endian token ids.
std::vector<Token> read_token_stream(const std::string& path);
void write_token_stream(std::span<const Token> tokens, const std::string& path);

}  // namespace transact
