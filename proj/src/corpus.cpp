#include "transact/corpus.hpp"

#include <filesystem>
#include <fstream>

#include "transact/error.hpp"

namespace transact {

std::vector<Token> read_token_stream(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open token stream: " + path);
  const auto size = std::filesystem::file_size(path);
  if (size % sizeof(Token) != 0)
    throw FormatError(path + ": token stream size " + std::to_string(size) + " is not a multiple of 4");
  std::vector<Token> out(size / sizeof(Token));
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size));
  if (static_cast<std::uintmax_t>(in.gcount()) != size) throw IoError("short read: " + path);
  return out;
}

void write_token_stream(std::span<const Token> tokens, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write token stream: " + path);
  out.write(reinterpret_cast<const char*>(tokens.data()), static_cast<std::streamsize>(tokens.size_bytes()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace transact
