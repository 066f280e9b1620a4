#pragma once

// TACTMDL1 tensor container.
//
//   bytes 0..7    magic "TACTMDL1"
//   bytes 8..15   u64 little-endian length N of the JSON header
//   bytes 16..    N bytes of UTF-8 JSON:
//                   { "format_version": 1, <metadata fields...>,
//                     "tensors": { name: {"dtype": "f32"|"f64",
//                                         "shape": [..], "offset": byte} } }
//   payloads      raw little-endian row-major data, each starting at a
//                 64-byte aligned absolute file offset.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace transact {

inline constexpr std::string_view kContainerMagic = "TACTMDL1";
inline constexpr int kContainerVersion = 1;
inline constexpr std::uint64_t kPayloadAlign = 64;

enum class DType { f32, f64 };

struct TensorEntry {
  DType dtype = DType::f32;
  std::vector<std::size_t> shape;
  std::uint64_t offset = 0;

  [[nodiscard]] std::size_t numel() const;
  [[nodiscard]] std::size_t nbytes() const;
};

struct ContainerHeader {
  nlohmann::json meta;  // every header field except "tensors"
  std::map<std::string, TensorEntry> tensors;
  std::uint64_t file_size = 0;
};

/// Parses and checks the header; every tensor's payload range is verified to
/// lie inside the file.
ContainerHeader read_container_header(const std::string& path);

class ContainerWriter {
 public:
  explicit ContainerWriter(nlohmann::json meta) : meta_(std::move(meta)) {}

  void add(const std::string& name, std::vector<std::size_t> shape, std::span<const float> data);
  void add(const std::string& name, std::vector<std::size_t> shape, std::span<const double> data);

  void write(const std::string& path) const;

 private:
  struct Pending {
    DType dtype;
    std::vector<std::size_t> shape;
    std::vector<std::uint8_t> bytes;
  };
  nlohmann::json meta_;
  std::vector<std::pair<std::string, Pending>> tensors_;
};

class ContainerReader {
 public:
  explicit ContainerReader(std::string path);

  [[nodiscard]] const ContainerHeader& header() const { return header_; }
  [[nodiscard]] const nlohmann::json& meta() const { return header_.meta; }
  [[nodiscard]] bool has(const std::string& name) const { return header_.tensors.count(name) != 0; }

  /// Reads tensor `name`, requiring exactly `shape`. Missing tensors and
  /// shape or dtype mismatches raise FormatError naming the tensor.
  [[nodiscard]] std::vector<float> read_f32(const std::string& name,
                                            const std::vector<std::size_t>& shape) const;
  [[nodiscard]] std::vector<double> read_f64(const std::string& name,
                                             const std::vector<std::size_t>& shape) const;

 private:
  const TensorEntry& entry(const std::string& name, DType dtype,
                           const std::vector<std::size_t>& shape) const;
  void read_bytes(const TensorEntry& e, void* dst) const;

  std::string path_;
  ContainerHeader header_;
};

}  // namespace transact
