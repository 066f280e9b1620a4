#include "transact/container.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "transact/error.hpp"

static_assert(std::endian::native == std::endian::little, "TACTMDL1 I/O assumes a little-endian host");

namespace transact {
namespace {

std::string_view dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

std::uint64_t align_up(std::uint64_t v) { return (v + kPayloadAlign - 1) / kPayloadAlign * kPayloadAlign; }

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace

std::size_t TensorEntry::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t TensorEntry::nbytes() const { return numel() * dtype_size(dtype); }

ContainerHeader read_container_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  ContainerHeader h;
  h.file_size = std::filesystem::file_size(path);

  char magic[8] = {};
  in.read(magic, 8);
  if (in.gcount() != 8 || std::string_view(magic, 8) != kContainerMagic)
    throw FormatError(path + ": bad magic (expected TACTMDL1)");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  if (in.gcount() != 8) throw FormatError(path + ": truncated header length");
  if (16 + len > h.file_size) throw FormatError(path + ": truncated JSON header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": header is not valid JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("format_version") || !j["format_version"].is_number_integer())
    throw FormatError(path + ": header lacks format_version");
  if (j["format_version"].get<int>() != kContainerVersion)
    throw FormatError(path + ": unsupported format_version " + j["format_version"].dump());

  if (j.contains("tensors")) {
    for (const auto& [name, t] : j["tensors"].items()) {
      TensorEntry e;
      try {
        const auto dt = t.at("dtype").get<std::string>();
        if (dt == "f32") e.dtype = DType::f32;
        else if (dt == "f64") e.dtype = DType::f64;
        else throw FormatError(path + ": tensor '" + name + "' has unsupported dtype " + dt);
        e.shape = t.at("shape").get<std::vector<std::size_t>>();
        e.offset = t.at("offset").get<std::uint64_t>();
      } catch (const nlohmann::json::exception& ex) {
        throw FormatError(path + ": malformed directory entry for '" + name + "': " + ex.what());
      }
      if (e.offset % kPayloadAlign != 0)
        throw FormatError(path + ": tensor '" + name + "' payload is not 64-byte aligned");
      if (e.offset + e.nbytes() > h.file_size)
        throw FormatError(path + ": truncated payload for tensor '" + name + "'");
      h.tensors.emplace(name, std::move(e));
    }
    j.erase("tensors");
  }
  h.meta = std::move(j);
  return h;
}

void ContainerWriter::add(const std::string& name, std::vector<std::size_t> shape,
                          std::span<const float> data) {
  Pending p{DType::f32, std::move(shape), std::vector<std::uint8_t>(data.size_bytes())};
  std::memcpy(p.bytes.data(), data.data(), data.size_bytes());
  tensors_.emplace_back(name, std::move(p));
}

void ContainerWriter::add(const std::string& name, std::vector<std::size_t> shape,
                          std::span<const double> data) {
  Pending p{DType::f64, std::move(shape), std::vector<std::uint8_t>(data.size_bytes())};
  std::memcpy(p.bytes.data(), data.data(), data.size_bytes());
  tensors_.emplace_back(name, std::move(p));
}

void ContainerWriter::write(const std::string& path) const {
  // Offsets depend on the header length, which depends on the offsets'
  // digit counts; iterate until the layout is stable.
  nlohmann::json header = meta_;
  header["format_version"] = kContainerVersion;
  std::uint64_t payload_start = 0;
  std::string text;
  for (int pass = 0; pass < 8; ++pass) {
    nlohmann::json dir = nlohmann::json::object();
    std::uint64_t off = payload_start;
    for (const auto& [name, p] : tensors_) {
      off = align_up(off);
      dir[name] = {{"dtype", dtype_name(p.dtype)}, {"shape", p.shape}, {"offset", off}};
      off += p.bytes.size();
    }
    header["tensors"] = dir;
    text = header.dump();
    const std::uint64_t start = align_up(16 + text.size());
    if (start == payload_start) break;
    payload_start = start;
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write file: " + path);
  out.write(kContainerMagic.data(), 8);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::uint64_t pos = 16 + text.size();
  const char zeros[kPayloadAlign] = {};
  for (const auto& [name, p] : tensors_) {
    const std::uint64_t target = align_up(pos);
    out.write(zeros, static_cast<std::streamsize>(target - pos));
    out.write(reinterpret_cast<const char*>(p.bytes.data()), static_cast<std::streamsize>(p.bytes.size()));
    pos = target + p.bytes.size();
  }
  if (!out) throw IoError("write failed: " + path);
}

ContainerReader::ContainerReader(std::string path)
    : path_(std::move(path)), header_(read_container_header(path_)) {}

const TensorEntry& ContainerReader::entry(const std::string& name, DType dtype,
                                          const std::vector<std::size_t>& shape) const {
  const auto it = header_.tensors.find(name);
  if (it == header_.tensors.end()) throw FormatError(path_ + ": missing tensor '" + name + "'");
  const TensorEntry& e = it->second;
  if (e.dtype != dtype)
    throw FormatError(path_ + ": tensor '" + name + "' has dtype " + std::string(dtype_name(e.dtype)) +
                      ", expected " + std::string(dtype_name(dtype)));
  if (e.shape != shape)
    throw FormatError(path_ + ": tensor '" + name + "' has shape " + shape_str(e.shape) + ", header config implies " +
                      shape_str(shape));
  return e;
}

void ContainerReader::read_bytes(const TensorEntry& e, void* dst) const {
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path_);
  in.seekg(static_cast<std::streamoff>(e.offset));
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(e.nbytes()));
  if (static_cast<std::size_t>(in.gcount()) != e.nbytes()) throw FormatError(path_ + ": truncated payload");
}

std::vector<float> ContainerReader::read_f32(const std::string& name,
                                             const std::vector<std::size_t>& shape) const {
  const auto& e = entry(name, DType::f32, shape);
  std::vector<float> out(e.numel());
  read_bytes(e, out.data());
  return out;
}

std::vector<double> ContainerReader::read_f64(const std::string& name,
                                              const std::vector<std::size_t>& shape) const {
  const auto& e = entry(name, DType::f64, shape);
  std::vector<double> out(e.numel());
  read_bytes(e, out.data());
  return out;
}

}  // namespace transact
