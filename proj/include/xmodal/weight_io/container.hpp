#pragma once

// Single-file tensor container, format version 1. All integers are
// little-endian fixed width. Layout (see docs/checkpoint_format.md):
//
//   magic[8] = "XMODALW\0"
//   u32 format_version (= 1)
//   u32 kind
//   u32 config_length, config bytes      kind-specific fixed-width block
//   u32 metadata_length, metadata bytes  UTF-8 JSON object, may be empty
//   u32 tensor_count
//   directory, per tensor:
//     u16 name_length, name bytes, u8 dtype, u8 rank, u32 dims[rank],
//     u64 offset (from file start), u64 byte_length
//   zero padding to a 16-byte boundary, then tensor data in directory
//   order, each tensor starting on a 16-byte boundary.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "xmodal/errors.hpp"
#include "xmodal/numkit/tensor.hpp"

namespace xmodal::weight_io {

inline constexpr std::array<char, 8> kMagic{'X', 'M', 'O', 'D', 'A', 'L', 'W', '\0'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kAlignment = 16;

enum class ContainerKind : std::uint32_t {
  encoder = 1,
  parity_fixture = 2,
  embedding_cache = 3,
  probe = 4,
  lora = 5,
};

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

struct StoredTensor {
  std::string name;
  std::variant<Tensorf, Tensord> data;

  DType dtype() const { return std::holds_alternative<Tensorf>(data) ? DType::f32 : DType::f64; }
  const Shape& shape() const {
    return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, data);
  }
  template <typename T>
  Tensor<T> as() const {
    return std::visit([](const auto& t) { return t.template cast<T>(); }, data);
  }
};

struct Container {
  ContainerKind kind = ContainerKind::encoder;
  std::vector<std::uint8_t> config;
  std::string metadata;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
  const StoredTensor& get(const std::string& name) const {
    const auto* t = find(name);
    if (!t) throw CorruptCheckpointError("container has no tensor '" + name + "'");
    return *t;
  }
  void add(std::string name, Tensorf t) { tensors.push_back({std::move(name), std::move(t)}); }
  void add(std::string name, Tensord t) { tensors.push_back({std::move(name), std::move(t)}); }
};

// Little-endian byte writer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void pad_to(std::size_t alignment) {
    while (bytes_.size() % alignment) bytes_.push_back(0);
  }
  std::size_t size() const { return bytes_.size(); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked little-endian reader; running off the end is corruption.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    require(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void require(std::size_t n) const {
    if (n > bytes_.size() - pos_) {
      throw CorruptCheckpointError("container truncated: needed " + std::to_string(n) + " bytes at offset " +
                                   std::to_string(pos_) + ", file has " + std::to_string(bytes_.size()));
    }
  }
  std::uint64_t get(int n) {
    require(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> serialize(const Container& c) {
  ByteWriter w;
  w.raw(kMagic.data(), kMagic.size());
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(c.kind));
  w.u32(static_cast<std::uint32_t>(c.config.size()));
  w.raw(c.config.data(), c.config.size());
  w.u32(static_cast<std::uint32_t>(c.metadata.size()));
  w.raw(c.metadata.data(), c.metadata.size());
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));

  std::size_t directory_size = 0;
  for (const auto& t : c.tensors) directory_size += 2 + t.name.size() + 2 + 4 * t.shape().size() + 16;
  auto align = [](std::size_t n) { return (n + kAlignment - 1) / kAlignment * kAlignment; };
  std::size_t offset = align(w.size() + directory_size);
  for (const auto& t : c.tensors) {
    if (t.name.empty() || t.name.size() > 0xffff) throw FormatError("invalid tensor name '" + t.name + "'");
    const auto& shape = t.shape();
    const std::size_t length = shape_numel(shape) * dtype_size(t.dtype());
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.raw(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.dtype()));
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (std::size_t d : shape) w.u32(static_cast<std::uint32_t>(d));
    w.u64(offset);
    w.u64(length);
    offset = align(offset + length);
  }
  for (const auto& t : c.tensors) {
    w.pad_to(kAlignment);
    std::visit(
        [&w](const auto& tensor) {
          for (auto v : tensor.values()) {
            if constexpr (std::is_same_v<decltype(v), float>) w.f32(v);
            else w.f64(v);
          }
        },
        t.data);
  }
  return std::move(w.bytes());
}

inline Container parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size()) throw CorruptCheckpointError("container truncated before magic bytes");
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) throw FormatError("bad magic bytes; not an xmodal container");
  ByteReader r(bytes);
  r.take(kMagic.size());
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw FormatError("unsupported container format version " + std::to_string(version) + " (expected " +
                      std::to_string(kFormatVersion) + ")");
  }
  Container c;
  const std::uint32_t kind = r.u32();
  if (kind < 1 || kind > 5) throw FormatError("unknown container kind " + std::to_string(kind));
  c.kind = static_cast<ContainerKind>(kind);
  const auto config = r.take(r.u32());
  c.config.assign(config.begin(), config.end());
  const auto meta = r.take(r.u32());
  c.metadata.assign(meta.begin(), meta.end());
  const std::uint32_t count = r.u32();

  struct Entry {
    std::string name;
    DType dtype;
    Shape shape;
    std::uint64_t offset, length;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    const auto name = r.take(r.u16());
    e.name.assign(name.begin(), name.end());
    const std::uint8_t dtype = r.u8();
    if (dtype != 1 && dtype != 2) throw FormatError("tensor '" + e.name + "' has unknown dtype " + std::to_string(dtype));
    e.dtype = static_cast<DType>(dtype);
    const std::uint8_t rank = r.u8();
    if (rank == 0) throw CorruptCheckpointError("tensor '" + e.name + "' has rank 0");
    for (std::uint8_t k = 0; k < rank; ++k) {
      const std::uint32_t d = r.u32();
      if (d == 0) throw CorruptCheckpointError("tensor '" + e.name + "' has a zero dimension");
      e.shape.push_back(d);
    }
    e.offset = r.u64();
    e.length = r.u64();
    if (e.length != shape_numel(e.shape) * dtype_size(e.dtype)) {
      throw CorruptCheckpointError("tensor '" + e.name + "' byte length " + std::to_string(e.length) +
                                   " disagrees with shape " + shape_string(e.shape));
    }
    for (const auto& prior : entries) {
      if (prior.name == e.name) throw CorruptCheckpointError("duplicate tensor '" + e.name + "'");
    }
    entries.push_back(std::move(e));
  }
  const std::size_t header_end = r.position();

  std::vector<const Entry*> by_offset;
  for (const auto& e : entries) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(), [](auto* a, auto* b) { return a->offset < b->offset; });
  std::uint64_t cursor = header_end;
  for (const Entry* e : by_offset) {
    if (e->offset < cursor) throw CorruptCheckpointError("tensor '" + e->name + "' overlaps the header or another tensor");
    if (e->offset > bytes.size() || e->length > bytes.size() - e->offset) {
      throw CorruptCheckpointError("tensor '" + e->name + "' extends past the end of the file (truncated?)");
    }
    cursor = e->offset + e->length;
  }

  for (const auto& e : entries) {
    ByteReader data(bytes.subspan(e.offset, e.length));
    const std::size_t n = shape_numel(e.shape);
    if (e.dtype == DType::f32) {
      std::vector<float> values(n);
      for (auto& v : values) v = data.f32();
      c.tensors.push_back({e.name, Tensorf(e.shape, std::move(values))});
    } else {
      std::vector<double> values(n);
      for (auto& v : values) v = data.f64();
      c.tensors.push_back({e.name, Tensord(e.shape, std::move(values))});
    }
  }
  return c;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

// Writes through a temporary file and renames, so readers never observe a
// partially written container.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline void write_container(const std::filesystem::path& path, const Container& c) {
  write_file_atomic(path, serialize(c));
}

inline Container read_container(const std::filesystem::path& path) { return parse(read_file(path)); }

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

inline std::string file_fingerprint(const std::filesystem::path& path) { return hex64(fnv1a64(read_file(path))); }

}  // namespace xmodal::weight_io
