// Copyright 2026 The diffbev Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "diffbev/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "diffbev/error.hpp"

namespace diffbev {

namespace {

constexpr char kMagic[4] = {'D', 'B', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

template <typename T>
void write_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T read() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  void read_into(void* dst, std::size_t n) {
    need(n);
    if (n) std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ValidationError("tensor archive truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t element_size(DType d) {
  switch (d) {
    case DType::kF32: return 4;
    case DType::kU8: return 1;
    case DType::kI64: return 8;
  }
  throw ValidationError("unknown dtype code");
}

}  // namespace

void TensorArchive::append(ArchiveEntry e) {
  if (e.name.size() > 0xFFFF) throw ValidationError("archive entry name too long: " + e.name);
  if (e.shape.size() > 0xFF) throw ValidationError("archive entry rank too large: " + e.name);
  if (contains(e.name)) throw ValidationError("duplicate archive entry: " + e.name);
  entries_.push_back(std::move(e));
}

void TensorArchive::put(std::string name, const Shape& shape, std::span<const float> values) {
  if (numel(shape) != values.size()) throw ValidationError("archive entry " + name + ": shape/value count mismatch");
  ArchiveEntry e;
  e.name = std::move(name);
  e.dtype = DType::kF32;
  e.shape = shape;
  e.f32.assign(values.begin(), values.end());
  append(std::move(e));
}

void TensorArchive::put_text(std::string name, std::string_view text) {
  ArchiveEntry e;
  e.name = std::move(name);
  e.dtype = DType::kU8;
  e.shape = {text.size()};
  e.u8.assign(text.begin(), text.end());
  append(std::move(e));
}

void TensorArchive::put_i64(std::string name, std::int64_t value) {
  ArchiveEntry e;
  e.name = std::move(name);
  e.dtype = DType::kI64;
  e.shape = {1};
  e.i64 = {value};
  append(std::move(e));
}

const ArchiveEntry* TensorArchive::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const ArchiveEntry& TensorArchive::require(std::string_view name, DType dtype) const {
  const auto* e = find(name);
  if (!e) throw ValidationError("archive has no entry named " + std::string(name));
  if (e->dtype != dtype) throw ValidationError("archive entry " + std::string(name) + " has unexpected dtype");
  return *e;
}

Tensor<float> TensorArchive::tensor(std::string_view name) const {
  const auto& e = require(name, DType::kF32);
  return Tensor<float>(e.shape, e.f32);
}

std::string TensorArchive::text(std::string_view name) const {
  const auto& e = require(name, DType::kU8);
  return std::string(e.u8.begin(), e.u8.end());
}

std::int64_t TensorArchive::i64(std::string_view name) const {
  const auto& e = require(name, DType::kI64);
  if (e.i64.size() != 1) throw ValidationError("archive entry " + std::string(name) + " is not a scalar");
  return e.i64[0];
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    switch (e.dtype) {
      case DType::kF32:
        for (float v : e.f32) write_le<float>(out, v);
        break;
      case DType::kU8:
        out.insert(out.end(), e.u8.begin(), e.u8.end());
        break;
      case DType::kI64:
        for (auto v : e.i64) write_le<std::int64_t>(out, v);
        break;
    }
  }
  return out;
}

TensorArchive TensorArchive::deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  r.read_into(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw ValidationError("not a DBT1 tensor archive");
  const auto count = r.read<std::uint32_t>();
  TensorArchive archive;
  for (std::uint32_t i = 0; i < count; ++i) {
    ArchiveEntry e;
    const auto name_len = r.read<std::uint16_t>();
    e.name.resize(name_len);
    r.read_into(e.name.data(), name_len);
    const auto code = r.read<std::uint8_t>();
    if (code > 2) throw ValidationError("archive entry " + e.name + ": unknown dtype code " + std::to_string(code));
    e.dtype = static_cast<DType>(code);
    const auto rank = r.read<std::uint8_t>();
    e.shape.resize(rank);
    for (auto& d : e.shape) d = r.read<std::uint32_t>();
    const std::size_t n = numel(e.shape);
    const std::size_t bytes_needed = n * element_size(e.dtype);
    switch (e.dtype) {
      case DType::kF32:
        e.f32.resize(n);
        r.read_into(e.f32.data(), bytes_needed);
        break;
      case DType::kU8:
        e.u8.resize(n);
        r.read_into(e.u8.data(), bytes_needed);
        break;
      case DType::kI64:
        e.i64.resize(n);
        r.read_into(e.i64.data(), bytes_needed);
        break;
    }
    archive.append(std::move(e));
  }
  if (!r.done()) throw ValidationError("tensor archive has trailing bytes");
  return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("failed writing " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace diffbev
