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

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diffbev/tensor.hpp"

namespace diffbev {

/// Payload type codes of the archive format.
enum class DType : std::uint8_t { kF32 = 0, kU8 = 1, kI64 = 2 };

struct ArchiveEntry {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;
  std::vector<std::int64_t> i64;
};

/// Named-tensor container serialized as
///   "DBT1" | u32 count | per entry: u16 name_len, name, u8 dtype, u8 rank,
///   rank x u32 dims, row-major payload
/// with every integer and float little-endian. Entries keep insertion order.
class TensorArchive {
 public:
  void put(std::string name, const Shape& shape, std::span<const float> values);
  void put(std::string name, const Tensor<float>& t) { put(std::move(name), t.shape(), t.data()); }
  void put_text(std::string name, std::string_view text);
  void put_i64(std::string name, std::int64_t value);

  bool contains(std::string_view name) const { return find(name) != nullptr; }
  const ArchiveEntry* find(std::string_view name) const;
  const std::vector<ArchiveEntry>& entries() const { return entries_; }

  /// Throws ValidationError when missing or of the wrong dtype.
  Tensor<float> tensor(std::string_view name) const;
  std::string text(std::string_view name) const;
  std::int64_t i64(std::string_view name) const;

  std::vector<std::uint8_t> serialize() const;
  static TensorArchive deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  const ArchiveEntry& require(std::string_view name, DType dtype) const;
  void append(ArchiveEntry e);

  std::vector<ArchiveEntry> entries_;
};

}  // namespace diffbev
