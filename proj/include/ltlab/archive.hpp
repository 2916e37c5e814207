/*
 * Copyright 2026 The ltlab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef LTLAB_ARCHIVE_HPP
#define LTLAB_ARCHIVE_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>

#include "ltlab/tensor.hpp"

namespace ltlab {

// LTKT tensor archive, all integers little-endian:
//
//   "LTKT" | u32 version | u32 entry count
//   per entry: u32 name length | name bytes (UTF-8) | u32 dtype
//              | u32 rank | u64 extent * rank | payload
//
// dtype 1 = 32-bit IEEE float (4 bytes each), 2 = unsigned byte.

inline constexpr std::uint32_t kArchiveVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 1;
inline constexpr std::uint32_t kDtypeU8 = 2;

using ArchiveValue = std::variant<Tensor, ByteTensor>;
using Archive = std::map<std::string, ArchiveValue>;

std::string serialize_archive(const Archive& archive);

/// Validates magic, version and every length field before allocating.
/// Errors carry the byte offset at which parsing failed.
Archive parse_archive(std::string_view bytes);

/// Writes to a sibling temporary file, then renames over `path`.
void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

const Tensor& archive_tensor(const Archive& archive, const std::string& name);
const ByteTensor& archive_bytes(const Archive& archive, const std::string& name);

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

} // namespace ltlab

#endif // LTLAB_ARCHIVE_HPP
