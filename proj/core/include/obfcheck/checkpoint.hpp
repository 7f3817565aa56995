/*
 * Copyright 2026 The obfcheck Authors.
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

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "obfcheck/model.hpp"

namespace obfcheck {

using Json = nlohmann::ordered_json;

/// On-disk layout:
///   bytes 0..7   "OBFCHK01"
///   bytes 8..15  header length L, unsigned 64-bit little-endian
///   L bytes      UTF-8 JSON header
///   payload      every parameter as little-endian float32, in header order
/// The header holds "format", "version", "architecture", "input_shape", "classes",
/// "widths", "pni" {placement, granularity, post_activation, alpha_init}, "tensors"
/// [{name, shape}] and free-form "metadata".
inline constexpr std::string_view kCheckpointMagic = "OBFCHK01";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelSpec spec;
  ParameterSet params;
  Json metadata = Json::object();

  Model model() const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError (with byte offset) on bad magic, unsupported version, malformed
/// header, shape table disagreeing with the architecture, or payload length mismatch.
Checkpoint parse_checkpoint(std::string_view bytes);

/// Atomic: writes a sibling temp file and renames it over `path`.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Loads and checks the stored architecture against `expected`; throws MismatchError
/// naming the first differing field.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected);
void require_spec(const ModelSpec& stored, const ModelSpec& expected);

Json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const Json& j);

/// FNV-1a 64 of a byte string, as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
/// Writes `contents` to a temp file next to `path`, then renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace obfcheck
