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

#include "obfcheck/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "obfcheck/errors.hpp"

namespace obfcheck {

namespace {

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(std::string_view s, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(s[at + i])) << (8 * i);
  return v;
}

void put_f32_le(std::string& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(char((u >> (8 * i)) & 0xff));
}

float get_f32_le(const char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= std::uint32_t(std::uint8_t(p[i])) << (8 * i);
  return std::bit_cast<float>(u);
}

Json shape_json(const Shape& s) {
  Json a = Json::array();
  for (auto d : s) a.push_back(d);
  return a;
}

}  // namespace

Model Checkpoint::model() const {
  Model m = build_model(spec, 0);
  m.params = params;
  return m;
}

Json spec_to_json(const ModelSpec& spec) {
  Json j;
  j["architecture"] = std::string(to_string(spec.arch));
  j["input_shape"] = shape_json(spec.input_shape);
  j["classes"] = spec.classes;
  j["widths"] = shape_json(spec.widths);
  j["pni"] = {{"placement", std::string(to_string(spec.pni.placement))},
              {"granularity", std::string(to_string(spec.pni.granularity))},
              {"post_activation", spec.pni.post_activation},
              {"alpha_init", spec.pni.alpha_init}};
  return j;
}

ModelSpec spec_from_json(const Json& j) {
  ModelSpec s;
  s.arch = parse_architecture(j.at("architecture").get<std::string>());
  s.input_shape = j.at("input_shape").get<Shape>();
  s.classes = j.at("classes").get<std::size_t>();
  s.widths = j.at("widths").get<std::vector<std::size_t>>();
  const Json& p = j.at("pni");
  s.pni.placement = parse_placement(p.at("placement").get<std::string>());
  s.pni.granularity = parse_granularity(p.at("granularity").get<std::string>());
  s.pni.post_activation = p.at("post_activation").get<bool>();
  s.pni.alpha_init = p.at("alpha_init").get<double>();
  return s;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Json header;
  header["format"] = "obfcheck-checkpoint";
  header["version"] = kCheckpointVersion;
  const Json spec = spec_to_json(ckpt.spec);
  for (const auto& [k, v] : spec.items()) header[k] = v;
  Json tensors = Json::array();
  for (const auto& p : ckpt.params) tensors.push_back({{"name", p.name}, {"shape", shape_json(p.value.shape())}});
  header["tensors"] = std::move(tensors);
  header["metadata"] = ckpt.metadata;
  const std::string text = header.dump();

  std::string out(kCheckpointMagic);
  put_u64_le(out, text.size());
  out += text;
  out.reserve(out.size() + 4 * ckpt.params.element_count());
  for (const auto& p : ckpt.params) {
    for (float f : p.value) put_f32_le(out, f);
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size()) throw FormatError(bytes.size(), "truncated before magic");
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) throw FormatError(0, "bad magic");
  if (bytes.size() < 16) throw FormatError(bytes.size(), "truncated header length");
  const std::uint64_t header_len = get_u64_le(bytes, 8);
  if (header_len > bytes.size() - 16) throw FormatError(bytes.size(), "truncated header");

  Json header;
  try {
    header = Json::parse(bytes.substr(16, header_len));
  } catch (const Json::parse_error& e) {
    throw FormatError(16 + e.byte, std::string("malformed header: ") + e.what());
  }

  Checkpoint ckpt;
  std::vector<std::pair<std::string, Shape>> table;
  try {
    if (header.at("format") != "obfcheck-checkpoint") throw FormatError(16, "unknown format tag");
    if (header.at("version") != kCheckpointVersion) {
      throw FormatError(16, "unsupported version " + header.at("version").dump());
    }
    ckpt.spec = spec_from_json(header);
    for (const auto& t : header.at("tensors")) {
      table.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<Shape>());
    }
    ckpt.metadata = header.value("metadata", Json::object());
  } catch (const Json::exception& e) {
    throw FormatError(16, std::string("invalid header: ") + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(16, std::string("invalid header: ") + e.what());
  }

  const Model reference = build_model(ckpt.spec, 0);
  if (table.size() != reference.params.size()) {
    throw FormatError(16, "tensor table has " + std::to_string(table.size()) + " entries, architecture needs " +
                              std::to_string(reference.params.size()));
  }
  std::size_t offset = 16 + header_len;
  std::size_t needed = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& ref = reference.params[i];
    if (table[i].first != ref.name || table[i].second != ref.value.shape()) {
      throw FormatError(16, "tensor " + std::to_string(i) + " (" + table[i].first + " " + to_string(table[i].second) +
                                ") does not match architecture (" + ref.name + " " + to_string(ref.value.shape()) +
                                ")");
    }
    needed += 4 * ref.value.size();
  }
  if (bytes.size() - offset < needed) throw FormatError(bytes.size(), "truncated payload");
  if (bytes.size() - offset > needed) throw FormatError(offset + needed, "trailing bytes after payload");

  for (const auto& [name, shape] : table) {
    std::vector<float> values(element_count(shape));
    for (auto& v : values) {
      v = get_f32_le(bytes.data() + offset);
      offset += 4;
    }
    ckpt.params.add(name, Tensor(shape, std::move(values)));
  }
  return ckpt;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(contents.data(), std::streamsize(contents.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

void require_spec(const ModelSpec& stored, const ModelSpec& expected) {
  if (stored.arch != expected.arch) throw MismatchError("architecture", "checkpoint holds " + std::string(to_string(stored.arch)));
  if (stored.input_shape != expected.input_shape) {
    throw MismatchError("input_shape", "checkpoint holds " + to_string(stored.input_shape));
  }
  if (stored.classes != expected.classes) throw MismatchError("classes", "checkpoint holds " + std::to_string(stored.classes));
  if (stored.widths != expected.widths) throw MismatchError("widths", "checkpoint holds " + to_string(stored.widths));
  if (stored.pni.placement != expected.pni.placement) {
    throw MismatchError("pni.placement", "checkpoint holds " + std::string(to_string(stored.pni.placement)));
  }
  if (stored.pni.granularity != expected.pni.granularity) {
    throw MismatchError("pni.granularity", "checkpoint holds " + std::string(to_string(stored.pni.granularity)));
  }
  if (stored.pni.post_activation != expected.pni.post_activation) {
    throw MismatchError("pni.post_activation", "differs");
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected) {
  Checkpoint c = load_checkpoint(path);
  require_spec(c.spec, expected);
  return c;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace obfcheck
