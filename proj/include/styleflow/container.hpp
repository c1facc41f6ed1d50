// Copyright 2026 The styleflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Model file layout (all integers little-endian):
//   "SFLOWMDL" | u32 version | u32 header bytes | JSON header
//   | u64 blob bytes | float32 parameters in declared order | u32 CRC-32
// The CRC covers every byte before it.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "styleflow/error.hpp"
#include "styleflow/flow.hpp"
#include "styleflow/image_io.hpp"
#include "styleflow/pcc.hpp"

namespace styleflow {

inline constexpr char kContainerMagic[8] = {'S', 'F', 'L', 'O', 'W', 'M', 'D', 'L'};
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr const char* kArrayLayout = "column-major";

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

struct ModelFile {
  FlowModel<float> model;
  nlohmann::json training;  // free-form metadata (report summary, data paths)
  std::string model_id;
};

inline nlohmann::json container_header(const FlowModel<float>& m, const nlohmann::json& training) {
  nlohmann::json h;
  h["variant"] = variant_name(m.config.variant);
  h["degree"] = m.config.degree;
  h["hidden_width"] = m.config.hidden_width;
  h["blocks"] = m.config.blocks;
  h["clamp"] = m.config.clamp;
  h["leaky_slope"] = m.config.leaky_slope;
  h["seed"] = m.config.seed;
  h["cond_len"] = m.cond_len;
  h["input_width"] = m.input_width();
  h["latent_dim"] = m.latent_dim();
  h["monomial_order"] = kMonomialOrderId;
  h["array_layout"] = kArrayLayout;
  h["actnorm_initialized"] = m.actnorm_ready();
  nlohmann::json perms = nlohmann::json::array();
  nlohmann::json splits = nlohmann::json::array();
  for (const auto& b : m.blocks) {
    perms.push_back(b.permutation);
    splits.push_back({b.coupling.n1, b.coupling.n2});
  }
  h["permutations"] = perms;
  h["coupling_splits"] = splits;
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto* p : m.parameters())
    arrays.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  h["arrays"] = arrays;
  h["training"] = training.is_null() ? nlohmann::json::object() : training;
  return h;
}

inline std::vector<std::uint8_t> serialize_model(const FlowModel<float>& m,
                                                 const nlohmann::json& training = {}) {
  const std::string header = container_header(m, training).dump();
  std::vector<std::uint8_t> out(kContainerMagic, kContainerMagic + 8);
  detail::put_le<std::uint32_t>(out, kContainerVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  std::uint64_t count = 0;
  for (const auto* p : m.parameters()) count += static_cast<std::uint64_t>(p->value.size());
  detail::put_le<std::uint64_t>(out, count * 4);
  for (const auto* p : m.parameters())
    for (Eigen::Index i = 0; i < p->value.size(); ++i)
      detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(p->value.data()[i]));
  detail::put_le<std::uint32_t>(out, detail::crc32_of(out.data(), out.size()));
  return out;
}

// The id is the stored checksum (CRC over everything before it).
inline std::string model_id_of(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw FormatError("model id: truncated file");
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", detail::get_le<std::uint32_t>(bytes.data() + bytes.size() - 4));
  return std::string("sf-") + buf;
}

inline ModelFile deserialize_model(const std::vector<std::uint8_t>& bytes, std::string_view label = "model") {
  const std::string where(label);
  if (bytes.size() < 8 + 4 + 4 + 8 + 4 || std::memcmp(bytes.data(), kContainerMagic, 8) != 0)
    throw FormatError(where + ": not a styleflow model file");
  const auto version = detail::get_le<std::uint32_t>(bytes.data() + 8);
  if (version != kContainerVersion)
    throw FormatError(where + ": unsupported container version " + std::to_string(version));
  const std::size_t body = bytes.size() - 4;
  if (detail::get_le<std::uint32_t>(bytes.data() + body) != detail::crc32_of(bytes.data(), body))
    throw FormatError(where + ": checksum mismatch");

  const auto header_len = detail::get_le<std::uint32_t>(bytes.data() + 12);
  std::size_t pos = 16;
  if (pos + header_len + 8 > body) throw FormatError(where + ": truncated header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                              bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": malformed header: " + e.what());
  }
  pos += header_len;
  const auto blob_len = detail::get_le<std::uint64_t>(bytes.data() + pos);
  pos += 8;
  if (pos + blob_len != body || blob_len % 4 != 0) throw FormatError(where + ": parameter blob size mismatch");

  ModelFile out;
  try {
    if (h.at("monomial_order").get<std::string>() != kMonomialOrderId)
      throw FormatError(where + ": unknown monomial order");
    if (h.at("array_layout").get<std::string>() != kArrayLayout)
      throw FormatError(where + ": unsupported array layout");
    FlowConfig cfg;
    cfg.variant = parse_variant(h.at("variant").get<std::string>());
    cfg.degree = h.at("degree").get<int>();
    cfg.hidden_width = h.at("hidden_width").get<int>();
    cfg.blocks = h.at("blocks").get<int>();
    cfg.clamp = h.at("clamp").get<double>();
    cfg.leaky_slope = h.at("leaky_slope").get<double>();
    cfg.seed = h.at("seed").get<std::uint64_t>();
    out.model = build_model<float>(cfg);
    const auto& perms = h.at("permutations");
    if (perms.size() != out.model.blocks.size()) throw FormatError(where + ": permutation count mismatch");
    for (std::size_t i = 0; i < perms.size(); ++i) {
      auto perm = perms[i].get<std::vector<int>>();
      if (perm.size() != out.model.blocks[i].permutation.size())
        throw FormatError(where + ": permutation size mismatch");
      out.model.blocks[i].permutation = std::move(perm);
    }
    const bool ready = h.at("actnorm_initialized").get<bool>();
    for (auto& b : out.model.blocks) b.actnorm.initialized = ready;
    out.training = h.value("training", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": malformed header: " + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(where + ": " + e.what());
  }

  auto params = out.model.parameters();
  std::uint64_t expected = 0;
  try {
    const auto& arrays = h.at("arrays");
    if (arrays.size() != params.size()) throw FormatError(where + ": array count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (arrays[i].at("rows").get<Eigen::Index>() != params[i]->value.rows() ||
          arrays[i].at("cols").get<Eigen::Index>() != params[i]->value.cols())
        throw FormatError(where + ": shape mismatch for " + params[i]->name);
      expected += static_cast<std::uint64_t>(params[i]->value.size()) * 4;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": malformed header: " + e.what());
  }
  if (expected != blob_len) throw FormatError(where + ": parameter blob size mismatch");
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i, pos += 4)
      p->value.data()[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes.data() + pos));
    p->grad.setZero(p->value.rows(), p->value.cols());
  }
  out.model_id = model_id_of(bytes);
  return out;
}

inline std::string save_model(const FlowModel<float>& m, const std::filesystem::path& path,
                              const nlohmann::json& training = {}) {
  const auto bytes = serialize_model(m, training);
  write_file_bytes(path, bytes);
  return model_id_of(bytes);
}

inline ModelFile load_model(const std::filesystem::path& path) {
  return deserialize_model(read_file_bytes(path), path.string());
}

}  // namespace styleflow
