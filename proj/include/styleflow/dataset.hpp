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

// Paired (source, target) frames. On disk a dataset is either a pair of
// directories whose PNG files are matched by file stem, or a manifest.json
// listing the pairs, their split and the mapping direction.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "styleflow/error.hpp"
#include "styleflow/image.hpp"
#include "styleflow/image_io.hpp"

namespace styleflow {

enum class Split { kTrain, kTest };
// forward_tm maps source -> target as listed (e.g. HDR -> SDR); inverse_tm
// swaps the roles of every pair.
enum class Direction { kForwardTm, kInverseTm };

inline std::string split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }
inline std::string direction_name(Direction d) {
  return d == Direction::kForwardTm ? "forward_tm" : "inverse_tm";
}
inline Direction parse_direction(const std::string& s) {
  if (s == "forward_tm") return Direction::kForwardTm;
  if (s == "inverse_tm") return Direction::kInverseTm;
  throw FormatError("unknown direction '" + s + "'");
}

struct PairEntry {
  std::string id;
  std::filesystem::path source;
  std::filesystem::path target;
  Split split = Split::kTrain;
};

struct PairedDataset {
  std::vector<PairEntry> pairs;
  Direction direction = Direction::kForwardTm;
  std::vector<std::string> unmatched;  // stems present on only one side

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (pairs[i].split == s) out.push_back(i);
    return out;
  }
};

// Train count for n pairs under the 80/20 rule (at least one train pair).
inline std::size_t train_count(std::size_t n) {
  if (n == 0) return 0;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n))));
}

// Deterministic 80/20 assignment: a seeded shuffle of the (sorted) pair
// order, first 80% train.
inline std::vector<Split> assign_splits(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Split> out(n, Split::kTest);
  const std::size_t ntrain = train_count(n);
  for (std::size_t k = 0; k < ntrain; ++k) out[order[k]] = Split::kTrain;
  return out;
}

inline void set_direction(PairedDataset& ds, Direction d) {
  if (ds.direction == d) return;
  for (auto& p : ds.pairs) std::swap(p.source, p.target);
  ds.direction = d;
}

namespace detail {
inline std::map<std::string, std::filesystem::path> png_stems(const std::filesystem::path& dir) {
  std::map<std::string, std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.emplace(e.path().stem().string(), e.path());
  }
  return out;
}
}  // namespace detail

// Pairs files of the two directories by stem. Stems found on one side only
// are listed in `unmatched`.
inline PairedDataset build_dataset(const std::filesystem::path& source_dir,
                                   const std::filesystem::path& target_dir,
                                   std::uint64_t split_seed,
                                   Direction direction = Direction::kForwardTm) {
  for (const auto& d : {source_dir, target_dir})
    if (!std::filesystem::is_directory(d)) throw IoError(d.string() + ": not a directory");
  const auto src = detail::png_stems(source_dir);
  const auto tgt = detail::png_stems(target_dir);
  PairedDataset ds;
  for (const auto& [stem, path] : src) {
    if (auto it = tgt.find(stem); it != tgt.end()) ds.pairs.push_back({stem, path, it->second});
    else ds.unmatched.push_back(stem);
  }
  for (const auto& [stem, path] : tgt)
    if (!src.count(stem)) ds.unmatched.push_back(stem);
  if (ds.pairs.empty())
    throw IoError("no matching pairs between " + source_dir.string() + " and " +
                  target_dir.string());
  const auto splits = assign_splits(ds.pairs.size(), split_seed);
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) ds.pairs[i].split = splits[i];
  set_direction(ds, direction);
  return ds;
}

// --- manifest ---------------------------------------------------------------

inline nlohmann::json manifest_json(const PairedDataset& ds, const std::filesystem::path& base = {}) {
  nlohmann::json pairs = nlohmann::json::array();
  auto rel = [&](const std::filesystem::path& p) {
    return base.empty() ? p.generic_string() : std::filesystem::relative(p, base).generic_string();
  };
  for (const auto& p : ds.pairs)
    pairs.push_back({{"id", p.id}, {"source", rel(p.source)}, {"target", rel(p.target)},
                     {"split", split_name(p.split)}});
  return {{"format", "styleflow-manifest"}, {"version", 1},
          {"direction", direction_name(ds.direction)}, {"pairs", pairs}};
}

inline void save_manifest(const PairedDataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError(path.string() + ": cannot write manifest");
  os << manifest_json(ds, path.parent_path()).dump(2) << '\n';
}

inline PairedDataset load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path.string() + ": cannot open manifest");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "styleflow-manifest") throw FormatError(path.string() + ": not a manifest");
  PairedDataset ds;
  ds.direction = parse_direction(j.value("direction", "forward_tm"));
  const auto base = path.parent_path();
  for (const auto& p : j.at("pairs")) {
    PairEntry e;
    e.id = p.at("id").get<std::string>();
    e.source = base / p.at("source").get<std::string>();
    e.target = base / p.at("target").get<std::string>();
    const auto s = p.value("split", "train");
    if (s != "train" && s != "test") throw FormatError("manifest: bad split '" + s + "'");
    e.split = s == "train" ? Split::kTrain : Split::kTest;
    ds.pairs.push_back(std::move(e));
  }
  if (ds.pairs.empty()) throw FormatError(path.string() + ": manifest has no pairs");
  return ds;
}

// A directory with manifest.json, or with source/ and target/ subdirectories.
// `swap_roles` exchanges source and target of every pair (inverse tone
// mapping from a forward-listed dataset).
inline PairedDataset open_dataset(const std::filesystem::path& dir, std::uint64_t split_seed = 0,
                                  bool swap_roles = false) {
  if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  PairedDataset ds = std::filesystem::exists(dir / "manifest.json")
                         ? load_manifest(dir / "manifest.json")
                         : build_dataset(dir / "source", dir / "target", split_seed);
  if (swap_roles)
    set_direction(ds, ds.direction == Direction::kForwardTm ? Direction::kInverseTm
                                                            : Direction::kForwardTm);
  return ds;
}

// --- in-memory frames -------------------------------------------------------

struct FramePair {
  std::string id;
  ImageBuffer source;
  ImageBuffer target;
};

struct PairedFrames {
  std::vector<FramePair> frames;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  Direction direction = Direction::kForwardTm;

  std::vector<std::size_t> all() const {
    std::vector<std::size_t> out(frames.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
    return out;
  }
};

// Loads every pair; dimension mismatches are collected and reported together.
inline PairedFrames load_frames(const PairedDataset& ds) {
  PairedFrames out;
  out.direction = ds.direction;
  std::vector<std::string> mismatched;
  for (const auto& p : ds.pairs) {
    FramePair f{p.id, load_image(p.source).image, load_image(p.target).image};
    if (!f.source.same_size(f.target)) {
      mismatched.push_back(p.id + " (" + std::to_string(f.source.width()) + "x" +
                           std::to_string(f.source.height()) + " vs " +
                           std::to_string(f.target.width()) + "x" +
                           std::to_string(f.target.height()) + ")");
      continue;
    }
    (p.split == Split::kTrain ? out.train : out.test).push_back(out.frames.size());
    out.frames.push_back(std::move(f));
  }
  if (!mismatched.empty()) {
    std::string msg = "pair dimension mismatch:";
    for (const auto& m : mismatched) msg += " " + m;
    throw ShapeError(msg);
  }
  return out;
}

}  // namespace styleflow
