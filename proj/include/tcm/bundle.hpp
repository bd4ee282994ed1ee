// Copyright 2026 The TCM Authors. All Rights Reserved.
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

// Parameter bundle: a directory holding one TSR1 file per named parameter and
// a manifest `manifest.tsv` with lines `name<TAB>filename<TAB>shape`, shape
// written as extents joined by 'x' (e.g. 16x6).

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "tcm/params.hpp"
#include "tcm/tsr_io.hpp"

namespace tcm {

inline constexpr const char* kManifestName = "manifest.tsv";

inline std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

struct ManifestEntry {
  std::string name;
  std::string filename;
  std::string shape;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestName);
  if (!in) throw FormatError("missing bundle manifest in " + dir.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!std::getline(ls, e.name, '\t') || !std::getline(ls, e.filename, '\t') ||
        !std::getline(ls, e.shape)) {
      throw FormatError("malformed manifest line: " + line);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

template <class P>
void save_bundle(const std::filesystem::path& dir, const P& params) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / kManifestName, std::ios::binary);
  if (!manifest) throw FormatError("cannot write manifest in " + dir.string());
  for_each_param(params, [&](const std::string& name, const auto& t) {
    const std::string file = name + ".tsr";
    save_tsr(dir / file, t);
    manifest << name << '\t' << file << '\t' << shape_token(t.shape()) << '\n';
  });
}

/// Fills `params` (already shaped) from a bundle. Every parameter must be
/// present with a matching shape.
template <class P>
void load_bundle(const std::filesystem::path& dir, P& params) {
  std::map<std::string, ManifestEntry> by_name;
  for (auto& e : read_manifest(dir)) by_name.emplace(e.name, e);
  for_each_param(params, [&](const std::string& name, auto& t) {
    using Elem = typename std::decay_t<decltype(t)>::value_type;
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("bundle " + dir.string() + " lacks " + name);
    Tensor<Elem> loaded = load_tsr_as<Elem>(dir / it->second.filename);
    if (loaded.shape() != t.shape()) {
      throw FormatError("bundle parameter " + name + " has shape " + to_string(loaded.shape()) +
                        ", expected " + to_string(t.shape()));
    }
    t = std::move(loaded);
  });
}

}  // namespace tcm
