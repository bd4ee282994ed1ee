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

// A saved model is a parameter bundle plus model.json describing the host
// network configuration.

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tcm/bundle.hpp"
#include "tcm/synth.hpp"

namespace tcm {

inline HostVariant parse_variant(const std::string& s) {
  if (s == "on") return HostVariant::tcm;
  if (s == "off") return HostVariant::baseline;
  if (s == "temporal") return HostVariant::temporal_conv;
  throw ConfigError("unknown host variant '" + s + "' (expected on, off or temporal)");
}

inline nlohmann::json to_json(const ToyNetConfig& c, DType dtype) {
  return {{"variant", to_string(c.variant)},  {"classes", c.classes},
          {"frames", c.frames},               {"height", c.height},
          {"width", c.width},                 {"channels", c.channels},
          {"tcm_mid_channels", c.tcm_mid_channels},
          {"temporal_kernel", c.temporal_kernel}, {"dtype", dtype_name(dtype)}};
}

inline ToyNetConfig toynet_config_from_json(const nlohmann::json& j) {
  ToyNetConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.classes = j.at("classes").get<std::size_t>();
  c.frames = j.at("frames").get<std::size_t>();
  c.height = j.at("height").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  c.tcm_mid_channels = j.at("tcm_mid_channels").get<std::size_t>();
  c.temporal_kernel = j.at("temporal_kernel").get<std::size_t>();
  c.validate();
  return c;
}

template <Real T>
void save_model(const std::filesystem::path& dir, const ToyNet<T>& net) {
  save_bundle(dir, net.params);
  std::ofstream out(dir / "model.json", std::ios::binary);
  if (!out) throw FormatError("cannot write " + (dir / "model.json").string());
  out << to_json(net.config, dtype_of<T>()).dump(2) << '\n';
}

inline ToyNetConfig read_model_config(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw FormatError("missing model.json in " + dir.string());
  try {
    return toynet_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed model.json: " + std::string(e.what()));
  }
}

template <Real T>
ToyNet<T> load_model(const std::filesystem::path& dir) {
  ToyNet<T> net = make_toynet<T>(read_model_config(dir), 0);
  load_bundle(dir, net.params);
  return net;
}

}  // namespace tcm
