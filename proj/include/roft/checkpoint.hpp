// Copyright 2026 The roft Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "roft/error.hpp"
#include "roft/model.hpp"

namespace roft {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are written in host order");

/// Checkpoint metadata. `paradigm` records how the encoder was pretrained
/// ("ssl", "supervised", ...); `strategy` is set for fine-tuned artifacts.
struct CheckpointMeta {
  GinConfig architecture;
  std::string paradigm;
  std::string strategy;
  std::size_t tasks = 0;
};

struct Checkpoint {
  ParamSet params;
  CheckpointMeta meta;
};

// File layout: one line of compact JSON (the manifest), a '\n', then the raw
// little-endian float64 blob. Manifest offsets are byte offsets into the blob.
inline std::string serialize_checkpoint(const ParamSet& params, const CheckpointMeta& meta) {
  nlohmann::json manifest;
  manifest["format"] = "roft-checkpoint";
  manifest["version"] = 1;
  manifest["architecture"] = {{"in_dim", meta.architecture.in_dim},
                              {"hidden", meta.architecture.hidden},
                              {"layers", meta.architecture.layers},
                              {"readout", "mean"}};
  manifest["paradigm"] = meta.paradigm;
  if (!meta.strategy.empty()) manifest["strategy"] = meta.strategy;
  if (meta.tasks) manifest["tasks"] = meta.tasks;
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : params.tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel() * sizeof(double);
  }
  manifest["params"] = std::move(entries);
  manifest["blob_bytes"] = offset;

  std::string out = manifest.dump();
  out.push_back('\n');
  const std::size_t header = out.size();
  out.resize(header + offset);
  std::size_t pos = header;
  for (const auto& [name, t] : params.tensors) {
    std::memcpy(out.data() + pos, t.values().data(), t.numel() * sizeof(double));
    pos += t.numel() * sizeof(double);
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw ParseError("checkpoint: manifest line not terminated", 1);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint manifest: ") + e.what(), 1);
  }
  if (manifest.value("format", "") != "roft-checkpoint") throw ValidationError("checkpoint: unknown format tag");
  const std::size_t blob_bytes = manifest.at("blob_bytes").get<std::size_t>();
  if (bytes.size() - nl - 1 != blob_bytes)
    throw ValidationError("checkpoint: blob is " + std::to_string(bytes.size() - nl - 1) + " bytes, manifest says " +
                          std::to_string(blob_bytes));
  const char* blob = bytes.data() + nl + 1;

  Checkpoint ck;
  const auto& arch = manifest.at("architecture");
  ck.meta.architecture = GinConfig{arch.at("in_dim").get<std::size_t>(), arch.at("hidden").get<std::size_t>(),
                                   arch.at("layers").get<std::size_t>()};
  ck.meta.paradigm = manifest.value("paradigm", "");
  ck.meta.strategy = manifest.value("strategy", "");
  ck.meta.tasks = manifest.value("tasks", std::size_t{0});
  for (const auto& e : manifest.at("params")) {
    Shape shape = e.at("shape").get<Shape>();
    const std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t n = shape_numel(shape);
    if (offset + n * sizeof(double) > blob_bytes) throw ValidationError("checkpoint: parameter extends past blob");
    std::vector<double> v(n);
    std::memcpy(v.data(), blob + offset, n * sizeof(double));
    ck.params.tensors.emplace(e.at("name").get<std::string>(), Tensor(std::move(shape), std::move(v)));
  }
  if (infer_config(ck.params) != ck.meta.architecture)
    throw ValidationError("checkpoint: parameter shapes disagree with architecture metadata");
  return ck;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void save_checkpoint(const std::string& path, const ParamSet& params, const CheckpointMeta& meta) {
  write_file(path, serialize_checkpoint(params, meta));
}

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace roft
