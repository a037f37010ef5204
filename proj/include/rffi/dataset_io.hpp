// SPDX-License-Identifier: Apache-2.0
//
// rffi: WiFi device fingerprinting and re-identification toolkit
// Copyright (C) 2026 The rffi Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

#include "rffi/common.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rffi {

inline constexpr const char* kCaptureFormatVersion = "1";
inline constexpr const char* kManifestFormatVersion = "1";

struct CaptureMeta {
    std::string receiver_id;
    std::optional<std::string> emitter_id;  // absent for blind captures
    std::uint32_t round_index = 0;
    double sample_rate_hz = 25e6;
    double rssi_calibration_db = 0.0;
    std::string timestamp_utc;
    std::optional<std::vector<std::uint64_t>> ground_truth_frame_starts;

    void validate() const;
    bool operator==(const CaptureMeta&) const = default;
};

nlohmann::json to_json(const CaptureMeta& meta);
CaptureMeta capture_meta_from_json(const nlohmann::json& j);

struct ManifestEntry {
    std::string path;  // relative to the dataset root
    CaptureMeta meta;
};

struct DatasetManifest {
    std::string version = kManifestFormatVersion;
    std::string scenario_digest;
    std::string config_digest;
    nlohmann::json scenario;  // generating scenario, informational
    std::vector<ManifestEntry> captures;
};

/// Sidecar path for a capture binary: `<path>.json`.
fs::path sidecar_path(const fs::path& capture);

/// Writes interleaved little-endian float32 I/Q plus the JSON sidecar.
void write_capture(const fs::path& path, const ComplexSignal& samples, const CaptureMeta& meta);

/// Reads a capture and its sidecar. Missing sidecar, odd float count and
/// unknown format versions raise distinct error kinds.
std::pair<ComplexSignal, CaptureMeta> read_capture(const fs::path& path);

CaptureMeta read_capture_meta(const fs::path& path);

void write_manifest(const fs::path& dataset_root, const DatasetManifest& manifest);

/// Loads `manifest.json` and checks that every referenced capture exists and
/// that its byte length agrees with the sample count in its sidecar.
DatasetManifest load_manifest(const fs::path& dataset_root);

/// Canonical byte-level digest of a manifest (used for determinism checks).
std::string manifest_digest(const DatasetManifest& manifest);

std::string format_utc(std::int64_t unix_seconds);

}  // namespace rffi
