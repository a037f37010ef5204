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

#include "rffi/dataset_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>

namespace rffi {

static_assert(std::endian::native == std::endian::little,
              "capture I/O assumes a little-endian host");

using nlohmann::json;

void CaptureMeta::validate() const {
    require(sample_rate_hz > 0.0, "capture sample rate must be positive");
    if (ground_truth_frame_starts) {
        const auto& s = *ground_truth_frame_starts;
        for (std::size_t i = 1; i < s.size(); ++i)
            require(s[i] > s[i - 1], "ground-truth frame starts must be strictly increasing");
    }
}

json to_json(const CaptureMeta& meta) {
    json j;
    j["format_version"] = kCaptureFormatVersion;
    j["receiver_id"] = meta.receiver_id;
    j["emitter_id"] = meta.emitter_id ? json(*meta.emitter_id) : json(nullptr);
    j["round_index"] = meta.round_index;
    j["sample_rate_hz"] = meta.sample_rate_hz;
    j["rssi_calibration_db"] = meta.rssi_calibration_db;
    j["timestamp_utc"] = meta.timestamp_utc;
    j["ground_truth_frame_starts"] =
        meta.ground_truth_frame_starts ? json(*meta.ground_truth_frame_starts) : json(nullptr);
    return j;
}

CaptureMeta capture_meta_from_json(const json& j) {
    const auto version = j.value("format_version", std::string{});
    if (version != kCaptureFormatVersion)
        fail(ErrorKind::Version, "unsupported capture format version '" + version + "'");
    CaptureMeta m;
    try {
        m.receiver_id = j.at("receiver_id").get<std::string>();
        if (j.contains("emitter_id") && !j["emitter_id"].is_null())
            m.emitter_id = j["emitter_id"].get<std::string>();
        m.round_index = j.at("round_index").get<std::uint32_t>();
        m.sample_rate_hz = j.at("sample_rate_hz").get<double>();
        m.rssi_calibration_db = j.value("rssi_calibration_db", 0.0);
        m.timestamp_utc = j.value("timestamp_utc", std::string{});
        if (j.contains("ground_truth_frame_starts") && !j["ground_truth_frame_starts"].is_null())
            m.ground_truth_frame_starts = j["ground_truth_frame_starts"].get<std::vector<std::uint64_t>>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Corrupt, std::string("malformed capture metadata: ") + e.what());
    }
    m.validate();
    return m;
}

fs::path sidecar_path(const fs::path& capture) {
    fs::path p = capture;
    p += ".json";
    return p;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << text;
    if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

json read_json(const fs::path& path, ErrorKind missing_kind) {
    std::ifstream in(path);
    if (!in) fail(missing_kind, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Corrupt, "invalid JSON in " + path.string() + ": " + e.what());
    }
}

}  // namespace

void write_capture(const fs::path& path, const ComplexSignal& samples, const CaptureMeta& meta) {
    meta.validate();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::vector<float> buf(samples.size() * 2);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        buf[2 * i] = static_cast<float>(samples.samples[i].real());
        buf[2 * i + 1] = static_cast<float>(samples.samples[i].imag());
    }
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
    }
    json side = to_json(meta);
    side["sample_count"] = samples.size();
    write_text(sidecar_path(path), side.dump(2) + "\n");
}

CaptureMeta read_capture_meta(const fs::path& path) {
    return capture_meta_from_json(read_json(sidecar_path(path), ErrorKind::MissingSidecar));
}

std::pair<ComplexSignal, CaptureMeta> read_capture(const fs::path& path) {
    const auto side = sidecar_path(path);
    if (!fs::exists(side)) fail(ErrorKind::MissingSidecar, "missing sidecar " + side.string());
    CaptureMeta meta = read_capture_meta(path);

    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes % (2 * sizeof(float)) != 0)
        fail(ErrorKind::Truncated, path.string() + ": byte length " + std::to_string(bytes) +
                                       " is not a whole number of I/Q float pairs");
    in.seekg(0);
    std::vector<float> buf(bytes / sizeof(float));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    if (!in) fail(ErrorKind::Io, "read failed: " + path.string());

    ComplexSignal sig;
    sig.sample_rate_hz = meta.sample_rate_hz;
    sig.samples.resize(buf.size() / 2);
    for (std::size_t i = 0; i < sig.samples.size(); ++i)
        sig.samples[i] = {buf[2 * i], buf[2 * i + 1]};
    return {std::move(sig), std::move(meta)};
}

namespace {

json manifest_to_json(const DatasetManifest& m) {
    json j;
    j["version"] = m.version;
    j["scenario_digest"] = m.scenario_digest;
    j["config_digest"] = m.config_digest;
    j["scenario"] = m.scenario;
    json caps = json::array();
    for (const auto& c : m.captures) caps.push_back({{"path", c.path}, {"meta", to_json(c.meta)}});
    j["captures"] = std::move(caps);
    return j;
}

}  // namespace

void write_manifest(const fs::path& root, const DatasetManifest& manifest) {
    fs::create_directories(root);
    write_text(root / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
}

DatasetManifest load_manifest(const fs::path& root) {
    const json j = read_json(root / "manifest.json", ErrorKind::Io);
    DatasetManifest m;
    m.version = j.value("version", std::string{});
    if (m.version != kManifestFormatVersion)
        fail(ErrorKind::Version, "unsupported manifest version '" + m.version + "'");
    m.scenario_digest = j.value("scenario_digest", std::string{});
    m.config_digest = j.value("config_digest", std::string{});
    m.scenario = j.value("scenario", json(nullptr));
    for (const auto& c : j.at("captures")) {
        ManifestEntry e{c.at("path").get<std::string>(), capture_meta_from_json(c.at("meta"))};
        const fs::path bin = root / e.path;
        if (!fs::exists(bin)) fail(ErrorKind::Io, "manifest references missing capture " + bin.string());
        const json side = read_json(sidecar_path(bin), ErrorKind::MissingSidecar);
        const auto count = side.value("sample_count", std::uint64_t{0});
        const auto bytes = fs::file_size(bin);
        if (bytes != count * 2 * sizeof(float))
            fail(ErrorKind::Truncated, bin.string() + ": " + std::to_string(bytes) +
                                           " bytes disagrees with sidecar sample_count " +
                                           std::to_string(count));
        if (capture_meta_from_json(side) != e.meta)
            fail(ErrorKind::Corrupt, bin.string() + ": sidecar disagrees with manifest entry");
        m.captures.push_back(std::move(e));
    }
    return m;
}

std::string manifest_digest(const DatasetManifest& manifest) {
    return sha256_hex(manifest_to_json(manifest).dump());
}

std::string format_utc(std::int64_t unix_seconds) {
    std::time_t t = static_cast<std::time_t>(unix_seconds);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace rffi
