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

#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace rffi {

/// One receiver's averaged fingerprint for a device.
struct Fingerprint {
    std::vector<double> embedding;
    double rssi_dbm = -100.0;
    std::string receiver_id;
    std::uint64_t frame_count = 1;
    std::string created_at;

    void validate() const;
    bool operator==(const Fingerprint&) const = default;
};

struct DeviceRecord {
    std::string device_id;
    std::map<std::string, Fingerprint> receivers;  // keyed by receiver_id

    bool operator==(const DeviceRecord&) const = default;
};

struct Match {
    std::string device_id;
    double similarity = 0.0;
};

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

/// In-memory fingerprint database with exact per-receiver top-K search.
/// Readers share, writers are exclusive.
class FingerprintStore {
public:
    FingerprintStore() = default;
    FingerprintStore(FingerprintStore&& other) noexcept;
    FingerprintStore& operator=(FingerprintStore&& other) noexcept;

    /// Throws Conflict if the device exists and `update` is false. With
    /// `update`, the given receivers replace existing entries.
    void enroll(const std::string& device_id, const std::vector<Fingerprint>& fingerprints, bool update = false);

    std::optional<DeviceRecord> get(const std::string& device_id) const;
    std::vector<DeviceRecord> records() const;
    std::size_t size() const;
    /// Embedding dimension, 0 while empty.
    std::size_t dim() const;

    /// Exact top-K by cosine similarity, descending; ties by ascending device_id.
    std::vector<Match> query_topk(const std::vector<double>& query, const std::string& receiver_id,
                                  std::size_t k) const;

    void persist(const fs::path& path) const;
    static FingerprintStore restore(const fs::path& path);

    /// Free-form JSON persisted with the store (provenance, config digest).
    void set_metadata(nlohmann::json meta);
    nlohmann::json metadata() const;

    nlohmann::json stats() const;
    /// Records as JSON; embeddings included only when `full`.
    nlohmann::json export_json(bool full) const;

private:
    mutable std::shared_mutex mu_;
    std::map<std::string, DeviceRecord> records_;
    std::size_t dim_ = 0;
    nlohmann::json metadata_ = nlohmann::json::object();
};

}  // namespace rffi
