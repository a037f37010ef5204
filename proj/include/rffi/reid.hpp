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
#include "rffi/fpstore.hpp"

#include <json.hpp>

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace rffi {

/// Per-frame embeddings and RSSIs seen by one receiver.
struct ReceiverFrames {
    std::vector<std::vector<double>> embeddings;
    std::vector<double> rssi_dbm;
};

struct Observation {
    std::map<std::string, ReceiverFrames> receivers;
    std::uint32_t round = 0;
    std::string timestamp_utc;
    /// Ground-truth emitter when known (synthetic runs). Logged, never used to decide.
    std::string label;
};

/// Mean embedding re-normalized to unit length and mean RSSI (clamped to
/// [-100, 0] dBm). Throws Degenerate when the mean embedding vanishes.
Fingerprint aggregate_receiver(const ReceiverFrames& frames, const std::string& receiver_id,
                               const std::string& created_at = {});

/// (clamp(rssi, -100, 0) + 100) / 100
double rssi_weight(double rssi_dbm);

struct ReceiverTerm {
    std::string receiver_id;
    double distance = 0.0;
    double weight = 0.0;
};

/// Weighted mean of the terms' distances; unweighted mean when every weight is 0.
double fuse_terms(const std::vector<ReceiverTerm>& terms);

enum class RssiSource { Query, Enrolled };

struct CombinedDistance {
    double value = 0.0;
    std::vector<ReceiverTerm> terms;  // shared receivers in id order
};

/// Throws NoOverlap when the query and candidate share no receiver.
CombinedDistance combined_distance(const std::map<std::string, Fingerprint>& query, const DeviceRecord& candidate,
                                   RssiSource rssi = RssiSource::Query);

struct CandidateScore {
    std::string device_id;
    double combined = 0.0;
    std::vector<ReceiverTerm> terms;
};

struct ReidDecision {
    bool known = false;
    std::string device_id;  // match, or the newly assigned id
    double combined = 0.0;  // best candidate D_c, +inf with no candidates
    double threshold = 0.0;
    std::uint32_t round = 0;
    std::string label;
    std::vector<CandidateScore> candidates;  // ascending D_c, ties by id
    std::vector<std::string> notes;

    nlohmann::json to_json() const;
    static ReidDecision from_json(const nlohmann::json& j);
};

struct ReidConfig {
    std::size_t k = 10;
    double threshold = 0.0;  // no default; must be set by the caller
    RssiSource rssi_source = RssiSource::Query;
    /// When false, unknown observations are reported as New without enrolling.
    bool enroll_new = true;

    void validate() const;
};

/// Serializes decisions against one store so concurrent unknown
/// observations cannot double-enroll.
class Reidentifier {
public:
    Reidentifier(FingerprintStore& store, ReidConfig cfg);

    ReidDecision reidentify(const Observation& obs);
    /// Ranks every candidate without deciding or enrolling.
    std::vector<CandidateScore> rank(const Observation& obs) const;

    const ReidConfig& config() const { return cfg_; }

private:
    std::string next_id(std::uint32_t round);

    FingerprintStore& store_;
    ReidConfig cfg_;
    std::mutex commit_;
    std::map<std::uint32_t, std::uint64_t> counters_;
};

/// Aggregates every receiver of an observation.
std::map<std::string, Fingerprint> aggregate_observation(const Observation& obs);

}  // namespace rffi
