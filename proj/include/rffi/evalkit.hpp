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
#include "rffi/dataset_io.hpp"
#include "rffi/detector.hpp"
#include "rffi/encoder.hpp"
#include "rffi/fpstore.hpp"
#include "rffi/reid.hpp"
#include "rffi/specgen.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rffi {

// ---- feature extraction ---------------------------------------------------

struct FrameFeature {
    ReducedSpectrogram spec;
    double rssi_dbm = -100.0;
    std::uint64_t start_index = 0;
};

struct ExtractStats {
    std::size_t detected = 0;
    std::size_t rejected = 0;  // equalization or slicing failures
};

/// detect -> slice -> spectrogram for one capture, keeping frames
/// [skip, skip + limit) in start order. limit 0 keeps everything.
std::vector<FrameFeature> extract_features(const ComplexSignal& capture, const CaptureMeta& meta, SpecMode mode,
                                           const SpecOptions& opt, std::size_t skip = 0, std::size_t limit = 0,
                                           ExtractStats* stats = nullptr);

// ---- metrics --------------------------------------------------------------

struct RocResult {
    std::vector<double> thresholds;  // first entry is -inf (origin)
    std::vector<double> tpr;
    std::vector<double> fpr;
    double auc = 0.0;
};

/// Known scores count as positives when D_c <= t.
RocResult roc_auc(const std::vector<double>& known_scores, const std::vector<double>& new_scores);

/// P(known < new) + P(known == new) / 2 by brute-force pairs.
double mann_whitney_auc(const std::vector<double>& known_scores, const std::vector<double>& new_scores);

struct GapRow {
    std::string label;
    double rank1 = 0.0;
    double rank2 = 0.0;
};

struct GapResult {
    std::vector<std::string> receivers;
    std::vector<GapRow> rows;
    double optimal_threshold = 0.0;
    double margin = 0.0;  // min rank-2 minus max rank-1, may be negative
    double gap = 0.0;     // max(margin, 0)
};

/// D_c of one logged candidate restricted to a receiver subset; nullopt if no overlap.
std::optional<double> subset_distance(const CandidateScore& c, const std::vector<std::string>& receivers);

/// Rank-1/rank-2 per logged observation after recomputing D_c on each subset.
std::vector<GapResult> gap_analysis(const std::vector<ReidDecision>& logs,
                                    const std::vector<std::vector<std::string>>& receiver_subsets);

/// Fraction of logged observations whose argmin candidate on the subset
/// equals the observation label.
double closed_set_accuracy(const std::vector<ReidDecision>& logs, const std::vector<std::string>& receivers);

/// Every non-empty subset of `receivers`, ordered by size then lexicographically.
std::vector<std::vector<std::string>> receiver_subsets(const std::vector<std::string>& receivers);

struct StabilityResult {
    std::vector<std::string> devices;
    std::vector<std::uint32_t> rounds;
    /// [device x round], NaN where the device is absent.
    std::vector<std::vector<double>> normalized_distance;
    std::vector<double> std_dev;  // over non-reference rounds
    double normalizer = 0.0;
    std::uint32_t reference_round = 0;
};

/// fingerprints[round][device][receiver]. Entry = mean over receivers of the
/// distance to the reference-round fingerprint, divided by the reference
/// round's mean inter-device distance (averaged over receivers).
using RoundFingerprints = std::map<std::uint32_t, std::map<std::string, std::map<std::string, std::vector<double>>>>;
StabilityResult temporal_stability(const RoundFingerprints& fingerprints, std::uint32_t reference_round);

// ---- experiments ----------------------------------------------------------

enum class EmbeddingSource { Trained, Random };

struct ExperimentPlan {
    std::string name = "experiment";
    fs::path dataset;
    std::vector<std::string> train_devices;
    std::vector<std::string> enroll_devices;
    std::vector<std::string> identify_devices;  // must be enrolled
    std::vector<std::string> new_devices;       // observed, never enrolled (open set)
    std::vector<std::string> receivers;
    std::size_t train_per_device = 200;  // per receiver capture
    std::size_t enroll_per_device = 50;
    std::size_t identify_per_device = 100;
    /// Identify frames per observation; 0 means all of a device's identify frames.
    std::size_t observation_frames = 0;
    std::vector<std::uint32_t> train_rounds{0};
    std::uint32_t enroll_round = 0;
    std::uint32_t identify_round = 1;
    SpecMode mode = SpecMode::ChInd;
    bool reduce = true;
    bool unseen = true;
    std::uint64_t seed = 0;
    std::size_t k = 10;
    /// Decision threshold recorded in the log; the midpoint gap threshold when unset.
    std::optional<double> threshold;
    EmbeddingSource embeddings = EmbeddingSource::Trained;
    /// Use this model instead of training. Relative paths resolve against the plan file.
    fs::path model;
    EncoderArchitecture arch;  // input shape is overwritten from the mode
    TripletConfig training;
    double augment_sigma = 0.0;
    std::size_t augment_replication = 1;
    /// Temporal stability: rounds to fingerprint (empty disables), reference round.
    std::vector<std::uint32_t> stability_rounds;
    std::uint32_t stability_reference = 0;
    std::vector<std::string> stability_devices;
    std::size_t stability_frames = 100;
    /// Directory relative paths resolve against; not part of the digest.
    fs::path base_dir;

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentPlan from_json(const nlohmann::json& j, const fs::path& base_dir = {});
    static ExperimentPlan load(const fs::path& path);
    std::string digest() const;
};

struct AccuracyRow {
    std::vector<std::string> receivers;
    double accuracy = 0.0;
    std::size_t observations = 0;
};

struct RocRow {
    std::vector<std::string> receivers;
    RocResult roc;
};

struct ExperimentResults {
    std::string plan_name;
    std::string plan_digest;
    std::string config_digest;
    nlohmann::json plan;
    std::vector<AccuracyRow> accuracy;
    std::vector<RocRow> roc;
    std::vector<GapResult> gaps;
    std::optional<StabilityResult> stability;
    std::vector<ReidDecision> decisions;
    nlohmann::json training;  // loss history when a model was trained
    std::optional<ReducedSpectrogram> example_spectrogram;

    bool empty() const;
};

/// Runs the plan. Writes model.rffimdl (when trained) and decisions.jsonl
/// into out_dir when it is non-empty. `config_digest` tags every artifact;
/// it defaults to the plan digest.
ExperimentResults run_experiment(const ExperimentPlan& plan, const fs::path& out_dir = {}, int jobs = 1,
                                 const std::string& config_digest = {});

/// report/summary.json, report/tables/*.csv, report/figures/*.svg under out_dir.
void export_report(const ExperimentResults& results, const fs::path& out_dir);

std::string roc_svg(const std::vector<RocRow>& rows, const std::string& title);
std::string gap_svg(const std::vector<GapResult>& gaps, const std::string& title);

/// Mean of a metric over subsets of each size, keyed by size.
std::map<std::size_t, double> mean_by_size(const std::vector<AccuracyRow>& rows);
std::map<std::size_t, double> best_by_size(const std::vector<AccuracyRow>& rows);
std::map<std::size_t, double> mean_gap_by_size(const std::vector<GapResult>& gaps);
std::map<std::size_t, double> mean_auc_by_size(const std::vector<RocRow>& rows);
std::map<std::size_t, double> best_auc_by_size(const std::vector<RocRow>& rows);

}  // namespace rffi
