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
#include "rffi/specgen.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace rffi {

using Embedding = std::vector<double>;

struct EncoderArchitecture {
    int input_rows = 52;
    int input_cols = 40;
    int stem_filters = 32;
    std::vector<int> block_filters{32, 32, 64, 64};
    std::vector<int> block_strides{1, 1, 2, 2};
    int embedding_dim = 128;

    void validate() const;
    nlohmann::json to_json() const;
    static EncoderArchitecture from_json(const nlohmann::json& j);
    /// sha256 of the canonical JSON form.
    std::string digest() const;
    /// Input shape implied by a spectrogram mode and row choice at 25 Msps.
    static EncoderArchitecture for_input(int rows, int cols);
};

struct TripletConfig {
    double margin = 0.2;
    std::size_t batch_triplets = 32;
    std::size_t batches_per_epoch = 30;
    double learning_rate = 1e-3;
    std::size_t plateau_patience = 5;
    double plateau_factor = 0.5;
    std::size_t stop_patience = 10;
    std::size_t max_epochs = 200;
    std::uint64_t rng_seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static TripletConfig from_json(const nlohmann::json& j);
};

inline constexpr const char* kRowOrderReduced = "center_shifted_used52";
inline constexpr const char* kRowOrderFull = "center_shifted_full";

struct ModelWeights {
    EncoderArchitecture arch;
    SpecMode mode = SpecMode::ChInd;
    std::string row_order = kRowOrderReduced;
    std::vector<float> params;   // trainable, flat
    std::vector<float> buffers;  // normalization running statistics
    nlohmann::json training;     // informational: config and loss history

    /// sha256 over architecture digest, tags and raw tensor bytes.
    std::string weights_digest() const;
};

/// Freshly initialized weights (He-normal convolutions).
ModelWeights init_model(const EncoderArchitecture& arch, SpecMode mode, bool reduced_rows, std::uint64_t seed);

/// Names and shapes of every stored tensor, in file order.
struct TensorInfo {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t count = 0;
    bool trainable = true;
};
std::vector<TensorInfo> tensor_table(const EncoderArchitecture& arch);

/// Unit-norm embeddings, inference mode. Rejects spectrogram shape or mode
/// mismatches with both shapes in the message.
std::vector<Embedding> forward(const std::vector<ReducedSpectrogram>& batch, const ModelWeights& w, int jobs = 1);
Embedding forward_one(const ReducedSpectrogram& s, const ModelWeights& w);

/// Sum over triplets of [|a-p|^2 - |a-n|^2 + margin]_+.
double triplet_loss(const std::vector<Embedding>& anchors, const std::vector<Embedding>& positives,
                    const std::vector<Embedding>& negatives, double margin);

struct LabeledSpectrogram {
    ReducedSpectrogram spec;
    std::string label;
};

struct TrainReport {
    std::vector<double> epoch_loss;
    std::vector<double> learning_rate;
    std::size_t best_epoch = 0;
    double best_loss = 0.0;
};

ModelWeights train(const std::vector<LabeledSpectrogram>& data, const EncoderArchitecture& arch,
                   const TripletConfig& cfg, TrainReport* report = nullptr);

/// Replicates each input `replication` times; copies after the first get
/// element-wise N(0, noise_sigma^2) perturbations.
std::vector<LabeledSpectrogram> augment(const std::vector<LabeledSpectrogram>& specs, double noise_sigma,
                                        std::size_t replication, std::uint64_t seed);

void save_model(const ModelWeights& w, const fs::path& path);
ModelWeights load_model(const fs::path& path);

}  // namespace rffi
