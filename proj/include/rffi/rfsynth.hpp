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

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

namespace rffi {

/// Transmitter hardware impairments, applied in the order
/// clock -> IQ imbalance -> PA -> CFO.
struct DeviceImpairments {
    double cfo_hz = 0.0;
    double iq_gain_ratio = 1.0;
    double iq_phase_rad = 0.0;
    cplx pa_a3{0.0, 0.0};
    double clock_ppm = 0.0;

    void validate() const;
    bool operator==(const DeviceImpairments&) const = default;
};

/// Synthetic draw ranges for impairments. These are artifact defaults chosen
/// for separability, not measurements of any real hardware.
struct ImpairmentRanges {
    double cfo_max_hz = 50e3;
    double gain_min = 0.95;
    double gain_max = 1.05;
    double phase_max_rad = 0.05;
    double pa_max = 0.05;
    double ppm_max = 20.0;

    DeviceImpairments draw(Rng& rng) const;
};

struct ChannelModel {
    std::vector<cplx> taps{cplx{1.0, 0.0}};
    double gain_db = 0.0;
    double snr_db = std::numeric_limits<double>::infinity();

    void validate() const;
};

/// How channels are re-drawn for rounds after the first when
/// `round_channel_redraw` is set.
struct ChannelRedraw {
    std::vector<double> excess_tap_max{0.3, 0.15};
    double gain_jitter_db = 3.0;
};

struct Emitter {
    std::string device_id;
    DeviceImpairments impairments;
    /// Positive control for stability experiments: new impairments each round.
    bool redraw_impairments_each_round = false;
};

struct ReceiverSpec {
    std::string receiver_id;
    std::map<std::string, ChannelModel> channels;  // keyed by device_id
};

struct SynthScenario {
    std::vector<Emitter> emitters;
    std::vector<ReceiverSpec> receivers;
    std::size_t frames_per_pair = 10;
    std::size_t rounds = 1;
    bool round_channel_redraw = false;
    std::uint64_t seed = 0;
    double sample_rate_hz = 25e6;
    ChannelRedraw redraw;
    ImpairmentRanges impairment_ranges;
    std::int64_t start_unix_s = 1721347200;  // 2024-07-19T00:00:00Z
    double round_gap_minutes = 10.0;

    void validate() const;
};

nlohmann::json to_json(const SynthScenario& s);
SynthScenario scenario_from_json(const nlohmann::json& j);
std::string scenario_digest(const SynthScenario& s);

/// Standard legacy L-STF + L-LTF (16 us) at 20 or 25 Msps, unit mean power.
/// The 25 Msps waveform is a 5/4 windowed-sinc resampling of the 20 Msps one.
ComplexSignal reference_preamble(double sample_rate_hz);

/// Windowed-sinc rational resampler by up/down (Kaiser window, beta 8,
/// 16 input taps per side, cutoff at the lower Nyquist rate).
std::vector<cplx> resample_rational(std::span<const cplx> x, int up, int down);

/// Band-limited resampling so that output sample n reads input time n*(1+ppm*1e-6).
std::vector<cplx> resample_clock(std::span<const cplx> x, double ppm);

ComplexSignal apply_impairments(const ComplexSignal& clean, const DeviceImpairments& imp);

struct ChannelOutput {
    ComplexSignal signal;
    double rssi_dbm = -100.0;
};

/// Length-preserving FIR, path gain and AWGN at the requested post-channel SNR.
ChannelOutput apply_channel(const ComplexSignal& signal, const ChannelModel& ch, std::uint64_t noise_seed);

/// Channel used for link (emitter, receiver) in `round`.
ChannelModel channel_for_round(const SynthScenario& s, std::size_t round, std::size_t emitter_index,
                               std::size_t receiver_index);
DeviceImpairments impairments_for_round(const SynthScenario& s, std::size_t round, std::size_t emitter_index);

/// One capture: leading noise gap, then frames each followed by a gap of at
/// least two preamble lengths. Returns the samples and ground-truth starts.
struct SynthCapture {
    ComplexSignal samples;
    std::vector<std::uint64_t> frame_starts;
};
SynthCapture synth_capture(const SynthScenario& s, std::size_t round, std::size_t emitter_index,
                           std::size_t receiver_index);

/// Writes `<out>/round_###/<emitter>__<receiver>.iq` for every
/// (round, emitter, receiver) plus `manifest.json`.
DatasetManifest synth_dataset(const SynthScenario& s, const fs::path& out_dir, int jobs = 1,
                              const std::string& config_digest = {});

struct RandomScenarioOptions {
    std::size_t devices = 8;
    std::size_t receivers = 3;
    std::size_t frames = 100;
    std::size_t rounds = 1;
    bool redraw = true;
    std::uint64_t seed = 0;
    std::string device_prefix = "dev";
    /// Mean path gain per receiver, worst first; cycled when more receivers are requested.
    std::vector<double> receiver_gain_db{-72.0, -60.0, -48.0};
    double noise_floor_dbm = -90.0;
    double shadowing_db = 2.0;
    ImpairmentRanges ranges;
    ChannelRedraw multipath;
};

/// Draws devices and link budgets. SNR follows gain against a fixed noise floor.
SynthScenario random_scenario(const RandomScenarioOptions& opt);

}  // namespace rffi
