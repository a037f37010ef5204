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

#include <string>
#include <vector>

namespace rffi {

struct FrameDetection {
    std::uint64_t start_index = 0;
    double coarse_cfo_hz = 0.0;
    double fine_cfo_hz = 0.0;
    double rssi_dbm = -100.0;
    double correlation_score = 0.0;  // normalized LTF cross-correlation peak
};

/// A 16 us slice of a capture, taken verbatim.
struct Preamble {
    ComplexSignal samples;
    std::string receiver_id;
    FrameDetection detection;
};

struct DetectorConfig {
    double coarse_threshold = 0.5;
    std::size_t nms_half_window = 3;
    std::size_t fine_search = 16;
    /// Detections whose refined LTF score falls below this are discarded.
    double min_ltf_score = 0.5;
    double rssi_calibration_db = 0.0;
};

/// Coarse metric for every start n in [0, L - plen]: sum over the ten STF
/// periods of |<y_p, s_p>|, normalized by both energies. Bounded by 1.
std::vector<double> stf_metric(std::span<const cplx> capture, const ComplexSignal& ref);

/// Normalized LTF correlation of the window starting at `start`, after
/// removing `cfo_hz` from a temporary copy.
double ltf_score(std::span<const cplx> capture, std::size_t start, const ComplexSignal& ref, double cfo_hz);

std::vector<FrameDetection> detect_frames(const ComplexSignal& capture, const ComplexSignal& ref,
                                          const DetectorConfig& cfg = {});

struct CfoEstimate {
    double coarse_hz = 0.0;
    double fine_hz = 0.0;
};

/// STF autocorrelation at lag 0.8 us (coarse) and LTF autocorrelation at lag
/// 3.2 us (fine). `preamble` must hold at least one full preamble.
CfoEstimate estimate_cfo(std::span<const cplx> preamble, double sample_rate_hz);
inline CfoEstimate estimate_cfo(const Preamble& p) { return estimate_cfo(p.samples.samples, p.samples.sample_rate_hz); }

double estimate_rssi(std::span<const cplx> segment, double calibration_db = 0.0);

Preamble slice_preamble(const ComplexSignal& capture, const FrameDetection& det, std::string receiver_id = {});

/// Diagnostic only: starts of bursts whose windowed power exceeds the
/// capture's median window power by `rise_db`.
std::vector<std::uint64_t> energy_detect(const ComplexSignal& capture, double rise_db = 6.0);

}  // namespace rffi
