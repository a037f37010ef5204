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
#include "rffi/detector.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <string>

namespace rffi {

enum class SpecMode { Raw, Equalized, ChInd, EqChInd };

const char* to_string(SpecMode mode);
SpecMode spec_mode_from_string(const std::string& name);
inline bool uses_ratio(SpecMode m) { return m == SpecMode::ChInd || m == SpecMode::EqChInd; }
inline bool uses_equalizer(SpecMode m) { return m == SpecMode::Equalized || m == SpecMode::EqChInd; }

enum class WindowKind { Hamming, Rectangular };
const char* to_string(WindowKind w);
WindowKind window_kind_from_string(const std::string& name);

struct StftConfig {
    std::size_t window_size = 80;  // N = fs / subcarrier spacing
    std::size_t hop = 8;           // R = 0.1 N
    WindowKind window = WindowKind::Hamming;
    double sample_rate_hz = 25e6;
    double subcarrier_spacing_hz = 312.5e3;

    static StftConfig for_rate(double sample_rate_hz, WindowKind window = WindowKind::Hamming);
    void validate() const;
    std::vector<double> taper() const;
};

/// Complex STFT, rows are natural DFT bins k = 0..N-1, columns are windows.
struct Spectrogram {
    Eigen::MatrixXcd values;
    StftConfig config;
};

/// Real feature matrix handed to the encoder.
struct ReducedSpectrogram {
    Eigen::MatrixXd values;
    SpecMode mode = SpecMode::ChInd;
    bool standardized = false;
    bool reduced = true;  // false keeps all N center-shifted rows
};

std::vector<cplx> normalize_power(std::span<const cplx> y);
Preamble normalize_power(const Preamble& p);

/// S(k, m) = sum_n y_n w[n - mR] exp(-j 2 pi k n / N), with n the preamble time index.
Spectrogram stft(std::span<const cplx> y, const StftConfig& cfg);

/// Q(k, m) = S(k, m+1) / S(k, m); denominators below 1e-9 in magnitude are
/// raised to 1e-9 keeping their phase.
Eigen::MatrixXcd channel_independent(const Eigen::MatrixXcd& s);

/// log10(max(|q|, 1e-12)^2) element-wise.
Eigen::MatrixXd to_log_power(const Eigen::MatrixXcd& q);

/// Whole-matrix (x - mean) / std with the population standard deviation.
Eigen::MatrixXd standardize(const Eigen::MatrixXd& q);

/// Reorders rows from natural bin order to k = -N/2 .. N/2-1.
template <typename Derived>
auto center_shift(const Eigen::MatrixBase<Derived>& m) {
    using Mat = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const Eigen::Index n = m.rows();
    Mat out(n, m.cols());
    for (Eigen::Index r = 0; r < n; ++r) out.row(r) = m.row((r + n / 2) % n);
    return out;
}

/// Row index (after center_shift) of subcarrier k.
inline std::size_t shifted_row(int k, std::size_t n) { return static_cast<std::size_t>(k + static_cast<int>(n / 2)); }

/// Keeps the 52 used subcarriers k in {-26..-1, 1..26} of a center-shifted N-row matrix.
Eigen::MatrixXd reduce_subcarriers(const Eigen::MatrixXd& q, const StftConfig& cfg);

/// One-tap zero-forcing equalization per N-sample block, with the channel
/// estimated from the two LTF symbols against the reference preamble.
/// CFO is left in place.
Preamble equalize_preamble(const Preamble& p, double epsilon = 1e-3);

struct SpecOptions {
    WindowKind window = WindowKind::Hamming;
    bool reduce = true;
};

/// equalize? -> normalize -> stft -> ratio? -> log -> center shift -> reduce -> standardize.
ReducedSpectrogram make_spectrogram(const Preamble& p, SpecMode mode, const SpecOptions& opt = {});

/// Row-major float32 dump plus `<path>.json` holding the shape.
void write_matrix_dump(const fs::path& path, const Eigen::MatrixXd& m, const nlohmann::json& extra = {});
Eigen::MatrixXd read_matrix_dump(const fs::path& path);

/// Standalone SVG heatmap (rows drawn top to bottom).
std::string heatmap_svg(const Eigen::MatrixXd& m, const std::string& title, const std::string& row_label = "subcarrier",
                        const std::string& col_label = "window");

}  // namespace rffi
