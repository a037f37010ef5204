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

#include "rffi/specgen.hpp"
#include "rffi/rfsynth.hpp"

#include "fft.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace rffi {

const char* to_string(SpecMode mode) {
    switch (mode) {
        case SpecMode::Raw: return "raw";
        case SpecMode::Equalized: return "equalized";
        case SpecMode::ChInd: return "ch_ind";
        case SpecMode::EqChInd: return "eq_ch_ind";
    }
    return "?";
}

SpecMode spec_mode_from_string(const std::string& name) {
    if (name == "raw") return SpecMode::Raw;
    if (name == "equalized") return SpecMode::Equalized;
    if (name == "ch_ind") return SpecMode::ChInd;
    if (name == "eq_ch_ind") return SpecMode::EqChInd;
    fail(ErrorKind::InvalidInput, "unknown spectrogram mode '" + name + "'");
}

const char* to_string(WindowKind w) { return w == WindowKind::Hamming ? "hamming" : "rectangular"; }

WindowKind window_kind_from_string(const std::string& name) {
    if (name == "hamming") return WindowKind::Hamming;
    if (name == "rectangular") return WindowKind::Rectangular;
    fail(ErrorKind::InvalidInput, "unknown window '" + name + "'");
}

StftConfig StftConfig::for_rate(double fs, WindowKind window) {
    StftConfig c;
    c.sample_rate_hz = fs;
    c.window = window;
    c.window_size = static_cast<std::size_t>(std::llround(fs / c.subcarrier_spacing_hz));
    c.hop = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(c.window_size)));
    return c;
}

void StftConfig::validate() const {
    require(window_size >= 2 && hop >= 1, "stft window and hop must be positive");
}

std::vector<double> StftConfig::taper() const {
    std::vector<double> w(window_size, 1.0);
    if (window == WindowKind::Hamming)
        for (std::size_t i = 0; i < window_size; ++i)
            w[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(window_size - 1));
    return w;
}

std::vector<cplx> normalize_power(std::span<const cplx> y) {
    const double p = y.empty() ? 0.0 : mean_power(y);
    require(p > 0.0, "normalize_power: zero-energy input");
    const double s = 1.0 / std::sqrt(p);
    std::vector<cplx> out(y.begin(), y.end());
    for (auto& v : out) v *= s;
    return out;
}

Preamble normalize_power(const Preamble& p) {
    Preamble out = p;
    out.samples.samples = normalize_power(p.samples.samples);
    return out;
}

Spectrogram stft(std::span<const cplx> y, const StftConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.window_size;
    require(n <= y.size(), "stft: window size " + std::to_string(n) + " exceeds input length " +
                               std::to_string(y.size()));
    const std::size_t cols = (y.size() - n) / cfg.hop + 1;
    const auto w = cfg.taper();
    Spectrogram s;
    s.config = cfg;
    s.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols));
    std::vector<cplx> block(n);
    for (std::size_t m = 0; m < cols; ++m) {
        const std::size_t off = m * cfg.hop;
        for (std::size_t i = 0; i < n; ++i) block[i] = y[off + i] * w[i];
        const auto spec = detail::fft(block);
        for (std::size_t k = 0; k < n; ++k) {
            // Shift the local DFT to the preamble's time origin.
            const double ph = -2.0 * kPi * static_cast<double>((k * off) % n) / static_cast<double>(n);
            s.values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m)) = spec[k] * std::polar(1.0, ph);
        }
    }
    return s;
}

Eigen::MatrixXcd channel_independent(const Eigen::MatrixXcd& s) {
    require(s.cols() >= 2, "channel_independent needs at least two windows");
    constexpr double floor = 1e-9;
    Eigen::MatrixXcd q(s.rows(), s.cols() - 1);
    for (Eigen::Index m = 0; m + 1 < s.cols(); ++m)
        for (Eigen::Index k = 0; k < s.rows(); ++k) {
            cplx den = s(k, m);
            const double mag = std::abs(den);
            if (mag < floor) den = mag > 0.0 ? den * (floor / mag) : cplx{floor, 0.0};
            q(k, m) = s(k, m + 1) / den;
        }
    return q;
}

Eigen::MatrixXd to_log_power(const Eigen::MatrixXcd& q) {
    Eigen::MatrixXd out(q.rows(), q.cols());
    for (Eigen::Index j = 0; j < q.cols(); ++j)
        for (Eigen::Index i = 0; i < q.rows(); ++i) {
            const double mag = std::max(std::abs(q(i, j)), 1e-12);
            out(i, j) = std::log10(mag * mag);
        }
    return out;
}

Eigen::MatrixXd standardize(const Eigen::MatrixXd& q) {
    require(q.size() > 0, "standardize: empty matrix");
    const double mean = q.mean();
    const double var = (q.array() - mean).square().mean();
    const double sd = std::sqrt(var);
    require(sd > 0.0 && std::isfinite(sd), "standardize: matrix has zero variance");
    return ((q.array() - mean) / sd).matrix();
}

Eigen::MatrixXd reduce_subcarriers(const Eigen::MatrixXd& q, const StftConfig& cfg) {
    const auto n = static_cast<Eigen::Index>(cfg.window_size);
    require(q.rows() == n, "reduce_subcarriers expects " + std::to_string(n) + " rows, got " +
                               std::to_string(q.rows()));
    require(n >= 54, "reduce_subcarriers needs at least 54 bins");
    Eigen::MatrixXd out(52, q.cols());
    Eigen::Index r = 0;
    for (int k = -26; k <= 26; ++k) {
        if (k == 0) continue;
        out.row(r++) = q.row(static_cast<Eigen::Index>(shifted_row(k, cfg.window_size)));
    }
    return out;
}

namespace {

const ComplexSignal& reference_for(double fs) {
    static std::mutex mu;
    static std::map<double, ComplexSignal> cache;
    std::lock_guard lock(mu);
    auto it = cache.find(fs);
    if (it == cache.end()) it = cache.emplace(fs, reference_preamble(fs)).first;
    return it->second;
}

}  // namespace

Preamble equalize_preamble(const Preamble& p, double epsilon) {
    const double fs = p.samples.sample_rate_hz;
    const auto& ref = reference_for(fs);
    const auto plen = preamble_length(fs);
    require(p.samples.size() == plen, "equalize_preamble: preamble must hold " + std::to_string(plen) + " samples");
    const auto y = p.samples.view();

    // Correlation check on a CFO-compensated scratch copy only.
    const double cfo = estimate_cfo(y, fs).coarse_hz;
    const double score = ltf_score(y, 0, ref, cfo);
    if (score < 0.3)
        fail(ErrorKind::EqualizationFailed, "LTF correlation " + std::to_string(score) + " below 0.3");

    const auto n = static_cast<std::size_t>(std::llround(3.2e-6 * fs));
    const auto l1 = static_cast<std::size_t>(std::llround(9.6e-6 * fs));
    const auto l2 = l1 + n;
    auto spectrum = [n](std::span<const cplx> x, std::size_t at) { return detail::fft(x.subspan(at, n)); };
    const auto y1 = spectrum(y, l1), y2 = spectrum(y, l2);
    const auto r1 = spectrum(ref.view(), l1), r2 = spectrum(ref.view(), l2);

    const int ni = static_cast<int>(n);
    auto bin = [ni](int k) { return static_cast<std::size_t>((k + ni) % ni); };
    std::vector<cplx> h(n, cplx{});
    for (int k = -26; k <= 26; ++k) {
        if (k == 0) continue;
        const std::size_t b = bin(k);
        h[b] = (y1[b] + y2[b]) / (r1[b] + r2[b]);
    }
    h[0] = 0.5 * (h[bin(1)] + h[bin(-1)]);
    for (int k = 27; k < ni - 26; ++k) h[static_cast<std::size_t>(k)] = k < ni / 2 ? h[bin(26)] : h[bin(-26)];
    // Refine DC and guard bins by alternating projection: the impulse
    // response is causal and confined to the guard interval, the used bins stay fixed.
    const auto gi = static_cast<std::size_t>(std::llround(0.8e-6 * fs));
    for (int it = 0; it < 50; ++it) {
        auto imp = detail::ifft(h);
        for (std::size_t l = gi; l < n; ++l) imp[l] = cplx{};
        const auto smooth = detail::fft(imp);
        h[0] = smooth[0];
        for (int k = 27; k < ni - 26; ++k) h[static_cast<std::size_t>(k)] = smooth[static_cast<std::size_t>(k)];
    }
    for (auto& v : h) {
        const double mag = std::abs(v);
        if (mag < epsilon) v = mag > 0.0 ? v * (epsilon / mag) : cplx{epsilon, 0.0};
    }

    // The block-wise division assumes each block is a cyclic convolution.
    // The leading samples of each block are corrected for the spill from the
    // previous block and for the missing wrap of the block's own tail, using
    // the time-domain response of the estimate. Two passes settle the wrap term.
    const auto taps = detail::ifft(h);
    Preamble out = p;
    auto& z = out.samples.samples;
    std::vector<cplx> prev(n, cplx{});
    for (std::size_t off = 0; off + n <= z.size(); off += n) {
        const std::vector<cplx> block(y.begin() + static_cast<long>(off), y.begin() + static_cast<long>(off + n));
        std::vector<cplx> est(n, cplx{});
        for (int pass = 0; pass < 2; ++pass) {
            auto fixed = block;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t l = i + 1; l < n; ++l) fixed[i] += taps[l] * (est[n + i - l] - prev[n + i - l]);
            auto spec = detail::fft(fixed);
            for (std::size_t k = 0; k < n; ++k) spec[k] /= h[k];
            est = detail::ifft(spec);
        }
        std::copy(est.begin(), est.end(), z.begin() + static_cast<long>(off));
        prev = est;
    }
    return out;
}

ReducedSpectrogram make_spectrogram(const Preamble& p, SpecMode mode, const SpecOptions& opt) {
    const auto cfg = StftConfig::for_rate(p.samples.sample_rate_hz, opt.window);
    const Preamble eq = uses_equalizer(mode) ? equalize_preamble(p) : p;
    const auto y = normalize_power(eq.samples.samples);
    const auto s = stft(y, cfg);
    const Eigen::MatrixXd logp = uses_ratio(mode) ? to_log_power(channel_independent(s.values)) : to_log_power(s.values);
    Eigen::MatrixXd shifted = center_shift(logp);
    ReducedSpectrogram out;
    out.mode = mode;
    out.reduced = opt.reduce;
    out.values = standardize(opt.reduce ? reduce_subcarriers(shifted, cfg) : shifted);
    out.standardized = true;
    return out;
}

void write_matrix_dump(const fs::path& path, const Eigen::MatrixXd& m, const nlohmann::json& extra) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::vector<float> buf;
    buf.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) buf.push_back(static_cast<float>(m(i, j)));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    nlohmann::json side = extra.is_object() ? extra : nlohmann::json::object();
    side["shape"] = {m.rows(), m.cols()};
    side["dtype"] = "<f4";
    side["order"] = "C";
    std::ofstream(path.string() + ".json") << side.dump(2) << "\n";
}

Eigen::MatrixXd read_matrix_dump(const fs::path& path) {
    std::ifstream side(path.string() + ".json");
    if (!side) fail(ErrorKind::MissingSidecar, "missing shape sidecar for " + path.string());
    const auto j = nlohmann::json::parse(side);
    const auto rows = j.at("shape").at(0).get<Eigen::Index>();
    const auto cols = j.at("shape").at(1).get<Eigen::Index>();
    std::vector<float> buf(static_cast<std::size_t>(rows * cols));
    std::ifstream in(path, std::ios::binary);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) fail(ErrorKind::Truncated, path.string() + " shorter than its shape");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = buf[static_cast<std::size_t>(i * cols + k)];
    return m;
}

namespace {

// Perceptually ordered blue-to-yellow ramp.
std::string ramp(double t) {
    static const double stops[5][3] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
    t = std::clamp(t, 0.0, 1.0) * 4.0;
    const int i = std::min(3, static_cast<int>(t));
    const double f = t - i;
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                  static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                  static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
    return buf;
}

}  // namespace

std::string heatmap_svg(const Eigen::MatrixXd& m, const std::string& title, const std::string& row_label,
                        const std::string& col_label) {
    const int cell = 6, left = 50, top = 30;
    const int w = left + static_cast<int>(m.cols()) * cell + 20;
    const int h = top + static_cast<int>(m.rows()) * cell + 40;
    const double lo = m.size() ? m.minCoeff() : 0.0;
    const double hi = m.size() ? m.maxCoeff() : 1.0;
    const double span = hi > lo ? hi - lo : 1.0;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<text x=\"" << left << "\" y=\"18\">" << title << "</text>\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            os << "<rect x=\"" << left + j * cell << "\" y=\"" << top + i * cell << "\" width=\"" << cell
               << "\" height=\"" << cell << "\" fill=\"" << ramp((m(i, j) - lo) / span) << "\"/>\n";
    os << "<text x=\"" << left << "\" y=\"" << h - 12 << "\">" << col_label << "</text>\n";
    os << "<text x=\"12\" y=\"" << top + m.rows() * cell / 2 << "\" transform=\"rotate(-90 12 " << top + m.rows() * cell / 2
       << ")\">" << row_label << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace rffi
