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

#include "rffi/detector.hpp"

#include <cmath>
#include <numeric>

namespace rffi {

namespace {

struct Timing {
    std::size_t period;     // one STF period, 0.8 us
    std::size_t stf_len;    // 8 us
    std::size_t ltf_gi;     // start of the LTF guard interval
    std::size_t ltf_sym;    // 3.2 us
    std::size_t ltf2;       // start of the second LTF symbol
    std::size_t guard;      // pairs skipped after a field boundary
    std::size_t preamble;   // 16 us
};

Timing timing(double fs) {
    auto at = [fs](double us) { return static_cast<std::size_t>(std::llround(us * 1e-6 * fs)); };
    return {at(0.8), at(8.0), at(8.0), at(3.2), at(12.8), at(0.16), at(16.0)};
}

}  // namespace

std::vector<double> stf_metric(std::span<const cplx> y, const ComplexSignal& ref) {
    const auto t = timing(ref.sample_rate_hz);
    require(ref.size() >= t.stf_len, "reference preamble too short");
    if (y.size() < t.preamble) return {};
    const std::size_t count = y.size() - t.preamble + 1;
    const auto s = ref.view();
    const double es = std::accumulate(s.begin(), s.begin() + static_cast<long>(t.stf_len), 0.0,
                                      [](double a, cplx v) { return a + std::norm(v); });
    std::vector<double> metric(count, 0.0);
    double er = 0.0;
    for (std::size_t i = 0; i < t.stf_len; ++i) er += std::norm(y[i]);
    for (std::size_t n = 0; n < count; ++n) {
        if (n > 0) er += std::norm(y[n + t.stf_len - 1]) - std::norm(y[n - 1]);
        if (er <= 1e-300) continue;
        double sum = 0.0;
        for (std::size_t p = 0; p < t.stf_len; p += t.period) {
            cplx c{};
            for (std::size_t i = p; i < p + t.period; ++i) c += y[n + i] * std::conj(s[i]);
            sum += std::abs(c);
        }
        metric[n] = std::min(1.0, sum / std::sqrt(std::max(er, 0.0) * es));
    }
    return metric;
}

double ltf_score(std::span<const cplx> y, std::size_t start, const ComplexSignal& ref, double cfo_hz) {
    const auto t = timing(ref.sample_rate_hz);
    require(start + t.preamble <= y.size(), "ltf_score window exceeds capture");
    const double w = -2.0 * kPi * cfo_hz / ref.sample_rate_hz;
    cplx acc{};
    double ey = 0.0, er = 0.0;
    for (std::size_t i = t.ltf_gi; i < t.preamble; ++i) {
        const cplx v = y[start + i] * std::polar(1.0, w * static_cast<double>(i));
        acc += v * std::conj(ref.samples[i]);
        ey += std::norm(v);
        er += std::norm(ref.samples[i]);
    }
    if (ey <= 0.0 || er <= 0.0) return 0.0;
    return std::min(1.0, std::abs(acc) / std::sqrt(ey * er));
}

CfoEstimate estimate_cfo(std::span<const cplx> y, double fs) {
    const auto t = timing(fs);
    require(y.size() >= t.preamble, "estimate_cfo needs a full preamble");
    cplx coarse{};
    for (std::size_t n = 0; n + t.period < t.stf_len; ++n) coarse += std::conj(y[n]) * y[n + t.period];
    cplx fine{};
    for (std::size_t n = t.ltf_gi + t.guard; n < t.ltf2; ++n) fine += std::conj(y[n]) * y[n + t.ltf_sym];
    if (!(std::abs(coarse) > 0.0) || !(std::abs(fine) > 0.0))
        fail(ErrorKind::Estimation, "CFO estimation on a degenerate preamble");
    CfoEstimate e;
    e.coarse_hz = std::arg(coarse) / (2.0 * kPi * static_cast<double>(t.period) / fs);
    e.fine_hz = std::arg(fine) / (2.0 * kPi * static_cast<double>(t.ltf_sym) / fs);
    return e;
}

double estimate_rssi(std::span<const cplx> segment, double calibration_db) {
    require(!segment.empty(), "estimate_rssi on an empty segment");
    const double p = mean_power(segment);
    if (!(p > 0.0)) return -100.0;
    return clamp_rssi(10.0 * std::log10(p) + calibration_db);
}

Preamble slice_preamble(const ComplexSignal& capture, const FrameDetection& det, std::string receiver_id) {
    const std::size_t plen = preamble_length(capture.sample_rate_hz);
    require(det.start_index + plen <= capture.size(), "preamble window exceeds capture at start " +
                                                          std::to_string(det.start_index));
    Preamble p;
    p.samples.sample_rate_hz = capture.sample_rate_hz;
    const auto first = capture.samples.begin() + static_cast<long>(det.start_index);
    p.samples.samples.assign(first, first + static_cast<long>(plen));
    p.receiver_id = std::move(receiver_id);
    p.detection = det;
    return p;
}

std::vector<FrameDetection> detect_frames(const ComplexSignal& capture, const ComplexSignal& ref,
                                          const DetectorConfig& cfg) {
    require(capture.sample_rate_hz == ref.sample_rate_hz, "capture and reference sample rates differ");
    const auto t = timing(ref.sample_rate_hz);
    const auto y = capture.view();
    const auto metric = stf_metric(y, ref);
    if (metric.empty()) return {};

    struct Candidate {
        std::size_t start;
        double score;
        double coarse_cfo;
    };
    std::vector<Candidate> refined;
    const std::size_t h = cfg.nms_half_window;
    for (std::size_t n = 0; n < metric.size(); ++n) {
        if (metric[n] < cfg.coarse_threshold) continue;
        bool peak = true;
        for (std::size_t m = n > h ? n - h : 0; m <= std::min(metric.size() - 1, n + h) && peak; ++m) {
            if (m < n && metric[m] >= metric[n]) peak = false;
            if (m > n && metric[m] > metric[n]) peak = false;
        }
        if (!peak) continue;

        const double coarse = estimate_cfo(y.subspan(n, t.preamble), ref.sample_rate_hz).coarse_hz;
        Candidate best{n, -1.0, coarse};
        const std::size_t lo = n > cfg.fine_search ? n - cfg.fine_search : 0;
        const std::size_t hi = std::min(metric.size() - 1, n + cfg.fine_search);
        for (std::size_t s = lo; s <= hi; ++s) {
            const double sc = ltf_score(y, s, ref, coarse);
            if (sc > best.score) best = {s, sc, coarse};
        }
        if (best.score >= cfg.min_ltf_score) refined.push_back(best);
    }

    std::stable_sort(refined.begin(), refined.end(), [](const Candidate& a, const Candidate& b) {
        return a.score != b.score ? a.score > b.score : a.start < b.start;
    });
    std::vector<Candidate> accepted;
    for (const auto& c : refined) {
        const bool clear = std::all_of(accepted.begin(), accepted.end(), [&](const Candidate& a) {
            const std::size_t d = a.start > c.start ? a.start - c.start : c.start - a.start;
            return d >= t.preamble;
        });
        if (clear) accepted.push_back(c);
    }
    std::sort(accepted.begin(), accepted.end(),
              [](const Candidate& a, const Candidate& b) { return a.start < b.start; });

    std::vector<FrameDetection> out;
    out.reserve(accepted.size());
    for (const auto& c : accepted) {
        const auto win = y.subspan(c.start, t.preamble);
        const auto cfo = estimate_cfo(win, ref.sample_rate_hz);
        out.push_back({c.start, cfo.coarse_hz, cfo.fine_hz, estimate_rssi(win, cfg.rssi_calibration_db), c.score});
    }
    return out;
}

std::vector<std::uint64_t> energy_detect(const ComplexSignal& capture, double rise_db) {
    const auto t = timing(capture.sample_rate_hz);
    const std::size_t w = t.period;
    if (capture.size() < w) return {};
    std::vector<double> power;
    for (std::size_t n = 0; n + w <= capture.size(); n += w)
        power.push_back(mean_power(capture.view().subspan(n, w)));
    auto sorted = power;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(sorted.size() / 2), sorted.end());
    const double floor = sorted[sorted.size() / 2];
    const double thr = floor * std::pow(10.0, rise_db / 10.0);
    std::vector<std::uint64_t> starts;
    bool above = false;
    for (std::size_t i = 0; i < power.size(); ++i) {
        const bool now = power[i] > thr;
        if (now && !above) starts.push_back(i * w);
        above = now;
    }
    return starts;
}

}  // namespace rffi
