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

#include "rffi/rfsynth.hpp"

#include "fft.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <set>

namespace rffi {

using nlohmann::json;

namespace {

// Legacy L-STF and L-LTF frequency-domain symbols for subcarriers -26..26.
constexpr std::array<int, 53> kStfPattern = {
    0, 0, 1, 0, 0, 0, -1, 0, 0, 0, 1, 0, 0, 0, -1, 0, 0, 0, -1, 0, 0, 0, 1, 0, 0, 0, 0,
    0, 0, 0, -1, 0, 0, 0, -1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0};
constexpr std::array<int, 53> kLtfPattern = {
    1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 0,
    1, -1, -1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1, -1, 1, -1, 1, -1, 1, 1, 1, 1};

std::vector<cplx> ofdm_symbol(const std::array<int, 53>& pattern, cplx scale, int n) {
    std::vector<cplx> bins(static_cast<std::size_t>(n));
    for (int i = 0; i < 53; ++i) {
        const int k = i - 26;
        bins[static_cast<std::size_t>((k + n) % n)] = scale * static_cast<double>(pattern[i]);
    }
    return detail::ifft(bins);
}

std::vector<cplx> preamble_20msps() {
    const auto stf = ofdm_symbol(kStfPattern, std::sqrt(13.0 / 6.0) * cplx{1.0, 1.0}, 64);
    const auto ltf = ofdm_symbol(kLtfPattern, cplx{1.0, 0.0}, 64);
    std::vector<cplx> y;
    y.reserve(320);
    for (int i = 0; i < 160; ++i) y.push_back(stf[static_cast<std::size_t>(i % 64)]);
    for (int i = 32; i < 64; ++i) y.push_back(ltf[static_cast<std::size_t>(i)]);
    for (int rep = 0; rep < 2; ++rep) y.insert(y.end(), ltf.begin(), ltf.end());
    return y;
}

void normalize_unit_power(std::vector<cplx>& y) {
    const double p = mean_power(y);
    if (p <= 0.0) return;
    const double s = 1.0 / std::sqrt(p);
    for (auto& v : y) v *= s;
}

constexpr int kSincHalfWidth = 16;
constexpr double kKaiserBeta = 8.0;

// Windowed-sinc kernel evaluated at offset d input samples.
double sinc_kernel(double d, double cutoff) {
    if (std::abs(d) >= kSincHalfWidth) return 0.0;
    const double r = d / kSincHalfWidth;
    const double win = std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) /
                       std::cyl_bessel_i(0.0, kKaiserBeta);
    const double x = 2.0 * cutoff * d;
    const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(kPi * x) / (kPi * x);
    return 2.0 * cutoff * sinc * win;
}

cplx interpolate_at(std::span<const cplx> x, double t, double cutoff) {
    const auto n0 = static_cast<long>(std::floor(t));
    cplx acc{};
    for (long n = n0 - kSincHalfWidth + 1; n <= n0 + kSincHalfWidth; ++n) {
        if (n < 0 || n >= static_cast<long>(x.size())) continue;
        acc += x[static_cast<std::size_t>(n)] * sinc_kernel(t - static_cast<double>(n), cutoff);
    }
    return acc;
}

json complex_to_json(cplx c) { return json::array({c.real(), c.imag()}); }
cplx complex_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json channel_to_json(const ChannelModel& c) {
    json taps = json::array();
    for (auto t : c.taps) taps.push_back(complex_to_json(t));
    return {{"taps", taps},
            {"gain_db", c.gain_db},
            {"snr_db", std::isfinite(c.snr_db) ? json(c.snr_db) : json(nullptr)}};
}

ChannelModel channel_from_json(const json& j) {
    ChannelModel c;
    c.taps.clear();
    for (const auto& t : j.at("taps")) c.taps.push_back(complex_from_json(t));
    c.gain_db = j.value("gain_db", 0.0);
    c.snr_db = (j.contains("snr_db") && !j["snr_db"].is_null()) ? j["snr_db"].get<double>()
                                                                 : std::numeric_limits<double>::infinity();
    return c;
}

json impairments_to_json(const DeviceImpairments& d) {
    return {{"cfo_hz", d.cfo_hz},
            {"iq_gain_ratio", d.iq_gain_ratio},
            {"iq_phase_rad", d.iq_phase_rad},
            {"pa_a3", complex_to_json(d.pa_a3)},
            {"clock_ppm", d.clock_ppm}};
}

DeviceImpairments impairments_from_json(const json& j) {
    DeviceImpairments d;
    d.cfo_hz = j.value("cfo_hz", 0.0);
    d.iq_gain_ratio = j.value("iq_gain_ratio", 1.0);
    d.iq_phase_rad = j.value("iq_phase_rad", 0.0);
    if (j.contains("pa_a3")) d.pa_a3 = complex_from_json(j["pa_a3"]);
    d.clock_ppm = j.value("clock_ppm", 0.0);
    return d;
}

}  // namespace

void DeviceImpairments::validate() const {
    require(std::abs(cfo_hz) < 156.25e3, "cfo_hz must be below half the subcarrier spacing");
    require(iq_gain_ratio >= 0.8 && iq_gain_ratio <= 1.25, "iq_gain_ratio outside [0.8, 1.25]");
    require(std::abs(pa_a3) <= 0.1, "|pa_a3| must not exceed 0.1");
    require(std::isfinite(iq_phase_rad) && std::isfinite(clock_ppm), "impairments must be finite");
}

DeviceImpairments ImpairmentRanges::draw(Rng& rng) const {
    DeviceImpairments d;
    d.cfo_hz = rng.uniform(-cfo_max_hz, cfo_max_hz);
    d.iq_gain_ratio = rng.uniform(gain_min, gain_max);
    d.iq_phase_rad = rng.uniform(-phase_max_rad, phase_max_rad);
    d.pa_a3 = std::polar(rng.uniform(0.0, pa_max), rng.uniform(0.0, 2.0 * kPi));
    d.clock_ppm = rng.uniform(-ppm_max, ppm_max);
    return d;
}

void ChannelModel::validate() const {
    require(!taps.empty(), "channel needs at least one tap");
    double e = 0.0;
    for (auto t : taps) e += std::norm(t);
    require(e > 0.0, "channel tap energy must be positive");
    require(gain_db <= 0.0, "channel gain_db must be <= 0");
    require(!std::isnan(snr_db), "snr_db must not be NaN");
}

void SynthScenario::validate() const {
    require(sample_rate_hz == 20e6 || sample_rate_hz == 25e6, "sample rate must be 20e6 or 25e6");
    std::set<std::string> ids;
    for (const auto& e : emitters) {
        require(ids.insert(e.device_id).second, "duplicate device_id " + e.device_id);
        e.impairments.validate();
    }
    std::set<std::string> rx;
    for (const auto& r : receivers) {
        require(rx.insert(r.receiver_id).second, "duplicate receiver_id " + r.receiver_id);
        for (const auto& e : emitters) {
            auto it = r.channels.find(e.device_id);
            require(it != r.channels.end(),
                    "receiver " + r.receiver_id + " has no channel for " + e.device_id);
            it->second.validate();
        }
    }
    require(rounds >= 1, "scenario needs at least one round");
}

json to_json(const SynthScenario& s) {
    json em = json::array();
    for (const auto& e : s.emitters)
        em.push_back({{"device_id", e.device_id},
                      {"impairments", impairments_to_json(e.impairments)},
                      {"redraw_impairments_each_round", e.redraw_impairments_each_round}});
    json rx = json::array();
    for (const auto& r : s.receivers) {
        json ch = json::object();
        for (const auto& [id, c] : r.channels) ch[id] = channel_to_json(c);
        rx.push_back({{"receiver_id", r.receiver_id}, {"channels", ch}});
    }
    const auto& ir = s.impairment_ranges;
    return {{"emitters", em},
            {"receivers", rx},
            {"frames_per_pair", s.frames_per_pair},
            {"rounds", s.rounds},
            {"round_channel_redraw", s.round_channel_redraw},
            {"seed", s.seed},
            {"sample_rate_hz", s.sample_rate_hz},
            {"redraw", {{"excess_tap_max", s.redraw.excess_tap_max}, {"gain_jitter_db", s.redraw.gain_jitter_db}}},
            {"impairment_ranges",
             {{"cfo_max_hz", ir.cfo_max_hz},
              {"gain_min", ir.gain_min},
              {"gain_max", ir.gain_max},
              {"phase_max_rad", ir.phase_max_rad},
              {"pa_max", ir.pa_max},
              {"ppm_max", ir.ppm_max}}},
            {"start_unix_s", s.start_unix_s},
            {"round_gap_minutes", s.round_gap_minutes}};
}

SynthScenario scenario_from_json(const json& j) {
    SynthScenario s;
    try {
        for (const auto& e : j.at("emitters"))
            s.emitters.push_back({e.at("device_id").get<std::string>(),
                                  impairments_from_json(e.value("impairments", json::object())),
                                  e.value("redraw_impairments_each_round", false)});
        for (const auto& r : j.at("receivers")) {
            ReceiverSpec spec{r.at("receiver_id").get<std::string>(), {}};
            for (const auto& [id, c] : r.at("channels").items()) spec.channels[id] = channel_from_json(c);
            s.receivers.push_back(std::move(spec));
        }
        s.frames_per_pair = j.value("frames_per_pair", s.frames_per_pair);
        s.rounds = j.value("rounds", s.rounds);
        s.round_channel_redraw = j.value("round_channel_redraw", s.round_channel_redraw);
        s.seed = j.value("seed", s.seed);
        s.sample_rate_hz = j.value("sample_rate_hz", s.sample_rate_hz);
        if (j.contains("redraw")) {
            s.redraw.excess_tap_max = j["redraw"].value("excess_tap_max", s.redraw.excess_tap_max);
            s.redraw.gain_jitter_db = j["redraw"].value("gain_jitter_db", s.redraw.gain_jitter_db);
        }
        if (j.contains("impairment_ranges")) {
            const auto& r = j["impairment_ranges"];
            auto& ir = s.impairment_ranges;
            ir.cfo_max_hz = r.value("cfo_max_hz", ir.cfo_max_hz);
            ir.gain_min = r.value("gain_min", ir.gain_min);
            ir.gain_max = r.value("gain_max", ir.gain_max);
            ir.phase_max_rad = r.value("phase_max_rad", ir.phase_max_rad);
            ir.pa_max = r.value("pa_max", ir.pa_max);
            ir.ppm_max = r.value("ppm_max", ir.ppm_max);
        }
        s.start_unix_s = j.value("start_unix_s", s.start_unix_s);
        s.round_gap_minutes = j.value("round_gap_minutes", s.round_gap_minutes);
    } catch (const json::exception& e) {
        fail(ErrorKind::InvalidInput, std::string("malformed scenario: ") + e.what());
    }
    s.validate();
    return s;
}

std::string scenario_digest(const SynthScenario& s) { return sha256_hex(to_json(s).dump()); }

std::vector<cplx> resample_rational(std::span<const cplx> x, int up, int down) {
    require(up > 0 && down > 0, "resampling factors must be positive");
    const double cutoff = 0.5 * std::min(1.0, static_cast<double>(up) / down);
    const std::size_t out_len = x.size() * static_cast<std::size_t>(up) / static_cast<std::size_t>(down);
    std::vector<cplx> y(out_len);
    const double step = static_cast<double>(down) / up;
    for (std::size_t m = 0; m < out_len; ++m) {
        // Sample gain of the interpolator is 1 when cutoff is the input Nyquist.
        y[m] = interpolate_at(x, static_cast<double>(m) * step, cutoff) * (0.5 / cutoff);
    }
    return y;
}

std::vector<cplx> resample_clock(std::span<const cplx> x, double ppm) {
    if (ppm == 0.0 || x.empty()) return {x.begin(), x.end()};
    const double ratio = 1.0 + ppm * 1e-6;
    const auto out_len = static_cast<std::size_t>(std::floor(static_cast<double>(x.size() - 1) / ratio)) + 1;
    std::vector<cplx> y(out_len);
    for (std::size_t n = 0; n < out_len; ++n) y[n] = interpolate_at(x, static_cast<double>(n) * ratio, 0.5);
    return y;
}

ComplexSignal reference_preamble(double sample_rate_hz) {
    if (sample_rate_hz != 20e6 && sample_rate_hz != 25e6)
        fail(ErrorKind::InvalidInput, "reference preamble supports 20e6 or 25e6 sample rates only");
    auto y = preamble_20msps();
    if (sample_rate_hz == 25e6) y = resample_rational(y, 5, 4);
    normalize_unit_power(y);
    return {std::move(y), sample_rate_hz};
}

ComplexSignal apply_impairments(const ComplexSignal& clean, const DeviceImpairments& imp) {
    require(!clean.empty(), "apply_impairments: empty input");
    imp.validate();
    ComplexSignal out;
    out.sample_rate_hz = clean.sample_rate_hz;
    out.samples = resample_clock(clean.samples, imp.clock_ppm);

    const cplx rot = std::polar(imp.iq_gain_ratio, imp.iq_phase_rad);
    const cplx mu = (1.0 + rot) / 2.0;
    const cplx nu = (1.0 - rot) / 2.0;
    const double w = 2.0 * kPi * imp.cfo_hz / clean.sample_rate_hz;
    for (std::size_t n = 0; n < out.samples.size(); ++n) {
        const cplx x = out.samples[n];
        const cplx iq = mu * x + nu * std::conj(x);
        const cplx pa = iq * (1.0 + imp.pa_a3 * std::norm(iq));
        out.samples[n] = pa * std::polar(1.0, w * static_cast<double>(n));
    }
    return out;
}

ChannelOutput apply_channel(const ComplexSignal& signal, const ChannelModel& ch, std::uint64_t noise_seed) {
    require(!signal.empty(), "apply_channel: empty input");
    ch.validate();
    const double amp = std::pow(10.0, ch.gain_db / 20.0);
    ChannelOutput out;
    out.signal.sample_rate_hz = signal.sample_rate_hz;
    auto& y = out.signal.samples;
    y.assign(signal.size(), cplx{});
    for (std::size_t n = 0; n < y.size(); ++n) {
        cplx acc{};
        for (std::size_t k = 0; k < ch.taps.size() && k <= n; ++k) acc += ch.taps[k] * signal.samples[n - k];
        y[n] = acc * amp;
    }
    if (std::isfinite(ch.snr_db)) {
        const double noise_var = mean_power(y) / std::pow(10.0, ch.snr_db / 10.0);
        Rng rng(noise_seed);
        for (auto& v : y) v += rng.complex_normal(noise_var);
    }
    const double p = mean_power(y);
    out.rssi_dbm = p > 0.0 ? clamp_rssi(10.0 * std::log10(p)) : -100.0;
    return out;
}

ChannelModel channel_for_round(const SynthScenario& s, std::size_t round, std::size_t emitter_index,
                               std::size_t receiver_index) {
    const auto& base = s.receivers.at(receiver_index).channels.at(s.emitters.at(emitter_index).device_id);
    if (round == 0 || !s.round_channel_redraw) return base;
    Rng rng(derive_seed(s.seed, {round, emitter_index, receiver_index, 0xC4A77E1ULL}));
    ChannelModel c;
    c.taps = {cplx{1.0, 0.0}};
    for (double m : s.redraw.excess_tap_max) {
        const double mag = rng.uniform(0.0, m);
        c.taps.push_back(std::polar(mag, rng.uniform(0.0, 2.0 * kPi)));
    }
    const double delta = rng.uniform(-s.redraw.gain_jitter_db, s.redraw.gain_jitter_db);
    c.gain_db = std::min(0.0, base.gain_db + delta);
    c.snr_db = base.snr_db + (c.gain_db - base.gain_db);
    return c;
}

DeviceImpairments impairments_for_round(const SynthScenario& s, std::size_t round, std::size_t emitter_index) {
    const auto& e = s.emitters.at(emitter_index);
    if (round == 0 || !e.redraw_impairments_each_round) return e.impairments;
    Rng rng(derive_seed(s.seed, {round, emitter_index, 0x1A9A1EULL}));
    return s.impairment_ranges.draw(rng);
}

namespace {

const ComplexSignal& cached_reference(double fs) {
    static std::mutex mu;
    static std::map<double, ComplexSignal> cache;
    std::lock_guard lock(mu);
    auto it = cache.find(fs);
    if (it == cache.end()) it = cache.emplace(fs, reference_preamble(fs)).first;
    return it->second;
}

}  // namespace

SynthCapture synth_capture(const SynthScenario& s, std::size_t round, std::size_t emitter_index,
                           std::size_t receiver_index) {
    const std::size_t plen = preamble_length(s.sample_rate_hz);
    const ComplexSignal tx = apply_impairments(cached_reference(s.sample_rate_hz),
                                               impairments_for_round(s, round, emitter_index));
    const ChannelModel ch = channel_for_round(s, round, emitter_index, receiver_index);
    const double amp = std::pow(10.0, ch.gain_db / 20.0);

    // Noiseless received burst, including the multipath tail.
    std::vector<cplx> burst(tx.size() + ch.taps.size() - 1);
    for (std::size_t n = 0; n < burst.size(); ++n) {
        cplx acc{};
        for (std::size_t k = 0; k < ch.taps.size(); ++k)
            if (n >= k && n - k < tx.size()) acc += ch.taps[k] * tx.samples[n - k];
        burst[n] = acc * amp;
    }
    const double burst_power = mean_power(std::span<const cplx>(burst).first(tx.size()));
    // Continuous receiver noise; infinite SNR links still see a -30 dB floor.
    const double noise_var = std::isfinite(ch.snr_db) ? burst_power / std::pow(10.0, ch.snr_db / 10.0)
                                                      : burst_power * 1e-3;

    Rng rng(derive_seed(s.seed, {round, emitter_index, receiver_index, 0x5E9ULL}));
    auto gap = [&] { return 2 * plen + rng.index(plen + 1); };

    SynthCapture cap;
    std::size_t pos = gap();
    std::vector<std::pair<std::size_t, cplx>> placements;
    for (std::size_t f = 0; f < s.frames_per_pair; ++f) {
        cap.frame_starts.push_back(pos);
        placements.emplace_back(pos, std::polar(1.0, rng.uniform(0.0, 2.0 * kPi)));
        pos += tx.size() + gap();
    }
    cap.samples.sample_rate_hz = s.sample_rate_hz;
    cap.samples.samples.assign(pos, cplx{});
    for (const auto& [start, phase] : placements)
        for (std::size_t n = 0; n < burst.size(); ++n) cap.samples.samples[start + n] += phase * burst[n];
    for (auto& v : cap.samples.samples) v += rng.complex_normal(noise_var);
    return cap;
}

DatasetManifest synth_dataset(const SynthScenario& s, const fs::path& out_dir, int jobs,
                              const std::string& config_digest) {
    s.validate();
    struct Job {
        std::size_t round, emitter, receiver;
        std::string rel;
    };
    std::vector<Job> work;
    for (std::size_t r = 0; r < s.rounds; ++r)
        for (std::size_t e = 0; e < s.emitters.size(); ++e)
            for (std::size_t x = 0; x < s.receivers.size(); ++x) {
                char dir[32];
                std::snprintf(dir, sizeof dir, "round_%03zu", r);
                work.push_back({r, e, x,
                                std::string(dir) + "/" + s.emitters[e].device_id + "__" +
                                    s.receivers[x].receiver_id + ".iq"});
            }

    DatasetManifest manifest;
    manifest.scenario_digest = scenario_digest(s);
    manifest.config_digest = config_digest;
    manifest.scenario = to_json(s);
    manifest.captures.resize(work.size());
    fs::create_directories(out_dir);

    parallel_for(work.size(), jobs, [&](std::size_t i) {
        const auto& job = work[i];
        SynthCapture cap = synth_capture(s, job.round, job.emitter, job.receiver);
        CaptureMeta meta;
        meta.receiver_id = s.receivers[job.receiver].receiver_id;
        meta.emitter_id = s.emitters[job.emitter].device_id;
        meta.round_index = static_cast<std::uint32_t>(job.round);
        meta.sample_rate_hz = s.sample_rate_hz;
        meta.timestamp_utc = format_utc(
            s.start_unix_s + static_cast<std::int64_t>(std::llround(job.round * s.round_gap_minutes * 60.0)));
        meta.ground_truth_frame_starts = cap.frame_starts;
        try {
            write_capture(out_dir / job.rel, cap.samples, meta);
        } catch (const Error& e) {
            fail(e.kind(), "synth_dataset: " + std::string(e.what()));
        }
        manifest.captures[i] = {job.rel, std::move(meta)};
    });
    write_manifest(out_dir, manifest);
    return manifest;
}

SynthScenario random_scenario(const RandomScenarioOptions& opt) {
    require(opt.devices >= 1 && opt.receivers >= 1, "scenario needs devices and receivers");
    require(!opt.receiver_gain_db.empty(), "receiver_gain_db must not be empty");
    Rng rng(opt.seed);
    SynthScenario s;
    s.seed = derive_seed(opt.seed, {0x5CE7ULL});
    s.frames_per_pair = opt.frames;
    s.rounds = opt.rounds;
    s.round_channel_redraw = opt.redraw;
    s.redraw = opt.multipath;
    s.impairment_ranges = opt.ranges;
    for (std::size_t d = 0; d < opt.devices; ++d) {
        char id[64];
        std::snprintf(id, sizeof id, "%s%03zu", opt.device_prefix.c_str(), d);
        s.emitters.push_back({id, opt.ranges.draw(rng), false});
    }
    for (std::size_t r = 0; r < opt.receivers; ++r) {
        ReceiverSpec rx{"rx" + std::to_string(r + 1), {}};
        const double mean_gain = opt.receiver_gain_db[r % opt.receiver_gain_db.size()];
        for (const auto& e : s.emitters) {
            ChannelModel c;
            c.gain_db = std::min(0.0, mean_gain + rng.uniform(-opt.shadowing_db, opt.shadowing_db));
            c.snr_db = c.gain_db - opt.noise_floor_dbm;
            for (double m : opt.multipath.excess_tap_max)
                c.taps.push_back(std::polar(rng.uniform(0.0, m), rng.uniform(0.0, 2.0 * kPi)));
            rx.channels[e.device_id] = c;
        }
        s.receivers.push_back(std::move(rx));
    }
    return s;
}

}  // namespace rffi
