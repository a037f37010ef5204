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

#include "../support/oracles.hpp"
#include "../support/tmpdir.hpp"

#include <doctest.h>

#include <cmath>

using namespace rffi;

namespace {

std::vector<cplx> random_vec(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<cplx> v(n);
    for (auto& x : v) x = rng.complex_normal(1.0);
    return v;
}

Preamble as_preamble(std::vector<cplx> y, double fs = 25e6) {
    Preamble p;
    p.samples.samples = std::move(y);
    p.samples.sample_rate_hz = fs;
    return p;
}

// STFT summed term by term, no FFT.
Eigen::MatrixXcd direct_stft(const std::vector<cplx>& y, const StftConfig& cfg) {
    const auto w = cfg.taper();
    const std::size_t n = cfg.window_size;
    const std::size_t cols = (y.size() - n) / cfg.hop + 1;
    Eigen::MatrixXcd s(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols));
    for (std::size_t m = 0; m < cols; ++m)
        for (std::size_t k = 0; k < n; ++k) {
            cplx acc{};
            for (std::size_t t = m * cfg.hop; t < m * cfg.hop + n; ++t)
                acc += y[t] * w[t - m * cfg.hop] * std::polar(1.0, -2.0 * kPi * static_cast<double>(k * t) / n);
            s(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m)) = acc;
        }
    return s;
}

double mean_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).cwiseAbs().mean(); }

}  // namespace

TEST_CASE("stft config from rate") {
    const auto c = StftConfig::for_rate(25e6);
    CHECK(c.window_size == 80);
    CHECK(c.hop == 8);
    const auto c20 = StftConfig::for_rate(20e6);
    CHECK(c20.window_size == 64);
    CHECK(c20.hop == 6);
}

TEST_CASE("normalize_power") {
    const auto ref = reference_preamble(25e6).samples;
    const auto a = normalize_power(ref);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(a[i] - ref[i]) < 1e-12);
    auto scaled = ref;
    for (auto& v : scaled) v *= 7.0;
    const auto b = normalize_power(scaled);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(b[i] - a[i]) < 1e-12);
    const auto c = normalize_power(random_vec(400, 3));
    CHECK(std::abs(mean_power(c) - 1.0) < 1e-12);
    CHECK_THROWS_AS(normalize_power(std::vector<cplx>(400)), Error);
}

TEST_CASE("stft matches direct summation") {
    for (auto win : {WindowKind::Hamming, WindowKind::Rectangular})
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto y = random_vec(400, seed);
            const auto cfg = StftConfig::for_rate(25e6, win);
            const auto s = stft(y, cfg).values;
            const auto o = direct_stft(y, cfg);
            REQUIRE(s.cols() == 41);
            REQUIRE(s.rows() == 80);
            CHECK((s - o).cwiseAbs().maxCoeff() / o.cwiseAbs().maxCoeff() < 1e-9);
        }
}

TEST_CASE("stft of dc and of one subcarrier") {
    auto cfg = StftConfig::for_rate(25e6, WindowKind::Rectangular);
    const auto dc = stft(std::vector<cplx>(400, cplx{1, 0}), cfg).values;
    for (Eigen::Index m = 0; m < dc.cols(); ++m) {
        CHECK(std::abs(dc(0, m) - 80.0) < 1e-9);
        for (Eigen::Index k = 1; k < 80; ++k) CHECK(std::abs(dc(k, m)) < 1e-9);
    }
    std::vector<cplx> tone(400);
    for (std::size_t n = 0; n < 400; ++n) tone[n] = std::polar(1.0, 2 * kPi * 312.5e3 * n / 25e6);
    const auto t = stft(tone, cfg).values;
    for (Eigen::Index m = 0; m < t.cols(); ++m) {
        CHECK(std::abs(std::abs(t(1, m)) - 80.0) < 1e-9);
        for (Eigen::Index k = 0; k < 80; ++k)
            if (k != 1) CHECK(std::abs(t(k, m)) < 1e-9);
    }
    CHECK_THROWS_AS(stft(std::vector<cplx>(79), cfg), Error);
}

TEST_CASE("channel_independent algebra") {
    Eigen::MatrixXcd same(4, 3);
    for (Eigen::Index k = 0; k < 4; ++k) same.row(k).setConstant(cplx(1.0 + k, -0.5 * k));
    const auto ones = channel_independent(same);
    CHECK(ones.cols() == 2);
    CHECK((ones.array() - cplx{1, 0}).abs().maxCoeff() < 1e-12);

    const auto y = random_vec(400, 8);
    const auto s = stft(y, StftConfig::for_rate(25e6)).values;
    const auto q = channel_independent(s);
    CHECK(q.cols() == 40);
    // Q .* S(:, 0..M-2) rebuilds S(:, 1..M-1).
    const Eigen::MatrixXcd rebuilt = q.cwiseProduct(s.leftCols(40));
    CHECK((rebuilt - s.rightCols(40)).cwiseAbs().maxCoeff() / s.cwiseAbs().maxCoeff() < 1e-9);

    Rng rng(2);
    Eigen::MatrixXcd scaled = s;
    for (Eigen::Index k = 0; k < s.rows(); ++k) scaled.row(k) *= rng.complex_normal(1.0);
    const auto q2 = channel_independent(scaled);
    CHECK(((q2 - q).cwiseAbs().array() / q.cwiseAbs().array().max(1e-3)).maxCoeff() < 1e-9);

    CHECK_THROWS_AS(channel_independent(Eigen::MatrixXcd(80, 1)), Error);
}

TEST_CASE("ratio floor keeps values finite") {
    Eigen::MatrixXcd s(1, 2);
    s << cplx{0, 0}, cplx{1, 1};
    const auto q = channel_independent(s);
    CHECK(std::isfinite(std::abs(q(0, 0))));
    CHECK(std::abs(q(0, 0)) == doctest::Approx(std::sqrt(2.0) / 1e-9));
}

TEST_CASE("log power") {
    Eigen::MatrixXcd q(1, 3);
    q << cplx{1, 0}, cplx{0, 10}, cplx{0, 0};
    const auto l = to_log_power(q);
    CHECK(l(0, 0) == doctest::Approx(0.0));
    CHECK(l(0, 1) == doctest::Approx(2.0));
    CHECK(l(0, 2) == doctest::Approx(-24.0));
}

TEST_CASE("standardize") {
    Eigen::MatrixXd m(2, 2);
    m << 1, 3, 5, 7;
    const auto z = standardize(m);
    CHECK(std::abs(z.mean()) < 1e-12);
    CHECK(std::abs(std::sqrt(z.array().square().mean()) - 1.0) < 1e-12);
    CHECK(z(0, 0) < z(0, 1));
    CHECK(z(0, 1) < z(1, 0));
    CHECK(z(1, 0) < z(1, 1));
    CHECK((standardize(z) - z).cwiseAbs().maxCoeff() < 1e-9);

    Rng rng(5);
    Eigen::MatrixXd r(10, 7);
    for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = rng.normal() * 3 + 11;
    const auto rz = standardize(r);
    const double cov = ((r.array() - r.mean()) * (rz.array() - rz.mean())).mean();
    const double pearson = cov / (std::sqrt((r.array() - r.mean()).square().mean()) *
                                  std::sqrt((rz.array() - rz.mean()).square().mean()));
    CHECK(pearson == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(standardize(Eigen::MatrixXd::Constant(3, 3, 2.0)), Error);
}

TEST_CASE("subcarrier reduction keeps used tones only") {
    const auto cfg = StftConfig::for_rate(25e6);
    Eigen::MatrixXd q(80, 40);
    for (Eigen::Index r = 0; r < 80; ++r) q.row(r).setConstant(static_cast<double>(r) - 40.0);  // value = k
    const auto red = reduce_subcarriers(q, cfg);
    CHECK(red.rows() == 52);
    CHECK(red.cols() == 40);
    for (Eigen::Index r = 0; r < 52; ++r) {
        const double k = red(r, 0);
        CHECK(k != 0.0);
        CHECK(std::abs(k) <= 26.0);
    }
    CHECK(red(0, 0) == -26.0);
    CHECK(red(25, 0) == -1.0);
    CHECK(red(26, 0) == 1.0);
    CHECK(red(51, 0) == 26.0);
    CHECK_THROWS_AS(reduce_subcarriers(Eigen::MatrixXd(64, 40), cfg), Error);
}

TEST_CASE("center shift puts negative bins first") {
    Eigen::MatrixXd m(4, 1);
    m << 0, 1, 2, 3;
    const Eigen::MatrixXd s = center_shift(m);
    CHECK(s(0, 0) == 2);
    CHECK(s(1, 0) == 3);
    CHECK(s(2, 0) == 0);
    CHECK(s(3, 0) == 1);
}

TEST_CASE("make_spectrogram shapes and standardization") {
    const auto p = as_preamble(reference_preamble(25e6).samples);
    const auto ch = make_spectrogram(p, SpecMode::ChInd);
    CHECK(ch.values.rows() == 52);
    CHECK(ch.values.cols() == 40);
    CHECK(std::abs(ch.values.mean()) < 1e-6);
    CHECK(std::abs(std::sqrt(ch.values.array().square().mean()) - 1.0) < 1e-6);
    const auto raw = make_spectrogram(p, SpecMode::Raw);
    CHECK(raw.values.rows() == 52);
    CHECK(raw.values.cols() == 41);
    CHECK(make_spectrogram(p, SpecMode::EqChInd).values.cols() == 40);
    CHECK(make_spectrogram(p, SpecMode::Equalized).values.cols() == 41);
    const auto full = make_spectrogram(p, SpecMode::ChInd, {WindowKind::Hamming, false});
    CHECK(full.values.rows() == 80);
    CHECK(!full.reduced);
}

TEST_CASE("constant complex gain leaves ch_ind output unchanged") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto y = random_vec(400, seed);
        auto g = y;
        for (auto& v : g) v *= std::polar(0.7, 1.2);
        const auto a = make_spectrogram(as_preamble(y), SpecMode::ChInd);
        const auto b = make_spectrogram(as_preamble(g), SpecMode::ChInd);
        CHECK((a.values - b.values).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("cfo changes the ch_ind spectrogram more than multipath") {
    Rng rng(17);
    const auto ref = reference_preamble(25e6);
    double cfo_effect = 0, mp_effect = 0;
    const int draws = 30;
    for (int i = 0; i < draws; ++i) {
        DeviceImpairments imp = ImpairmentRanges{}.draw(rng);
        const auto base = apply_impairments(ref, imp);
        DeviceImpairments shifted = imp;
        shifted.cfo_hz += 20e3;
        const auto moved = apply_impairments(ref, shifted);
        ChannelModel ch;
        ch.taps = {cplx{1, 0}, std::polar(rng.uniform(0, 0.3), rng.uniform(0, 2 * kPi))};
        const auto faded = apply_channel(base, ch, 0).signal;
        const auto s0 = make_spectrogram(as_preamble(base.samples), SpecMode::ChInd).values;
        cfo_effect += mean_abs_diff(s0, make_spectrogram(as_preamble(moved.samples), SpecMode::ChInd).values);
        mp_effect += mean_abs_diff(s0, make_spectrogram(as_preamble(faded.samples), SpecMode::ChInd).values);
    }
    CHECK(cfo_effect / mp_effect >= 3.0);
}

TEST_CASE("equalization") {
    const auto ref = reference_preamble(25e6);
    const auto p = as_preamble(ref.samples);
    const auto id = equalize_preamble(p);
    for (std::size_t i = 0; i < 400; ++i) CHECK(std::abs(id.samples.samples[i] - ref.samples[i]) < 1e-6);

    ChannelModel half;
    half.gain_db = 20 * std::log10(0.5);
    const auto attenuated = apply_channel(ref, half, 0).signal;
    const auto eq = normalize_power(equalize_preamble(as_preamble(attenuated.samples)).samples.samples);
    for (std::size_t i = 0; i < 400; ++i) CHECK(std::abs(eq[i] - ref.samples[i]) < 1e-3);

    ChannelModel two;
    two.taps = {cplx{1, 0}, cplx{0.3, 0}};
    const auto faded = apply_channel(ref, two, 0).signal;
    const auto cfg = StftConfig::for_rate(25e6);
    // Distortion is measured on the used-subcarrier rows of the complex STFT.
    auto used = [&](const std::vector<cplx>& y) {
        const Eigen::MatrixXcd s = center_shift(stft(normalize_power(y), cfg).values);
        Eigen::MatrixXcd out(52, s.cols());
        Eigen::Index r = 0;
        for (int k = -26; k <= 26; ++k)
            if (k != 0) out.row(r++) = s.row(static_cast<Eigen::Index>(shifted_row(k, 80)));
        return out;
    };
    const auto clean = used(ref.samples);
    const auto before = used(faded.samples);
    const auto after = used(equalize_preamble(as_preamble(faded.samples)).samples.samples);
    const double d_before = (before - clean).norm();
    const double d_after = (after - clean).norm();
    MESSAGE("two-tap distortion before/after: " << d_before << " / " << d_after);
    CHECK(d_before / d_after >= 10.0);
}

TEST_CASE("equalization refuses noise") {
    try {
        equalize_preamble(as_preamble(random_vec(400, 1)));
        FAIL("expected failure");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::EqualizationFailed);
    }
}

TEST_CASE("pipeline is deterministic") {
    const auto y = random_vec(400, 44);
    const auto a = make_spectrogram(as_preamble(y), SpecMode::ChInd).values;
    const auto b = make_spectrogram(as_preamble(y), SpecMode::ChInd).values;
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
}

TEST_CASE("matrix dump round trip and heatmap") {
    TempDir dir;
    Eigen::MatrixXd m(3, 2);
    m << 1, 2, 3, 4, 5, 6.5;
    write_matrix_dump(dir.path / "m.f32", m);
    CHECK(fs::file_size(dir.path / "m.f32") == 24);
    CHECK(read_matrix_dump(dir.path / "m.f32") == m);
    const auto svg = heatmap_svg(m, "t");
    CHECK(svg.find("<svg") == 0);
    CHECK(svg.find("<rect") != std::string::npos);
}
