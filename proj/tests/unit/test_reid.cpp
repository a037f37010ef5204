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

#include "rffi/reid.hpp"

#include <doctest.h>

#include <cmath>
#include <thread>

using namespace rffi;

namespace {

std::vector<double> unit(std::size_t d, Rng& rng) {
    std::vector<double> v(d);
    double n = 0;
    for (auto& x : v) {
        x = rng.normal();
        n += x * x;
    }
    for (auto& x : v) x /= std::sqrt(n);
    return v;
}

std::vector<double> noisy(const std::vector<double>& c, double sigma, Rng& rng) {
    auto v = c;
    double n = 0;
    for (auto& x : v) {
        x += sigma * rng.normal();
        n += x * x;
    }
    for (auto& x : v) x /= std::sqrt(n);
    return v;
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

Fingerprint fp(std::vector<double> e, std::string rx, double rssi) { return {std::move(e), rssi, std::move(rx), 1, {}}; }

Observation observe(const std::map<std::string, std::vector<double>>& centres, double sigma, std::size_t frames,
                    Rng& rng, std::uint32_t round = 0) {
    Observation o;
    o.round = round;
    for (const auto& [rx, c] : centres)
        for (std::size_t i = 0; i < frames; ++i) {
            o.receivers[rx].embeddings.push_back(noisy(c, sigma, rng));
            o.receivers[rx].rssi_dbm.push_back(-60.0);
        }
    return o;
}

}  // namespace

TEST_CASE("receiver aggregation") {
    Rng rng(1);
    const auto e = unit(8, rng);
    auto f = aggregate_receiver({{e}, {-42.0}}, "rx1");
    CHECK(f.embedding == e);
    CHECK(f.rssi_dbm == -42.0);
    CHECK(f.frame_count == 1);
    f = aggregate_receiver({{e, e}, {-40.0, -60.0}}, "rx1");
    for (std::size_t i = 0; i < e.size(); ++i) CHECK(f.embedding[i] == doctest::Approx(e[i]).epsilon(1e-12));
    CHECK(f.rssi_dbm == doctest::Approx(-50.0));
    auto neg = e;
    for (auto& x : neg) x = -x;
    try {
        aggregate_receiver({{e, neg}, {}}, "rx1");
        FAIL("expected degenerate");
    } catch (const Error& err) {
        CHECK(err.kind() == ErrorKind::Degenerate);
    }
    CHECK_THROWS_AS(aggregate_receiver({}, "rx1"), Error);

    // Averaging beats the median single frame.
    const auto centre = unit(32, rng);
    ReceiverFrames frames;
    std::vector<double> cos;
    for (int i = 0; i < 100; ++i) {
        frames.embeddings.push_back(noisy(centre, 0.3, rng));
        frames.rssi_dbm.push_back(-70);
        cos.push_back(cosine_similarity(frames.embeddings.back(), centre));
    }
    std::nth_element(cos.begin(), cos.begin() + 50, cos.end());
    CHECK(cosine_similarity(aggregate_receiver(frames, "rx1").embedding, centre) > cos[50]);
}

TEST_CASE("rssi weights") {
    CHECK(rssi_weight(-100) == 0.0);
    CHECK(rssi_weight(0) == 1.0);
    CHECK(rssi_weight(-50) == doctest::Approx(0.5));
    CHECK(rssi_weight(-130) == 0.0);
    CHECK(rssi_weight(12) == 1.0);
}

TEST_CASE("combined distance") {
    // Two receivers with hand-picked distances 0.2 and 0.6.
    const std::vector<double> base{1, 0, 0};
    const std::vector<double> d02{1 - 0.02, std::sqrt(1 - 0.98 * 0.98), 0};
    const double c06 = 1 - 0.18;
    const std::vector<double> d06{c06, 0, std::sqrt(1 - c06 * c06)};
    REQUIRE(dist(base, d02) == doctest::Approx(0.2));
    REQUIRE(dist(base, d06) == doctest::Approx(0.6));
    DeviceRecord cand{"c", {{"a", fp(d02, "a", -10)}, {"b", fp(d06, "b", -10)}}};
    std::map<std::string, Fingerprint> q{{"a", fp(base, "a", 0)}, {"b", fp(base, "b", -50)}};
    CHECK(combined_distance(q, cand).value == doctest::Approx(0.5 / 1.5).epsilon(1e-12));
    // Enrolled-side weights are both 0.9, so the plain mean.
    CHECK(combined_distance(q, cand, RssiSource::Enrolled).value == doctest::Approx(0.4));
    q["a"].rssi_dbm = q["b"].rssi_dbm = -100;
    CHECK(combined_distance(q, cand).value == doctest::Approx(0.4));

    std::map<std::string, Fingerprint> one{{"a", fp(base, "a", -80)}};
    CHECK(combined_distance(one, cand).value == doctest::Approx(dist(base, d02)).epsilon(1e-12));
    std::map<std::string, Fingerprint> none{{"z", fp(base, "z", -80)}};
    try {
        combined_distance(none, cand);
        FAIL("expected no overlap");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NoOverlap);
    }
}

TEST_CASE("fusion properties") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<ReceiverTerm> t;
        for (int i = 0; i < 3; ++i) t.push_back({"rx" + std::to_string(i), rng.uniform(0, 2), rng.uniform(0.1, 1)});
        auto scaled = t;
        const double c = rng.uniform(0.1, 10);
        for (auto& x : scaled) x.weight *= c;
        CHECK(fuse_terms(scaled) == doctest::Approx(fuse_terms(t)).epsilon(1e-12));
    }
    // A receiver that sees every candidate at the same distance keeps the argmin.
    for (int trial = 0; trial < 50; ++trial) {
        // Query-side weights: one weight per receiver, shared by all candidates.
        std::vector<std::vector<ReceiverTerm>> cands(5);
        const double w0 = rng.uniform(0.1, 1);
        for (auto& c : cands) c.push_back({"rx0", rng.uniform(0, 2), w0});
        auto argmin = [&] {
            std::size_t best = 0;
            for (std::size_t i = 1; i < cands.size(); ++i)
                if (fuse_terms(cands[i]) < fuse_terms(cands[best])) best = i;
            return best;
        };
        const auto before = argmin();
        const double same = rng.uniform(0, 2), w = rng.uniform(0.1, 1);
        for (auto& c : cands) c.push_back({"rx1", same, w});
        CHECK(argmin() == before);
    }
}

TEST_CASE("reidentify end to end on synthetic embeddings") {
    Rng rng(3);
    FingerprintStore store;
    ReidConfig cfg;
    cfg.threshold = 0.5;
    Reidentifier reid(store, cfg);

    std::vector<std::map<std::string, std::vector<double>>> devices(6);
    for (auto& d : devices)
        for (const char* rx : {"rx1", "rx2", "rx3"}) d[rx] = unit(16, rng);

    auto first = reid.reidentify(observe(devices[0], 0.2, 20, rng, 4));
    CHECK_FALSE(first.known);
    CHECK(first.device_id == "r004-n0001");
    CHECK(store.size() == 1);

    std::vector<std::string> ids{first.device_id};
    for (std::size_t i = 1; i < devices.size(); ++i) {
        auto d = reid.reidentify(observe(devices[i], 0.2, 20, rng, 4));
        CHECK_FALSE(d.known);
        ids.push_back(d.device_id);
    }
    CHECK(ids.back() == "r004-n0006");

    for (std::size_t i = 0; i < devices.size(); ++i) {
        auto d = reid.reidentify(observe(devices[i], 0.2, 20, rng, 5));
        CHECK(d.known);
        CHECK(d.device_id == ids[i]);
        // Decision consistency against diagnostics.
        CHECK(d.combined == d.candidates.front().combined);
        CHECK(d.combined <= d.threshold);
    }
    CHECK(store.size() == devices.size());

    // Exact enrolled fingerprints give D_c = 0.
    const auto rec = *store.get(ids[2]);
    Observation exact;
    for (const auto& [rx, f] : rec.receivers) exact.receivers[rx] = {{f.embedding}, {f.rssi_dbm}};
    auto d = reid.reidentify(exact);
    CHECK(d.known);
    CHECK(d.combined == doctest::Approx(0.0).epsilon(1e-12));

    // A stranger ends up New and every candidate is above threshold.
    std::map<std::string, std::vector<double>> stranger;
    for (const char* rx : {"rx1", "rx2", "rx3"}) stranger[rx] = unit(16, rng);
    d = reid.reidentify(observe(stranger, 0.2, 20, rng, 6));
    CHECK_FALSE(d.known);
    for (const auto& c : d.candidates) CHECK(c.combined > d.threshold);

    const auto back = ReidDecision::from_json(d.to_json());
    CHECK(back.device_id == d.device_id);
    CHECK(back.candidates.size() == d.candidates.size());
    CHECK(back.candidates[0].terms[1].distance == d.candidates[0].terms[1].distance);
}

TEST_CASE("concurrent unknowns of one emitter enroll once") {
    Rng rng(4);
    std::map<std::string, std::vector<double>> dev{{"rx1", unit(8, rng)}};
    std::vector<Observation> obs;
    for (int i = 0; i < 8; ++i) obs.push_back(observe(dev, 0.05, 5, rng));
    FingerprintStore store;
    Reidentifier reid(store, {10, 0.5, RssiSource::Query, true});
    std::vector<ReidDecision> out(obs.size());
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < obs.size(); ++i) pool.emplace_back([&, i] { out[i] = reid.reidentify(obs[i]); });
    for (auto& t : pool) t.join();
    CHECK(store.size() == 1);
    int news = 0;
    for (const auto& d : out) news += !d.known;
    CHECK(news == 1);
}

TEST_CASE("configuration is validated") {
    FingerprintStore store;
    CHECK_THROWS_AS(Reidentifier(store, ReidConfig{}), Error);
    CHECK_THROWS_AS(Reidentifier(store, {0, 0.5, RssiSource::Query, true}), Error);
}
