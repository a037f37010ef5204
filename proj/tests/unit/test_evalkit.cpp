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

#include "rffi/evalkit.hpp"
#include "rffi/rfsynth.hpp"

#include "../support/tmpdir.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>

using namespace rffi;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

ReidDecision logged(const std::string& label, std::vector<std::pair<std::string, std::vector<double>>> cands) {
    ReidDecision d;
    d.label = label;
    for (auto& [id, dists] : cands) {
        CandidateScore c{id, 0.0, {}};
        for (std::size_t i = 0; i < dists.size(); ++i)
            c.terms.push_back({"rx" + std::to_string(i + 1), dists[i], 0.5 + 0.1 * static_cast<double>(i)});
        c.combined = fuse_terms(c.terms);
        d.candidates.push_back(std::move(c));
    }
    return d;
}

}  // namespace

TEST_CASE("roc hand example") {
    const auto r = roc_auc({0.1, 0.2}, {0.3, 0.4});
    CHECK(r.auc == doctest::Approx(1.0));
    // Threshold 0.25 lies between the 0.2 and 0.3 sweep points.
    for (std::size_t i = 0; i < r.thresholds.size(); ++i)
        if (r.thresholds[i] == 0.2) {
            CHECK(r.tpr[i] == 1.0);
            CHECK(r.fpr[i] == 0.0);
        }
    for (std::size_t i = 1; i < r.fpr.size(); ++i) CHECK(r.fpr[i] >= r.fpr[i - 1]);
    CHECK_THROWS_AS(roc_auc({}, {1.0}), Error);
}

TEST_CASE("roc auc matches the pairwise oracle, ties included") {
    Rng rng(1);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> k, n;
        const std::size_t nk = 1 + rng.index(40), nn = 1 + rng.index(40);
        // Rounded draws produce plenty of ties.
        for (std::size_t i = 0; i < nk; ++i) k.push_back(std::round(rng.normal() * 4) / 4);
        for (std::size_t i = 0; i < nn; ++i) n.push_back(std::round((rng.normal() + 0.7) * 4) / 4);
        CHECK(std::abs(roc_auc(k, n).auc - mann_whitney_auc(k, n)) < 1e-9);
    }
    // Same distribution: close to one half.
    std::vector<double> a, b;
    for (int i = 0; i < 200; ++i) {
        a.push_back(rng.normal());
        b.push_back(rng.normal());
    }
    CHECK(std::abs(roc_auc(a, b).auc - 0.5) <= 0.05);
}

TEST_CASE("gap analysis") {
    std::vector<ReidDecision> logs{logged("a", {{"a", {0.1}}, {"b", {0.5}}}), logged("b", {{"b", {0.2}}, {"a", {0.6}}})};
    auto g = gap_analysis(logs, {{"rx1"}}).front();
    CHECK(g.gap == doctest::Approx(0.3));
    CHECK(g.optimal_threshold > 0.2);
    CHECK(g.optimal_threshold < 0.5);

    std::vector<ReidDecision> flat{logged("a", {{"a", {0.4}}, {"b", {0.4}}}), logged("b", {{"a", {0.3}}, {"b", {0.3}}})};
    CHECK(gap_analysis(flat, {{"rx1"}}).front().gap == 0.0);

    std::vector<ReidDecision> single{logged("a", {{"a", {0.1}}})};
    CHECK_THROWS_AS(gap_analysis(single, {{"rx1"}}), Error);
}

TEST_CASE("closed-set accuracy") {
    std::vector<ReidDecision> logs{logged("a", {{"a", {0.1, 0.9}}, {"b", {0.2, 0.1}}}),
                                   logged("b", {{"a", {0.4, 0.6}}, {"b", {0.3, 0.2}}})};
    CHECK(closed_set_accuracy(logs, {"rx1"}) == 1.0);
    CHECK(closed_set_accuracy(logs, {"rx2"}) == 0.5);
    // Strictly increasing affine maps commute with the weighted mean.
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const double a = rng.uniform(0.1, 5), b = rng.uniform(-1, 1);
        auto t = logs;
        for (auto& d : t)
            for (auto& c : d.candidates)
                for (auto& term : c.terms) term.distance = a * term.distance + b;
        for (const auto& s : receiver_subsets({"rx1", "rx2"}))
            CHECK(closed_set_accuracy(t, s) == closed_set_accuracy(logs, s));
    }
    CHECK(receiver_subsets({"rx3", "rx1", "rx2"}).size() == 7);
    CHECK(receiver_subsets({"rx3", "rx1", "rx2"}).front() == std::vector<std::string>{"rx1"});
    CHECK(receiver_subsets({"rx3", "rx1", "rx2"}).back().size() == 3);
}

TEST_CASE("self-match through the store gives perfect accuracy and faithful logs") {
    Rng rng(3);
    FingerprintStore store;
    std::vector<Observation> obs;
    for (int d = 0; d < 5; ++d) {
        Observation o;
        o.label = "dev" + std::to_string(d);
        std::vector<Fingerprint> fps;
        for (const char* rx : {"rx1", "rx2", "rx3"}) {
            std::vector<double> e(8);
            double n = 0;
            for (auto& x : e) {
                x = rng.normal();
                n += x * x;
            }
            for (auto& x : e) x /= std::sqrt(n);
            o.receivers[rx] = {{e}, {-40.0 - 10 * d}};
            fps.push_back({e, -40.0 - 10 * d, rx, 1, {}});
        }
        store.enroll(o.label, fps);
        obs.push_back(o);
    }
    Reidentifier reid(store, {10, 0.5, RssiSource::Query, false});
    std::vector<ReidDecision> logs;
    for (const auto& o : obs) logs.push_back(ReidDecision::from_json(nlohmann::json::parse(reid.reidentify(o).to_json().dump())));
    CHECK(closed_set_accuracy(logs, {"rx1", "rx2", "rx3"}) == 1.0);
    for (std::size_t i = 0; i < logs.size(); ++i) {
        for (const auto& c : logs[i].candidates)
            CHECK(std::abs(*subset_distance(c, {"rx1", "rx2", "rx3"}) - c.combined) < 1e-9);
    }
}

TEST_CASE("temporal stability") {
    RoundFingerprints f;
    for (std::uint32_t r = 0; r < 4; ++r) {
        f[r]["a"]["rx1"] = {1.0, 0.0};
        f[r]["b"]["rx1"] = {0.0, 1.0};
        const double t = 0.1 * r;
        f[r]["c"]["rx1"] = {std::cos(t), std::sin(t)};
    }
    f[2].erase("b");
    const auto s = temporal_stability(f, 0);
    REQUIRE(s.devices.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(s.normalized_distance[i][0] == 0.0);
    CHECK(std::isnan(s.normalized_distance[1][2]));
    CHECK(s.std_dev[0] == 0.0);
    CHECK(s.std_dev[1] == 0.0);
    CHECK(s.std_dev[2] > 0.0);
    CHECK_THROWS_AS(temporal_stability({{0, f[0]}}, 0), Error);
    CHECK_THROWS_AS(temporal_stability(f, 9), Error);
}

TEST_CASE("report export") {
    TempDir dir;
    ExperimentResults empty;
    empty.plan_digest = empty.config_digest = "abc";
    export_report(empty, dir.path / "e");
    const auto summary = nlohmann::json::parse(slurp(dir.path / "e" / "report" / "summary.json"));
    CHECK(summary["sections"].empty());
    CHECK_FALSE(fs::exists(dir.path / "e" / "report" / "tables"));

    ExperimentResults r;
    r.config_digest = "feed";
    r.roc.push_back({{"rx1"}, roc_auc({0.1, 0.2}, {0.3, 0.4})});
    r.accuracy.push_back({{"rx1"}, 1.0, 2});
    export_report(r, dir.path / "a");
    export_report(r, dir.path / "b");
    const auto svg = slurp(dir.path / "a" / "report" / "figures" / "roc.svg");
    CHECK(svg.find(" 0,1 ") != std::string::npos);
    CHECK(svg.find("config_digest=feed") != std::string::npos);
    for (const char* f : {"summary.json", "tables/roc_curves.csv", "tables/closed_set_accuracy.csv", "figures/roc.svg"})
        CHECK(slurp(dir.path / "a" / "report" / f) == slurp(dir.path / "b" / "report" / f));
}

TEST_CASE("plan validation") {
    nlohmann::json j = {{"dataset", "d"}, {"enroll_devices", {"a", "b"}}, {"identify_devices", {"c"}}};
    try {
        ExperimentPlan::from_json(j);
        FAIL("expected plan error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Plan);
    }
    j["identify_devices"] = {"a"};
    j["train_devices"] = {"a", "x"};
    CHECK_THROWS_AS(ExperimentPlan::from_json(j), Error);
    j["unseen"] = false;
    const auto p = ExperimentPlan::from_json(j);
    CHECK(p.enroll_per_device == 50);
    CHECK(p.identify_per_device == 100);
    CHECK(ExperimentPlan::from_json(p.to_json()).digest() == p.digest());
}

TEST_CASE("random embeddings sit at chance level") {
    TempDir dir;
    RandomScenarioOptions opt;
    opt.devices = 6;
    opt.receivers = 3;
    opt.frames = 30;
    opt.rounds = 2;
    opt.seed = 4;
    synth_dataset(random_scenario(opt), dir.path / "data");

    ExperimentPlan p;
    p.dataset = dir.path / "data";
    for (int i = 0; i < 6; ++i) {
        char id[8];
        std::snprintf(id, sizeof id, "dev%03d", i);
        p.enroll_devices.push_back(id);
    }
    p.identify_devices = p.enroll_devices;
    p.enroll_per_device = 10;
    p.identify_per_device = 20;
    p.observation_frames = 1;
    p.embeddings = EmbeddingSource::Random;
    p.arch.embedding_dim = 16;
    p.seed = 5;
    const auto res = run_experiment(p, dir.path / "out");
    const auto& fused = res.accuracy.back();
    REQUIRE(fused.receivers.size() == 3);
    const double n = static_cast<double>(fused.observations);
    CHECK(n == 120);
    const double chance = 1.0 / 6.0, sigma = std::sqrt(chance * (1 - chance) / n);
    CHECK(std::abs(fused.accuracy - chance) <= 3 * sigma);
    CHECK(fs::exists(dir.path / "out" / "decisions.jsonl"));
}
