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

#include <cmath>
#include <cstdio>
#include <set>

namespace rffi {

using nlohmann::json;

Fingerprint aggregate_receiver(const ReceiverFrames& frames, const std::string& receiver_id,
                               const std::string& created_at) {
    require(!frames.embeddings.empty(), "receiver '" + receiver_id + "' has no frames");
    require(frames.rssi_dbm.empty() || frames.rssi_dbm.size() == frames.embeddings.size(),
            "receiver '" + receiver_id + "': embedding and rssi counts differ");
    const std::size_t d = frames.embeddings.front().size();
    std::vector<double> mean(d, 0.0);
    for (const auto& e : frames.embeddings) {
        if (e.size() != d) fail(ErrorKind::ShapeMismatch, "frame embeddings differ in dimension");
        for (std::size_t i = 0; i < d; ++i) mean[i] += e[i];
    }
    double n = 0;
    for (auto& x : mean) {
        x /= static_cast<double>(frames.embeddings.size());
        n += x * x;
    }
    n = std::sqrt(n);
    if (!(n > 1e-12)) fail(ErrorKind::Degenerate, "receiver '" + receiver_id + "': frame embeddings cancel out");
    if (frames.embeddings.size() == 1)
        mean = frames.embeddings.front();
    else
        for (auto& x : mean) x /= n;
    double rssi = -100.0;
    if (!frames.rssi_dbm.empty()) {
        double s = 0;
        for (double r : frames.rssi_dbm) s += r;
        rssi = clamp_rssi(s / static_cast<double>(frames.rssi_dbm.size()));
    }
    return {std::move(mean), rssi, receiver_id, frames.embeddings.size(), created_at};
}

std::map<std::string, Fingerprint> aggregate_observation(const Observation& obs) {
    require(!obs.receivers.empty(), "observation has no receivers");
    std::map<std::string, Fingerprint> out;
    for (const auto& [rx, frames] : obs.receivers) out.emplace(rx, aggregate_receiver(frames, rx, obs.timestamp_utc));
    return out;
}

double rssi_weight(double rssi_dbm) { return (clamp_rssi(rssi_dbm) + 100.0) / 100.0; }

double fuse_terms(const std::vector<ReceiverTerm>& terms) {
    require(!terms.empty(), "no receiver terms to fuse");
    double num = 0, den = 0, plain = 0;
    for (const auto& t : terms) {
        num += t.weight * t.distance;
        den += t.weight;
        plain += t.distance;
    }
    return den > 0 ? num / den : plain / static_cast<double>(terms.size());
}

CombinedDistance combined_distance(const std::map<std::string, Fingerprint>& query, const DeviceRecord& candidate,
                                   RssiSource rssi) {
    CombinedDistance out;
    for (const auto& [rx, q] : query) {
        auto it = candidate.receivers.find(rx);
        if (it == candidate.receivers.end()) continue;
        const auto& c = it->second;
        if (q.embedding.size() != c.embedding.size())
            fail(ErrorKind::ShapeMismatch, "query and enrolled embeddings differ in dimension");
        double d2 = 0;
        for (std::size_t i = 0; i < q.embedding.size(); ++i)
            d2 += (q.embedding[i] - c.embedding[i]) * (q.embedding[i] - c.embedding[i]);
        const double w = rssi_weight(rssi == RssiSource::Query ? q.rssi_dbm : c.rssi_dbm);
        out.terms.push_back({rx, std::sqrt(d2), w});
    }
    if (out.terms.empty())
        fail(ErrorKind::NoOverlap, "candidate '" + candidate.device_id + "' shares no receiver with the query");
    out.value = fuse_terms(out.terms);
    return out;
}

namespace {

json terms_json(const std::vector<ReceiverTerm>& terms) {
    json a = json::array();
    for (const auto& t : terms) a.push_back({{"receiver_id", t.receiver_id}, {"d", t.distance}, {"w", t.weight}});
    return a;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json ReidDecision::to_json() const {
    json cands = json::array();
    for (const auto& c : candidates)
        cands.push_back({{"device_id", c.device_id}, {"d_c", c.combined}, {"receivers", terms_json(c.terms)}});
    return {{"round", round},
            {"label", label},
            {"outcome", known ? "known" : "new"},
            {"device_id", device_id},
            {"d_c", finite_or_null(combined)},
            {"threshold", threshold},
            {"candidates", std::move(cands)},
            {"notes", notes}};
}

ReidDecision ReidDecision::from_json(const json& j) {
    ReidDecision d;
    try {
        d.round = j.at("round").get<std::uint32_t>();
        d.label = j.value("label", std::string{});
        d.known = j.at("outcome").get<std::string>() == "known";
        d.device_id = j.at("device_id").get<std::string>();
        d.combined = j.at("d_c").is_null() ? std::numeric_limits<double>::infinity() : j["d_c"].get<double>();
        d.threshold = j.at("threshold").get<double>();
        for (const auto& c : j.at("candidates")) {
            CandidateScore s{c.at("device_id").get<std::string>(), c.at("d_c").get<double>(), {}};
            for (const auto& t : c.at("receivers"))
                s.terms.push_back({t.at("receiver_id").get<std::string>(), t.at("d").get<double>(),
                                   t.at("w").get<double>()});
            d.candidates.push_back(std::move(s));
        }
        d.notes = j.value("notes", std::vector<std::string>{});
    } catch (const json::exception& e) {
        fail(ErrorKind::Corrupt, std::string("malformed decision record: ") + e.what());
    }
    return d;
}

void ReidConfig::validate() const {
    require(k >= 1, "K must be at least 1");
    require(threshold > 0.0 && std::isfinite(threshold), "threshold must be a positive number");
}

Reidentifier::Reidentifier(FingerprintStore& store, ReidConfig cfg) : store_(store), cfg_(cfg) { cfg_.validate(); }

std::vector<CandidateScore> Reidentifier::rank(const Observation& obs) const {
    const auto query = aggregate_observation(obs);
    std::set<std::string> ids;
    for (const auto& [rx, f] : query)
        for (const auto& m : store_.query_topk(f.embedding, rx, cfg_.k)) ids.insert(m.device_id);
    std::vector<CandidateScore> out;
    for (const auto& id : ids) {
        const auto rec = store_.get(id);
        if (!rec) continue;
        const auto cd = combined_distance(query, *rec, cfg_.rssi_source);
        out.push_back({id, cd.value, cd.terms});
    }
    std::sort(out.begin(), out.end(), [](const CandidateScore& a, const CandidateScore& b) {
        return a.combined != b.combined ? a.combined < b.combined : a.device_id < b.device_id;
    });
    return out;
}

std::string Reidentifier::next_id(std::uint32_t round) {
    for (;;) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "r%03u-n%04llu", round,
                      static_cast<unsigned long long>(++counters_[round]));
        if (!store_.get(buf)) return buf;
    }
}

ReidDecision Reidentifier::reidentify(const Observation& obs) {
    std::lock_guard lock(commit_);
    ReidDecision d;
    d.threshold = cfg_.threshold;
    d.round = obs.round;
    d.label = obs.label;
    d.candidates = rank(obs);
    d.combined = d.candidates.empty() ? std::numeric_limits<double>::infinity() : d.candidates.front().combined;
    if (d.candidates.empty()) d.notes.push_back(store_.size() == 0 ? "empty store" : "no candidate shares a receiver");
    if (!d.candidates.empty() && d.combined <= cfg_.threshold) {
        d.known = true;
        d.device_id = d.candidates.front().device_id;
        return d;
    }
    d.device_id = next_id(obs.round);
    if (cfg_.enroll_new) {
        std::vector<Fingerprint> fps;
        for (auto& [rx, f] : aggregate_observation(obs)) fps.push_back(std::move(f));
        store_.enroll(d.device_id, fps);
        d.notes.push_back("enrolled");
    }
    return d;
}

}  // namespace rffi
