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

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace rffi {

using nlohmann::json;

// ---- feature extraction ---------------------------------------------------

std::vector<FrameFeature> extract_features(const ComplexSignal& capture, const CaptureMeta& meta, SpecMode mode,
                                           const SpecOptions& opt, std::size_t skip, std::size_t limit,
                                           ExtractStats* stats) {
    DetectorConfig dc;
    dc.rssi_calibration_db = meta.rssi_calibration_db;
    const auto dets = detect_frames(capture, reference_preamble(capture.sample_rate_hz), dc);
    std::vector<FrameFeature> out;
    std::size_t good = 0, rejected = 0;
    for (const auto& d : dets) {
        if (limit != 0 && out.size() >= limit) break;
        try {
            const auto p = slice_preamble(capture, d, meta.receiver_id);
            auto spec = make_spectrogram(p, mode, opt);
            if (good++ < skip) continue;
            out.push_back({std::move(spec), d.rssi_dbm, d.start_index});
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::EqualizationFailed && e.kind() != ErrorKind::InvalidInput) throw;
            ++rejected;
        }
    }
    if (stats) *stats = {dets.size(), rejected};
    return out;
}

// ---- metrics --------------------------------------------------------------

RocResult roc_auc(const std::vector<double>& known, const std::vector<double>& fresh) {
    require(!known.empty() && !fresh.empty(), "roc_auc needs known and new scores");
    std::vector<double> t(known);
    t.insert(t.end(), fresh.begin(), fresh.end());
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    auto k = known, f = fresh;
    std::sort(k.begin(), k.end());
    std::sort(f.begin(), f.end());
    RocResult r;
    r.thresholds.push_back(-std::numeric_limits<double>::infinity());
    r.tpr.push_back(0.0);
    r.fpr.push_back(0.0);
    for (double th : t) {
        const auto nk = std::upper_bound(k.begin(), k.end(), th) - k.begin();
        const auto nf = std::upper_bound(f.begin(), f.end(), th) - f.begin();
        r.thresholds.push_back(th);
        r.tpr.push_back(static_cast<double>(nk) / static_cast<double>(k.size()));
        r.fpr.push_back(static_cast<double>(nf) / static_cast<double>(f.size()));
    }
    for (std::size_t i = 1; i < r.tpr.size(); ++i)
        r.auc += (r.fpr[i] - r.fpr[i - 1]) * (r.tpr[i] + r.tpr[i - 1]) / 2.0;
    return r;
}

double mann_whitney_auc(const std::vector<double>& known, const std::vector<double>& fresh) {
    require(!known.empty() && !fresh.empty(), "mann_whitney_auc needs known and new scores");
    double s = 0;
    for (double a : known)
        for (double b : fresh) s += a < b ? 1.0 : (a == b ? 0.5 : 0.0);
    return s / (static_cast<double>(known.size()) * static_cast<double>(fresh.size()));
}

std::optional<double> subset_distance(const CandidateScore& c, const std::vector<std::string>& receivers) {
    std::vector<ReceiverTerm> terms;
    for (const auto& t : c.terms)
        if (std::find(receivers.begin(), receivers.end(), t.receiver_id) != receivers.end()) terms.push_back(t);
    if (terms.empty()) return std::nullopt;
    return fuse_terms(terms);
}

namespace {

// Candidates re-scored on a subset, ascending with ties by id.
std::vector<std::pair<double, std::string>> rescored(const ReidDecision& d, const std::vector<std::string>& rx) {
    std::vector<std::pair<double, std::string>> out;
    for (const auto& c : d.candidates)
        if (auto v = subset_distance(c, rx)) out.emplace_back(*v, c.device_id);
    std::sort(out.begin(), out.end());
    return out;
}

std::string join(const std::vector<std::string>& v, const char* sep = "+") {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : sep) + x;
    return s;
}

}  // namespace

std::vector<GapResult> gap_analysis(const std::vector<ReidDecision>& logs,
                                    const std::vector<std::vector<std::string>>& subsets) {
    require(!logs.empty(), "gap analysis needs decision logs");
    std::vector<GapResult> out;
    for (const auto& rx : subsets) {
        GapResult g;
        g.receivers = rx;
        double max_r1 = -std::numeric_limits<double>::infinity();
        double min_r2 = std::numeric_limits<double>::infinity();
        for (const auto& d : logs) {
            const auto s = rescored(d, rx);
            require(s.size() >= 2, "gap analysis needs at least two candidates per observation");
            g.rows.push_back({d.label, s[0].first, s[1].first});
            max_r1 = std::max(max_r1, s[0].first);
            min_r2 = std::min(min_r2, s[1].first);
        }
        g.margin = min_r2 - max_r1;
        g.gap = std::max(g.margin, 0.0);
        g.optimal_threshold = (max_r1 + min_r2) / 2.0;
        out.push_back(std::move(g));
    }
    return out;
}

double closed_set_accuracy(const std::vector<ReidDecision>& logs, const std::vector<std::string>& receivers) {
    require(!logs.empty(), "accuracy needs decision logs");
    std::size_t hit = 0;
    for (const auto& d : logs) {
        const auto s = rescored(d, receivers);
        if (!s.empty() && s.front().second == d.label) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(logs.size());
}

std::vector<std::vector<std::string>> receiver_subsets(const std::vector<std::string>& receivers) {
    auto rx = receivers;
    std::sort(rx.begin(), rx.end());
    require(rx.size() <= 16, "too many receivers for subset enumeration");
    std::vector<std::vector<std::string>> out;
    for (std::uint32_t mask = 1; mask < (1u << rx.size()); ++mask) {
        std::vector<std::string> s;
        for (std::size_t i = 0; i < rx.size(); ++i)
            if (mask & (1u << i)) s.push_back(rx[i]);
        out.push_back(std::move(s));
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.size() != b.size() ? a.size() < b.size() : a < b;
    });
    return out;
}

StabilityResult temporal_stability(const RoundFingerprints& fps, std::uint32_t reference_round) {
    require(fps.size() >= 2, "temporal stability needs at least two rounds");
    auto ref_it = fps.find(reference_round);
    if (ref_it == fps.end()) fail(ErrorKind::Plan, "reference round missing from fingerprints");
    const auto& ref = ref_it->second;
    auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(s);
    };

    StabilityResult r;
    r.reference_round = reference_round;
    std::set<std::string> devs;
    for (const auto& [round, m] : fps) {
        r.rounds.push_back(round);
        for (const auto& [d, rx] : m) devs.insert(d);
    }
    r.devices.assign(devs.begin(), devs.end());

    std::map<std::string, std::vector<double>> per_rx;
    std::vector<std::string> ids;
    for (const auto& [d, _] : ref) ids.push_back(d);
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = i + 1; j < ids.size(); ++j)
            for (const auto& [rx, e] : ref.at(ids[i])) {
                auto o = ref.at(ids[j]).find(rx);
                if (o != ref.at(ids[j]).end()) per_rx[rx].push_back(dist(e, o->second));
            }
    double total = 0;
    for (const auto& [rx, v] : per_rx) {
        double s = 0;
        for (double x : v) s += x;
        total += s / static_cast<double>(v.size());
    }
    if (per_rx.empty() || !(total > 0)) fail(ErrorKind::Degenerate, "reference round has no inter-device spread");
    r.normalizer = total / static_cast<double>(per_rx.size());

    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& dev : r.devices) {
        std::vector<double> row;
        auto rd = ref.find(dev);
        for (const auto& [round, m] : fps) {
            auto it = m.find(dev);
            double v = nan;
            if (it != m.end() && rd != ref.end()) {
                double s = 0;
                int n = 0;
                for (const auto& [rx, e] : it->second) {
                    auto o = rd->second.find(rx);
                    if (o == rd->second.end()) continue;
                    s += dist(e, o->second);
                    ++n;
                }
                if (n > 0) v = s / n / r.normalizer;
            }
            row.push_back(v);
        }
        std::vector<double> vals;
        for (std::size_t k = 0; k < row.size(); ++k)
            if (r.rounds[k] != reference_round && std::isfinite(row[k])) vals.push_back(row[k]);
        double sd = nan;
        if (vals.size() >= 2) {
            double m = 0, q = 0;
            for (double x : vals) m += x;
            m /= static_cast<double>(vals.size());
            for (double x : vals) q += (x - m) * (x - m);
            sd = std::sqrt(q / static_cast<double>(vals.size() - 1));
        }
        r.normalized_distance.push_back(std::move(row));
        r.std_dev.push_back(sd);
    }
    return r;
}

// ---- plan -----------------------------------------------------------------

namespace {

bool contains(const std::vector<std::string>& v, const std::string& x) {
    return std::find(v.begin(), v.end(), x) != v.end();
}

[[noreturn]] void plan_error(const std::string& what) { fail(ErrorKind::Plan, what); }

}  // namespace

void ExperimentPlan::validate() const {
    if (dataset.empty()) plan_error("plan has no dataset");
    if (enroll_devices.empty() && stability_rounds.empty()) plan_error("plan enrolls no devices");
    for (const auto& d : identify_devices)
        if (!contains(enroll_devices, d)) plan_error("identify device '" + d + "' is not enrolled");
    for (const auto& d : new_devices)
        if (contains(enroll_devices, d)) plan_error("new device '" + d + "' is also enrolled");
    if (unseen)
        for (const auto& d : train_devices)
            if (contains(identify_devices, d) || contains(new_devices, d))
                plan_error("device '" + d + "' is used for training and testing in an unseen plan");
    if (embeddings == EmbeddingSource::Trained && model.empty() && train_devices.size() < 2)
        plan_error("training needs at least two devices");
    if (enroll_per_device == 0 || identify_per_device == 0) plan_error("frame counts must be positive");
    if (observation_frames > identify_per_device) plan_error("observation_frames exceeds identify_per_device");
    if (k == 0) plan_error("K must be at least 1");
    if (threshold && !(*threshold > 0)) plan_error("threshold must be positive");
    if (augment_replication == 0) plan_error("augment_replication must be at least 1");
    if (!stability_rounds.empty() &&
        std::find(stability_rounds.begin(), stability_rounds.end(), stability_reference) == stability_rounds.end())
        plan_error("stability reference round is not among stability rounds");
}

json ExperimentPlan::to_json() const {
    json j = {{"name", name},
              {"dataset", dataset.generic_string()},
              {"train_devices", train_devices},
              {"enroll_devices", enroll_devices},
              {"identify_devices", identify_devices},
              {"new_devices", new_devices},
              {"receivers", receivers},
              {"frames",
               {{"train_per_device", train_per_device},
                {"enroll_per_device", enroll_per_device},
                {"identify_per_device", identify_per_device},
                {"observation_frames", observation_frames}}},
              {"train_rounds", train_rounds},
              {"enroll_round", enroll_round},
              {"identify_round", identify_round},
              {"mode", to_string(mode)},
              {"reduce", reduce},
              {"unseen", unseen},
              {"seed", seed},
              {"k", k},
              {"threshold", threshold ? json(*threshold) : json(nullptr)},
              {"embeddings", embeddings == EmbeddingSource::Random ? "random" : "trained"},
              {"model", model.generic_string()},
              {"arch", arch.to_json()},
              {"training", training.to_json()},
              {"augment", {{"sigma", augment_sigma}, {"replication", augment_replication}}},
              {"stability",
               {{"rounds", stability_rounds},
                {"reference", stability_reference},
                {"devices", stability_devices},
                {"frames", stability_frames}}}};
    return j;
}

ExperimentPlan ExperimentPlan::from_json(const json& j, const fs::path& base_dir) {
    ExperimentPlan p;
    if (!j.is_object()) plan_error("plan must be a JSON object");
    static const std::set<std::string> known_keys{
        "name", "dataset", "train_devices", "enroll_devices", "identify_devices", "new_devices", "receivers",
        "frames", "train_rounds", "enroll_round", "identify_round", "mode", "reduce", "unseen", "seed", "k",
        "threshold", "embeddings", "model", "arch", "training", "augment", "stability"};
    for (const auto& [key, v] : j.items())
        if (!known_keys.count(key)) plan_error("unknown plan key '" + key + "'");
    try {
        p.name = j.value("name", p.name);
        p.dataset = j.at("dataset").get<std::string>();
        p.train_devices = j.value("train_devices", p.train_devices);
        p.enroll_devices = j.value("enroll_devices", p.enroll_devices);
        p.identify_devices = j.value("identify_devices", p.identify_devices);
        p.new_devices = j.value("new_devices", p.new_devices);
        p.receivers = j.value("receivers", p.receivers);
        if (j.contains("frames")) {
            const auto& f = j["frames"];
            p.train_per_device = f.value("train_per_device", p.train_per_device);
            p.enroll_per_device = f.value("enroll_per_device", p.enroll_per_device);
            p.identify_per_device = f.value("identify_per_device", p.identify_per_device);
            p.observation_frames = f.value("observation_frames", p.observation_frames);
        }
        p.train_rounds = j.value("train_rounds", p.train_rounds);
        p.enroll_round = j.value("enroll_round", p.enroll_round);
        p.identify_round = j.value("identify_round", p.identify_round);
        if (j.contains("mode")) p.mode = spec_mode_from_string(j["mode"].get<std::string>());
        p.reduce = j.value("reduce", p.reduce);
        p.unseen = j.value("unseen", p.unseen);
        p.seed = j.value("seed", p.seed);
        p.k = j.value("k", p.k);
        if (j.contains("threshold") && !j["threshold"].is_null()) p.threshold = j["threshold"].get<double>();
        const auto emb = j.value("embeddings", std::string("trained"));
        if (emb != "trained" && emb != "random") plan_error("embeddings must be 'trained' or 'random'");
        p.embeddings = emb == "random" ? EmbeddingSource::Random : EmbeddingSource::Trained;
        p.model = j.value("model", std::string{});
        if (j.contains("arch")) p.arch = EncoderArchitecture::from_json(j["arch"]);
        if (j.contains("training")) p.training = TripletConfig::from_json(j["training"]);
        if (j.contains("augment")) {
            p.augment_sigma = j["augment"].value("sigma", p.augment_sigma);
            p.augment_replication = j["augment"].value("replication", p.augment_replication);
        }
        if (j.contains("stability")) {
            const auto& s = j["stability"];
            p.stability_rounds = s.value("rounds", p.stability_rounds);
            p.stability_reference = s.value("reference", p.stability_reference);
            p.stability_devices = s.value("devices", p.stability_devices);
            p.stability_frames = s.value("frames", p.stability_frames);
        }
    } catch (const json::exception& e) {
        plan_error(std::string("malformed plan: ") + e.what());
    }
    p.base_dir = base_dir;
    p.validate();
    return p;
}

ExperimentPlan ExperimentPlan::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open plan " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        plan_error("plan " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j, path.parent_path());
}

std::string ExperimentPlan::digest() const { return sha256_hex(to_json().dump()); }

bool ExperimentResults::empty() const { return accuracy.empty() && roc.empty() && gaps.empty() && !stability; }

// ---- experiment runner ----------------------------------------------------

namespace {

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() || base.empty() ? p : base / p; }

struct CaptureKey {
    std::string device;
    std::uint32_t round;
    std::string receiver;
    auto operator<=>(const CaptureKey&) const = default;
};

std::vector<double> random_unit(std::size_t d, Rng& rng) {
    std::vector<double> v(d);
    double n = 0;
    for (auto& x : v) {
        x = rng.normal();
        n += x * x;
    }
    for (auto& x : v) x /= std::sqrt(n);
    return v;
}

}  // namespace

ExperimentResults run_experiment(const ExperimentPlan& plan, const fs::path& out_dir, int jobs,
                                 const std::string& config_digest) {
    plan.validate();
    const fs::path root = resolve(plan.base_dir, plan.dataset);
    const auto manifest = load_manifest(root);

    std::map<CaptureKey, const ManifestEntry*> index;
    std::set<std::string> all_rx;
    for (const auto& e : manifest.captures) {
        if (!e.meta.emitter_id) continue;
        index[{*e.meta.emitter_id, e.meta.round_index, e.meta.receiver_id}] = &e;
        all_rx.insert(e.meta.receiver_id);
    }
    auto receivers = plan.receivers;
    if (receivers.empty()) receivers.assign(all_rx.begin(), all_rx.end());
    std::sort(receivers.begin(), receivers.end());

    // Frames needed per capture: [0, end).
    const std::size_t id_skip = plan.identify_round == plan.enroll_round ? plan.enroll_per_device : 0;
    std::map<CaptureKey, std::size_t> need;
    auto want = [&](const std::vector<std::string>& devs, std::uint32_t round, std::size_t end) {
        for (const auto& d : devs)
            for (const auto& rx : receivers) {
                auto& n = need[{d, round, rx}];
                n = std::max(n, end);
            }
    };
    const bool training = plan.embeddings == EmbeddingSource::Trained && plan.model.empty();
    if (training)
        for (auto r : plan.train_rounds) want(plan.train_devices, r, plan.train_per_device);
    want(plan.enroll_devices, plan.enroll_round, plan.enroll_per_device);
    want(plan.identify_devices, plan.identify_round, id_skip + plan.identify_per_device);
    want(plan.new_devices, plan.identify_round, id_skip + plan.identify_per_device);
    for (auto r : plan.stability_rounds) want(plan.stability_devices, r, plan.stability_frames);

    std::vector<CaptureKey> keys;
    for (const auto& [k, n] : need) {
        if (!index.count(k))
            plan_error("dataset has no capture for " + k.device + " round " + std::to_string(k.round) + " at " +
                       k.receiver);
        keys.push_back(k);
    }
    SpecOptions so;
    so.reduce = plan.reduce;
    std::vector<std::vector<FrameFeature>> feats(keys.size());
    parallel_for(keys.size(), jobs, [&](std::size_t i) {
        const auto [sig, meta] = read_capture(root / index.at(keys[i])->path);
        feats[i] = extract_features(sig, meta, plan.mode, so, 0, need.at(keys[i]));
        if (feats[i].empty())
            fail(ErrorKind::Plan, "no usable frames in " + index.at(keys[i])->path);
    });
    std::map<CaptureKey, const std::vector<FrameFeature>*> by_key;
    for (std::size_t i = 0; i < keys.size(); ++i) by_key[keys[i]] = &feats[i];
    auto frames = [&](const std::string& d, std::uint32_t r, const std::string& rx, std::size_t skip,
                      std::size_t count) {
        const auto& v = *by_key.at({d, r, rx});
        const std::size_t b = std::min(skip, v.size()), e = std::min(skip + count, v.size());
        return std::vector<FrameFeature>(v.begin() + static_cast<std::ptrdiff_t>(b),
                                         v.begin() + static_cast<std::ptrdiff_t>(e));
    };

    ExperimentResults res;
    res.plan_name = plan.name;
    res.plan = plan.to_json();
    res.plan_digest = plan.digest();
    res.config_digest = config_digest.empty() ? res.plan_digest : config_digest;
    if (!out_dir.empty()) fs::create_directories(out_dir);

    // Embedding function.
    std::optional<ModelWeights> model;
    if (plan.embeddings == EmbeddingSource::Trained) {
        if (!plan.model.empty()) {
            model = load_model(resolve(plan.base_dir, plan.model));
        } else {
            std::vector<LabeledSpectrogram> data;
            for (const auto& d : plan.train_devices)
                for (auto r : plan.train_rounds)
                    for (const auto& rx : receivers)
                        for (auto& f : frames(d, r, rx, 0, plan.train_per_device)) data.push_back({f.spec, d});
            if (plan.augment_replication > 1)
                data = augment(data, plan.augment_sigma, plan.augment_replication, derive_seed(plan.seed, {0xA6}));
            auto arch = plan.arch;
            arch.input_rows = static_cast<int>(data.front().spec.values.rows());
            arch.input_cols = static_cast<int>(data.front().spec.values.cols());
            auto cfg = plan.training;
            cfg.rng_seed = plan.seed;
            model = train(data, arch, cfg);
            model->training["config_digest"] = res.config_digest;
            res.training = model->training;
            if (!out_dir.empty()) save_model(*model, out_dir / "model.rffimdl");
        }
    }
    Rng random_embeddings(derive_seed(plan.seed, {0xE3B}));
    auto embed = [&](const std::vector<FrameFeature>& fs) {
        ReceiverFrames rf;
        if (model) {
            std::vector<ReducedSpectrogram> specs;
            for (const auto& f : fs) specs.push_back(f.spec);
            rf.embeddings = forward(specs, *model, jobs);
        } else {
            for (std::size_t i = 0; i < fs.size(); ++i)
                rf.embeddings.push_back(random_unit(static_cast<std::size_t>(plan.arch.embedding_dim),
                                                    random_embeddings));
        }
        for (const auto& f : fs) rf.rssi_dbm.push_back(f.rssi_dbm);
        return rf;
    };

    if (!plan.enroll_devices.empty()) {
        res.example_spectrogram = frames(plan.enroll_devices.front(), plan.enroll_round, receivers.front(), 0, 1)
                                      .front()
                                      .spec;
        FingerprintStore store;
        for (const auto& d : plan.enroll_devices) {
            std::vector<Fingerprint> fps;
            for (const auto& rx : receivers)
                fps.push_back(aggregate_receiver(embed(frames(d, plan.enroll_round, rx, 0, plan.enroll_per_device)),
                                                 rx));
            store.enroll(d, fps);
        }

        std::vector<Observation> obs;
        std::vector<bool> is_known;
        for (const auto* group : {&plan.identify_devices, &plan.new_devices})
            for (const auto& d : *group) {
                std::map<std::string, ReceiverFrames> per_rx;
                std::size_t groups = std::numeric_limits<std::size_t>::max();
                const std::size_t of = plan.observation_frames == 0 ? plan.identify_per_device : plan.observation_frames;
                for (const auto& rx : receivers) {
                    per_rx[rx] = embed(frames(d, plan.identify_round, rx, id_skip, plan.identify_per_device));
                    groups = std::min(groups, per_rx[rx].embeddings.size() / of);
                }
                for (std::size_t g = 0; g < groups; ++g) {
                    Observation o;
                    o.round = plan.identify_round;
                    o.label = d;
                    for (const auto& [rx, rf] : per_rx) {
                        auto& dst = o.receivers[rx];
                        dst.embeddings.assign(rf.embeddings.begin() + static_cast<std::ptrdiff_t>(g * of),
                                              rf.embeddings.begin() + static_cast<std::ptrdiff_t>((g + 1) * of));
                        dst.rssi_dbm.assign(rf.rssi_dbm.begin() + static_cast<std::ptrdiff_t>(g * of),
                                            rf.rssi_dbm.begin() + static_cast<std::ptrdiff_t>((g + 1) * of));
                    }
                    obs.push_back(std::move(o));
                    is_known.push_back(group == &plan.identify_devices);
                }
            }

        if (obs.empty() && !(plan.identify_devices.empty() && plan.new_devices.empty()))
            plan_error("no identify observations: fewer usable frames than observation_frames");

        // First pass ranks everything to fix the threshold, second pass decides.
        ReidConfig rc;
        rc.k = plan.k;
        rc.threshold = 1.0;
        rc.enroll_new = false;
        const auto subsets = receiver_subsets(receivers);
        std::vector<ReidDecision> known_logs;
        {
            Reidentifier ranker(store, rc);
            for (std::size_t i = 0; i < obs.size(); ++i)
                if (is_known[i]) {
                    ReidDecision d;
                    d.label = obs[i].label;
                    d.candidates = ranker.rank(obs[i]);
                    known_logs.push_back(std::move(d));
                }
        }
        double threshold = 1.0;
        if (plan.threshold) {
            threshold = *plan.threshold;
        } else if (!known_logs.empty() && plan.enroll_devices.size() >= 2) {
            const double t = gap_analysis(known_logs, {receivers}).front().optimal_threshold;
            if (t > 0) threshold = t;
        }
        rc.threshold = threshold;
        Reidentifier reid(store, rc);
        for (std::size_t i = 0; i < obs.size(); ++i) res.decisions.push_back(reid.reidentify(obs[i]));

        std::vector<ReidDecision> known, fresh;
        for (std::size_t i = 0; i < obs.size(); ++i) (is_known[i] ? known : fresh).push_back(res.decisions[i]);
        if (!known.empty()) {
            for (const auto& s : subsets) res.accuracy.push_back({s, closed_set_accuracy(known, s), known.size()});
            if (plan.enroll_devices.size() >= 2) res.gaps = gap_analysis(known, subsets);
        }
        if (!known.empty() && !fresh.empty()) {
            auto best = [](const std::vector<ReidDecision>& logs, const std::vector<std::string>& rx) {
                std::vector<double> v;
                for (const auto& d : logs) {
                    double m = std::numeric_limits<double>::infinity();
                    for (const auto& c : d.candidates)
                        if (auto x = subset_distance(c, rx)) m = std::min(m, *x);
                    v.push_back(m);
                }
                return v;
            };
            for (const auto& s : subsets) res.roc.push_back({s, roc_auc(best(known, s), best(fresh, s))});
        }
    }

    if (!plan.stability_rounds.empty()) {
        RoundFingerprints rf;
        for (auto r : plan.stability_rounds)
            for (const auto& d : plan.stability_devices)
                for (const auto& rx : receivers)
                    rf[r][d][rx] = aggregate_receiver(embed(frames(d, r, rx, 0, plan.stability_frames)), rx).embedding;
        res.stability = temporal_stability(rf, plan.stability_reference);
    }

    if (!out_dir.empty() && !res.decisions.empty()) {
        std::ofstream out(out_dir / "decisions.jsonl", std::ios::binary | std::ios::trunc);
        for (const auto& d : res.decisions) {
            auto j = d.to_json();
            j["config_digest"] = res.config_digest;
            out << j.dump() << '\n';
        }
        if (!out) fail(ErrorKind::Io, "cannot write decisions.jsonl");
    }
    return res;
}

// ---- summaries -------------------------------------------------------------

namespace {

template <typename Rows, typename Get>
std::map<std::size_t, double> reduce_by_size(const Rows& rows, Get get, bool best) {
    std::map<std::size_t, std::pair<double, std::size_t>> acc;
    for (const auto& r : rows) {
        auto& [v, n] = acc[r.receivers.size()];
        const double x = get(r);
        v = n == 0 ? x : (best ? std::max(v, x) : v + x);
        ++n;
    }
    std::map<std::size_t, double> out;
    for (const auto& [k, vn] : acc) out[k] = best ? vn.first : vn.first / static_cast<double>(vn.second);
    return out;
}

}  // namespace

std::map<std::size_t, double> mean_by_size(const std::vector<AccuracyRow>& rows) {
    return reduce_by_size(rows, [](const AccuracyRow& r) { return r.accuracy; }, false);
}
std::map<std::size_t, double> best_by_size(const std::vector<AccuracyRow>& rows) {
    return reduce_by_size(rows, [](const AccuracyRow& r) { return r.accuracy; }, true);
}
std::map<std::size_t, double> mean_gap_by_size(const std::vector<GapResult>& gaps) {
    return reduce_by_size(gaps, [](const GapResult& g) { return g.gap; }, false);
}
std::map<std::size_t, double> mean_auc_by_size(const std::vector<RocRow>& rows) {
    return reduce_by_size(rows, [](const RocRow& r) { return r.roc.auc; }, false);
}
std::map<std::size_t, double> best_auc_by_size(const std::vector<RocRow>& rows) {
    return reduce_by_size(rows, [](const RocRow& r) { return r.roc.auc; }, true);
}

// ---- report ----------------------------------------------------------------

namespace {

std::string num(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string svg_header(int w, int h, const std::string& title) {
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
      << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << w / 2 << "\" y=\"16\" text-anchor=\"middle\">" << title << "</text>\n";
    return s.str();
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"};

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::string roc_svg(const std::vector<RocRow>& rows, const std::string& title) {
    // Plot area 400x400 at (60, 30); curves are drawn in data units.
    std::ostringstream s;
    s << svg_header(620, 480, title);
    s << "<rect x=\"60\" y=\"30\" width=\"400\" height=\"400\" fill=\"none\" stroke=\"black\"/>\n"
      << "<text x=\"260\" y=\"465\" text-anchor=\"middle\">false positive rate</text>\n"
      << "<text x=\"20\" y=\"230\" transform=\"rotate(-90 20 230)\" text-anchor=\"middle\">true positive rate</text>\n"
      << "<line x1=\"60\" y1=\"430\" x2=\"460\" y2=\"30\" stroke=\"#bbb\" stroke-dasharray=\"4 4\"/>\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i].roc;
        s << "<g transform=\"translate(60 430) scale(400 -400)\">\n<polyline class=\"roc\" fill=\"none\" stroke=\""
          << kPalette[i % 7] << "\" stroke-width=\"2\" vector-effect=\"non-scaling-stroke\" points=\"";
        for (std::size_t k = 0; k < r.fpr.size(); ++k) s << (k ? " " : "") << num(r.fpr[k]) << ',' << num(r.tpr[k]);
        s << "\"/>\n</g>\n";
        s << "<text x=\"470\" y=\"" << 50 + 18 * i << "\" fill=\"" << kPalette[i % 7] << "\">"
          << join(rows[i].receivers) << " AUC " << num(r.auc) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::string gap_svg(const std::vector<GapResult>& gaps, const std::string& title) {
    const int w = 80 + 70 * static_cast<int>(std::max<std::size_t>(gaps.size(), 1)), h = 360;
    double top = 0;
    for (const auto& g : gaps)
        for (const auto& r : g.rows) top = std::max(top, r.rank2);
    if (!(top > 0)) top = 1;
    auto y = [&](double v) { return 300.0 - 260.0 * v / top; };
    std::ostringstream s;
    s << svg_header(w, h, title);
    s << "<line x1=\"60\" y1=\"300\" x2=\"" << w - 10 << "\" y2=\"300\" stroke=\"black\"/>\n";
    for (std::size_t i = 0; i < gaps.size(); ++i) {
        const auto& g = gaps[i];
        const double x = 80 + 70.0 * static_cast<double>(i);
        for (const auto& r : g.rows) {
            s << "<circle cx=\"" << num(x + 10) << "\" cy=\"" << num(y(r.rank1)) << "\" r=\"2\" fill=\"#d62728\"/>\n";
            s << "<circle cx=\"" << num(x + 30) << "\" cy=\"" << num(y(r.rank2)) << "\" r=\"2\" fill=\"#1f77b4\"/>\n";
        }
        s << "<line x1=\"" << num(x) << "\" x2=\"" << num(x + 40) << "\" y1=\"" << num(y(g.optimal_threshold))
          << "\" y2=\"" << num(y(g.optimal_threshold)) << "\" stroke=\"black\" stroke-dasharray=\"3 2\"/>\n";
        s << "<text x=\"" << num(x + 20) << "\" y=\"318\" text-anchor=\"middle\" font-size=\"9\">"
          << join(g.receivers) << "</text>\n";
        s << "<text x=\"" << num(x + 20) << "\" y=\"332\" text-anchor=\"middle\" font-size=\"9\">gap " << num(g.gap)
          << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

void export_report(const ExperimentResults& r, const fs::path& out_dir) {
    const fs::path report = out_dir / "report";
    fs::create_directories(report);
    const std::string tag = "config_digest=" + r.config_digest;
    auto write = [&](const fs::path& p, const std::string& text) {
        fs::create_directories(p.parent_path());
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot write " + p.string());
        out << text;
        if (!out) fail(ErrorKind::Io, "write failed: " + p.string());
    };
    auto csv = [&](const std::string& name, const std::string& header, const std::vector<std::string>& lines) {
        std::string s = "# " + tag + "\n" + header + "\n";
        for (const auto& l : lines) s += l + "\n";
        write(report / "tables" / (name + ".csv"), s);
    };
    auto svg = [&](const std::string& name, std::string body) {
        const auto pos = body.find('\n');
        body.insert(pos + 1, "<!-- " + tag + " -->\n");
        write(report / "figures" / (name + ".svg"), body);
    };

    json sections = json::object();
    if (!r.accuracy.empty()) {
        std::vector<std::string> lines;
        json a = json::array();
        for (const auto& row : r.accuracy) {
            lines.push_back(join(row.receivers) + "," + std::to_string(row.receivers.size()) + "," +
                            std::to_string(row.observations) + "," + num(row.accuracy));
            a.push_back({{"receivers", row.receivers}, {"accuracy", row.accuracy}, {"observations", row.observations}});
        }
        csv("closed_set_accuracy", "receivers,subset_size,observations,accuracy", lines);
        json by = json::object();
        for (const auto& [k, v] : mean_by_size(r.accuracy)) by[std::to_string(k)] = v;
        sections["closed_set_accuracy"] = {{"subsets", a}, {"mean_by_size", by}};
    }
    if (!r.roc.empty()) {
        std::vector<std::string> curve, aucs;
        json a = json::array();
        for (const auto& row : r.roc) {
            const auto name = join(row.receivers);
            for (std::size_t i = 0; i < row.roc.tpr.size(); ++i)
                curve.push_back(name + "," + num(row.roc.thresholds[i]) + "," + num(row.roc.fpr[i]) + "," +
                                num(row.roc.tpr[i]));
            aucs.push_back(name + "," + std::to_string(row.receivers.size()) + "," + num(row.roc.auc));
            a.push_back({{"receivers", row.receivers}, {"auc", row.roc.auc}});
        }
        csv("roc_curves", "receivers,threshold,fpr,tpr", curve);
        csv("roc_auc", "receivers,subset_size,auc", aucs);
        svg("roc", roc_svg(r.roc, "Open-set ROC"));
        sections["roc"] = {{"subsets", a}};
    }
    if (!r.gaps.empty()) {
        std::vector<std::string> rows, summary;
        json a = json::array();
        for (const auto& g : r.gaps) {
            const auto name = join(g.receivers);
            for (const auto& row : g.rows) rows.push_back(name + "," + row.label + "," + num(row.rank1) + "," + num(row.rank2));
            summary.push_back(name + "," + std::to_string(g.receivers.size()) + "," + num(g.optimal_threshold) + "," +
                              num(g.margin) + "," + num(g.gap));
            a.push_back({{"receivers", g.receivers},
                         {"optimal_threshold", g.optimal_threshold},
                         {"margin", g.margin},
                         {"gap", g.gap}});
        }
        csv("gap_ranks", "receivers,label,rank1,rank2", rows);
        csv("gap_summary", "receivers,subset_size,optimal_threshold,margin,gap", summary);
        svg("gap", gap_svg(r.gaps, "Rank-1 (red) vs rank-2 (blue) distances"));
        json by = json::object();
        for (const auto& [k, v] : mean_gap_by_size(r.gaps)) by[std::to_string(k)] = v;
        sections["gap"] = {{"subsets", a}, {"mean_gap_by_size", by}};
    }
    if (r.stability) {
        const auto& s = *r.stability;
        std::string header = "device";
        for (auto round : s.rounds) header += ",round_" + std::to_string(round);
        header += ",std";
        std::vector<std::string> lines;
        json per = json::object();
        Eigen::MatrixXd m(static_cast<Eigen::Index>(s.devices.size()), static_cast<Eigen::Index>(s.rounds.size()));
        for (std::size_t i = 0; i < s.devices.size(); ++i) {
            std::string l = s.devices[i];
            for (std::size_t k = 0; k < s.rounds.size(); ++k) {
                const double v = s.normalized_distance[i][k];
                l += "," + num(v);
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = std::isfinite(v) ? v : 0.0;
            }
            l += "," + num(s.std_dev[i]);
            lines.push_back(l);
            per[s.devices[i]] = nan_to_null(s.std_dev[i]);
        }
        csv("temporal_stability", header, lines);
        svg("stability", heatmap_svg(m, "Normalized distance to reference round", "device", "round"));
        sections["temporal_stability"] = {{"reference_round", s.reference_round},
                                          {"normalizer", s.normalizer},
                                          {"normalization", "mean inter-device distance of the reference round"},
                                          {"std_by_device", per}};
    }
    if (!r.empty() && r.example_spectrogram)
        svg("spectrogram", heatmap_svg(r.example_spectrogram->values, "Example spectrogram"));

    const json summary = {{"plan_name", r.plan_name},
                          {"plan_digest", r.plan_digest},
                          {"config_digest", r.config_digest},
                          {"plan", r.plan},
                          {"training", r.training},
                          {"sections", sections}};
    write(report / "summary.json", summary.dump(2) + "\n");
}

}  // namespace rffi
