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

// rffi: one binary, one subcommand per pipeline stage.
//
// Every subcommand merges flags over an optional JSON config file, hashes the
// effective configuration (output paths and --jobs excluded) and stamps that
// digest into everything it writes. Exit codes: 0 ok, 1 domain or I/O error,
// 2 usage error.

#include "rffi/dataset_io.hpp"
#include "rffi/detector.hpp"
#include "rffi/encoder.hpp"
#include "rffi/evalkit.hpp"
#include "rffi/fpstore.hpp"
#include "rffi/reid.hpp"
#include "rffi/rfsynth.hpp"
#include "rffi/specgen.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <memory>
#include <set>
#include <sstream>

using nlohmann::json;
using namespace rffi;

namespace {

struct Usage : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- logging ----------------------------------------------------------------

enum class Level { Quiet, Error, Warn, Info, Debug };

Level log_level() {
    static const Level level = [] {
        const char* v = std::getenv("RFFI_LOG");
        const std::string s = v ? v : "info";
        if (s == "quiet") return Level::Quiet;
        if (s == "error") return Level::Error;
        if (s == "warn") return Level::Warn;
        if (s == "debug") return Level::Debug;
        return Level::Info;
    }();
    return level;
}

void log(Level l, const std::string& msg) {
    static const char* names[] = {"", "error", "warn", "info", "debug"};
    if (l <= log_level()) std::cerr << "[rffi " << names[static_cast<int>(l)] << "] " << msg << "\n";
}

// ---- parameters -------------------------------------------------------------

template <typename T>
struct is_vector : std::false_type {};
template <typename T>
struct is_vector<std::vector<T>> : std::true_type {};

/// Flags of one subcommand. Each knows how to take a value from the config
/// file and how to report its effective value.
class Params {
public:
    explicit Params(CLI::App* app) : app_(app) {}

    template <typename T>
    CLI::Option* add(const std::string& key, T& var, const std::string& desc, bool in_digest = true) {
        auto* o = app_->add_option("--" + key, var, desc);
        if constexpr (is_vector<T>::value) o->delimiter(',');
        o->capture_default_str();
        list_.push_back({key, o, [&var](const json& j) { j.get_to(var); }, [&var] { return json(var); }, in_digest});
        return o;
    }

    CLI::Option* flag(const std::string& key, bool& var, const std::string& desc) {
        auto* o = app_->add_flag("--" + key, var, desc);
        list_.push_back({key, o, [&var](const json& j) { var = j.get<bool>(); }, [&var] { return json(var); }, true});
        return o;
    }

    /// Config values apply only where the flag was not given.
    void apply(const json& cfg) {
        for (auto& p : list_) {
            if (p.opt->count() > 0 || !cfg.contains(p.key)) continue;
            try {
                p.set(cfg.at(p.key));
                from_config_.insert(p.key);
            } catch (const json::exception& e) {
                throw Usage("config value for '" + p.key + "': " + e.what());
            }
        }
    }

    bool given(const std::string& key) const {
        for (const auto& p : list_)
            if (p.key == key) return p.opt->count() > 0 || from_config_.count(key);
        return false;
    }

    void need(const std::string& key) const {
        if (!given(key)) throw Usage("--" + key + " is required");
    }

    json effective() const {
        json j = json::object();
        for (const auto& p : list_)
            if (p.in_digest) j[p.key] = p.get();
        return j;
    }

private:
    struct Entry {
        std::string key;
        CLI::Option* opt;
        std::function<void(const json&)> set;
        std::function<json()> get;
        bool in_digest;
    };
    CLI::App* app_;
    std::vector<Entry> list_;
    std::set<std::string> from_config_;
};

struct Context {
    std::string command;
    json config;
    std::string digest;
    int jobs = 1;
};

struct Command {
    CLI::App* app = nullptr;
    std::unique_ptr<Params> params;
    /// Adds derived inputs (plan contents, input digests) before hashing.
    std::function<void(json&)> enrich;
    std::function<int(const Context&)> run;
};

// ---- shared helpers ---------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + p.string());
    out << text;
    if (!out) fail(ErrorKind::Io, "write failed: " + p.string());
}

SpecMode parse_mode(const std::string& s) {
    try {
        return spec_mode_from_string(s);
    } catch (const Error&) {
        throw Usage("unknown spectrogram mode '" + s + "' (raw, equalized, ch_ind, eq_ch_ind)");
    }
}

std::string svg_with_digest(const std::string& svg, const std::string& digest) {
    const auto nl = svg.find('\n');
    const std::string tag = "<!-- config_digest=" + digest + " -->\n";
    return nl == std::string::npos ? svg + "\n" + tag : svg.substr(0, nl + 1) + tag + svg.substr(nl + 1);
}

struct Key {
    std::string device;
    std::uint32_t round;
    std::string receiver;
    auto operator<=>(const Key&) const = default;
};

/// Emitter-labelled captures of a dataset, indexed by (device, round, receiver).
struct Dataset {
    fs::path root;
    DatasetManifest manifest;
    std::map<Key, const ManifestEntry*> index;
    std::vector<std::string> devices;
    std::vector<std::string> receivers;

    explicit Dataset(const fs::path& r) : root(r), manifest(load_manifest(r)) {
        std::set<std::string> dev, rx;
        for (const auto& e : manifest.captures) {
            if (!e.meta.emitter_id) continue;
            index[{*e.meta.emitter_id, e.meta.round_index, e.meta.receiver_id}] = &e;
            dev.insert(*e.meta.emitter_id);
            rx.insert(e.meta.receiver_id);
        }
        devices.assign(dev.begin(), dev.end());
        receivers.assign(rx.begin(), rx.end());
    }

    const ManifestEntry& at(const Key& k) const {
        auto it = index.find(k);
        if (it == index.end())
            fail(ErrorKind::InvalidInput, "dataset has no capture for " + k.device + " round " +
                                              std::to_string(k.round) + " at " + k.receiver);
        return *it->second;
    }

    /// Features for every key, frames [skip, skip + limit) of each capture.
    std::map<Key, std::vector<FrameFeature>> features(const std::vector<Key>& keys, SpecMode mode, bool reduce,
                                                      std::size_t skip, std::size_t limit, int jobs) const {
        SpecOptions so;
        so.reduce = reduce;
        std::vector<std::vector<FrameFeature>> out(keys.size());
        parallel_for(keys.size(), jobs, [&](std::size_t i) {
            const auto& e = at(keys[i]);
            const auto [sig, meta] = read_capture(root / e.path);
            ExtractStats st;
            out[i] = extract_features(sig, meta, mode, so, skip, limit, &st);
            if (st.rejected) log(Level::Debug, e.path + ": " + std::to_string(st.rejected) + " frames rejected");
        });
        std::map<Key, std::vector<FrameFeature>> m;
        for (std::size_t i = 0; i < keys.size(); ++i) m[keys[i]] = std::move(out[i]);
        return m;
    }
};

std::vector<std::string> or_all(const std::vector<std::string>& given, const std::vector<std::string>& all) {
    return given.empty() ? all : given;
}

std::vector<Key> keys_for(const std::vector<std::string>& devices, const std::vector<std::uint32_t>& rounds,
                          const std::vector<std::string>& receivers) {
    std::vector<Key> k;
    for (const auto& d : devices)
        for (auto r : rounds)
            for (const auto& rx : receivers) k.push_back({d, r, rx});
    return k;
}

ReceiverFrames embed(const std::vector<FrameFeature>& fs, const ModelWeights& model, int jobs) {
    ReceiverFrames rf;
    std::vector<ReducedSpectrogram> specs;
    for (const auto& f : fs) {
        specs.push_back(f.spec);
        rf.rssi_dbm.push_back(f.rssi_dbm);
    }
    rf.embeddings = forward(specs, model, jobs);
    return rf;
}

/// Captures named by --capture or, failing that, every capture of --dataset.
std::vector<std::pair<fs::path, std::string>> capture_list(const std::string& dataset, const std::string& capture) {
    std::vector<std::pair<fs::path, std::string>> out;
    if (!capture.empty()) {
        out.emplace_back(capture, fs::path(capture).filename().string());
        return out;
    }
    const auto m = load_manifest(dataset);
    for (const auto& e : m.captures) out.emplace_back(fs::path(dataset) / e.path, e.path);
    return out;
}

// ---- subcommands ------------------------------------------------------------

struct SynthArgs {
    std::size_t devices = 8, receivers = 3, frames = 100, rounds = 1;
    std::uint64_t seed = 0;
    bool no_channel_redraw = false;
    std::vector<std::string> redraw_impairments;
    std::vector<double> receiver_gains;
    std::string scenario, out;
};

Command synth_command(CLI::App& root, SynthArgs& a) {
    Command c;
    c.app = root.add_subcommand("synth", "Generate a synthetic capture dataset");
    auto& p = *(c.params = std::make_unique<Params>(c.app));
    p.add("devices", a.devices, "Number of emitters");
    p.add("receivers", a.receivers, "Number of receivers");
    p.add("frames", a.frames, "Frames per (emitter, receiver, round)");
    p.add("rounds", a.rounds, "Capture rounds");
    p.add("seed", a.seed, "Scenario seed");
    p.flag("no-channel-redraw", a.no_channel_redraw, "Keep channels fixed across rounds");
    p.add("redraw-impairments", a.redraw_impairments, "Devices whose impairments change every round");
    p.add("receiver-gains", a.receiver_gains, "Mean path gain per receiver in dB");
    p.add("scenario", a.scenario, "Full scenario JSON (overrides the generator flags)");
    p.add("out", a.out, "Output dataset directory", false);
    c.enrich = [&a](json& cfg) {
        if (!a.scenario.empty()) cfg["scenario_json"] = json::parse(slurp(a.scenario));
    };
    c.run = [&a, &p](const Context& ctx) {
        p.need("out");
        SynthScenario s;
        if (!a.scenario.empty()) {
            s = scenario_from_json(ctx.config["scenario_json"]);
        } else {
            RandomScenarioOptions o;
            o.devices = a.devices;
            o.receivers = a.receivers;
            o.frames = a.frames;
            o.rounds = a.rounds;
            o.seed = a.seed;
            o.redraw = !a.no_channel_redraw;
            if (!a.receiver_gains.empty()) o.receiver_gain_db = a.receiver_gains;
            s = random_scenario(o);
        }
        for (const auto& id : a.redraw_impairments) {
            auto it = std::find_if(s.emitters.begin(), s.emitters.end(),
                                   [&](const Emitter& e) { return e.device_id == id; });
            if (it == s.emitters.end()) throw Usage("--redraw-impairments: no device '" + id + "'");
            it->redraw_impairments_each_round = true;
        }
        const auto m = synth_dataset(s, a.out, ctx.jobs, ctx.digest);
        log(Level::Info, "wrote " + std::to_string(m.captures.size()) + " captures to " + a.out);
        std::cout << json{{"captures", m.captures.size()}, {"scenario_digest", m.scenario_digest},
                          {"config_digest", ctx.digest}}
                         .dump()
                  << "\n";
        return 0;
    };
    return c;
}

struct DetectArgs {
    std::string dataset, capture, out;
    double coarse_threshold = 0.5, min_ltf_score = 0.5;
};

Command detect_command(CLI::App& root, DetectArgs& a) {
    Command c;
    c.app = root.add_subcommand("detect", "Detect frames and write detections as JSON lines");
    auto& p = *(c.params = std::make_unique<Params>(c.app));
    p.add("dataset", a.dataset, "Dataset directory");
    p.add("capture", a.capture, "Single capture file (instead of --dataset)");
    p.add("coarse-threshold", a.coarse_threshold, "STF metric threshold");
    p.add("min-ltf-score", a.min_ltf_score, "Minimum refined LTF score");
    p.add("out", a.out, "Output detections.jsonl", false);
    c.run = [&a, &p](const Context& ctx) {
        p.need("out");
        if (a.dataset.empty() == a.capture.empty()) throw Usage("give exactly one of --dataset and --capture");
        const auto caps = capture_list(a.dataset, a.capture);
        std::vector<std::string> lines(caps.size());
        parallel_for(caps.size(), ctx.jobs, [&](std::size_t i) {
            const auto [sig, meta] = read_capture(caps[i].first);
            DetectorConfig dc;
            dc.coarse_threshold = a.coarse_threshold;
            dc.min_ltf_score = a.min_ltf_score;
            dc.rssi_calibration_db = meta.rssi_calibration_db;
            const auto dets = detect_frames(sig, reference_preamble(sig.sample_rate_hz), dc);
            std::string text;
            for (std::size_t k = 0; k < dets.size(); ++k) {
                const auto& d = dets[k];
                json j = {{"capture", caps[i].second},
                          {"receiver_id", meta.receiver_id},
                          {"emitter_id", meta.emitter_id ? json(*meta.emitter_id) : json(nullptr)},
                          {"round", meta.round_index},
                          {"frame", k},
                          {"start_index", d.start_index},
                          {"coarse_cfo_hz", d.coarse_cfo_hz},
                          {"fine_cfo_hz", d.fine_cfo_hz},
                          {"rssi_dbm", d.rssi_dbm},
                          {"correlation_score", d.correlation_score},
                          {"config_digest", ctx.digest}};
                text += j.dump() + "\n";
            }
            lines[i] = std::move(text);
        });
        std::string all;
        for (const auto& l : lines) all += l;
        write_text(a.out, all);
        log(Level::Info, "detections from " + std::to_string(caps.size()) + " captures written to " + a.out);
        return 0;
    };
    return c;
}

struct SpectroArgs {
    std::string dataset, capture, mode = "ch_ind", out;
    bool full_rows = false;
    std::size_t limit = 1;
};

Command spectro_command(CLI::App& root, SpectroArgs& a) {
    Command c;
    c.app = root.add_subcommand("spectro", "Write spectrogram dumps and heatmaps");
    auto& p = *(c.params = std::make_unique<Params>(c.app));
    p.add("dataset", a.dataset, "Dataset directory");
    p.add("capture", a.capture, "Single capture file (instead of --dataset)");
    p.add("mode", a.mode, "raw | equalized | ch_ind | eq_ch_ind");
    p.flag("full-rows", a.full_rows, "Keep all center-shifted rows");
    p.add("limit", a.limit, "Frames per capture (0 = all)");
    p.add("out", a.out, "Output directory", false);
    c.run = [&a, &p](const Context& ctx) {
        p.need("out");
        if (a.dataset.empty() == a.capture.empty()) throw Usage("give exactly one of --dataset and --capture");
        const SpecMode mode = parse_mode(a.mode);
        const auto caps = capture_list(a.dataset, a.capture);
        SpecOptions so;
        so.reduce = !a.full_rows;
        std::vector<json> written(caps.size(), json::array());
        parallel_for(caps.size(), ctx.jobs, [&](std::size_t i) {
            const auto [sig, meta] = read_capture(caps[i].first);
            const auto feats = extract_features(sig, meta, mode, so, 0, a.limit);
            std::string stem = caps[i].second;
            std::replace(stem.begin(), stem.end(), '/', '_');
            stem = fs::path(stem).replace_extension().string();
            for (std::size_t k = 0; k < feats.size(); ++k) {
                char suffix[16];
                std::snprintf(suffix, sizeof suffix, "_f%03zu", k);
                const fs::path base = fs::path(a.out) / (stem + suffix);
                const json extra = {{"capture", caps[i].second},
                                    {"start_index", feats[k].start_index},
                                    {"mode", a.mode},
                                    {"config_digest", ctx.digest}};
                write_matrix_dump(base.string() + ".f32", feats[k].spec.values, extra);
                write_text(base.string() + ".svg",
                           svg_with_digest(heatmap_svg(feats[k].spec.values, stem + suffix), ctx.digest));
                written[i].push_back(base.filename().string());
            }
        });
        json index = {{"config_digest", ctx.digest}, {"config", ctx.config}, {"spectrograms", json::array()}};
        for (auto& w : written)
            for (auto& n : w) index["spectrograms"].push_back(n);
        write_text(fs::path(a.out) / "index.json", index.dump(2) + "\n");
        log(Level::Info, std::to_string(index["spectrograms"].size()) + " spectrograms written to " + a.out);
        return 0;
    };
    return c;
}

struct TrainArgs {
    std::string dataset, mode = "ch_ind", out;
    std::vector<std::string> devices, receivers;
    std::vector<std::uint32_t> rounds{0};
    std::size_t frames = 200;
    bool full_rows = false;
    EncoderArchitecture arch;
    TripletConfig cfg;
    double augment_sigma = 0.0;
    std::size_t augment_copies = 1;
};

Command train_command(CLI::App& root, TrainArgs& a) {
    Command c;
    c.app = root.add_subcommand("train", "Train the fingerprint encoder with triplet loss");
    auto& p = *(c.params = std::make_unique<Params>(c.app));
    p.add("dataset", a.dataset, "Dataset directory");
    p.add("devices", a.devices, "Training devices (default: all)");
    p.add("receivers", a.receivers, "Receivers (default: all)");
    p.add("rounds", a.rounds, "Training rounds");
    p.add("frames", a.frames, "Frames per capture");
    p.add("mode", a.mode, "raw | equalized | ch_ind | eq_ch_ind");
    p.flag("full-rows", a.full_rows, "Keep all center-shifted rows");
    p.add("stem", a.arch.stem_filters, "Stem filters");
    p.add("filters", a.arch.block_filters, "Filters per residual block");
    p.add("strides", a.arch.block_strides, "Stride per residual block");
    p.add("dim", a.arch.embedding_dim, "Embedding dimension");
    p.add("epochs", a.cfg.max_epochs, "Maximum epochs");
    p.add("batches", a.cfg.batches_per_epoch, "Batches per epoch");
    p.add("batch-triplets", a.cfg.batch_triplets, "Triplets per batch");
    p.add("lr", a.cfg.learning_rate, "Initial learning rate");
    p.add("margin", a.cfg.margin, "Triplet margin");
    p.add("plateau-patience", a.cfg.plateau_patience, "Epochs without improvement before decaying lr");
    p.add("plateau-factor", a.cfg.plateau_factor, "Learning-rate decay factor");
    p.add("stop-patience", a.cfg.stop_patience, "Epochs without improvement before stopping");
    p.add("seed", a.cfg.rng_seed, "Initialization and sampling seed");
    p.add("augment-sigma", a.augment_sigma, "Noise std of augmented copies");
    p.add("augment-copies", a.augment_copies, "Copies per spectrogram (1 = none)");
    p.add("out", a.out, "Output model file", false);
    c.enrich = [&a](json& cfg) {
        if (!a.dataset.empty()) cfg["dataset_digest"] = manifest_digest(load_manifest(a.dataset));
    };
    c.run = [&a, &p](const Context& ctx) {
        p.need("dataset");
        p.need("out");
        const SpecMode mode = parse_mode(a.mode);
        const Dataset ds(a.dataset);
        const auto devices = or_all(a.devices, ds.devices);
        const auto feats = ds.features(keys_for(devices, a.rounds, or_all(a.receivers, ds.receivers)), mode,
                                       !a.full_rows, 0, a.frames, ctx.jobs);
        std::vector<LabeledSpectrogram> data;
        for (const auto& [k, fs] : feats)
            for (const auto& f : fs) data.push_back({f.spec, k.device});
        if (data.empty()) fail(ErrorKind::InvalidInput, "no training spectrograms extracted");
        if (a.augment_copies > 1)
            data = augment(data, a.augment_sigma, a.augment_copies, derive_seed(a.cfg.rng_seed, {0xA6}));
        auto arch = a.arch;
        arch.input_rows = static_cast<int>(data.front().spec.values.rows());
        arch.input_cols = static_cast<int>(data.front().spec.values.cols());
        log(Level::Info, "training on " + std::to_string(data.size()) + " spectrograms from " +
                             std::to_string(devices.size()) + " devices");
        TrainReport rep;
        auto model = train(data, arch, a.cfg, &rep);
        model.training["config_digest"] = ctx.digest;
        model.training["cli_config"] = ctx.config;
        save_model(model, a.out);
        std::cout << json{{"epochs", rep.epoch_loss.size()},
                          {"best_epoch", rep.best_epoch},
                          {"best_loss", rep.best_loss},
                          {"weights_digest", model.weights_digest()},
                          {"config_digest", ctx.digest}}
                         .dump()
                  << "\n";
        return 0;
    };
    return c;
}

/// Model, mode and row choice for stages that embed with a trained encoder.
struct Embedder {
    ModelWeights model;
    bool reduce;

    explicit Embedder(const std::string& path)
        : model(load_model(path)), reduce(model.row_order == kRowOrderReduced) {}
};

struct EnrollArgs {
    std::string dataset, model, store, from;
    std::vector<std::string> devices, receivers;
    std::uint32_t round = 0;
    std::size_t frames = 50, skip = 0;
    bool update = false;
};

Command enroll_command(CLI::App& root, EnrollArgs& a) {
    Command c;
    c.app = root.add_subcommand("enroll", "Enroll devices into a fingerprint store");
    auto& p = *(c.params = std::make_unique<Params>(c.app));
    p.add("dataset", a.dataset, "Dataset directory");
    p.add("model", a.model, "Encoder model file");
    p.add("from", a.from, "Existing store to start from (left unchanged)");
    p.add("devices", a.devices, "Devices to enroll (default: all)");
    p.add("receivers", a.receivers, "Receivers (default: all)");
    p.add("round", a.round, "Enrollment round");
    p.add("frames", a.frames, "Frames averaged per receiver");
    p.add("skip", a.skip, "Frames skipped at the start of each capture");
    p.flag("update", a.update, "Replace receivers of already enrolled devices");
    p.add("store", a.store, "Output store file", false);
    c.enrich = [&a](json& cfg) {
        if (!a.dataset.empty()) cfg["dataset_digest"] = manifest_digest(load_manifest(a.dataset));
        if (!a.model.empty()) cfg["model_digest"] = load_model(a.model).weights_digest();
        if (!a.from.empty()) cfg["from_digest"] = sha256_file(a.from);
    };
    c.run = [&a, &p](const Context& ctx) {
        for (const char* k : {"dataset", "model", "store"}) p.need(k);
        if (!a.from.empty() && fs::exists(a.store) && fs::equivalent(a.from, a.store))
            throw Usage("--store must differ from --from; inputs are never modified");
        const Embedder em(a.model);
        const Dataset ds(a.dataset);
        const auto devices = or_all(a.devices, ds.devices);
        const auto receivers = or_all(a.receivers, ds.receivers);
        const auto feats =
            ds.features(keys_for(devices, {a.round}, receivers), em.model.mode, em.reduce, a.skip, a.frames, ctx.jobs);
        FingerprintStore store = a.from.empty() ? FingerprintStore{} : FingerprintStore::restore(a.from);
        for (const auto& d : devices) {
            std::vector<Fingerprint> fps;
            for (const auto& rx : receivers) {
                const Key k{d, a.round, rx};
                const auto& fs = feats.at(k);
                if (fs.empty()) {
                    log(Level::Warn, d + " has no usable frames at " + rx);
                    continue;
                }
                fps.push_back(aggregate_receiver(embed(fs, em.model, ctx.jobs), rx, ds.at(k).meta.timestamp_utc));
            }
            if (fps.empty()) fail(ErrorKind::InvalidInput, "no usable frames for " + d);
            store.enroll(d, fps, a.update);
        }
        store.set_metadata({{"config_digest", ctx.digest}, {"config", ctx.config}});
        store.persist(a.store);
        log(Level::Info, "enrolled " + std::to_string(devices.size()) + " devices into " + a.store);
        std::cout << json{{"devices", store.size()}, {"config_digest", ctx.digest}}.dump() << "\n";
        return 0;
    };
    return c;
}

struct IdentifyArgs {
    std::string dataset, model, store, store_out, log, rssi_source = "query";
    std::vector<std::string> devices, receivers;
    std::uint32_t round = 1;
    std::size_t frames = 100, skip = 0, observation_frames = 0, k = 10;
    double threshold = 0.0;
};

Command identify_command(CLI::App& root, IdentifyArgs& a) {
    Command c;
    c.app = root.add_subcommand("identify", "Re-identify observations against a store");
    auto& p = *(c.params = std::make_unique<Params>(c.app));
    p.add("dataset", a.dataset, "Dataset directory");
    p.add("model", a.model, "Encoder model file");
    p.add("store", a.store, "Fingerprint store (read only)");
    p.add("threshold", a.threshold, "D_c decision threshold (from eval gap analysis)");
    p.add("devices", a.devices, "Observed devices (default: all)");
    p.add("receivers", a.receivers, "Receivers (default: all)");
    p.add("round", a.round, "Observation round");
    p.add("frames", a.frames, "Frames read per capture");
    p.add("skip", a.skip, "Frames skipped at the start of each capture");
    p.add("observation-frames", a.observation_frames, "Frames per observation (0 = all)");
    p.add("k", a.k, "Candidates per receiver");
    p.add("rssi-source", a.rssi_source, "query | enrolled");
    p.add("log", a.log, "Output decision log (JSON lines)", false);
    p.add("store-out", a.store_out, "Write the store with new devices enrolled here", false);
    c.enrich = [&a](json& cfg) {
        if (!a.dataset.empty()) cfg["dataset_digest"] = manifest_digest(load_manifest(a.dataset));
        if (!a.model.empty()) cfg["model_digest"] = load_model(a.model).weights_digest();
        if (!a.store.empty()) cfg["store_digest"] = sha256_file(a.store);
    };
    c.run = [&a, &p](const Context& ctx) {
        if (!p.given("threshold"))
            throw Usage(
                "--threshold is required and has no default. Run `rffi eval` on a plan with enrolled and "
                "identify devices, then take gap_summary.csv's optimal_threshold (or pick one from roc_curves.csv).");
        for (const char* k : {"dataset", "model", "store", "log"}) p.need(k);
        if (a.rssi_source != "query" && a.rssi_source != "enrolled")
            throw Usage("--rssi-source must be query or enrolled");
        if (!a.store_out.empty() && fs::exists(a.store_out) && fs::equivalent(a.store, a.store_out))
            throw Usage("--store-out must differ from --store; inputs are never modified");
        const Embedder em(a.model);
        const Dataset ds(a.dataset);
        const auto devices = or_all(a.devices, ds.devices);
        const auto receivers = or_all(a.receivers, ds.receivers);
        const auto feats =
            ds.features(keys_for(devices, {a.round}, receivers), em.model.mode, em.reduce, a.skip, a.frames, ctx.jobs);

        auto store = FingerprintStore::restore(a.store);
        ReidConfig rc;
        rc.k = a.k;
        rc.threshold = a.threshold;
        rc.rssi_source = a.rssi_source == "query" ? RssiSource::Query : RssiSource::Enrolled;
        rc.enroll_new = !a.store_out.empty();
        Reidentifier reid(store, rc);

        std::string lines;
        std::size_t known = 0, correct = 0, total = 0;
        for (const auto& d : devices) {
            std::map<std::string, ReceiverFrames> per_rx;
            std::size_t n = std::numeric_limits<std::size_t>::max();
            for (const auto& rx : receivers) {
                per_rx[rx] = embed(feats.at({d, a.round, rx}), em.model, ctx.jobs);
                n = std::min(n, per_rx[rx].embeddings.size());
            }
            const std::size_t of = a.observation_frames == 0 ? n : a.observation_frames;
            if (of == 0) {
                log(Level::Warn, "no usable frames for " + d);
                continue;
            }
            const std::string stamp = ds.at({d, a.round, receivers.front()}).meta.timestamp_utc;
            for (std::size_t g = 0; g + 1 <= n / of; ++g) {
                Observation o;
                o.round = a.round;
                o.label = d;
                o.timestamp_utc = stamp;
                for (const auto& [rx, rf] : per_rx) {
                    auto b = static_cast<std::ptrdiff_t>(g * of), e = static_cast<std::ptrdiff_t>((g + 1) * of);
                    o.receivers[rx].embeddings.assign(rf.embeddings.begin() + b, rf.embeddings.begin() + e);
                    o.receivers[rx].rssi_dbm.assign(rf.rssi_dbm.begin() + b, rf.rssi_dbm.begin() + e);
                }
                const auto dec = reid.reidentify(o);
                ++total;
                if (dec.known) {
                    ++known;
                    if (dec.device_id == d) ++correct;
                }
                auto j = dec.to_json();
                j["config_digest"] = ctx.digest;
                lines += j.dump() + "\n";
            }
        }
        write_text(a.log, lines);
        if (!a.store_out.empty()) {
            auto meta = store.metadata();
            meta["config_digest"] = ctx.digest;
            meta["config"] = ctx.config;
            store.set_metadata(meta);
            store.persist(a.store_out);
        }
        std::cout << json{{"observations", total},
                          {"known", known},
                          {"known_matching_label", correct},
                          {"config_digest", ctx.digest}}
                         .dump()
                  << "\n";
        return 0;
    };
    return c;
}

struct EvalArgs {
    std::string plan, out;
};

Command eval_command(CLI::App& root, EvalArgs& a) {
    Command c;
    c.app = root.add_subcommand("eval", "Run an experiment plan and write its report");
    auto& p = *(c.params = std::make_unique<Params>(c.app));
    p.add("plan", a.plan, "Experiment plan JSON", false);
    p.add("out", a.out, "Output directory", false);
    c.enrich = [&a](json& cfg) {
        if (a.plan.empty()) return;
        const auto plan = ExperimentPlan::load(a.plan);
        cfg["plan"] = plan.to_json();
        cfg["dataset_digest"] = manifest_digest(load_manifest(plan.base_dir / plan.dataset));
    };
    c.run = [&a, &p](const Context& ctx) {
        p.need("plan");
        p.need("out");
        const auto plan = ExperimentPlan::load(a.plan);
        const auto res = run_experiment(plan, a.out, ctx.jobs, ctx.digest);
        export_report(res, a.out);
        write_text(fs::path(a.out) / "config.json",
                   json{{"command", ctx.command}, {"config", ctx.config}, {"config_digest", ctx.digest}}.dump(2) +
                       "\n");
        json summary = {{"config_digest", ctx.digest}, {"accuracy", json::object()}};
        for (const auto& row : res.accuracy) {
            std::string name;
            for (const auto& rx : row.receivers) name += (name.empty() ? "" : "+") + rx;
            summary["accuracy"][name] = row.accuracy;
        }
        std::cout << summary.dump() << "\n";
        return 0;
    };
    return c;
}

struct DbArgs {
    std::string store, out;
    bool full = false;
};

Command db_command(CLI::App& db, DbArgs& a, bool exporting) {
    Command c;
    c.app = db.add_subcommand(exporting ? "export" : "stats",
                              exporting ? "Dump store records as JSON" : "Summarize a store");
    auto& p = *(c.params = std::make_unique<Params>(c.app));
    p.add("store", a.store, "Fingerprint store");
    if (exporting) p.flag("full", a.full, "Include raw embeddings");
    p.add("out", a.out, "Write to this file instead of stdout", false);
    c.enrich = [&a](json& cfg) {
        if (!a.store.empty()) cfg["store_digest"] = sha256_file(a.store);
    };
    c.run = [&a, &p, exporting](const Context& ctx) {
        p.need("store");
        const auto store = FingerprintStore::restore(a.store);
        json j = exporting ? store.export_json(a.full) : store.stats();
        j["store_metadata"] = store.metadata();
        j["config_digest"] = ctx.digest;
        if (a.out.empty())
            std::cout << j.dump(2) << "\n";
        else
            write_text(a.out, j.dump(2) + "\n");
        return 0;
    };
    return c;
}

struct VerifyArgs {
    std::string report;
};

Command verify_command(CLI::App& root, VerifyArgs& a) {
    Command c;
    c.app = root.add_subcommand("verify", "Check that every artifact in an eval output carries its digest");
    auto& p = *(c.params = std::make_unique<Params>(c.app));
    p.add("report", a.report, "Eval output directory (or its report/ subdirectory)");
    c.run = [&a, &p](const Context&) {
        p.need("report");
        fs::path dir = a.report;
        if (!fs::exists(dir / "report" / "summary.json") && fs::exists(dir / "summary.json")) dir = dir.parent_path();
        const fs::path summary = dir / "report" / "summary.json";
        if (!fs::exists(summary)) fail(ErrorKind::Io, "no report/summary.json under " + a.report);
        const std::string digest = json::parse(slurp(summary)).at("config_digest").get<std::string>();
        if (digest.empty()) fail(ErrorKind::Corrupt, "summary.json has an empty config_digest");
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        std::size_t bad = 0;
        for (const auto& f : files)
            if (slurp(f).find(digest) == std::string::npos) {
                ++bad;
                std::cout << "MISSING " << fs::relative(f, dir).string() << "\n";
            }
        std::cout << (bad ? "FAIL " : "OK ") << files.size() - bad << "/" << files.size()
                  << " artifacts carry config_digest=" << digest << "\n";
        if (bad) fail(ErrorKind::Digest, std::to_string(bad) + " artifacts lack the report digest");
        return 0;
    };
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rffi: WiFi device fingerprinting and re-identification"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    int jobs = 1;
    app.add_option("--config", config_path, "JSON config file; explicit flags win");
    app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();

    SynthArgs synth;
    DetectArgs detect;
    SpectroArgs spectro;
    TrainArgs train_args;
    EnrollArgs enroll;
    IdentifyArgs identify;
    EvalArgs eval;
    DbArgs db_stats, db_export;
    VerifyArgs verify;

    std::vector<Command> cmds;
    cmds.push_back(synth_command(app, synth));
    cmds.push_back(detect_command(app, detect));
    cmds.push_back(spectro_command(app, spectro));
    cmds.push_back(train_command(app, train_args));
    cmds.push_back(enroll_command(app, enroll));
    cmds.push_back(identify_command(app, identify));
    cmds.push_back(eval_command(app, eval));
    auto* db = app.add_subcommand("db", "Fingerprint store utilities");
    db->require_subcommand(1);
    cmds.push_back(db_command(*db, db_stats, false));
    cmds.push_back(db_command(*db, db_export, true));
    cmds.push_back(verify_command(app, verify));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    for (auto& c : cmds) {
        if (!c.app->parsed()) continue;
        Context ctx;
        ctx.command = c.app->get_parent() == db ? "db " + c.app->get_name() : c.app->get_name();
        ctx.jobs = jobs;
        try {
            if (!config_path.empty()) {
                const auto cfg = json::parse(slurp(config_path));
                if (!cfg.is_object()) throw Usage("--config must hold a JSON object");
                json scoped = cfg;
                // Keys may sit at top level or under the subcommand's name.
                if (cfg.contains(c.app->get_name()) && cfg[c.app->get_name()].is_object())
                    scoped.update(cfg[c.app->get_name()]);
                c.params->apply(scoped);
            }
            ctx.config = c.params->effective();
            if (c.enrich) c.enrich(ctx.config);
            ctx.digest = sha256_hex(json{{"command", ctx.command}, {"config", ctx.config}}.dump());
            log(Level::Debug, "effective config: " + ctx.config.dump());
            log(Level::Info, ctx.command + " config_digest=" + ctx.digest);
            return c.run(ctx);
        } catch (const Usage& e) {
            std::cerr << "rffi " << ctx.command << ": " << e.what() << "\n";
            return 2;
        } catch (const rffi::Error& e) {
            std::cerr << "rffi " << ctx.command << ": " << to_string(e.kind()) << ": " << e.what() << "\n";
            return 1;
        } catch (const std::exception& e) {
            std::cerr << "rffi " << ctx.command << ": " << e.what() << "\n";
            return 1;
        }
    }
    return 2;
}
