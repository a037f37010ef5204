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

#include "rffi/encoder.hpp"

#include "network.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace rffi {

using nlohmann::json;

namespace nn {

Plan make_plan(const EncoderArchitecture& arch) {
    arch.validate();
    Plan plan;
    auto add = [&](const std::string& name, std::vector<int> shape, bool trainable) {
        std::size_t count = 1;
        for (int s : shape) count *= static_cast<std::size_t>(s);
        std::size_t& cursor = trainable ? plan.n_params : plan.n_buffers;
        TensorInfo t{name, std::move(shape), cursor, count, trainable};
        cursor += count;
        plan.tensors.push_back(t);
        return t.offset;
    };
    auto conv = [&](const std::string& name, int cin, int cout, int k, int stride, int h, int w) {
        ConvSpec c;
        c.cin = cin;
        c.cout = cout;
        c.k = k;
        c.stride = stride;
        c.pad = k / 2;
        c.h = h;
        c.w = w;
        c.ho = (h + 2 * c.pad - k) / stride + 1;
        c.wo = (w + 2 * c.pad - k) / stride + 1;
        c.weight = add(name + ".w", {cout, k, k, cin}, true);
        return c;
    };
    auto bn = [&](const std::string& name, int ch) {
        BnSpec b;
        b.c = ch;
        b.gamma = add(name + ".gamma", {ch}, true);
        b.beta = add(name + ".beta", {ch}, true);
        b.mean = add(name + ".running_mean", {ch}, false);
        b.var = add(name + ".running_var", {ch}, false);
        return b;
    };
    plan.stem = conv("stem.conv", 1, arch.stem_filters, 3, 1, arch.input_rows, arch.input_cols);
    plan.stem_bn = bn("stem.bn", arch.stem_filters);
    int cin = arch.stem_filters, h = plan.stem.ho, w = plan.stem.wo;
    for (std::size_t i = 0; i < arch.block_filters.size(); ++i) {
        const std::string p = "block" + std::to_string(i + 1);
        const int f = arch.block_filters[i];
        const int s = arch.block_strides[i];
        BlockSpec b;
        b.c1 = conv(p + ".conv1", cin, f, 3, s, h, w);
        b.b1 = bn(p + ".bn1", f);
        b.c2 = conv(p + ".conv2", f, f, 3, 1, b.c1.ho, b.c1.wo);
        b.b2 = bn(p + ".bn2", f);
        b.projection = s != 1 || cin != f;
        if (b.projection) {
            b.cp = conv(p + ".proj", cin, f, 1, s, h, w);
            b.bp = bn(p + ".proj_bn", f);
        }
        plan.blocks.push_back(b);
        cin = f;
        h = b.c1.ho;
        w = b.c1.wo;
    }
    plan.features = cin;
    plan.dim = arch.embedding_dim;
    plan.dense_w = add("head.dense.w", {arch.embedding_dim, cin}, true);
    plan.dense_b = add("head.dense.b", {arch.embedding_dim}, true);
    return plan;
}

}  // namespace nn

void EncoderArchitecture::validate() const {
    require(input_rows >= 1 && input_cols >= 1, "encoder input shape must be positive");
    require(stem_filters >= 1 && embedding_dim >= 1, "encoder widths must be positive");
    require(block_filters.size() == block_strides.size(), "block filters and strides differ in length");
    for (std::size_t i = 0; i < block_filters.size(); ++i)
        require(block_filters[i] >= 1 && block_strides[i] >= 1, "block filters and strides must be positive");
}

json EncoderArchitecture::to_json() const {
    return {{"input_shape", {1, input_rows, input_cols}},
            {"stem_filters", stem_filters},
            {"block_filters", block_filters},
            {"block_strides", block_strides},
            {"kernel", 3},
            {"normalization", "batch"},
            {"nonlinearity", "relu"},
            {"embedding_dim", embedding_dim}};
}

EncoderArchitecture EncoderArchitecture::from_json(const json& j) {
    EncoderArchitecture a;
    try {
        if (j.contains("input_shape")) {
            a.input_rows = j["input_shape"].at(1).get<int>();
            a.input_cols = j["input_shape"].at(2).get<int>();
        }
        a.stem_filters = j.value("stem_filters", a.stem_filters);
        a.block_filters = j.value("block_filters", a.block_filters);
        a.block_strides = j.value("block_strides", a.block_strides);
        a.embedding_dim = j.value("embedding_dim", a.embedding_dim);
    } catch (const json::exception& e) {
        fail(ErrorKind::InvalidInput, std::string("malformed architecture: ") + e.what());
    }
    a.validate();
    return a;
}

std::string EncoderArchitecture::digest() const { return sha256_hex(to_json().dump()); }

EncoderArchitecture EncoderArchitecture::for_input(int rows, int cols) {
    EncoderArchitecture a;
    a.input_rows = rows;
    a.input_cols = cols;
    return a;
}

void TripletConfig::validate() const {
    require(margin > 0.0, "triplet margin must be positive");
    require(batch_triplets >= 1 && batches_per_epoch >= 1, "batch sizes must be positive");
    require(learning_rate > 0.0, "learning rate must be positive");
    require(plateau_patience >= 1 && plateau_patience < stop_patience,
            "plateau_patience must be at least 1 and below stop_patience");
    require(plateau_factor > 0.0 && plateau_factor <= 1.0, "plateau_factor must be in (0, 1]");
    require(max_epochs >= 1, "max_epochs must be positive");
}

json TripletConfig::to_json() const {
    return {{"margin", margin},
            {"batch_triplets", batch_triplets},
            {"batches_per_epoch", batches_per_epoch},
            {"learning_rate", learning_rate},
            {"optimizer", "rmsprop(rho=0.9, eps=1e-7)"},
            {"plateau_patience", plateau_patience},
            {"plateau_factor", plateau_factor},
            {"stop_patience", stop_patience},
            {"max_epochs", max_epochs},
            {"rng_seed", rng_seed}};
}

TripletConfig TripletConfig::from_json(const json& j) {
    TripletConfig c;
    c.margin = j.value("margin", c.margin);
    c.batch_triplets = j.value("batch_triplets", c.batch_triplets);
    c.batches_per_epoch = j.value("batches_per_epoch", c.batches_per_epoch);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
    c.stop_patience = j.value("stop_patience", c.stop_patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    c.validate();
    return c;
}

std::vector<TensorInfo> tensor_table(const EncoderArchitecture& arch) { return nn::make_plan(arch).tensors; }

std::string ModelWeights::weights_digest() const {
    std::string blob = arch.digest() + "|" + to_string(mode) + "|" + row_order + "|";
    blob.append(reinterpret_cast<const char*>(params.data()), params.size() * sizeof(float));
    blob.append(reinterpret_cast<const char*>(buffers.data()), buffers.size() * sizeof(float));
    return sha256_hex(blob);
}

ModelWeights init_model(const EncoderArchitecture& arch, SpecMode mode, bool reduced_rows, std::uint64_t seed) {
    ModelWeights w;
    w.arch = arch;
    w.mode = mode;
    w.row_order = reduced_rows ? kRowOrderReduced : kRowOrderFull;
    nn::init_params(nn::make_plan(arch), w.params, w.buffers, seed);
    return w;
}

namespace {

void check_input(const ReducedSpectrogram& s, const ModelWeights& w) {
    const bool shape_ok = s.values.rows() == w.arch.input_rows && s.values.cols() == w.arch.input_cols;
    const bool mode_ok = s.mode == w.mode && (s.reduced ? w.row_order == kRowOrderReduced : w.row_order == kRowOrderFull);
    if (!shape_ok || !mode_ok)
        fail(ErrorKind::ShapeMismatch, "spectrogram " + std::to_string(s.values.rows()) + "x" +
                                           std::to_string(s.values.cols()) + " (" + to_string(s.mode) + ", " +
                                           (s.reduced ? kRowOrderReduced : kRowOrderFull) +
                                           ") does not match model input " + std::to_string(w.arch.input_rows) +
                                           "x" + std::to_string(w.arch.input_cols) + " (" + to_string(w.mode) + ", " +
                                           w.row_order + ")");
}

Embedding to_embedding(const nn::Vec<float>& v) {
    // Re-normalize in double so the stored vector is unit length to double precision.
    Embedding e(static_cast<std::size_t>(v.size()));
    double n = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        e[static_cast<std::size_t>(i)] = v[i];
        n += static_cast<double>(v[i]) * v[i];
    }
    n = std::sqrt(n);
    if (n > 0)
        for (auto& x : e) x /= n;
    return e;
}

}  // namespace

Embedding forward_one(const ReducedSpectrogram& s, const ModelWeights& w) {
    check_input(s, w);
    const auto plan = nn::make_plan(w.arch);
    require(w.params.size() == plan.n_params && w.buffers.size() == plan.n_buffers,
            "model tensors do not match its architecture");
    return to_embedding(nn::forward_eval<float>(plan, w.params.data(), w.buffers.data(), nn::to_input<float>(s)));
}

std::vector<Embedding> forward(const std::vector<ReducedSpectrogram>& batch, const ModelWeights& w, int jobs) {
    for (const auto& s : batch) check_input(s, w);
    const auto plan = nn::make_plan(w.arch);
    require(w.params.size() == plan.n_params && w.buffers.size() == plan.n_buffers,
            "model tensors do not match its architecture");
    std::vector<Embedding> out(batch.size());
    parallel_for(batch.size(), jobs, [&](std::size_t i) {
        out[i] = to_embedding(
            nn::forward_eval<float>(plan, w.params.data(), w.buffers.data(), nn::to_input<float>(batch[i])));
    });
    return out;
}

double triplet_loss(const std::vector<Embedding>& a, const std::vector<Embedding>& p, const std::vector<Embedding>& n,
                    double margin) {
    require(a.size() == p.size() && a.size() == n.size(), "triplet lists differ in length");
    double total = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        require(a[i].size() == p[i].size() && a[i].size() == n[i].size(), "triplet vectors differ in dimension");
        double dp = 0, dn = 0;
        for (std::size_t k = 0; k < a[i].size(); ++k) {
            dp += (a[i][k] - p[i][k]) * (a[i][k] - p[i][k]);
            dn += (a[i][k] - n[i][k]) * (a[i][k] - n[i][k]);
        }
        total += std::max(0.0, dp - dn + margin);
    }
    return total;
}

ModelWeights train(const std::vector<LabeledSpectrogram>& data, const EncoderArchitecture& arch,
                   const TripletConfig& cfg, TrainReport* report) {
    cfg.validate();
    std::map<std::string, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < data.size(); ++i) by_label[data[i].label].push_back(i);
    require(by_label.size() >= 2, "training needs at least two device labels");
    for (const auto& [label, idx] : by_label)
        require(idx.size() >= 2, "label '" + label + "' has fewer than two spectrograms");

    ModelWeights w = init_model(arch, data.front().spec.mode, data.front().spec.reduced,
                                derive_seed(cfg.rng_seed, {0x1A17ULL}));
    for (const auto& d : data) check_input(d.spec, w);
    const auto plan = nn::make_plan(arch);

    std::vector<nn::Mat<float>> inputs;
    inputs.reserve(data.size());
    for (const auto& d : data) inputs.push_back(nn::to_input<float>(d.spec));
    std::vector<std::vector<std::size_t>> groups;
    for (auto& [label, idx] : by_label) groups.push_back(idx);

    Rng rng(derive_seed(cfg.rng_seed, {0x7819ULL}));
    std::vector<float> grads(plan.n_params), sq(plan.n_params, 0.0f);
    const float rho = 0.9f, eps = 1e-7f;
    double lr = cfg.learning_rate;

    ModelWeights best = w;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0, stall = 0;
    TrainReport rep;
    const std::size_t b = cfg.batch_triplets;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        double epoch_loss = 0;
        for (std::size_t step = 0; step < cfg.batches_per_epoch; ++step) {
            std::vector<nn::Mat<float>> batch(3 * b);
            for (std::size_t t = 0; t < b; ++t) {
                const std::size_t g = rng.index(groups.size());
                const auto& pos = groups[g];
                const std::size_t ai = rng.index(pos.size());
                std::size_t pi = rng.index(pos.size() - 1);
                if (pi >= ai) ++pi;
                std::size_t ng = rng.index(groups.size() - 1);
                if (ng >= g) ++ng;
                const auto& neg = groups[ng];
                batch[t] = inputs[pos[ai]];
                batch[b + t] = inputs[pos[pi]];
                batch[2 * b + t] = inputs[neg[rng.index(neg.size())]];
            }
            nn::TrainPass<float> tp;
            nn::forward_train<float>(plan, w.params.data(), w.buffers.data(), std::move(batch), tp);
            std::vector<nn::Vec<float>> demb;
            epoch_loss += nn::triplet_batch_loss<float>(tp.emb, static_cast<float>(cfg.margin), &demb);
            std::fill(grads.begin(), grads.end(), 0.0f);
            nn::backward<float>(plan, w.params.data(), grads.data(), tp, demb);
            const auto lrf = static_cast<float>(lr);
            for (std::size_t i = 0; i < grads.size(); ++i) {
                sq[i] = rho * sq[i] + (1.0f - rho) * grads[i] * grads[i];
                w.params[i] -= lrf * grads[i] / (std::sqrt(sq[i]) + eps);
            }
        }
        epoch_loss /= static_cast<double>(cfg.batches_per_epoch);
        rep.epoch_loss.push_back(epoch_loss);
        rep.learning_rate.push_back(lr);
        if (epoch_loss < best_loss) {
            best_loss = epoch_loss;
            best_epoch = epoch;
            best.params = w.params;
            best.buffers = w.buffers;
            stall = 0;
        } else {
            ++stall;
            if (stall >= cfg.stop_patience) break;
            if (stall % cfg.plateau_patience == 0) lr *= cfg.plateau_factor;
        }
    }
    rep.best_epoch = best_epoch;
    rep.best_loss = best_loss;
    best.training = {{"config", cfg.to_json()},
                     {"epoch_loss", rep.epoch_loss},
                     {"learning_rate", rep.learning_rate},
                     {"best_epoch", best_epoch},
                     {"samples", data.size()},
                     {"labels", by_label.size()}};
    if (report) *report = std::move(rep);
    return best;
}

std::vector<LabeledSpectrogram> augment(const std::vector<LabeledSpectrogram>& specs, double noise_sigma,
                                        std::size_t replication, std::uint64_t seed) {
    require(replication >= 1, "replication must be at least 1");
    require(noise_sigma >= 0.0, "noise_sigma must be non-negative");
    Rng rng(seed);
    std::vector<LabeledSpectrogram> out;
    out.reserve(specs.size() * replication);
    for (const auto& s : specs) {
        out.push_back(s);
        for (std::size_t r = 1; r < replication; ++r) {
            LabeledSpectrogram c = s;
            for (Eigen::Index i = 0; i < c.spec.values.size(); ++i) c.spec.values(i) += noise_sigma * rng.normal();
            out.push_back(std::move(c));
        }
    }
    return out;
}

namespace {

constexpr char kModelMagic[8] = {'R', 'F', 'F', 'I', 'M', 'D', 'L', '\0'};
constexpr std::uint32_t kModelVersion = 1;

std::string data_blob(const ModelWeights& w) {
    std::string blob;
    blob.append(reinterpret_cast<const char*>(w.params.data()), w.params.size() * sizeof(float));
    blob.append(reinterpret_cast<const char*>(w.buffers.data()), w.buffers.size() * sizeof(float));
    return blob;
}

}  // namespace

void save_model(const ModelWeights& w, const fs::path& path) {
    const auto plan = nn::make_plan(w.arch);
    require(w.params.size() == plan.n_params && w.buffers.size() == plan.n_buffers,
            "model tensors do not match its architecture");
    const std::string blob = data_blob(w);
    json tensors = json::array();
    for (const auto& t : plan.tensors)
        tensors.push_back({{"name", t.name},
                           {"shape", t.shape},
                           {"offset", (t.trainable ? 0 : plan.n_params) + t.offset},
                           {"count", t.count},
                           {"trainable", t.trainable}});
    const json header = {{"arch", w.arch.to_json()},
                         {"arch_digest", w.arch.digest()},
                         {"mode", to_string(w.mode)},
                         {"row_order", w.row_order},
                         {"dtype", "<f4"},
                         {"tensors", tensors},
                         {"data_sha256", sha256_hex(blob)},
                         {"training", w.training}};
    const std::string h = header.dump();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(kModelMagic, sizeof kModelMagic);
    const std::uint32_t version = kModelVersion;
    const std::uint64_t hlen = h.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

ModelWeights load_model(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open model " + path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t hlen = 0;
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kModelMagic, sizeof magic) != 0)
        fail(ErrorKind::Corrupt, path.string() + " is not a model file");
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (!in) fail(ErrorKind::Truncated, path.string() + ": truncated header");
    if (version != kModelVersion)
        fail(ErrorKind::Version, path.string() + ": unsupported model version " + std::to_string(version));
    in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    if (!in || hlen > (1u << 26)) fail(ErrorKind::Corrupt, path.string() + ": bad header length");
    std::string h(hlen, '\0');
    in.read(h.data(), static_cast<std::streamsize>(hlen));
    if (!in) fail(ErrorKind::Truncated, path.string() + ": truncated header");
    json header;
    try {
        header = json::parse(h);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Corrupt, path.string() + ": header is not JSON");
    }
    ModelWeights w;
    w.arch = EncoderArchitecture::from_json(header.at("arch"));
    if (header.value("arch_digest", std::string{}) != w.arch.digest())
        fail(ErrorKind::Digest, path.string() + ": architecture digest mismatch");
    w.mode = spec_mode_from_string(header.value("mode", std::string{}));
    w.row_order = header.value("row_order", std::string{});
    if (w.row_order != kRowOrderReduced && w.row_order != kRowOrderFull)
        fail(ErrorKind::Corrupt, path.string() + ": unknown row order '" + w.row_order + "'");
    w.training = header.value("training", json(nullptr));
    const auto plan = nn::make_plan(w.arch);
    if (header.at("tensors").size() != plan.tensors.size())
        fail(ErrorKind::Digest, path.string() + ": tensor table disagrees with architecture");
    w.params.resize(plan.n_params);
    w.buffers.resize(plan.n_buffers);
    in.read(reinterpret_cast<char*>(w.params.data()), static_cast<std::streamsize>(w.params.size() * sizeof(float)));
    in.read(reinterpret_cast<char*>(w.buffers.data()), static_cast<std::streamsize>(w.buffers.size() * sizeof(float)));
    if (!in) fail(ErrorKind::Truncated, path.string() + ": tensor data truncated");
    if (in.peek() != std::char_traits<char>::eof()) fail(ErrorKind::Corrupt, path.string() + ": trailing bytes");
    if (sha256_hex(data_blob(w)) != header.value("data_sha256", std::string{}))
        fail(ErrorKind::Corrupt, path.string() + ": tensor checksum mismatch");
    return w;
}

}  // namespace rffi
