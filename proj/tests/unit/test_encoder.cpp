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

#include "../support/tmpdir.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>

using namespace rffi;

namespace {

EncoderArchitecture tiny_arch() {
    EncoderArchitecture a;
    a.input_rows = 8;
    a.input_cols = 8;
    a.stem_filters = 4;
    a.block_filters = {4, 6};
    a.block_strides = {1, 2};
    a.embedding_dim = 5;
    return a;
}

ReducedSpectrogram random_spec(int rows, int cols, std::uint64_t seed, SpecMode mode = SpecMode::ChInd) {
    Rng rng(seed);
    ReducedSpectrogram s;
    s.values.resize(rows, cols);
    for (Eigen::Index i = 0; i < s.values.size(); ++i) s.values(i) = rng.normal();
    s.mode = mode;
    s.standardized = true;
    return s;
}

// Per-label template plus small noise.
std::vector<LabeledSpectrogram> toy_data(int rows, int cols, std::size_t labels, std::size_t per_label) {
    std::vector<LabeledSpectrogram> out;
    for (std::size_t l = 0; l < labels; ++l) {
        const auto base = random_spec(rows, cols, 100 + l);
        Rng rng(900 + l);
        for (std::size_t k = 0; k < per_label; ++k) {
            LabeledSpectrogram d{base, "dev" + std::to_string(l)};
            for (Eigen::Index i = 0; i < d.spec.values.size(); ++i) d.spec.values(i) += 0.3 * rng.normal();
            out.push_back(std::move(d));
        }
    }
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

}  // namespace

TEST_CASE("default architecture layout") {
    const auto table = tensor_table(EncoderArchitecture{});
    CHECK(table.front().name == "stem.conv.w");
    CHECK(table.front().shape == std::vector<int>{32, 3, 3, 1});
    CHECK(table.back().name == "head.dense.b");
    bool has_proj = false;
    for (const auto& t : table) has_proj |= t.name == "block3.proj.w";
    CHECK(has_proj);
    EncoderArchitecture bad;
    bad.block_strides.pop_back();
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK(EncoderArchitecture::from_json(EncoderArchitecture{}.to_json()).digest() == EncoderArchitecture{}.digest());
}

TEST_CASE("triplet loss reference values") {
    const Embedding a{1, 0}, b{0, 1};
    // Perfectly separated: |a-a|^2 - |a-b|^2 + 0.2 = -1.8 -> 0.
    CHECK(triplet_loss({a}, {a}, {b}, 0.2) == doctest::Approx(0.0));
    // Swapped roles: 2 - 0 + 0.2.
    CHECK(triplet_loss({a}, {b}, {a}, 0.2) == doctest::Approx(2.2));
    // Positive equal to negative leaves exactly the margin.
    CHECK(triplet_loss({a}, {b}, {b}, 0.2) == doctest::Approx(0.2));
    CHECK(triplet_loss({a, a}, {b, a}, {a, b}, 0.2) == doctest::Approx(2.2));
    CHECK_THROWS_AS(triplet_loss({a}, {}, {b}, 0.2), Error);
}

TEST_CASE("embeddings are unit norm and deterministic") {
    const auto w = init_model(tiny_arch(), SpecMode::ChInd, true, 7);
    std::vector<ReducedSpectrogram> batch;
    for (int i = 0; i < 6; ++i) batch.push_back(random_spec(8, 8, 50 + i));
    const auto e1 = forward(batch, w, 1);
    const auto e3 = forward(batch, w, 3);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        double n = 0;
        for (double x : e1[i]) n += x * x;
        CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(e1[i] == e3[i]);
        CHECK(forward_one(batch[i], w) == e1[i]);
    }
}

TEST_CASE("shape and mode mismatches are rejected") {
    const auto w = init_model(tiny_arch(), SpecMode::ChInd, true, 7);
    try {
        forward_one(random_spec(8, 9, 1), w);
        FAIL("expected ShapeMismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ShapeMismatch);
        CHECK(std::string(e.what()).find("8x9") != std::string::npos);
        CHECK(std::string(e.what()).find("8x8") != std::string::npos);
    }
    try {
        forward_one(random_spec(8, 8, 1, SpecMode::Raw), w);
        FAIL("expected ShapeMismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ShapeMismatch);
    }
    auto full = random_spec(8, 8, 1);
    full.reduced = false;
    CHECK_THROWS_AS(forward_one(full, w), Error);
}

TEST_CASE("analytic gradients match central differences") {
    const auto arch = tiny_arch();
    const auto plan = nn::make_plan(arch);
    std::vector<double> params, buffers;
    nn::init_params(plan, params, buffers, 11);
    // Perturb BN affine terms and biases away from their init values so every path is exercised.
    Rng jitter(12);
    for (const auto& t : plan.tensors)
        if (t.trainable && !t.name.ends_with(".w"))
            for (std::size_t i = 0; i < t.count; ++i) params[t.offset + i] += 0.2 * jitter.normal();

    const std::size_t b = 3;
    std::vector<nn::Mat<double>> inputs;
    for (std::size_t i = 0; i < 3 * b; ++i) inputs.push_back(nn::to_input<double>(random_spec(8, 8, 300 + i)));
    const double margin = 10.0;  // keeps every hinge active

    auto loss_at = [&](const std::vector<double>& p) {
        auto buf = buffers;
        nn::TrainPass<double> tp;
        nn::forward_train<double>(plan, p.data(), buf.data(), inputs, tp);
        return nn::triplet_batch_loss<double>(tp.emb, margin, nullptr);
    };

    std::vector<double> grads(plan.n_params, 0.0);
    {
        auto buf = buffers;
        nn::TrainPass<double> tp;
        nn::forward_train<double>(plan, params.data(), buf.data(), inputs, tp);
        std::vector<nn::Vec<double>> demb;
        nn::triplet_batch_loss<double>(tp.emb, margin, &demb);
        nn::backward<double>(plan, params.data(), grads.data(), tp, demb);
    }

    Rng pick(13);
    std::size_t checked = 0;
    double worst = 0;
    // Every tensor gets at least a few probes; the rest are random.
    std::vector<std::size_t> idx;
    for (const auto& t : plan.tensors)
        if (t.trainable)
            for (int k = 0; k < 3; ++k) idx.push_back(t.offset + pick.index(t.count));
    while (idx.size() < 150) idx.push_back(pick.index(plan.n_params));
    for (std::size_t i : idx) {
        const double h = 1e-5;
        auto p = params;
        p[i] = params[i] + h;
        const double up = loss_at(p);
        p[i] = params[i] - h;
        const double dn = loss_at(p);
        const double fd = (up - dn) / (2 * h);
        const double rel = std::abs(fd - grads[i]) / std::max({std::abs(fd), std::abs(grads[i]), 1e-6});
        worst = std::max(worst, rel);
        ++checked;
    }
    CHECK(checked >= 100);
    CHECK(worst < 1e-4);
    MESSAGE("gradient check: ", checked, " parameters, worst relative error ", worst);
}

TEST_CASE("augmentation counts and noise level") {
    std::vector<LabeledSpectrogram> specs;
    for (int i = 0; i < 10; ++i) {
        ReducedSpectrogram s;
        s.values = Eigen::MatrixXd::Zero(52, 40);
        specs.push_back({s, "d" + std::to_string(i % 2)});
    }
    const auto out = augment(specs, 0.05, 5, 3);
    REQUIRE(out.size() == 50);
    double ss = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out[i].label == specs[i / 5].label);
        if (i % 5 == 0) {
            CHECK(out[i].spec.values.isZero());
            continue;
        }
        ss += out[i].spec.values.squaredNorm();
        n += static_cast<std::size_t>(out[i].spec.values.size());
    }
    CHECK(std::sqrt(ss / static_cast<double>(n)) == doctest::Approx(0.05).epsilon(0.1));
    CHECK(augment(specs, 0.05, 1, 3).size() == specs.size());
    CHECK_THROWS_AS(augment(specs, 0.05, 0, 3), Error);
}

TEST_CASE("training lowers the loss and is reproducible") {
    auto arch = tiny_arch();
    arch.embedding_dim = 8;
    const auto data = toy_data(8, 8, 3, 5);
    TripletConfig cfg;
    cfg.batch_triplets = 8;
    cfg.batches_per_epoch = 6;
    cfg.max_epochs = 12;
    cfg.learning_rate = 3e-3;
    cfg.rng_seed = 21;
    TrainReport r1, r2;
    const auto w1 = train(data, arch, cfg, &r1);
    const auto w2 = train(data, arch, cfg, &r2);
    REQUIRE(r1.epoch_loss.size() >= 2);
    CHECK(r1.best_loss < r1.epoch_loss.front());
    CHECK(w1.weights_digest() == w2.weights_digest());
    CHECK(r1.epoch_loss == r2.epoch_loss);
    cfg.rng_seed = 22;
    CHECK(train(data, arch, cfg).weights_digest() != w1.weights_digest());
}

TEST_CASE("training input validation") {
    const auto arch = tiny_arch();
    TripletConfig cfg;
    cfg.max_epochs = 1;
    auto one_label = toy_data(8, 8, 1, 4);
    CHECK_THROWS_AS(train(one_label, arch, cfg), Error);
    auto data = toy_data(8, 8, 2, 3);
    data.pop_back();
    data.pop_back();  // dev1 keeps a single sample
    CHECK_THROWS_AS(train(data, arch, cfg), Error);
    TripletConfig bad;
    bad.plateau_patience = bad.stop_patience;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("model files round trip and reject tampering") {
    TempDir dir;
    auto w = init_model(tiny_arch(), SpecMode::EqChInd, true, 5);
    w.training = {{"note", "fixture"}};
    const auto path = dir.path / "m.rffimdl";
    save_model(w, path);
    const auto back = load_model(path);
    CHECK(back.weights_digest() == w.weights_digest());
    CHECK(back.mode == SpecMode::EqChInd);
    const auto s = random_spec(8, 8, 77, SpecMode::EqChInd);
    CHECK(forward_one(s, back) == forward_one(s, w));
    CHECK_THROWS_AS(forward_one(random_spec(8, 8, 77, SpecMode::ChInd), back), Error);

    const std::string good = slurp(path);
    auto expect_kind = [&](std::string bytes, ErrorKind kind) {
        dump(path, bytes);
        try {
            load_model(path);
            FAIL("expected load failure");
        } catch (const Error& e) {
            CHECK(e.kind() == kind);
        }
    };
    {
        auto bad = good;
        const auto pos = bad.find(w.arch.digest());
        REQUIRE(pos != std::string::npos);
        bad[pos] = bad[pos] == '0' ? '1' : '0';
        expect_kind(bad, ErrorKind::Digest);
    }
    {
        auto bad = good;
        bad.back() = static_cast<char>(bad.back() ^ 0x5a);
        expect_kind(bad, ErrorKind::Corrupt);
    }
    {
        auto bad = good;
        bad[8] = 9;
        expect_kind(bad, ErrorKind::Version);
    }
    expect_kind(good.substr(0, good.size() - 4), ErrorKind::Truncated);
    expect_kind("not a model", ErrorKind::Corrupt);
}
