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

#include "rffi/fpstore.hpp"

#include "../support/cli.hpp"
#include "../support/tmpdir.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>

using nlohmann::json;

namespace {

const char* kTinyModel = "--frames 10 --epochs 2 --batches 3 --stem 8 --filters 8,8 --strides 1,2 --dim 16";

struct Fixture {
    TempDir dir{"rffi-cli"};
    std::string q(const std::string& rel) const { return "'" + (dir.path / rel).string() + "'"; }
    void synth() { REQUIRE(run_cli("synth --devices 5 --receivers 2 --frames 20 --rounds 2 --seed 3 --out " + q("data")) == 0); }
};

}  // namespace

TEST_CASE("exit codes") {
    Fixture f;
    f.synth();
    CHECK(run_cli("") == 2);
    CHECK(run_cli("nonsense") == 2);
    CHECK(run_cli("synth --devices") == 2);
    CHECK(run_cli("synth --devices 3") == 2);  // no --out
    CHECK(run_cli("train --dataset " + f.q("missing") + " --out " + f.q("m")) == 1);
    CHECK(run_cli("spectro --dataset " + f.q("data") + " --mode fancy --out " + f.q("s")) == 2);
    CHECK(run_cli("--help") == 0);

    REQUIRE(run_cli("train --dataset " + f.q("data") + " --devices dev000,dev001 " + kTinyModel + " --out " +
                    f.q("m.rffimdl")) == 0);
    REQUIRE(run_cli("enroll --dataset " + f.q("data") + " --model " + f.q("m.rffimdl") +
                    " --devices dev002,dev003 --frames 10 --store " + f.q("s.bin")) == 0);
    const std::string identify = "identify --dataset " + f.q("data") + " --model " + f.q("m.rffimdl") + " --store " +
                                 f.q("s.bin") + " --frames 10 --log " + f.q("d.jsonl");
    // The threshold has no default.
    CHECK(run_cli(identify) == 2);
    CHECK_FALSE(std::filesystem::exists(f.dir.path / "d.jsonl"));

    const auto before = slurp_file(f.dir.path / "s.bin");
    CHECK(run_cli(identify + " --threshold 0.4 --store-out " + f.q("s2.bin")) == 0);
    CHECK(slurp_file(f.dir.path / "s.bin") == before);
    CHECK(run_cli(identify + " --threshold 0.4 --store-out " + f.q("s.bin")) == 2);

    // Every log line carries the same digest, also recorded in the grown store.
    std::ifstream log(f.dir.path / "d.jsonl");
    std::string line, digest;
    int n = 0;
    while (std::getline(log, line)) {
        const auto j = json::parse(line);
        if (digest.empty()) digest = j["config_digest"];
        CHECK(j["config_digest"] == digest);
        ++n;
    }
    CHECK(n == 5);
    const auto grown = rffi::FingerprintStore::restore(f.dir.path / "s2.bin");
    CHECK(grown.metadata()["config_digest"] == digest);
    CHECK(grown.size() >= 2);
    CHECK(run_cli("db export --store " + f.q("s2.bin") + " --out " + f.q("x.json")) == 0);
    CHECK(json::parse(slurp_file(f.dir.path / "x.json"))["devices"].size() == grown.size());
}

TEST_CASE("config file values yield to explicit flags") {
    Fixture f;
    {
        std::ofstream cfg(f.dir.path / "cfg.json");
        cfg << R"({"devices": 2, "receivers": 1, "frames": 5, "synth": {"seed": 9}})";
    }
    REQUIRE(run_cli("--config " + f.q("cfg.json") + " synth --out " + f.q("a")) == 0);
    REQUIRE(run_cli("synth --config " + f.q("cfg.json") + " --devices 3 --out " + f.q("b")) == 0);
    REQUIRE(run_cli("synth --devices 2 --receivers 1 --frames 5 --seed 9 --out " + f.q("c")) == 0);
    const auto a = json::parse(slurp_file(f.dir.path / "a" / "manifest.json"));
    const auto b = json::parse(slurp_file(f.dir.path / "b" / "manifest.json"));
    const auto c = json::parse(slurp_file(f.dir.path / "c" / "manifest.json"));
    CHECK(a["captures"].size() == 2);
    CHECK(b["captures"].size() == 3);
    // Same effective configuration, same digest, however it was spelled.
    CHECK(a["config_digest"] == c["config_digest"]);
    CHECK(a["config_digest"] != b["config_digest"]);
    CHECK(first_difference(f.dir.path / "a", f.dir.path / "c").empty());

    {
        std::ofstream cfg(f.dir.path / "bad.json");
        cfg << R"({"devices": "many"})";
    }
    CHECK(run_cli("--config " + f.q("bad.json") + " synth --out " + f.q("d")) == 2);
}

TEST_CASE("synth and train are byte-identical across runs and job counts") {
    Fixture f;
    f.synth();
    REQUIRE(run_cli("--jobs 3 synth --devices 5 --receivers 2 --frames 20 --rounds 2 --seed 3 --out " + f.q("data2")) == 0);
    CHECK(first_difference(f.dir.path / "data", f.dir.path / "data2").empty());

    const std::string train = "train --dataset " + f.q("data") + " --devices dev000,dev001,dev002 " + kTinyModel;
    REQUIRE(run_cli(train + " --out " + f.q("m1")) == 0);
    REQUIRE(run_cli("--jobs 2 " + train + " --out " + f.q("m2")) == 0);
    CHECK(slurp_file(f.dir.path / "m1") == slurp_file(f.dir.path / "m2"));
}

TEST_CASE("detect and spectro stamp their digest") {
    Fixture f;
    f.synth();
    REQUIRE(run_cli("detect --dataset " + f.q("data") + " --out " + f.q("det.jsonl")) == 0);
    std::ifstream in(f.dir.path / "det.jsonl");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        CHECK(json::parse(line).contains("config_digest"));
        ++n;
    }
    CHECK(n == 5 * 2 * 2 * 20);
    CHECK(run_cli("detect --dataset " + f.q("data") + " --capture x --out " + f.q("d2")) == 2);

    REQUIRE(run_cli("spectro --dataset " + f.q("data") + " --limit 2 --full-rows --out " + f.q("spec")) == 0);
    const auto index = json::parse(slurp_file(f.dir.path / "spec" / "index.json"));
    CHECK(index["spectrograms"].size() == 5 * 2 * 2 * 2);
    const std::string digest = index["config_digest"];
    for (const auto& rel : tree(f.dir.path / "spec"))
        if (rel.ends_with(".svg") || rel.ends_with(".json"))
            CHECK_MESSAGE(slurp_file(f.dir.path / "spec" / rel).find(digest) != std::string::npos, rel);
}

TEST_CASE("eval is deterministic and verify checks every artifact") {
    Fixture f;
    f.synth();
    {
        std::ofstream plan(f.dir.path / "plan.json");
        plan << R"({"name": "tiny", "dataset": "data",
            "train_devices": ["dev000", "dev001"], "enroll_devices": ["dev002", "dev003"],
            "identify_devices": ["dev002", "dev003"], "new_devices": ["dev004"],
            "frames": {"train_per_device": 10, "enroll_per_device": 10, "identify_per_device": 10,
                       "observation_frames": 5},
            "arch": {"stem_filters": 8, "block_filters": [8, 8], "block_strides": [1, 2], "embedding_dim": 16},
            "training": {"max_epochs": 2, "batches_per_epoch": 3}, "seed": 1})";
    }
    REQUIRE(run_cli("eval --plan " + f.q("plan.json") + " --out " + f.q("e1")) == 0);
    REQUIRE(run_cli("--jobs 3 eval --plan " + f.q("plan.json") + " --out " + f.q("e2")) == 0);
    CHECK(first_difference(f.dir.path / "e1", f.dir.path / "e2").empty());
    CHECK(run_cli("verify --report " + f.q("e1")) == 0);
    CHECK(run_cli("verify --report " + f.q("e1/report")) == 0);

    {
        std::ofstream out(f.dir.path / "e2" / "report" / "tables" / "extra.csv");
        out << "a,b\n1,2\n";
    }
    CHECK(run_cli("verify --report " + f.q("e2")) == 1);
    CHECK(run_cli("verify --report " + f.q("nowhere")) == 1);
}
