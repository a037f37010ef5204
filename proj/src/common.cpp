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

#include "rffi/common.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace rffi {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidInput: return "invalid_input";
        case ErrorKind::Io: return "io";
        case ErrorKind::MissingSidecar: return "missing_sidecar";
        case ErrorKind::Truncated: return "truncated";
        case ErrorKind::Version: return "version";
        case ErrorKind::Corrupt: return "corrupt";
        case ErrorKind::Conflict: return "conflict";
        case ErrorKind::Degenerate: return "degenerate";
        case ErrorKind::Estimation: return "estimation";
        case ErrorKind::EqualizationFailed: return "equalization_failed";
        case ErrorKind::ShapeMismatch: return "shape_mismatch";
        case ErrorKind::Digest: return "digest";
        case ErrorKind::NoOverlap: return "no_overlap";
        case ErrorKind::Plan: return "plan";
    }
    return "unknown";
}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

std::size_t Rng::index(std::size_t n) {
    require(n > 0, "Rng::index on empty range");
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v;
    do {
        v = engine_();
    } while (v >= limit);
    return static_cast<std::size_t>(v % n);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
}

cplx Rng::complex_normal(double variance) {
    const double s = std::sqrt(variance / 2.0);
    const double re = normal();
    const double im = normal();
    return {s * re, s * im};
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> words) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    std::uint64_t h = mix(base);
    for (auto w : words) h = mix(h ^ mix(w));
    return h;
}

namespace {

std::string to_hex(const unsigned char* data, unsigned len) {
    std::ostringstream os;
    for (unsigned i = 0; i < len; ++i)
        os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(data[i]);
    return os.str();
}

struct MdCtxDeleter {
    void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};

}  // namespace

std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx(EVP_MD_CTX_new());
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
        throw std::runtime_error("sha256 failed");
    return to_hex(md, len);
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return sha256_hex(os.str());
}

double mean_power(std::span<const cplx> x) {
    if (x.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& v : x) acc += std::norm(v);
    return acc / static_cast<double>(x.size());
}

std::size_t preamble_length(double sample_rate_hz) {
    return static_cast<std::size_t>(std::llround(16e-6 * sample_rate_hz));
}

}  // namespace rffi
