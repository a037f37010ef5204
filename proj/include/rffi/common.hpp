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

#pragma once

#include <algorithm>
#include <complex>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <thread>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rffi {

using cplx = std::complex<double>;
namespace fs = std::filesystem;

constexpr double kPi = 3.14159265358979323846;

/// Complex baseband samples at a known sample rate.
struct ComplexSignal {
    std::vector<cplx> samples;
    double sample_rate_hz = 25e6;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    std::span<const cplx> view() const { return samples; }
};

enum class ErrorKind {
    InvalidInput,
    Io,
    MissingSidecar,
    Truncated,
    Version,
    Corrupt,
    Conflict,
    Degenerate,
    Estimation,
    EqualizationFailed,
    ShapeMismatch,
    Digest,
    NoOverlap,
    Plan,
};

const char* to_string(ErrorKind kind);

/// Domain error carrying a machine-checkable kind.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

inline void require(bool cond, const std::string& what) {
    if (!cond) fail(ErrorKind::InvalidInput, what);
}

/// Seeded generator with portable uniform/normal draws.
///
/// The engine output sequence of std::mt19937_64 is fixed by the standard;
/// the conversions below are written out so that draws do not depend on the
/// standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);
    double normal();
    cplx complex_normal(double variance);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Mixes several words into a child seed (splitmix64 finalizer chain).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> words);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const fs::path& path);

double mean_power(std::span<const cplx> x);

/// Samples in one 16 us legacy preamble at the given rate.
std::size_t preamble_length(double sample_rate_hz);

/// "dBm" clamp used by every RSSI producer and consumer.
inline double clamp_rssi(double dbm) {
    if (!(dbm > -100.0)) return -100.0;
    return dbm > 0.0 ? 0.0 : dbm;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Callers write into
/// per-index slots, so results do not depend on the worker count. The first
/// exception thrown by any task is rethrown after all workers join.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, jobs > 1 ? static_cast<std::size_t>(jobs) : 1);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard lock(mu);
                if (next >= n || first_error) return;
                i = next++;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace rffi
