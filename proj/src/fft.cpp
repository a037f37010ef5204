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

#include "fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>

namespace rffi::detail {
namespace {

// FFTW planning is not thread-safe; execution on separate buffers is.
// FFTW_ESTIMATE keeps the chosen algorithm, and therefore the output bits,
// identical across runs.
struct PlanCache {
    std::mutex mu;
    std::map<std::pair<int, int>, fftw_plan> plans;

    fftw_plan get(int n, int sign) {
        std::lock_guard lock(mu);
        auto key = std::make_pair(n, sign);
        if (auto it = plans.find(key); it != plans.end()) return it->second;
        auto* in = fftw_alloc_complex(static_cast<std::size_t>(n));
        auto* out = fftw_alloc_complex(static_cast<std::size_t>(n));
        fftw_plan p = fftw_plan_dft_1d(n, in, out, sign, FFTW_ESTIMATE);
        fftw_free(in);
        fftw_free(out);
        plans.emplace(key, p);
        return p;
    }
};

PlanCache& cache() {
    static PlanCache c;
    return c;
}

std::vector<cplx> transform(std::span<const cplx> x, int sign) {
    const int n = static_cast<int>(x.size());
    std::vector<cplx> result(x.size());
    if (n == 0) return result;
    fftw_plan plan = cache().get(n, sign);
    auto* in = fftw_alloc_complex(x.size());
    auto* out = fftw_alloc_complex(x.size());
    for (int i = 0; i < n; ++i) {
        in[i][0] = x[i].real();
        in[i][1] = x[i].imag();
    }
    fftw_execute_dft(plan, in, out);
    for (int i = 0; i < n; ++i) result[i] = {out[i][0], out[i][1]};
    fftw_free(in);
    fftw_free(out);
    return result;
}

}  // namespace

std::vector<cplx> fft(std::span<const cplx> x) { return transform(x, FFTW_FORWARD); }

std::vector<cplx> ifft(std::span<const cplx> x) {
    auto y = transform(x, FFTW_BACKWARD);
    const double scale = y.empty() ? 0.0 : 1.0 / static_cast<double>(y.size());
    for (auto& v : y) v *= scale;
    return y;
}

}  // namespace rffi::detail
