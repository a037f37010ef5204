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

#include "rffi/common.hpp"

#include <span>
#include <vector>

namespace rffi::detail {

/// Unnormalized forward DFT (e^{-j2pi kn/N}), backed by FFTW.
std::vector<cplx> fft(std::span<const cplx> x);
/// Inverse DFT scaled by 1/N.
std::vector<cplx> ifft(std::span<const cplx> x);

}  // namespace rffi::detail
