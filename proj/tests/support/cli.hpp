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

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#ifndef RFFI_CLI_PATH
#error "RFFI_CLI_PATH must name the rffi binary"
#endif

// Runs the CLI with `args` appended; returns the process exit status.
inline int run_cli(const std::string& args, const std::string& env = "RFFI_LOG=error") {
    const std::string cmd = env + " '" RFFI_CLI_PATH "' " + args + " >/dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

inline std::string slurp_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Relative paths of every regular file under `root`, sorted.
inline std::vector<std::string> tree(const std::filesystem::path& root) {
    std::vector<std::string> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root))
        if (e.is_regular_file()) out.push_back(std::filesystem::relative(e.path(), root).string());
    std::sort(out.begin(), out.end());
    return out;
}

// Empty when both trees hold the same files with the same bytes; otherwise
// the first differing path.
inline std::string first_difference(const std::filesystem::path& a, const std::filesystem::path& b) {
    const auto ta = tree(a), tb = tree(b);
    if (ta != tb) return "<file lists differ>";
    for (const auto& f : ta)
        if (slurp_file(a / f) != slurp_file(b / f)) return f;
    return {};
}
