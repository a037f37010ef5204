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

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>

namespace rffi {

using nlohmann::json;

namespace {

constexpr char kStoreMagic[8] = {'R', 'F', 'F', 'I', 'S', 'T', 'O', 'R'};
constexpr std::uint32_t kStoreVersion = 1;

double norm(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

class Writer {
public:
    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void str(const std::string& s) {
        put(static_cast<std::uint32_t>(s.size()));
        buf_ += s;
    }
    std::string& bytes() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(const char* p, std::size_t n) : p_(p), end_(p + n) {}
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, p_, sizeof v);
        p_ += sizeof v;
        return v;
    }
    std::string str() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s(p_, n);
        p_ += n;
        return s;
    }
    bool done() const { return p_ == end_; }

private:
    void need(std::size_t n) const {
        if (static_cast<std::size_t>(end_ - p_) < n) fail(ErrorKind::Corrupt, "store record overruns file");
    }
    const char* p_;
    const char* end_;
};

}  // namespace

void Fingerprint::validate() const {
    require(!receiver_id.empty(), "fingerprint needs a receiver_id");
    require(!embedding.empty(), "fingerprint embedding is empty");
    const double n = norm(embedding);
    require(std::abs(n - 1.0) <= 1e-6, "fingerprint embedding is not unit norm (|e| = " + std::to_string(n) + ")");
    require(rssi_dbm >= -100.0 && rssi_dbm <= 0.0, "fingerprint rssi outside [-100, 0] dBm");
    require(frame_count >= 1, "fingerprint frame_count must be at least 1");
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), "cosine of vectors with different dimension");
    double dot = 0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    const double d = norm(a) * norm(b);
    return d > 0 ? dot / d : 0.0;
}

FingerprintStore::FingerprintStore(FingerprintStore&& other) noexcept {
    std::unique_lock lock(other.mu_);
    records_ = std::move(other.records_);
    dim_ = std::exchange(other.dim_, 0);
    metadata_ = std::move(other.metadata_);
}

FingerprintStore& FingerprintStore::operator=(FingerprintStore&& other) noexcept {
    if (this != &other) {
        std::scoped_lock lock(mu_, other.mu_);
        records_ = std::move(other.records_);
        dim_ = std::exchange(other.dim_, 0);
        metadata_ = std::move(other.metadata_);
    }
    return *this;
}

void FingerprintStore::enroll(const std::string& device_id, const std::vector<Fingerprint>& fingerprints,
                              bool update) {
    require(!device_id.empty(), "device_id must not be empty");
    require(!fingerprints.empty(), "enrollment needs at least one fingerprint");
    const std::size_t d = fingerprints.front().embedding.size();
    DeviceRecord rec{device_id, {}};
    for (const auto& f : fingerprints) {
        f.validate();
        if (f.embedding.size() != d) fail(ErrorKind::ShapeMismatch, "fingerprints differ in dimension");
        if (!rec.receivers.emplace(f.receiver_id, f).second)
            fail(ErrorKind::InvalidInput, "receiver '" + f.receiver_id + "' given twice for " + device_id);
    }
    std::unique_lock lock(mu_);
    if (dim_ != 0 && d != dim_)
        fail(ErrorKind::ShapeMismatch,
             "embedding dimension " + std::to_string(d) + " does not match store dimension " + std::to_string(dim_));
    auto it = records_.find(device_id);
    if (it != records_.end()) {
        if (!update) fail(ErrorKind::Conflict, "device '" + device_id + "' is already enrolled");
        for (auto& [rx, f] : rec.receivers) it->second.receivers[rx] = f;
    } else {
        records_.emplace(device_id, std::move(rec));
    }
    dim_ = d;
}

std::optional<DeviceRecord> FingerprintStore::get(const std::string& device_id) const {
    std::shared_lock lock(mu_);
    auto it = records_.find(device_id);
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

std::vector<DeviceRecord> FingerprintStore::records() const {
    std::shared_lock lock(mu_);
    std::vector<DeviceRecord> out;
    out.reserve(records_.size());
    for (const auto& [id, r] : records_) out.push_back(r);
    return out;
}

std::size_t FingerprintStore::size() const {
    std::shared_lock lock(mu_);
    return records_.size();
}

std::size_t FingerprintStore::dim() const {
    std::shared_lock lock(mu_);
    return dim_;
}

std::vector<Match> FingerprintStore::query_topk(const std::vector<double>& query, const std::string& receiver_id,
                                                std::size_t k) const {
    require(k >= 1, "K must be at least 1");
    require(std::abs(norm(query) - 1.0) <= 1e-6, "query embedding is not unit norm");
    std::shared_lock lock(mu_);
    if (dim_ != 0 && query.size() != dim_)
        fail(ErrorKind::ShapeMismatch, "query dimension " + std::to_string(query.size()) +
                                           " does not match store dimension " + std::to_string(dim_));
    std::vector<Match> all;
    for (const auto& [id, rec] : records_) {
        auto it = rec.receivers.find(receiver_id);
        if (it != rec.receivers.end()) all.push_back({id, cosine_similarity(query, it->second.embedding)});
    }
    auto before = [](const Match& a, const Match& b) {
        return a.similarity != b.similarity ? a.similarity > b.similarity : a.device_id < b.device_id;
    };
    const std::size_t n = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), before);
    all.resize(n);
    return all;
}

void FingerprintStore::persist(const fs::path& path) const {
    Writer w;
    {
        std::shared_lock lock(mu_);
        w.bytes().append(kStoreMagic, sizeof kStoreMagic);
        w.put(kStoreVersion);
        w.put(static_cast<std::uint32_t>(dim_));
        w.put(static_cast<std::uint64_t>(records_.size()));
        w.str(metadata_.dump());
        for (const auto& [id, rec] : records_) {
            w.str(id);
            w.put(static_cast<std::uint32_t>(rec.receivers.size()));
            for (const auto& [rx, f] : rec.receivers) {
                w.str(rx);
                for (double x : f.embedding) w.put(x);
                w.put(f.rssi_dbm);
                w.put(f.frame_count);
                w.str(f.created_at);
            }
        }
    }
    auto& bytes = w.bytes();
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
    w.put(crc);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) fail(ErrorKind::Io, "write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

FingerprintStore FingerprintStore::restore(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open store " + path.string());
    const std::string bytes{std::istreambuf_iterator<char>(in), {}};
    constexpr std::size_t header = sizeof kStoreMagic + 4 + 4 + 8;
    if (bytes.size() < sizeof kStoreMagic || std::memcmp(bytes.data(), kStoreMagic, sizeof kStoreMagic) != 0)
        fail(ErrorKind::Corrupt, path.string() + " is not a fingerprint store");
    if (bytes.size() < header + 4) fail(ErrorKind::Corrupt, path.string() + ": truncated store");
    std::uint32_t version;
    std::memcpy(&version, bytes.data() + sizeof kStoreMagic, 4);
    if (version != kStoreVersion)
        fail(ErrorKind::Version, path.string() + ": unsupported store version " + std::to_string(version));
    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + body, 4);
    const auto crc =
        static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(body)));
    if (crc != stored_crc) fail(ErrorKind::Corrupt, path.string() + ": checksum mismatch");

    Reader r(bytes.data() + sizeof kStoreMagic + 4, body - sizeof kStoreMagic - 4);
    FingerprintStore store;
    store.dim_ = r.get<std::uint32_t>();
    const auto n = r.get<std::uint64_t>();
    try {
        store.metadata_ = json::parse(r.str());
    } catch (const json::parse_error&) {
        fail(ErrorKind::Corrupt, path.string() + ": store metadata is not JSON");
    }
    for (std::uint64_t i = 0; i < n; ++i) {
        DeviceRecord rec;
        rec.device_id = r.str();
        const auto nrx = r.get<std::uint32_t>();
        for (std::uint32_t j = 0; j < nrx; ++j) {
            Fingerprint f;
            f.receiver_id = r.str();
            f.embedding.resize(store.dim_);
            for (auto& x : f.embedding) x = r.get<double>();
            f.rssi_dbm = r.get<double>();
            f.frame_count = r.get<std::uint64_t>();
            f.created_at = r.str();
            rec.receivers.emplace(f.receiver_id, std::move(f));
        }
        store.records_.emplace(rec.device_id, std::move(rec));
    }
    if (!r.done()) fail(ErrorKind::Corrupt, path.string() + ": trailing bytes in store");
    return store;
}

void FingerprintStore::set_metadata(json meta) {
    std::unique_lock lock(mu_);
    metadata_ = std::move(meta);
}

json FingerprintStore::metadata() const {
    std::shared_lock lock(mu_);
    return metadata_;
}

json FingerprintStore::stats() const {
    std::shared_lock lock(mu_);
    std::map<std::string, std::size_t> per_rx;
    std::uint64_t frames = 0;
    for (const auto& [id, rec] : records_)
        for (const auto& [rx, f] : rec.receivers) {
            ++per_rx[rx];
            frames += f.frame_count;
        }
    return {{"devices", records_.size()}, {"dim", dim_}, {"receivers", per_rx}, {"enrolled_frames", frames}};
}

json FingerprintStore::export_json(bool full) const {
    std::shared_lock lock(mu_);
    json devices = json::array();
    for (const auto& [id, rec] : records_) {
        json rx = json::object();
        for (const auto& [name, f] : rec.receivers) {
            json e = {{"rssi_dbm", f.rssi_dbm}, {"frame_count", f.frame_count}, {"created_at", f.created_at}};
            if (full) e["embedding"] = f.embedding;
            rx[name] = std::move(e);
        }
        devices.push_back({{"device_id", id}, {"receivers", std::move(rx)}});
    }
    return {{"dim", dim_}, {"devices", std::move(devices)}};
}

}  // namespace rffi
