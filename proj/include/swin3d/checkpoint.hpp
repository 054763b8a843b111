#pragma once

// Binary checkpoints: "SWUC", u32 version, u32 record count, then records of
//   u32 name length, name bytes, u8 dtype (0 raw bytes, 1 f32, 2 f64),
//   u32 rank, rank x u64 extents, values.
// All integers and floats little-endian. The record "__config__" holds the
// model configuration as key = value text.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "swin3d/data.hpp"
#include "swin3d/parameter.hpp"

namespace swin3d {

inline constexpr char kCheckpointMagic[4] = {'S', 'W', 'U', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kConfigRecord = "__config__";

struct CheckpointTensor {
    std::uint8_t dtype = 0;
    Shape shape;
    std::string bytes;  // little-endian element bytes
};

struct Checkpoint {
    std::string config_text;
    std::map<std::string, CheckpointTensor> tensors;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t offset) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    return v;
}

template <typename T>
std::string to_le_bytes(std::span<const T> values) {
    std::string out(values.size() * sizeof(T), '\0');
    std::memcpy(out.data(), values.data(), out.size());
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < values.size(); ++i) std::reverse(out.begin() + i * sizeof(T), out.begin() + (i + 1) * sizeof(T));
    }
    return out;
}

template <typename T>
std::vector<T> from_le_bytes(std::string bytes) {
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < bytes.size() / sizeof(T); ++i)
            std::reverse(bytes.begin() + i * sizeof(T), bytes.begin() + (i + 1) * sizeof(T));
    }
    std::vector<T> out(bytes.size() / sizeof(T));
    std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
    return out;
}

inline std::size_t dtype_size(std::uint8_t dtype) {
    switch (dtype) {
        case 0: return 1;
        case 1: return 4;
        case 2: return 8;
    }
    return 0;
}

inline std::string join_names(const std::vector<std::string>& names) {
    std::string out;
    for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
    return out;
}

}  // namespace detail

template <typename T>
Checkpoint make_checkpoint(const ParameterSet<T>& params, std::string config_text) {
    Checkpoint ck{std::move(config_text), {}};
    for (const auto& [name, t] : params) {
        ck.tensors[name] = {static_cast<std::uint8_t>(dtype_of<T>()), t.shape(), detail::to_le_bytes<T>(t.data())};
    }
    return ck;
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
    std::string out(kCheckpointMagic, 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size() + 1));
    auto record = [&](const std::string& name, const CheckpointTensor& t) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(t.dtype));
        detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto e : t.shape) detail::put_u64(out, e);
        out += t.bytes;
    };
    record(kConfigRecord, {0, {ck.config_text.size()}, ck.config_text});
    for (const auto& [name, t] : ck.tensors) record(name, t);
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "checkpoint") {
    std::size_t pos = 0;
    auto fail = [&](const std::string& what) {
        throw FormatError(source + ": " + what + " at byte offset " + std::to_string(pos));
    };
    auto need = [&](std::size_t n, const char* what) {
        if (bytes.size() - pos < n) {
            fail(std::string("truncated ") + what + ": expected " + std::to_string(pos + n) + " bytes, got " +
                 std::to_string(bytes.size()));
        }
    };
    need(12, "header");
    if (bytes.compare(0, 4, kCheckpointMagic, 4) != 0) fail("bad magic (expected \"SWUC\")");
    pos = 4;
    const std::uint32_t version = detail::get_u32(bytes, pos);
    if (version != kCheckpointVersion) fail("unsupported version " + std::to_string(version));
    pos = 8;
    const std::uint32_t records = detail::get_u32(bytes, pos);
    pos = 12;

    Checkpoint ck;
    bool have_config = false;
    for (std::uint32_t r = 0; r < records; ++r) {
        need(4, "record name length");
        const std::uint32_t len = detail::get_u32(bytes, pos);
        pos += 4;
        need(len, "record name");
        std::string name = bytes.substr(pos, len);
        pos += len;
        need(5, "record header");
        CheckpointTensor t;
        t.dtype = static_cast<std::uint8_t>(bytes[pos]);
        if (detail::dtype_size(t.dtype) == 0) fail("unknown dtype " + std::to_string(t.dtype) + " for '" + name + "'");
        pos += 1;
        const std::uint32_t rank = detail::get_u32(bytes, pos);
        pos += 4;
        need(std::size_t(rank) * 8, "record extents");
        std::size_t count = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            t.shape.push_back(detail::get_u64(bytes, pos));
            if (t.shape.back() != 0 && count > bytes.size() / t.shape.back()) fail("extents of '" + name + "' exceed the file");
            count *= t.shape.back();
            pos += 8;
        }
        const std::size_t n = count * detail::dtype_size(t.dtype);
        need(n, "record values");
        t.bytes = bytes.substr(pos, n);
        pos += n;
        if (name == kConfigRecord) {
            ck.config_text = std::move(t.bytes);
            have_config = true;
        } else if (!ck.tensors.emplace(name, std::move(t)).second) {
            fail("duplicate record '" + name + "'");
        }
    }
    if (pos != bytes.size()) fail("trailing data after " + std::to_string(records) + " records");
    if (!have_config) fail("missing " + std::string(kConfigRecord) + " record");
    return ck;
}

/// Copies checkpoint values into `params`. Every parameter must be present
/// with a matching shape and no extra tensors may remain; the error lists every
/// offending name.
template <typename T>
void apply_checkpoint(ParameterSet<T>& params, const Checkpoint& ck) {
    std::vector<std::string> missing, extra, mismatched;
    for (const auto& [name, t] : params) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) {
            missing.push_back(name);
        } else if (it->second.shape != t.shape() || it->second.dtype == 0) {
            mismatched.push_back(name + " " + to_string(it->second.shape) + " vs " + to_string(t.shape()));
        }
    }
    for (const auto& [name, _] : ck.tensors)
        if (!params.contains(name)) extra.push_back(name);
    if (!missing.empty() || !extra.empty() || !mismatched.empty()) {
        std::string msg = "checkpoint does not match the model:";
        if (!missing.empty()) msg += "\n  missing: " + detail::join_names(missing);
        if (!extra.empty()) msg += "\n  unexpected: " + detail::join_names(extra);
        if (!mismatched.empty()) msg += "\n  shape mismatch: " + detail::join_names(mismatched);
        throw ConfigError(msg);
    }
    for (auto& [name, t] : params) {
        const auto& rec = ck.tensors.at(name);
        auto dst = t.mutable_data();
        if (rec.dtype == 1) {
            auto v = detail::from_le_bytes<float>(rec.bytes);
            std::transform(v.begin(), v.end(), dst.begin(), [](float x) { return static_cast<T>(x); });
        } else {
            auto v = detail::from_le_bytes<double>(rec.bytes);
            std::transform(v.begin(), v.end(), dst.begin(), [](double x) { return static_cast<T>(x); });
        }
    }
}

template <typename T>
void save_checkpoint(const std::string& path, const ParameterSet<T>& params, const std::string& config_text) {
    detail::write_file(path, encode_checkpoint(make_checkpoint(params, config_text)));
}

inline Checkpoint read_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path), path); }

}  // namespace swin3d
