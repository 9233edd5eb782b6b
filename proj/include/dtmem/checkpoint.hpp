#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtmem/common.hpp"
#include "dtmem/param_store.hpp"

namespace dtmem {

namespace b64 {

inline constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string encode(const unsigned char* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= len; i += 3) {
        const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    if (i + 1 == len) {
        const std::uint32_t v = data[i] << 16;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == len) {
        const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

inline std::vector<unsigned char> decode(const std::string& s) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (s.size() % 4 != 0) throw ParseError("base64: length not a multiple of 4");
    std::vector<unsigned char> out;
    out.reserve(s.size() / 4 * 3);
    for (std::size_t i = 0; i < s.size(); i += 4) {
        int vals[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = s[i + k];
            if (c == '=') {
                vals[k] = 0;
                ++pad;
            } else {
                vals[k] = value_of(c);
                if (vals[k] < 0 || pad > 0) throw ParseError("base64: invalid character");
            }
        }
        const std::uint32_t v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
        out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
        if (pad < 2) out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
        if (pad < 1) out.push_back(static_cast<unsigned char>(v & 0xFF));
    }
    return out;
}

}  // namespace b64

inline std::string encode_f64_le(const std::vector<double>& values) {
    static_assert(sizeof(double) == 8);
    std::vector<unsigned char> bytes(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &values[i], 8);
        for (int k = 0; k < 8; ++k)
            bytes[i * 8 + static_cast<std::size_t>(k)] =
                static_cast<unsigned char>((bits >> (8 * k)) & 0xFF);
    }
    return b64::encode(bytes.data(), bytes.size());
}

inline std::vector<double> decode_f64_le(const std::string& b64_text) {
    const std::vector<unsigned char> bytes = b64::decode(b64_text);
    if (bytes.size() % 8 != 0) throw ParseError("tensor buffer: byte count not a multiple of 8");
    std::vector<double> values(bytes.size() / 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits = 0;
        for (int k = 7; k >= 0; --k)
            bits = (bits << 8) | bytes[i * 8 + static_cast<std::size_t>(k)];
        std::memcpy(&values[i], &bits, 8);
    }
    return values;
}

// Checkpoint layout (format_version 1): one JSON object whose keys are
// parameter paths mapping to {"shape": [...], "data": <base64 le f64>},
// plus "config" (flat dotted-key object) and "format_version". Optimizer
// moments ride along under "optim.m.<path>" / "optim.v.<path>" entries.
struct Checkpoint {
    static constexpr int kFormatVersion = 1;

    nlohmann::json config = nlohmann::json::object();
    std::map<std::string, Tensor> tensors;

    void put(const std::string& path, const Tensor& t) { tensors[path] = t; }

    bool has(const std::string& path) const { return tensors.count(path) != 0; }

    Tensor get(const std::string& path) const {
        auto it = tensors.find(path);
        if (it == tensors.end()) throw FormatError("checkpoint: missing tensor '" + path + "'");
        return it->second;
    }

    void add_params(const ParamStore& store, const std::string& prefix = "") {
        for (const auto& [path, t] : store.items()) put(prefix + path, t);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format_version"] = kFormatVersion;
        j["config"] = config;
        for (const auto& [path, t] : tensors) {
            nlohmann::json entry;
            entry["shape"] = t.shape();
            entry["data"] = encode_f64_le(t.values());
            j[path] = std::move(entry);
        }
        return j;
    }

    static Checkpoint from_json(const nlohmann::json& j) {
        if (!j.is_object()) throw FormatError("checkpoint: not a JSON object");
        if (!j.contains("format_version") || !j["format_version"].is_number_integer())
            throw FormatError("checkpoint: missing format_version");
        if (j["format_version"].get<int>() != kFormatVersion)
            throw FormatError("checkpoint: unsupported format_version " +
                              j["format_version"].dump() + ", expected " +
                              std::to_string(kFormatVersion));
        Checkpoint c;
        c.config = j.value("config", nlohmann::json::object());
        for (const auto& [key, entry] : j.items()) {
            if (key == "format_version" || key == "config") continue;
            if (!entry.is_object() || !entry.contains("shape") || !entry.contains("data"))
                throw FormatError("checkpoint: malformed tensor entry '" + key + "'");
            Shape shape = entry["shape"].get<Shape>();
            std::vector<double> values = decode_f64_le(entry["data"].get<std::string>());
            if (numel(shape) != static_cast<std::int64_t>(values.size()))
                throw FormatError("checkpoint: tensor '" + key + "' shape " + shape_str(shape) +
                                  " disagrees with buffer length " +
                                  std::to_string(values.size()));
            c.tensors[key] = Tensor::from_values(std::move(shape), std::move(values));
        }
        return c;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open '" + path + "' for writing");
        out << to_json().dump() << "\n";
        if (!out) throw IoError("write failed for '" + path + "'");
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open '" + path + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("checkpoint '" + path + "': " + e.what());
        }
        return from_json(j);
    }
};

}  // namespace dtmem
