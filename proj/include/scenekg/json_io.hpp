#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "scenekg/error.hpp"

namespace scenekg {

using json = nlohmann::json;

/// Shortest-form integers, 17-significant-digit floats. Locale independent.
inline std::string format_double(double v) {
    if (!std::isfinite(v)) fail(ErrorKind::invalid_argument, "cannot serialize a non-finite number");
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline std::string quote(std::string_view s) { return json(std::string(s)).dump(); }

/// Builds one JSON object with fields in insertion order. Used for every
/// file this library writes so that byte layout is fixed.
class ObjectWriter {
public:
    ObjectWriter& field(std::string_view key, double v) { return raw(key, format_double(v)); }
    ObjectWriter& field(std::string_view key, int v) { return raw(key, std::to_string(v)); }
    ObjectWriter& field(std::string_view key, std::int64_t v) { return raw(key, std::to_string(v)); }
    ObjectWriter& field(std::string_view key, std::size_t v) { return raw(key, std::to_string(v)); }
    ObjectWriter& field(std::string_view key, bool v) { return raw(key, v ? "true" : "false"); }
    ObjectWriter& field(std::string_view key, std::string_view v) { return raw(key, quote(v)); }
    ObjectWriter& field(std::string_view key, const char* v) { return raw(key, quote(v)); }
    ObjectWriter& field(std::string_view key, const std::string& v) { return raw(key, quote(v)); }

    ObjectWriter& field(std::string_view key, const std::vector<std::string>& v) {
        std::string out = "[";
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + quote(v[i]);
        return raw(key, out + "]");
    }

    ObjectWriter& field(std::string_view key, const std::vector<double>& v) {
        std::string out = "[";
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
        return raw(key, out + "]");
    }

    ObjectWriter& field(std::string_view key, const std::vector<int>& v) {
        std::string out = "[";
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
        return raw(key, out + "]");
    }

    /// `value` must already be valid JSON text.
    ObjectWriter& raw(std::string_view key, std::string_view value) {
        body_ += body_.empty() ? "" : ",";
        body_ += quote(key);
        body_ += ':';
        body_ += value;
        return *this;
    }

    std::string str() const { return "{" + body_ + "}"; }

private:
    std::string body_;
};

inline std::string json_array(const std::vector<std::string>& items, std::string_view sep = ",") {
    std::string out = "[";
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out + "]";
}

// Typed field access with errors that name the offending field.

inline const json& require(const json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) fail(ErrorKind::parse, std::string("missing field '") + key + "'");
    return *it;
}

inline double get_number(const json& obj, const char* key) {
    const json& v = require(obj, key);
    if (!v.is_number()) fail(ErrorKind::parse, std::string("field '") + key + "' must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(ErrorKind::parse, std::string("field '") + key + "' must be finite");
    return d;
}

inline std::optional<double> get_optional_number(const json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    return get_number(obj, key);
}

inline int get_int(const json& obj, const char* key) {
    const json& v = require(obj, key);
    if (!v.is_number_integer()) fail(ErrorKind::parse, std::string("field '") + key + "' must be an integer");
    return v.get<int>();
}

inline std::string get_string(const json& obj, const char* key) {
    const json& v = require(obj, key);
    if (!v.is_string()) fail(ErrorKind::parse, std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

inline std::optional<std::string> get_optional_string(const json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    return get_string(obj, key);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(ErrorKind::io, "write to '" + path + "' failed");
}

/// Calls `fn(object, line_number)` for each non-blank line. JSON syntax
/// errors and any Error thrown by `fn` are rethrown as ParseError carrying
/// the line number.
inline void for_each_record(std::string_view text,
                            const std::function<void(const json&, int)>& fn) {
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        ++line_no;
        pos = end + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) {
            if (end == text.size()) break;
            continue;
        }
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(std::string("malformed record: ") + e.what(), line_no, 0);
        }
        if (!obj.is_object()) throw ParseError("record must be a JSON object", line_no, 0);
        try {
            fn(obj, line_no);
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::parse) throw ParseError(e.what(), line_no, 0);
            throw Error(e.kind(), "line " + std::to_string(line_no) + ": " + e.what());
        } catch (const json::exception& e) {
            throw ParseError(e.what(), line_no, 0);
        }
        if (end == text.size()) break;
    }
}

/// 64-bit FNV-1a, used for config and manifest hashes.
inline std::uint64_t fnv1a(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return out;
}

}  // namespace scenekg
