#pragma once

// Schema-checked access to JSON objects. Every failure is a SchemaViolation
// carrying the dotted path of the offending field.

#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>

#include <json.hpp>

#include "ccf/error.hpp"
#include "ccf/geometry.hpp"
#include "ccf/io.hpp"

namespace ccf::detail {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

[[noreturn]] inline void schema_error(const std::string& path, const std::string& what) {
    throw Error(Errc::SchemaViolation, (path.empty() ? "document" : path) + ": " + what, path);
}

inline json parse_json(std::string_view text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(Errc::SchemaViolation, what + ": malformed JSON (" + e.what() + ")");
    }
}

inline double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) schema_error(path, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) schema_error(path, "expected a finite number");
    return d;
}

inline std::int64_t as_int(const json& v, const std::string& path) {
    if (!v.is_number_integer()) schema_error(path, "expected an integer");
    if (v.is_number_unsigned()) {
        const auto u = v.get<std::uint64_t>();
        if (u > static_cast<std::uint64_t>(INT64_MAX)) schema_error(path, "integer out of range");
        return static_cast<std::int64_t>(u);
    }
    return v.get<std::int64_t>();
}

inline int as_int32(const json& v, const std::string& path) {
    const std::int64_t n = as_int(v, path);
    if (n < INT32_MIN || n > INT32_MAX) schema_error(path, "integer out of range");
    return static_cast<int>(n);
}

inline std::uint64_t as_uint64(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    }
    schema_error(path, "expected a non-negative integer");
}

inline std::string as_string(const json& v, const std::string& path) {
    if (!v.is_string()) schema_error(path, "expected a string");
    return v.get<std::string>();
}

inline const json& as_array(const json& v, const std::string& path) {
    if (!v.is_array()) schema_error(path, "expected an array");
    return v;
}

inline std::array<double, 2> as_pair(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 2) schema_error(path, "expected [x, y]");
    return {as_number(v[0], path + "[0]"), as_number(v[1], path + "[1]")};
}

inline std::array<int, 2> as_int_pair(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 2) schema_error(path, "expected [a, b]");
    return {as_int32(v[0], path + "[0]"), as_int32(v[1], path + "[1]")};
}

inline PixelPoint as_pixel(const json& v, const std::string& path) {
    const auto p = as_pair(v, path);
    return {p[0], p[1]};
}

inline std::string join(const std::string& path, std::string_view key) {
    return path.empty() ? std::string(key) : path + "." + std::string(key);
}

inline std::string index(const std::string& path, std::size_t n) {
    return path + "[" + std::to_string(n) + "]";
}

/// Object reader that remembers which keys were consumed.
class Fields {
public:
    Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) schema_error(path_, "expected an object");
    }

    const json& required(std::string_view key) {
        auto it = obj_.find(std::string(key));
        if (it == obj_.end()) schema_error(join(path_, key), "missing field");
        seen_.insert(std::string(key));
        return *it;
    }

    const json* optional(std::string_view key) {
        auto it = obj_.find(std::string(key));
        if (it == obj_.end()) return nullptr;
        seen_.insert(std::string(key));
        return &*it;
    }

    double number(std::string_view key) { return as_number(required(key), at(key)); }
    int int32(std::string_view key) { return as_int32(required(key), at(key)); }
    std::uint64_t uint64(std::string_view key) { return as_uint64(required(key), at(key)); }
    std::string string(std::string_view key) { return as_string(required(key), at(key)); }
    PixelPoint pixel(std::string_view key) { return as_pixel(required(key), at(key)); }

    std::string at(std::string_view key) const { return join(path_, key); }
    const std::string& path() const { return path_; }

    void reject_unknown() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!seen_.count(it.key())) schema_error(join(path_, it.key()), "unknown field");
        }
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

/// Numbers destined for persisted files go through here.
inline double persisted(double v) { return round_significant(v, 9); }

}  // namespace ccf::detail
