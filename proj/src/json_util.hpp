#pragma once

#include <initializer_list>
#include <set>
#include <string>

#include "json.hpp"
#include "shadow_attn/errors.hpp"

namespace shadow_attn::detail {

using nlohmann::json;

inline FormatError malformed(const std::string& what) { return FormatError(FormatError::Kind::malformed, what); }

inline json parse_json(const std::string& text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw malformed(std::string(what) + ": " + e.what());
    }
}

/// Rejects keys outside `allowed` and checks the version field.
inline void check_object(const json& j, std::initializer_list<const char*> allowed, const char* what) {
    if (!j.is_object())
        throw malformed(std::string(what) + " must be a JSON object");
    const std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [key, _] : j.items())
        if (!keys.contains(key))
            throw malformed(std::string(what) + ": unknown key '" + key + "'");
}

inline void check_version(const json& j, const char* what) {
    if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != 1)
        throw FormatError(FormatError::Kind::version_mismatch, std::string(what) + ": expected \"version\": 1");
}

template <typename T>
T required(const json& j, const char* key, const char* what) {
    if (!j.contains(key))
        throw malformed(std::string(what) + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw malformed(std::string(what) + ": bad value for '" + key + "': " + e.what());
    }
}

template <typename T>
T optional_or(const json& j, const char* key, T fallback, const char* what) {
    return j.contains(key) ? required<T>(j, key, what) : fallback;
}

}  // namespace shadow_attn::detail
