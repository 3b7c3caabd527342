#pragma once

#include "hiermask/error.hpp"

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

namespace hiermask {

/// Throws UsageError naming the first key of `doc` not listed in `allowed`.
inline void reject_unknown_keys(const nlohmann::json& doc, std::initializer_list<std::string_view> allowed,
                                std::string_view what)
{
    if (!doc.is_object()) throw UsageError(std::string(what) + ": expected an object");
    for (const auto& item : doc.items())
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
            throw UsageError(std::string(what) + ": unknown key '" + item.key() + "'");
}

/// Reads `doc[key]` into `out` when present; type errors become UsageError.
template <typename V>
void read_optional(const nlohmann::json& doc, const char* key, V& out, std::string_view what)
{
    if (!doc.contains(key)) return;
    try {
        out = doc.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string(what) + ": bad value for '" + key + "': " + e.what());
    }
}

} // namespace hiermask
