#pragma once

// minimal JSON Schema subset used by the in-repo schemas:
// type, properties, required, items, enum, additionalProperties

#include <string>
#include <vector>

#include <json.hpp>

namespace schema {

inline bool type_matches(const std::string& type, const nlohmann::json& v) {
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "string") return v.is_string();
    if (type == "integer") return v.is_number_integer() || v.is_number_unsigned();
    if (type == "number") return v.is_number();
    if (type == "boolean") return v.is_boolean();
    if (type == "null") return v.is_null();
    return false;
}

inline void collect_errors(const nlohmann::json& schema, const nlohmann::json& value,
                           const std::string& path, std::vector<std::string>& errors) {
    if (schema.contains("type")) {
        const auto& t = schema["type"];
        bool ok = false;
        if (t.is_string()) {
            ok = type_matches(t.get<std::string>(), value);
        } else {
            for (const auto& alt : t) ok = ok || type_matches(alt.get<std::string>(), value);
        }
        if (!ok) {
            errors.push_back(path + ": type mismatch, expected " + t.dump());
            return;
        }
    }
    if (schema.contains("enum")) {
        bool ok = false;
        for (const auto& candidate : schema["enum"]) ok = ok || candidate == value;
        if (!ok) errors.push_back(path + ": value not in enum");
    }
    if (value.is_object()) {
        if (schema.contains("required"))
            for (const auto& key : schema["required"])
                if (!value.contains(key.get<std::string>()))
                    errors.push_back(path + ": missing required key '" + key.get<std::string>() + "'");
        const bool extra_ok = !schema.contains("additionalProperties") ||
                              schema["additionalProperties"].get<bool>();
        for (auto it = value.begin(); it != value.end(); ++it) {
            if (schema.contains("properties") && schema["properties"].contains(it.key())) {
                collect_errors(schema["properties"][it.key()], it.value(), path + "." + it.key(), errors);
            } else if (!extra_ok) {
                errors.push_back(path + ": unexpected key '" + it.key() + "'");
            }
        }
    }
    if (value.is_array() && schema.contains("items")) {
        size_t i = 0;
        for (const auto& item : value)
            collect_errors(schema["items"], item, path + "[" + std::to_string(i++) + "]", errors);
    }
}

inline std::vector<std::string> errors(const nlohmann::json& schema, const nlohmann::json& value) {
    std::vector<std::string> out;
    collect_errors(schema, value, "$", out);
    return out;
}

inline bool valid(const nlohmann::json& schema, const nlohmann::json& value) {
    return errors(schema, value).empty();
}

}  // namespace schema
