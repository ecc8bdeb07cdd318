#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avh/errors.hpp"

namespace avh {

/// Read-only view of one JSON object in a run config. Every lookup records the
/// key so `finish()` can reject keys nobody asked for (typos fail loudly).
class ConfigNode {
public:
    ConfigNode(const nlohmann::json& j, std::string path) : j_(&j), path_(std::move(path)) {
        if (!j.is_object() && !j.is_null()) throw ConfigError(where() + ": expected an object");
    }

    bool has(const std::string& key) const { return j_->is_object() && j_->contains(key); }

    template <typename T>
    T get(const std::string& key, const T& fallback) {
        const auto v = maybe<T>(key);
        return v ? *v : fallback;
    }

    template <typename T>
    T require(const std::string& key) {
        const auto v = maybe<T>(key);
        if (!v) throw ConfigError(where(key) + ": required");
        return *v;
    }

    template <typename T>
    std::optional<T> maybe(const std::string& key) {
        used_.insert(key);
        if (!has(key) || (*j_)[key].is_null()) return std::nullopt;
        return convert<T>((*j_)[key], where(key));
    }

    ConfigNode child(const std::string& key) {
        used_.insert(key);
        static const nlohmann::json empty = nullptr;
        return has(key) ? ConfigNode((*j_)[key], where(key)) : ConfigNode(empty, where(key));
    }

    /// Array of objects under `key` (empty when absent).
    std::vector<ConfigNode> children(const std::string& key) {
        used_.insert(key);
        std::vector<ConfigNode> out;
        if (!has(key)) return out;
        const nlohmann::json& arr = (*j_)[key];
        if (!arr.is_array()) throw ConfigError(where(key) + ": expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) out.emplace_back(arr[i], where(key) + "[" + std::to_string(i) + "]");
        return out;
    }

    void finish() const {
        if (!j_->is_object()) return;
        for (const auto& [key, value] : j_->items())
            if (!used_.count(key)) throw ConfigError(where(key) + ": unknown key");
    }

    std::string where(const std::string& key = "") const {
        if (key.empty()) return path_.empty() ? "config" : path_;
        return path_.empty() ? key : path_ + "." + key;
    }

private:
    template <typename T>
    static T convert(const nlohmann::json& v, const std::string& at) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(at + ": expected a boolean");
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(at + ": expected a string");
            return v.get<std::string>();
        } else if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) throw ConfigError(at + ": expected a number");
            return v.get<double>();
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            if (!v.is_number_unsigned()) throw ConfigError(at + ": expected a nonnegative integer");
            return v.get<std::uint64_t>();
        } else if constexpr (std::is_same_v<T, int>) {
            if (!v.is_number_integer()) throw ConfigError(at + ": expected an integer");
            const auto x = v.get<std::int64_t>();
            if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(at + ": integer out of range");
            return static_cast<int>(x);
        } else {
            // std::vector of one of the scalar types above
            if (!v.is_array()) throw ConfigError(at + ": expected an array");
            T out;
            for (std::size_t i = 0; i < v.size(); ++i)
                out.push_back(convert<typename T::value_type>(v[i], at + "[" + std::to_string(i) + "]"));
            return out;
        }
    }

    const nlohmann::json* j_;
    std::string path_;
    std::set<std::string> used_;
};

inline nlohmann::json read_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        nlohmann::json j = nlohmann::json::parse(buf.str());
        if (!j.is_object()) throw ConfigError(path + ": top level must be a JSON object");
        return j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

}  // namespace avh
