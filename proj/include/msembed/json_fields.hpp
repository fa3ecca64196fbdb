#ifndef MSEMBED_JSON_FIELDS_HPP
#define MSEMBED_JSON_FIELDS_HPP

#include <set>
#include <string>
#include <vector>

#include "errors.hpp"
#include "json.hpp"

namespace msembed {

using Json = nlohmann::json;

/**
 * Reads optional fields from one JSON object while recording problems
 * instead of throwing, so that a whole document can be validated and every
 * offending key reported at once. Keys never asked for are reported as
 * unknown by finish().
 */
class JsonFields {
public:
    JsonFields(const Json& object, std::string path, std::vector<std::string>& errors)
        : object_(object), path_(std::move(path)), errors_(errors) {
        if (!object_.is_object()) {
            errors_.push_back(where("") + ": expected an object");
            valid_ = false;
        }
    }

    /// Assigns `out` when `key` is present; a type mismatch is recorded.
    template <typename V>
    void get(const std::string& key, V& out) {
        const Json* v = find(key);
        if (!v) return;
        try {
            out = v->get<V>();
        } catch (const nlohmann::json::exception&) {
            errors_.push_back(where(key) + ": wrong type");
        }
    }

    /// Returns the nested value for `key`, or nullptr when absent.
    const Json* child(const std::string& key) { return find(key); }

    std::string where(const std::string& key) const {
        if (key.empty()) return path_.empty() ? "<root>" : path_;
        return path_.empty() ? key : path_ + "." + key;
    }

    void error(const std::string& key, const std::string& message) { errors_.push_back(where(key) + ": " + message); }

    void finish() {
        if (!valid_) return;
        for (const auto& [key, value] : object_.items()) {
            if (!seen_.count(key)) errors_.push_back(where(key) + ": unknown key");
        }
    }

private:
    const Json* find(const std::string& key) {
        seen_.insert(key);
        if (!valid_) return nullptr;
        const auto it = object_.find(key);
        return it == object_.end() ? nullptr : &*it;
    }

    const Json& object_;
    std::string path_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
    bool valid_ = true;
};

/// Throws one ConfigError listing every collected problem.
inline void throw_if_errors(const std::vector<std::string>& errors) {
    if (errors.empty()) return;
    std::string message = "invalid configuration: ";
    for (std::size_t i = 0; i < errors.size(); ++i) message += (i ? "; " : "") + errors[i];
    throw ConfigError(message);
}

}  // namespace msembed

#endif  // MSEMBED_JSON_FIELDS_HPP
