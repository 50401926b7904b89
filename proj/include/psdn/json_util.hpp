#pragma once

#include <json.hpp>
#include <set>
#include <string>

#include "psdn/errors.hpp"

namespace psdn {

// Strict object reader: every key must be consumed, unknown keys are
// reported by name (config typos should fail loudly, not silently default).
class JsonReader {
 public:
  JsonReader(const nlohmann::ordered_json& j, std::string context)
      : j_(j), context_(std::move(context)) {
    if (!j_.is_object())
      throw UsageError(context_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!j_.contains(key)) return fallback;
    consumed_.insert(key);
    try {
      return j_.at(key).get<T>();
    } catch (const std::exception& e) {
      throw UsageError(context_ + ": bad value for key '" + key +
                       "': " + e.what());
    }
  }

  template <typename T>
  T require(const std::string& key) {
    if (!j_.contains(key))
      throw UsageError(context_ + ": missing required key '" + key + "'");
    return get<T>(key, T{});
  }

  nlohmann::ordered_json sub(const std::string& key) {
    consumed_.insert(key);
    return j_.contains(key) ? j_.at(key) : nlohmann::ordered_json::object();
  }

  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (consumed_.count(it.key()) == 0)
        throw UsageError(context_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const nlohmann::ordered_json& j_;
  std::string context_;
  std::set<std::string> consumed_;
};

nlohmann::ordered_json load_json_file(const std::filesystem::path& path);
void save_json_file(const std::filesystem::path& path,
                    const nlohmann::ordered_json& j);

}  // namespace psdn
