#pragma once

#include <json.hpp>

#include <initializer_list>
#include <stdexcept>
#include <string>

namespace grcf {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// configs reject unknown keys so typos fail loudly
inline void check_known_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                             const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(context + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace grcf
