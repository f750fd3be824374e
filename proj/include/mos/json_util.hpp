#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "mos/errors.hpp"

namespace mos {

using Json = nlohmann::json;

// Rejects keys outside `allowed`; configs are strict so typos fail loudly.
inline void require_known_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!known) throw ConfigError(context + ": unknown key '" + key + "'");
  }
}

template <typename V>
void read_optional(const Json& j, const char* key, V& target, const std::string& context) {
  if (!j.contains(key)) return;
  try {
    target = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(context + "." + key + ": " + e.what());
  }
}

}  // namespace mos
