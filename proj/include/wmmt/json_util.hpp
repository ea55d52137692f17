#pragma once

// Strict JSON object reading for config sections: every key read is
// recorded, and finish() rejects whatever was not consumed.

#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "wmmt/error.hpp"

namespace wmmt {

class ObjectReader {
 public:
  ObjectReader(const nlohmann::ordered_json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(ErrorKind::config, "config field '" + path_ + "' must be an object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  // Reads key into out when present; out keeps its default otherwise.
  template <typename T>
  ObjectReader& get(const std::string& key, T& out) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return *this;
    seen_.insert(key);
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_integer()) fail(ErrorKind::config, "config field '" + field(key) + "' must be an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (!it->is_number_unsigned() && it->template get<std::int64_t>() < 0) fail(ErrorKind::config, "config field '" + field(key) + "' must be nonnegative");
    }
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::config, "config field '" + field(key) + "' has the wrong type");
    }
    return *this;
  }

  const nlohmann::ordered_json* child(const std::string& key) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] void invalid(const std::string& key, const std::string& why) const {
    fail(ErrorKind::config, "config field '" + field(key) + "' " + why);
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) fail(ErrorKind::config, "unknown config field '" + field(it.key()) + "'");
  }

 private:
  const nlohmann::ordered_json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace wmmt
