// SPDX-License-Identifier: Apache-2.0
//
// Plain-text `key = value` configuration. Blank lines and lines starting with
// '#' are ignored. Later assignments override earlier ones.
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "lister/types.hpp"

namespace lister {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& file);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  long get_long(const std::string& key, long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  Real get_real(const std::string& key, Real fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Throws naming the first key not in `known`.
  void require_known(const std::set<std::string>& known) const;

 private:
  std::optional<std::string> raw(const std::string& key) const;
  std::map<std::string, std::string> values_;
};

}  // namespace lister
