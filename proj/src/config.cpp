// SPDX-License-Identifier: Apache-2.0
#include "lister/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace lister {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw Error("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw Error(origin + ":" + std::to_string(lineno) + ": empty key");
    c.values_[key] = trim(t.substr(eq + 1));
  }
  return c;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), file.string());
}

std::optional<std::string> KeyValueConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return raw(key).value_or(fallback);
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  const auto r = raw(key);
  return r ? parse_number<int>(key, *r) : fallback;
}

long KeyValueConfig::get_long(const std::string& key, long fallback) const {
  const auto r = raw(key);
  return r ? parse_number<long>(key, *r) : fallback;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto r = raw(key);
  return r ? parse_number<std::uint64_t>(key, *r) : fallback;
}

Real KeyValueConfig::get_real(const std::string& key, Real fallback) const {
  const auto r = raw(key);
  return r ? parse_number<Real>(key, *r) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto r = raw(key);
  if (!r) return fallback;
  if (*r == "1" || *r == "true" || *r == "yes" || *r == "on") return true;
  if (*r == "0" || *r == "false" || *r == "no" || *r == "off") return false;
  throw Error("config key '" + key + "': expected a boolean, got '" + *r + "'");
}

void KeyValueConfig::require_known(const std::set<std::string>& known) const {
  for (const auto& [k, v] : values_)
    if (!known.count(k)) throw Error("unknown config key '" + k + "'");
}

}  // namespace lister
