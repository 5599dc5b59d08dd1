#pragma once

#include <map>
#include <string>
#include <vector>

namespace cxr {

// Flat key=value configuration. Serialization is sorted by key so resolved
// configs diff cleanly.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::string& path);

  std::string serialize() const;

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value);
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;

  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

  // "key: left -> right" lines for every key whose values differ, restricted
  // to the given keys (all keys when empty).
  std::vector<std::string> diff(const KeyValues& other, const std::vector<std::string>& keys = {}) const;

 private:
  std::map<std::string, std::string> values_;
};

std::string format_double(double value);
std::vector<std::string> split(const std::string& text, char sep);

}  // namespace cxr
