#pragma once

// Flat "key = value" run configuration. Lines starting with '#' are
// comments. Typed getters record problems instead of throwing so that a
// command can report every bad key at once.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace polyscore {

using KeyValues = std::map<std::string, std::string, std::less<>>;

KeyValues parse_config_text(std::string_view text);
KeyValues load_config(const std::filesystem::path& path);

class ConfigReader {
 public:
  explicit ConfigReader(KeyValues values) : values_(std::move(values)) {}

  std::string str(const std::string& key, const std::string& fallback);
  std::optional<std::string> optional_str(const std::string& key);
  std::string required_str(const std::string& key);
  std::size_t size(const std::string& key, std::size_t fallback);
  std::uint64_t required_u64(const std::string& key);
  double real(const std::string& key, double fallback);
  bool flag(const std::string& key, bool fallback);
  std::vector<std::size_t> size_list(const std::string& key, const std::vector<std::size_t>& fallback);

  // Runs fn(value) and records its ConfigError/ParseError message, if any.
  template <class T, class Fn>
  T parsed(const std::string& key, const std::string& fallback, Fn&& fn) {
    const std::string v = str(key, fallback);
    try {
      return fn(v);
    } catch (const std::exception& e) {
      problem(key + ": " + e.what());
      return T{};
    }
  }

  void problem(std::string msg) { problems_.push_back(std::move(msg)); }
  const std::vector<std::string>& problems() const { return problems_; }

  // Throws ConfigError listing every problem plus any key never read.
  void finish();

  // Every key read, with defaults filled in.
  const KeyValues& resolved() const { return resolved_; }

 private:
  std::optional<std::string> lookup(const std::string& key);

  KeyValues values_;
  KeyValues resolved_;
  std::set<std::string, std::less<>> used_;
  std::vector<std::string> problems_;
};

}  // namespace polyscore
