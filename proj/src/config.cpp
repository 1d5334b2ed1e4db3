#include "polyscore/config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "polyscore/binio.hpp"
#include "polyscore/error.hpp"

namespace polyscore {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

KeyValues parse_config_text(std::string_view text) {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("config line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ParseError("config line " + std::to_string(n) + ": empty key");
    if (kv.contains(key)) throw ParseError("config line " + std::to_string(n) + ": duplicate key '" + key + "'");
    kv[key] = trim(std::string_view(t).substr(eq + 1));
  }
  return kv;
}

KeyValues load_config(const std::filesystem::path& path) { return parse_config_text(binio::read_file(path)); }

std::optional<std::string> ConfigReader::lookup(const std::string& key) {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string ConfigReader::str(const std::string& key, const std::string& fallback) {
  std::string v = lookup(key).value_or(fallback);
  resolved_[key] = v;
  return v;
}

std::optional<std::string> ConfigReader::optional_str(const std::string& key) {
  auto v = lookup(key);
  if (v) resolved_[key] = *v;
  return v;
}

std::string ConfigReader::required_str(const std::string& key) {
  auto v = lookup(key);
  if (!v || v->empty()) {
    problem(key + ": required");
    return {};
  }
  resolved_[key] = *v;
  return *v;
}

std::size_t ConfigReader::size(const std::string& key, std::size_t fallback) {
  const std::string v = str(key, std::to_string(fallback));
  auto n = parse_number<std::size_t>(v);
  if (!n) {
    problem(key + ": expected a non-negative integer, got '" + v + "'");
    return fallback;
  }
  return *n;
}

std::uint64_t ConfigReader::required_u64(const std::string& key) {
  auto v = lookup(key);
  if (!v) {
    problem(key + ": required");
    return 0;
  }
  resolved_[key] = *v;
  auto n = parse_number<std::uint64_t>(*v);
  if (!n) {
    problem(key + ": expected a non-negative integer, got '" + *v + "'");
    return 0;
  }
  return *n;
}

double ConfigReader::real(const std::string& key, double fallback) {
  auto v = lookup(key);
  if (!v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, fallback);
    resolved_[key] = std::string(buf, end);
    return fallback;
  }
  resolved_[key] = *v;
  auto d = parse_number<double>(*v);
  if (!d || !std::isfinite(*d)) {
    problem(key + ": expected a finite number, got '" + *v + "'");
    return fallback;
  }
  return *d;
}

bool ConfigReader::flag(const std::string& key, bool fallback) {
  const std::string v = str(key, fallback ? "true" : "false");
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  problem(key + ": expected true or false, got '" + v + "'");
  return fallback;
}

std::vector<std::size_t> ConfigReader::size_list(const std::string& key, const std::vector<std::size_t>& fallback) {
  const std::string v = str(key, join(fallback));
  std::vector<std::size_t> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    auto n = parse_number<std::size_t>(trim(item));
    if (!n) {
      problem(key + ": expected comma-separated integers, got '" + v + "'");
      return fallback;
    }
    out.push_back(*n);
  }
  return out;
}

void ConfigReader::finish() {
  for (const auto& [key, _] : values_) {
    if (!used_.contains(key)) problems_.push_back(key + ": unknown key");
  }
  if (problems_.empty()) return;
  std::string msg = std::to_string(problems_.size()) + " configuration problem(s):";
  for (const auto& p : problems_) msg += "\n  " + p;
  throw ConfigError(msg);
}

}  // namespace polyscore
