#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace handpose::cfg {

// Flat `key = value` text format with '#' comments. Keys are dotted
// (model.crop_size, train.epochs, ...); order is preserved on write.
class KeyValues {
 public:
  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : items_)
      if (k == key) {
        v = value;
        return;
      }
    items_.emplace_back(key, value);
  }

  void set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }
  void set_double(const std::string& key, double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    set(key, os.str());
  }
  void set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

  bool has(const std::string& key) const {
    for (const auto& [k, v] : items_)
      if (k == key) return true;
    return false;
  }

  std::string get(const std::string& key) const {
    for (const auto& [k, v] : items_)
      if (k == key) return v;
    throw std::invalid_argument("config: missing key '" + key + "'");
  }

  std::string get_or(const std::string& key, const std::string& dflt) const {
    for (const auto& [k, v] : items_)
      if (k == key) return v;
    return dflt;
  }

  long long get_int(const std::string& key, long long dflt) const {
    if (!has(key)) return dflt;
    return std::stoll(get(key));
  }

  double get_double(const std::string& key, double dflt) const {
    if (!has(key)) return dflt;
    return std::stod(get(key));
  }

  bool get_bool(const std::string& key, bool dflt) const {
    if (!has(key)) return dflt;
    const std::string v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: bad boolean for '" + key + "': " + v);
  }

  std::vector<int> get_int_list(const std::string& key, std::vector<int> dflt) const {
    if (!has(key)) return dflt;
    std::vector<int> out;
    std::stringstream ss(get(key));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) out.push_back(std::stoi(tok));
    }
    return out;
  }

  void set_int_list(const std::string& key, const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    set(key, s);
  }

  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : items_) out += k + " = " + v + "\n";
    return out;
  }

  static KeyValues from_text(const std::string& text) {
    KeyValues kv;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config: line " + std::to_string(lineno) + " has no '='");
      kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValues from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str());
  }

 private:
  std::vector<std::pair<std::string, std::string>> items_;
};

inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(text.data(), text.size())));
  return buf;
}

}  // namespace handpose::cfg
