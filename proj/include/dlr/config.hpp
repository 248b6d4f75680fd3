#pragma once

// `key = value` text configs with command-line overrides. Unknown keys are
// rejected; the effective configuration is echoed before any work so a run
// can be reproduced from its log alone.

#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace dlr {

class RunConfig {
 public:
  explicit RunConfig(std::vector<std::pair<std::string, std::string>> defaults) {
    for (auto& [k, v] : defaults) {
      order_.push_back(k);
      values_[k] = v;
    }
  }

  void load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const size_t eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config: missing '=' on line " + std::to_string(line_no) +
                                 " of " + path);
      set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    }
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw std::runtime_error("config: unknown key '" + key + "'");
    values_[key] = value;
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("config: unknown key '" + key + "'");
    return it->second;
  }
  long integer(const std::string& key) const { return std::stol(str(key)); }
  double real(const std::string& key) const { return std::stod(str(key)); }

  void echo(std::ostream& os) const {
    for (const auto& k : order_) os << k << " = " << values_.at(k) << "\n";
  }
  std::string echo_string() const {
    std::string out;
    for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  }

  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
};

}  // namespace dlr
