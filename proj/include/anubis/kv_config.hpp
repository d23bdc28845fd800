#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "anubis/error.hpp"
#include "anubis/tester.hpp"
#include "anubis/toy_model.hpp"

namespace anubis {

struct KvEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// `key = value` lines; `#` starts a comment line; blank lines are skipped.
inline std::vector<KvEntry> parse_kv(std::istream& in, const std::string& source = "config") {
  std::vector<KvEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto s = detail::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) {
      throw Error("config-format", source + " line " + std::to_string(lineno) + ": expected key = value");
    }
    const auto key = detail::trim(s.substr(0, eq));
    if (key.empty()) {
      throw Error("config-format", source + " line " + std::to_string(lineno) + ": empty key");
    }
    for (const auto& e : out) {
      if (e.key == key) {
        throw Error("config-format", source + " line " + std::to_string(lineno) + ": duplicate key " + std::string(key));
      }
    }
    out.push_back({std::string(key), std::string(detail::trim(s.substr(eq + 1))), lineno});
  }
  return out;
}

inline std::vector<KvEntry> load_kv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path);
  return parse_kv(in, path);
}

inline double kv_double(const KvEntry& e) {
  double v = 0.0;
  if (!detail::parse_double(e.value, v)) {
    throw Error("config-format", "line " + std::to_string(e.line) + ": " + e.key + " needs a number");
  }
  return v;
}

inline std::uint64_t kv_uint(const KvEntry& e) {
  long long v = 0;
  if (!detail::parse_int(e.value, v) || v < 0) {
    throw Error("config-format", "line " + std::to_string(e.line) + ": " + e.key + " needs a nonnegative integer");
  }
  return static_cast<std::uint64_t>(v);
}

inline bool kv_bool(const KvEntry& e) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  throw Error("config-format", "line " + std::to_string(e.line) + ": " + e.key + " needs true or false");
}

/// Applies one TestConfig field; returns false for keys it does not know.
inline bool apply_config_entry(TestConfig& cfg, const KvEntry& e) {
  const auto& k = e.key;
  if (k == "eps1") cfg.eps1 = kv_double(e);
  else if (k == "eps2") cfg.eps2 = kv_double(e);
  else if (k == "delta") cfg.delta = kv_double(e);
  else if (k == "c1") cfg.c1 = kv_double(e);
  else if (k == "c2") cfg.c2 = kv_double(e);
  else if (k == "c3") cfg.c3 = kv_double(e);
  else if (k == "c4") cfg.c4 = kv_double(e);
  else if (k == "delta1") cfg.delta1 = kv_double(e);
  else if (k == "delta2") cfg.delta2 = kv_double(e);
  else if (k == "tau") cfg.tau = kv_double(e);
  else if (k == "big_C") cfg.big_C = kv_double(e);
  else if (k == "domain_size") cfg.domain_size = kv_uint(e);
  else if (k == "ell_max") cfg.ell_max = static_cast<std::size_t>(kv_uint(e));
  else if (k == "strict") cfg.strict = kv_bool(e);
  else if (k == "ell_mode") {
    if (e.value == "theoretical") cfg.ell_mode = EllMode::theoretical;
    else if (e.value == "empirical") cfg.ell_mode = EllMode::empirical;
    else throw Error("config-format", "line " + std::to_string(e.line) + ": ell_mode is theoretical or empirical");
  } else if (k == "local_scale") {
    if (e.value == "per_sample") cfg.local_scale = LocalScale::per_sample;
    else if (e.value == "raw") cfg.local_scale = LocalScale::raw;
    else throw Error("config-format", "line " + std::to_string(e.line) + ": local_scale is per_sample or raw");
  } else {
    return false;
  }
  return true;
}

inline TestConfig load_test_config(const std::string& path, TestConfig cfg = {}) {
  for (const auto& e : load_kv(path)) {
    if (!apply_config_entry(cfg, e)) {
      throw Error("config-format", path + " line " + std::to_string(e.line) + ": unknown key " + e.key);
    }
  }
  return cfg;
}

inline std::string dump_config(const TestConfig& c) {
  std::ostringstream o;
  auto num = [](double v) { return detail::format_double(v); };
  o << "eps1 = " << num(c.eps1) << "\neps2 = " << num(c.eps2) << "\ndelta = " << num(c.delta)
    << "\nc1 = " << num(c.c1) << "\nc2 = " << num(c.c2) << "\nc3 = " << num(c.c3)
    << "\nc4 = " << num(c.c4) << "\n";
  if (c.delta1) o << "delta1 = " << num(*c.delta1) << "\n";
  if (c.delta2) o << "delta2 = " << num(*c.delta2) << "\n";
  o << "tau = " << num(c.tau) << "\nell_mode = " << to_string(c.ell_mode)
    << "\ndomain_size = " << c.domain_size << "\nell_max = " << c.ell_max
    << "\nbig_C = " << num(c.big_C) << "\nlocal_scale = " << to_string(c.local_scale)
    << "\nstrict = " << (c.strict ? "true" : "false") << "\n";
  return o.str();
}

}  // namespace anubis
